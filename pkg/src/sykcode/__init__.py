"""Large-N Renyi coherent information of SYK and low-rank SYK codes under fermionic noise."""

from .analysis import (
    ConformalFit,
    PerturbativeFit,
    ThresholdResult,
    ZeroTExtrapolator,
    detect_ssb_onset,
    epsilon_threshold,
    extrapolate_zero_T,
    fit_conformal,
    fit_gamma,
)
from .channels import (
    EntropyResult,
    NoiseParams,
    entropies_both,
    entropies_breaking,
    entropies_conserving,
    phi_of_p,
    q_scan,
)
from .contour import BilocalField, ContourSpec, build_contour
from .models import ModelParams
from .solver import SchwingerDysonSolver, SolverConfig, SolveResult, solve

__version__ = "0.1.0"

__all__ = [
    "BilocalField",
    "ConformalFit",
    "ContourSpec",
    "EntropyResult",
    "ModelParams",
    "NoiseParams",
    "PerturbativeFit",
    "SchwingerDysonSolver",
    "SolveResult",
    "SolverConfig",
    "ThresholdResult",
    "ZeroTExtrapolator",
    "build_contour",
    "detect_ssb_onset",
    "entropies_both",
    "entropies_breaking",
    "entropies_conserving",
    "epsilon_threshold",
    "extrapolate_zero_T",
    "fit_conformal",
    "fit_gamma",
    "phi_of_p",
    "q_scan",
    "solve",
]
