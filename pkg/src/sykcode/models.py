"""Large-N closures and G-Sigma action densities for SYK and low-rank SYK."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg, optimize

from .contour import (
    BilocalField,
    ContourSpec,
    free_action,
    gauge_free_propagator,
    noise_log_weight,
    noise_vertex,
)

MODELS = ("syk", "lowrank")

# Prefactor of the low-rank closure Sigma = c * gamma * D * G. The value 2 is
# what the conformal solution needs to reproduce delta_of_gamma; the thermal
# calibration test checks it rather than tuning it.
LOWRANK_CLOSURE_C = 2.0


class SingularKernelError(RuntimeError):
    """A kernel that must be invertible (or positive definite) is not."""


@dataclass(frozen=True)
class ModelParams:
    model: str = "syk"
    J: float = 1.0
    g: float = 1.0
    rank_gamma: float = 1.0

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"unknown model {self.model!r}")
        if self.model == "syk" and self.J < 0:
            raise ValueError("J must be non-negative")
        if self.model == "lowrank":
            if not self.g > 0:
                raise ValueError("g must be positive for the low-rank model")
            if not self.rank_gamma > 0:
                raise ValueError("rank_gamma must be positive for the low-rank model")

    @property
    def energy_scale(self) -> float:
        """Coupling of the equivalent SYK model, ``J`` or ``sqrt(c gamma) g^2``.

        The low-rank Hamiltonian scales like ``g^2``; at small coupling its
        closure reduces to SYK with ``J^2 = c gamma g^4``.
        """
        if self.model == "syk":
            return self.J
        return float(np.sqrt(LOWRANK_CLOSURE_C * self.rank_gamma)) * self.g**2

    @property
    def free(self) -> bool:
        return self.model == "syk" and self.J == 0


def _pair_metric(spec: ContourSpec) -> np.ndarray:
    eta = spec.flat_metric
    return np.outer(eta, eta)


def _mask2(spec: ContourSpec) -> np.ndarray:
    m = spec.flat_mask.astype(float)
    return np.outer(m, m)


def syk_self_energy(G: BilocalField, params: ModelParams) -> BilocalField:
    """``Sigma = J^2 G^3`` on the Hamiltonian region, all flavor pairs included.

    The stitching factors enter as ``(d d')^4 = 1``, so no metric appears.
    """
    if params.model != "syk":
        raise ValueError("syk_self_energy needs model='syk'")
    spec = G.spec
    g = G.values
    S = params.J**2 * (g * g * g) * _mask2(spec)
    return BilocalField(S, spec)


def _masked_polarization(G: BilocalField) -> tuple[np.ndarray, np.ndarray]:
    spec = G.spec
    idx = np.flatnonzero(spec.flat_mask)
    sub = G.values[np.ix_(idx, idx)]
    return idx, sub**2 * _pair_metric(spec)[np.ix_(idx, idx)]


def boson_margin(G: BilocalField, params: ModelParams) -> float:
    """Smallest eigenvalue of ``1 - g^2 dtau Pi``; the low-rank closure needs it positive."""
    _, Pi = _masked_polarization(G)
    lam = linalg.eigvalsh(G.spec.dtau * Pi, subset_by_index=[len(Pi) - 1, len(Pi) - 1])
    return float(1.0 - params.g**2 * lam[-1])


def _boson_factor(G: BilocalField, params: ModelParams):
    spec = G.spec
    idx, Pi = _masked_polarization(G)
    B = np.eye(len(idx)) / params.g**2 - spec.dtau * Pi
    try:
        chol = linalg.cho_factor(B, lower=True, check_finite=False)
    except linalg.LinAlgError as exc:
        raise SingularKernelError(
            "boson kernel g^-2 - Pi is not positive definite; coupling beyond the stable regime"
        ) from exc
    return idx, chol


def lowrank_self_energy(G: BilocalField, params: ModelParams) -> BilocalField:
    """Bosonized low-rank closure.

    ``Pi = G^2``, ``D = (g^-2 - Pi)^-1`` as a two-time kernel and
    ``Sigma = c * gamma * D * G`` elementwise, all restricted to the Hamiltonian
    region. At small ``g`` this is the SYK closure with ``J^2 = c gamma g^4``.
    At low temperature the boson mass ``g^-2 - Pi(omega=0)`` tunes itself towards
    zero, which is what makes the model critical.
    """
    if params.model != "lowrank":
        raise ValueError("lowrank_self_energy needs model='lowrank'")
    spec = G.spec
    idx, chol = _boson_factor(G, params)
    D = linalg.cho_solve(chol, np.eye(len(idx)), check_finite=False) / spec.dtau
    S = np.zeros_like(G.values)
    # physical Sigma = c gamma D G; back in the real gauge this picks up (d d')^2
    eta = _pair_metric(spec)[np.ix_(idx, idx)]
    S[np.ix_(idx, idx)] = LOWRANK_CLOSURE_C * params.rank_gamma * eta * D * G.values[np.ix_(idx, idx)]
    return BilocalField(S, spec)


def self_energy(G: BilocalField, params: ModelParams) -> BilocalField:
    if params.model == "syk":
        return syk_self_energy(G, params)
    return lowrank_self_energy(G, params)


def interaction_term(G: BilocalField, params: ModelParams) -> float:
    """Interaction part of ``S/N``; its G-derivative is ``Sigma / 2``."""
    spec = G.spec
    if params.model == "syk":
        return -params.J**2 / 8.0 * spec.dtau**2 * float(np.sum(_mask2(spec) * G.values**4))
    _, chol = _boson_factor(G, params)
    L = chol[0]
    # log det(1 - g^2 dtau Pi) = log det(B) + n log g^2
    logdet = 2.0 * np.sum(np.log(np.diag(L))) + L.shape[0] * np.log(params.g**2)
    return LOWRANK_CLOSURE_C * params.rank_gamma / 4.0 * float(logdet)


def kinetic_inverse(spec: ContourSpec) -> np.ndarray:
    """Exact inverse of the gauge free propagator as an operator (measure ``dtau``).

    The midpoint sign matrix ``S = sgn(i-j)/2`` has ``S^-1 = 2 sgn(i-j) (-1)^(i-j)``
    when the loop has an even number of points.
    """
    n = spec.n
    if n % 2:
        raise ValueError("loops need an even number of grid points")
    k = np.arange(n)
    d = k[:, None] - k[None, :]
    inv = 2.0 * np.sign(d) * np.where(d % 2 == 0, 1.0, -1.0)
    return np.kron(np.diag(np.asarray(spec.metric, dtype=float)), inv) / spec.dtau


def kernel(spec: ContourSpec, Sigma: np.ndarray, V: np.ndarray) -> np.ndarray:
    """Operator ``G0^-1 - Sigma - V`` with the grid measure folded in."""
    return kinetic_inverse(spec) - spec.dtau * (Sigma + V)


def regularized_logdet_term(spec: ContourSpec, Sigma: np.ndarray, V: np.ndarray) -> float:
    """``-1/2 [log det K(Sigma, V) - log det K(0, 0)]``."""
    if not np.any(Sigma) and not np.any(V):
        return 0.0
    G0 = spec.dtau * gauge_free_propagator(spec)
    A = np.eye(spec.size) - G0 @ (spec.dtau * (Sigma + V))
    sign, logdet = np.linalg.slogdet(A)
    if sign <= 0:
        raise SingularKernelError("kernel determinant is not positive")
    return -0.5 * float(logdet)


def action_density(
    G: BilocalField,
    Sigma: BilocalField,
    spec: ContourSpec,
    params: ModelParams,
    theta: float = 0.0,
) -> float:
    """Per-Majorana G-Sigma action.

    ``-1/2 log det(d_tau - Sigma - V) + 1/2 int Sigma G - interaction``; the
    log-det is measured against the free kernel and the analytic free value
    ``-F/2 log 2`` of ``F`` antiperiodic loops is added back.
    """
    if G.values.shape != (spec.size, spec.size) or Sigma.values.shape != G.values.shape:
        raise ValueError("field dimensions do not match the contour")
    V = noise_vertex(spec, theta).values
    value = free_action(spec) + noise_log_weight(spec, theta)
    value += regularized_logdet_term(spec, Sigma.values, V)
    value += 0.5 * spec.dtau**2 * float(np.sum(Sigma.values * G.values))
    value += interaction_term(G, params)
    return value


def gamma_of_delta(delta):
    """Rank density giving fermion scaling dimension ``delta`` in the low-rank model."""
    delta = np.asarray(delta, dtype=float)
    return (2 * delta - 1) * (1 / np.cos(2 * np.pi * delta) - 1) / (8 * delta - 2)


def delta_of_gamma(rank_gamma: float) -> float:
    """Invert ``gamma_of_delta`` on ``(1/4, 1/2)`` by bracketing and bisection.

    ``gamma_of_delta`` falls monotonically from ``+inf`` at ``1/4`` to ``0`` at ``1/2``.
    """
    if not rank_gamma > 0 or not np.isfinite(rank_gamma):
        raise ValueError("rank_gamma must be positive and finite")
    lo, hi = 0.25, 0.5
    eps = 1e-15
    f = lambda d: float(gamma_of_delta(d)) - rank_gamma
    a, b = lo + eps, hi - eps
    # gamma diverges like 1/(8 delta - 2) near 1/4; shrink the bracket until it holds
    while f(a) < 0:
        a = lo + (a - lo) / 10
        if a - lo < 1e-300:
            return lo
    if f(b) > 0:
        return hi
    return float(optimize.brentq(f, a, b, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500))


def beta_derivative_term(G: BilocalField, params: ModelParams) -> float:
    """``beta * dS/dbeta`` at a saddle point of the thermal action.

    At fixed ``M`` the discrete action depends on ``beta`` only through the
    dimensionless coupling (``beta J`` or ``beta g^2``), so at the saddle the
    derivative is the explicit coupling derivative of the interaction term. The thermal entropy density is
    ``-S + beta dS/dbeta``.
    """
    spec = G.spec
    if params.model == "syk":
        return 2.0 * interaction_term(G, params)
    idx, Pi = _masked_polarization(G)
    _, chol = _boson_factor(G, params)
    X = linalg.cho_solve(chol, spec.dtau * Pi, check_finite=False)
    return -LOWRANK_CLOSURE_C * params.rank_gamma / 4.0 * float(np.trace(X))
