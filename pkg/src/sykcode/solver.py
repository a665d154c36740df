"""Damped fixed-point solution of the Schwinger-Dyson equations on a contour.

Two backends share one iteration:

* a dense backend that inverts the full kernel ``G0^-1 - Sigma - V`` and works
  on every contour;
* a spectral backend for the plain thermal loop. There every field is an
  anti-circulant matrix, diagonalized exactly by the twisted DFT on the
  antiperiodic frequencies, so it gives the same numbers as the dense backend at
  ``O(n log n)`` cost per step.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import linalg
from sklearn.base import BaseEstimator

from .contour import (
    BilocalField,
    ContourSpec,
    build_contour,
    free_action,
    gauge_free_propagator,
    noise_log_weight,
    noise_vertex,
)
from .models import (
    LOWRANK_CLOSURE_C,
    ModelParams,
    SingularKernelError,
    action_density,
    beta_derivative_term,
    boson_margin,
    kernel,
    kinetic_inverse,
    self_energy,
)

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"SYKGF01\n"
HYSTERESIS_JUMP = 1e-3


@dataclass(frozen=True)
class SolverConfig:
    mixing: float = 0.3
    tolerance: float = 1e-8
    max_iterations: int = 5000
    warm_start: BilocalField | None = None
    # Anderson mixing on top of damping; off by default
    acceleration: bool = False
    anderson_depth: int = 6
    # use the spectral backend on thermal contours
    spectral: bool = True
    # build the dense G and Sigma for spectral solves; off keeps only the column
    materialize: bool = True
    # give up when the best residual has not improved for this many iterations
    stall_iterations: int = 600
    # retry a failed damped solve from the same seed with Anderson mixing
    rescue: bool = True

    def __post_init__(self):
        if not 0 < self.mixing <= 1:
            raise ValueError("mixing must lie in (0, 1]")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if int(self.max_iterations) != self.max_iterations or self.max_iterations < 1:
            raise ValueError("max_iterations must be a positive integer")
        if self.anderson_depth < 1:
            raise ValueError("anderson_depth must be positive")
        if self.stall_iterations < 1:
            raise ValueError("stall_iterations must be positive")

    def replace(self, **changes) -> "SolverConfig":
        return dataclasses.replace(self, **changes)


@dataclass
class SolveResult:
    G: BilocalField | None
    Sigma: BilocalField | None
    action: float
    iterations: int
    residual: float
    converged: bool
    theta: float = 0.0
    params: ModelParams | None = None
    hysteresis: bool = False
    message: str = ""
    # first column G(k dtau) on the thermal loop, filled by the spectral backend
    column: np.ndarray | None = None
    contour: ContourSpec | None = None
    # beta dS/dbeta, filled by the spectral backend
    beta_derivative: float | None = None

    @property
    def spec(self) -> ContourSpec:
        return self.contour if self.contour is not None else self.G.spec


def default_grid(beta: float, params: ModelParams, dtau_scale: float = 0.05, minimum: int = 16) -> int:
    """Smallest even ``M`` with ``dtau * J <= dtau_scale`` (``g`` for the low-rank model)."""
    scale = max(params.energy_scale, 1.0)
    M = int(np.ceil(beta * scale / dtau_scale))
    M = max(M, minimum)
    return M + (M % 2)


# ---------------------------------------------------------------------------
# spectral thermal backend


def _twist(n: int) -> np.ndarray:
    return np.exp(-1j * np.pi * np.arange(n) / n)


def anticirculant_eigenvalues(col: np.ndarray) -> np.ndarray:
    """Eigenvalues of the anti-circulant matrix with first column ``col``."""
    return np.fft.fft(col * _twist(len(col)))


def anticirculant_column(eig: np.ndarray) -> np.ndarray:
    return (np.fft.ifft(eig) / _twist(len(eig))).real


def anticirculant_matrix(col: np.ndarray) -> np.ndarray:
    row = -col[::-1]
    row = np.concatenate(([col[0]], row[:-1]))
    return linalg.toeplitz(col, row)


class _ThermalBackend:
    """Fields are first columns ``a_k = G(tau_k - tau_0)`` of anti-circulant matrices."""

    def __init__(self, spec: ContourSpec, params: ModelParams, theta: float):
        self.spec, self.params = spec, params
        n, dt = spec.n, spec.dtau
        g0 = np.full(n, 0.5)
        g0[0] = 0.0
        self.g0_col = g0
        self.lam_g0 = dt * anticirculant_eigenvalues(g0)

    def initial(self) -> np.ndarray:
        return self.g0_col.copy()

    def from_field(self, G: BilocalField) -> np.ndarray:
        return G.values[:, 0].copy()

    def _boson(self, a):
        # g^-2 - Pi with Pi = G^2, circulant
        b = 1.0 / self.params.g**2 - self.spec.dtau * np.fft.fft(a**2).real
        if np.min(b) <= 0:
            raise SingularKernelError("boson kernel g^-2 - Pi is not positive definite")
        return b

    def sigma(self, a: np.ndarray) -> np.ndarray:
        p = self.params
        if p.model == "syk":
            return p.J**2 * a**3
        b = self._boson(a)
        D = np.fft.ifft(1.0 / b).real / self.spec.dtau
        return LOWRANK_CLOSURE_C * p.rank_gamma * D * a

    def green(self, sigma: np.ndarray) -> np.ndarray:
        lam = 1.0 / (1.0 / self.lam_g0 - self.spec.dtau * anticirculant_eigenvalues(sigma))
        return anticirculant_column(lam) / self.spec.dtau

    def action(self, a: np.ndarray, sigma: np.ndarray) -> float:
        spec, p = self.spec, self.params
        n, dt = spec.n, spec.dtau
        x = 1.0 - self.lam_g0 * dt * anticirculant_eigenvalues(sigma)
        value = free_action(spec) - 0.5 * float(np.sum(np.log(x)).real)
        value += 0.5 * dt**2 * n * float(np.dot(sigma, a))
        if p.model == "syk":
            value += -p.J**2 / 8.0 * dt**2 * n * float(np.sum(a**4))
        else:
            b = self._boson(a)
            value += LOWRANK_CLOSURE_C * p.rank_gamma / 4.0 * float(np.sum(np.log(b)) + n * np.log(p.g**2))
        return value

    def boson_margin(self, a: np.ndarray) -> float:
        return float(1.0 - self.params.g**2 * self.spec.dtau * np.max(np.fft.fft(a**2).real))

    def beta_derivative(self, a: np.ndarray) -> float:
        spec, p = self.spec, self.params
        if p.model == "syk":
            return -p.J**2 / 4.0 * spec.dtau**2 * spec.n * float(np.sum(a**4))
        b = self._boson(a)
        # tr(B^-1 dtau Pi)
        lam_pi = spec.dtau * np.fft.fft(a**2).real
        return -LOWRANK_CLOSURE_C * p.rank_gamma / 4.0 * float(np.sum(lam_pi / b))

    def to_field(self, a: np.ndarray) -> BilocalField:
        return BilocalField(anticirculant_matrix(a), self.spec)


class _DenseBackend:
    def __init__(self, spec: ContourSpec, params: ModelParams, theta: float):
        self.spec, self.params, self.theta = spec, params, theta
        self.V = noise_vertex(spec, theta).values
        self.K0 = kinetic_inverse(spec)
        if params.model == "syk":
            m = spec.flat_mask.astype(float)
            self.syk_factor = params.J**2 * np.outer(m, m)

    def initial(self) -> np.ndarray:
        return gauge_free_propagator(self.spec)

    def from_field(self, G: BilocalField) -> np.ndarray:
        return G.values.copy()

    def sigma(self, G: np.ndarray) -> np.ndarray:
        if self.params.free:
            return np.zeros_like(G)
        if self.params.model == "syk":
            return self.syk_factor * (G * G * G)
        return self_energy(BilocalField(G, self.spec), self.params).values

    def green(self, sigma: np.ndarray) -> np.ndarray:
        K = self.K0 - self.spec.dtau * (sigma + self.V)
        try:
            Ginv = linalg.inv(K, check_finite=False)
        except linalg.LinAlgError as exc:
            raise SingularKernelError("kernel is singular") from exc
        G = Ginv / self.spec.dtau
        return 0.5 * (G - G.T)

    def boson_margin(self, G: np.ndarray) -> float:
        return boson_margin(BilocalField(G, self.spec), self.params)

    def action(self, G: np.ndarray, sigma: np.ndarray) -> float:
        spec = self.spec
        return action_density(BilocalField(G, spec), BilocalField(sigma, spec), spec, self.params, self.theta)

    def to_field(self, G: np.ndarray) -> BilocalField:
        return BilocalField(G, self.spec)


def _backend(spec, params, theta, cfg):
    if cfg.spectral and spec.kind == "thermal" and spec.flavors == 1:
        return _ThermalBackend(spec, params, theta)
    return _DenseBackend(spec, params, theta)


class _Anderson:
    """Type-II Anderson mixing for the fixed-point map ``x -> F(x)``."""

    def __init__(self, depth: int, mixing: float):
        self.depth, self.mixing = depth, mixing
        self.xs, self.fs = [], []

    def reset(self):
        self.xs, self.fs = [], []

    def step(self, x, f):
        self.xs.append(x.ravel().copy())
        self.fs.append(f.ravel().copy())
        if len(self.xs) > self.depth + 1:
            self.xs.pop(0)
            self.fs.pop(0)
        if len(self.xs) < 2:
            return x + self.mixing * f
        dX = np.stack([b - a for a, b in zip(self.xs[:-1], self.xs[1:])], axis=1)
        dF = np.stack([b - a for a, b in zip(self.fs[:-1], self.fs[1:])], axis=1)
        coef, *_ = np.linalg.lstsq(dF, f.ravel(), rcond=None)
        new = x.ravel() + self.mixing * f.ravel() - (dX + self.mixing * dF) @ coef
        return new.reshape(x.shape)


SEED_MARGIN = 0.05


def lowrank_seed(spec: ContourSpec, params: ModelParams, theta: float = 0.0,
                 cfg: SolverConfig | None = None) -> BilocalField:
    """Starting point for a low-rank solve.

    The free propagator makes ``1 - g^2 Pi`` indefinite once ``beta g^2 > 4``.
    Instead start from the SYK solution with the matching coupling, doubling
    the coupling until the boson kernel is safely positive.
    """
    cfg = (cfg or SolverConfig()).replace(warm_start=None, acceleration=False, materialize=True)
    J = params.energy_scale
    be = _backend(spec, params, theta, cfg)
    for _ in range(20):
        res = solve(spec, ModelParams("syk", J=J), theta, cfg)
        x = be.from_field(res.G)
        if be.boson_margin(x) > SEED_MARGIN:
            return res.G
        J *= 2.0
    raise SingularKernelError("could not find a stable starting point for the low-rank closure")


def _iterate(be, x, params: ModelParams, cfg: SolverConfig, acceleration: bool):
    """Damped (optionally Anderson-accelerated) fixed-point loop.

    Returns ``(x, iterations, residual, stalled)``.
    """
    mixing = cfg.mixing
    anderson = _Anderson(cfg.anderson_depth, mixing) if acceleration else None
    prev = np.inf
    residual = np.inf
    streak = 0
    it = 0
    best, best_it = np.inf, 0
    stalled = False
    new = x
    for it in range(1, cfg.max_iterations + 1):
        try:
            new = be.green(be.sigma(x))
        except SingularKernelError as exc:
            if it == 1:
                raise SingularKernelError(f"{exc} (iteration {it})") from exc
            # back off towards the last good iterate
            mixing *= 0.5
            if anderson:
                anderson.reset()
                anderson.mixing = mixing
            if mixing < 1e-6:
                raise SingularKernelError(f"{exc} (iteration {it})") from exc
            x = last_good + mixing * (last_new - last_good)
            continue
        f = new - x
        residual = float(np.max(np.abs(f)))
        if residual <= cfg.tolerance or params.free:
            x = new
            break
        if residual < 0.999 * best:
            best, best_it = residual, it
        elif it - best_it >= cfg.stall_iterations:
            stalled = True
            x = new
            break
        if residual > prev:
            mixing = max(0.5 * mixing, 1e-4)
            streak = 0
            if anderson:
                anderson.reset()
                anderson.mixing = mixing
        else:
            streak += 1
            if streak >= 10 and mixing < cfg.mixing:
                mixing = min(cfg.mixing, 1.5 * mixing)
                streak = 0
                if anderson:
                    anderson.mixing = mixing
        prev = residual
        last_good, last_new = x, new
        x = anderson.step(x, f) if anderson else x + mixing * f
    else:
        x = new

    return x, it, residual, stalled


def solve(
    spec: ContourSpec,
    params: ModelParams,
    theta: float = 0.0,
    cfg: SolverConfig | None = None,
) -> SolveResult:
    """Solve ``G = (G0^-1 - Sigma[G] - V(theta))^-1`` by damped iteration.

    The returned ``G`` is the last kernel inverse and ``Sigma`` its self-energy,
    so the Dyson equation holds up to the last change in ``Sigma``. The mixing
    weight is halved whenever the residual grows and slowly restored while it
    falls.
    """
    cfg = cfg or SolverConfig()
    if not np.isfinite(theta):
        raise ValueError("theta must be finite")
    be = _backend(spec, params, theta, cfg)
    if cfg.warm_start is not None:
        if cfg.warm_start.values.shape != (spec.size, spec.size):
            raise ValueError("warm start does not match the contour size")
        x = be.from_field(cfg.warm_start)
    elif params.model == "lowrank":
        x = be.from_field(lowrank_seed(spec, params, theta, cfg))
    else:
        x = be.initial()
    seed = x

    x, it, residual, stalled = _iterate(be, x, params, cfg, cfg.acceleration)
    rescued = False
    if residual > cfg.tolerance and not params.free and cfg.rescue and not cfg.acceleration:
        # damping can sit on a long plateau; retry the same seed with Anderson mixing
        x0 = be.from_field(cfg.warm_start) if cfg.warm_start is not None else seed
        try:
            x2, it2, res2, stalled2 = _iterate(be, x0, params, cfg, True)
        except SingularKernelError:
            res2 = np.inf
        else:
            it += it2
        if res2 < residual:
            x, residual, stalled, rescued = x2, res2, stalled2, True

    if params.free:
        residual = 0.0 if residual <= cfg.tolerance or it == 1 else residual
    converged = bool(residual <= cfg.tolerance) or params.free
    sigma = be.sigma(x)
    action = be.action(x, sigma)
    spectral = isinstance(be, _ThermalBackend)
    if spectral and not cfg.materialize:
        G = Sigma = None
    elif spectral:
        G, Sigma = be.to_field(x), BilocalField(anticirculant_matrix(sigma), spec)
    else:
        G, Sigma = be.to_field(x), BilocalField(sigma, spec)
    msg = "" if converged else (
        f"{'stalled' if stalled else 'no convergence'} after {it} iterations (residual {residual:.3e})"
    )
    if rescued and converged:
        msg = "converged after Anderson rescue"
    if msg and not converged:
        log.warning("%s on %s contour, theta=%g", msg, spec.kind, theta)
    return SolveResult(
        G=G,
        Sigma=Sigma,
        action=float(action),
        iterations=it,
        residual=0.0 if params.free else residual,
        converged=converged,
        theta=float(theta),
        params=params,
        message=msg,
        column=x.copy() if spectral else None,
        contour=spec,
        beta_derivative=be.beta_derivative(x) if spectral else None,
    )


def continuation_solve(
    spec: ContourSpec,
    params: ModelParams,
    thetas,
    cfg: SolverConfig | None = None,
) -> list[SolveResult]:
    """Solve along ``thetas`` warm-starting every point from the previous one.

    A point whose action jumps by more than ``HYSTERESIS_JUMP`` relative to the
    trend of its neighbours is flagged as a possible branch change.
    """
    cfg = cfg or SolverConfig()
    thetas = [float(t) for t in thetas]
    if any(b < a for a, b in zip(thetas, thetas[1:])) and any(b > a for a, b in zip(thetas, thetas[1:])):
        raise ValueError("thetas must be ordered")
    out: list[SolveResult] = []
    warm = cfg.warm_start
    for th in thetas:
        res = solve(spec, params, th, cfg.replace(warm_start=warm))
        out.append(res)
        if res.converged:
            warm = res.G
    flag_branch_jumps(out)
    return out


def flag_branch_jumps(results: list[SolveResult], jump: float = HYSTERESIS_JUMP) -> None:
    """Mark points where the action departs from a linear extrapolation by more than ``jump``."""
    for i in range(2, len(results)):
        a, b, c = results[i - 2], results[i - 1], results[i]
        h1, h2 = b.theta - a.theta, c.theta - b.theta
        if h1 == 0:
            continue
        pred = b.action + (b.action - a.action) * h2 / h1
        if abs(c.action - pred) > jump:
            c.hysteresis = True


def thermal_solve(beta: float, params: ModelParams, cfg: SolverConfig | None = None, M: int | None = None) -> SolveResult:
    M = M or default_grid(beta, params)
    return solve(build_contour("thermal", beta, M), params, 0.0, cfg)


def free_energy_density(beta: float, params: ModelParams, cfg: SolverConfig | None = None, M: int | None = None) -> float:
    """On-shell thermal action, ``-log Z_beta / N``."""
    if not beta > 0:
        raise ValueError("beta must be positive")
    res = thermal_solve(beta, params, cfg, M)
    if not res.converged:
        raise RuntimeError(f"thermal solve did not converge at beta={beta}: {res.message}")
    return res.action


def thermal_entropy(result: SolveResult) -> float:
    """Entropy density ``-S + beta dS/dbeta`` of a converged thermal solution."""
    if result.spec.kind != "thermal":
        raise ValueError("entropy needs a thermal solution")
    if result.beta_derivative is not None:
        return -result.action + result.beta_derivative
    return -result.action + beta_derivative_term(result.G, result.params)


def dyson_residual(result: SolveResult) -> float:
    """``max |(G0^-1 - Sigma - V) G - 1|`` with the grid measure folded in."""
    spec = result.spec
    V = noise_vertex(spec, result.theta).values
    K = kernel(spec, result.Sigma.values, V)
    return float(np.max(np.abs(K @ (spec.dtau * result.G.values) - np.eye(spec.size))))


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, result: SolveResult) -> Path:
    path = Path(path)
    spec = result.spec
    p = result.params or ModelParams()
    header = {
        "kind": spec.kind,
        "beta": spec.beta,
        "M": spec.M,
        "flavors": spec.flavors,
        "model": p.model,
        "theta": result.theta,
        "dtype": "f64",
        "layout": "row-major",
        "J": p.J,
        "g": p.g,
        "rank_gamma": p.rank_gamma,
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(np.ascontiguousarray(result.G.values, dtype="<f8").tobytes())
    return path


class CheckpointError(ValueError):
    pass


def load_checkpoint(path) -> tuple[dict, BilocalField]:
    """Read a checkpoint; returns the header and ``G`` on a rebuilt contour."""
    path = Path(path)
    data = path.read_bytes()
    if not data.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    off = len(CHECKPOINT_MAGIC)
    if len(data) < off + 4:
        raise CheckpointError(f"{path}: truncated header")
    (hlen,) = struct.unpack("<I", data[off:off + 4])
    off += 4
    try:
        header = json.loads(data[off:off + hlen])
    except ValueError as exc:
        raise CheckpointError(f"{path}: unreadable header") from exc
    off += hlen
    if header.get("dtype") != "f64" or header.get("layout") != "row-major":
        raise CheckpointError(f"{path}: unsupported payload {header.get('dtype')}/{header.get('layout')}")
    spec = build_contour(header["kind"], header["beta"], header["M"])
    payload = np.frombuffer(data[off:], dtype="<f8")
    if payload.size != spec.size**2:
        raise CheckpointError(f"{path}: payload has {payload.size} values, expected {spec.size ** 2}")
    return header, BilocalField(payload.reshape(spec.size, spec.size).astype(float), spec)


# ---------------------------------------------------------------------------
# estimator


class SchwingerDysonSolver(BaseEstimator):
    """Estimator wrapper: ``fit(beta_or_spec, theta)`` solves one contour.

    Fitted attributes: ``G_``, ``Sigma_``, ``action_``, ``n_iter_``,
    ``residual_``, ``converged_``, ``spec_``.
    """

    def __init__(self, kind="thermal", model="syk", J=1.0, g=1.0, rank_gamma=1.0, M=None,
                 mixing=0.3, tolerance=1e-8, max_iterations=5000, acceleration=False):
        self.kind = kind
        self.model = model
        self.J = J
        self.g = g
        self.rank_gamma = rank_gamma
        self.M = M
        self.mixing = mixing
        self.tolerance = tolerance
        self.max_iterations = max_iterations
        self.acceleration = acceleration

    def _params(self) -> ModelParams:
        return ModelParams(self.model, self.J, self.g, self.rank_gamma)

    def _config(self, warm=None) -> SolverConfig:
        return SolverConfig(self.mixing, self.tolerance, self.max_iterations, warm, self.acceleration)

    def fit(self, X, theta=0.0, warm_start=None):
        params = self._params()
        if isinstance(X, ContourSpec):
            spec = X
        else:
            beta = float(X)
            spec = build_contour(self.kind, beta, self.M or default_grid(beta, params))
        res = solve(spec, params, theta, self._config(warm_start))
        self.spec_ = spec
        self.result_ = res
        self.G_ = res.G
        self.Sigma_ = res.Sigma
        self.action_ = res.action
        self.n_iter_ = res.iterations
        self.residual_ = res.residual
        self.converged_ = res.converged
        return self

    def score(self, X=None, y=None):
        """Negative on-shell action, i.e. ``log Z / N`` of the contour."""
        if not hasattr(self, "action_"):
            raise AttributeError("solver is not fitted")
        return -self.action_
