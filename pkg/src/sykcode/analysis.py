"""Post-processing: conformal fits, perturbative coefficients, T -> 0 extrapolation, thresholds."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin

from .channels import SSB_TOL, ReplicaSet, phi_of_p
from .contour import build_contour
from .models import ModelParams
from .solver import SolveResult, SolverConfig, default_grid, solve, thermal_entropy

CONFORMAL_WINDOW = (0.2, 0.8)
DEFAULT_P_WINDOW = (0.0025, 0.005, 0.0075, 0.01)
GAMMA_FIT_RESIDUAL = 1e-5

# beta(N) = c * N^alpha in units of 1/J
BETA_C = 1.0
BETA_ALPHA = 0.9


def _column(G, beta=None):
    """Accept a SolveResult, a thermal field or a bare column; return ``(tau, g, beta)``."""
    if isinstance(G, SolveResult):
        spec = G.spec
        col = G.column if G.column is not None else G.G.values[:, 0]
        return spec.tau, np.asarray(col), spec.beta
    if hasattr(G, "spec"):
        return G.spec.tau, G.values[:, 0], G.spec.beta
    g = np.asarray(G, dtype=float)
    if beta is None:
        raise ValueError("beta is required for a bare column")
    M = len(g)
    return (np.arange(M) + 0.5) * beta / M, g, float(beta)


def fit_conformal(G, beta: float | None = None, window=CONFORMAL_WINDOW) -> tuple[float, float]:
    """Fit ``G(tau) = A (pi / (beta sin(pi tau / beta)))^(2 Delta)``; return ``(Delta, A)``.

    Least squares of ``log G`` against ``log(pi / (beta sin(pi tau / beta)))`` on
    ``tau`` in ``[0.2, 0.8] beta``.
    """
    tau, g, beta = _column(G, beta)
    sel = (tau >= window[0] * beta) & (tau <= window[1] * beta)
    if sel.sum() < 2:
        raise ValueError("fit window holds fewer than two grid points")
    if np.any(g[sel] <= 0):
        raise ValueError("G is not positive inside the fit window; unconverged or non-conformal input")
    x = np.log(np.pi / (beta * np.sin(np.pi * tau[sel] / beta)))
    slope, intercept = np.polyfit(x, np.log(g[sel]), 1)
    return float(slope / 2), float(np.exp(intercept))


class ConformalFit(BaseEstimator, RegressorMixin):
    """Estimator form of ``fit_conformal``: ``X`` is ``tau``, ``y`` is ``G(tau)``."""

    def __init__(self, beta=1.0, window=CONFORMAL_WINDOW):
        self.beta = beta
        self.window = window

    def fit(self, X, y):
        tau = np.asarray(X, dtype=float).reshape(-1)
        g = np.asarray(y, dtype=float)
        sel = (tau >= self.window[0] * self.beta) & (tau <= self.window[1] * self.beta)
        if np.any(g[sel] <= 0):
            raise ValueError("G is not positive inside the fit window")
        x = np.log(np.pi / (self.beta * np.sin(np.pi * tau[sel] / self.beta)))
        slope, intercept = np.polyfit(x, np.log(g[sel]), 1)
        self.delta_ = float(slope / 2)
        self.amplitude_ = float(np.exp(intercept))
        return self

    def predict(self, X):
        tau = np.asarray(X, dtype=float).reshape(-1)
        return self.amplitude_ * (np.pi / (self.beta * np.sin(np.pi * tau / self.beta))) ** (2 * self.delta_)


@dataclass
class PerturbativeFit:
    """Small-``p`` expansion ``s_qr = s_qr0 - G_QR p^2`` and ``s_q = s_q0 + slope p - G_Q p^2``."""

    gamma_q: float
    gamma_qr: float
    renyi_n: int
    fit_window: list
    residual: float
    slope_q: float = np.nan
    slope_qr: float = np.nan
    green_slope: float = np.nan
    beta: float = np.nan
    M: int = 0

    @property
    def gamma_difference(self) -> float:
        return self.gamma_q - self.gamma_qr


def fit_quadratic(p, ds, slope: float = 0.0) -> tuple[float, float]:
    """Fit ``ds - slope p = -Gamma p^2``; returns ``(Gamma, rms residual)``."""
    p = np.asarray(p, dtype=float)
    y = np.asarray(ds, dtype=float) - slope * p
    gamma = -float(np.dot(p**2, y) / np.dot(p**2, p**2))
    res = y + gamma * p**2
    return gamma, float(np.sqrt(np.mean(res**2)))


def green_slope(beta: float, params: ModelParams, n: int = 2, M: int | None = None,
                cfg: SolverConfig | None = None) -> float:
    """First-order coefficient ``-2n G_{n beta}(beta)`` of ``s_q`` from a thermal solve at ``n beta``."""
    Mb = M or default_grid(beta, params)
    spec = build_contour("thermal", n * beta, n * Mb)
    res = solve(spec, params, 0.0, cfg)
    return -2.0 * n * float(res.column[Mb])


def _symmetric_parts(rs: ReplicaSet, which: str, thetas) -> tuple[np.ndarray, np.ndarray, float]:
    a0 = rs.solve(which, 0.0).action
    ap = np.array([rs.solve(which, t).action for t in thetas])
    am = np.array([rs.solve(which, -t).action for t in thetas])
    return (ap + am) / 2 - a0, (ap - am) / 2, a0


def _theta_derivatives(thetas, even, odd) -> tuple[float, float, float]:
    """``f'(0)``, ``f''(0)`` from the odd and even parts, plus the relative rms misfit."""
    t = np.asarray(thetas)
    # up to three terms; the s_q diagram has sizable theta^4 and theta^6 parts
    k = max(1, min(3, len(t) - 1))
    A_e = np.c_[t**2, t**4, t**6][:, :k]
    A_o = np.c_[t, t**3, t**5][:, :k]
    ce, re, *_ = np.linalg.lstsq(A_e, even, rcond=None)
    co, ro, *_ = np.linalg.lstsq(A_o, odd, rcond=None)
    miss = np.concatenate([even - A_e @ ce, odd - A_o @ co])
    scale = np.sqrt(np.mean(np.concatenate([even, odd]) ** 2))
    res = np.sqrt(np.mean(miss**2)) / scale if scale > 0 else 0.0
    return float(co[0]), float(2 * ce[0]), float(res)


def slope_at_zero(beta: float, params: ModelParams, which: str = "q", n: int = 2,
                  dp: float = 1e-3, M: int | None = None, cfg: SolverConfig | None = None,
                  replicas: ReplicaSet | None = None) -> float:
    """Central difference ``d s / dp`` at ``p = 0`` using ``theta = +-2 phi_dp``.

    The entropy depends on ``p`` only through ``theta`` and ``dtheta/dp = 2`` at
    zero, so the mirrored insertion gives a clean central difference.
    """
    rs = replicas or ReplicaSet(beta, params, n, cfg, M)
    th = 2 * phi_of_p(dp)
    ap = rs.solve(which, th).action
    am = rs.solve(which, -th).action
    return (ap - am) / (2 * th) * 2.0 / (rs.n - 1)


def fit_gamma(beta: float, params: ModelParams, n: int = 2, cfg: SolverConfig | None = None,
              M: int | None = None, window=DEFAULT_P_WINDOW, replicas: ReplicaSet | None = None,
              max_residual: float | None = GAMMA_FIT_RESIDUAL) -> PerturbativeFit:
    """Second-order coefficients of the parity-breaking entropies.

    Each rate ``p`` is paired with the mirrored insertion ``theta -> -theta``.
    The even part of ``s(theta)`` is free of the first and third orders, the
    odd part gives the measured slope, and with ``theta = 2 phi_p`` (so
    ``theta'' = 4`` at zero) ``d^2 s / dp^2 = 4 (s'' + s')``. The small-``p``
    window must satisfy ``window <= 0.1``.
    """
    window = [float(p) for p in window]
    if not window or min(window) <= 0 or max(window) > 0.1:
        raise ValueError("fit window must lie in (0, 0.1]")
    rs = replicas or ReplicaSet(beta, params, n, cfg, M)
    thetas = 2 * phi_of_p(np.array(window))
    out = {}
    residual = 0.0
    for which in ("q", "qr"):
        even, odd, _ = _symmetric_parts(rs, which, thetas)
        even, odd = even / (n - 1), odd / (n - 1)
        d1, d2, res = _theta_derivatives(thetas, even, odd)
        out[which] = (2 * d1, -2.0 * (d2 + d1))
        residual = max(residual, res)
    if max_residual is not None and residual > max_residual:
        raise RuntimeError(
            f"fit residual {residual:.2e} exceeds {max_residual:.0e}; p window is outside the perturbative regime"
        )
    gs = green_slope(beta, params, n, rs.M, rs.cfg)
    return PerturbativeFit(
        gamma_q=out["q"][1], gamma_qr=out["qr"][1], renyi_n=n, fit_window=window,
        residual=residual, slope_q=out["q"][0], slope_qr=out["qr"][0], green_slope=gs,
        beta=float(beta), M=rs.M,
    )


def extrapolate_zero_T(values, order: int = 2) -> tuple[float, float]:
    """Polynomial fit of ``y`` against ``T = 1/beta``; returns ``(y(T=0), stderr)``.

    ``values`` is a sequence of ``(beta, y)``. With exactly ``order + 1``
    points the fit interpolates and the uncertainty is ``nan``.
    """
    pts = np.asarray(list(values), dtype=float)
    if pts.ndim != 2 or len(pts) < order + 1:
        raise ValueError(f"need at least {order + 1} points for an order-{order} extrapolation")
    T = 1.0 / pts[:, 0]
    y = pts[:, 1]
    A = np.vander(T, order + 1)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    dof = len(pts) - (order + 1)
    if dof == 0:
        return float(coef[-1]), float("nan")
    sigma2 = float(np.sum((y - A @ coef) ** 2)) / dof
    cov = sigma2 * np.linalg.inv(A.T @ A)
    return float(coef[-1]), float(np.sqrt(max(cov[-1, -1], 0.0)))


class ZeroTExtrapolator(BaseEstimator, RegressorMixin):
    """Polynomial-in-``T`` regression; ``X`` holds ``beta`` values."""

    def __init__(self, order=2):
        self.order = order

    def fit(self, X, y):
        beta = np.asarray(X, dtype=float).reshape(-1)
        y = np.asarray(y, dtype=float)
        self.intercept_, self.stderr_ = extrapolate_zero_T(zip(beta, y), self.order)
        self.coef_ = np.polyfit(1.0 / beta, y, self.order)
        return self

    def predict(self, X):
        beta = np.asarray(X, dtype=float).reshape(-1)
        return np.polyval(self.coef_, 1.0 / beta)


def richardson(values, Ms, levels: int | None = None) -> float:
    """Eliminate ``1/M, 1/M^2, ...`` errors from a sequence at increasing ``M``."""
    vals = [float(v) for v in values]
    Ms = [float(m) for m in Ms]
    levels = len(vals) - 1 if levels is None else levels
    for k in range(1, levels + 1):
        # Neville step in h = 1/M
        vals = [(Ms[i + k] * vals[i + 1] - Ms[i] * vals[i]) / (Ms[i + k] - Ms[i])
                for i in range(len(vals) - 1)]
    return vals[-1]


def thermal_entropy_extrapolated(beta: float, params: ModelParams, dtaus=(0.05, 0.025, 0.0125),
                                 levels: int = 1, cfg: SolverConfig | None = None) -> float:
    """Thermal entropy density with the lattice error removed by Richardson extrapolation.

    ``dtaus`` are grid spacings in units of ``1 / energy_scale``.
    """
    Ms, vals = [], []
    for d in dtaus:
        M = int(np.ceil(beta * params.energy_scale / d / 2)) * 2
        spec = build_contour("thermal", beta, max(M, 16))
        res = solve(spec, params, 0.0, cfg)
        if not res.converged:
            raise RuntimeError(f"thermal solve at beta={beta}, M={M} did not converge")
        Ms.append(spec.M)
        vals.append(thermal_entropy(res))
    return richardson(vals, Ms, levels)


def zero_T_entropy(params: ModelParams, betas=(20, 30, 40, 60, 80), order: int = 2,
                   dtaus=(0.05, 0.025, 0.0125), levels: int = 1,
                   cfg: SolverConfig | None = None) -> tuple[float, float]:
    """``s_0`` from T -> 0 extrapolation of Richardson-corrected thermal entropies.

    ``betas`` are in units of ``1 / energy_scale``.
    """
    pts = []
    for bJ in betas:
        beta = bJ / params.energy_scale
        pts.append((bJ, thermal_entropy_extrapolated(beta, params, dtaus, levels, cfg)))
    return extrapolate_zero_T(pts, order)


@dataclass
class ThresholdResult:
    q_c: float = np.nan
    p_th: float = np.nan
    epsilon: float = np.nan
    eta: float = np.nan
    alpha: float = BETA_ALPHA
    n: int = 2
    open_ended: bool = False
    c: float = BETA_C
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.q_c < 0 or self.p_th < 0:
            raise ValueError("thresholds must be non-negative")


def beta_of_N(N, c: float = BETA_C, alpha: float = BETA_ALPHA):
    """Inverse temperature (units of ``1/J``) assigned to ``N`` Majoranas: ``c N^alpha``."""
    return c * np.asarray(N, dtype=float) ** alpha


def N_of_beta(beta, c: float = BETA_C, alpha: float = BETA_ALPHA):
    return (np.asarray(beta, dtype=float) / c) ** (1.0 / alpha)


def epsilon_threshold(rates, ic, clean: float, epsilon: float) -> tuple[float, bool]:
    """Largest rate with ``ic >= (1 - epsilon) clean``; returns ``(rate, open_ended)``.

    The curve is made non-increasing by a running minimum before the crossing
    is located by linear interpolation. ``epsilon >= 1`` tolerates any loss and
    is always open-ended.
    """
    rates = np.asarray(rates, dtype=float)
    ic = np.minimum.accumulate(np.asarray(ic, dtype=float))
    if len(rates) == 0:
        raise ValueError("empty curve")
    if np.any(np.diff(rates) <= 0):
        raise ValueError("rates must be strictly increasing")
    if epsilon >= 1:
        return float(rates[-1]), True
    cut = (1.0 - epsilon) * clean
    below = np.flatnonzero(ic < cut)
    if len(below) == 0:
        return float(rates[-1]), True
    i = int(below[0])
    if i == 0:
        return float(rates[0]), False
    r0, r1, y0, y1 = rates[i - 1], rates[i], ic[i - 1], ic[i]
    return float(r0 + (y0 - cut) / (y0 - y1) * (r1 - r0)), False


def detect_ssb_onset(scan, tol: float = SSB_TOL, phi_of_q=None, xtol: float = 1e-4) -> tuple[float, bool]:
    """Smallest ``q`` with ``phi_star > tol``; returns ``(q_c, open_ended)``.

    ``scan`` is a sequence of ``(q, phi_star)`` sorted in ``q``. With a callable
    ``phi_of_q`` the bracketing interval is refined by bisection; otherwise
    the first ordered scan point is returned.
    """
    pts = sorted((float(q), float(f)) for q, f in scan)
    if not pts:
        raise ValueError("empty scan")
    on = [i for i, (_, f) in enumerate(pts) if f > tol]
    if not on:
        return pts[-1][0], True
    i = on[0]
    if i == 0 or phi_of_q is None:
        return pts[i][0], False
    lo, hi = pts[i - 1][0], pts[i][0]
    while hi - lo > xtol:
        mid = 0.5 * (lo + hi)
        if phi_of_q(mid) > tol:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi), False


def perturbative_ic_breaking(p, s0: float, A: float, gamma_difference: float, N=None,
                             alpha: float = BETA_ALPHA, delta: float = 0.25):
    """``s_0 - A N^{-2 alpha Delta} p - (Gamma_Q - Gamma_QR) p^2``."""
    p = np.asarray(p, dtype=float)
    lin = A if N is None else A * np.asarray(N, dtype=float) ** (-2 * alpha * delta)
    return s0 - lin * p - gamma_difference * p**2


def perturbative_ic_conserving(q, s0: float, gamma_q: float, N=None, alpha: float = BETA_ALPHA,
                               delta: float = 0.25, amplitude: float = 1.0, n: int = 2):
    """``s_0 - a N^{-4 alpha Delta} / (n (2q)^-1 - Gamma_Q)`` below the threshold ``n / (2 Gamma_Q)``."""
    q = np.asarray(q, dtype=float)
    scale = amplitude if N is None else amplitude * np.asarray(N, dtype=float) ** (-4 * alpha * delta)
    with np.errstate(divide="ignore"):
        return s0 - scale / (n / (2 * q) - gamma_q)


def pth_breaking_asymptotic(N, eta: float, gamma_difference: float, alpha: float = BETA_ALPHA,
                            delta: float = 0.25):
    """``min(N^{2 alpha Delta - eta}, N^{-eta/2} / sqrt(Gamma_Q - Gamma_QR))``."""
    N = np.asarray(N, dtype=float)
    return np.minimum(N ** (2 * alpha * delta - eta), N ** (-eta / 2) / np.sqrt(gamma_difference))


def pth_conserving_asymptotic(N, eta: float, gamma_q: float, alpha: float = BETA_ALPHA,
                              delta: float = 0.25):
    """``1 / (Gamma_Q + N^{eta - 4 alpha Delta})``."""
    N = np.asarray(N, dtype=float)
    return 1.0 / (gamma_q + N ** (eta - 4 * alpha * delta))


def threshold_scan_q(results, clean: float | None = None, epsilon=(0.01,), n: int = 2) -> list[ThresholdResult]:
    """ThresholdResults from a q-scan of ``EntropyResult`` records."""
    results = sorted(results, key=lambda r: r.q)
    qs = np.array([r.q for r in results])
    ic = np.array([r.ic_density for r in results])
    clean = ic[0] if clean is None else clean
    q_c, open_q = detect_ssb_onset([(r.q, r.phi_star_sym if r.phi_star_sym is not None else r.phi_star)
                                    for r in results])
    out = []
    for eps in epsilon:
        p_th, open_p = epsilon_threshold(qs, ic, clean, eps)
        out.append(ThresholdResult(q_c=q_c, p_th=p_th, epsilon=eps, n=n, open_ended=open_p,
                                   extra={"q_c_open_ended": open_q}))
    return out

