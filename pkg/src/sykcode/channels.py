"""Noise channels on the replica contours and the resulting Renyi coherent information.

Rates map to insertion strengths through ``phi_p = artanh(p / (1 - p))``; the
parity-breaking channel enters every replica diagram with ``theta = 2 phi_p``.
Parity-conserving noise is handled by a Hubbard-Stratonovich field ``phi``
which acts like parity-breaking noise at rate ``p_phi`` and is integrated out at
its saddle point.

Entropies are per-Majorana Renyi densities

    s = (S_contour - n S_beta) / (n - 1)

where ``S_contour`` is the on-shell action of the replica contour and
``S_beta = -log Z_beta / N``. Constants of the channel normalization are
dropped; they cancel in ``ic_density = s_q - s_qr``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import interpolate, optimize

from .contour import build_contour
from .models import ModelParams
from .solver import SolveResult, SolverConfig, default_grid, solve

log = logging.getLogger(__name__)

SSB_TOL = 1e-4
P_MAX = 0.5


def phi_of_p(p):
    """``artanh(p / (1 - p))`` for ``0 <= p < 1/2``."""
    p = np.asarray(p, dtype=float)
    if np.any(p < 0) or np.any(p >= P_MAX):
        raise ValueError("rate must satisfy 0 <= p < 1/2")
    out = np.arctanh(p / (1.0 - p))
    return float(out) if out.ndim == 0 else out


def p_of_phi(phi):
    """Inverse of ``phi_of_p``: ``tanh(phi) / (1 + tanh(phi))``."""
    t = np.tanh(np.asarray(phi, dtype=float))
    out = t / (1.0 + t)
    return float(out) if out.ndim == 0 else out


def theta_of_p(p) -> float:
    """Contour insertion strength of the parity-breaking channel at rate ``p``."""
    return 2.0 * phi_of_p(p)


@dataclass(frozen=True)
class NoiseParams:
    p: float = 0.0
    q: float = 0.0

    def __post_init__(self):
        if not 0 <= self.p < P_MAX:
            raise ValueError("p must satisfy 0 <= p < 1/2")
        if not self.q >= 0 or not np.isfinite(self.q):
            raise ValueError("q must be non-negative and finite")

    @property
    def phi0(self) -> float:
        return phi_of_p(self.p)


@dataclass
class EntropyResult:
    s_qr: float
    s_q: float
    ic_density: float
    renyi_n: int
    phi_star: float = 0.0
    ssb: bool = False
    phi_star_qr: float = 0.0
    # minimizer of the phi-even part of the s_q curve; None when not computed
    phi_star_sym: float | None = None
    converged: bool = True
    beta: float = float("nan")
    M: int = 0
    p: float = 0.0
    q: float = 0.0


def default_phi_grid(points: int = 41, p_max: float = 0.45, smallest: float = 1e-3) -> np.ndarray:
    """``0`` followed by log-spaced points up to ``2 phi_p(p_max)``."""
    top = 2.0 * phi_of_p(p_max)
    return np.concatenate(([0.0], np.geomspace(smallest * top, top, points - 1)))


def _check_n(n):
    if n not in (2, 3):
        raise ValueError("renyi index must be 2 or 3")


class ReplicaSet:
    """Solves of one Renyi index at fixed ``beta``, model and grid.

    All contours share ``M`` with the thermal normalization so that grid errors
    of the Hamiltonian segments largely cancel in entropy differences.
    """

    def __init__(self, beta: float, params: ModelParams, n: int = 2,
                 cfg: SolverConfig | None = None, M: int | None = None):
        _check_n(n)
        self.beta, self.params, self.n = float(beta), params, n
        self.cfg = (cfg or SolverConfig()).replace(warm_start=None)
        self.M = M or default_grid(beta, params)
        self.specs = {
            "qr": build_contour(f"renyi{n}_qr", beta, self.M),
            "q": build_contour(f"renyi{n}_q", beta, self.M),
        }
        self._thermal: SolveResult | None = None

    @property
    def thermal(self) -> SolveResult:
        if self._thermal is None:
            spec = build_contour("thermal", self.beta, self.M)
            self._thermal = solve(spec, self.params, 0.0, self.cfg)
            if not self._thermal.converged:
                raise RuntimeError(f"thermal normalization did not converge: {self._thermal.message}")
        return self._thermal

    def entropy(self, action: float) -> float:
        return (action - self.n * self.thermal.action) / (self.n - 1)

    def solve(self, which: str, theta: float, warm=None) -> SolveResult:
        res = solve(self.specs[which], self.params, theta, self.cfg.replace(warm_start=warm))
        if not res.converged:
            log.warning("renyi%d_%s at theta=%g: %s", self.n, which, theta, res.message)
        return res

    def entropies(self, which: str, theta: float, warm=None) -> tuple[float, SolveResult]:
        res = self.solve(which, theta, warm)
        return self.entropy(res.action), res


class HSCurve:
    """Action ``S(theta = 2 (phi + phi0))`` of one replica contour as a function of ``phi``.

    Points are solved lazily with warm starts from the nearest cached
    neighbour; the curve does not depend on ``q`` so a single curve serves a
    whole q-scan.
    """

    def __init__(self, replicas: ReplicaSet, which: str, phi0: float = 0.0):
        self.replicas, self.which, self.phi0 = replicas, which, float(phi0)
        self.points: dict[float, SolveResult] = {}

    def theta(self, phi: float) -> float:
        return 2.0 * (phi + self.phi0)

    def _nearest(self, phi):
        good = [k for k, v in self.points.items() if v.converged]
        if not good:
            return None
        return self.points[min(good, key=lambda k: abs(k - phi))].G

    def result(self, phi: float) -> SolveResult:
        phi = float(phi)
        if phi not in self.points:
            self.points[phi] = self.replicas.solve(self.which, self.theta(phi), self._nearest(phi))
        return self.points[phi]

    def action(self, phi: float) -> float:
        return self.result(phi).action

    def scan(self, grid, bidirectional: bool = False) -> np.ndarray:
        """Continuation along ``grid`` (ascending); optionally a second pass downward.

        With two passes the lower action is kept at every grid point.
        """
        grid = np.asarray(grid, dtype=float)
        prev = None
        for phi in grid:
            res = self.replicas.solve(self.which, self.theta(phi), prev)
            self.points[float(phi)] = res
            if res.converged:
                prev = res.G
        if bidirectional:
            prev = None
            for phi in grid[::-1]:
                res = self.replicas.solve(self.which, self.theta(phi), prev)
                old = self.points[float(phi)]
                if res.converged and (not old.converged or res.action < old.action - 1e-12):
                    self.points[float(phi)] = res
                if res.converged:
                    prev = res.G
        return np.array([self.points[float(p)].action for p in grid])


def minimize_hs(phis, actions, q: float, n: int, fun=None) -> tuple[float, float]:
    """Minimize ``n phi^2 / (2 q) + S(phi)`` given ``S`` on an ascending grid.

    Grid argmin, then bounded Brent inside the neighbouring cells on ``fun``
    (an exact evaluator of ``S``) or, without it, on a cubic spline of the
    grid values. Returns ``(phi_star, minimum)``.
    """
    phis = np.asarray(phis, dtype=float)
    actions = np.asarray(actions, dtype=float)
    ok = np.isfinite(actions)
    phis, actions = phis[ok], actions[ok]
    if len(phis) == 0:
        raise RuntimeError("no converged point on the phi grid")
    f = n * phis**2 / (2.0 * q) + actions
    i = int(np.argmin(f))
    best_phi, best = float(phis[i]), float(f[i])
    if len(phis) < 2:
        return best_phi, best
    lo = phis[max(i - 1, 0)]
    hi = phis[min(i + 1, len(phis) - 1)]
    if fun is None:
        if len(phis) < 4:
            return best_phi, best
        fun = interpolate.CubicSpline(phis, actions)
    obj = lambda x: n * x**2 / (2.0 * q) + float(fun(x))
    res = optimize.minimize_scalar(obj, bounds=(lo, hi), method="bounded",
                                   options={"xatol": 1e-7 * max(abs(hi), 1e-3)})
    if res.success and res.fun < best:
        best_phi, best = float(res.x), float(res.fun)
    return best_phi, best


def hs_minimize(curve: HSCurve, q: float, n: int, grid, refine: bool = True,
                mirror: HSCurve | None = None) -> tuple[float, float]:
    """Minimize ``n phi^2 / (2 q) + S(phi)`` over ``phi >= 0`` on a solved curve.

    With ``mirror`` (the same contour at ``-phi``) the even part
    ``(S(phi) + S(-phi)) / 2`` is minimized instead; its minimizer leaves zero
    only through spontaneous symmetry breaking.
    """
    if not q > 0:
        return 0.0, curve.action(0.0)
    grid = np.asarray(grid, dtype=float)
    res = [curve.result(p) for p in grid]
    acts = np.array([r.action if r.converged else np.nan for r in res])
    if mirror is not None:
        m = [mirror.result(-p) for p in grid]
        acts = 0.5 * (acts + np.array([r.action if r.converged else np.nan for r in m]))
    bad = int(np.sum(~np.isfinite(acts)))
    if bad == len(grid):
        raise RuntimeError("no converged point on the phi grid")
    if bad:
        warnings.warn(f"{bad} phi grid points did not converge and were skipped")
    if not refine:
        phis = grid[np.isfinite(acts)]
        f = n * phis**2 / (2.0 * q) + acts[np.isfinite(acts)]
        k = int(np.argmin(f))
        return float(phis[k]), float(f[k])
    if mirror is None:
        fun = curve.action
    else:
        fun = lambda x: 0.5 * (curve.action(x) + mirror.action(-x))
    return minimize_hs(grid, acts, q, n, fun)


def entropies_breaking(beta: float, params: ModelParams, p: float, n: int = 2,
                       cfg: SolverConfig | None = None, M: int | None = None,
                       replicas: ReplicaSet | None = None) -> EntropyResult:
    NoiseParams(p=p)
    rs = replicas or ReplicaSet(beta, params, n, cfg, M)
    th = theta_of_p(p)
    s_qr, r_qr = rs.entropies("qr", th)
    s_q, r_q = rs.entropies("q", th)
    return EntropyResult(
        s_qr=s_qr, s_q=s_q, ic_density=s_q - s_qr, renyi_n=rs.n,
        converged=r_qr.converged and r_q.converged, beta=rs.beta, M=rs.M, p=p,
    )


def entropies_both(beta: float, params: ModelParams, p: float, q: float, n: int = 2,
                   cfg: SolverConfig | None = None, phi_grid=None, M: int | None = None,
                   replicas: ReplicaSet | None = None, curves: dict | None = None,
                   bidirectional: bool = False, ssb_mode: str = "spontaneous") -> EntropyResult:
    """Both channels: minimize ``n phi^2/(2q) + S(p_{phi + phi0})`` separately for each diagram.

    ``curves`` may carry pre-scanned ``HSCurve`` objects keyed by ``"qr"``,
    ``"q"`` and ``"q-"`` (the mirrored branch) to reuse solves across a q-scan.

    At finite ``beta`` the s_q curve has a linear term ``-4 G phi`` that acts as
    an explicit symmetry-breaking field, so ``phi_star`` is never exactly zero.
    With ``ssb_mode="spontaneous"`` and ``p = 0`` the SSB flag is taken from the
    minimizer of the phi-even part instead; ``"literal"`` flags ``phi_star``.
    """
    if ssb_mode not in ("spontaneous", "literal"):
        raise ValueError("ssb_mode must be 'spontaneous' or 'literal'")
    noise = NoiseParams(p=p, q=q)
    rs = replicas or ReplicaSet(beta, params, n, cfg, M)
    grid = default_phi_grid() if phi_grid is None else np.asarray(phi_grid, dtype=float)
    if q == 0:
        return entropies_breaking(beta, params, p, n, replicas=rs)
    curves = curves if curves is not None else {}
    sym = ssb_mode == "spontaneous" and p == 0
    for key in ("qr", "q") + (("q-",) if sym else ()):
        if curves.get(key) is None:
            curve = HSCurve(rs, key.rstrip("-"), noise.phi0)
            curve.scan(-grid if key.endswith("-") else grid, bidirectional)
            curves[key] = curve
    phi_q, f_q = hs_minimize(curves["q"], q, rs.n, grid)
    phi_qr, f_qr = hs_minimize(curves["qr"], q, rs.n, grid)
    phi_sym = hs_minimize(curves["q"], q, rs.n, grid, mirror=curves["q-"])[0] if sym else None
    s_q, s_qr = rs.entropy(f_q), rs.entropy(f_qr)
    conv = all(r.converged for c in curves.values() for r in c.points.values())
    flag = phi_sym if phi_sym is not None else phi_q
    return EntropyResult(
        s_qr=s_qr, s_q=s_q, ic_density=s_q - s_qr, renyi_n=rs.n,
        phi_star=phi_q, ssb=bool(flag > SSB_TOL), phi_star_qr=phi_qr, phi_star_sym=phi_sym,
        converged=conv, beta=rs.beta, M=rs.M, p=p, q=q,
    )


def entropies_conserving(beta: float, params: ModelParams, q: float, n: int = 2,
                         cfg: SolverConfig | None = None, phi_grid=None, M: int | None = None,
                         replicas: ReplicaSet | None = None, curves: dict | None = None,
                         bidirectional: bool = False, ssb_mode: str = "spontaneous") -> EntropyResult:
    if not q > 0:
        raise ValueError("q must be positive for the parity-conserving channel")
    return entropies_both(beta, params, 0.0, q, n, cfg, phi_grid, M, replicas, curves,
                          bidirectional, ssb_mode)


def q_scan(beta: float, params: ModelParams, qs, n: int = 2, p: float = 0.0,
           cfg: SolverConfig | None = None, phi_grid=None, M: int | None = None,
           bidirectional: bool = False, ssb_mode: str = "spontaneous") -> list[EntropyResult]:
    """Coherent information along ``qs`` reusing one pair of HS curves."""
    rs = ReplicaSet(beta, params, n, cfg, M)
    curves: dict = {}
    out = []
    for q in qs:
        if q == 0:
            out.append(entropies_breaking(beta, params, p, n, replicas=rs))
        else:
            out.append(entropies_both(beta, params, p, q, n, replicas=rs, curves=curves,
                                      phi_grid=phi_grid, bidirectional=bidirectional,
                                      ssb_mode=ssb_mode))
    return out


def p_scan(beta: float, params: ModelParams, ps, n: int = 2,
           cfg: SolverConfig | None = None, M: int | None = None) -> list[EntropyResult]:
    rs = ReplicaSet(beta, params, n, cfg, M)
    out = []
    warm = {"qr": None, "q": None}
    for p in ps:
        th = theta_of_p(p)
        s_qr, r_qr = rs.entropies("qr", th, warm["qr"])
        s_q, r_q = rs.entropies("q", th, warm["q"])
        warm = {"qr": r_qr.G if r_qr.converged else None, "q": r_q.G if r_q.converged else None}
        out.append(EntropyResult(s_qr=s_qr, s_q=s_q, ic_density=s_q - s_qr, renyi_n=n,
                                 converged=r_qr.converged and r_q.converged,
                                 beta=rs.beta, M=rs.M, p=float(p)))
    return out


def baseline_no_encoding(p: float, q: float = 0.0, n: int = 2) -> float:
    """Renyi coherent information per Majorana of unencoded Majorana Bell pairs.

    Computed exactly with the small-system oracle: two Majoranas for the
    single-site channel, four for the pair channel (reported per Majorana).
    """
    from .edoracle import unencoded_coherent_info

    NoiseParams(p=p, q=q)
    return unencoded_coherent_info(p, q, n)
