"""Discretized replica contours for the SYK path integrals.

Every contour is a set of closed, antiperiodic imaginary-time loops ("flavors")
sampled on the midpoint grid ``tau_k = (k + 1/2) * dtau`` with ``dtau = beta / M``.
Each grid point is either evolved by the SYK Hamiltonian or belongs to a noise
window, where it is paired with exactly one partner point through a bilocal
vertex.

Flavor fields are stored flattened, flavor-major: global index ``s * n + k``.

Some flavors carry an imaginary stitching factor (``psi -> i psi``). Those are
stored in a real gauge and flagged by ``metric == -1``: the stored two-point
function of flavors ``s, s'`` is the physical one divided by ``d_s d_s'`` with
``d = 1`` or ``i``. All kernels are real in this gauge.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

KINDS = ("thermal", "renyi2_qr", "renyi2_q", "renyi3_qr", "renyi3_q")

# kind -> (loop length in units of beta, flavors, SYK intervals, metric)
_LAYOUT = {
    "thermal": (1, 1, [(0.0, 1.0)], (1,)),
    "renyi2_qr": (2, 2, [(0.0, 1.0)], (1, -1)),
    "renyi2_q": (4, 1, [(0.0, 1.0), (2.0, 3.0)], (1,)),
    "renyi3_qr": (2, 3, [(0.0, 1.0)], (1, 1, 1)),
    "renyi3_q": (6, 1, [(0.0, 1.0), (2.0, 3.0), (4.0, 5.0)], (1,)),
}

# kind -> list of (start, stop, reflect, site flavor, partner flavor); the
# partner of tau is reflect*beta - tau, or the same tau when reflect is None.
_WINDOWS = {
    "thermal": [],
    "renyi2_qr": [(1.0, 2.0, None, 0, 1)],
    "renyi2_q": [(1.0, 2.0, 5.0, 0, 0)],
    "renyi3_qr": [(1.0, 1.5, 3.0, 0, 2), (1.0, 1.5, 3.0, 2, 1), (1.0, 1.5, 3.0, 1, 0)],
    "renyi3_q": [(1.0, 1.5, 7.0, 0, 0), (1.5, 2.0, 5.0, 0, 0), (3.5, 4.0, 9.0, 0, 0)],
}


@dataclass(frozen=True, eq=False)
class NoiseWindow:
    """One family of bilocal noise pairs.

    ``sites[i]`` and ``partners[i]`` are global grid indices of the i-th pair and
    ``signs[i]`` is the orientation of the vertex entry ``V[site, partner]``.
    """

    start: float
    stop: float
    reflect: float | None
    flavors: tuple[int, int]
    sites: np.ndarray
    partners: np.ndarray
    signs: np.ndarray

    @property
    def n_pairs(self) -> int:
        return len(self.sites)

    def strength(self, theta: float, beta: float) -> float:
        """Integrated insertion strength ``mu * (window length)`` with ``mu = theta / beta``."""
        return theta / beta * (self.stop - self.start) * beta


@dataclass(frozen=True, eq=False)
class ContourSpec:
    kind: str
    beta: float
    M: int
    total_length: float
    flavors: int
    hamiltonian_mask: np.ndarray
    noise_windows: tuple[NoiseWindow, ...]
    metric: tuple[int, ...] = field(default=(1,))

    @property
    def grid_points_per_beta(self) -> int:
        return self.M

    @property
    def dtau(self) -> float:
        return self.beta / self.M

    @property
    def n(self) -> int:
        """Grid points per flavor."""
        return self.hamiltonian_mask.shape[1]

    @property
    def size(self) -> int:
        return self.flavors * self.n

    @property
    def tau(self) -> np.ndarray:
        return (np.arange(self.n) + 0.5) * self.dtau

    @property
    def flat_mask(self) -> np.ndarray:
        return self.hamiltonian_mask.reshape(-1)

    @property
    def flat_metric(self) -> np.ndarray:
        return np.repeat(np.asarray(self.metric, dtype=float), self.n)

    @property
    def n_pairs(self) -> int:
        return sum(w.n_pairs for w in self.noise_windows)

    @property
    def syk_segments(self) -> int:
        starts = np.flatnonzero(np.diff(np.concatenate(([0], self.hamiltonian_mask[0].astype(int)))) == 1)
        return len(starts) * self.flavors

    def partner_map(self) -> np.ndarray:
        """Global partner index for every grid point, ``-1`` on Hamiltonian points."""
        out = np.full(self.size, -1, dtype=int)
        for w in self.noise_windows:
            out[w.sites] = w.partners
            out[w.partners] = w.sites
        return out


@dataclass(eq=False)
class BilocalField:
    """Flavor-resolved two-time function stored as a ``(F*n, F*n)`` matrix."""

    values: np.ndarray
    spec: ContourSpec

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.spec.size, self.spec.size):
            raise ValueError(
                f"field shape {self.values.shape} does not match contour size {self.spec.size}"
            )

    def blocks(self) -> np.ndarray:
        """View as ``[flavor, tau, flavor', tau']``."""
        F, n = self.spec.flavors, self.spec.n
        return self.values.reshape(F, n, F, n)

    def block(self, s: int, t: int) -> np.ndarray:
        n = self.spec.n
        return self.values[s * n:(s + 1) * n, t * n:(t + 1) * n]

    def antisymmetry_error(self) -> float:
        return float(np.max(np.abs(self.values + self.values.T)))


def _points(a: float, b: float, M: int) -> np.ndarray:
    lo, hi = a * M, b * M
    if abs(lo - round(lo)) > 1e-9 or abs(hi - round(hi)) > 1e-9:
        raise ValueError(f"window [{a}, {b}) beta does not fall on the grid for M={M}")
    return np.arange(int(round(lo)), int(round(hi)))


def build_contour(kind: str, beta: float, M: int) -> ContourSpec:
    """Build the grid geometry of one replica diagram.

    Parameters
    ----------
    kind : one of ``KINDS``
    beta : inverse temperature of one SYK evolution segment
    M : grid points per ``beta``; even and at least 8 (the free kernel
        on a loop with an odd number of points is singular)
    """
    if kind not in _LAYOUT:
        raise ValueError(f"unknown contour kind {kind!r}; expected one of {KINDS}")
    if not beta > 0 or not np.isfinite(beta):
        raise ValueError("beta must be positive and finite")
    if int(M) != M or M < 8 or int(M) % 2:
        raise ValueError("M must be an even integer >= 8")
    M = int(M)
    length, F, syk, metric = _LAYOUT[kind]
    n = length * M
    mask = np.zeros((F, n), dtype=bool)
    for a, b in syk:
        mask[:, _points(a, b, M)] = True

    windows = []
    for a, b, reflect, s_site, s_partner in _WINDOWS[kind]:
        k = _points(a, b, M)
        if len(k) < 2:
            raise ValueError(f"M={M} resolves the window [{a}, {b}) with fewer than 2 points")
        if reflect is None:
            kp = k.copy()
            signs = np.ones(len(k))
        else:
            kp = int(round(reflect * M)) - 1 - k
            signs = np.sign(k - kp).astype(float)
        windows.append(
            NoiseWindow(
                start=a,
                stop=b,
                reflect=reflect,
                flavors=(s_site, s_partner),
                sites=s_site * n + k,
                partners=s_partner * n + kp,
                signs=signs,
            )
        )
    return ContourSpec(
        kind=kind,
        beta=float(beta),
        M=M,
        total_length=float(length),
        flavors=F,
        hamiltonian_mask=mask,
        noise_windows=tuple(windows),
        metric=metric,
    )


def _sgn_block(n: int) -> np.ndarray:
    k = np.arange(n)
    return 0.5 * np.sign(k[:, None] - k[None, :]).astype(float)


def free_propagator(spec: ContourSpec) -> BilocalField:
    """Noise-free ``J = 0`` Green's function ``1/2 sgn(tau - tau')`` on each loop.

    The loops are antiperiodic with period ``total_length * beta``; within the
    principal range no wrapping is needed, so the blocks are plain sign matrices.
    """
    G = np.kron(np.eye(spec.flavors), _sgn_block(spec.n))
    return BilocalField(G, spec)


def gauge_free_propagator(spec: ContourSpec) -> np.ndarray:
    """Free propagator in the real storage gauge (metric-signed blocks)."""
    return np.kron(np.diag(np.asarray(spec.metric, dtype=float)), _sgn_block(spec.n))


def noise_vertex(spec: ContourSpec, theta: float) -> BilocalField:
    """Antisymmetric bilocal noise kernel for insertion strength ``theta``.

    ``theta`` equals ``beta * mu``: the insertion density ``mu`` is uniform over
    all noise windows. Each grid pair carries the exact single-step transfer
    weight ``tanh(mu * dtau)`` instead of ``mu * dtau``; the matching normalisation
    is ``noise_log_weight``. Kernel entries are per unit ``dtau**2``.
    """
    if not np.isfinite(theta):
        raise ValueError("theta must be finite")
    V = np.zeros((spec.size, spec.size))
    if theta == 0.0 or not spec.noise_windows:
        return BilocalField(V, spec)
    dt = spec.dtau
    w = 2.0 * np.tanh(theta / spec.M) / dt**2
    for win in spec.noise_windows:
        V[win.sites, win.partners] += w * win.signs
        V[win.partners, win.sites] -= w * win.signs
    return BilocalField(V, spec)


def noise_log_weight(spec: ContourSpec, theta: float) -> float:
    """Per-Majorana action constant ``-n_pairs * log cosh(mu * dtau)`` of the vertex."""
    if theta == 0.0:
        return 0.0
    return -spec.n_pairs * float(np.log(np.cosh(theta / spec.M)))


def free_action(spec: ContourSpec) -> float:
    """Per-Majorana action of the free contour: each antiperiodic loop gives ``-1/2 log 2``."""
    return -0.5 * spec.flavors * np.log(2.0)
