"""Exact small-system oracle: Majoranas on qubits, TFD states, channels, Renyi entropies.

Majoranas use the Jordan-Wigner chain ``gamma_{2k} = Z..Z X_k / sqrt2`` and
``gamma_{2k+1} = Z..Z Y_k / sqrt2`` so that ``gamma^2 = 1/2``. Every Majorana
is a signed permutation of the computational basis, stored as ``(perm, phase)``
with ``gamma e_x = phase[x] e_{perm[x]}``; channels act on density matrices by
fancy indexing instead of matrix products.

For a code of ``N`` Majoranas the joint system uses ``2N`` Majoranas: the
system ``Q`` is the prefix ``0..N-1`` (the first ``N/2`` qubits) and the
reference ``R`` the suffix. Even operators on ``R`` lose their Jordan-Wigner
strings, so a Hamiltonian on ``R`` is ``I (x) h`` with ``h`` built on a
standalone ``N``-Majorana chain.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy import linalg

from .channels import phi_of_p
from .models import LOWRANK_CLOSURE_C, ModelParams

MAX_HAMILTONIAN_MAJORANAS = 16
MAX_JOINT_MAJORANAS = 24
TRACE_TOL = 1e-12

SQRT_HALF = np.sqrt(0.5)


class MajoranaAlgebra:
    """Jordan-Wigner Majoranas ``gamma_0 .. gamma_{N-1}`` on ``N/2`` qubits."""

    def __init__(self, n_majorana: int, limit: int = MAX_JOINT_MAJORANAS):
        if int(n_majorana) != n_majorana or n_majorana < 2 or n_majorana % 2:
            raise ValueError("n_majorana must be an even integer >= 2")
        if n_majorana > limit:
            raise ValueError(f"n_majorana={n_majorana} exceeds the dense limit {limit}")
        self.n_majorana = int(n_majorana)
        self.n_qubits = self.n_majorana // 2
        self.dim = 2**self.n_qubits
        x = np.arange(self.dim)
        nq = self.n_qubits
        bits = (x[:, None] >> (nq - 1 - np.arange(nq))[None, :]) & 1
        string = np.cumsum(bits, axis=1) - bits  # occupied qubits to the left
        perms, phases = [], []
        for k in range(nq):
            flip = x ^ (1 << (nq - 1 - k))
            zsign = np.where(string[:, k] % 2, -1.0, 1.0)
            perms += [flip, flip]
            phases.append(zsign * SQRT_HALF + 0j)
            phases.append(zsign * 1j * np.where(bits[:, k], -1.0, 1.0) * SQRT_HALF)
        self.perm = np.array(perms)
        self.phase = np.array(phases)

    def __len__(self):
        return self.n_majorana

    def dense(self, j: int) -> np.ndarray:
        out = np.zeros((self.dim, self.dim), dtype=complex)
        out[self.perm[j], np.arange(self.dim)] = self.phase[j]
        return out

    def product(self, indices) -> tuple[np.ndarray, np.ndarray]:
        """``gamma_a gamma_b ...`` as a signed permutation ``(perm, phase)``."""
        perm = np.arange(self.dim)
        phase = np.ones(self.dim, dtype=complex)
        for j in reversed(list(indices)):
            phase = phase * self.phase[j][perm]
            perm = self.perm[j][perm]
        return perm, phase

    def product_dense(self, indices) -> np.ndarray:
        perm, phase = self.product(indices)
        out = np.zeros((self.dim, self.dim), dtype=complex)
        out[perm, np.arange(self.dim)] = phase
        return out

    def parity(self) -> np.ndarray:
        """Diagonal of ``prod_k 2i gamma_{2k} gamma_{2k+1}``."""
        _, phase = self.product(range(self.n_majorana))
        return np.real(phase * (2j) ** self.n_qubits)

    def left(self, j: int, A: np.ndarray) -> np.ndarray:
        """``gamma_j A`` for a vector or a matrix (rows transformed)."""
        p = self.perm[j]
        ph = self.phase[j][p]
        return (ph.reshape((-1,) + (1,) * (A.ndim - 1)) * A[p])

    def right(self, j: int, A: np.ndarray) -> np.ndarray:
        """``A gamma_j`` (columns transformed)."""
        return A[:, self.perm[j]] * self.phase[j][None, :]

    def conjugate(self, j: int, rho: np.ndarray) -> np.ndarray:
        """``gamma_j rho gamma_j``."""
        return self.right(j, self.left(j, rho))


def build_hamiltonian(n_majorana: int, seed=None, params: ModelParams | None = None,
                      rng: np.random.Generator | None = None) -> np.ndarray:
    """Dense disorder realization on ``n_majorana`` Majoranas.

    SYK: ``sum_{i<j<k<l} J_ijkl g_i g_j g_k g_l`` with variance ``6 J^2 / N^3``,
    the normalization whose large-N closure is ``Sigma = J^2 G^3``.

    Low-rank: ``sum_n O_n^2`` with ``O_n = sum_{i<j} v^n_ij g_i g_j``,
    ``gamma N`` flavors and ``var v = g^2 / N^2``. At small coupling this
    matches SYK with ``J^2 = c gamma g^4``, the solver's closure.
    """
    params = params or ModelParams()
    if int(n_majorana) != n_majorana or n_majorana % 2 or not 4 <= n_majorana <= MAX_HAMILTONIAN_MAJORANAS:
        raise ValueError(f"n_majorana must be even and in [4, {MAX_HAMILTONIAN_MAJORANAS}]")
    rng = rng if rng is not None else np.random.default_rng(seed)
    alg = MajoranaAlgebra(n_majorana)
    N, d = alg.n_majorana, alg.dim
    H = np.zeros((d, d), dtype=complex)
    cols = np.arange(d)
    if params.model == "syk":
        if params.J == 0:
            return H
        quads = list(combinations(range(N), 4))
        J = rng.normal(0.0, np.sqrt(6.0 / N**3) * params.J, len(quads))
        for c, idx in zip(J, quads):
            perm, phase = alg.product(idx)
            H[perm, cols] += c * phase
    else:
        pairs = list(combinations(range(N), 2))
        bil = [alg.product(ij) for ij in pairs]
        R = max(1, int(round(params.rank_gamma * N)))
        for _ in range(R):
            v = rng.normal(0.0, params.g / N, len(pairs))
            O = np.zeros((d, d), dtype=complex)
            for c, (perm, phase) in zip(v, bil):
                O[perm, cols] += c * phase
            H += O @ O
    return 0.5 * (H + H.conj().T)


def lowrank_equivalent_J(params: ModelParams) -> float:
    """SYK coupling with the same small-coupling closure, ``sqrt(c gamma) g^2``."""
    return float(np.sqrt(LOWRANK_CLOSURE_C * params.rank_gamma)) * params.g**2


@dataclass
class ExactState:
    """Pure state of system (x) reference for a code of ``n_majorana`` Majoranas."""

    amplitudes: np.ndarray
    n_majorana: int
    beta: float = 0.0

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=complex)
        norm = np.linalg.norm(self.amplitudes)
        if abs(norm - 1.0) > 1e-10:
            raise ValueError(f"state is not normalized (norm {norm})")

    @property
    def algebra(self) -> MajoranaAlgebra:
        return MajoranaAlgebra(2 * self.n_majorana)

    @property
    def dims(self) -> tuple[int, int]:
        d = 2 ** (self.n_majorana // 2)
        return d, d

    def density(self) -> np.ndarray:
        v = self.amplitudes
        return np.outer(v, v.conj())


def maximally_entangled(n_majorana: int) -> ExactState:
    """Common vacuum of ``gamma_Q^j - i gamma_R^j`` for all ``j``.

    Projects a fixed reference vector with ``prod_j A_j A_j^dag / 2``; the
    factors commute and ``A A^dag / 2 = (1 + 2i gamma_Q gamma_R) / 2``.
    """
    alg = MajoranaAlgebra(2 * n_majorana)
    v = np.random.default_rng(12345).normal(size=alg.dim) + 0j
    for j in range(n_majorana):
        w = alg.left(j, alg.left(n_majorana + j, v))
        v = 0.5 * (v + 2j * w)
    v /= np.linalg.norm(v)
    # fix the arbitrary global phase for reproducibility
    k = int(np.argmax(np.abs(v)))
    v *= abs(v[k]) / v[k]
    return ExactState(v, n_majorana, 0.0)


def annihilation_error(state: ExactState) -> float:
    alg = state.algebra
    N = state.n_majorana
    v = state.amplitudes
    return max(float(np.linalg.norm(alg.left(j, v) - 1j * alg.left(N + j, v))) for j in range(N))


def tfd_state(H: np.ndarray | None, beta: float, n_majorana: int | None = None) -> ExactState:
    """``Z^{-1/2} exp(-beta H_R / 2) |Phi_QR>`` with ``H`` an even operator on the reference."""
    if H is None:
        if n_majorana is None:
            raise ValueError("n_majorana is required without a Hamiltonian")
        H = np.zeros((2 ** (n_majorana // 2),) * 2)
    d = H.shape[0]
    N = 2 * int(round(np.log2(d)))
    if n_majorana is not None and n_majorana != N:
        raise ValueError("Hamiltonian dimension does not match n_majorana")
    phi = maximally_entangled(N)
    if beta == 0:
        return ExactState(phi.amplitudes, N, 0.0)
    w, U = linalg.eigh(H)
    w = w - w.min()
    E = (U * np.exp(-0.5 * beta * w)) @ U.conj().T
    Psi = phi.amplitudes.reshape(d, d) @ E.T
    v = Psi.reshape(-1)
    return ExactState(v / np.linalg.norm(v), N, float(beta))


def _check_rates(p: float, q: float):
    if not 0 <= p < 0.5:
        raise ValueError("p must lie in [0, 1/2)")
    if q < 0:
        raise ValueError("q must be non-negative")


def apply_channel(rho: np.ndarray, algebra: MajoranaAlgebra, sites, p: float = 0.0,
                  q: float = 0.0) -> np.ndarray:
    """Product channel on the Majoranas ``sites``.

    Single: ``(1-p) rho + 2p g rho g`` on every site. Pair: every unordered
    pair ``i<j`` gets ``(1 - q/N) rho + (4q/N) g_i g_j rho g_j g_i`` with
    ``N = len(sites)``. All factors commute.
    """
    _check_rates(p, q)
    sites = list(sites)
    tr0 = np.trace(rho)
    out = np.array(rho, dtype=complex, copy=True)
    if q > 0:
        r = q / len(sites)
        if r > 1:
            raise ValueError("pair rate q/N exceeds 1")
        for i, j in combinations(sites, 2):
            out = (1 - r) * out + 4 * r * algebra.conjugate(i, algebra.conjugate(j, out))
    if p > 0:
        for j in sites:
            out = (1 - p) * out + 2 * p * algebra.conjugate(j, out)
    if abs(np.trace(out) - tr0) > TRACE_TOL * max(1.0, abs(tr0)):
        raise RuntimeError("channel changed the trace; Majorana normalization is broken")
    return out


def kraus_operators(algebra: MajoranaAlgebra, family: str, rate: float, sites=None) -> list[list[np.ndarray]]:
    """Kraus sets of the elementary factors: one list per site or pair."""
    sites = list(range(algebra.n_majorana)) if sites is None else list(sites)
    eye = np.eye(algebra.dim)
    if family == "single":
        return [[np.sqrt(1 - rate) * eye, np.sqrt(2 * rate) * algebra.dense(j)] for j in sites]
    if family == "pair":
        r = rate / len(sites)
        return [[np.sqrt(1 - r) * eye, 2 * np.sqrt(r) * algebra.product_dense((i, j))]
                for i, j in combinations(sites, 2)]
    raise ValueError(f"unknown channel family {family!r}")


def superoperator(algebra: MajoranaAlgebra, family: str, rate: float) -> np.ndarray:
    """Doubled-state operator: ``|rho>> -> |N(rho)>>`` with row-major ``|rho>> = (rho (x) I)|Phi>>``.

    Built from Kraus sets, ``K rho K^dag -> K (x) conj(K)``.
    """
    d = algebra.dim
    E = np.eye(d * d, dtype=complex)
    for kset in kraus_operators(algebra, family, rate):
        E = sum(np.kron(K, K.conj()) for K in kset) @ E
    return E


def choi_matrix(E: np.ndarray) -> np.ndarray:
    d = int(round(np.sqrt(E.shape[0])))
    return E.reshape(d, d, d, d).transpose(0, 2, 1, 3).reshape(d * d, d * d)


def doubled_majoranas(algebra: MajoranaAlgebra) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Majoranas ``gamma`` and ``gamma_bar`` on the doubled space.

    ``Gamma_j = g_j (x) P^T`` and ``Gamma_bar_j = -i I (x) (g_j P)^T`` with
    ``P`` the parity; with these ``2i Gamma_j Gamma_bar_j = 2 g_j (x) g_j^T``,
    the superoperator of ``rho -> 2 g_j rho g_j``.
    """
    P = np.diag(algebra.parity()).astype(complex)
    eye = np.eye(algebra.dim)
    g = [algebra.dense(j) for j in range(algebra.n_majorana)]
    G = [np.kron(gj, P.T) for gj in g]
    Gb = [-1j * np.kron(eye, (gj @ P).T) for gj in g]
    return G, Gb


def _best_scale_deviation(A: np.ndarray, B: np.ndarray) -> float:
    c = np.vdot(B, A) / np.vdot(B, B)
    return float(np.max(np.abs(A - c * B)))


def verify_channel_choi(rate: float, n_majorana: int, family: str = "single",
                        large_n_phi: bool = False) -> float:
    """Max deviation between the Kraus doubled-state operator and ``C exp(-S)``.

    Single: ``S = -phi_p sum_j 2i g_j gbar_j``. Pair: ``S = -phi (sum_j 2i g_j gbar_j)^2``
    with ``phi = phi_{q/N} / 2``, which makes the identity exact;
    ``large_n_phi=True`` uses the large-N form ``phi_{q/2N}`` instead.
    """
    if n_majorana > 8:
        raise ValueError("verify_channel_choi is meant for n_majorana <= 8")
    alg = MajoranaAlgebra(n_majorana)
    E = superoperator(alg, family, rate)
    G, Gb = doubled_majoranas(alg)
    X = sum(2j * a @ b for a, b in zip(G, Gb))
    N = n_majorana
    if family == "single":
        S = -phi_of_p(rate) * X
    else:
        phi = phi_of_p(rate / (2 * N)) if large_n_phi else 0.5 * phi_of_p(rate / N)
        S = -phi * (X @ X)
    return _best_scale_deviation(E, linalg.expm(-S))


def renyi_entropy(rho: np.ndarray, n: int = 2) -> float:
    """``log tr rho^n / (1 - n)``; ``n = 1`` gives the von Neumann entropy."""
    if n == 1:
        w = np.clip(linalg.eigvalsh(rho), 0, None)
        w = w[w > 0]
        return float(-np.sum(w * np.log(w)))
    if n == 2:
        return float(-np.log(np.sum(np.abs(rho) ** 2)))
    if n == 3:
        tr3 = np.real(np.sum((rho @ rho) * rho.T))
        return float(np.log(tr3) / (1 - n))
    w = linalg.eigvalsh(rho)
    return float(np.log(np.sum(w**n)) / (1 - n))


def partial_trace_reference(rho: np.ndarray, dims: tuple[int, int]) -> np.ndarray:
    dq, dr = dims
    return np.einsum("abcb->ac", rho.reshape(dq, dr, dq, dr))


def exact_entropies(state: ExactState, p: float = 0.0, q: float = 0.0, n: int = 2) -> tuple[float, float]:
    """``(S(Q'), S(Q'R))`` after decohering the system Majoranas."""
    alg = state.algebra
    rho = apply_channel(state.density(), alg, range(state.n_majorana), p, q)
    return renyi_entropy(partial_trace_reference(rho, state.dims), n), renyi_entropy(rho, n)


def exact_coherent_info(state: ExactState, p: float = 0.0, q: float = 0.0, n: int = 2) -> float:
    """Renyi-n coherent information ``S(Q') - S(Q'R)`` (not per Majorana)."""
    s_q, s_qr = exact_entropies(state, p, q, n)
    return s_q - s_qr


def clean_coherent_info(state: ExactState, n: int = 2) -> float:
    """``I_c(Q) = S(Q)`` of the pure state."""
    return renyi_entropy(partial_trace_reference(state.density(), state.dims), n)


def unencoded_coherent_info(p: float, q: float = 0.0, n: int = 2) -> float:
    """Per-Majorana coherent information of maximally entangled Majorana pairs.

    Two system Majoranas for single-site noise, four when pair noise is on.
    """
    _check_rates(p, q)
    N = 4 if q > 0 else 2
    return exact_coherent_info(tfd_state(None, 0.0, N), p, q, n) / N


def disorder_average(n_majorana: int, beta: float, params: ModelParams, p: float = 0.0,
                     q: float = 0.0, n: int = 2, draws: int = 20, seed=0) -> tuple[float, float]:
    """Mean and standard error of ``I_c / N`` over disorder draws."""
    rng = np.random.default_rng(seed)
    vals = []
    for _ in range(draws):
        H = build_hamiltonian(n_majorana, params=params, rng=rng)
        vals.append(exact_coherent_info(tfd_state(H, beta), p, q, n) / n_majorana)
    vals = np.asarray(vals)
    err = float(vals.std(ddof=1) / np.sqrt(draws)) if draws > 1 else 0.0
    return float(vals.mean()), err
