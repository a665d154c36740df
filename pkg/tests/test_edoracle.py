import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import linalg

from sykcode.edoracle import (
    ExactState,
    MajoranaAlgebra,
    annihilation_error,
    apply_channel,
    build_hamiltonian,
    choi_matrix,
    clean_coherent_info,
    disorder_average,
    doubled_majoranas,
    exact_coherent_info,
    maximally_entangled,
    partial_trace_reference,
    renyi_entropy,
    superoperator,
    tfd_state,
    unencoded_coherent_info,
    verify_channel_choi,
)
from sykcode.models import ModelParams


@pytest.mark.parametrize("N", [2, 4, 6, 8, 12])
def test_clifford_relations(N):
    alg = MajoranaAlgebra(N)
    g = [alg.dense(j) for j in range(N)]
    for i in range(N):
        for j in range(N):
            anti = g[i] @ g[j] + g[j] @ g[i]
            assert np.abs(anti - (i == j) * np.eye(alg.dim)).max() < 1e-13
        assert np.abs(g[i] - g[i].conj().T).max() < 1e-13
    par = np.diag(alg.parity())
    assert np.allclose(np.abs(np.diag(par)), 1)
    for gj in g:
        assert np.abs(par @ gj + gj @ par).max() < 1e-13


def test_signed_permutation_products():
    alg = MajoranaAlgebra(6)
    dense = alg.dense(1) @ alg.dense(4) @ alg.dense(5)
    assert np.abs(alg.product_dense((1, 4, 5)) - dense).max() < 1e-15
    rho = np.random.default_rng(0).normal(size=(alg.dim, alg.dim))
    assert np.allclose(alg.conjugate(2, rho), alg.dense(2) @ rho @ alg.dense(2))


@pytest.mark.parametrize("N", [2, 4])
@pytest.mark.parametrize("family", ["single", "pair"])
@pytest.mark.parametrize("rate", [0.05, 0.3])
def test_choi_identity(N, family, rate):
    assert verify_channel_choi(rate, N, family) < 1e-10


def test_large_n_pair_weight_is_only_asymptotic():
    # frozen: phi_{q/2N} misses the exact pair channel at N = 4, q = 0.3
    dev = verify_channel_choi(0.3, 4, "pair", large_n_phi=True)
    assert 1e-3 < dev < 1e-1


def test_doubled_majoranas_anticommute():
    G, Gb = doubled_majoranas(MajoranaAlgebra(4))
    ops = G + Gb
    for a in range(len(ops)):
        for b in range(len(ops)):
            anti = ops[a] @ ops[b] + ops[b] @ ops[a]
            assert np.abs(anti - (a == b) * np.eye(len(anti))).max() < 1e-13


@pytest.mark.parametrize("family", ["single", "pair"])
def test_channels_are_cptp(family):
    alg = MajoranaAlgebra(4)
    E = superoperator(alg, family, 0.2)
    choi = choi_matrix(E)
    assert np.linalg.eigvalsh(0.5 * (choi + choi.conj().T)).min() > -1e-12
    # trace preservation: sum_i <ii| E = <Phi|
    d = alg.dim
    phi = np.eye(d).reshape(-1)
    assert np.allclose(phi @ E, phi)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31), p=st.floats(0, 0.49), q=st.floats(0, 2.0))
def test_channel_preserves_trace(seed, p, q):
    alg = MajoranaAlgebra(4)
    A = np.random.default_rng(seed).normal(size=(alg.dim, alg.dim, 2)) @ [1, 1j]
    rho = A @ A.conj().T
    rho /= np.trace(rho)
    out = apply_channel(rho, alg, range(4), p, q)
    assert abs(np.trace(out) - 1) < 1e-12


@pytest.mark.parametrize("N", [2, 4, 6, 8])
def test_maximally_entangled_state(N):
    st_ = maximally_entangled(N)
    assert annihilation_error(st_) < 1e-12
    assert clean_coherent_info(st_, 2) == pytest.approx(N / 2 * np.log(2), abs=1e-12)
    assert clean_coherent_info(st_, 1) == pytest.approx(N / 2 * np.log(2), abs=1e-12)


def test_renyi_entropies():
    d = 8
    assert renyi_entropy(np.eye(d) / d, 2) == pytest.approx(3 * np.log(2))
    assert renyi_entropy(np.eye(d) / d, 3) == pytest.approx(3 * np.log(2))
    assert renyi_entropy(np.eye(d) / d, 1) == pytest.approx(3 * np.log(2))
    v = np.random.default_rng(3).normal(size=d) + 0j
    v /= np.linalg.norm(v)
    pure = np.outer(v, v.conj())
    for n in (1, 2, 3, 4):
        assert abs(renyi_entropy(pure, n)) < 1e-10


def test_hamiltonian_is_even_and_hermitian():
    for params in (ModelParams("syk", J=1.0), ModelParams("lowrank", g=1.0, rank_gamma=1.0)):
        H = build_hamiltonian(8, seed=0, params=params)
        assert np.abs(H - H.conj().T).max() < 1e-12
        par = np.diag(MajoranaAlgebra(8).parity())
        assert np.abs(par @ H - H @ par).max() < 1e-12
    assert np.array_equal(build_hamiltonian(6, seed=5), build_hamiltonian(6, seed=5))


def test_syk_variance_normalization():
    # tr H^2 / d = sum over quartets of J^2 / 16 -> (N choose 4) 6 J^2 / (16 N^3)
    N, vals = 8, []
    for s in range(200):
        H = build_hamiltonian(N, seed=s)
        vals.append(np.trace(H @ H).real / len(H))
    expect = 70 * 6 / (16 * N**3)
    assert np.mean(vals) == pytest.approx(expect, rel=0.1)


def test_tfd_reduces_to_thermal_state():
    H = build_hamiltonian(6, seed=2)
    beta = 1.5
    st_ = tfd_state(H, beta)
    rho_q = partial_trace_reference(st_.density(), st_.dims)
    w = linalg.eigvalsh(H)
    Z2, Z = np.sum(np.exp(-2 * beta * w)), np.sum(np.exp(-beta * w))
    assert renyi_entropy(rho_q, 2) == pytest.approx(-np.log(Z2 / Z**2), abs=1e-10)


@pytest.mark.parametrize("n", [2, 3])
def test_unencoded_pairs_match_formula(n):
    for p in (0.0, 0.1, 0.3):
        exact = 0.5 * np.log(2) + np.log((1 - p) ** n + p**n) / (n - 1)
        assert unencoded_coherent_info(p, 0.0, n) == pytest.approx(exact, abs=1e-12)


def test_coherent_info_bounds_on_random_draws():
    rng = np.random.default_rng(7)
    for _ in range(100):
        N = int(rng.choice([4, 6]))
        H = build_hamiltonian(N, params=ModelParams("syk", J=1.0), rng=rng)
        st_ = tfd_state(H, float(rng.uniform(0, 8)))
        p, q, n = float(rng.uniform(0, 0.49)), float(rng.uniform(0, 1)), int(rng.choice([2, 3]))
        clean = clean_coherent_info(st_, n)
        ic = exact_coherent_info(st_, p, q, n)
        assert -clean - 1e-12 <= ic <= clean + 1e-12


def test_noise_only_lowers_coherent_info():
    st_ = tfd_state(build_hamiltonian(6, seed=1), 2.0)
    ic = [exact_coherent_info(st_, p, 0.0) for p in (0.0, 0.05, 0.1, 0.2)]
    assert np.all(np.diff(ic) < 0)
    ic = [exact_coherent_info(st_, 0.0, q) for q in (0.0, 0.2, 0.5)]
    assert np.all(np.diff(ic) < 0)


def test_disorder_average_reproducible():
    a = disorder_average(4, 1.0, ModelParams(), 0.1, 0.0, 2, draws=5, seed=3)
    b = disorder_average(4, 1.0, ModelParams(), 0.1, 0.0, 2, draws=5, seed=3)
    assert a == b and a[1] > 0


def test_input_validation():
    with pytest.raises(ValueError):
        MajoranaAlgebra(3)
    with pytest.raises(ValueError):
        MajoranaAlgebra(30)
    with pytest.raises(ValueError):
        ExactState(np.ones(4), 2)
    with pytest.raises(ValueError):
        apply_channel(np.eye(2), MajoranaAlgebra(2), range(2), p=0.6)
    with pytest.raises(ValueError):
        tfd_state(None, 1.0)
