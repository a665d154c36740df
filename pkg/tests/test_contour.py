import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sykcode.contour import (
    KINDS,
    build_contour,
    free_action,
    free_propagator,
    noise_log_weight,
    noise_vertex,
)

even_M = st.integers(4, 24).map(lambda k: 2 * k)


@pytest.mark.parametrize("kind", KINDS)
def test_mask_counts_segments(kind):
    spec = build_contour(kind, 3.0, 16)
    assert spec.hamiltonian_mask.sum() == spec.syk_segments * spec.M


def test_segment_counts():
    segs = {k: build_contour(k, 1.0, 8).syk_segments for k in KINDS}
    assert segs == {"thermal": 1, "renyi2_qr": 2, "renyi2_q": 2, "renyi3_qr": 3, "renyi3_q": 3}


@settings(max_examples=30, deadline=None)
@given(kind=st.sampled_from(KINDS), M=even_M, theta=st.floats(-3, 3))
def test_vertex_antisymmetric(kind, M, theta):
    V = noise_vertex(build_contour(kind, 2.0, M), theta).values
    assert np.array_equal(V, -V.T)


@settings(max_examples=30, deadline=None)
@given(kind=st.sampled_from(KINDS), M=even_M)
def test_partner_map_is_involution(kind, M):
    pm = build_contour(kind, 1.0, M).partner_map()
    on = pm >= 0
    assert np.array_equal(pm[pm[on]], np.flatnonzero(on))


@pytest.mark.parametrize("kind", KINDS)
def test_windows_never_touch_hamiltonian(kind):
    spec = build_contour(kind, 1.0, 16)
    pm = spec.partner_map()
    assert not np.any(spec.flat_mask[pm >= 0])
    # every non-Hamiltonian point carries exactly one noise pair
    assert np.all(pm[~spec.flat_mask] >= 0)


@pytest.mark.parametrize("kind", KINDS)
def test_nested_refinement(kind):
    coarse, fine = build_contour(kind, 1.0, 12), build_contour(kind, 1.0, 24)
    assert np.array_equal(fine.hamiltonian_mask[:, ::2], coarse.hamiltonian_mask)
    assert np.array_equal(fine.hamiltonian_mask[:, 1::2], coarse.hamiltonian_mask)
    for wc, wf in zip(coarse.noise_windows, fine.noise_windows):
        fs = (wf.sites % fine.n) // 2 + (wf.sites // fine.n) * coarse.n
        assert set(fs) == set(wc.sites)
        assert wf.n_pairs == 2 * wc.n_pairs


def test_free_propagator_is_half_sign():
    spec = build_contour("renyi2_qr", 1.0, 8)
    G = free_propagator(spec)
    assert G.antisymmetry_error() == 0
    assert G.values[3, 1] == 0.5 and G.values[1, 3] == -0.5
    assert np.all(G.values[:spec.n, spec.n:] == 0)


def test_free_action_counts_loops():
    assert free_action(build_contour("thermal", 1.0, 8)) == pytest.approx(-0.5 * np.log(2))
    assert free_action(build_contour("renyi2_qr", 1.0, 8)) == pytest.approx(-np.log(2))
    assert free_action(build_contour("renyi3_q", 1.0, 8)) == pytest.approx(-0.5 * np.log(2))


def test_noise_strength_is_grid_independent():
    for M in (8, 16, 64):
        spec = build_contour("renyi2_q", 2.0, M)
        total = sum(w.strength(1.3, spec.beta) for w in spec.noise_windows)
        assert total == pytest.approx(1.3)
        assert noise_log_weight(spec, 0.0) == 0.0


@pytest.mark.parametrize("kw", [dict(kind="nope", beta=1.0, M=8), dict(kind="thermal", beta=-1.0, M=8),
                                dict(kind="thermal", beta=1.0, M=9), dict(kind="thermal", beta=1.0, M=6)])
def test_bad_inputs(kw):
    with pytest.raises(ValueError):
        build_contour(**kw)


def test_vertex_rejects_nan():
    with pytest.raises(ValueError):
        noise_vertex(build_contour("renyi2_q", 1.0, 8), float("nan"))
