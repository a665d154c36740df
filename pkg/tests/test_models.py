import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sykcode.contour import BilocalField, build_contour
from sykcode.models import (
    ModelParams,
    action_density,
    delta_of_gamma,
    gamma_of_delta,
    self_energy,
    syk_self_energy,
)
from sykcode.solver import SolverConfig, solve


def _random_antisym(spec, rng, scale=0.3):
    A = rng.normal(scale=scale, size=(spec.size, spec.size))
    return BilocalField(A - A.T, spec)


@pytest.mark.parametrize("kind", ["thermal", "renyi2_qr", "renyi3_q"])
@pytest.mark.parametrize("params", [ModelParams("syk", J=1.3), ModelParams("lowrank", g=0.7, rank_gamma=2.0)])
def test_closures_keep_antisymmetry(kind, params, rng):
    spec = build_contour(kind, 1.0, 8)
    S = self_energy(_random_antisym(spec, rng, 0.1), params)
    assert S.antisymmetry_error() < 1e-14


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), J=st.floats(0.1, 3.0))
def test_syk_closure_is_odd(seed, J):
    spec = build_contour("renyi2_q", 1.0, 8)
    G = _random_antisym(spec, np.random.default_rng(seed))
    p = ModelParams("syk", J=J)
    plus = syk_self_energy(G, p).values
    minus = syk_self_energy(BilocalField(-G.values, spec), p).values
    assert np.allclose(minus, -plus, atol=1e-15)


def test_syk_closure_cubic():
    spec = build_contour("thermal", 1.0, 8)
    G = BilocalField(np.full((8, 8), 0.5) * np.sign(np.subtract.outer(np.arange(8), np.arange(8))), spec)
    S = syk_self_energy(G, ModelParams("syk", J=2.0)).values
    assert S[3, 1] == pytest.approx(4.0 * 0.125)


def test_params_validation():
    with pytest.raises(ValueError):
        ModelParams("sparse")
    with pytest.raises(ValueError):
        ModelParams("syk", J=-1)
    with pytest.raises(ValueError):
        ModelParams("lowrank", g=0.0)
    with pytest.raises(ValueError):
        ModelParams("lowrank", rank_gamma=-1.0)
    assert ModelParams("syk", J=0).free


@settings(max_examples=50, deadline=None)
@given(delta=st.floats(0.2501, 0.4999))
def test_gamma_delta_inverse(delta):
    assert delta_of_gamma(float(gamma_of_delta(delta))) == pytest.approx(delta, abs=1e-9)


def test_delta_of_gamma_limits():
    # gamma ~ 1 / (32 pi eps^2) near delta = 1/4
    assert delta_of_gamma(1e6) - 0.25 == pytest.approx((32 * np.pi * 1e6) ** -0.5, rel=1e-2)
    assert delta_of_gamma(1e-6) > 0.49
    assert delta_of_gamma(4.236) == pytest.approx(0.30, abs=2e-3)
    with pytest.raises(ValueError):
        delta_of_gamma(0.0)


@pytest.mark.parametrize("kind", ["thermal", "renyi2_qr", "renyi2_q", "renyi3_qr", "renyi3_q"])
@pytest.mark.parametrize("params", [ModelParams("syk", J=1.0), ModelParams("lowrank", g=1.0, rank_gamma=1.0)])
def test_action_is_stationary(kind, params, rng):
    spec = build_contour(kind, 2.0, 16)
    res = solve(spec, params, 0.4, SolverConfig(spectral=False))
    assert res.converged
    S0 = res.action
    d = _random_antisym(spec, rng, 1.0).values
    d /= np.abs(d).max()

    def shifted(eps):
        G = BilocalField(res.G.values + eps * d, spec)
        return action_density(G, self_energy(G, params), spec, params, 0.4)

    changes = [abs(shifted(eps) - S0) for eps in (1e-2, 5e-3)]
    # second order: halving eps quarters the change
    assert changes[0] / changes[1] == pytest.approx(4.0, rel=0.1)
    assert action_density(res.G, res.Sigma, spec, params, 0.4) == pytest.approx(S0, abs=1e-9)
