import numpy as np
import pytest
from sklearn.base import clone

from sykcode.contour import build_contour
from sykcode.models import ModelParams
from sykcode.solver import (
    CheckpointError,
    SchwingerDysonSolver,
    SolverConfig,
    anticirculant_column,
    anticirculant_eigenvalues,
    anticirculant_matrix,
    continuation_solve,
    default_grid,
    dyson_residual,
    free_energy_density,
    load_checkpoint,
    save_checkpoint,
    solve,
    thermal_entropy,
    thermal_solve,
)

TOL = SolverConfig().tolerance
DENSE = SolverConfig(spectral=False)


@pytest.fixture(scope="module")
def replica_solutions():
    p = ModelParams("syk", J=1.0)
    return {kind: solve(build_contour(kind, 2.0, 16), p, 0.5, DENSE)
            for kind in ("thermal", "renyi2_qr", "renyi2_q", "renyi3_qr", "renyi3_q")}


def test_converged_fields_are_antisymmetric(replica_solutions):
    for res in replica_solutions.values():
        assert res.converged
        assert res.G.antisymmetry_error() <= 10 * TOL


def test_dyson_residual(replica_solutions):
    for res in replica_solutions.values():
        assert res.residual <= TOL
        assert dyson_residual(res) <= 10 * TOL


def test_theta_zero_decouples_replicas(syk):
    res = solve(build_contour("renyi2_qr", 2.0, 16), syk, 0.0)
    n = res.spec.n
    assert np.abs(res.G.values[:n, n:]).max() <= TOL
    assert res.action == pytest.approx(2 * thermal_solve(2.0, syk, M=16).action, abs=1e-9)


@pytest.mark.parametrize("kind", ["thermal", "renyi2_qr", "renyi2_q", "renyi3_qr", "renyi3_q"])
def test_free_limit_is_exact(kind, free):
    spec = build_contour(kind, 1.0, 8)
    res = solve(spec, free, 0.0)
    assert res.converged and res.iterations <= 2
    assert res.action == pytest.approx(-0.5 * spec.flavors * np.log(2), abs=1e-12)


def test_high_temperature_action(syk):
    # -1/2 log 2 - (beta J)^2 / 128 + O((beta J)^4)
    beta = 0.05
    for M in (64, 1000):
        S = free_energy_density(beta, syk, M=M)
        # the empty equal-time cells cost a relative 1/M of the interaction term
        assert S + 0.5 * np.log(2) == pytest.approx(-beta**2 / 128, rel=1.5 / M)


def test_grid_refinement_converges(syk):
    acts = [thermal_solve(4.0, syk, M=M).action for M in (32, 64, 128, 256)]
    d = np.abs(np.diff(acts))
    assert np.all(d[1:] < d[:-1])
    order = np.log2(d[:-1] / d[1:])
    assert np.all(order >= 0.9)


def test_replica_grid_refinement(syk):
    acts = [solve(build_contour("renyi2_q", 1.0, M), syk, 0.4).action for M in (8, 16, 32)]
    assert abs(acts[2] - acts[1]) < abs(acts[1] - acts[0])


def test_spectral_matches_dense(syk):
    spec = build_contour("thermal", 3.0, 24)
    a = solve(spec, syk, 0.0)
    b = solve(spec, syk, 0.0, DENSE)
    assert a.action == pytest.approx(b.action, abs=1e-12)
    assert np.abs(a.G.values - b.G.values).max() < 1e-10


def test_anticirculant_roundtrip(rng):
    col = rng.normal(size=10)
    A = anticirculant_matrix(col)
    assert np.allclose(A[:, 0], col)
    # anti-periodic shift: A[i+1, j+1] = A[i, j], wrapping with a sign
    assert np.allclose(A[1:, 1:], A[:-1, :-1])
    assert np.allclose(A[0, 1:], -col[:0:-1])
    assert np.allclose(anticirculant_column(anticirculant_eigenvalues(col)).real, col)


def test_entropy_identity_matches_finite_difference(syk):
    beta, h, M = 5.0, 1e-3, 200
    S = lambda b: thermal_solve(b, syk, M=M).action
    fd = -S(beta) + beta * (S(beta + h) - S(beta - h)) / (2 * h)
    assert thermal_entropy(thermal_solve(beta, syk, M=M)) == pytest.approx(fd, abs=1e-7)


def test_warm_start_saves_iterations(syk):
    spec = build_contour("renyi2_q", 2.0, 16)
    cold = solve(spec, syk, 0.6)
    warm = solve(spec, syk, 0.62, SolverConfig(warm_start=cold.G))
    assert warm.converged and warm.iterations < cold.iterations


def test_continuation_and_order(syk):
    spec = build_contour("renyi2_q", 1.0, 8)
    out = continuation_solve(spec, syk, [0.0, 0.2, 0.4])
    assert all(r.converged for r in out)
    assert out[0].action == pytest.approx(solve(spec, syk, 0.0).action, abs=1e-9)
    with pytest.raises(ValueError):
        continuation_solve(spec, syk, [0.0, 0.4, 0.2])


def test_non_convergence_is_reported(syk):
    res = solve(build_contour("renyi2_q", 2.0, 16), syk, 0.5, SolverConfig(max_iterations=3))
    assert not res.converged
    assert "convergence" in res.message or "stalled" in res.message


def test_config_validation():
    for kw in (dict(mixing=0.0), dict(mixing=1.5), dict(tolerance=0.0), dict(max_iterations=0),
               dict(stall_iterations=0)):
        with pytest.raises(ValueError):
            SolverConfig(**kw)
    with pytest.raises(ValueError):
        solve(build_contour("thermal", 1.0, 8), ModelParams(), float("inf"))


def test_default_grid():
    M = default_grid(10.0, ModelParams())
    assert M % 2 == 0 and 10.0 / M <= 0.05
    assert default_grid(0.1, ModelParams()) == 16


def test_checkpoint_roundtrip(tmp_path, replica_solutions):
    for kind, res in replica_solutions.items():
        path = save_checkpoint(tmp_path / f"{kind}.sykgf", res)
        header, G = load_checkpoint(path)
        assert header["kind"] == kind and header["theta"] == res.theta
        assert np.array_equal(G.values, res.G.values)
        assert G.spec.size == res.spec.size


def test_corrupted_checkpoints(tmp_path, replica_solutions):
    path = save_checkpoint(tmp_path / "g.sykgf", replica_solutions["thermal"])
    data = path.read_bytes()
    (tmp_path / "magic").write_bytes(b"X" + data[1:])
    (tmp_path / "short").write_bytes(data[:-8])
    (tmp_path / "stub").write_bytes(data[:9])
    for name in ("magic", "short", "stub"):
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / name)


def test_estimator_api():
    est = SchwingerDysonSolver(M=32)
    assert clone(est).get_params() == est.get_params()
    with pytest.raises(AttributeError):
        est.score()
    est.fit(2.0)
    assert est.converged_ and est.G_.values.shape == (32, 32)
    assert est.score() == pytest.approx(-est.action_)
    est.set_params(kind="renyi2_qr", M=16).fit(1.0, theta=0.3)
    assert est.spec_.kind == "renyi2_qr" and est.converged_
