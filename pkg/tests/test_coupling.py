import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sasaki import coupling
from sasaki.coupling import (
    corollary_bound,
    coupled_step,
    drift_bound,
    initial_state,
    path_generators,
    run_coupling,
    verify_bounds,
)
from sasaki.comparison import g_rie, g_sas
from sasaki.errors import DegeneratePair
from sasaki.geodesics import hamiltonian_flow, solve_bvp
from sasaki.transport import transport_matrix


def test_corollary_bound_examples():
    assert corollary_bound(1.0, -1.0, 4, 0.0) == pytest.approx(1.0)
    assert corollary_bound(1.0, 0.0, 2, 0.5) == pytest.approx(np.sqrt(7.0))
    # a = (n-2)|k2| = 2: sqrt(e^2 + 6 (e^2 - 1)) at t = 1
    e2 = np.exp(2.0)
    assert corollary_bound(1.0, -1.0, 4, 1.0) == pytest.approx(np.sqrt(e2 + 6 * (e2 - 1)))


@settings(max_examples=50, deadline=None)
@given(d=st.floats(0.01, 5), k2=st.floats(-2, 0), n=st.sampled_from([2, 4, 6]), t=st.floats(0, 2), dt=st.floats(1e-3, 1))
def test_corollary_bound_monotone(d, k2, n, t, dt):
    b0 = corollary_bound(d, k2, n, t)
    assert b0 >= d * (1 - 1e-12)
    assert corollary_bound(d, k2, n, t + dt) >= b0
    # the a -> 0 limit is continuous
    if n == 2:
        assert b0 == pytest.approx(np.sqrt(d * d + 12 * t))


def test_corollary_bound_vector_input():
    out = corollary_bound(1.0, 0.0, 2, np.array([0.0, 1.0]))
    assert np.allclose(out, [1.0, np.sqrt(13.0)])


def test_drift_bound_matches_comparison_functions():
    rho, h, v = 0.8, 0.9, 0.4
    expected = g_sas(rho, -0.5 * h * h + v * v) + 2 * g_rie(rho, -0.2 * h * h + v * v / 4)
    assert drift_bound(rho, h, v, -0.5, -0.2, 4) == pytest.approx(expected)
    assert drift_bound(rho, 1.0, 0.0, 0.0, 0.0, 2) == pytest.approx(g_sas(rho, 0.0))


def test_degenerate_pair(models):
    M = models["heisenberg1"]
    with pytest.raises(DegeneratePair):
        initial_state(M, 0.1, np.zeros(3), np.zeros(3))
    with pytest.raises(DegeneratePair):
        run_coupling(M, 0.1, np.zeros(3), np.zeros(3), 0.1, 0.01, 4)


def test_bad_arguments(models):
    M = models["heisenberg1"]
    with pytest.raises(ValueError):
        run_coupling(M, 0.1, np.zeros(3), [1, 0, 0], 0.1, 0.0, 4)
    with pytest.raises(ValueError):
        run_coupling(M, 0.1, np.zeros(3), [1, 0, 0], 0.1, 0.01, 4, engine="nope")


def test_same_seed_same_step(models):
    M = models["cc-1"]
    st0 = initial_state(M, 0.2, np.zeros(3), [0.4, 0.1, 0.05])
    a = coupled_step(M, 0.2, st0, 1e-3, np.random.default_rng(3))
    b = coupled_step(M, 0.2, st0, 1e-3, np.random.default_rng(3))
    assert np.array_equal(a.x, b.x) and np.array_equal(a.y, b.y) and a.rho == b.rho


def test_step_y_increment_is_transported_x_increment(models):
    M = models["cc+1"]
    eps = 0.3
    st0 = initial_state(M, eps, np.zeros(3), [0.3, -0.2, 0.1])
    dt = 1e-4
    dB = np.random.default_rng(9).standard_normal(M.n) * np.sqrt(dt)
    P = transport_matrix(M, hamiltonian_flow(M, eps, st0.x, st0.p, 1.0, 64))
    vx = np.append(dB, 0.0)
    vy = P @ vx
    # transport preserves the horizontal bundle and the metric
    assert abs(vy[-1]) < 1e-10
    assert np.linalg.norm(vy[:2]) == pytest.approx(np.linalg.norm(dB), rel=1e-10)
    new = coupled_step(M, eps, st0, dt, np.random.default_rng(9))
    assert new.frame_defect() < 1e-10
    assert new.t == pytest.approx(dt)
    # to first order the distance changes by <grad_y r, vy> - <grad_x r, vx>
    assert abs(new.rho - st0.rho) < 5 * np.linalg.norm(dB)


def test_fast_engine_matches_generic_step(models):
    M = models["heisenberg1"]
    eps, y = 1e-2, np.array([1.0, 0.0, 0.0])
    a = run_coupling(M, eps, np.zeros(3), y, 5e-3, 1e-3, 3, seed=4, n_checkpoints=5, engine="heisenberg")
    b = run_coupling(M, eps, np.zeros(3), y, 5e-3, 1e-3, 3, seed=4, n_checkpoints=5, engine="generic")
    assert np.allclose(a.rho, b.rho, atol=1e-6)


def test_zero_horizon_echoes_rho(models):
    M = models["heisenberg1"]
    stats = run_coupling(M, 0.1, np.zeros(3), [0.5, 0.0, 0.0], 0.0, 1e-3, 5)
    assert np.all(stats.rho[:, 0] == stats.rho0) and stats.rho.shape[1] == 1
    rep = verify_bounds(stats)
    assert rep["empty"] and rep["drift_ok"] is None


def test_thread_count_does_not_change_results(models, monkeypatch):
    M = models["heisenberg1"]
    monkeypatch.setattr(coupling, "BLOCK", 7)
    args = (M, 1e-2, np.zeros(3), [1.0, 0.0, 0.0], 0.02, 1e-3, 30)
    monkeypatch.setenv("SASAKI_THREADS", "1")
    a = run_coupling(*args, seed=11)
    monkeypatch.setenv("SASAKI_THREADS", "3")
    b = run_coupling(*args, seed=11)
    assert np.array_equal(a.rho, b.rho)
    assert a.drift_mean == b.drift_mean and a.incr_var == b.incr_var


def test_path_streams_independent_of_range():
    full = path_generators(5, 10)
    part = path_generators(5, 10, 4, 6)
    assert full[4].standard_normal() == part[0].standard_normal()
    assert full[5].standard_normal() == part[1].standard_normal()


def test_x_marginal_has_horizontal_laplacian_generator(models):
    # for Brownian motion of 1/2 Delta_H, E|x_H(t)|^2 = n t
    M = models["heisenberg1"]
    eps = 0.1
    rng = np.random.default_rng(2)
    T, dt, n_paths = 0.025, 5e-3, 24
    sq = []
    for _ in range(n_paths):
        st_ = initial_state(M, eps, np.zeros(3), [0.8, 0.0, 0.0])
        for _ in range(int(round(T / dt))):
            st_ = coupled_step(M, eps, st_, dt, rng)
        sq.append(st_.x[0] ** 2 + st_.x[1] ** 2)
    mean = np.mean(sq)
    se = np.std(sq) / np.sqrt(n_paths)
    assert abs(mean - 2 * T) < 4 * se


def test_small_heisenberg_run_audit(models):
    M = models["heisenberg1"]
    stats = run_coupling(M, 1e-2, np.zeros(3), [1.0, 0.0, 0.0], 0.02, 2e-4, 400, seed=1, n_checkpoints=5)
    rep = verify_bounds(stats)
    assert rep["drift_ok"] and rep["variance_ok"] and rep["violation_ok"]
    assert stats.rho.shape == (400, 6)
    q = stats.quantiles()
    assert len(q) == len(stats.times)
    rows = list(stats.csv_rows())
    assert len(rows) >= len(stats.times)
    s = stats.summary()
    assert s["n_paths"] == 400


def test_generic_engine_on_curved_model(models):
    M = models["cc-1"]
    stats = run_coupling(M, 0.2, np.zeros(3), [0.5, 0.0, 0.0], 0.01, 2e-3, 4, seed=3, n_checkpoints=5)
    assert np.all(np.isfinite(stats.rho[:, 0]))
    assert stats.rho[0, 0] == pytest.approx(solve_bvp(M, 0.2, np.zeros(3), [0.5, 0.0, 0.0]).r)
    rep = verify_bounds(stats)
    assert rep["samples"] > 0
