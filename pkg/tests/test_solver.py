import math

import numpy as np
import pytest

from nonlocal_iss import (
    ConfigurationError,
    DensityState,
    DisturbanceSignal,
    DomainError,
    FeedbackConfig,
    Frame,
    FrameError,
    Grid,
    InitialCondition,
    SolverConfig,
    StabilityError,
    VelocityModel,
    sample_initial,
    simulate,
)
from nonlocal_iss.solver import (
    boundary_close_perturbation,
    boundary_close_physical,
    cfl_step_size,
    from_perturbation,
    read_trajectory_csv,
    to_perturbation,
    upwind_interior_step,
    write_state_snapshots,
    write_trajectory_csv,
)

from .oracle import brute_force_run

M = VelocityModel(1.0, 1.0)


@pytest.mark.parametrize("J, lam, c, t_now, t_final, expected", [
    (100, 0.5, 0.75, 0.0, 10.0, 0.015),
    (100, 0.5, 0.75, 9.999, 10.0, 0.001),
    (1600, 1 / 3, 0.9, 0.0, 10.0, 0.0016875),
])
def test_cfl_step_size(J, lam, c, t_now, t_final, expected):
    dt = cfl_step_size(Grid(J), lam, c, t_now, t_final)
    assert dt == pytest.approx(expected, rel=1e-12)
    assert lam * dt / Grid(J).dx <= c * (1 + 1e-15)


def test_cfl_step_size_errors():
    with pytest.raises(DomainError):
        cfl_step_size(Grid(10), 0.0, 0.5, 0.0, 1.0)
    with pytest.raises(StabilityError):
        cfl_step_size(Grid(10), 1.0, 1.5, 0.0, 1.0)


def test_upwind_interior_step():
    s = DensityState([0.0, 1.0, 0.0])
    assert upwind_interior_step(s, 0.5).values[1:].tolist() == [0.5, 0.5]
    c = DensityState(np.full(6, 2.5))
    assert np.all(upwind_interior_step(c, 0.37).values == 2.5)
    v = np.array([3.0, 1.0, 4.0, 1.0, 5.0])
    assert upwind_interior_step(DensityState(v), 1.0).values[1:].tolist() == v[:-1].tolist()
    for r in (0.0, 1.0000001, -0.2):
        with pytest.raises(StabilityError):
            upwind_interior_step(s, r)


def test_interior_step_maximum_principle(rng):
    for _ in range(200):
        v = rng.normal(size=rng.integers(2, 30))
        new = upwind_interior_step(DensityState(v), rng.uniform(1e-6, 1.0)).values[1:]
        assert new.min() >= v.min() - 1e-15 and new.max() <= v.max() + 1e-15


def test_boundary_closures():
    assert boundary_close_physical(5.0, 1.0, 0.7, FeedbackConfig(0.0, 0.0), M, 0.3) == 0.0
    assert boundary_close_physical(0.0, 1.0, 0.5, FeedbackConfig(0.3, 1.0), M, 0.0) == pytest.approx(0.7, rel=1e-15)
    assert boundary_close_physical(1.0, 1.0, 0.5, FeedbackConfig(0.3, 0.0), M, 0.0024) == pytest.approx(0.30072, rel=1e-14)
    assert boundary_close_perturbation(0.0, 1.0, FeedbackConfig(0.3, 1.0), M, 0.0) == pytest.approx(0.35, rel=1e-15)
    assert boundary_close_perturbation(0.0, 0.0, FeedbackConfig(0.6, 4.0), M, 0.0) == 0.0
    assert boundary_close_perturbation(3.0, 2.0, FeedbackConfig(0.0, 1.0), M, 1.0) == 1.0


def test_closures_agree_through_theta_identity(rng):
    for _ in range(100):
        cfg = FeedbackConfig(rng.uniform(0, 0.99), rng.uniform(0, 5))
        m = VelocityModel(rng.uniform(0.1, 3), rng.uniform(0.1, 3))
        rho_J, W, d = rng.uniform(0, 5), rng.uniform(0, 5), rng.normal()
        phys = boundary_close_physical(rho_J, W, m(W), cfg, m, d)
        pert = boundary_close_perturbation(rho_J - cfg.rho_star, W - cfg.rho_star, cfg, m, d)
        assert phys == pytest.approx(pert + cfg.rho_star, rel=1e-13, abs=1e-13)


def test_frame_conversions():
    cfg = FeedbackConfig(0.3, 1.5)
    s = DensityState([1.5, 1.5, 1.5])
    p = to_perturbation(s, cfg)
    assert p.frame is Frame.PERTURBATION and np.all(p.values == 0)
    v = DensityState([0.1, 2.7, 3.3])
    np.testing.assert_allclose(from_perturbation(to_perturbation(v, cfg), cfg).values, v.values, rtol=0, atol=1e-15)
    with pytest.raises(FrameError):
        from_perturbation(v, cfg)


def test_equilibrium_is_invariant():
    g = Grid(50)
    cfg = FeedbackConfig(0.4, 1.3)
    traj = simulate(sample_initial(InitialCondition(1.3), g), g, M, cfg, SolverConfig(0.8, 3.0, 7))
    assert traj.l2_norm.max() < 1e-13
    assert np.allclose(traj.final_state.values, 1.3, atol=1e-13)


def test_trajectory_bookkeeping():
    g = Grid(40)
    traj = simulate(sample_initial(InitialCondition(1, 1), g), g, M, FeedbackConfig(0.3), SolverConfig(0.6, 1.234, 25))
    n = traj.n_steps
    assert 25 < n < 50
    assert len(traj.times) == len(traj.mass) == len(traj.velocity) == len(traj.l2_norm) == n + 1
    assert np.all(np.diff(traj.times) > 0)
    assert traj.times[-1] == 1.234
    assert np.isclose(traj.step_sizes.sum(), 1.234)
    assert traj.snapshot_steps[-1] == n and traj.snapshot_steps == [0, 25, n]
    assert np.all(traj.cfl_ratios <= 0.6 + 1e-15)


@pytest.mark.parametrize("J", [2, 3])
@pytest.mark.parametrize("frame", ["physical", "perturbation"])
def test_matches_scalar_oracle(J, frame, rng):
    k, rho_star = 0.3, 1.0
    d = DisturbanceSignal.sinusoid(0.2, 3.0)
    values = rng.uniform(0, 3, J + 1)
    if frame == "perturbation":
        values = values - rho_star
    g = Grid(J)
    traj = simulate(DensityState(values, 0.0, frame), g, M, FeedbackConfig(k, rho_star),
                    SolverConfig(0.7, 100.0, 1, frame), d)
    ref = brute_force_run(values, k, rho_star, 1.0, 1.0, 0.7, 5, d, frame=frame)
    for n, (t, vals) in enumerate(ref):
        assert abs(traj.times[n] - t) <= 1e-14
        assert np.max(np.abs(traj.states[n].values - vals)) <= 1e-14


def test_perturbation_frame_rejects_negative_total():
    g = Grid(10)
    init = DensityState(np.full(11, -2.0), 0.0, "perturbation")
    with pytest.raises(DomainError):
        simulate(init, g, M, FeedbackConfig(0.3, 1.0), SolverConfig(0.5, 1.0, frame="perturbation"))


def test_frame_mismatch_rejected():
    g = Grid(10)
    with pytest.raises(FrameError):
        simulate(DensityState(np.ones(11)), g, M, FeedbackConfig(0.3), SolverConfig(0.5, 1.0, frame="perturbation"))


def test_feedback_initial_boundary():
    g = Grid(20)
    cfg = FeedbackConfig(0.3, 1.0)
    init = sample_initial(InitialCondition(2, 2), g)
    traj = simulate(init, g, M, cfg, SolverConfig(0.5, 0.1, initial_boundary="feedback"))
    expected = boundary_close_physical(init.values[-1], traj.mass[0], traj.velocity[0], cfg, M, 0.0)
    assert traj.boundary[0] == expected and traj.initial_boundary_closed
    with pytest.raises(ConfigurationError):
        SolverConfig(0.5, 1.0, initial_boundary="zero")


def test_negative_boundary_not_clipped():
    g = Grid(10)
    cfg = FeedbackConfig(0.5, 0.0)
    d = DisturbanceSignal.sinusoid(1.0, 1.0, -math.pi / 2)  # d(t) ~ -1 early on
    traj = simulate(DensityState(np.zeros(11)), g, M, cfg, SolverConfig(0.5, 0.2), d)
    assert traj.boundary[1:].min() < 0


def test_csv_exports(tmp_path):
    g = Grid(10)
    traj = simulate(sample_initial(InitialCondition(1, 1), g), g, M, FeedbackConfig(0.3),
                    SolverConfig(0.5, 0.5, 20), DisturbanceSignal.sinusoid(2.4e-3))
    p = write_trajectory_csv(traj, tmp_path / "traj.csv")
    assert p.read_text().splitlines()[0] == "t,dt,W,lambda,d,l2_deviation,lyapunov"
    back = read_trajectory_csv(p)
    assert np.array_equal(back["t"], traj.times)
    assert np.array_equal(back["dt"][:-1], traj.step_sizes) and math.isnan(back["dt"][-1])
    assert np.array_equal(back["l2_deviation"], traj.l2_norm)
    paths = write_state_snapshots(traj, tmp_path / "states")
    assert [q.name for q in paths] == [f"state_{i}.csv" for i in range(len(traj.states))]
    rows = paths[-1].read_text().splitlines()
    assert rows[0] == "x,rho" and len(rows) == 12
