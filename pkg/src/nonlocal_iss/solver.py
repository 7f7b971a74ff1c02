"""
Explicit upwind time stepping of the closed-loop system.

One step advances the interior cells with

    rho_j^{n+1} = (1 - r^n) rho_j^n + r^n rho_{j-1}^n,   r^n = lambda^n dt^n / dx,

then recomputes W^{n+1}, lambda^{n+1} and closes the inflow node with the
feedback law evaluated at level n+1. The step size is recomputed every step
from the current velocity so that r^n equals the requested CFL number, and
the last step is clipped to land on t_final.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .errors import ConfigurationError, DomainError, FrameError, ReportError, StabilityError
from .model import (
    DensityState,
    DisturbanceSignal,
    FeedbackConfig,
    Frame,
    Grid,
    VelocityModel,
    theta,
    total_mass,
    velocity_eval,
)

INITIAL_BOUNDARY_MODES = ("sample", "feedback")


@dataclass(frozen=True)
class SolverConfig:
    """Time-stepping parameters.

    ``initial_boundary="sample"`` keeps rho_0^0 from the initial data;
    ``"feedback"`` overwrites it with the feedback law applied to the
    initial cells, so that the closed-loop relation holds from level 0 on.
    """

    cfl_number: float = 0.75
    t_final: float = 10.0
    record_stride: int = 100
    frame: Frame = Frame.PHYSICAL
    initial_boundary: str = "sample"

    def __post_init__(self):
        if not 0.0 < self.cfl_number <= 1.0:
            raise ConfigurationError(f"CFL number must lie in (0, 1], got {self.cfl_number}")
        if not self.t_final > 0.0:
            raise ConfigurationError(f"t_final must be positive, got {self.t_final}")
        if int(self.record_stride) != self.record_stride or self.record_stride < 1:
            raise ConfigurationError(f"record_stride must be a positive integer, got {self.record_stride}")
        if self.initial_boundary not in INITIAL_BOUNDARY_MODES:
            raise ConfigurationError(f"initial_boundary must be one of {INITIAL_BOUNDARY_MODES}")
        object.__setattr__(self, "frame", Frame(self.frame))


@dataclass
class Trajectory:
    """Per-step history of a run.

    Scalar series are indexed by time level n = 0..N (``step_sizes`` by step
    n = 0..N-1). ``disturbance[n]`` is d(t^n), the value carried by the
    boundary node rho_0^n; ``l2_norm`` is always the deviation from the
    equilibrium, whichever frame the run used.
    """

    grid: Grid
    frame: Frame
    rho_star: float
    times: np.ndarray
    step_sizes: np.ndarray
    mass: np.ndarray
    velocity: np.ndarray
    disturbance: np.ndarray
    l2_norm: np.ndarray
    boundary: np.ndarray
    outlet: np.ndarray
    snapshot_steps: list = field(default_factory=list)
    states: list = field(default_factory=list)
    lyapunov: Optional[np.ndarray] = None
    initial_boundary_closed: bool = False

    @property
    def n_steps(self) -> int:
        return len(self.step_sizes)

    @property
    def sigma2(self) -> float:
        """Smallest velocity along the run."""
        return float(np.min(self.velocity))

    @property
    def delta2(self) -> float:
        return float(np.max(self.velocity))

    @property
    def final_state(self) -> DensityState:
        return self.states[-1]

    @property
    def cfl_ratios(self) -> np.ndarray:
        return self.velocity[:-1] * self.step_sizes / self.grid.dx


def cfl_step_size(grid: Grid, lambda_n: float, cfl_number: float, t_now: float, t_final: float) -> float:
    if not lambda_n > 0.0:
        raise DomainError(f"velocity must be positive, got {lambda_n}")
    if not 0.0 < cfl_number <= 1.0:
        raise StabilityError(f"CFL number must lie in (0, 1], got {cfl_number}")
    if not t_now < t_final:
        raise ConfigurationError(f"no time left to step: t_now={t_now} >= t_final={t_final}")
    return min(cfl_number * grid.dx / lambda_n, t_final - t_now)


def _advance(values: np.ndarray, r: float) -> np.ndarray:
    new = np.empty_like(values)
    new[0] = values[0]
    np.multiply(values[1:], 1.0 - r, out=new[1:])
    new[1:] += r * values[:-1]
    return new


def upwind_interior_step(state: DensityState, r_n: float) -> DensityState:
    """Advance cells 1..J; the boundary entry is copied and left for the closure."""
    if not 0.0 < r_n <= 1.0:
        raise StabilityError(f"CFL ratio r={r_n} outside (0, 1]")
    return state.with_values(_advance(state.values, r_n))


def boundary_close_physical(rho_J_next: float, W_next: float, lambda_next: float,
                            config: FeedbackConfig, model: VelocityModel, d_next: float) -> float:
    # W_next only enters through lambda_next here; kept for symmetry with the perturbation closure.
    if not lambda_next > 0.0:
        raise DomainError(f"velocity must be positive, got {lambda_next}")
    influx = config.rho_star * velocity_eval(model, config.rho_star)
    k = config.k
    return k * rho_J_next + (1.0 - k) * influx / lambda_next + k * d_next


def boundary_close_perturbation(rho_J_next: float, W_next: float, config: FeedbackConfig,
                                model: VelocityModel, d_next: float) -> float:
    k = config.k
    return k * rho_J_next + (1.0 - k) * theta(config, model) * W_next + k * d_next


def to_perturbation(state: DensityState, config: FeedbackConfig) -> DensityState:
    if state.frame is not Frame.PHYSICAL:
        raise FrameError("to_perturbation expects a physical-frame state")
    return DensityState(state.values - config.rho_star, state.t, Frame.PERTURBATION)


def from_perturbation(state: DensityState, config: FeedbackConfig) -> DensityState:
    if state.frame is not Frame.PERTURBATION:
        raise FrameError("from_perturbation expects a perturbation-frame state")
    return DensityState(state.values + config.rho_star, state.t, Frame.PHYSICAL)


def simulate(init: DensityState, grid: Grid, model: VelocityModel, config: FeedbackConfig,
             solver_cfg: SolverConfig, disturbance: DisturbanceSignal | None = None,
             lyapunov: Callable[[np.ndarray], float] | None = None) -> Trajectory:
    """Run the closed loop from ``init`` up to ``solver_cfg.t_final``.

    Parameters
    ----------
    init
        Initial state; its frame must match ``solver_cfg.frame``.
    lyapunov
        Optional functional of the perturbation-frame values (length J+1),
        evaluated and stored at every time level.
    """
    if init.frame is not solver_cfg.frame:
        raise FrameError(f"initial state is in the {init.frame.value} frame, solver expects {solver_cfg.frame.value}")
    if disturbance is None:
        disturbance = DisturbanceSignal.zero()
    total_mass(init, grid)  # shape check

    perturbation = solver_cfg.frame is Frame.PERTURBATION
    rho_star = config.rho_star
    # velocity argument is (offset + W); l2 deviation is taken about `shift`
    offset, shift = (rho_star, 0.0) if perturbation else (0.0, rho_star)
    dx, J = grid.dx, grid.J
    cfl, t_final = solver_cfg.cfl_number, solver_cfg.t_final

    def close(rho_J, W, lam, d):
        if perturbation:
            return boundary_close_perturbation(rho_J, W, config, model, d)
        return boundary_close_physical(rho_J, W, lam, config, model, d)

    rho = np.array(init.values, dtype=float)
    t = float(init.t)
    if not t < t_final:
        raise ConfigurationError(f"initial time {t} is not before t_final={t_final}")
    W = dx * float(np.sum(rho[1:]))
    if perturbation and W < -rho_star:
        raise DomainError(f"perturbation mass W={W} is below -rho*={-rho_star}")
    lam = velocity_eval(model, offset + W)
    d = disturbance(t)
    if solver_cfg.initial_boundary == "feedback":
        rho[0] = close(rho[J], W, lam, d)

    times, dts, masses, lams, ds, norms, inflow, outflow = [t], [], [W], [lam], [d], [], [rho[0]], [rho[J]]
    lyap = [] if lyapunov is not None else None

    def observe(values):
        dev = values[1:] - shift
        norms.append(math.sqrt(dx * float(np.dot(dev, dev))))
        if lyap is not None:
            lyap.append(float(lyapunov(values if perturbation else values - rho_star)))

    observe(rho)
    snapshot_steps = [0]
    states = [DensityState(rho.copy(), t, solver_cfg.frame)]

    n = 0
    while t < t_final:
        dt = cfl_step_size(grid, lam, cfl, t, t_final)
        if dt == t_final - t:
            r = lam * dt / dx
            t_next = t_final
        else:
            r = cfl
            t_next = t + dt
        if not 0.0 < r <= 1.0:
            raise StabilityError(f"CFL ratio r={r} outside (0, 1] at step {n}")
        rho = _advance(rho, r)
        W = dx * float(np.sum(rho[1:]))
        lam = velocity_eval(model, offset + W)
        d = disturbance(t_next)
        rho[0] = close(rho[J], W, lam, d)
        t = t_next
        n += 1

        times.append(t)
        dts.append(dt)
        masses.append(W)
        lams.append(lam)
        ds.append(d)
        inflow.append(rho[0])
        outflow.append(rho[J])
        observe(rho)
        if n % solver_cfg.record_stride == 0 or t >= t_final:
            snapshot_steps.append(n)
            states.append(DensityState(rho.copy(), t, solver_cfg.frame))

    return Trajectory(
        grid=grid,
        frame=solver_cfg.frame,
        rho_star=rho_star,
        times=np.array(times),
        step_sizes=np.array(dts),
        mass=np.array(masses),
        velocity=np.array(lams),
        disturbance=np.array(ds),
        l2_norm=np.array(norms),
        boundary=np.array(inflow),
        outlet=np.array(outflow),
        snapshot_steps=snapshot_steps,
        states=states,
        lyapunov=None if lyap is None else np.array(lyap),
        initial_boundary_closed=solver_cfg.initial_boundary == "feedback",
    )


# ---------------------------------------------------------------------------
# CSV export
# ---------------------------------------------------------------------------

TRAJECTORY_COLUMNS = ("t", "dt", "W", "lambda", "d", "l2_deviation", "lyapunov")


def write_trajectory_csv(traj: Trajectory, path) -> Path:
    """One row per time level; ``dt`` is blank on the last row, ``lyapunov`` when not recorded."""
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TRAJECTORY_COLUMNS)
            for n in range(len(traj.times)):
                w.writerow([
                    repr(float(traj.times[n])),
                    repr(float(traj.step_sizes[n])) if n < traj.n_steps else "",
                    repr(float(traj.mass[n])),
                    repr(float(traj.velocity[n])),
                    repr(float(traj.disturbance[n])),
                    repr(float(traj.l2_norm[n])),
                    repr(float(traj.lyapunov[n])) if traj.lyapunov is not None else "",
                ])
    except OSError as exc:
        raise ReportError(f"cannot write trajectory to {path}: {exc}") from exc
    return path


def read_trajectory_csv(path) -> dict:
    """Read a trajectory CSV back into a dict of float arrays (blank cells become NaN)."""
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    return {c: np.array([float(r[c]) if r[c] else math.nan for r in rows]) for c in TRAJECTORY_COLUMNS}


def write_state_snapshots(traj: Trajectory, directory) -> list:
    """Write ``state_<index>.csv`` (columns x, rho) for each recorded snapshot.

    The boundary node is written at x = 0; values stay in the run's frame.
    """
    directory = Path(directory)
    x = traj.grid.nodes
    paths = []
    try:
        directory.mkdir(parents=True, exist_ok=True)
        for index, state in enumerate(traj.states):
            p = directory / f"state_{index}.csv"
            with p.open("w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(("x", "rho"))
                w.writerows((repr(float(a)), repr(float(b))) for a, b in zip(x, state.values))
            paths.append(p)
    except OSError as exc:
        raise ReportError(f"cannot write snapshots under {directory}: {exc}") from exc
    return paths
