"""
Numerical studies: grid convergence with decay-rate columns, and decay of
the deviation norm for several feedback gains.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigurationError, ReportError
from .lyapunov import certify, decay_rates
from .model import (
    DisturbanceSignal,
    FeedbackConfig,
    Grid,
    InitialCondition,
    VelocityModel,
    sample_initial,
)
from .solver import SolverConfig, Trajectory, simulate

REFERENCE_DISTURBANCE = DisturbanceSignal.sinusoid(2.4e-3, 1.0)
DEFAULT_K_LIST = (0.1, 0.3, 0.5, 0.7)
TABLE_J_LIST = (100, 200, 400, 800, 1600)
TABLE_CFLS = (0.5, 0.9)
FIGURE_CFL = 0.75
FIGURE_J = 1000
ERROR_DEFINITION = ("discrete L2 norm at t_final of (coarse solution - cell average of a reference run "
                    "on J_ref = reference_factor * max(J) cells, same CFL number)")


@dataclass(frozen=True)
class ExperimentPreset:
    name: str
    rho_star: float
    initial: InitialCondition
    k: float = 0.3
    velocity: VelocityModel = VelocityModel(1.0, 1.0)
    disturbance: DisturbanceSignal = REFERENCE_DISTURBANCE
    t_final: float = 10.0
    # long enough for every gain in the decay study to reach its plateau
    decay_t_final: float = 20.0

    def feedback(self, k: float | None = None) -> FeedbackConfig:
        return FeedbackConfig(self.k if k is None else k, self.rho_star)

    def describe(self) -> dict:
        return {
            "name": self.name,
            "rho_star": self.rho_star,
            "initial": self.initial.spec(),
            "k": self.k,
            "A": self.velocity.A,
            "B": self.velocity.B,
            "disturbance": self.disturbance.spec(),
            "t_final": self.t_final,
            "decay_t_final": self.decay_t_final,
        }


PRESETS = {
    "example1": ExperimentPreset("example1", 0.0, InitialCondition(1.0, 1.0), t_final=10.0, decay_t_final=20.0),
    "example2": ExperimentPreset("example2", 1.0, InitialCondition(2.0, 2.0), t_final=20.0, decay_t_final=40.0),
}


def get_preset(name: str) -> ExperimentPreset:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigurationError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


def run_preset(preset: ExperimentPreset, J: int, cfl: float, k: float | None = None,
               t_final: float | None = None, record_stride: int = 10 ** 9,
               disturbance: DisturbanceSignal | None = None) -> Trajectory:
    grid = Grid(J)
    cfg = preset.feedback(k)
    solver_cfg = SolverConfig(cfl, preset.t_final if t_final is None else t_final, record_stride)
    return simulate(sample_initial(preset.initial, grid), grid, preset.velocity, cfg, solver_cfg,
                    preset.disturbance if disturbance is None else disturbance)


def _map(fn, args: list, jobs: int) -> list:
    if jobs <= 1 or len(args) <= 1:
        return [fn(*a) for a in args]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, *zip(*args)))


# ---------------------------------------------------------------------------
# Convergence tables
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConvergenceRow:
    J: int
    l2_error: float
    order: float | None
    gamma1: float
    # diagnostics; not part of the CSV contract
    sigma2: float = field(default=math.nan, compare=False)
    n_steps: int = field(default=0, compare=False)


def restrict(fine: np.ndarray, J: int) -> np.ndarray:
    """Average consecutive blocks of fine cells onto a J-cell grid."""
    fine = np.asarray(fine, dtype=float)
    if fine.size % J:
        raise ConfigurationError(f"{fine.size} fine cells do not split evenly into {J}")
    return fine.reshape(J, -1).mean(axis=1)


def _final_run(preset, J, cfl, beta_mode):
    traj = run_preset(preset, J, cfl)
    cert = certify(preset.feedback(), preset.velocity, traj.grid, beta_mode)
    _, gamma1 = decay_rates(cert, traj.sigma2)
    return traj.final_state.values[1:], traj.sigma2, traj.n_steps, gamma1


def convergence_study(preset: ExperimentPreset, J_list: Sequence[int] = TABLE_J_LIST, cfl: float = 0.5,
                      reference_factor: int = 2, beta_mode: str = "experiment",
                      jobs: int = 1) -> list[ConvergenceRow]:
    """Errors against a fine reference run plus the reported decay rate for each J."""
    J_list = [int(J) for J in J_list]
    if not J_list:
        return []
    if reference_factor < 2:
        raise ConfigurationError("reference_factor must be at least 2")
    J_ref = reference_factor * max(J_list)
    bad = [J for J in J_list if J_ref % J]
    if bad:
        raise ConfigurationError(f"J_ref={J_ref} is not a multiple of {bad}")

    args = [(preset, J, cfl, beta_mode) for J in [J_ref] + J_list]
    (ref, *_), *runs = _map(_final_run, args, jobs)
    rows, prev = [], None
    for J, (u, sigma2, n_steps, gamma1) in zip(J_list, runs):
        err = math.sqrt(float(np.sum((u - restrict(ref, J)) ** 2)) / J)
        order = None
        if prev is not None and err > 0.0 and prev[1] > 0.0:
            order = math.log(prev[1] / err) / math.log(J / prev[0])
        rows.append(ConvergenceRow(J, err, order, gamma1, sigma2, n_steps))
        prev = (J, err)
    return rows


# ---------------------------------------------------------------------------
# Decay series
# ---------------------------------------------------------------------------

@dataclass
class DecaySeries:
    """log10 of the deviation norm over time for one gain, with a late-time fit.

    ``plateau`` is the median norm over the last 10% of samples; the slope
    (log10 units per unit time) is a least-squares fit over the samples whose
    norm exceeds 10 * plateau.
    """

    k: float
    times: np.ndarray
    log10_norm: np.ndarray
    plateau: float = math.nan
    slope: float = math.nan
    window_end: float = math.nan

    @property
    def rate(self) -> float:
        """Decay-rate magnitude in natural-log units."""
        return -self.slope * math.log(10.0)


def fit_decay(times: np.ndarray, norms: np.ndarray) -> tuple[float, float, float]:
    """Return (plateau, slope, window_end) for a norm series."""
    norms = np.asarray(norms, dtype=float)
    times = np.asarray(times, dtype=float)
    tail = norms[int(0.9 * norms.size):]
    plateau = float(np.median(tail))
    window = norms > 10.0 * plateau
    if np.count_nonzero(window) < 2:
        return plateau, math.nan, math.nan
    slope = float(np.polyfit(times[window], np.log10(norms[window]), 1)[0])
    return plateau, slope, float(times[window].max())


def _decay_run(preset, k, cfl, J, t_final):
    traj = run_preset(preset, J, cfl, k=k, t_final=t_final)
    with np.errstate(divide="ignore"):
        logs = np.log10(traj.l2_norm)
    return traj.times, logs, fit_decay(traj.times, traj.l2_norm)


def decay_series(preset: ExperimentPreset, k_list: Iterable[float] = DEFAULT_K_LIST, cfl: float = FIGURE_CFL,
                 J: int = FIGURE_J, t_final: float | None = None, jobs: int = 1) -> list[DecaySeries]:
    k_list = [float(k) for k in k_list]
    for k in k_list:
        if not 0.0 <= k < 1.0:
            raise ConfigurationError(f"feedback gain must satisfy 0 <= k < 1, got {k}")
    horizon = preset.decay_t_final if t_final is None else t_final
    results = _map(_decay_run, [(preset, k, cfl, J, horizon) for k in k_list], jobs)
    return [DecaySeries(k, t, logs, *fit) for k, (t, logs, fit) in zip(k_list, results)]


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

CONVERGENCE_COLUMNS = ("J", "l2_error", "order", "gamma1")
SERIES_COLUMNS = ("t", "log10_norm", "k")


def _open_for_write(path: Path):
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        return path.open("w", newline="")
    except OSError as exc:
        raise ReportError(f"cannot write {path}: {exc}") from exc


def write_convergence_csv(rows: Sequence[ConvergenceRow], path) -> Path:
    path = Path(path)
    with _open_for_write(path) as fh:
        w = csv.writer(fh)
        w.writerow(CONVERGENCE_COLUMNS)
        for r in rows:
            w.writerow([r.J, repr(r.l2_error), "" if r.order is None else repr(r.order), repr(r.gamma1)])
    return path


def read_convergence_csv(path) -> list[ConvergenceRow]:
    with Path(path).open(newline="") as fh:
        return [ConvergenceRow(int(r["J"]), float(r["l2_error"]),
                               float(r["order"]) if r["order"] else None, float(r["gamma1"]))
                for r in csv.DictReader(fh)]


def format_convergence_table(rows: Sequence[ConvergenceRow], title: str = "") -> str:
    lines = [title] if title else []
    lines.append(f"{'J':>6}  {'L2-error':>12}  {'order':>8}  {'gamma1':>8}")
    lines.append("-" * len(lines[-1]))
    for r in rows:
        order = "--" if r.order is None else f"{r.order:.4f}"
        lines.append(f"{r.J:>6}  {r.l2_error:>12.4e}  {order:>8}  {r.gamma1:>8.4f}")
    return "\n".join(lines) + "\n"


def write_series_csv(series: Sequence[DecaySeries], path) -> Path:
    path = Path(path)
    with _open_for_write(path) as fh:
        w = csv.writer(fh)
        w.writerow(SERIES_COLUMNS)
        for s in series:
            for t, y in zip(s.times, s.log10_norm):
                w.writerow([repr(float(t)), repr(float(y)), repr(s.k)])
    return path


def read_series_csv(path) -> list[DecaySeries]:
    """Group rows back into one series per k (fit fields are not stored)."""
    groups: dict[float, list] = {}
    with Path(path).open(newline="") as fh:
        for r in csv.DictReader(fh):
            groups.setdefault(float(r["k"]), []).append((float(r["t"]), float(r["log10_norm"])))
    out = []
    for k, pts in groups.items():
        t, y = zip(*pts)
        out.append(DecaySeries(k, np.array(t), np.array(y)))
    return out


def format_decay_table(series: Sequence[DecaySeries], title: str = "") -> str:
    lines = [title] if title else []
    lines.append(f"{'k':>6}  {'rate':>10}  {'slope/log10':>12}  {'plateau':>10}  {'fit until t':>11}")
    lines.append("-" * len(lines[-1]))
    for s in series:
        lines.append(f"{s.k:>6.3f}  {s.rate:>10.4f}  {s.slope:>12.4f}  {s.plateau:>10.3e}  {s.window_end:>11.3f}")
    return "\n".join(lines) + "\n"


def write_text(text: str, path) -> Path:
    path = Path(path)
    with _open_for_write(path) as fh:
        fh.write(text)
    return path


def write_report(data, destination, title: str = "") -> list[Path]:
    """Write convergence rows or decay series as CSV plus an aligned text table.

    ``destination`` is the CSV path; the table goes next to it with a
    ``.txt`` suffix. An empty sequence is written as a convergence table.
    """
    destination = Path(destination)
    data = list(data)
    if data and isinstance(data[0], DecaySeries):
        csv_path = write_series_csv(data, destination)
        table = format_decay_table(data, title)
    else:
        csv_path = write_convergence_csv(data, destination)
        table = format_convergence_table(data, title)
    return [csv_path, write_text(table, destination.with_suffix(".txt"))]


def write_manifest(directory, payload: dict) -> Path:
    path = Path(directory) / "manifest.json"
    body = dict(payload)
    body.setdefault("l2_error_definition", ERROR_DEFINITION)
    with _open_for_write(path) as fh:
        json.dump(body, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")
    return path


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if hasattr(obj, "__dataclass_fields__"):
        return asdict(obj)
    raise TypeError(f"cannot serialise {type(obj).__name__}")
