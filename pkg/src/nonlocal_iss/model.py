"""
Model ingredients for the closed-loop nonlocal transport problem.

The density rho(t, x) on the production interval [0, 1] is transported with
speed lambda(W), where W is the total mass. The grid is cell centred with
an extra boundary node at index 0 that holds the inflow value.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError, DomainError, ShapeError

# Reject s <= -B + VELOCITY_GUARD rather than s <= -B.
VELOCITY_GUARD = 1e-12


class Frame(str, Enum):
    PHYSICAL = "physical"
    PERTURBATION = "perturbation"


@dataclass(frozen=True)
class VelocityModel:
    """Hyperbolic velocity family lambda(s) = A / (B + s)."""

    A: float = 1.0
    B: float = 1.0

    def __post_init__(self):
        if not (self.A > 0 and self.B > 0):
            raise ConfigurationError(f"velocity needs A > 0 and B > 0, got A={self.A}, B={self.B}")

    def __call__(self, s: float) -> float:
        return velocity_eval(self, s)


def velocity_eval(model: VelocityModel, s: float) -> float:
    if not s > -model.B + VELOCITY_GUARD:
        raise DomainError(f"velocity undefined at s={s!r} (need s > -B = {-model.B})")
    return model.A / (model.B + s)


@dataclass(frozen=True)
class Grid:
    """Uniform cell-centred grid on [0, 1] with J cells."""

    J: int

    def __post_init__(self):
        if int(self.J) != self.J or self.J < 1:
            raise ConfigurationError(f"J must be a positive integer, got {self.J!r}")

    @property
    def dx(self) -> float:
        return 1.0 / self.J

    @property
    def centers(self) -> np.ndarray:
        return (np.arange(1, self.J + 1) - 0.5) * self.dx

    @property
    def nodes(self) -> np.ndarray:
        """Boundary node x_0 = 0 followed by the cell centres."""
        return np.concatenate(([0.0], self.centers))


@dataclass(frozen=True)
class DisturbanceSignal:
    """Measurement error d(t).

    ``kind`` is ``"zero"``, ``"sinusoid"`` (amplitude * sin(omega t + phase))
    or ``"sampled"`` (piecewise linear through ``times``/``values``, held
    constant outside the table).
    """

    kind: str = "zero"
    amplitude: float = 0.0
    angular_frequency: float = 1.0
    phase: float = 0.0
    times: tuple = ()
    values: tuple = ()

    def __post_init__(self):
        if self.kind not in ("zero", "sinusoid", "sampled"):
            raise ConfigurationError(f"unknown disturbance kind {self.kind!r}")
        if self.kind == "sampled":
            if len(self.times) == 0 or len(self.times) != len(self.values):
                raise ConfigurationError("sampled disturbance needs equal-length, non-empty tables")
            if np.any(np.diff(self.times) <= 0):
                raise ConfigurationError("sampled disturbance times must be strictly increasing")

    @classmethod
    def zero(cls) -> DisturbanceSignal:
        return cls()

    @classmethod
    def sinusoid(cls, amplitude: float, angular_frequency: float = 1.0, phase: float = 0.0) -> DisturbanceSignal:
        return cls("sinusoid", amplitude=amplitude, angular_frequency=angular_frequency, phase=phase)

    @classmethod
    def sampled(cls, times: Sequence[float], values: Sequence[float]) -> DisturbanceSignal:
        return cls("sampled", times=tuple(map(float, times)), values=tuple(map(float, values)))

    @classmethod
    def from_csv(cls, path) -> DisturbanceSignal:
        t, v = _read_two_columns(path, ("t", "d"))
        return cls.sampled(t, v)

    def __call__(self, t: float) -> float:
        if self.kind == "zero":
            return 0.0
        if self.kind == "sinusoid":
            return self.amplitude * math.sin(self.angular_frequency * t + self.phase)
        return float(np.interp(t, self.times, self.values))

    @property
    def is_zero(self) -> bool:
        return self.kind == "zero" or (self.kind == "sinusoid" and self.amplitude == 0.0)

    def spec(self) -> str:
        """Inverse of :func:`parse_disturbance` for the closed-form kinds."""
        if self.kind == "zero":
            return "zero"
        if self.kind == "sinusoid":
            s = f"sin:{self.amplitude!r}:{self.angular_frequency!r}"
            return s + (f":{self.phase!r}" if self.phase else "")
        return "sampled"


def parse_disturbance(text: str) -> DisturbanceSignal:
    """Parse ``zero``, ``sin:<amp>[:<omega>[:<phase>]]`` or ``file:<path>``."""
    if text == "zero":
        return DisturbanceSignal.zero()
    head, _, rest = text.partition(":")
    if head == "sin":
        parts = [float(p) for p in rest.split(":") if p]
        if not 1 <= len(parts) <= 3:
            raise ConfigurationError(f"bad sinusoid spec {text!r}")
        return DisturbanceSignal.sinusoid(*parts)
    if head == "file":
        return DisturbanceSignal.from_csv(rest)
    raise ConfigurationError(f"unrecognised disturbance spec {text!r}")


@dataclass(frozen=True)
class FeedbackConfig:
    k: float
    rho_star: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.k < 1.0:
            raise ConfigurationError(f"feedback gain must satisfy 0 <= k < 1, got {self.k}")
        if not self.rho_star >= 0.0:
            raise ConfigurationError(f"equilibrium must be nonnegative, got {self.rho_star}")


def theta(config: FeedbackConfig, model: VelocityModel) -> float:
    """rho* / (B + rho*), the weight of W in the perturbation-frame boundary law."""
    return config.rho_star / (model.B + config.rho_star)


def equilibrium_influx(config: FeedbackConfig, model: VelocityModel) -> float:
    return config.rho_star * velocity_eval(model, config.rho_star)


@dataclass(frozen=True)
class DensityState:
    """Values (rho_0, ..., rho_J) at time t; index 0 is the inflow boundary."""

    values: np.ndarray
    t: float = 0.0
    frame: Frame = Frame.PHYSICAL

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 1 or v.size < 2:
            raise ShapeError(f"state needs a 1-d array of length J+1 >= 2, got shape {v.shape}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "frame", Frame(self.frame))

    @property
    def J(self) -> int:
        return self.values.size - 1

    def is_nonnegative(self) -> bool:
        return bool(np.all(self.values >= 0.0))

    def with_values(self, values, t: float | None = None) -> DensityState:
        return replace(self, values=values, t=self.t if t is None else t)


def _check_shape(state: DensityState, grid: Grid):
    if state.J != grid.J:
        raise ShapeError(f"state has J={state.J} cells, grid has J={grid.J}")


def total_mass(state: DensityState, grid: Grid) -> float:
    """Midpoint quadrature dx * sum_{j>=1} rho_j; the boundary node is excluded."""
    _check_shape(state, grid)
    return grid.dx * float(np.sum(state.values[1:]))


def l2_norm(state: DensityState, grid: Grid, shift: float = 0.0) -> float:
    """Discrete L^2 norm of (rho_j - shift) over the cells j = 1..J."""
    _check_shape(state, grid)
    dev = state.values[1:] - shift
    return math.sqrt(grid.dx * float(np.dot(dev, dev)))


# ---------------------------------------------------------------------------
# Initial data
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class InitialCondition:
    """rho_0(x) as ``offset + amplitude*sin(2 pi wavenumber x)`` or a sampled table.

    A constant profile is a sinusoid with zero amplitude. Sampled tables are
    linearly interpolated.
    """

    offset: float = 0.0
    amplitude: float = 0.0
    wavenumber: float = 1.0
    xs: tuple = field(default=(), repr=False)
    rhos: tuple = field(default=(), repr=False)

    @property
    def sampled(self) -> bool:
        return len(self.xs) > 0

    @classmethod
    def from_csv(cls, path) -> InitialCondition:
        xs, rhos = _read_two_columns(path, ("x", "rho"))
        if np.any(np.diff(xs) <= 0):
            raise ConfigurationError(f"{path}: x column must be strictly increasing")
        return cls(xs=tuple(xs), rhos=tuple(rhos))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.sampled:
            return np.interp(x, self.xs, self.rhos)
        return self.offset + self.amplitude * np.sin(2.0 * np.pi * self.wavenumber * x)

    def spec(self) -> str:
        if self.sampled:
            return "sampled"
        if self.amplitude == 0.0:
            return f"const:{self.offset!r}"
        return f"sin:{self.offset!r}:{self.amplitude!r}:{self.wavenumber!r}"


def parse_initial(text: str) -> InitialCondition:
    """Parse ``const:<c>``, ``sin:<offset>:<amp>[:<wavenumber>]`` or ``file:<path>``."""
    head, _, rest = text.partition(":")
    try:
        if head == "const":
            return InitialCondition(offset=float(rest))
        if head == "sin":
            parts = [float(p) for p in rest.split(":")]
            if len(parts) not in (2, 3):
                raise ValueError
            return InitialCondition(*parts)
    except ValueError:
        raise ConfigurationError(f"bad initial-condition spec {text!r}") from None
    if head == "file":
        return InitialCondition.from_csv(rest)
    raise ConfigurationError(f"unrecognised initial-condition spec {text!r}")


def sample_initial(rho0: Callable, grid: Grid, frame: Frame = Frame.PHYSICAL,
                   rho_star: float = 0.0) -> DensityState:
    """Point values rho0(x_j) at the centres and rho0(0) at the boundary node."""
    values = np.asarray(rho0(grid.nodes), dtype=float)
    if values.shape != (grid.J + 1,):
        raise ShapeError("initial-condition callable must be vectorised over x")
    if Frame(frame) is Frame.PERTURBATION:
        values = values - rho_star
    return DensityState(values, 0.0, frame)


def _read_two_columns(path, names):
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or not set(names) <= set(reader.fieldnames):
                raise ConfigurationError(f"{path}: expected columns {','.join(names)}")
            rows = [(float(r[names[0]]), float(r[names[1]])) for r in reader]
    except OSError as exc:
        raise ConfigurationError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise ConfigurationError(f"{path}: no data rows")
    a, b = zip(*rows)
    return np.array(a), np.array(b)
