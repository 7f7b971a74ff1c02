"""Simulation and ISS-Lyapunov certification for a conservation law with nonlocal velocity
under boundary feedback with measurement error."""

from .errors import (
    CertificateInfeasible,
    ConfigurationError,
    DomainError,
    FrameError,
    NonlocalISSError,
    ReportError,
    ShapeError,
    StabilityError,
)
from .model import (
    DensityState,
    DisturbanceSignal,
    FeedbackConfig,
    Frame,
    Grid,
    InitialCondition,
    VelocityModel,
    equilibrium_influx,
    l2_norm,
    sample_initial,
    theta,
    total_mass,
    velocity_eval,
)
from .solver import SolverConfig, Trajectory, simulate
from .lyapunov import LyapunovCertificate, certify, check_iss_bound, check_step_dissipation

__version__ = "0.1.0"
