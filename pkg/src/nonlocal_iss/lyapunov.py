"""
Discrete ISS-Lyapunov certificates for the closed-loop upwind scheme.

The functional is

    L^n = dx * sum_j (rho_j^n)^2 exp(-beta x_j) + a (W^n)^2

on perturbation-frame states. A certificate fixes (beta, a), the sandwich
constant C1 with W^2 <= C1 * (weighted sum), and the decay rates derived
from them. Checkers replay a recorded trajectory against the per-step
dissipation inequality and the resulting ISS estimate.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np

from .errors import CertificateInfeasible, ConfigurationError, FrameError, ReportError
from .model import DensityState, FeedbackConfig, Frame, Grid, VelocityModel, theta as theta_of
from .solver import Trajectory

BETA_MODES = ("experiment", "rigorous")
C1_RULES = ("cauchy_schwarz", "exp_beta")
BETA_MAX = 50.0
SEARCH_TOL = 1e-10
REL_TOL = 1e-9
ABS_TOL = 1e-12


def golden_section_max(f: Callable[[float], float], lo: float, hi: float, tol: float = SEARCH_TOL) -> float:
    """Maximiser of a unimodal ``f`` on the open interval (lo, hi)."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def _gap(k: float, beta: float) -> float:
    """2k - exp(-beta), snapped to zero at the limiting beta = -ln(2k)."""
    g = 2.0 * k - math.exp(-beta)
    return 0.0 if abs(g) <= 1e-15 * max(1.0, 2.0 * k) else g


def cauchy_schwarz_constant(beta: float, dx: float) -> float:
    """dx * sum_j exp(beta x_j), the smallest C1 with W^2 <= C1 * weighted sum."""
    return dx * math.exp(beta * dx / 2.0) * math.expm1(beta) / math.expm1(beta * dx)


def c1_constant(beta: float, dx: float, rule: str = "cauchy_schwarz") -> float:
    if rule == "cauchy_schwarz":
        return cauchy_schwarz_constant(beta, dx)
    if rule == "exp_beta":
        return math.exp(beta)
    raise ConfigurationError(f"unknown C1 rule {rule!r}; choose from {C1_RULES}")


def f_discrete(beta: float, k: float, theta: float, dx: float, mode: str = "experiment",
               c1: float | None = None) -> float:
    """Discrete decay-rate function f_dx(beta).

    ``mode="experiment"`` takes the bracket with unit prefactor (the form used
    for the reported rates); ``mode="proof"`` multiplies it by ``c1``, which
    defaults to the Cauchy-Schwarz constant for ``dx``.
    """
    if not k < 1.0:
        raise ConfigurationError(f"need k < 1, got {k}")
    g = _gap(k, beta)
    bracket = ((2.0 - math.exp(beta * dx)) * g
               + 2.0 * (1.0 - k) * math.exp(-beta * dx)
               + (g / (1.0 - k)) ** 2)
    if mode == "experiment":
        c = 1.0
    elif mode == "proof":
        c = cauchy_schwarz_constant(beta, dx) if c1 is None else c1
    else:
        raise ConfigurationError(f"unknown f_dx mode {mode!r}")
    return beta * math.exp(-beta * dx) - c * bracket * theta ** 2


def f_continuous_rate(beta: float, k: float, theta: float, c1: float) -> float:
    if not (beta > 0 and k < 1.0):
        raise ConfigurationError("need beta > 0 and k < 1")
    g = _gap(k, beta)
    growth = math.expm1(beta) / beta
    return (beta - theta ** 2 * growth * ((2.0 - math.exp(-beta)) + (g / (1.0 - k)) ** 2)) / c1


def select_beta(k: float, theta: float, dx: float, mode: str = "experiment",
                beta_max: float = BETA_MAX, tol: float = SEARCH_TOL) -> float:
    """Weight rate beta for the certificate.

    For 0 < k < 1/2, ``experiment`` returns the limiting value -ln(2k) and
    ``rigorous`` maximises the experiment-mode f_dx strictly inside
    (0, -ln(2k)). For k = 0 both modes maximise f_dx on (0, beta_max].
    """
    if mode not in BETA_MODES:
        raise ConfigurationError(f"unknown beta mode {mode!r}; choose from {BETA_MODES}")
    if not 0.0 <= k < 1.0:
        raise ConfigurationError(f"need 0 <= k < 1, got {k}")
    if k >= 0.5:
        raise CertificateInfeasible(f"certificate infeasible (k >= 1/2): exp(-beta) > 2k={2 * k} has no solution beta > 0")

    def objective(b):
        return f_discrete(b, k, theta, dx)

    if k == 0.0:
        return golden_section_max(objective, 0.0, beta_max, tol)
    limit = -math.log(2.0 * k)
    if mode == "experiment":
        return limit
    return golden_section_max(objective, 0.0, limit, tol)


class ACoefficient(NamedTuple):
    a: float
    nonpositive: bool
    continuous_bound: bool
    discrete_bound: bool

    @property
    def ok(self) -> bool:
        return self.nonpositive and self.continuous_bound and self.discrete_bound


def select_a(theta: float, k: float, beta: float, dx: float) -> ACoefficient:
    """a = theta (2k - e^-beta) / (1 - k) with its admissibility flags."""
    if not (k < 1.0 and beta > 0.0):
        raise ConfigurationError("need k < 1 and beta > 0")
    a = theta * _gap(k, beta) / (1.0 - k)
    if a == 0.0:
        a = 0.0  # drop the sign of -0.0
    return ACoefficient(
        a=a,
        nonpositive=a <= 0.0,
        continuous_bound=a > -beta / math.expm1(beta),
        discrete_bound=a > -1.0 / cauchy_schwarz_constant(beta, dx),
    )


@dataclass(frozen=True)
class LyapunovCertificate:
    """Parameters and rates of a discrete ISS-Lyapunov functional on a fixed grid.

    ``f_dx_experiment`` drives the reported rates (eta = sigma2 * f,
    gamma1 = eta / 2); ``f_dx_proof`` drives the rigorous dissipation and ISS
    checks. Rate fields depending on a trajectory stay ``None`` until
    :meth:`with_rates` is called.
    """

    beta: float
    a: float
    theta: float
    k: float
    dx: float
    c1: float
    weights: np.ndarray = field(repr=False)
    f_dx_experiment: float
    f_dx_proof: float
    f_continuous: float
    valid: bool
    reasons: tuple = ()
    mode: str = "experiment"
    c1_rule: str = "cauchy_schwarz"
    sigma2: float | None = None
    delta2: float | None = None
    eta: float | None = None
    gamma1: float | None = None
    gamma2: float | None = None
    gamma3: float | None = None
    nu: float | None = None

    @property
    def supports_iss_bound(self) -> bool:
        return self.valid and self.f_dx_proof > 0.0

    def functional(self, values: np.ndarray) -> float:
        """L for perturbation-frame values (rho_0, ..., rho_J); rho_0 is ignored."""
        cells = values[1:]
        W = self.dx * float(np.sum(cells))
        return self.dx * float(np.dot(cells * cells, self.weights)) + self.a * W * W

    def with_rates(self, sigma2: float, delta2: float | None = None) -> LyapunovCertificate:
        eta, gamma1 = decay_rates(self, sigma2)
        delta2 = sigma2 if delta2 is None else delta2
        nu = disturbance_gain(self, delta2)
        gamma2 = gamma3 = None
        if self.supports_iss_bound and 1.0 + min(self.a, 0.0) * self.c1 > 0.0:
            _, alpha1, alpha2 = _sandwich(self)
            gamma2 = math.sqrt(alpha2 / alpha1)
            gamma3 = _gamma3(self, sigma2, delta2, alpha1)
        return replace(self, sigma2=sigma2, delta2=delta2, eta=eta, gamma1=gamma1,
                       gamma2=gamma2, gamma3=gamma3, nu=nu)


def certify(config: FeedbackConfig, model: VelocityModel, grid: Grid, mode: str = "experiment",
            c1_rule: str = "cauchy_schwarz", beta: float | None = None) -> LyapunovCertificate:
    """Build a certificate for the given closed loop on ``grid``.

    ``beta`` overrides the automatic choice (used for negative controls);
    the validity flags are then evaluated for the supplied value.
    Raises :class:`CertificateInfeasible` when no beta exists (k >= 1/2).
    """
    th = theta_of(config, model)
    k, dx = config.k, grid.dx
    if beta is None:
        beta = select_beta(k, th, dx, mode)
    if not beta > 0.0:
        raise ConfigurationError(f"beta must be positive, got {beta}")
    choice = select_a(th, k, beta, dx)
    c1 = c1_constant(beta, dx, c1_rule)
    c1_cont = math.expm1(beta) / beta if c1_rule == "cauchy_schwarz" else math.exp(beta)
    f_exp = f_discrete(beta, k, th, dx, "experiment")
    f_proof = f_discrete(beta, k, th, dx, "proof", c1=c1)

    reasons = []
    if math.exp(-beta) < 2.0 * k * (1.0 - 1e-12):
        reasons.append("beta_condition")
    if not choice.nonpositive:
        reasons.append("a_positive")
    if not choice.continuous_bound:
        reasons.append("a_continuous_bound")
    if not choice.discrete_bound:
        reasons.append("a_discrete_bound")
    if not 1.0 + min(choice.a, 0.0) * c1 > 0.0:
        reasons.append("sandwich")
    if not f_exp > 0.0:
        reasons.append("rate_nonpositive")

    return LyapunovCertificate(
        beta=beta, a=choice.a, theta=th, k=k, dx=dx, c1=c1,
        weights=np.exp(-beta * grid.centers),
        f_dx_experiment=f_exp, f_dx_proof=f_proof,
        f_continuous=f_continuous_rate(beta, k, th, c1_cont),
        valid=not reasons, reasons=tuple(reasons), mode=mode, c1_rule=c1_rule,
    )


def lyapunov_value(state: DensityState, grid: Grid, cert: LyapunovCertificate) -> float:
    if state.frame is not Frame.PERTURBATION:
        raise FrameError("the Lyapunov functional is defined on perturbation-frame states")
    if state.J != grid.J or cert.weights.size != grid.J:
        raise ConfigurationError("state, grid and certificate disagree on J")
    if not cert.valid:
        raise CertificateInfeasible(f"certificate is not valid: {', '.join(cert.reasons)}")
    return cert.functional(state.values)


def decay_rates(cert: LyapunovCertificate, sigma2: float) -> tuple[float, float]:
    """(eta, gamma1) = (sigma2 * f_dx, sigma2 * f_dx / 2) with the experiment-mode f_dx."""
    if not sigma2 > 0.0:
        raise ReportError(f"sigma2 must be positive, got {sigma2}")
    eta = sigma2 * cert.f_dx_experiment
    return eta, 0.5 * eta


def disturbance_gain(cert: LyapunovCertificate, lam: float) -> float:
    """Coefficient of lambda*d^2 in the per-step inequality, times ``lam``."""
    return 0.5 * (1.0 + 2.0 * math.exp(-cert.beta * cert.dx)) * math.exp(-cert.beta) * lam


def _sandwich(cert):
    lower = 1.0 + min(cert.a, 0.0) * cert.c1
    if not lower > 0.0:
        raise CertificateInfeasible(f"1 + a*C1 = {lower} <= 0; L is not positive definite")
    return cert.c1, lower * math.exp(-cert.beta), 1.0 + max(cert.a, 0.0) * cert.c1


def sandwich_constants(cert: LyapunovCertificate, grid: Grid) -> tuple[float, float, float]:
    """(C1, alpha1, alpha2) with W^2 <= C1*S and alpha1 |rho|^2 <= L <= alpha2 |rho|^2.

    S is the weighted sum dx * sum rho_j^2 exp(-beta x_j).
    """
    if cert.weights.size != grid.J:
        raise ConfigurationError("certificate was built for a different grid")
    return _sandwich(cert)


def _gamma3(cert, sigma2, delta2, alpha1):
    gain = 0.5 * (1.0 + 2.0 * math.exp(-cert.beta * cert.dx))
    return math.sqrt(gain * cert.c1 * delta2 * math.exp(-cert.beta) / (sigma2 * cert.f_dx_proof * alpha1))


# ---------------------------------------------------------------------------
# Trajectory checks
# ---------------------------------------------------------------------------

@dataclass
class DissipationReport:
    """Per-step evaluation of

        (L^{n+1} - L^n)/dt <= -(f_proof/C1) lambda^n L^n + c_d lambda^n (d^n)^2.

    ``margins`` are rhs - lhs using d^n (the value held by rho_0^n during the
    step); ``margins_next_d`` use d^{n+1} (the value injected by the step's
    closure). Steps before ``first_step`` are skipped because the initial
    boundary value was not produced by the feedback law.
    """

    steps: np.ndarray
    passed: np.ndarray
    margins: np.ndarray
    margins_next_d: np.ndarray
    first_step: int
    eta_hat: float
    nu: float
    skipped: tuple = ()

    @property
    def all_passed(self) -> bool:
        return bool(np.all(self.passed))

    @property
    def n_failures(self) -> int:
        return int(np.size(self.passed) - np.count_nonzero(self.passed))

    @property
    def worst_index(self) -> int:
        return int(self.steps[np.argmin(self.margins)]) if self.margins.size else -1

    @property
    def worst_margin(self) -> float:
        return float(np.min(self.margins)) if self.margins.size else math.inf

    def summary(self) -> str:
        status = "PASS" if self.all_passed else f"FAIL ({self.n_failures} steps)"
        return (f"dissipation {status}: {self.passed.size} steps checked from n={self.first_step}, "
                f"worst margin {self.worst_margin:.3e} at n={self.worst_index}, "
                f"eta_hat={self.eta_hat:.6g}, nu={self.nu:.6g}")


def check_step_dissipation(trajectory: Trajectory, cert: LyapunovCertificate,
                           rel_tol: float = REL_TOL, abs_tol: float = ABS_TOL) -> DissipationReport:
    """Replay the per-step dissipation inequality along ``trajectory``.

    The trajectory must have been simulated with ``lyapunov=cert.functional``.
    """
    L = trajectory.lyapunov
    if L is None:
        raise ReportError("trajectory has no Lyapunov series; simulate with lyapunov=cert.functional")
    if cert.weights.size != trajectory.grid.J:
        raise ConfigurationError("certificate was built for a different grid")
    lam = trajectory.velocity[:-1]
    dt = trajectory.step_sizes
    d_now = trajectory.disturbance[:-1]
    d_next = trajectory.disturbance[1:]
    rate = cert.f_dx_proof / cert.c1
    cd = disturbance_gain(cert, 1.0)

    lhs = (L[1:] - L[:-1]) / dt
    decay = -rate * lam * L[:-1]
    rhs = decay + cd * lam * d_now ** 2
    rhs_next = decay + cd * lam * d_next ** 2
    tol = rel_tol * np.maximum(np.abs(lhs), np.abs(rhs)) + abs_tol
    margins = rhs - lhs
    first = 0 if trajectory.initial_boundary_closed else 1
    steps = np.arange(first, lhs.size)
    return DissipationReport(
        steps=steps,
        passed=(margins + tol >= 0.0)[first:],
        margins=margins[first:],
        margins_next_d=(rhs_next - lhs)[first:],
        first_step=first,
        eta_hat=trajectory.sigma2 * rate,
        nu=disturbance_gain(cert, trajectory.delta2),
        skipped=tuple(range(first)),
    )


@dataclass
class ISSReport:
    gamma1: float
    gamma2: float
    gamma3: float
    alpha1: float
    alpha2: float
    sigma2: float
    delta2: float
    times: np.ndarray
    norms: np.ndarray
    bound: np.ndarray
    satisfied: np.ndarray
    sup_disturbance: np.ndarray

    @property
    def all_satisfied(self) -> bool:
        return bool(np.all(self.satisfied))

    @property
    def worst_margin(self) -> float:
        return float(np.min(self.bound - self.norms))

    @property
    def worst_index(self) -> int:
        return int(np.argmin(self.bound - self.norms))

    def summary(self) -> str:
        status = "PASS" if self.all_satisfied else f"FAIL ({np.count_nonzero(~self.satisfied)} levels)"
        return (f"ISS bound {status}: gamma1={self.gamma1:.6g} gamma2={self.gamma2:.6g} "
                f"gamma3={self.gamma3:.6g}, worst margin {self.worst_margin:.3e} at n={self.worst_index}")


def check_iss_bound(trajectory: Trajectory, cert: LyapunovCertificate,
                    rho0_norm: float | None = None,
                    rel_tol: float = REL_TOL, abs_tol: float = ABS_TOL) -> ISSReport:
    """Check |rho^n| <= gamma2 exp(-gamma1 t^n) |rho^0| + gamma3 max_{s<n} |d^s| at every level.

    gamma1 = sigma2 f_proof / (2 C1), gamma2 = sqrt(alpha2/alpha1) and gamma3
    follow from the recursive bound, with sigma2/delta2 the extreme
    velocities of the trajectory.
    """
    sigma2, delta2 = trajectory.sigma2, trajectory.delta2
    if not sigma2 > 0.0:
        raise ReportError(f"degenerate trajectory: sigma2={sigma2}")
    if not cert.f_dx_proof > 0.0:
        raise CertificateInfeasible(f"f_dx (proof form) = {cert.f_dx_proof:.6g} <= 0; no ISS rate")
    _, alpha1, alpha2 = sandwich_constants(cert, trajectory.grid)
    gamma1 = sigma2 * cert.f_dx_proof / (2.0 * cert.c1)
    gamma2 = math.sqrt(alpha2 / alpha1)
    gamma3 = _gamma3(cert, sigma2, delta2, alpha1)

    norms = trajectory.l2_norm
    if rho0_norm is None:
        rho0_norm = float(norms[0])
    sup_d = np.concatenate(([0.0], np.maximum.accumulate(np.abs(trajectory.disturbance[:-1]))))
    bound = gamma2 * np.exp(-gamma1 * trajectory.times) * rho0_norm + gamma3 * sup_d
    satisfied = norms <= bound + rel_tol * bound + abs_tol
    return ISSReport(gamma1, gamma2, gamma3, alpha1, alpha2, sigma2, delta2,
                     trajectory.times, norms, bound, satisfied, sup_d)


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------

CERTIFICATE_COLUMNS = ("beta", "a", "theta", "c1", "f_experiment", "f_proof", "eta", "gamma1",
                       "gamma2", "gamma3", "nu", "valid", "reasons")


def certificate_row(cert: LyapunovCertificate) -> dict:
    def num(v):
        return "" if v is None else repr(float(v))

    return {
        "beta": num(cert.beta), "a": num(cert.a), "theta": num(cert.theta), "c1": num(cert.c1),
        "f_experiment": num(cert.f_dx_experiment), "f_proof": num(cert.f_dx_proof),
        "eta": num(cert.eta), "gamma1": num(cert.gamma1), "gamma2": num(cert.gamma2),
        "gamma3": num(cert.gamma3), "nu": num(cert.nu),
        "valid": str(cert.valid).lower(), "reasons": ";".join(cert.reasons),
    }


def write_certificate(cert: LyapunovCertificate, path) -> Path:
    """Write a one-row CSV plus a ``.txt`` key/value report next to it."""
    path = Path(path)
    row = certificate_row(cert)
    try:
        with path.open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=CERTIFICATE_COLUMNS)
            w.writeheader()
            w.writerow(row)
        width = max(map(len, CERTIFICATE_COLUMNS))
        lines = [f"{key:<{width}}  {value or '-'}" for key, value in row.items()]
        lines.insert(0, f"# mode={cert.mode} c1_rule={cert.c1_rule} dx={cert.dx!r} k={cert.k!r}")
        path.with_suffix(".txt").write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise ReportError(f"cannot write certificate to {path}: {exc}") from exc
    return path
