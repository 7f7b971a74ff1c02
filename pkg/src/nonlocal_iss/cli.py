"""Command-line entry point.

Exit status: 0 success, 1 a check failed, 2 configuration error,
3 runtime error in the model, 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .errors import (
    CertificateInfeasible,
    ConfigurationError,
    DomainError,
    ReportError,
    StabilityError,
)
from .experiments import (
    DEFAULT_K_LIST,
    FIGURE_CFL,
    FIGURE_J,
    TABLE_J_LIST,
    TABLE_CFLS,
    ExperimentPreset,
    convergence_study,
    decay_series,
    format_convergence_table,
    format_decay_table,
    get_preset,
    write_manifest,
    write_report,
    write_text,
)
from .lyapunov import (
    C1_RULES,
    certify,
    check_iss_bound,
    check_step_dissipation,
    write_certificate,
)
from .model import Frame, Grid, VelocityModel, parse_disturbance, parse_initial, sample_initial
from .solver import SolverConfig, simulate, write_state_snapshots, write_trajectory_csv

log = logging.getLogger("nonlocal_iss")

OUTPUT_ENV = "NONLOCAL_ISS_OUTPUT"
EXIT_OK, EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_RUNTIME, EXIT_IO = 0, 1, 2, 3, 4


def _float_list(text):
    return [float(v) for v in text.split(",") if v]


def _int_list(text):
    return [int(v) for v in text.split(",") if v]


def _add_model_args(p, with_grid=True):
    p.add_argument("--preset", default="example1", help="example1 or example2 (default: %(default)s)")
    p.add_argument("--rho-star", type=float, help="equilibrium density")
    p.add_argument("--k", type=float, help="feedback gain in [0, 1)")
    p.add_argument("--A", type=float, help="velocity numerator A")
    p.add_argument("--B", type=float, help="velocity offset B")
    p.add_argument("--t-final", type=float)
    p.add_argument("--disturbance", help="zero | sin:<amp>[:<omega>[:<phase>]] | file:<csv with t,d>")
    p.add_argument("--initial", help="const:<c> | sin:<offset>:<amp>[:<wavenumber>] | file:<csv with x,rho>")
    if with_grid:
        p.add_argument("--J", type=int, default=FIGURE_J)
        p.add_argument("--cfl", type=float, default=FIGURE_CFL)
        p.add_argument("--record-stride", type=int, default=1000)
        p.add_argument("--frame", choices=[f.value for f in Frame], default="physical")
        p.add_argument("--initial-boundary", choices=["sample", "feedback"], default="sample")
    p.add_argument("--beta-mode", choices=["experiment", "rigorous"], default="experiment")
    p.add_argument("--c1-rule", choices=C1_RULES, default="cauchy_schwarz")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nonlocal-iss", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-o", "--output-dir", help=f"output directory (default: ${OUTPUT_ENV} or ./nonlocal_iss_out)")
    parser.add_argument("--from-manifest", help="re-run the configuration stored in a manifest.json")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("simulate", help="run one simulation; write trajectory, snapshots and certificate")
    _add_model_args(p)
    p.add_argument("--require-certificate", action="store_true",
                   help="treat an infeasible certificate as a configuration error")

    p = sub.add_parser("check", help="verify the dissipation and ISS inequalities along a run")
    _add_model_args(p)

    p = sub.add_parser("converge", help="grid-convergence table with decay rates")
    _add_model_args(p, with_grid=False)
    p.add_argument("--J-list", type=_int_list, default=list(TABLE_J_LIST))
    p.add_argument("--cfl", type=float, default=TABLE_CFLS[0])
    p.add_argument("--reference-factor", type=int, default=2)
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("decay", help="deviation-norm decay series for several gains")
    _add_model_args(p, with_grid=False)
    p.add_argument("--k-list", type=_float_list, default=list(DEFAULT_K_LIST))
    p.add_argument("--J", type=int, default=FIGURE_J)
    p.add_argument("--cfl", type=float, default=FIGURE_CFL)
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("reproduce", help="tables (CFL 0.5 and 0.9) and decay data (CFL 0.75) for a preset")
    p.add_argument("example", choices=["example1", "example2"])
    p.add_argument("--J-list", type=_int_list, default=list(TABLE_J_LIST))
    p.add_argument("--k-list", type=_float_list, default=list(DEFAULT_K_LIST))
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--beta-mode", choices=["experiment", "rigorous"], default="experiment")
    return parser


def resolve_preset(args) -> ExperimentPreset:
    """Preset with any explicit flags applied on top; validates every field."""
    preset = get_preset(args.preset)
    changes = {}
    if args.rho_star is not None:
        changes["rho_star"] = args.rho_star
    if args.k is not None:
        changes["k"] = args.k
    if args.A is not None or args.B is not None:
        changes["velocity"] = VelocityModel(preset.velocity.A if args.A is None else args.A,
                                            preset.velocity.B if args.B is None else args.B)
    if args.t_final is not None:
        changes["t_final"] = changes["decay_t_final"] = args.t_final
    if args.disturbance is not None:
        changes["disturbance"] = parse_disturbance(args.disturbance)
    if args.initial is not None:
        changes["initial"] = parse_initial(args.initial)
    if changes:
        preset = replace(preset, name="custom", **changes)
    preset.feedback()  # validates k and rho_star
    return preset


def _output_dir(args) -> Path:
    out = Path(args.output_dir or os.environ.get(OUTPUT_ENV) or "nonlocal_iss_out")
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ReportError(f"cannot create output directory {out}: {exc}") from exc
    return out


def _config_echo(args) -> dict:
    return {k: v for k, v in vars(args).items() if k not in ("from_manifest", "verbose")}


def _run_single(args, preset, want_certificate):
    grid = Grid(args.J)
    cfg = preset.feedback()
    solver_cfg = SolverConfig(args.cfl, preset.t_final, args.record_stride, Frame(args.frame),
                              args.initial_boundary)
    cert = None
    try:
        cert = certify(cfg, preset.velocity, grid, args.beta_mode, args.c1_rule)
    except CertificateInfeasible as exc:
        if want_certificate:
            raise ConfigurationError(str(exc)) from exc
        log.warning("%s; simulating without a certificate", exc)
    init = sample_initial(preset.initial, grid, solver_cfg.frame, cfg.rho_star)
    traj = simulate(init, grid, preset.velocity, cfg, solver_cfg, preset.disturbance,
                    cert.functional if cert is not None else None)
    if cert is not None:
        cert = cert.with_rates(traj.sigma2, traj.delta2)
        if not cert.valid:
            log.warning("certificate invalid: %s", ", ".join(cert.reasons))
    return grid, traj, cert


def cmd_simulate(args, out: Path) -> int:
    preset = resolve_preset(args)
    grid, traj, cert = _run_single(args, preset, args.require_certificate)
    write_trajectory_csv(traj, out / "trajectory.csv")
    write_state_snapshots(traj, out / "states")
    if cert is not None:
        write_certificate(cert, out / "certificate.csv")
    write_manifest(out, {
        "command": "simulate", "config": _config_echo(args), "preset": preset.describe(),
        "n_steps": traj.n_steps, "sigma2": traj.sigma2, "delta2": traj.delta2,
        "final_l2_deviation": float(traj.l2_norm[-1]), "certificate_valid": bool(cert and cert.valid),
    })
    print(f"simulated {traj.n_steps} steps to t={traj.times[-1]:.6g}; sigma2={traj.sigma2:.6g}; "
          f"final deviation {traj.l2_norm[-1]:.4e}")
    if cert is not None:
        print(f"certificate beta={cert.beta:.6g} a={cert.a:.6g} gamma1={cert.gamma1:.4f} valid={cert.valid}")
    return EXIT_OK


def cmd_check(args, out: Path) -> int:
    preset = resolve_preset(args)
    grid, traj, cert = _run_single(args, preset, want_certificate=True)
    diss = check_step_dissipation(traj, cert)
    lines = [diss.summary()]
    with (out / "dissipation.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("n", "margin", "margin_next_d", "passed"))
        for row in zip(diss.steps, diss.margins, diss.margins_next_d, diss.passed):
            w.writerow((int(row[0]), repr(float(row[1])), repr(float(row[2])), str(bool(row[3])).lower()))
    ok = diss.all_passed
    try:
        iss = check_iss_bound(traj, cert)
    except CertificateInfeasible as exc:
        lines.append(f"ISS bound unavailable: {exc}")
        ok = False
    else:
        lines.append(iss.summary())
        with (out / "iss.csv").open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("t", "l2_deviation", "bound", "satisfied"))
            for t, nrm, b, s in zip(iss.times, iss.norms, iss.bound, iss.satisfied):
                w.writerow((repr(float(t)), repr(float(nrm)), repr(float(b)), str(bool(s)).lower()))
        ok = ok and iss.all_satisfied
    write_certificate(cert, out / "certificate.csv")
    write_text("\n".join(lines) + "\n", out / "check_report.txt")
    write_manifest(out, {
        "command": "check", "config": _config_echo(args), "preset": preset.describe(),
        "n_steps": traj.n_steps, "sigma2": traj.sigma2, "delta2": traj.delta2, "passed": ok,
        "skipped_steps": list(diss.skipped),
    })
    print("\n".join(lines))
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def cmd_converge(args, out: Path) -> int:
    preset = resolve_preset(args)
    rows = convergence_study(preset, args.J_list, args.cfl, args.reference_factor, args.beta_mode, args.jobs)
    title = f"{preset.name}: rho*={preset.rho_star}, k={preset.k}, T={preset.t_final}, CFL={args.cfl}"
    write_report(rows, out / "convergence.csv", title)
    write_manifest(out, {
        "command": "converge", "config": _config_echo(args), "preset": preset.describe(),
        "runs": [{"J": r.J, "sigma2": r.sigma2, "n_steps": r.n_steps} for r in rows],
    })
    print(format_convergence_table(rows, title), end="")
    return EXIT_OK


def cmd_decay(args, out: Path) -> int:
    preset = resolve_preset(args)
    series = decay_series(preset, args.k_list, args.cfl, args.J, jobs=args.jobs)
    title = f"{preset.name}: rho*={preset.rho_star}, CFL={args.cfl}, J={args.J}, T={preset.decay_t_final}"
    write_report(series, out / "decay.csv", title)
    write_manifest(out, {
        "command": "decay", "config": _config_echo(args), "preset": preset.describe(),
        "fits": [{"k": s.k, "slope_log10": s.slope, "rate": s.rate, "plateau": s.plateau} for s in series],
    })
    print(format_decay_table(series, title), end="")
    return EXIT_OK


def cmd_reproduce(args, out: Path) -> int:
    preset = get_preset(args.example)
    runs = []
    for cfl in TABLE_CFLS:
        rows = convergence_study(preset, args.J_list, cfl, beta_mode=args.beta_mode, jobs=args.jobs)
        title = f"{preset.name}: rho*={preset.rho_star}, k={preset.k}, T={preset.t_final}, CFL={cfl}"
        write_report(rows, out / f"table_cfl{cfl}.csv", title)
        print(format_convergence_table(rows, title))
        runs += [{"cfl": cfl, "J": r.J, "sigma2": r.sigma2, "n_steps": r.n_steps} for r in rows]
    series = decay_series(preset, args.k_list, FIGURE_CFL, FIGURE_J, jobs=args.jobs)
    title = f"{preset.name}: decay, CFL={FIGURE_CFL}, J={FIGURE_J}, T={preset.decay_t_final}"
    write_report(series, out / "decay.csv", title)
    print(format_decay_table(series, title), end="")
    write_manifest(out, {
        "command": "reproduce", "config": _config_echo(args), "preset": preset.describe(), "runs": runs,
        "fits": [{"k": s.k, "slope_log10": s.slope, "rate": s.rate, "plateau": s.plateau} for s in series],
    })
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "check": cmd_check,
    "converge": cmd_converge,
    "decay": cmd_decay,
    "reproduce": cmd_reproduce,
}


def _load_manifest_args(path, output_dir):
    try:
        config = json.loads(Path(path).read_text())["config"]
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigurationError(f"cannot load configuration from manifest {path}: {exc}") from exc
    if output_dir is not None:
        config["output_dir"] = output_dir
    return argparse.Namespace(**config)


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        if args.from_manifest:
            args = _load_manifest_args(args.from_manifest, args.output_dir)
        if args.command not in COMMANDS:
            parser.print_usage(sys.stderr)
            raise ConfigurationError("a command is required")
        out = _output_dir(args)
        return COMMANDS[args.command](args, out)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DomainError, StabilityError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ReportError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
