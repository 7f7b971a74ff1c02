import json
import math

import numpy as np
import pytest

from nonlocal_iss import ConfigurationError
from nonlocal_iss.experiments import (
    DEFAULT_K_LIST,
    PRESETS,
    ConvergenceRow,
    DecaySeries,
    convergence_study,
    decay_series,
    fit_decay,
    get_preset,
    read_convergence_csv,
    read_series_csv,
    restrict,
    run_preset,
    write_manifest,
    write_report,
)


def test_presets():
    ex1, ex2 = get_preset("example1"), get_preset("example2")
    assert (ex1.rho_star, ex1.k, ex1.t_final) == (0.0, 0.3, 10.0)
    assert (ex2.rho_star, ex2.t_final) == (1.0, 20.0)
    assert ex2.initial(0.25) == pytest.approx(4.0)
    assert ex1.disturbance.amplitude == 2.4e-3
    assert set(PRESETS) == {"example1", "example2"}
    with pytest.raises(ConfigurationError):
        get_preset("example3")


def test_restrict():
    assert restrict(np.arange(8.0), 4).tolist() == [0.5, 2.5, 4.5, 6.5]
    with pytest.raises(ConfigurationError):
        restrict(np.arange(9.0), 4)


def test_convergence_small():
    rows = convergence_study(get_preset("example1"), [20, 40, 80], cfl=0.5)
    assert [r.J for r in rows] == [20, 40, 80]
    assert rows[0].order is None and all(r.order > 0 for r in rows[1:])
    assert all(a.l2_error > b.l2_error for a, b in zip(rows, rows[1:]))
    assert all(0.12 < r.gamma1 < 0.13 for r in rows)


def test_convergence_parallel_matches_serial():
    serial = convergence_study(get_preset("example2"), [10, 20], cfl=0.9, jobs=1)
    parallel = convergence_study(get_preset("example2"), [10, 20], cfl=0.9, jobs=2)
    assert serial == parallel


def test_convergence_reference_divisibility():
    with pytest.raises(ConfigurationError):
        convergence_study(get_preset("example1"), [30, 40], cfl=0.5)
    assert convergence_study(get_preset("example1"), [], cfl=0.5) == []


def test_runs_are_deterministic():
    a = run_preset(get_preset("example2"), 50, 0.75, t_final=2.0)
    b = run_preset(get_preset("example2"), 50, 0.75, t_final=2.0)
    assert np.array_equal(a.l2_norm, b.l2_norm) and np.array_equal(a.times, b.times)


def test_fit_decay_recovers_exponential():
    t = np.linspace(0, 20, 2001)
    norms = np.exp(-0.8 * t) + 1e-5
    plateau, slope, end = fit_decay(t, norms)
    assert plateau == pytest.approx(1e-5, rel=0.05)
    assert -slope * math.log(10) == pytest.approx(0.8, rel=0.02)
    assert end < 20
    assert math.isnan(fit_decay(t, np.ones_like(t))[1])


def test_decay_series_small():
    series = decay_series(get_preset("example1"), (0.1, 0.5), J=100, t_final=8.0)
    assert [s.k for s in series] == [0.1, 0.5]
    assert series[0].rate > series[1].rate > 0
    assert series[0].times[-1] == 8.0
    with pytest.raises(ConfigurationError):
        decay_series(get_preset("example1"), (1.2,), J=10)


def test_default_k_list_spans_the_feasibility_limit():
    assert min(DEFAULT_K_LIST) < 0.5 <= max(DEFAULT_K_LIST)


def test_convergence_csv_roundtrip(tmp_path):
    rows = [ConvergenceRow(100, 1.5e-5, None, 0.127), ConvergenceRow(200, 8.1e-6, 0.8889, 0.1273)]
    csv_path, txt_path = write_report(rows, tmp_path / "conv.csv", "title")
    assert csv_path.read_text().splitlines()[:2] == ["J,l2_error,order,gamma1", "100,1.5e-05,,0.127"]
    assert read_convergence_csv(csv_path) == rows
    assert txt_path.read_text().startswith("title\n")


def test_empty_report_is_header_only(tmp_path):
    csv_path, _ = write_report([], tmp_path / "empty.csv")
    assert csv_path.read_text() == "J,l2_error,order,gamma1\n"
    assert read_convergence_csv(csv_path) == []


def test_series_csv_roundtrip(tmp_path):
    s = [DecaySeries(0.1, np.array([0.0, 0.5]), np.array([-1.0, -1.5])),
         DecaySeries(0.3, np.array([0.0, 0.5]), np.array([-1.0, -1.2]))]
    csv_path, _ = write_report(s, tmp_path / "decay.csv")
    assert csv_path.read_text().splitlines()[0] == "t,log10_norm,k"
    back = read_series_csv(csv_path)
    assert [b.k for b in back] == [0.1, 0.3]
    assert np.array_equal(back[1].log10_norm, s[1].log10_norm)


def test_manifest(tmp_path):
    p = write_manifest(tmp_path, {"value": np.float64(1.5), "n": np.int64(3)})
    body = json.loads(p.read_text())
    assert body["value"] == 1.5 and body["n"] == 3
    assert "reference" in body["l2_error_definition"]
