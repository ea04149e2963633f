"""Experiment harness: catalog, rates, CSV contract, cheap runner checks."""

import math

import numpy as np
import pytest

from mollifem.harness import (ExperimentConfig, ReportRow, clear_matrix_cache,
                              compute_rate, emit_csv, render_csv,
                              run_experiment, run_h_convergence,
                              solution_catalog)


def test_compute_rate():
    r = compute_rate(4.363e-3, 1.094e-3)
    assert abs(r - math.log2(4.363 / 1.094)) < 1e-15
    assert abs(r - 1.9957) < 1e-4
    assert compute_rate(1e-3, 1e-3) == 0.0
    assert compute_rate(None, 1e-3) is None
    assert compute_rate(1e-3, None) is None
    assert compute_rate(0.0, 1e-3) is None
    assert compute_rate(1e-3, -1.0) is None


def test_catalog_entries_and_forcings():
    cat = solution_catalog(0.2)
    assert list(cat) == ["linear2d", "quad2d", "cubic2d", "quartic2d",
                         "quad3d", "cubic3d", "quartic3d"]
    for s in cat.values():
        assert s.g is s.u
    p2 = np.array([[0.1, -0.2]])
    p3 = np.array([[0.1, -0.2, 0.3]])
    assert cat["linear2d"].f(p2)[0] == 0.0
    assert cat["quad2d"].f(p2)[0] == -4.0
    assert abs(cat["cubic2d"].f(p2)[0] - 0.6) < 1e-15
    # -12(x^2+y^2) - 2 delta^2
    assert abs(cat["quartic2d"].f(p2)[0] - (-0.6 - 0.08)) < 1e-15
    assert cat["quad3d"].f(p3)[0] == -6.0
    assert abs(cat["cubic3d"].f(p3)[0] - (-1.2)) < 1e-15
    # -12|x|^2 - (18/7) delta^2
    assert abs(cat["quartic3d"].f(p3)[0] - (-1.68 - 18.0 * 0.04 / 7.0)) < 1e-15
    # the quartic offset tracks delta
    assert abs(solution_catalog(0.1)["quartic2d"].f(np.zeros((1, 2)))[0]
               + 0.02) < 1e-16


def test_config_validation():
    with pytest.raises(TypeError):
        ExperimentConfig("consistency", horizon=0.2)
    with pytest.raises(ValueError):
        ExperimentConfig("consistency", dim=4)
    with pytest.raises(ValueError):
        ExperimentConfig("consistency", norm_region="boundary")
    cfg = ExperimentConfig("scaling", parts=(1, 2), norm_region="omega_and_gamma")
    assert cfg.parts == (1, 2)


def _rows():
    errs = [4.36271829e-3, 1.09412345e-3, 2.71828183e-4]
    rows, prev = [], None
    for ml, e in zip((2, 3, 4), errs):
        rows.append(ReportRow("ml", ml, 100 * ml, e, compute_rate(prev, e),
                              0.5, 1.0, [("h", 0.1 * 0.5 ** (ml - 2))]))
        prev = e
    return rows


def test_csv_format_and_determinism():
    rows = _rows()
    text = render_csv(rows)
    assert text == render_csv(rows)
    lines = text.splitlines()
    assert lines[0] == ("sweep_name,sweep_value,n_dofs,l2_error,rate,"
                        "t_assembly_s,t_total_s,h")
    assert len(lines) == 4 and text.endswith("\n")
    first = lines[1].split(",")
    assert first[0] == "ml" and first[1] == "2" and first[2] == "200"
    assert first[3] == "4.36272E-03"
    assert first[4] == ""  # no rate on the first sweep step
    assert first[7] == "1.00000E-01"


def test_csv_rates_recomputable_from_file():
    # the rate cell must equal log2 of the ratio of the printed errors
    lines = render_csv(_rows()).splitlines()
    prev = None
    for line in lines[1:]:
        cells = line.split(",")
        err = float(cells[3])
        if cells[4]:
            assert cells[4] == f"{math.log2(prev / err):.5E}"
        prev = err
    assert render_csv([ReportRow("x", 1, 1, None, None, None, None, [])]
                      ).splitlines()[1] == "x,1,1,,,,"


def test_render_csv_rejects_empty():
    with pytest.raises(ValueError):
        render_csv([])


def test_emit_csv_writes_file(tmp_path):
    rows = _rows()
    path = tmp_path / "report.csv"
    emit_csv(rows, str(path))
    assert path.read_text() == render_csv(rows)


def test_consistency_runner_reproduces_linear_data():
    clear_matrix_cache()
    cfg = ExperimentConfig("consistency", mesh_kind="quad",
                           solution="linear2d", fe_degree=1,
                           lmax_range=(2, 2))
    rows = run_experiment(cfg)
    assert len(rows) == 1
    row = rows[0]
    assert row.sweep_name == "L_max" and row.sweep_value == 2
    assert row.l2_error <= 1e-10
    assert row.rate is None
    assert abs(row.extras["eps"] - 0.0125 * (4.0 / 3.0)) < 1e-15


def test_h_convergence_runner_schedule():
    cfg = ExperimentConfig("h-convergence", mesh_kind="quad",
                           solution="cubic2d", fe_degree=1,
                           ml_range=(2, 3), L_max=1)
    rows = run_h_convergence(cfg)
    assert [r.sweep_value for r in rows] == [2, 3]
    assert abs(rows[0].extras["h"] - 0.1) < 1e-15
    assert abs(rows[1].extras["h"] - 0.05) < 1e-15
    assert abs(rows[0].extras["eps"] - 0.0125) < 1e-15
    assert abs(rows[1].extras["eps"] - 0.0125 * 2.0 / 3.0) < 1e-15
    assert rows[1].n_dofs > rows[0].n_dofs
    assert rows[0].l2_error > rows[1].l2_error > 0.0
    assert rows[1].rate is not None and 1.5 < rows[1].rate < 2.5


def test_unknown_kind_raises():
    with pytest.raises(ValueError):
        run_experiment(ExperimentConfig("spectral"))
