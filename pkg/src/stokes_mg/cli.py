"""Command-line runner: ``stokes-mg {run, lfa, accuracy}``."""
from __future__ import annotations

import argparse
import configparser
import contextlib
import io
import math
import os
import random
import sys

from . import __version__
from .experiments import (ACCURACY_COLUMNS, ROW_COLUMNS, SOLVER_PROBLEMS, ExperimentConfig,
                          run_accuracy_experiment, run_solver_experiment, write_csv,
                          write_rows)

EXIT_OK = 0
EXIT_DIVERGED = 2
CONFIG_SECTION = "experiment"

EPILOG = """\
experiment families (one line each):
  stokes-mg run --problem steady-standard --dim 2 --degree 2 --bc periodic --grids 4:256 --out std.csv
  stokes-mg run --problem steady-stress --dim 2 --degree 3 --bc dirichlet --grids 4:128 --out stress.csv
  stokes-mg run --problem multiphase-steady --degree 2 --bc stress --viscosity-ratio 1e-4 --grids 4:128 --out mp.csv
  stokes-mg run --problem unsteady-single --degree 2 --viscosity 1e-4 --grids 4:128 --out unsteady.csv
  stokes-mg run --problem unsteady-multiphase --degree 2 --bubble gas --bc dirichlet --grids 4:128 --out bubble.csv
  stokes-mg lfa --dim 2 --degree 2 --form standard --out cloud.csv
  stokes-mg accuracy --degree 3 --grids 8:128 --out errors.csv

environment:
  STOKES_MG_THREADS  cap on BLAS/LAPACK worker threads
"""


def parse_grids(text: str) -> list[int]:
    """'4:256' (powers of two between the bounds) or a comma list '4,8,16'."""
    text = text.strip()
    if ":" in text:
        lo, hi = (int(v) for v in text.split(":", 1))
        if lo < 1 or hi < lo:
            raise argparse.ArgumentTypeError(f"bad grid range {text!r}")
        out = []
        g = lo
        while g <= hi:
            out.append(g)
            g *= 2
        return out
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad grid list {text!r}") from None


def emit_config(cfg: ExperimentConfig) -> str:
    cp = configparser.ConfigParser(interpolation=None)
    cp[CONFIG_SECTION] = cfg.to_dict()
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def parse_config(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None)
    cp.read_string(text)
    if CONFIG_SECTION not in cp:
        raise ValueError(f"config has no [{CONFIG_SECTION}] section")
    return ExperimentConfig.from_dict(dict(cp[CONFIG_SECTION]))


@contextlib.contextmanager
def _thread_cap():
    value = os.environ.get("STOKES_MG_THREADS")
    if not value:
        yield
        return
    from threadpoolctl import threadpool_limits
    with threadpool_limits(limits=max(1, int(value))):
        yield


def _print_row(row: dict) -> None:
    keys = ("grid", "eta", "rho", "iterations", "setup_time", "solve_time", "status")
    parts = []
    for k in keys:
        v = row.get(k)
        parts.append(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}")
    print("  " + " ".join(parts), file=sys.stderr, flush=True)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="stokes-mg", description=__doc__, epilog=EPILOG,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="multigrid-preconditioned GMRES speed study",
                         epilog=EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
    run.add_argument("--config", help="read settings from a key = value file (flags override)")
    run.add_argument("--problem", choices=SOLVER_PROBLEMS)
    run.add_argument("--dim", type=int, choices=(2, 3))
    run.add_argument("--degree", type=int, choices=(1, 2, 3))
    run.add_argument("--bc", choices=("periodic", "dirichlet", "stress"))
    run.add_argument("--form", choices=("standard", "stress"))
    run.add_argument("--grids", type=parse_grids, help="e.g. 4:256 or 4,8,16")
    run.add_argument("--viscosity-ratio", type=float, dest="viscosity_ratio",
                     help="interior/exterior viscosity for multiphase-steady")
    run.add_argument("--viscosity", type=float, help="viscosity for unsteady-single")
    run.add_argument("--bubble", choices=("water", "gas"), help="interior phase for unsteady-multiphase")
    run.add_argument("--seed", type=int)
    run.add_argument("--random-seed", action="store_true", help="draw a fresh seed")
    run.add_argument("--bottom-cells", dest="bottom_cells",
                     help="auto, full, phase or cells per axis of the bottom level")
    run.add_argument("--max-iter", type=int, dest="max_iter")
    run.add_argument("--out", help="CSV output path (default: stdout)")
    run.add_argument("--write-config", dest="write_config", help="save the effective config")

    lfa = sub.add_parser("lfa", help="two-grid LFA smoother-parameter search")
    lfa.add_argument("--dim", type=int, choices=(2, 3), default=2)
    lfa.add_argument("--degree", type=int, choices=(1, 2, 3), default=2)
    lfa.add_argument("--form", choices=("standard", "stress", "inviscid"), default="standard")
    lfa.add_argument("--n-target", type=int, default=16, dest="n_target")
    lfa.add_argument("--max-evals", type=int, default=100_000, dest="max_evals")
    lfa.add_argument("--out", help="cloud CSV (zeta_u, omega_u, omega_p, rho)")
    lfa.add_argument("--region", help="CSV of the near-optimal region points")

    acc = sub.add_parser("accuracy", help="discretization accuracy study (2D, stress form)")
    acc.add_argument("--degree", type=int, choices=(1, 2, 3), default=3)
    acc.add_argument("--grids", type=parse_grids, default=parse_grids("4:256"))
    acc.add_argument("--out", help="CSV output path (default: stdout)")
    return ap


def _run(args) -> int:
    base = ExperimentConfig()
    if args.config:
        with open(args.config) as fh:
            base = parse_config(fh.read())
    values = base.to_dict()
    for key in ("problem", "dim", "degree", "bc", "form", "viscosity_ratio", "viscosity",
                "bubble", "seed", "bottom_cells", "max_iter"):
        v = getattr(args, key)
        if v is not None:
            values[key] = str(v)
    if args.grids is not None:
        values["grids"] = ",".join(str(g) for g in args.grids)
    if args.random_seed:
        values["seed"] = str(random.SystemRandom().randrange(2 ** 31))
    cfg = ExperimentConfig.from_dict(values)
    if cfg.problem not in SOLVER_PROBLEMS:
        raise SystemExit(f"run: problem must be one of {', '.join(SOLVER_PROBLEMS)}")
    if args.write_config:
        with open(args.write_config, "w") as fh:
            fh.write(emit_config(cfg))
    print(f"{cfg.problem} d={cfg.dim} p={cfg.degree} bc={cfg.bc} gamma={cfg.gamma}",
          file=sys.stderr)
    rows = run_solver_experiment(cfg, progress=_print_row)
    _emit(args.out, rows, ROW_COLUMNS)
    bad = [r for r in rows if r["status"] != "ok"]
    return EXIT_DIVERGED if bad else EXIT_OK


def _lfa(args) -> int:
    from .lfa import LfaConfig, LfaContext, search_params

    ctx = LfaContext(LfaConfig(args.dim, args.degree, args.form))
    res = search_params(ctx, n_target=args.n_target, max_evaluations=args.max_evals)
    if args.out:
        res.write_cloud(args.out)
    if args.region:
        res.write_region(args.region)
    c, lo, hi = res.centroid, res.box_lo, res.box_hi
    print(f"rho_star={res.rho_star:.6g} evaluations={res.evaluations}")
    print("centroid=(" + ", ".join(f"{v:.4g}" for v in c) + ")")
    print("box=(" + ", ".join(f"{v:.4g}" for v in lo) + ") -> ("
          + ", ".join(f"{v:.4g}" for v in hi) + ")")
    if res.budget_exceeded:
        print("warning: evaluation budget exhausted", file=sys.stderr)
    return EXIT_DIVERGED if (res.budget_exceeded or not res.rho_star < 1) else EXIT_OK


def _accuracy(args) -> int:
    cfg = ExperimentConfig(problem="accuracy", dim=2, degree=args.degree, grids=args.grids,
                           bc="stress", form="stress")
    rows = run_accuracy_experiment(cfg, progress=lambda r: print(
        f"  grid={r['grid']} u_max={r['u_max']:.3e} p_max={r['p_max']:.3e}", file=sys.stderr))
    _emit(args.out, rows, ACCURACY_COLUMNS)
    failed = any(not math.isfinite(r["u_max"]) or r["residual"] > 1e-8 for r in rows)
    return EXIT_DIVERGED if failed else EXIT_OK


def _emit(path, rows, columns):
    if path:
        write_csv(path, rows, columns)
    else:
        write_rows(sys.stdout, rows, columns)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    with _thread_cap():
        if args.command == "run":
            return _run(args)
        if args.command == "lfa":
            return _lfa(args)
        return _accuracy(args)


if __name__ == "__main__":
    sys.exit(main())
