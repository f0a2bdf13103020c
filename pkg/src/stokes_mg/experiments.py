"""Experiment drivers: solver-speed studies, the accuracy study and CSV output."""
from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field, fields
from typing import Optional, Sequence

import numpy as np

from .assembly import (SourceData, StokesOperator, _eval_modes, _volume_quadrature, assemble_rhs,
                       kernel_basis)
from .krylov import gmres_left, measure_eta, random_rhs
from .lfa import builtin_params
from .mesh import BoxPhase
from .multigrid import ProblemConfig, build_stack, vcycle_preconditioner

PROBLEMS = ("accuracy", "steady-standard", "steady-stress", "multiphase-steady",
            "unsteady-single", "unsteady-multiphase", "lfa-search")
SOLVER_PROBLEMS = PROBLEMS[1:6]

WATER = {"density": 1.0, "viscosity": 1.0}
GAS = {"density": 0.001, "viscosity": 0.0002}
DELTA_FACTOR = 0.1  # delta = 0.1 h on the finest grid
DEFAULT_SEEDS = {name: 1000 + k for k, name in enumerate(PROBLEMS)}
ACCURACY_TOL = 1e-11


@dataclass
class ExperimentConfig:
    problem: str = "steady-standard"
    dim: int = 2
    degree: int = 2
    grids: list = field(default_factory=lambda: [4, 8, 16, 32, 64, 128, 256])
    bc: str = "periodic"
    form: Optional[str] = None  # standard | stress; None picks the problem's own form
    viscosity_ratio: float = 1e4  # interior over exterior viscosity (multiphase-steady)
    viscosity: float = 1e-2  # unsteady-single
    bubble: str = "water"  # unsteady-multiphase: phase inside the box
    seed: Optional[int] = None
    bottom_cells: str = "auto"  # auto | full | phase | integer
    max_iter: int = 40
    output: str = ""

    def __post_init__(self):
        if self.problem not in PROBLEMS:
            raise ValueError(f"unknown problem {self.problem!r}")
        if self.dim not in (2, 3):
            raise ValueError("dim must be 2 or 3")
        if self.degree not in (1, 2, 3):
            raise ValueError("degree must be 1, 2 or 3")
        if self.bc not in ("periodic", "dirichlet", "stress"):
            raise ValueError("bc must be periodic, dirichlet or stress")
        if self.form not in (None, "standard", "stress"):
            raise ValueError("form must be standard or stress")
        if self.bubble not in ("water", "gas"):
            raise ValueError("bubble must be water or gas")
        self.grids = [int(g) for g in self.grids]
        if any(g < 1 or g & (g - 1) for g in self.grids):
            raise ValueError("grid sizes must be powers of two")
        if self.problem in ("multiphase-steady", "unsteady-multiphase") and min(self.grids) < 4:
            raise ValueError("the box phase needs at least 4 cells per axis")

    @property
    def gamma(self) -> int:
        form = self.form
        if form is None:
            form = "stress" if self.problem in ("steady-stress", "multiphase-steady",
                                                "unsteady-multiphase", "accuracy") else "standard"
        return 1 if form == "stress" else 0

    @property
    def rng_seed(self) -> int:
        return DEFAULT_SEEDS[self.problem] if self.seed is None else int(self.seed)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "grids":
                v = ",".join(str(g) for g in v)
            out[f.name] = "" if v is None else str(v)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        kw = {}
        types = {f.name: f.type for f in fields(cls)}
        for k, v in d.items():
            if k not in types:
                raise ValueError(f"unknown config key {k!r}")
            if k == "grids":
                kw[k] = [int(g) for g in str(v).split(",") if g.strip()]
            elif k in ("dim", "degree", "max_iter"):
                kw[k] = int(v)
            elif k in ("viscosity_ratio", "viscosity"):
                kw[k] = float(v)
            elif k in ("seed", "form"):
                kw[k] = None if v in ("", None) else (int(v) if k == "seed" else v)
            else:
                kw[k] = str(v)
        return cls(**kw)


def problem_setup(cfg: ExperimentConfig, finest: int):
    """ProblemConfig, (steady, inviscid) smoother parameters and bottom size."""
    d, p, gamma = cfg.dim, cfg.degree, cfg.gamma
    steady, inviscid = builtin_params(d, p, "stress" if gamma else "standard")
    phase, visc, dens, delta = None, (1.0,), (0.0,), None
    bottom = "full"
    h = 1.0 / finest
    if cfg.problem == "multiphase-steady":
        phase = BoxPhase()
        visc = (cfg.viscosity_ratio, 1.0)
        bottom = "phase"
    elif cfg.problem == "unsteady-single":
        visc, dens, delta = (cfg.viscosity,), (1.0,), DELTA_FACTOR * h
    elif cfg.problem == "unsteady-multiphase":
        phase = BoxPhase()
        inner, outer = (WATER, GAS) if cfg.bubble == "water" else (GAS, WATER)
        visc = (inner["viscosity"], outer["viscosity"])
        dens = (inner["density"], outer["density"])
        delta = DELTA_FACTOR * h
        bottom = "phase"
    elif cfg.problem not in ("steady-standard", "steady-stress", "accuracy"):
        raise ValueError(f"{cfg.problem} is not a solver problem")
    if cfg.bottom_cells != "auto":
        bottom = cfg.bottom_cells if cfg.bottom_cells in ("full", "phase") else int(cfg.bottom_cells)
    pc = ProblemConfig(d, p, gamma, cfg.bc, visc, dens, delta, phase)
    return pc, steady, inviscid, bottom


ROW_COLUMNS = ["problem", "dim", "degree", "bc", "gamma", "viscosity_ratio", "viscosity", "bubble",
               "seed", "grid", "eta", "rho", "iterations", "converged", "fit_flag", "setup_time",
               "solve_time", "status"]


def _solve(stack, op: StokesOperator, b: np.ndarray, tol: float, max_iter: int):
    K = kernel_basis(op)
    if len(K):
        b = b - K.T @ (K @ b)
    pre = vcycle_preconditioner(stack, kernel=K)
    return gmres_left(op.matvec, b, pre, tol=tol, max_iter=max_iter), K


def run_solver_experiment(cfg: ExperimentConfig, progress=None) -> list[dict]:
    """eta per grid for random right-hand sides and a zero initial guess."""
    rows = []
    for n in cfg.grids:
        row = {"problem": cfg.problem, "dim": cfg.dim, "degree": cfg.degree, "bc": cfg.bc,
               "gamma": cfg.gamma, "viscosity_ratio": cfg.viscosity_ratio,
               "viscosity": cfg.viscosity, "bubble": cfg.bubble, "seed": cfg.rng_seed, "grid": n}
        try:
            t0 = time.perf_counter()
            pc, steady, inviscid, bottom = problem_setup(cfg, n)
            stack = build_stack(pc, n, steady, inviscid, bottom_cells=bottom)
            t1 = time.perf_counter()
            op = stack.op
            b = random_rhs(cfg.rng_seed, op.size)
            rep, _ = _solve(stack, op, b, 1e-12, cfg.max_iter)
            t2 = time.perf_counter()
            row.update(eta=rep.eta, rho=rep.rho, iterations=rep.iterations,
                       converged=rep.converged, fit_flag=rep.fit_flag, setup_time=t1 - t0,
                       solve_time=t2 - t1, status="divergent" if rep.divergent else "ok")
        except (ValueError, np.linalg.LinAlgError, MemoryError) as exc:
            row.update(eta=math.nan, rho=math.nan, iterations=0, converged=False, fit_flag="",
                       setup_time=math.nan, solve_time=math.nan, status=f"error: {exc}")
        rows.append(row)
        if progress is not None:
            progress(row)
    return rows


# ------------------------------------------------------------------ accuracy
_U_PHASES = ((0.25, 1.25), (4.25, 5.25))
_P_PHASE = (-3.75, -2.75)


def _wave(x, phase):
    """cos(2 pi x + a) cos(2 pi y + b) with its gradient and Hessian."""
    k = 2 * np.pi
    a = k * x[:, 0] + phase[0]
    b = k * x[:, 1] + phase[1]
    ca, sa, cb, sb = np.cos(a), np.sin(a), np.cos(b), np.sin(b)
    val = ca * cb
    grad = np.stack([-k * sa * cb, -k * ca * sb], axis=1)
    hess = np.empty((len(x), 2, 2))
    hess[:, 0, 0] = -k * k * ca * cb
    hess[:, 1, 1] = -k * k * ca * cb
    hess[:, 0, 1] = hess[:, 1, 0] = k * k * sa * sb
    return val, grad, hess


class SineSolution:
    """Manufactured 2D Stokes solution built from unit-amplitude cosine waves."""

    def __init__(self, mu: float = 1.0, gamma: int = 1):
        self.mu = mu
        self.gamma = gamma

    def velocity(self, x):
        return np.stack([_wave(x, ph)[0] for ph in _U_PHASES], axis=1)

    def pressure(self, x):
        return _wave(x, _P_PHASE)[0]

    def velocity_gradient(self, x):
        """(npts, i, j) = d u_i / d x_j."""
        return np.stack([_wave(x, ph)[1] for ph in _U_PHASES], axis=1)

    def stress(self, x):
        g = self.velocity_gradient(x)
        return self.mu * (g + self.gamma * np.swapaxes(g, 1, 2))

    def force(self, x):
        """-div(sigma) + grad p."""
        hs = [_wave(x, ph)[2] for ph in _U_PHASES]
        lap = np.stack([np.trace(hh, axis1=1, axis2=2) for hh in hs], axis=1)
        # grad(div u)_i = sum_j d_i d_j u_j
        grad_div = np.stack([hs[0][:, i, 0] + hs[1][:, i, 1] for i in range(2)], axis=1)
        gp = _wave(x, _P_PHASE)[1]
        return -self.mu * (lap + self.gamma * grad_div) + gp

    def divergence_source(self, x):
        """-div u."""
        g = self.velocity_gradient(x)
        return -(g[:, 0, 0] + g[:, 1, 1])

    def traction(self, x, normal):
        """(sigma - p I) n on a boundary face with the given outward normal."""
        s = self.stress(x)
        return s @ normal - self.pressure(x)[:, None] * normal[None, :]

    def sources(self) -> SourceData:
        return SourceData(f_vec=self.force, f_div=self.divergence_source,
                          h_stress=self.traction, g_dirichlet=lambda x, n: self.velocity(x))


def project_exact(op: StokesOperator, sol: SineSolution, nq: Optional[int] = None) -> np.ndarray:
    """L2 projection of the exact (u, p) onto the discrete space."""
    level, p, d = op.level, op.degree, op.dim
    nq = p + 4 if nq is None else nq
    pts, wts = _volume_quadrature(p, d, nq)
    phi = _eval_modes(p, pts)
    psi = _eval_modes(p - 1, pts)
    X = ((level.coords[:, None, :] + pts[None]) * level.h).reshape(-1, d)
    E = level.num_elements
    u = sol.velocity(X).reshape(E, -1, d)
    pr = sol.pressure(X).reshape(E, -1)
    out = np.zeros((E, op.n))
    for a in range(d):
        out[:, a * op.nv:(a + 1) * op.nv] = np.einsum("eq,iq,q->ei", u[..., a], phi, wts)
    out[:, d * op.nv:] = np.einsum("eq,iq,q->ei", pr, psi, wts)
    return out.reshape(-1)


def solution_errors(op: StokesOperator, x: np.ndarray, sol: SineSolution,
                    nq: Optional[int] = None) -> dict:
    """Max-norm (over quadrature points) and L2 errors of velocity and pressure."""
    level, p, d = op.level, op.degree, op.dim
    nq = p + 4 if nq is None else nq
    pts, wts = _volume_quadrature(p, d, nq)
    phi = _eval_modes(p, pts)
    psi = _eval_modes(p - 1, pts)
    E = level.num_elements
    X = ((level.coords[:, None, :] + pts[None]) * level.h).reshape(-1, d)
    xs = x.reshape(E, op.n)
    uh = np.stack([xs[:, a * op.nv:(a + 1) * op.nv] @ phi for a in range(d)], axis=-1)
    ph = xs[:, d * op.nv:] @ psi
    eu = uh - sol.velocity(X).reshape(E, -1, d)
    ep = ph - sol.pressure(X).reshape(E, -1)
    vol = level.h ** d
    return {
        "u_max": float(np.abs(eu).max()),
        "p_max": float(np.abs(ep).max()),
        "u_l2": float(np.sqrt(vol * np.einsum("eqa,q->", eu ** 2, wts))),
        "p_l2": float(np.sqrt(vol * np.einsum("eq,q->", ep ** 2, wts))),
    }


def fit_order(grids: Sequence[int], errors: Sequence[float], last: int = 4) -> float:
    """Slope of log(error) against log(h) over the finest ``last`` grids."""
    g = np.asarray(grids[-last:], dtype=float)
    e = np.asarray(errors[-last:], dtype=float)
    if len(g) < 2 or np.any(e <= 0):
        return math.nan
    return float(np.polyfit(np.log(1.0 / g), np.log(e), 1)[0])


ACCURACY_COLUMNS = ["degree", "grid", "u_max", "p_max", "u_l2", "p_l2", "proj_u_max",
                    "proj_p_max", "iterations", "residual", "u_max_order", "p_max_order",
                    "u_l2_order", "p_l2_order", "solve_time"]


def run_accuracy_experiment(cfg: ExperimentConfig, progress=None) -> list[dict]:
    """Stress-form sine-wave study with stress boundary conditions and mu = 1."""
    if cfg.dim != 2:
        raise ValueError("the accuracy study is two-dimensional")
    sol = SineSolution(mu=1.0, gamma=1)
    acc = ExperimentConfig(problem="accuracy", dim=2, degree=cfg.degree, grids=cfg.grids,
                           bc="stress", form="stress", bottom_cells=cfg.bottom_cells,
                           max_iter=max(cfg.max_iter, 60))
    rows = []
    for n in acc.grids:
        t0 = time.perf_counter()
        pc, steady, inviscid, bottom = problem_setup(acc, n)
        stack = build_stack(pc, n, steady, inviscid, bottom_cells=bottom)
        op = stack.op
        b = assemble_rhs(op, sol.sources(), quad_points=op.degree + 4)
        rep, K = _solve(stack, op, b, ACCURACY_TOL, acc.max_iter)
        x = rep.x
        xe = project_exact(op, sol)
        if len(K):
            # the rigid-body component is not determined by the data; take the exact one
            x = x - K.T @ (K @ x) + K.T @ (K @ xe)
        err = solution_errors(op, x, sol)
        perr = solution_errors(op, xe, sol)
        row = {"degree": acc.degree, "grid": n, **err, "proj_u_max": perr["u_max"],
               "proj_p_max": perr["p_max"], "iterations": rep.iterations,
               "residual": rep.residual_history[-1] / rep.residual_history[0],
               "solve_time": time.perf_counter() - t0}
        rows.append(row)
        if progress is not None:
            progress(row)
    grids = [r["grid"] for r in rows]
    for key in ("u_max", "p_max", "u_l2", "p_l2"):
        order = fit_order(grids, [r[key] for r in rows])
        for r in rows:
            r[f"{key}_order"] = order
    return rows


# ------------------------------------------------------------------ output
def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def write_rows(fh, rows: list[dict], columns: Sequence[str]) -> None:
    """Header plus one line per row; floats at full precision."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c, "")) for c in columns])


def write_csv(path, rows: list[dict], columns: Sequence[str]) -> None:
    with open(path, "w", newline="") as fh:
        write_rows(fh, rows, columns)
