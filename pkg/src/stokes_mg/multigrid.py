"""Geometric multigrid: transfers, rediscretized level operators, V-cycle."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg

from .assembly import FluxConfig, StokesOperator, assemble_stokes
from .basis import child_injection
from .blockmatrix import BlockMatrix
from .mesh import MeshHierarchy, MeshLevel, build_hierarchy, build_mesh, coarsen
from .smoother import SmootherParams, SmootherQ, alpha_vector, build_Q, compute_scales

KERNEL_RTOL = 1e-10


@dataclass
class ProblemConfig:
    """Everything needed to (re)discretize the Stokes problem on any level."""

    dim: int
    degree: int
    gamma: int = 0
    bc: str = "periodic"
    viscosity: Sequence[float] = (1.0,)
    density: Sequence[float] = (0.0,)
    delta: Optional[float] = None
    phase_spec: object = None
    flux: FluxConfig = field(default_factory=FluxConfig)

    def mesh(self, cells_per_dim: int) -> MeshLevel:
        return build_mesh(self.dim, cells_per_dim, self.bc, self.phase_spec)

    def assemble(self, level: MeshLevel) -> StokesOperator:
        return assemble_stokes(level, self.degree, self.gamma, self.flux, self.viscosity,
                               self.density, self.delta)


def child_code(fine: MeshLevel) -> np.ndarray:
    """Position of each fine cell inside its parent, as sum_a c_a 2^a."""
    return ((fine.coords % 2) * (2 ** np.arange(fine.dim))).sum(axis=1)


def injection_blocks(p: int, d: int) -> np.ndarray:
    """Per-child state injection blocks, shape (2^d, n, n)."""
    nv, npr = (p + 1) ** d, p ** d
    n = d * nv + npr
    out = np.zeros((2 ** d, n, n))
    for code in range(2 ** d):
        child = [(code >> a) & 1 for a in range(d)]
        Iv = child_injection(p, d, child)
        for c in range(d):
            out[code, c * nv:(c + 1) * nv, c * nv:(c + 1) * nv] = Iv
        out[code, d * nv:, d * nv:] = child_injection(p - 1, d, child)
    return out


def build_interp(coarse: MeshLevel, fine: MeshLevel, parent: np.ndarray, p: int) -> BlockMatrix:
    """Polynomial injection from coarse states to fine states."""
    if coarse.n * 2 != fine.n or coarse.dim != fine.dim:
        raise ValueError("levels are not nested by a factor of two")
    E = fine.num_elements
    return BlockMatrix((E, coarse.num_elements), np.arange(E), parent, child_code(fine),
                       injection_blocks(p, fine.dim))


class BottomSolver:
    """Pseudoinverse from a symmetric eigendecomposition.

    The eigendecomposition is taken of the balanced matrix diag(a) A diag(a),
    so that the relative cutoff sees only the true kernel even when the
    viscosity varies by many orders of magnitude between elements.
    """

    def __init__(self, op: StokesOperator, rtol: float = KERNEL_RTOL):
        a = alpha_vector(op, compute_scales(op)).reshape(-1)
        A = a[:, None] * op.to_dense() * a[None, :]
        A = 0.5 * (A + A.T)
        lam, V = scipy.linalg.eigh(A)
        cut = rtol * np.abs(lam).max() if len(lam) else 0.0
        keep = np.abs(lam) > cut
        self.kernel_dim = int(np.sum(~keep))
        self.V = V[:, keep]
        self.inv = 1.0 / lam[keep]
        self.alpha = a
        self.shape = (op.level.num_elements, op.n)

    def solve(self, b: np.ndarray) -> np.ndarray:
        flat = b.reshape(-1, *b.shape[2:]) if b.ndim > 2 else b.reshape(-1)
        a = self.alpha if flat.ndim == 1 else self.alpha[:, None]
        y = self.V.T @ (a * flat)
        y = (self.inv[:, None] * y) if y.ndim == 2 else self.inv * y
        return (a * (self.V @ y)).reshape(b.shape)


@dataclass
class StackLevel:
    op: StokesOperator
    smoother: Optional[SmootherQ]
    interp: Optional[BlockMatrix]  # from the next coarser level to this one
    restrict: Optional[BlockMatrix] = None


class LevelStack:
    """Operators, smoothers and transfers from the finest level downwards."""

    def __init__(self, config: ProblemConfig, hierarchy: MeshHierarchy, steady: SmootherParams,
                 inviscid: Optional[SmootherParams] = None, zeta_sigma: Optional[float] = None):
        self.config = config
        self.hierarchy = hierarchy
        self.levels: list[StackLevel] = []
        nlev = len(hierarchy)
        for l, lv in enumerate(hierarchy.levels):
            op = config.assemble(lv)
            bottom = l == nlev - 1
            sm = None if bottom else build_Q(op, steady, inviscid, zeta_sigma=zeta_sigma)
            interp = None
            if not bottom:
                interp = build_interp(hierarchy[l + 1], lv, hierarchy.parents[l], config.degree)
            self.levels.append(StackLevel(op, sm, interp, interp.T if interp is not None else None))
        self.bottom = BottomSolver(self.levels[-1].op)

    @property
    def op(self) -> StokesOperator:
        return self.levels[0].op

    def __len__(self) -> int:
        return len(self.levels)


def phase_resolving_cells(finest: MeshLevel) -> int:
    """Smallest cells-per-axis reachable by coarsening without mixing phases."""
    lv = finest
    while lv.n > 1:
        coarse, parent = coarsen(lv)
        if np.any(coarse.phase[parent] != lv.phase):
            return lv.n
        lv = coarse
    return 1


def build_stack(config: ProblemConfig, cells_per_dim: int, steady: SmootherParams,
                inviscid: Optional[SmootherParams] = None, bottom_cells="full",
                zeta_sigma: Optional[float] = None) -> LevelStack:
    """Hierarchy of rediscretized operators with smoothers.

    ``bottom_cells`` is the cells-per-axis of the bottom level: an integer,
    "full" (down to one cell) or "phase" (the coarsest level whose elements
    each lie in a single phase).
    """
    finest = config.mesh(cells_per_dim)
    if bottom_cells == "full":
        bottom_cells = 1
    elif bottom_cells == "phase":
        bottom_cells = phase_resolving_cells(finest)
    hier = build_hierarchy(finest, min_cells=min(int(bottom_cells), cells_per_dim))
    return LevelStack(config, hier, steady, inviscid, zeta_sigma)


def vcycle(stack: LevelStack, x: np.ndarray, b: np.ndarray, level: int = 0, nu1: int = 3,
           nu2: int = 3) -> np.ndarray:
    """One V-cycle on element-blocked arrays (E, n); returns the updated x."""
    lv = stack.levels[level]
    if level == len(stack.levels) - 1:
        return stack.bottom.solve(b)
    for _ in range(nu1):
        lv.smoother.sweep(x, b, "pre")
    r = b - lv.op.A.apply(x)
    rc = lv.restrict.apply(r)
    xc = vcycle(stack, np.zeros_like(rc), rc, level + 1, nu1, nu2)
    x += lv.interp.apply(xc)
    for _ in range(nu2):
        lv.smoother.sweep(x, b, "post")
    return x


def two_grid(stack: LevelStack, x: np.ndarray, b: np.ndarray, nu1: int = 3, nu2: int = 3,
             coarse_solver=None) -> np.ndarray:
    """Two-level cycle with an exact (pseudo)inverse of the first coarse operator."""
    lv = stack.levels[0]
    if coarse_solver is None:
        coarse_solver = BottomSolver(stack.levels[1].op)
    for _ in range(nu1):
        lv.smoother.sweep(x, b, "pre")
    rc = lv.restrict.apply(b - lv.op.A.apply(x))
    x += lv.interp.apply(coarse_solver.solve(rc))
    for _ in range(nu2):
        lv.smoother.sweep(x, b, "post")
    return x


def vcycle_preconditioner(stack: LevelStack, nu1: int = 3, nu2: int = 3, kernel=None):
    """Flat-vector map b -> V(0, b).

    With an orthonormal ``kernel`` basis (rows) the output is projected onto
    its orthogonal complement, which keeps Krylov iterates free of kernel
    components amplified from rounding errors.
    """
    E, n = stack.op.level.num_elements, stack.op.n

    def apply(v: np.ndarray) -> np.ndarray:
        b = np.asarray(v).reshape(E, n)
        y = vcycle(stack, np.zeros_like(b), b, 0, nu1, nu2).reshape(-1)
        if kernel is not None and len(kernel):
            y = y - kernel.T @ (kernel @ y)
        return y

    return apply
