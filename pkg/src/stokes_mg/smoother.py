"""Balanced least-squares block smoother and multi-colored sweeps."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg

from .assembly import StokesOperator
from .basis import reference_matrices
from .blockmatrix import BlockMatrix, _unique_rows, round_sig
from .mesh import color_elements, face_adjacency

ZETA_SIGMA = 128.0


@dataclass(frozen=True)
class SmootherParams:
    """One parameter set (zeta_u, omega_u, omega_p) plus the fixed zeta_sigma."""

    zeta_u: float
    omega_u: float
    omega_p: float
    zeta_sigma: float = ZETA_SIGMA

    def __post_init__(self):
        if min(self.zeta_u, self.omega_u, self.omega_p, self.zeta_sigma) <= 0:
            raise ValueError("smoother parameters must be positive")

    def as_array(self) -> np.ndarray:
        return np.array([self.zeta_sigma, self.zeta_u, self.omega_u, self.omega_p])

    @classmethod
    def from_triple(cls, triple, zeta_sigma: float = ZETA_SIGMA) -> "SmootherParams":
        z, wu, wp = triple
        return cls(float(z), float(wu), float(wp), zeta_sigma)


def blend_params(steady: SmootherParams, inviscid: SmootherParams, lam) -> np.ndarray:
    """Per-element (zeta_sigma, zeta_u, omega_u, omega_p) for blend weights ``lam``."""
    lam = np.asarray(lam, dtype=float)[..., None]
    return (1.0 - lam) * steady.as_array() + lam * inviscid.as_array()


@dataclass
class ElementScales:
    S_A: np.ndarray
    S_D: np.ndarray
    S_rho: np.ndarray

    @property
    def lambda_blend(self) -> np.ndarray:
        den = self.S_rho + self.S_A
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(den > 0, self.S_rho / np.where(den > 0, den, 1.0), 0.0)

    @property
    def alpha_u(self) -> np.ndarray:
        return (self.S_A ** 2 + self.S_rho ** 2) ** -0.25

    @property
    def alpha_p(self) -> np.ndarray:
        return (self.S_A ** 2 + self.S_rho ** 2) ** 0.25 / self.S_D


def compute_scales(op: StokesOperator) -> ElementScales:
    """Element scales of the viscous, divergence and mass terms (all elements)."""
    ref = reference_matrices(op.degree, op.dim)
    d = op.dim
    h = op.level.h
    # on the reference cell M = I, so G^T M_mu G = mu h^(d-2) G_ref^T G_ref
    cA = np.sqrt(d * sum(np.linalg.norm(g.T @ g) ** 2 for g in ref.G_broken))
    cD = np.sqrt(sum(np.linalg.norm(g) ** 2 for g in ref.G_broken))
    S_A = op.viscosity * h ** (d - 2) * cA
    S_D = np.full(op.level.num_elements, h ** (d - 1) * cD)
    if op.delta is None:
        S_rho = np.zeros_like(S_A)
    else:
        # Frobenius norm of the density mass block over all d velocity components
        S_rho = op.density * h ** d * np.sqrt(d * op.nv) / op.delta
    return ElementScales(S_A, S_D, S_rho)


def alpha_vector(op: StokesOperator, scales: ElementScales) -> np.ndarray:
    """Balancing entries per element, shape (E, n)."""
    dnv = op.dim * op.nv
    alpha = np.empty((op.level.num_elements, op.n))
    alpha[:, :dnv] = scales.alpha_u[:, None]
    alpha[:, dnv:] = scales.alpha_p[:, None]
    return alpha


def balance(op: StokesOperator, scales: Optional[ElementScales] = None) -> BlockMatrix:
    """diag(alpha) A diag(alpha) as a block matrix."""
    if scales is None:
        scales = compute_scales(op)
    alpha = alpha_vector(op, scales)
    D = _diag_blocks(alpha)
    return D.matmul(op.A).matmul(D)


def _diag_blocks(alpha: np.ndarray) -> BlockMatrix:
    keys, ids = _unique_rows(round_sig(alpha, 14))
    rep = np.zeros(len(keys), dtype=int)
    rep[ids[::-1]] = np.arange(len(ids))[::-1]
    blocks = np.stack([np.diag(a) for a in alpha[rep]])
    return BlockMatrix.block_diagonal(ids, blocks)


def solve_block_lstsq(diag_block, off_rows, zeta_rows, rhs_diag) -> np.ndarray:
    """Minimum-norm solution of the weighted block least-squares problem.

    ``diag_block`` is the balanced n x n diagonal block, ``off_rows`` the kept
    rows of the off-diagonal blocks (k x n), ``zeta_rows`` the n row weights of
    the diagonal block and ``rhs_diag`` the n diagonal entries of the weighted
    right-hand side.
    """
    n = diag_block.shape[0]
    C = np.vstack([zeta_rows[:, None] * diag_block, off_rows])
    R = np.zeros((C.shape[0], n))
    R[np.arange(n), np.arange(n)] = rhs_diag
    sol, *_ = scipy.linalg.lstsq(C, R, lapack_driver="gelsy")
    return sol


class SmootherQ:
    """Block-diagonal approximate inverse with a color schedule.

    ``Q`` stores one n x n block per element.  Sweeps update each color in
    turn; pre-sweeps apply Q_i in color order and post-sweeps apply Q_i^T in
    reverse color order.
    """

    def __init__(self, op: StokesOperator, Q: BlockMatrix, colors: np.ndarray, alpha: np.ndarray,
                 lam: np.ndarray):
        self.op = op
        self.Q = Q
        self.QT = Q.T
        self.colors = np.asarray(colors)
        self.alpha = alpha
        self.lam = lam
        self.num_colors = int(self.colors.max()) + 1 if len(self.colors) else 0
        A = op.A
        self._members = [np.nonzero(self.colors == c)[0] for c in range(self.num_colors)]
        local = np.empty(len(self.colors), dtype=np.int64)
        self._row_groups = []
        for m in self._members:
            local[m] = np.arange(len(m))
            groups = A._make_groups(A.entries_in_rows(m))
            self._row_groups.append([(b, local[r], c) for b, r, c in groups])
        self._q_ids = [Q.bid[m] for m in self._members]  # Q is diagonal, entry i is row i

    def blocks(self) -> np.ndarray:
        """Dense Q_i blocks, shape (E, n, n)."""
        return self.Q.blocks[self.Q.bid]

    def _update(self, x, b, c, transpose):
        members = self._members[c]
        A = self.op.A
        res = b[members].astype(np.result_type(b, x), copy=True)
        for bid, rows, cols in self._row_groups[c]:
            B = A.blocks[bid]
            if x.ndim == 2:
                res[rows] -= x[cols] @ B.T
            else:
                res[rows] -= np.matmul(B, x[cols])
        blocks = self.QT.blocks if transpose else self.Q.blocks
        ids = self._q_ids[c]
        for bid in np.unique(ids):
            sel = ids == bid
            B = blocks[bid]
            if x.ndim == 2:
                x[members[sel]] += res[sel] @ B.T
            else:
                x[members[sel]] += np.matmul(B, res[sel])

    def sweep(self, x, b, direction: str = "pre"):
        """One in-place multi-colored sweep on element-blocked arrays (E, n)."""
        if direction not in ("pre", "post"):
            raise ValueError("direction must be 'pre' or 'post'")
        order = range(self.num_colors) if direction == "pre" else range(self.num_colors - 1, -1, -1)
        for c in order:
            self._update(x, b, c, transpose=(direction == "post"))
        return x


def _column_structure(A: BlockMatrix):
    """For each column i, the block ids of the off-diagonal entries A_ji and their rows j."""
    off = A.row != A.col
    cols = A.col[off]
    order = np.argsort(cols, kind="stable")
    return cols[order], A.row[off][order], A.bid[off][order]


def build_Q(op: StokesOperator, steady: SmootherParams, inviscid: Optional[SmootherParams] = None,
            scales: Optional[ElementScales] = None, colors: Optional[np.ndarray] = None,
            zeta_sigma: Optional[float] = None) -> SmootherQ:
    """Balanced least-squares block smoother for every element of ``op``.

    ``steady`` and ``inviscid`` are the parameter sets for the viscous and
    the zero-viscosity limits; elements blend them by the scale ratio.
    Elements with identical balanced block columns share a least-squares solve.
    By default elements are colored on the face-connectivity graph, which is
    the red-black pattern on Cartesian grids; couplings between same-colored
    elements (corner neighbours of the stress form) are then updated
    Jacobi-style within a color.
    """
    if inviscid is None:
        inviscid = steady
    if scales is None:
        scales = compute_scales(op)
    E = op.level.num_elements
    n, d, nv = op.n, op.dim, op.nv
    lam = scales.lambda_blend
    params = blend_params(steady, inviscid, lam)
    if zeta_sigma is not None:
        params[:, 0] = zeta_sigma
    alpha = alpha_vector(op, scales)
    At = balance(op, scales)

    # element key: diagonal block id, parameter id, own alpha id, sorted off-diagonal block ids
    _, alpha_id = _unique_rows(round_sig(alpha[:, [0, -1]], 13))
    _, param_id = _unique_rows(round_sig(params, 13))
    diag_id = At.diagonal_ids()
    cols, rows, bids = _column_structure(At)
    starts = np.searchsorted(cols, np.arange(E + 1))
    width = int(np.diff(starts).max()) if len(cols) else 0
    keys = np.full((E, 3 + width), -1, dtype=np.int64)
    keys[:, 0] = diag_id
    keys[:, 1] = param_id
    keys[:, 2] = alpha_id
    if width:
        # sort each column's off-diagonal block ids so row order does not matter
        o = np.lexsort((bids, cols))
        cs, bs = cols[o], bids[o]
        rank = np.arange(len(cs)) - starts[cs]
        keys[cs, 3 + rank] = bs
    ukeys, qid = _unique_rows(keys)
    rep = np.zeros(len(ukeys), dtype=int)
    rep[qid[::-1]] = np.arange(E)[::-1]

    const_rows = np.arange(d) * nv  # constant mode of each velocity component
    blocks = np.empty((len(ukeys), n, n))
    for k, i in enumerate(rep):
        zs, zu, wu, wp = params[i]
        zeta_rows = np.r_[np.full(d * nv, zs), np.full(n - d * nv, zu)]
        rhs = zeta_rows * np.r_[np.full(d * nv, wu), np.full(n - d * nv, wp)]
        sl = slice(starts[i], starts[i + 1])
        off = [At.blocks[b][const_rows] for b in bids[sl]]
        off_rows = np.vstack(off) if off else np.zeros((0, n))
        diag = At.blocks[diag_id[i]] if diag_id[i] >= 0 else np.zeros((n, n))
        Qt = solve_block_lstsq(diag, off_rows, zeta_rows, rhs)
        a = alpha[i]
        blocks[k] = a[:, None] * Qt * a[None, :]
    Q = BlockMatrix.block_diagonal(qid, blocks)
    if colors is None:
        colors = color_elements(op.level, face_adjacency(op.level))
    return SmootherQ(op, Q, colors, alpha, lam)


def least_squares_shape(op: StokesOperator, element: int) -> tuple[int, int]:
    """(m, n) of the least-squares matrix assembled for ``element``."""
    A = op.A
    ell = int(np.sum((A.col == element) & (A.row != element)))
    return op.n + op.dim * ell, op.n


def cost_ratio(dim: int, p: int, ell: int) -> float:
    """Relative least-squares cost m n^2 / n^3 = m / n."""
    n = dim * (p + 1) ** dim + p ** dim
    return (n + dim * ell) / n
