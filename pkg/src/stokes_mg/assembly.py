"""Mixed-degree LDG assembly of the (unsteady) multiphase Stokes operator.

Per-element unknowns are laid out as ``[u modes | v modes | (w modes) | p modes]``
with velocity in Q_p and pressure in Q_{p-1}.  All operators are stored as
:class:`BlockMatrix` instances over the element grid.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .basis import gauss_points, legendre_1d, reference_matrices
from .blockmatrix import BlockMatrix
from .mesh import BOUNDARY_D, BOUNDARY_N, INTERPHASE, INTRAPHASE, MeshLevel


def upwind_lambda(mu_minus, mu_plus):
    """Interface flux weight: 0, 0.5 or 1 as mu_minus is <, = or > mu_plus."""
    mu_minus = np.asarray(mu_minus, dtype=float)
    mu_plus = np.asarray(mu_plus, dtype=float)
    if np.any(mu_minus <= 0) or np.any(mu_plus <= 0):
        raise ValueError("viscosities must be positive")
    lam = np.where(mu_minus < mu_plus, 0.0, np.where(mu_minus > mu_plus, 1.0, 0.5))
    return float(lam) if lam.ndim == 0 else lam


def default_boundary_constant(p: int) -> float:
    return 1.0 if p == 1 else 16.0


@dataclass(frozen=True)
class PenaltyConfig:
    """Velocity penalty constants; each tau is constant * viscosity / h."""

    c_boundary: Optional[float] = None  # None selects 1 for p=1, else 16
    c_interphase: float = 16.0
    c_intraphase: float = 0.0

    def boundary(self, p: int) -> float:
        return default_boundary_constant(p) if self.c_boundary is None else self.c_boundary

    def __post_init__(self):
        for v in (self.c_boundary, self.c_interphase, self.c_intraphase):
            if v is not None and v < 0:
                raise ValueError("penalty constants must be nonnegative")


@dataclass(frozen=True)
class FluxConfig:
    lambda_rule: Callable = upwind_lambda
    penalty: PenaltyConfig = field(default_factory=PenaltyConfig)


@dataclass
class SourceData:
    """Source data evaluated at physical points.

    Volume callables take points of shape (npts, d).  Face callables take the
    points and the face normal (a length-d vector) and return (npts, d)
    vectors.  Missing entries are treated as zero.
    """

    f_vec: Optional[Callable] = None
    f_div: Optional[Callable] = None
    g_dirichlet: Optional[Callable] = None
    g_jump: Optional[Callable] = None
    h_stress: Optional[Callable] = None
    h_jump: Optional[Callable] = None


def _side_of_minus(sign):
    """Reference side (0 low, 1 high) of the minus element on a face."""
    return (np.asarray(sign) > 0).astype(int)


class _FaceInfo:
    """Per-face upwind weights, penalties and reference sides."""

    def __init__(self, level: MeshLevel, mu_elem, p, flux: FluxConfig):
        self.m = level.face_minus
        self.q = level.face_plus
        self.axis = level.face_axis
        self.sign = level.face_sign.astype(float)
        self.kind = level.face_kind
        self.tm = _side_of_minus(level.face_sign)
        self.tq = 1 - self.tm
        mu_m = mu_elem[self.m]
        qq = np.where(self.q >= 0, self.q, self.m)
        mu_q = mu_elem[qq]
        inter = self.kind == INTERPHASE
        self.lam = np.zeros(len(self.m))
        if inter.any():
            self.lam[inter] = flux.lambda_rule(mu_m[inter], mu_q[inter])


def _element_coefficients(level: MeshLevel, values, name: str) -> np.ndarray:
    values = np.atleast_1d(np.asarray(values, dtype=float))
    if len(values) == 1:
        values = np.repeat(values, level.num_phases)
    if level.num_phases > len(values):
        raise ValueError(f"{name} given for {len(values)} phases but the mesh has "
                         f"{level.num_phases}")
    return values[level.phase]


def assemble_gradient(level: MeshLevel, p: int, flux: FluxConfig = FluxConfig(),
                      viscosity: Sequence[float] = (1.0,), _faces=None) -> list:
    """LDG discrete gradient G = broken gradient + lifting, one operator per axis.

    ``viscosity`` only matters through the interface upwinding weights.
    """
    ref = reference_matrices(p, level.dim)
    mu = _element_coefficients(level, viscosity, "viscosity")
    fi = _faces if _faces is not None else _FaceInfo(level, mu, p, flux)
    E = level.num_elements
    h = level.h
    out = []
    for k in range(level.dim):
        atoms = np.stack([ref.G_broken[k]] + [ref.face[k][(a, b)] for a in (0, 1) for b in (0, 1)])
        rows, cols, coefs = [np.arange(E)], [np.arange(E)], []
        c0 = np.zeros((E, 5))
        c0[:, 0] = 1.0
        coefs.append(c0)

        def add(r, c, side_r, side_c, w):
            cc = np.zeros((len(r), 5))
            cc[np.arange(len(r)), 1 + 2 * side_r + side_c] = w
            rows.append(r)
            cols.append(c)
            coefs.append(cc)

        on = fi.axis == k
        s = fi.sign
        sel = on & (fi.kind == INTRAPHASE)
        add(fi.q[sel], fi.q[sel], fi.tq[sel], fi.tq[sel], s[sel])
        add(fi.q[sel], fi.m[sel], fi.tq[sel], fi.tm[sel], -s[sel])
        sel = on & (fi.kind == BOUNDARY_D)
        add(fi.m[sel], fi.m[sel], fi.tm[sel], fi.tm[sel], -s[sel])
        sel = on & (fi.kind == INTERPHASE)
        wl = (1.0 - fi.lam[sel]) * s[sel]
        wr = fi.lam[sel] * s[sel]
        add(fi.m[sel], fi.q[sel], fi.tm[sel], fi.tq[sel], wl)
        add(fi.m[sel], fi.m[sel], fi.tm[sel], fi.tm[sel], -wl)
        add(fi.q[sel], fi.q[sel], fi.tq[sel], fi.tq[sel], wr)
        add(fi.q[sel], fi.m[sel], fi.tq[sel], fi.tm[sel], -wr)
        G = BlockMatrix.from_atoms((E, E), np.concatenate(rows), np.concatenate(cols),
                                   np.concatenate(coefs) / h, atoms)
        out.append(G.drop_zeros())
    return out


def assemble_mixed_gradient(G: list, p: int, dim: int) -> list:
    """Projection of each gradient component onto Q_{p-1}."""
    P = reference_matrices(p, dim).P_down
    return [g.map_blocks(lambda b: np.matmul(P, b)) for g in G]


def assemble_penalty(level: MeshLevel, p: int, fi: _FaceInfo, tau: np.ndarray) -> BlockMatrix:
    """Velocity penalty matrix acting on one velocity component."""
    ref = reference_matrices(p, level.dim)
    d = level.dim
    E = level.num_elements
    atoms = np.stack([ref.face[k][(a, b)] for k in range(d) for a in (0, 1) for b in (0, 1)])
    atoms = atoms * level.h ** (d - 1)
    rows, cols, coefs = [np.zeros(0, int)], [np.zeros(0, int)], [np.zeros((0, 4 * d))]

    def add(sel, r, c, sr, sc, w):
        cc = np.zeros((int(sel.sum()), 4 * d))
        cc[np.arange(len(cc)), 4 * fi.axis[sel] + 2 * sr[sel] + sc[sel]] = w[sel]
        rows.append(r[sel])
        cols.append(c[sel])
        coefs.append(cc)

    sel = (fi.kind == BOUNDARY_D) & (tau > 0)
    add(sel, fi.m, fi.m, fi.tm, fi.tm, tau)
    sel = ((fi.kind == INTERPHASE) | (fi.kind == INTRAPHASE)) & (tau > 0)
    add(sel, fi.m, fi.m, fi.tm, fi.tm, tau)
    add(sel, fi.m, fi.q, fi.tm, fi.tq, -tau)
    add(sel, fi.q, fi.m, fi.tq, fi.tm, -tau)
    add(sel, fi.q, fi.q, fi.tq, fi.tq, tau)
    return BlockMatrix.from_atoms((E, E), np.concatenate(rows), np.concatenate(cols),
                                  np.concatenate(coefs), atoms)


@dataclass
class StokesOperator:
    """Assembled saddle-point operator with its building blocks."""

    A: BlockMatrix
    level: MeshLevel
    degree: int
    gamma: int
    viscosity: np.ndarray  # per element
    density: np.ndarray  # per element
    delta: Optional[float]
    flux: FluxConfig
    G: list
    Gtilde: list
    viscous: BlockMatrix  # velocity-velocity part (including mass term)

    @property
    def dim(self) -> int:
        return self.level.dim

    @property
    def nv(self) -> int:
        return (self.degree + 1) ** self.dim

    @property
    def np_(self) -> int:
        return self.degree ** self.dim

    @property
    def n(self) -> int:
        return self.dim * self.nv + self.np_

    @property
    def size(self) -> int:
        return self.level.num_elements * self.n

    @property
    def unsteady(self) -> bool:
        return self.delta is not None and bool(np.any(self.density > 0))

    def matvec(self, x: np.ndarray) -> np.ndarray:
        E = self.level.num_elements
        return self.A.apply(np.asarray(x).reshape(E, self.n)).reshape(-1)

    def to_dense(self) -> np.ndarray:
        return self.A.to_dense()

    def kernel(self) -> np.ndarray:
        """Orthonormal basis (rows) of the analytic kernel of this operator."""
        return kernel_basis(self)

    def dump_triplets(self, path) -> None:
        """Write nonzeros as 'row col value' lines."""
        S = self.A.to_sparse().tocoo()
        with open(path, "w") as fh:
            for r, c, v in zip(S.row, S.col, S.data):
                if v != 0.0:
                    fh.write(f"{r} {c} {v:.17g}\n")


def assemble_stokes(level: MeshLevel, p: int, gamma: int = 0, flux: FluxConfig = FluxConfig(),
                    viscosity: Sequence[float] = (1.0,), density: Sequence[float] = (0.0,),
                    delta: Optional[float] = None) -> StokesOperator:
    """Assemble the symmetric Stokes block operator on ``level``.

    ``viscosity`` and ``density`` are per-phase constants.  The mass term
    M_rho / delta enters only when ``delta`` is given.
    """
    if gamma not in (0, 1):
        raise ValueError("gamma must be 0 or 1")
    if delta is not None and delta <= 0:
        raise ValueError("delta must be positive")
    d = level.dim
    E = level.num_elements
    h = level.h
    mu = _element_coefficients(level, viscosity, "viscosity")
    rho = _element_coefficients(level, density, "density")
    if np.any(mu < 0) or np.any(rho < 0):
        raise ValueError("coefficients must be nonnegative")
    ref = reference_matrices(p, d)
    nv = ref.nv
    # upwinding compares positive values; zero viscosity only occurs single-phase
    fi = _FaceInfo(level, np.where(mu > 0, mu, 1.0), p, flux)
    G = assemble_gradient(level, p, flux, _faces=fi)
    Gt = assemble_mixed_gradient(G, p, d)
    Mmu = BlockMatrix.scalar_diagonal(mu * h ** d, nv)
    MG = [Mmu.matmul(g) for g in G]
    lap = BlockMatrix.add([g.T.matmul(mg) for g, mg in zip(G, MG)])
    pen = assemble_penalty(level, p, fi, _penalties(level, mu, p, flux, fi))
    diag_terms = [lap] + ([pen] if pen.nnzb else [])
    if delta is not None:
        diag_terms.append(BlockMatrix.scalar_diagonal(rho * h ** d / delta, nv))
    base = BlockMatrix.add(diag_terms)
    blocks = [[None] * (d + 1) for _ in range(d + 1)]
    for i in range(d):
        for j in range(d):
            terms = []
            if i == j:
                terms.append(base)
            if gamma:
                terms.append(G[j].T.matmul(MG[i]))
            if terms:
                blocks[i][j] = terms[0] if len(terms) == 1 else BlockMatrix.add(terms)
        blocks[i][d] = Gt[i].T.scale(-h ** d)
        blocks[d][i] = Gt[i].scale(-h ** d)
    A = BlockMatrix.compose(blocks).drop_zeros()
    viscous = BlockMatrix.compose([row[:d] for row in blocks[:d]])
    return StokesOperator(A, level, p, gamma, mu, rho, delta, flux, G, Gt, viscous)


def _penalties(level, mu, p, flux, fi) -> np.ndarray:
    h = level.h
    pen = flux.penalty
    mu_m = mu[fi.m]
    mu_q = mu[np.where(fi.q >= 0, fi.q, fi.m)]
    tau = np.zeros(len(fi.m))
    b = fi.kind == BOUNDARY_D
    tau[b] = pen.boundary(p) * mu_m[b] / h
    i = fi.kind == INTERPHASE
    tau[i] = pen.c_interphase * np.minimum(mu_m[i], mu_q[i]) / h
    o = fi.kind == INTRAPHASE
    tau[o] = pen.c_intraphase * mu_m[o] / h
    return tau


# --------------------------------------------------------------------- sources
@dataclass
class _FaceQuadrature:
    weights: np.ndarray  # (nq,)
    ref_points: list  # [axis][side] -> (nq, d) reference coordinates
    values_p: list  # [axis][side] -> (nv, nq)
    values_pm1: list  # [axis][side] -> (np, nq)


def _face_quadrature(p: int, d: int, npts: int) -> _FaceQuadrature:
    x, w = gauss_points(npts)
    if d > 1:
        grids, wts = _tensor_points(x, w, d - 1)
    else:
        grids, wts = np.zeros((1, 0)), np.ones(1)
    refs, vp, vq = [], [], []
    for k in range(d):
        per_r, per_p, per_q = [], [], []
        for t in (0, 1):
            pts = np.empty((len(grids), d))
            others = [a for a in range(d) if a != k]
            pts[:, others] = grids
            pts[:, k] = float(t)
            per_r.append(pts)
            per_p.append(_eval_modes(p, pts))
            per_q.append(_eval_modes(p - 1, pts))
        refs.append(per_r)
        vp.append(per_p)
        vq.append(per_q)
    return _FaceQuadrature(wts, refs, vp, vq)


def _eval_modes(q: int, pts: np.ndarray) -> np.ndarray:
    """Tensor modes of degree q at arbitrary reference points; (ndof, npts)."""
    d = pts.shape[1]
    vals = [legendre_1d(q, pts[:, a]) for a in range(d)]
    out = np.ones((1, len(pts)))
    for a in range(d):
        out = (vals[a][:, None, :] * out[None, :, :]).reshape(-1, len(pts))
    return out


def _tensor_points(x, w, d):
    """Tensor grid of 1D nodes with axis 0 fastest, and the product weights."""
    mesh = np.meshgrid(*([x] * d), indexing="ij")
    pts = np.stack([m.ravel() for m in mesh[::-1]], axis=-1)
    wmesh = np.meshgrid(*([w] * d), indexing="ij")
    wts = np.prod(np.stack([m.ravel() for m in wmesh], axis=-1), axis=1)
    return pts, wts


def _volume_quadrature(p: int, d: int, npts: int):
    x, w = gauss_points(npts)
    return _tensor_points(x, w, d)


def _face_values(fn, x, normal):
    out = np.asarray(fn(x, normal), dtype=float)
    return out.reshape(len(x), -1)


def assemble_rhs(op: StokesOperator, sources: SourceData, quad_points: Optional[int] = None
                 ) -> np.ndarray:
    """Right-hand side vector collecting all source contributions."""
    level = op.level
    p = op.degree
    d = level.dim
    E = level.num_elements
    h = level.h
    nv, npr = op.nv, op.np_
    nq = p + 2 if quad_points is None else quad_points
    bu = np.zeros((d, E, nv))
    bp = np.zeros((E, npr))
    # volume terms
    pts, wts = _volume_quadrature(p, d, nq)
    phi = _eval_modes(p, pts)
    psi = _eval_modes(p - 1, pts)
    X = (level.coords[:, None, :] + pts[None]) * h  # (E, nq, d)
    flat = X.reshape(-1, d)
    if sources.f_vec is not None:
        f = np.asarray(sources.f_vec(flat), dtype=float).reshape(E, -1, d)
        bu += h ** d * np.einsum("eqa,iq,q->aei", f, phi, wts)
    if sources.f_div is not None:
        f = np.asarray(sources.f_div(flat), dtype=float).reshape(E, -1)
        bp += h ** d * np.einsum("eq,iq,q->ei", f, psi, wts)

    # face terms
    fq = _face_quadrature(p, d, nq)
    fi = _FaceInfo(level, np.where(op.viscosity > 0, op.viscosity, 1.0), p, op.flux)
    tau = _penalties(level, op.viscosity, p, op.flux, fi)
    mu = op.viscosity
    Jg = np.zeros((d, d, E, nv))  # J_g[a, k] scaled by M (i.e. weak form vectors)
    area = h ** (d - 1)
    for f_idx_kind, fn in ((BOUNDARY_D, sources.g_dirichlet), (INTERPHASE, sources.g_jump),
                           (BOUNDARY_N, sources.h_stress), (INTERPHASE + 10, sources.h_jump)):
        if fn is None:
            continue
        kind = f_idx_kind % 10
        for k in range(d):
            for s in (-1, 1):
                sel = np.nonzero((fi.kind == kind) & (fi.axis == k) & (fi.sign == s))[0]
                if len(sel) == 0:
                    continue
                tm = int(s > 0)
                tq = 1 - tm
                m = fi.m[sel]
                q = fi.q[sel]
                normal = np.zeros(d)
                normal[k] = s
                Xf = (level.coords[m][:, None, :] + fq.ref_points[k][tm][None]) * h
                vals = _face_values(fn, Xf.reshape(-1, d), normal).reshape(len(sel), -1, d)
                wv = vals * fq.weights[None, :, None] * area  # (F, nq, d)
                Pm = np.einsum("fqa,iq->afi", wv, fq.values_p[k][tm])
                Pq = np.einsum("fqa,iq->afi", wv, fq.values_p[k][tq])
                Qm = np.einsum("fq,iq->fi", wv[..., k], fq.values_pm1[k][tm])
                Qq = np.einsum("fq,iq->fi", wv[..., k], fq.values_pm1[k][tq])
                lam = fi.lam[sel][None, :, None]
                if f_idx_kind == BOUNDARY_D:
                    for a in range(d):
                        np.add.at(Jg[a, k], m, s * Pm[a])
                        np.add.at(bu[a], m, tau[sel][:, None] * Pm[a])
                    np.add.at(bp, m, s * Qm)
                elif f_idx_kind == INTERPHASE:
                    lam1 = lam[0]
                    for a in range(d):
                        np.add.at(Jg[a, k], m, s * (1 - lam1) * Pm[a])
                        np.add.at(Jg[a, k], q, s * lam1 * Pq[a])
                        np.add.at(bu[a], m, tau[sel][:, None] * Pm[a])
                        np.add.at(bu[a], q, -tau[sel][:, None] * Pq[a])
                    np.add.at(bp, m, s * (1 - lam1) * Qm)
                    np.add.at(bp, q, s * lam1 * Qq)
                elif f_idx_kind == BOUNDARY_N:
                    for a in range(d):
                        np.add.at(bu[a], m, Pm[a])
                else:
                    lam1 = lam[0]
                    for a in range(d):
                        np.add.at(bu[a], m, lam1 * Pm[a])
                        np.add.at(bu[a], q, (1 - lam1) * Pq[a])

    if np.any(Jg):
        # sum_j G_j^T M_mu (J_g[a, j] + gamma J_g[j, a]); Jg already carries M
        for a in range(d):
            for j in range(d):
                w = Jg[a, j] + op.gamma * Jg[j, a]
                if not np.any(w):
                    continue
                bu[a] -= op.G[j].T.apply(mu[:, None] * w)
    x = np.concatenate([bu.transpose(1, 0, 2).reshape(E, d * nv), bp], axis=1)
    return x.reshape(-1)


# ---------------------------------------------------------------------- kernel
def field_coefficients(level: MeshLevel, p: int, poly) -> np.ndarray:
    """Modal coefficients (E, nv) of an affine field c0 + c . x given as (c0, c)."""
    c0, c = poly
    c = np.asarray(c, dtype=float)
    h = level.h
    nv = (p + 1) ** level.dim
    out = np.zeros((level.num_elements, nv))
    out[:, 0] = c0 + level.centers @ c
    for a in range(level.dim):
        # x_a = center_a + h (xi_a - 1/2) and xi - 1/2 = phi_1 / (2 sqrt 3)
        idx = (p + 1) ** a
        out[:, idx] = c[a] * h / (2.0 * np.sqrt(3.0))
    return out


def kernel_vectors(op: StokesOperator) -> list:
    """Analytic kernel of the assembled operator as a list of state vectors."""
    level = op.level
    d = level.dim
    E = level.num_elements
    nv = op.nv
    vecs = []

    def state(vel=None, pres=None):
        x = np.zeros((E, op.n))
        if vel is not None:
            for a in range(d):
                x[:, a * nv:(a + 1) * nv] = vel[a]
        if pres is not None:
            x[:, d * nv] = pres
        return x.reshape(-1)

    steady = not op.unsteady
    if steady and level.bc in ("periodic", "stress"):
        for a in range(d):
            vel = [np.zeros((E, nv)) for _ in range(d)]
            vel[a][:, 0] = 1.0
            vecs.append(state(vel))
    if steady and level.bc == "stress" and op.gamma == 1:
        for a in range(d):
            for b in range(a + 1, d):
                ca = np.zeros(d)
                cb = np.zeros(d)
                ca[b] = -1.0
                cb[a] = 1.0
                vel = [np.zeros((E, nv)) for _ in range(d)]
                vel[a] = field_coefficients(level, op.degree, (0.0, ca))
                vel[b] = field_coefficients(level, op.degree, (0.0, cb))
                vecs.append(state(vel))
    if level.bc in ("periodic", "dirichlet"):
        vecs.append(state(pres=np.ones(E)))
    return vecs


def kernel_basis(op: StokesOperator) -> np.ndarray:
    vecs = kernel_vectors(op)
    if not vecs:
        return np.zeros((0, op.size))
    Q, _ = np.linalg.qr(np.array(vecs).T)
    return Q.T


def project_out(x: np.ndarray, basis: np.ndarray) -> np.ndarray:
    """Remove the components of x along the orthonormal rows of ``basis``."""
    if len(basis) == 0:
        return x.copy()
    return x - basis.T @ (basis @ x)


def ell_count(dim: int, gamma: int) -> int:
    """Off-diagonal block count of an interior element on a uniform grid."""
    return 2 * dim + (dim * (dim - 1) if gamma else 0)
