"""Two-grid local Fourier analysis and the smoother parameter search.

The analysis runs the actual smoother and transfer operators on a virtual
infinite grid.  A grid function x_c = X_{c mod 2} exp(i theta . c) is stored
by its 2^d patch matrices X_a; stencils pick up the phase factor of their
offset, so one two-level cycle only touches the patch.  Everything that does
not depend on the smoother parameters (stencil phases, coarse pseudoinverse,
transfer phases) is cached per frequency set.
"""
from __future__ import annotations

import csv
import heapq
import itertools
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .assembly import FluxConfig, StokesOperator, assemble_stokes
from .mesh import build_mesh
from .multigrid import injection_blocks
from .smoother import SmootherParams, alpha_vector, build_Q, compute_scales

REGIMES = ("standard", "stress", "inviscid")
NEAR_OPTIMAL_EXPONENT = 1 / 1.1
CENTROID_EXPONENT = 1 / 1.05
N_TARGET = 16
MAX_EVALUATIONS = 100_000
PINV_RTOL = 1e-10

# Centroid of the near-optimal region per (dim, degree, regime).
_BUILTIN = {
    (2, 1, "standard"): (0.406, 1.19, 1.06),
    (2, 1, "stress"): (0.594, 1.22, 1.25),
    (2, 1, "inviscid"): (0.414, 1.0, 1.09),
    (2, 2, "standard"): (0.563, 0.984, 0.922),
    (2, 2, "stress"): (1.38, 0.984, 0.75),
    (2, 2, "inviscid"): (3.13, 0.734, 0.625),
    (2, 3, "standard"): (0.563, 1.02, 0.742),
    (2, 3, "stress"): (0.813, 1.1, 0.766),
    (2, 3, "inviscid"): (3.5, 0.906, 0.531),
    (3, 1, "standard"): (0.328, 1.13, 1.25),
    (3, 1, "stress"): (0.563, 1.09, 0.938),
    (3, 1, "inviscid"): (0.367, 1.01, 1.03),
    (3, 2, "standard"): (0.875, 0.992, 0.578),
    (3, 2, "stress"): (1.0, 1.04, 0.625),
    (3, 2, "inviscid"): (2.38, 0.75, 0.516),
    (3, 3, "standard"): (0.5, 0.984, 0.531),
    (3, 3, "stress"): (0.875, 1.04, 0.578),
    (3, 3, "inviscid"): (2.25, 0.797, 0.578),
}

# Bounding box (lower corner, upper corner) of the near-optimal region.
BUILTIN_BOXES = {
    (2, 1, "standard"): ((0.23, 1, 0.24), (0.91, 1.4, 1.8)),
    (2, 1, "stress"): ((0.44, 1, 0.53), (0.95, 1.4, 1.8)),
    (2, 1, "inviscid"): ((0.31, 0.95, 0.74), (0.56, 1, 1.5)),
    (2, 2, "standard"): ((0.39, 0.88, 0.73), (0.88, 1.1, 1.1)),
    (2, 2, "stress"): ((0.49, 0.93, 0.62), (3.3, 1.1, 0.97)),
    (2, 2, "inviscid"): ((2.1, 0.65, 0.48), (4.6, 0.86, 0.78)),
    (2, 3, "standard"): ((0.32, 0.94, 0.66), (1.1, 1.1, 0.91)),
    (2, 3, "stress"): ((0.35, 1, 0.63), (2.2, 1.2, 0.96)),
    (2, 3, "inviscid"): ((2.7, 0.79, 0.42), (4.9, 1, 0.71)),
    (3, 1, "standard"): ((0.21, 0.81, 0.34), (0.61, 1.4, 1.8)),
    (3, 1, "stress"): ((0.36, 0.92, 0.43), (0.9, 1.3, 1.8)),
    (3, 1, "inviscid"): ((0.32, 0.95, 0.81), (0.45, 1, 1.2)),
    (3, 2, "standard"): ((0.28, 0.9, 0.43), (1.3, 1.1, 0.84)),
    (3, 2, "stress"): ((0.32, 0.96, 0.43), (2.2, 1.1, 0.87)),
    (3, 2, "inviscid"): ((1.9, 0.63, 0.44), (2.9, 0.84, 0.69)),
    (3, 3, "standard"): ((0.25, 0.93, 0.43), (1.5, 1, 0.71)),
    (3, 3, "stress"): ((0.37, 0.98, 0.51), (2.5, 1.1, 0.71)),
    (3, 3, "inviscid"): ((1.7, 0.71, 0.45), (3.1, 0.87, 0.7)),
}


def builtin_params(dim: int, degree: int, form: str = "standard"
                   ) -> tuple[SmootherParams, SmootherParams]:
    """(steady, inviscid) smoother parameters for ``form`` in {standard, stress}.

    The inviscid set is the one used in the zero-viscosity limit of unsteady
    problems; passing ``form="inviscid"`` returns it twice.
    """
    if dim not in (2, 3) or degree not in (1, 2, 3):
        raise ValueError("builtin parameters exist for dim in {2,3} and degree in {1,2,3}")
    if form not in REGIMES:
        raise ValueError(f"unknown form {form!r}")
    steady = SmootherParams.from_triple(_BUILTIN[(dim, degree, form)])
    inviscid = SmootherParams.from_triple(_BUILTIN[(dim, degree, "inviscid")])
    return steady, inviscid


def theta_grid(n: int, dim: int) -> np.ndarray:
    """All frequencies in (Theta_n)^d with Theta_n = {2 pi (i - 1/2) / n}, shape (n^d, d)."""
    t = 2 * np.pi * (np.arange(1, n + 1) - 0.5) / n
    return np.array(list(itertools.product(t, repeat=dim)))


@dataclass
class LfaConfig:
    dim: int
    degree: int
    regime: str = "standard"
    nu1: int = 3
    nu2: int = 3

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ValueError(f"regime must be one of {REGIMES}")
        if self.dim not in (2, 3) or self.degree < 1:
            raise ValueError("invalid dimension or degree")

    def assemble(self, cells: int, delta: Optional[float] = None) -> StokesOperator:
        """Periodic operator; ``delta`` (default: the mesh size) is used when mu = 0.

        With mu = 0 the two-grid propagator depends on delta only through
        delta / h on each level, so both levels must share one delta.
        """
        level = build_mesh(self.dim, cells, "periodic")
        gamma = 1 if self.regime == "stress" else 0
        if self.regime == "inviscid":
            delta = level.h if delta is None else delta
            return assemble_stokes(level, self.degree, 0, FluxConfig(), (0.0,), (1.0,), delta)
        return assemble_stokes(level, self.degree, gamma, FluxConfig(), (1.0,), (0.0,), None)


def _stencil(op: StokesOperator) -> tuple[np.ndarray, np.ndarray]:
    """Offsets (k, d) and blocks (k, n, n) of the translation-invariant row of element 0."""
    lv = op.level
    A = op.A
    sel = A.row == 0
    cols = A.col[sel]
    off = (lv.coords[cols] - lv.coords[0] + lv.n // 2) % lv.n - lv.n // 2
    if len({tuple(o) for o in off}) != len(off) or np.abs(off).max() >= lv.n // 2:
        raise ValueError("stencil aliases on the reference grid")
    return off, A.blocks[A.bid[sel]]


def _patch_codes(dim: int) -> np.ndarray:
    """Patch cell positions a in {0,1}^d, ordered by code sum_k a_k 2^k."""
    return np.array([[(c >> k) & 1 for k in range(dim)] for c in range(2 ** dim)])


CACHE_BYTES = 256 * 2 ** 20


def _half_set(thetas: np.ndarray) -> np.ndarray:
    """One representative of each pair {theta, -theta} (mod 2 pi)."""
    key = np.round(np.mod(thetas, 2 * np.pi), 12)
    neg = np.round(np.mod(-thetas, 2 * np.pi), 12)
    keep = []
    seen = set()
    for k, (a, b) in enumerate(zip(map(tuple, key), map(tuple, neg))):
        if b in seen:
            continue
        seen.add(a)
        keep.append(k)
    return thetas[keep]


class FrequencyCache:
    """Parameter-independent data of the two-grid symbol for a batch of frequencies.

    ``symbol`` is the fine operator on the patch, shape (ntheta, 2^d n, 2^d n):
    block (a, b) sums the stencil blocks whose offset maps cell a to b.
    """

    def __init__(self, ctx: "LfaContext", thetas: np.ndarray):
        self.thetas = np.atleast_2d(thetas)
        a = ctx.patch
        P, n = len(a), ctx.n
        phase = np.exp(1j * self.thetas @ ctx.offsets.T)
        target = np.array([[_code((a_ + o) % 2) for o in ctx.offsets] for a_ in a])
        S = np.zeros((len(self.thetas), P, P, n, n), dtype=complex)
        for ai in range(P):
            for k, blk in enumerate(ctx.blocks):
                S[:, ai, target[ai, k]] += phase[:, k, None, None] * blk
        self.symbol = S.transpose(0, 1, 3, 2, 4).reshape(len(self.thetas), P * n, P * n)
        # rows of each color, sliced once for the sweeps
        self.symbol_rows = [np.ascontiguousarray(self.symbol[:, _color_rows(ctx, c)])
                            for c in (0, 1)]
        # restriction and interpolation phases per patch cell, shape (ntheta, 2^d)
        self.cell_phase = np.exp(1j * self.thetas @ a.T)
        # coarse symbol at 2 theta and its balanced pseudoinverse
        cphase = np.exp(2j * self.thetas @ ctx.coarse_offsets.T)
        Ac = np.einsum("to,oij->tij", cphase, ctx.coarse_blocks)
        D = ctx.coarse_alpha
        At = D[None, :, None] * Ac * D[None, None, :]
        At = 0.5 * (At + np.conj(np.swapaxes(At, 1, 2)))
        lam, V = np.linalg.eigh(At)
        cut = PINV_RTOL * np.abs(lam).max(axis=1, keepdims=True)
        inv = np.where(np.abs(lam) > cut, 1.0 / np.where(lam == 0, 1.0, lam), 0.0)
        pinv = np.einsum("tij,tj,tkj->tik", V, inv, np.conj(V))
        self.coarse_inv = D[None, :, None] * pinv * D[None, None, :]
        # restriction R = sum_a e^{i theta a} P_a^T [rows of a], interpolation its adjoint
        Pm = np.concatenate([ctx.interp[c] for c in range(P)], axis=0)  # (P n, n)
        cp = np.repeat(self.cell_phase, n, axis=1)  # (ntheta, P n)
        self.restrict = Pm.T[None] * cp[:, None, :]
        self.prolong = Pm[None] * np.conj(cp)[:, :, None]

    @property
    def nbytes(self) -> int:
        return 2 * self.symbol.nbytes + self.coarse_inv.nbytes + 2 * self.restrict.nbytes


def _code(a) -> int:
    return int(sum(int(v) << k for k, v in enumerate(a)))


class LfaContext:
    """Stencils, transfers and balancing data for one LFA configuration."""

    def __init__(self, config: LfaConfig, fine_cells: int = 8, chunk: int = 0):
        self.config = config
        d, p = config.dim, config.degree
        self.fine_op = config.assemble(fine_cells)
        coarse_op = config.assemble(fine_cells // 2, delta=self.fine_op.level.h)
        self.offsets, self.blocks = _stencil(self.fine_op)
        self.coarse_offsets, self.coarse_blocks = _stencil(coarse_op)
        self.coarse_alpha = alpha_vector(coarse_op, compute_scales(coarse_op))[0]
        self.patch = _patch_codes(d)
        self.interp = injection_blocks(p, d)  # indexed by patch code
        self.colors = self.patch.sum(axis=1) % 2  # red-black, cell 0 red
        self.n = self.fine_op.n
        per_theta = 16 * (len(self.patch) * self.n) ** 2 * 3
        self.chunk = chunk or max(1, CACHE_BYTES // per_theta)
        self._caches: dict = {}
        self._cached_bytes = 0

    def caches(self, thetas):
        """FrequencyCache objects covering ``thetas`` in chunks; kept while memory allows."""
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        for s in range(0, len(thetas), self.chunk):
            part = thetas[s:s + self.chunk]
            key = part.tobytes()
            fc = self._caches.get(key)
            if fc is None:
                fc = FrequencyCache(self, part)
                if self._cached_bytes + fc.nbytes <= 4 * CACHE_BYTES:
                    self._caches[key] = fc
                    self._cached_bytes += fc.nbytes
            yield fc

    def smoother_block(self, params: SmootherParams) -> np.ndarray:
        """The (shared) block Q_i of the periodic uniform smoother."""
        sm = build_Q(self.fine_op, params, params)
        ids = np.unique(sm.Q.bid)
        if len(ids) != 1:
            raise RuntimeError("periodic smoother blocks are not uniform")
        return sm.Q.blocks[ids[0]]


def _color_rows(ctx: LfaContext, c: int) -> np.ndarray:
    n = ctx.n
    return np.concatenate([np.arange(a * n, (a + 1) * n) for a in np.nonzero(ctx.colors == c)[0]])


def _patch_propagator(ctx: LfaContext, fc: FrequencyCache, Q: np.ndarray, X: np.ndarray):
    """Apply one two-grid cycle (b = 0) in place to X of shape (ntheta, 2^d n, m)."""
    cfg = ctx.config
    rows = [_color_rows(ctx, c) for c in (0, 1)]
    Qs = (Q.astype(complex), Q.T.astype(complex))
    n = ctx.n

    def update(c, Qm):
        # X[rows_c] += -(I x Q) S[rows_c, :] X, with Q applied as a single product
        Y = fc.symbol_rows[c] @ X
        nt, rc, m = Y.shape
        Y = Y.reshape(nt, rc // n, n, m).transpose(2, 0, 1, 3).reshape(n, -1)
        X[:, rows[c]] -= (Qm @ Y).reshape(n, nt, rc // n, m).transpose(1, 2, 0, 3).reshape(nt, rc, m)

    for _ in range(cfg.nu1):
        for c in (0, 1):
            update(c, Qs[0])
    C = fc.coarse_inv @ (fc.restrict @ (-(fc.symbol @ X)))
    X += fc.prolong @ C
    for _ in range(cfg.nu2):
        for c in (1, 0):
            update(c, Qs[1])
    return X


def two_grid_patch(ctx: LfaContext, thetas, params: Optional[SmootherParams] = None,
                   full: bool = False, Q: Optional[np.ndarray] = None) -> np.ndarray:
    """Patch matrices of the two-grid error propagator.

    Returns X of shape (ntheta, 2^d, n, m).  With ``full=False`` the input is
    x_c = sigma exp(i theta . c) and m = n; with ``full=True`` each patch cell
    carries independent coefficients and m = 2^d n, so that X reshaped to
    (2^d n, 2^d n) is the propagator on the whole theta-mode subspace.
    ``Q`` overrides the smoother block.
    """
    if Q is None:
        Q = ctx.smoother_block(params)
    P, n = len(ctx.patch), ctx.n
    out = []
    for fc in ctx.caches(thetas):
        nt = len(fc.thetas)
        if full:
            X = np.broadcast_to(np.eye(P * n, dtype=complex), (nt, P * n, P * n)).copy()
        else:
            X = np.broadcast_to(np.tile(np.eye(n, dtype=complex), (P, 1)), (nt, P * n, n)).copy()
        out.append(_patch_propagator(ctx, fc, Q, X).reshape(nt, P, n, -1))
    return np.concatenate(out)


def eval_rho_theta(ctx: LfaContext, thetas, params: Optional[SmootherParams] = None,
                   Q: Optional[np.ndarray] = None) -> np.ndarray:
    """rho(theta) = max over patch cells of the spectral radius of X_a, per frequency."""
    X = two_grid_patch(ctx, thetas, params, Q=Q)
    ev = np.linalg.eigvals(X)
    return np.abs(ev).max(axis=(1, 2))


POWER_BOUND_SQUARINGS = 5


def max_spectral_radius(X: np.ndarray) -> float:
    """Largest spectral radius over a stack of square matrices.

    ||X^k||_F^(1/k) with k = 2^POWER_BOUND_SQUARINGS bounds rho(X) from
    above, so eigenvalues are only computed for matrices whose bound exceeds
    the largest radius found so far.  The result equals the exact maximum.
    """
    n = X.shape[-1]
    M = X.reshape(-1, n, n)
    if not np.all(np.isfinite(M)):
        return math.inf
    B = M.copy()
    logn = np.zeros(len(M))
    for _ in range(POWER_BOUND_SQUARINGS):
        B = B @ B
        nrm = np.linalg.norm(B, axis=(1, 2))
        nrm = np.where(nrm > 0, nrm, 1.0)
        B /= nrm[:, None, None]
        logn = 2.0 * logn + np.log(nrm)
    bound = np.exp(logn / 2 ** POWER_BOUND_SQUARINGS)
    order = np.argsort(-bound)
    best = float(np.abs(np.linalg.eigvals(M[order[0]])).max())
    rest = order[1:][bound[order[1:]] > best]
    if len(rest):
        best = max(best, float(np.abs(np.linalg.eigvals(M[rest])).max()))
    return best


def eval_rho(ctx: LfaContext, params: SmootherParams, current_best: float = math.inf,
             exponent: float = NEAR_OPTIMAL_EXPONENT) -> float:
    """Coarse (6^d) scan with early exits, then the fine (12^d) scan."""
    d = ctx.config.dim
    Q = ctx.smoother_block(params)
    rho_c = max_spectral_radius(two_grid_patch(ctx, _half_set(theta_grid(6, d)), Q=Q))
    if not np.isfinite(rho_c) or rho_c > 1.0:
        return rho_c
    if current_best < 1.0 and rho_c > current_best ** exponent:
        return rho_c
    rho_f = max_spectral_radius(two_grid_patch(ctx, _half_set(theta_grid(12, d)), Q=Q))
    return max(rho_c, rho_f)


@dataclass
class LfaResult:
    points: np.ndarray  # (k, 3)
    rho: np.ndarray  # (k,)
    rho_star: float
    centroid: np.ndarray
    box_lo: np.ndarray
    box_hi: np.ndarray
    step: np.ndarray
    evaluations: int
    budget_exceeded: bool = False
    config: Optional[LfaConfig] = field(default=None, repr=False)

    def region(self, exponent: float) -> np.ndarray:
        """Points with rho <= rho_star^exponent."""
        return self.points[self.rho <= self.rho_star ** exponent]

    def write_cloud(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["zeta_u", "omega_u", "omega_p", "rho"])
            for z, r in zip(self.points, self.rho):
                w.writerow([format(v, ".17g") for v in (*z, r)])

    def write_region(self, path, exponent: float = NEAR_OPTIMAL_EXPONENT) -> None:
        """Near-optimal points, for drawing the region surface externally."""
        sel = self.rho <= self.rho_star ** exponent
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["zeta_u", "omega_u", "omega_p", "rho"])
            for z, r in zip(self.points[sel], self.rho[sel]):
                w.writerow([format(v, ".17g") for v in (*z, r)])


def search_params(ctx: LfaContext, n_target: int = N_TARGET,
                  exponent: float = NEAR_OPTIMAL_EXPONENT,
                  max_evaluations: int = MAX_EVALUATIONS, seed=(1.0, 1.0, 1.0),
                  step: float = 0.25, zeta_sigma: Optional[float] = None,
                  progress=None) -> LfaResult:
    """Adaptive lattice exploration of (zeta_u, omega_u, omega_p).

    Points are visited in order of increasing rho (ties broken by coordinates)
    and expanded into their 3x3x3 neighbourhood; the step along the least
    resolved axis is halved until the near-optimal set spans ``n_target``
    steps along every axis.
    """
    rho: dict = {}
    best = [math.inf]
    count = [0]
    exceeded = False

    def evaluate(z):
        if min(z) <= 0:
            return math.inf
        kw = {} if zeta_sigma is None else {"zeta_sigma": zeta_sigma}
        r = eval_rho(ctx, SmootherParams(*z, **kw), best[0], exponent)
        count[0] += 1
        if progress is not None:
            progress(z, r, count[0])
        return r

    def insert(z):
        if z not in rho:
            rho[z] = evaluate(z)
            if rho[z] < best[0]:
                best[0] = rho[z]
            return True
        return False

    seed = tuple(float(v) for v in seed)
    insert(seed)
    delta = np.full(3, float(step))
    while True:
        rho_star = best[0] ** exponent if best[0] < 1 else math.inf
        Z = np.array(list(rho.keys()))
        R = np.array(list(rho.values()))
        near = Z[R <= rho_star]
        n_i = (near.max(axis=0) - near.min(axis=0)) / delta if len(near) else np.zeros(3)
        if n_i.min() >= n_target or exceeded:
            break
        j = int(np.argmin(n_i))
        delta[j] *= 0.5
        heap = [(r, z) for z, r in rho.items()]
        heapq.heapify(heap)
        visited = set()
        while heap:
            r, z = heapq.heappop(heap)
            if z in visited:
                continue
            visited.add(z)
            if best[0] < 1 and r > best[0] ** exponent:
                break
            if not np.isfinite(r):
                continue
            for steps in itertools.product((-1, 0, 1), repeat=3):
                y = tuple(float(z[i] + steps[i] * delta[i]) for i in range(3))
                if insert(y):
                    heapq.heappush(heap, (rho[y], y))
            if count[0] >= max_evaluations:
                exceeded = True
                break
    Z = np.array(list(rho.keys()))
    R = np.array(list(rho.values()))
    order = np.lexsort(Z.T[::-1])
    Z, R = Z[order], R[order]
    rstar = float(R.min())
    cen = Z[R <= rstar ** CENTROID_EXPONENT].mean(axis=0)
    box = Z[R <= rstar ** exponent]
    return LfaResult(Z, R, rstar, cen, box.min(axis=0), box.max(axis=0), delta, count[0],
                     exceeded, ctx.config)
