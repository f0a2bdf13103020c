"""Block-sparse matrices with a shared table of dense blocks.

On uniform grids the same few dense blocks recur at almost every element, so
each nonzero block position stores only an index ``bid`` into ``blocks``.
Products and sums build their results symbolically: an output block is keyed
by the ids of the input blocks that produce it, and each distinct key is
evaluated once.  A 256^2 grid therefore carries a handful of dense blocks
instead of a few hundred thousand.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp


def _unique_rows(keys: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unique rows of a 2D array and the inverse map (first-occurrence order)."""
    if keys.shape[0] == 0:
        return keys, np.zeros(0, dtype=int)
    uniq, first, inv = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    # reorder so ids follow first occurrence; keeps ids stable across runs
    order = np.argsort(first, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    return uniq[order], rank[inv.ravel()]


def round_sig(a: np.ndarray, digits: int = 12) -> np.ndarray:
    """Round to ``digits`` significant digits (zeros stay zero)."""
    a = np.asarray(a, dtype=float)
    mag = np.where(a == 0, 0.0, np.floor(np.log10(np.abs(np.where(a == 0, 1.0, a)))))
    scale = 10.0 ** (digits - 1 - mag)
    return np.round(a * scale) / scale


class BlockMatrix:
    """Sparse matrix of ``nrows x ncols`` dense blocks of a fixed shape.

    Entries are unique (row, col) pairs sorted row-major.
    """

    def __init__(self, shape, row, col, bid, blocks, *, check=True):
        self.shape = (int(shape[0]), int(shape[1]))
        row = np.asarray(row, dtype=np.int64)
        col = np.asarray(col, dtype=np.int64)
        bid = np.asarray(bid, dtype=np.int64)
        blocks = np.asarray(blocks)
        if blocks.ndim != 3:
            raise ValueError("blocks must have shape (nblocks, r, c)")
        if check:
            order = np.lexsort((col, row))
            row, col, bid = row[order], col[order], bid[order]
            if len(row) > 1:
                dup = (np.diff(row) == 0) & (np.diff(col) == 0)
                if dup.any():
                    raise ValueError("duplicate block positions")
        self.row, self.col, self.bid = row, col, bid
        self.blocks = blocks
        self._groups = None

    # ------------------------------------------------------------------ basics
    @property
    def nnzb(self) -> int:
        return len(self.row)

    @property
    def block_shape(self) -> tuple[int, int]:
        return self.blocks.shape[1], self.blocks.shape[2]

    @property
    def dtype(self):
        return self.blocks.dtype

    def __repr__(self) -> str:
        return (f"BlockMatrix({self.shape[0]}x{self.shape[1]} blocks of {self.block_shape}, "
                f"nnzb={self.nnzb}, unique={len(self.blocks)})")

    @classmethod
    def from_atoms(cls, shape, row, col, coefs, atoms, digits=12):
        """Blocks given as linear combinations of a fixed set of atom matrices.

        Contributions at the same position are summed.  Blocks whose
        coefficient vectors agree to ``digits`` significant digits share a
        stored block.
        """
        row = np.asarray(row, dtype=np.int64)
        col = np.asarray(col, dtype=np.int64)
        atoms = np.asarray(atoms)
        coefs = np.asarray(coefs, dtype=float).reshape(len(row), len(atoms))
        ncols = int(shape[1])
        pos = row * ncols + col
        upos, inv = np.unique(pos, return_inverse=True)
        summed = np.zeros((len(upos), coefs.shape[1]))
        np.add.at(summed, inv, coefs)
        keys, bid = _unique_rows(round_sig(summed, digits))
        # evaluate each unique block from a representative's exact coefficients
        rep = np.zeros(len(keys), dtype=np.int64)
        rep[bid[::-1]] = np.arange(len(bid))[::-1]
        blocks = np.tensordot(summed[rep], atoms, axes=(1, 0))
        return cls(shape, upos // ncols, upos % ncols, bid, blocks, check=False)

    @classmethod
    def block_diagonal(cls, ids, blocks):
        """Block-diagonal matrix with block ``blocks[ids[i]]`` at (i, i)."""
        ids = np.asarray(ids, dtype=np.int64)
        n = len(ids)
        r = np.arange(n)
        return cls((n, n), r, r, ids, blocks, check=False)

    @classmethod
    def scalar_diagonal(cls, values, size):
        """Block-diagonal matrix with ``values[i] * I(size)`` on block i."""
        values = np.asarray(values, dtype=float)
        uniq, ids = np.unique(values, return_inverse=True)
        blocks = uniq[:, None, None] * np.eye(size)[None]
        return cls.block_diagonal(ids.ravel(), blocks)

    # ------------------------------------------------------------- structure ops
    @property
    def T(self) -> "BlockMatrix":
        return BlockMatrix((self.shape[1], self.shape[0]), self.col, self.row, self.bid,
                           np.ascontiguousarray(self.blocks.transpose(0, 2, 1)))

    def map_blocks(self, fn) -> "BlockMatrix":
        """Apply ``fn`` to the stacked unique blocks (same sparsity)."""
        return BlockMatrix(self.shape, self.row, self.col, self.bid, fn(self.blocks), check=False)

    def scale(self, c: float) -> "BlockMatrix":
        return self.map_blocks(lambda b: c * b)

    def matmul(self, other: "BlockMatrix") -> "BlockMatrix":
        """Block product, interning output blocks by their input-id pairs."""
        if self.shape[1] != other.shape[0]:
            raise ValueError("inner block dimensions differ")
        if self.block_shape[1] != other.block_shape[0]:
            raise ValueError("inner dense dimensions differ")
        ystart = np.searchsorted(other.row, np.arange(other.shape[0] + 1))
        counts = (ystart[1:] - ystart[:-1])[self.col]
        total = int(counts.sum())
        r, c = self.block_shape[0], other.block_shape[1]
        if total == 0:
            return BlockMatrix((self.shape[0], other.shape[1]), [], [], [],
                               np.zeros((0, r, c), dtype=np.result_type(self.dtype, other.dtype)))
        xi = np.repeat(np.arange(self.nnzb), counts)
        offs = np.cumsum(counts) - counts
        yi = ystart[self.col][xi] + (np.arange(total) - offs[xi])
        I = self.row[xi]
        J = other.col[yi]
        nby = len(other.blocks)
        code = self.bid[xi] * nby + other.bid[yi]
        order = np.lexsort((code, J, I))
        I, J, code = I[order], J[order], code[order]
        new = np.ones(total, dtype=bool)
        new[1:] = (I[1:] != I[:-1]) | (J[1:] != J[:-1])
        gid = np.cumsum(new) - 1
        gstart = np.nonzero(new)[0]
        ngroups = len(gstart)
        slot = np.arange(total) - gstart[gid]
        width = int(slot.max()) + 1
        keys = np.full((ngroups, width), -1, dtype=np.int64)
        keys[gid, slot] = code
        ukeys, bid = _unique_rows(keys)
        blocks = np.zeros((len(ukeys), r, c), dtype=np.result_type(self.dtype, other.dtype))
        for s in range(width):
            k = ukeys[:, s]
            ok = k >= 0
            if ok.any():
                blocks[ok] += np.matmul(self.blocks[k[ok] // nby], other.blocks[k[ok] % nby])
        return BlockMatrix((self.shape[0], other.shape[1]), I[gstart], J[gstart], bid, blocks,
                           check=False)

    def __matmul__(self, other):
        if isinstance(other, BlockMatrix):
            return self.matmul(other)
        return self.apply(other)

    @staticmethod
    def add(mats, coefs=None) -> "BlockMatrix":
        """Linear combination of block matrices with equal block shapes."""
        mats = list(mats)
        if coefs is None:
            coefs = [1.0] * len(mats)
        shape = mats[0].shape
        bshape = mats[0].block_shape
        for m in mats:
            if m.shape != shape or m.block_shape != bshape:
                raise ValueError("incompatible operands")
        return BlockMatrix.compose([[m] for m in mats], coefs=coefs, sum_rows=True)

    def __add__(self, other):
        return BlockMatrix.add([self, other])

    def __sub__(self, other):
        return BlockMatrix.add([self, other], [1.0, -1.0])

    def __neg__(self):
        return self.scale(-1.0)

    @staticmethod
    def compose(grid, coefs=None, sum_rows=False) -> "BlockMatrix":
        """Assemble larger dense blocks from a grid of block matrices.

        ``grid[a][b]`` (or None) supplies dense rows a and dense columns b of
        each output block.  With ``sum_rows`` the grid is a single column whose
        entries are summed (weighted by ``coefs``) instead of stacked.
        """
        na = len(grid)
        nbc = len(grid[0])
        present = [(a, b, m) for a in range(na) for b in range(nbc)
                   if (m := grid[a][b]) is not None]
        if not present:
            raise ValueError("empty composition")
        shape = present[0][2].shape
        if sum_rows:
            rdims = [present[0][2].block_shape[0]]
            cdims = [present[0][2].block_shape[1]]
        else:
            rdims = [next(m.block_shape[0] for m in grid[a] if m is not None) for a in range(na)]
            cdims = [next(grid[a][b].block_shape[1] for a in range(na) if grid[a][b] is not None)
                     for b in range(nbc)]
        rows, cols, slots, bids = [], [], [], []
        for k, (a, b, m) in enumerate(present):
            if m.shape != shape:
                raise ValueError("operands have different block grids")
            rows.append(m.row)
            cols.append(m.col)
            slots.append(np.full(m.nnzb, k))
            bids.append(m.bid)
        row = np.concatenate(rows)
        col = np.concatenate(cols)
        slot = np.concatenate(slots)
        bid = np.concatenate(bids)
        pos = row * shape[1] + col
        upos, inv = np.unique(pos, return_inverse=True)
        keys = np.full((len(upos), len(present)), -1, dtype=np.int64)
        keys[inv.ravel(), slot] = bid
        ukeys, newbid = _unique_rows(keys)
        dtype = np.result_type(*[m.dtype for _, _, m in present])
        R, C = sum(rdims), sum(cdims)
        blocks = np.zeros((len(ukeys), R, C), dtype=dtype)
        roff = np.concatenate([[0], np.cumsum(rdims)])
        coff = np.concatenate([[0], np.cumsum(cdims)])
        for k, (a, b, m) in enumerate(present):
            ok = ukeys[:, k] >= 0
            if not ok.any():
                continue
            sub = m.blocks[ukeys[ok, k]]
            if sum_rows:
                w = 1.0 if coefs is None else coefs[k]
                blocks[ok] += w * sub
            else:
                blocks[np.ix_(ok, range(roff[a], roff[a + 1]), range(coff[b], coff[b + 1]))] = sub
        return BlockMatrix(shape, upos // shape[1], upos % shape[1], newbid, blocks, check=False)

    def drop_zeros(self, rtol: float = 0.0) -> "BlockMatrix":
        """Remove entries whose block max-norm is <= rtol * (largest block max-norm)."""
        norms = np.abs(self.blocks).reshape(len(self.blocks), -1).max(axis=1) \
            if len(self.blocks) else np.zeros(0)
        cut = rtol * (norms.max() if len(norms) else 0.0)
        keep = norms[self.bid] > cut
        used, newbid = np.unique(self.bid[keep], return_inverse=True)
        return BlockMatrix(self.shape, self.row[keep], self.col[keep], newbid.ravel(),
                           self.blocks[used], check=False)

    def compress(self) -> "BlockMatrix":
        """Drop unreferenced stored blocks."""
        used, newbid = np.unique(self.bid, return_inverse=True)
        return BlockMatrix(self.shape, self.row, self.col, newbid.ravel(), self.blocks[used],
                           check=False)

    def diagonal_ids(self) -> np.ndarray:
        """Block id of each diagonal block (-1 if structurally absent)."""
        out = np.full(min(self.shape), -1, dtype=np.int64)
        d = self.row == self.col
        out[self.row[d]] = self.bid[d]
        return out

    def entries_in_rows(self, rows) -> np.ndarray:
        """Indices of stored entries whose block row is in ``rows``."""
        mask = np.zeros(self.shape[0], dtype=bool)
        mask[np.asarray(rows)] = True
        return np.nonzero(mask[self.row])[0]

    # -------------------------------------------------------------- application
    def _make_groups(self, entries):
        """Batches of entries sharing a block id with no repeated rows."""
        bid = self.bid[entries]
        row = self.row[entries]
        order = np.lexsort((row, bid))
        e = entries[order]
        b = bid[order]
        r = row[order]
        new = np.ones(len(e), dtype=bool)
        new[1:] = (b[1:] != b[:-1]) | (r[1:] != r[:-1])
        gstart = np.nonzero(new)[0]
        gid = np.cumsum(new) - 1
        rank = np.arange(len(e)) - gstart[gid]
        groups = []
        order2 = np.lexsort((rank, b))
        e, b, rank = e[order2], b[order2], rank[order2]
        brk = np.nonzero((np.diff(b) != 0) | (np.diff(rank) != 0))[0] + 1
        for chunk in np.split(np.arange(len(e)), brk):
            if len(chunk) == 0:
                continue
            ent = e[chunk]
            groups.append((int(b[chunk[0]]), self.row[ent], self.col[ent]))
        return groups

    @property
    def groups(self):
        if self._groups is None:
            self._groups = self._make_groups(np.arange(self.nnzb))
        return self._groups

    def apply(self, x, groups=None, out=None):
        """y = A x for x of shape (ncols, c) or (ncols, c, k)."""
        x = np.asarray(x)
        if groups is None:
            groups = self.groups
        r = self.block_shape[0]
        if out is None:
            out = np.zeros((self.shape[0], r) + x.shape[2:],
                           dtype=np.result_type(self.dtype, x.dtype))
        for b, rows, cols in groups:
            B = self.blocks[b]
            if x.ndim == 2:
                out[rows] += x[cols] @ B.T
            else:
                out[rows] += np.matmul(B, x[cols])
        return out

    # --------------------------------------------------------------- conversion
    def to_sparse(self) -> sp.csr_matrix:
        r, c = self.block_shape
        if self.nnzb == 0:
            return sp.csr_matrix((self.shape[0] * r, self.shape[1] * c), dtype=self.dtype)
        data = self.blocks[self.bid]
        bsr = sp.bsr_matrix((data, self.col, np.searchsorted(self.row, np.arange(self.shape[0] + 1))),
                            shape=(self.shape[0] * r, self.shape[1] * c))
        return bsr.tocsr()

    def to_dense(self) -> np.ndarray:
        return self.to_sparse().toarray()

    def get_block(self, i: int, j: int):
        hit = np.nonzero((self.row == i) & (self.col == j))[0]
        if len(hit) == 0:
            return None
        return self.blocks[self.bid[hit[0]]]
