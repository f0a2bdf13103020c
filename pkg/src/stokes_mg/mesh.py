"""Uniform Cartesian grids on the unit cube, their faces, phases and coarsening."""
from __future__ import annotations

import heapq
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

BC_KINDS = ("periodic", "dirichlet", "stress")

INTRAPHASE, INTERPHASE, BOUNDARY_D, BOUNDARY_N = 0, 1, 2, 3
FACE_KIND_NAMES = ("intraphase", "interphase", "boundary-D", "boundary-N")


class Face(NamedTuple):
    element_minus: int
    element_plus: int  # -1 on the domain boundary
    normal_axis: int
    normal_sign: int  # normal = sign * e_axis
    kind: str


@dataclass(frozen=True)
class BoxPhase:
    """Phase 0 inside the open box (lo, hi)^d, phase 1 outside."""

    lo: float = 0.25
    hi: float = 0.75

    def __call__(self, centers: np.ndarray) -> np.ndarray:
        inside = np.all((centers > self.lo) & (centers < self.hi), axis=-1)
        return np.where(inside, 0, 1)

    def check_aligned(self, n: int) -> None:
        for edge in (self.lo, self.hi):
            k = edge * n
            if abs(k - round(k)) > 1e-12:
                raise ValueError(
                    f"phase box edge {edge} does not lie on a face of the {n}-cell grid")


class MeshLevel:
    """One uniform level of n^d cells of width h = 1/n.

    Cells are numbered lexicographically with axis 0 fastest. Faces are stored
    as parallel arrays; ``face_minus`` is the trace taken along -n.
    """

    def __init__(self, dim: int, n: int, bc: str, phase=None):
        if dim not in (2, 3):
            raise ValueError(f"dimension must be 2 or 3, got {dim}")
        if n < 1:
            raise ValueError("cells_per_dim must be >= 1")
        if bc not in BC_KINDS:
            raise ValueError(f"unknown boundary condition {bc!r}")
        self.dim = dim
        self.n = n
        self.h = 1.0 / n
        self.bc = bc
        self.num_elements = n ** dim
        self.strides = np.array([n ** a for a in range(dim)])
        e = np.arange(self.num_elements)
        self.coords = (e[:, None] // self.strides) % n
        if phase is None:
            phase = np.zeros(self.num_elements, dtype=int)
        self.phase = np.asarray(phase, dtype=int)
        if self.phase.shape != (self.num_elements,):
            raise ValueError("phase map must assign one phase per element")
        self._build_faces()

    @property
    def centers(self) -> np.ndarray:
        return (self.coords + 0.5) * self.h

    @property
    def num_phases(self) -> int:
        return int(self.phase.max()) + 1

    def neighbor(self, elements, axis: int, step: int) -> np.ndarray:
        """Neighbor index along +-axis, -1 outside a non-periodic domain."""
        elements = np.asarray(elements)
        c = self.coords[elements, axis] + step
        out = elements + step * self.strides[axis]
        if self.bc == "periodic":
            wrapped = c % self.n
            return out + (wrapped - c) * self.strides[axis]
        return np.where((c < 0) | (c >= self.n), -1, out)

    def _build_faces(self) -> None:
        minus, plus, axis, sign, kind = [], [], [], [], []
        e = np.arange(self.num_elements)
        for a in range(self.dim):
            hi_nb = self.neighbor(e, a, +1)
            lo = e[hi_nb >= 0]
            hi = hi_nb[hi_nb >= 0]
            same = self.phase[lo] == self.phase[hi]
            lo_is_minus = same | (self.phase[lo] < self.phase[hi])
            minus.append(np.where(lo_is_minus, lo, hi))
            plus.append(np.where(lo_is_minus, hi, lo))
            axis.append(np.full(len(lo), a))
            sign.append(np.where(lo_is_minus, 1, -1))
            kind.append(np.where(same, INTRAPHASE, INTERPHASE))
            if self.bc != "periodic":
                bkind = BOUNDARY_D if self.bc == "dirichlet" else BOUNDARY_N
                for side, s in ((0, -1), (self.n - 1, 1)):
                    cells = e[self.coords[:, a] == side]
                    minus.append(cells)
                    plus.append(np.full(len(cells), -1))
                    axis.append(np.full(len(cells), a))
                    sign.append(np.full(len(cells), s))
                    kind.append(np.full(len(cells), bkind))
        self.face_minus = np.concatenate(minus)
        self.face_plus = np.concatenate(plus)
        self.face_axis = np.concatenate(axis)
        self.face_sign = np.concatenate(sign)
        self.face_kind = np.concatenate(kind)

    @property
    def num_faces(self) -> int:
        return len(self.face_minus)

    def face(self, i: int) -> Face:
        return Face(int(self.face_minus[i]), int(self.face_plus[i]), int(self.face_axis[i]),
                    int(self.face_sign[i]), FACE_KIND_NAMES[self.face_kind[i]])

    def faces(self):
        for i in range(self.num_faces):
            yield self.face(i)

    def count_faces(self, kind: str) -> int:
        return int(np.sum(self.face_kind == FACE_KIND_NAMES.index(kind)))

    def __repr__(self) -> str:
        return f"MeshLevel(dim={self.dim}, n={self.n}, bc={self.bc!r}, phases={self.num_phases})"


def build_mesh(dim: int, cells_per_dim: int, bc_kind: str = "periodic", phase_spec=None) -> MeshLevel:
    """Uniform grid with phases taken from ``phase_spec`` at cell centers.

    ``phase_spec`` may be None (single phase), a BoxPhase, a callable mapping
    centers (E, d) to phase ids, or an explicit array of phase ids.
    """
    if cells_per_dim < 1:
        raise ValueError("cells_per_dim must be >= 1")
    phase = None
    if phase_spec is not None:
        if isinstance(phase_spec, BoxPhase):
            phase_spec.check_aligned(cells_per_dim)
        if callable(phase_spec):
            n = cells_per_dim
            e = np.arange(n ** dim)
            centers = ((e[:, None] // np.array([n ** a for a in range(dim)])) % n + 0.5) / n
            phase = np.asarray(phase_spec(centers), dtype=int)
        else:
            phase = np.asarray(phase_spec, dtype=int)
    return MeshLevel(dim, cells_per_dim, bc_kind, phase)


class MeshHierarchy:
    """Nested levels, finest first; ``parent[l]`` maps level-l cells to level l+1."""

    def __init__(self, levels: Sequence[MeshLevel], parents: Sequence[np.ndarray]):
        self.levels = list(levels)
        self.parents = list(parents)

    def __len__(self) -> int:
        return len(self.levels)

    def __getitem__(self, i) -> MeshLevel:
        return self.levels[i]

    @property
    def sizes(self) -> list[int]:
        return [lv.n for lv in self.levels]


def coarsen(fine: MeshLevel) -> tuple[MeshLevel, np.ndarray]:
    """Factor-2 coarsening; coarse phase by majority, ties to the lower id."""
    if fine.n % 2:
        raise ValueError(f"cannot coarsen a grid with {fine.n} cells per axis")
    nc = fine.n // 2
    pc = fine.coords // 2
    parent = pc @ np.array([nc ** a for a in range(fine.dim)])
    ncoarse = nc ** fine.dim
    counts = np.zeros((ncoarse, fine.num_phases), dtype=int)
    np.add.at(counts, (parent, fine.phase), 1)
    # argmax returns the first maximum, i.e. the lowest phase id on ties
    phase = np.argmax(counts, axis=1)
    return MeshLevel(fine.dim, nc, fine.bc, phase), parent


def build_hierarchy(finest: MeshLevel, min_cells: int = 1) -> MeshHierarchy:
    """Levels n, n/2, ..., down to ``min_cells`` per axis."""
    n = finest.n
    if n & (n - 1):
        raise ValueError(f"cells_per_dim must be a power of two, got {n}")
    if min_cells < 1 or min_cells & (min_cells - 1):
        raise ValueError("min_cells must be a power of two")
    levels, parents = [finest], []
    while levels[-1].n > min_cells:
        coarse, parent = coarsen(levels[-1])
        levels.append(coarse)
        parents.append(parent)
    return MeshHierarchy(levels, parents)


def grid_adjacency(level: MeshLevel, offsets) -> tuple[np.ndarray, np.ndarray]:
    """(row, col) pairs connecting each cell to the cells at the given offsets."""
    rows, cols = [], []
    e = np.arange(level.num_elements)
    for off in offsets:
        nb = e.copy()
        for a, s in enumerate(off):
            if s:
                nb = np.where(nb >= 0, level.neighbor(np.maximum(nb, 0), a, s), -1)
        ok = (nb >= 0) & (nb != e)
        rows.append(e[ok])
        cols.append(nb[ok])
    return np.concatenate(rows), np.concatenate(cols)


def face_adjacency(level: MeshLevel) -> tuple[np.ndarray, np.ndarray]:
    """(row, col) pairs of elements sharing a face."""
    inner = level.face_plus >= 0
    return level.face_minus[inner], level.face_plus[inner]


def color_elements(level: MeshLevel, stencil_adjacency) -> np.ndarray:
    """DSatur greedy coloring of the element connectivity graph.

    ``stencil_adjacency`` is a (rows, cols) pair or any object with ``row``
    and ``col`` arrays (e.g. an assembled block matrix).
    """
    if hasattr(stencil_adjacency, "row"):
        rows, cols = stencil_adjacency.row, stencil_adjacency.col
    else:
        rows, cols = stencil_adjacency
    ne = level.num_elements
    rows = np.asarray(rows)
    cols = np.asarray(cols)
    keep = rows != cols
    pairs = np.unique(np.concatenate([np.stack([rows[keep], cols[keep]], 1),
                                      np.stack([cols[keep], rows[keep]], 1)]), axis=0)
    starts = np.searchsorted(pairs[:, 0], np.arange(ne + 1))
    nbrs = [pairs[starts[i]:starts[i + 1], 1].tolist() for i in range(ne)]
    degree = np.diff(starts)

    colors = np.full(ne, -1, dtype=int)
    seen = [set() for _ in range(ne)]
    heap = [(0, -int(degree[i]), i) for i in range(ne)]
    heapq.heapify(heap)
    while heap:
        negsat, _, v = heapq.heappop(heap)
        if colors[v] >= 0 or -negsat != len(seen[v]):
            continue
        c = 0
        while c in seen[v]:
            c += 1
        colors[v] = c
        for u in nbrs[v]:
            if colors[u] < 0 and c not in seen[u]:
                seen[u].add(c)
                heapq.heappush(heap, (-len(seen[u]), -int(degree[u]), u))
    return colors
