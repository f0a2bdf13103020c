"""Tensor-product Legendre modal bases on the reference cell [0, 1]^d.

Modes are ordered as multi-indices with axis 0 varying fastest, so mode 0 is
the constant. The 1D functions are orthonormal on [0, 1]; consequently every
mass matrix on an element of width h is h^d times the identity.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numpy.polynomial import legendre


def gauss_points(npts: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights mapped to [0, 1]."""
    x, w = legendre.leggauss(npts)
    return 0.5 * (x + 1.0), 0.5 * w


def legendre_1d(q: int, xi) -> np.ndarray:
    """Values of the orthonormal 1D modes 0..q at points ``xi``; shape (q+1, npts)."""
    xi = np.asarray(xi, dtype=float)
    out = np.empty((q + 1,) + xi.shape)
    for k in range(q + 1):
        c = np.zeros(k + 1)
        c[k] = 1.0
        out[k] = np.sqrt(2 * k + 1) * legendre.legval(2.0 * xi - 1.0, c)
    return out


def legendre_1d_deriv(q: int, xi) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    out = np.empty((q + 1,) + xi.shape)
    for k in range(q + 1):
        c = np.zeros(k + 1)
        c[k] = 1.0
        out[k] = 2.0 * np.sqrt(2 * k + 1) * legendre.legval(2.0 * xi - 1.0, legendre.legder(c))
    return out


def tensor(mats) -> np.ndarray:
    """Kronecker product of per-axis matrices, axis 0 fastest."""
    out = np.ones((1, 1))
    for m in mats:
        out = np.kron(m, out)
    return out


def multi_indices(q: int, d: int) -> np.ndarray:
    """Multi-index of every mode, shape (ndof, d), in storage order."""
    idx = np.array(list(itertools.product(range(q + 1), repeat=d)))
    return idx[:, ::-1].copy()


def tensor_eval(q: int, d: int, pts_1d) -> np.ndarray:
    """Modes evaluated on the tensor grid of ``pts_1d``; shape (ndof, npts^d).

    Points are ordered like the modes (axis 0 fastest).
    """
    v = legendre_1d(q, pts_1d)
    return tensor([v] * d)


@dataclass(frozen=True)
class ModalBasis:
    degree: int
    dim: int

    @property
    def ndof(self) -> int:
        return (self.degree + 1) ** self.dim

    def indices(self) -> np.ndarray:
        return multi_indices(self.degree, self.dim)


@dataclass
class ElementMatrices:
    """Element matrices for velocity degree p and pressure degree p-1.

    ``G_broken[a]`` is the broken gradient along axis a as an operator on the
    modal coefficients (mass matrix already inverted). ``face[a][(s, t)]`` is
    the face coupling  int_F phi_i|side s  phi_j|side t  for a face normal to
    axis a, where side 0/1 is the low/high end of the cell along that axis.
    """

    degree: int
    dim: int
    h: float
    M: np.ndarray
    Mbar: np.ndarray
    M_mu: np.ndarray
    M_rho: np.ndarray
    G_broken: list
    P_down: np.ndarray
    P_up: np.ndarray
    face: list = field(repr=False)

    @property
    def nv(self) -> int:
        return (self.degree + 1) ** self.dim

    @property
    def np_(self) -> int:
        return self.degree ** self.dim

    @property
    def n(self) -> int:
        return self.dim * self.nv + self.np_


@lru_cache(maxsize=None)
def _reference(p: int, d: int) -> ElementMatrices:
    x, w = gauss_points(p + 2)
    phi = legendre_1d(p, x)
    dphi = legendre_1d_deriv(p, x)
    mass1 = (phi * w) @ phi.T
    deriv1 = (phi * w) @ dphi.T
    eye1 = np.eye(p + 1)
    ends = legendre_1d(p, np.array([0.0, 1.0]))

    M = tensor([mass1] * d)
    G = []
    for a in range(d):
        mats = [eye1] * d
        mats[a] = np.linalg.solve(mass1, deriv1)
        G.append(tensor(mats))

    face = []
    for a in range(d):
        per_side = {}
        for s in (0, 1):
            for t in (0, 1):
                mats = [mass1] * d
                mats[a] = np.outer(ends[:, s], ends[:, t])
                per_side[(s, t)] = tensor(mats)
        face.append(per_side)

    hi = multi_indices(p, d)
    keep = np.nonzero(np.all(hi <= p - 1, axis=1))[0]
    P_down = np.zeros((len(keep), len(hi)))
    P_down[np.arange(len(keep)), keep] = 1.0
    Mbar = P_down @ M @ P_down.T
    return ElementMatrices(p, d, 1.0, M, Mbar, M.copy(), np.zeros_like(M), G,
                           P_down, P_down.T.copy(), face)


def reference_matrices(p: int, d: int) -> ElementMatrices:
    """Reference-cell matrices for velocity degree ``p`` in ``d`` dimensions."""
    if p < 1:
        raise ValueError("velocity degree must be >= 1 (pressure degree is p-1)")
    if d not in (1, 2, 3):
        raise ValueError(f"unsupported dimension {d}")
    return _reference(int(p), int(d))


def scale_to_element(ref: ElementMatrices, h: float, mu_e: float = 1.0,
                     rho_e: float = 0.0) -> ElementMatrices:
    """Matrices on a cell of width ``h`` with constant viscosity and density."""
    if h <= 0:
        raise ValueError("h must be positive")
    if mu_e < 0 or rho_e < 0:
        raise ValueError("coefficients must be nonnegative")
    d = ref.dim
    s = h ** d
    return ElementMatrices(
        ref.degree, d, h,
        M=s * ref.M,
        Mbar=s * ref.Mbar,
        M_mu=mu_e * s * ref.M,
        M_rho=rho_e * s * ref.M,
        G_broken=[g / h for g in ref.G_broken],
        P_down=ref.P_down,
        P_up=ref.P_up,
        face=[{k: v * h ** (d - 1) for k, v in f.items()} for f in ref.face],
    )


@lru_cache(maxsize=None)
def child_injection_1d(q: int, child: int) -> np.ndarray:
    """Coefficients on child ``child`` (0 or 1) of a parent mode of degree q.

    Entry [i, j] is the i-th child coefficient of parent mode j restricted to
    the child, both in their own reference frames.
    """
    x, w = gauss_points(q + 1)
    return (legendre_1d(q, x) * w) @ legendre_1d(q, 0.5 * (child + x)).T


def child_injection(q: int, d: int, child) -> np.ndarray:
    """Tensor-product injection for child position ``child`` in {0,1}^d."""
    return tensor([child_injection_1d(q, int(c)) for c in child])
