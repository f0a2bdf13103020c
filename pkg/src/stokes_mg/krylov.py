"""Left-preconditioned GMRES and the iterations-per-decade metric."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np


@dataclass
class SolveReport:
    x: np.ndarray
    residual_history: list
    iterations: int
    converged: bool
    breakdown: bool = False
    wall_time: float = 0.0
    rho: float = math.nan
    eta: float = math.nan
    fit_flag: str = ""

    @property
    def divergent(self) -> bool:
        # rho == 0 is an exact solve; nan means no usable fit
        return not (self.rho < 1.0)


def _identity(v):
    return v


STALL_LEVEL = 1e-6
STALL_WINDOW = 3


def stall_index(history) -> Optional[int]:
    """First k with r_k < STALL_LEVEL r_0 after which the residual stops falling.

    The residual has stalled at k when it drops by less than a factor of two
    over the next STALL_WINDOW iterations; this marks the rounding floor.
    """
    r = np.asarray(history, dtype=float)
    for k in range(1, len(r) - STALL_WINDOW):
        if r[k] < STALL_LEVEL * r[0] and r[k + STALL_WINDOW] > 0.5 * r[k]:
            return k
    return None


def gmres_left(matvec: Callable, b: np.ndarray, precond: Optional[Callable] = None,
               x0: Optional[np.ndarray] = None, tol: float = 1e-12, max_iter: int = 40
               ) -> SolveReport:
    """GMRES on V A x = V b with full modified Gram-Schmidt and no restarts.

    The recorded residuals are ||V (b - A x_k)||_2, k = 0, 1, ...; iteration
    stops when r_k / r_0 < tol, when the residual stalls at the rounding floor
    (see :func:`stall_index`) or after ``max_iter`` iterations.
    """
    t0 = time.perf_counter()
    V = precond or _identity
    b = np.asarray(b, dtype=float)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    r = V(b - matvec(x)) if x0 is not None else V(b)
    beta = float(np.linalg.norm(r))
    history = [beta]
    if beta == 0.0:
        rep = SolveReport(x, history, 0, True, wall_time=time.perf_counter() - t0)
        return rep
    H = np.zeros((max_iter + 1, max_iter))
    cs = np.zeros(max_iter)
    sn = np.zeros(max_iter)
    g = np.zeros(max_iter + 1)
    g[0] = beta
    Qb = [r / beta]
    k = 0
    converged = False
    breakdown = False
    for j in range(max_iter):
        w = V(matvec(Qb[j]))
        for i in range(j + 1):
            H[i, j] = np.dot(Qb[i], w)
            w = w - H[i, j] * Qb[i]
        H[j + 1, j] = np.linalg.norm(w)
        for i in range(j):
            t = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
            H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
            H[i, j] = t
        den = math.hypot(H[j, j], H[j + 1, j])
        k = j + 1
        if den == 0.0:
            breakdown = True
            k = j
            break
        cs[j] = H[j, j] / den
        sn[j] = H[j + 1, j] / den
        hnext = H[j + 1, j]
        H[j, j] = den
        H[j + 1, j] = 0.0
        g[j + 1] = -sn[j] * g[j]
        g[j] = cs[j] * g[j]
        history.append(abs(g[j + 1]))
        if history[-1] < tol * beta:
            converged = True
            break
        if stall_index(history) is not None:
            break
        if hnext <= 1e-14 * den:
            breakdown = True  # happy breakdown: Krylov space is invariant
            converged = True
            break
        Qb.append(w / hnext)
    if k > 0:
        y = np.linalg.solve(np.triu(H[:k, :k]), g[:k]) if not np.any(np.diag(H[:k, :k]) == 0) \
            else np.linalg.lstsq(np.triu(H[:k, :k]), g[:k], rcond=None)[0]
        for i in range(k):
            x = x + y[i] * Qb[i]
    rep = SolveReport(x, history, k, converged, breakdown, time.perf_counter() - t0)
    rep.rho, rep.eta, rep.fit_flag = measure_eta(history)
    return rep


def measure_eta(residual_history, floor: float = 1e-14) -> tuple[float, float, str]:
    """Fit log r_k = a + k log rho by least squares; eta = log 0.1 / log rho.

    Samples at or below ``floor`` times r_0 and samples after a stall at the
    rounding floor are dropped.  With fewer than three usable samples the fit
    still runs and the flag reads 'few-points'.
    """
    r = np.asarray(residual_history, dtype=float)
    if len(r) == 0 or r[0] <= 0:
        return math.nan, math.nan, "empty"
    stall = stall_index(r)
    if stall is not None:
        r = r[:stall + 1]
    keep = r > floor * r[0]
    k = np.nonzero(keep)[0]
    flag = ""
    if len(k) < 3:
        flag = "few-points"
    if len(k) < 2:
        return 0.0, 0.0, flag or "few-points"
    slope = np.polyfit(k, np.log(r[k]), 1)[0]
    rho = float(np.exp(slope))
    if rho >= 1.0:
        return rho, math.inf, "divergent"
    eta = math.log(0.1) / math.log(rho) if rho > 0 else 0.0
    return rho, eta, flag


def random_rhs(seed: int, size: int) -> np.ndarray:
    """Components i.i.d. uniform on [-1, 1]."""
    return np.random.default_rng(seed).uniform(-1.0, 1.0, size)
