"""Static minimization of the reduced risk over measures on a radius grid.

The measure is restricted to atoms at fixed grid radii; the risk
1 + 2 v.p + p U p is then a simplex-constrained PSD quadratic, solved with
away-step Frank-Wolfe (exact line search, duality-gap certificate).  The
single-point-mass ansatz, its global-optimality inequality, and the
class-separation thresholds built on them live here too.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .kernels import KernelGrid, u_d_eval, v_eval
from .model import ActivationSpec, q_eval

_PAIR_CHUNK = 512
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def build_kernel_grid(act: ActivationSpec, delta: float, d: float,
                      grid) -> KernelGrid:
    """Tabulate v and the symmetric pair matrix U on a radius grid."""
    grid = np.asarray(grid, dtype=float)
    if np.any(grid <= 0) or np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be positive and strictly increasing")
    k = len(grid)
    v_vec = v_eval(act, delta, grid)
    iu, ju = np.triu_indices(k)
    u_flat = np.empty(len(iu))
    for lo in range(0, len(iu), _PAIR_CHUNK):
        sl = slice(lo, min(lo + _PAIR_CHUNK, len(iu)))
        u_flat[sl] = u_d_eval(act, delta, d, grid[iu[sl]], grid[ju[sl]])
    u_mat = np.empty((k, k))
    u_mat[iu, ju] = u_flat
    u_mat[ju, iu] = u_flat
    if not np.all(np.isfinite(v_vec)) or not np.all(np.isfinite(u_mat)):
        raise ArithmeticError("kernel grid evaluation produced non-finite values")
    return KernelGrid(grid, np.asarray(v_vec), u_mat, d, delta)


@dataclass
class QpResult:
    weights: np.ndarray
    risk: float
    gap: float
    converged: bool
    iterations: int

    def __iter__(self):
        return iter((self.weights, self.risk))


def solve_simplex_qp(kernel: KernelGrid, tol: float = 1e-9,
                     max_iters: int = 200_000) -> QpResult:
    """Minimize 1 + 2 v.p + p U p over the probability simplex.

    Away-step Frank-Wolfe with exact line search on the quadratic; ties in
    the linear oracle break to the smallest index, so the iterate sequence
    is deterministic.  Returns the best iterate flagged non-converged if the
    duality gap never reaches tol.
    """
    v = kernel.v_vec
    u = kernel.u_mat
    k = len(v)
    p = np.full(k, 1.0 / k)
    up = u @ p
    iters = 0
    gap = math.inf
    for iters in range(1, max_iters + 1):
        grad = 2.0 * (v + up)
        s = int(np.argmin(grad))
        gap = float(np.dot(grad, p) - grad[s])
        if gap <= tol:
            break
        # away vertex: worst gradient among the support
        support = p > 0.0
        grad_sup = np.where(support, grad, -math.inf)
        a = int(np.argmax(grad_sup))
        fw_gain = gap
        away_gain = float(grad[a] - np.dot(grad, p))
        if fw_gain >= away_gain:
            dvec_u = u[:, s] - up
            dgrad = float(grad[s] - np.dot(grad, p))
            curv = float(u[s, s] - 2.0 * up[s] + p @ up)
            gamma_max = 1.0
            direction = ("fw", s)
        else:
            dvec_u = up - u[:, a]
            dgrad = float(np.dot(grad, p) - grad[a])
            curv = float(p @ up - 2.0 * up[a] + u[a, a])
            gamma_max = p[a] / (1.0 - p[a]) if p[a] < 1.0 else math.inf
            direction = ("away", a)
        if curv <= 0.0:
            gamma = gamma_max
        else:
            gamma = min(max(-0.5 * dgrad / curv, 0.0), gamma_max)
        if gamma <= 0.0 or not math.isfinite(gamma):
            break
        if direction[0] == "fw":
            p *= 1.0 - gamma
            p[s] += gamma
            up = (1.0 - gamma) * up + gamma * u[:, s]
        else:
            p *= 1.0 + gamma
            p[a] -= gamma
            up = (1.0 + gamma) * up - gamma * u[:, a]
        np.maximum(p, 0.0, out=p)
        p /= p.sum()
        up = u @ p if iters % 256 == 0 else up  # refresh accumulated drift
    risk = float(1.0 + 2.0 * np.dot(v, p) + p @ u @ p)
    return QpResult(p, risk, gap, gap <= tol, iters)


def single_delta_risk(act: ActivationSpec, delta: float, d: float, r):
    """Risk of the uniform measure on the sphere of radius r:
    1 + 2 v(r) + u_d(r, r)."""
    r = np.asarray(r, dtype=float)
    out = 1.0 + 2.0 * np.asarray(v_eval(act, delta, r)) \
        + np.asarray(u_d_eval(act, delta, d, r, r))
    return out if out.ndim else float(out)


def minimize_single_delta(act: ActivationSpec, delta: float, d: float,
                          grid) -> tuple[float, float]:
    """Grid argmin of the single-point-mass risk, refined by golden section
    inside the bracketing cell; ties break to the smaller radius."""
    grid = np.asarray(grid, dtype=float)
    vals = single_delta_risk(act, delta, d, grid)
    j = int(np.argmin(vals))
    lo = grid[max(j - 1, 0)]
    hi = grid[min(j + 1, len(grid) - 1)]

    def f(r):
        return float(single_delta_risk(act, delta, d, r))

    a, b = lo, hi
    c1 = b - _GOLDEN * (b - a)
    c2 = a + _GOLDEN * (b - a)
    f1, f2 = f(c1), f(c2)
    while b - a > 1e-10:
        if f1 < f2 or (f1 == f2 and c1 < c2):
            b, c2, f2 = c2, c1, f1
            c1 = b - _GOLDEN * (b - a)
            f1 = f(c1)
        else:
            a, c1, f1 = c1, c2, f2
            c2 = a + _GOLDEN * (b - a)
            f2 = f(c2)
    r_star = 0.5 * (a + b)
    risk = f(r_star)
    if vals[j] < risk:
        r_star, risk = float(grid[j]), float(vals[j])
    return float(r_star), float(risk)


def check_point_mass_optimality(act: ActivationSpec, delta: float, d: float,
                                r_star: float, r_grid) -> bool:
    """Global-optimality inequality for the point mass at r*:
    v(r) + u_d(r, r*) >= v(r*) + u_d(r*, r*) at every grid radius."""
    r_grid = np.asarray(r_grid, dtype=float)
    lhs = np.asarray(v_eval(act, delta, r_grid)) + np.asarray(
        u_d_eval(act, delta, d, r_grid, np.full_like(r_grid, r_star))
    )
    rhs = float(v_eval(act, delta, r_star)) + float(
        u_d_eval(act, delta, d, r_star, r_star)
    )
    return bool(np.all(lhs >= rhs - 1e-12))


DEFAULT_STATIC_GRID = np.linspace(0.01, 10.0, 100)
DEFAULT_CHECK_GRID = np.round(np.arange(0.1, 10.0 + 1e-9, 0.1), 10)
DEFAULT_DELTA_GRID = np.round(np.arange(0.01, 0.995, 0.01), 10)


@dataclass
class ThresholdScan:
    """Verbatim record of which class separations pass the point-mass check."""

    d: float
    deltas: np.ndarray
    passes: np.ndarray
    r_stars: np.ndarray

    @property
    def passing(self) -> np.ndarray:
        return self.deltas[self.passes]

    def bounds(self) -> tuple[float, float] | None:
        if not np.any(self.passes):
            return None
        p = self.passing
        return float(p.min()), float(p.max())

    @property
    def is_interval(self) -> bool:
        if not np.any(self.passes):
            return True
        idx = np.flatnonzero(self.passes)
        return bool(np.all(np.diff(idx) == 1))


def delta_threshold_scan(act: ActivationSpec, d: float, delta_grid=None,
                         r_grid=None, static_grid=None) -> ThresholdScan:
    """Scan class separations for point-mass global optimality.

    Returns the raw passing set; ``bounds()`` gives (delta_low, delta_high)
    or None when nothing passes.  No interval structure is assumed.
    """
    delta_grid = DEFAULT_DELTA_GRID if delta_grid is None else np.asarray(delta_grid)
    r_grid = DEFAULT_CHECK_GRID if r_grid is None else np.asarray(r_grid)
    static_grid = DEFAULT_STATIC_GRID if static_grid is None else np.asarray(static_grid)
    passes = np.zeros(len(delta_grid), dtype=bool)
    r_stars = np.empty(len(delta_grid))
    for i, delta in enumerate(delta_grid):
        r_star, _ = minimize_single_delta(act, float(delta), d, static_grid)
        r_stars[i] = r_star
        passes[i] = check_point_mass_optimality(act, float(delta), d, r_star, r_grid)
    return ThresholdScan(d, np.asarray(delta_grid, dtype=float), passes, r_stars)


def delta_infty(act: ActivationSpec, tol: float = 1e-3) -> float:
    """Critical separation above which zero risk is achievable at d = infinity.

    Bisection on delta of the monotone predicate
    "exists r with q((1+delta) r) >= 1 and q((1-delta) r) <= -1";
    the inner maximization runs over a log grid with golden refinement of
    the (unimodal) margin min(q_+ - 1, -1 - q_-).
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    r_grid = np.geomspace(1e-3, 1e3, 600)

    def margin(delta: float) -> float:
        tp, tm = 1.0 + delta, 1.0 - delta
        qp, _ = q_eval(act, tp * r_grid)
        qm, _ = q_eval(act, tm * r_grid)
        m = np.minimum(np.asarray(qp) - 1.0, -1.0 - np.asarray(qm))
        j = int(np.argmax(m))
        a = r_grid[max(j - 1, 0)]
        b = r_grid[min(j + 1, len(r_grid) - 1)]

        def neg(r):
            qpr, _ = q_eval(act, tp * r)
            qmr, _ = q_eval(act, tm * r)
            return -min(qpr - 1.0, -1.0 - qmr)

        c1 = b - _GOLDEN * (b - a)
        c2 = a + _GOLDEN * (b - a)
        f1, f2 = neg(c1), neg(c2)
        while b - a > 1e-12 * max(b, 1.0):
            if f1 < f2:
                b, c2, f2 = c2, c1, f1
                c1 = b - _GOLDEN * (b - a)
                f1 = neg(c1)
            else:
                a, c1, f1 = c1, c2, f2
                c2 = a + _GOLDEN * (b - a)
                f2 = neg(c2)
        return max(float(m[j]), -neg(0.5 * (a + b)))

    lo, hi = 0.0, 1.0 - 1e-9
    if margin(lo) > 0:
        return lo
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if margin(mid) >= 0.0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)
