"""Potentials and reduced risks over the three reduced coordinate spaces.

The single-neuron potential v and the pair potential u are Gaussian
expectations of products of the piecewise-linear activation.  For two
correlated Gaussians these expectations have exact closed forms in terms of
the bivariate normal CDF (computed through Owen's T function) and truncated
first/product moments, so no inner quadrature is needed; the only numeric
integral left is the one over the angle between two weight vectors at
finite dimension d, done with a fixed Gauss-Legendre rule against the
normalized sin^(d-2) density.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

import numpy as np
from scipy.special import ndtr, owens_t, roots_legendre

from .model import (
    ActivationKind,
    ActivationSpec,
    norm_pdf,
    q_eval,
    sigma_deriv,
    sigma_eval,
    smoothing_cache,
)

# beyond |x| = 38 the standard normal mass underflows to zero in float64
_BIG = 38.0
_TINY = 1e-300
# route |corr| above this to the exact perfectly-correlated path
_CORR_ONE = 1.0 - 1e-12

N_THETA_NODES = 200


class Space(Enum):
    RADIAL_1D = "radial_1d"
    ANISO_2D = "aniso_2d"
    RELU_4D = "relu_4d"

    @property
    def dim(self) -> int:
        return {"radial_1d": 1, "aniso_2d": 2, "relu_4d": 4}[self.value]

    @property
    def radial_columns(self) -> tuple[int, ...]:
        return {"radial_1d": (0,), "aniso_2d": (0, 1), "relu_4d": (2, 3)}[self.value]


@dataclass
class AtomEnsemble:
    """Weighted atoms in a reduced coordinate space.

    Coordinates per atom: (r,) for RADIAL_1D, (r1, r2) for ANISO_2D and
    (a, b, r1, r2) for RELU_4D.  Radial coordinates are nonnegative and the
    weights form a probability vector.
    """

    space: Space
    atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.atoms = np.atleast_2d(np.asarray(self.atoms, dtype=float))
        self.weights = np.asarray(self.weights, dtype=float)
        if self.atoms.shape[1] != self.space.dim:
            raise ValueError(
                f"{self.space} atoms need {self.space.dim} coordinates, "
                f"got shape {self.atoms.shape}"
            )
        if self.atoms.shape[0] < 1:
            raise ValueError("need at least one atom")
        if self.weights.shape != (self.atoms.shape[0],):
            raise ValueError("one weight per atom required")
        if not np.all(np.isfinite(self.atoms)) or not np.all(np.isfinite(self.weights)):
            raise ValueError("atoms and weights must be finite")
        if np.any(self.weights < 0.0):
            raise ValueError("weights must be nonnegative")
        if abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must sum to one")
        rad = self.atoms[:, list(self.space.radial_columns)]
        if np.any(rad < 0.0):
            raise ValueError("radial coordinates must be nonnegative")

    @classmethod
    def equal_weights(cls, space: Space, atoms) -> "AtomEnsemble":
        atoms = np.atleast_2d(np.asarray(atoms, dtype=float))
        j = atoms.shape[0]
        return cls(space, atoms, np.full(j, 1.0 / j))

    @property
    def n_atoms(self) -> int:
        return self.atoms.shape[0]

    def radii(self) -> np.ndarray:
        """Full-norm radius per atom (RADIAL_1D coordinate itself)."""
        if self.space is Space.RADIAL_1D:
            return self.atoms[:, 0]
        if self.space is Space.ANISO_2D:
            return np.hypot(self.atoms[:, 0], self.atoms[:, 1])
        return np.hypot(self.atoms[:, 2], self.atoms[:, 3])


@dataclass
class KernelGrid:
    """Single-neuron vector v and pair matrix U tabulated on a radius grid."""

    grid: np.ndarray
    v_vec: np.ndarray
    u_mat: np.ndarray
    d: float
    delta: float

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["d", "delta", "size"])
            writer.writerow([_fmt(self.d), _fmt(self.delta), len(self.grid)])
            writer.writerow(["grid"] + [_fmt(x) for x in self.grid])
            writer.writerow(["v"] + [_fmt(x) for x in self.v_vec])
            for row in self.u_mat:
                writer.writerow(["u"] + [_fmt(x) for x in row])

    @classmethod
    def from_csv(cls, path) -> "KernelGrid":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        d, delta, size = float(rows[1][0]), float(rows[1][1]), int(rows[1][2])
        grid = np.array([float(x) for x in rows[2][1:]])
        v_vec = np.array([float(x) for x in rows[3][1:]])
        u_mat = np.array([[float(x) for x in row[1:]] for row in rows[4 : 4 + size]])
        return cls(grid, v_vec, u_mat, d, delta)


def _fmt(x) -> str:
    return f"{float(x):.17g}"


def _taus(delta: float) -> tuple[float, float]:
    return 1.0 + delta, 1.0 - delta


# ---------------------------------------------------------------------------
# bivariate normal rectangle moments
# ---------------------------------------------------------------------------

def bvn_cdf(h, k, rho):
    """P(X <= h, Y <= k) for standard bivariate normal with correlation rho."""
    h = np.asarray(h, dtype=float)
    k = np.asarray(k, dtype=float)
    rho = np.asarray(rho, dtype=float)
    h, k, rho = np.broadcast_arrays(h, k, rho)
    sbar = np.sqrt(np.clip(1.0 - rho * rho, _TINY, 1.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        ah = np.where(h != 0.0, (k - rho * h) / (np.where(h != 0.0, h, 1.0) * sbar), 0.0)
        ak = np.where(k != 0.0, (h - rho * k) / (np.where(k != 0.0, k, 1.0) * sbar), 0.0)
    th = np.where(h != 0.0, owens_t(h, ah), np.sign(k) * 0.5 * ndtr(-np.abs(h)))
    tk = np.where(k != 0.0, owens_t(k, ak), np.sign(h) * 0.5 * ndtr(-np.abs(k)))
    delta = np.where((h * k > 0) | ((h * k == 0) & (h + k >= 0)), 0.0, 0.5)
    val = 0.5 * (ndtr(h) + ndtr(k)) - th - tk - delta
    both0 = (h == 0.0) & (k == 0.0)
    if np.any(both0):
        val = np.where(both0, 0.25 + np.arcsin(np.clip(rho, -1, 1)) / (2 * np.pi), val)
    return val


def _corner_tables(bx, by, rho):
    """Corner functions C_g(h, k) = E[g(X,Y); X<=h, Y<=k] for g in
    {1, x, y, xy}, tabulated over the padded boundary grid.

    bx, by: (..., K) finite boundaries; returns four (..., K+2, K+2) tables
    whose index 0 / K+1 stand for -inf / +inf (filled with exact marginal
    limits rather than evaluated formulas).
    """
    K = bx.shape[-1]
    S = bx.shape[:-1]
    rho_c = rho[..., None, None]
    sbar = np.sqrt(np.clip(1.0 - rho * rho, _TINY, 1.0))[..., None, None]

    H = bx[..., :, None] + np.zeros_like(by[..., None, :])
    Kk = by[..., None, :] + np.zeros_like(bx[..., :, None])
    zk = (Kk - rho_c * H) / sbar
    zh = (H - rho_c * Kk) / sbar
    ph, pk = norm_pdf(H), norm_pdf(Kk)
    cdf_zk, cdf_zh = ndtr(zk), ndtr(zh)

    P_in = bvn_cdf(H, Kk, rho_c)
    Cx_in = -ph * cdf_zk - rho_c * pk * cdf_zh
    Cy_in = -pk * cdf_zh - rho_c * ph * cdf_zk
    phi2 = np.exp(-0.5 * (H * H - 2 * rho_c * H * Kk + Kk * Kk) / np.square(sbar)) / (
        2 * np.pi * sbar
    )
    Cxy_in = (
        rho_c * P_in
        - rho_c * H * ph * cdf_zk
        - rho_c * Kk * pk * cdf_zh
        + np.square(sbar) * phi2
    )

    cdf_bx, cdf_by = ndtr(bx), ndtr(by)
    pdf_bx, pdf_by = norm_pdf(bx), norm_pdf(by)
    rho_e = rho[..., None]

    def table(inner, x_inf, y_inf, corner):
        t = np.zeros(S + (K + 2, K + 2))
        t[..., 1:-1, 1:-1] = inner
        t[..., -1, 1:-1] = y_inf      # h = +inf, finite k
        t[..., 1:-1, -1] = x_inf      # finite h, k = +inf
        t[..., -1, -1] = corner
        return t

    one = np.ones(S)
    P = table(P_in, cdf_bx, cdf_by, one)
    Cx = table(Cx_in, -pdf_bx, -rho_e * pdf_by, np.zeros(S))
    Cy = table(Cy_in, -rho_e * pdf_bx, -pdf_by, np.zeros(S))
    Cxy = table(
        Cxy_in,
        rho_e * (cdf_bx - bx * pdf_bx),
        rho_e * (cdf_by - by * pdf_by),
        rho,
    )
    return P, Cx, Cy, Cxy


def _rect(table):
    return (
        table[..., 1:, 1:]
        - table[..., :-1, 1:]
        - table[..., 1:, :-1]
        + table[..., :-1, :-1]
    )


def pwl_gaussian_product(act: ActivationSpec, R1, R2, rho, want_dr1: bool = False):
    """E[sigma(R1*X) sigma(R2*Y)] for standard bivariate normal (X, Y) with
    correlation rho; exact via rectangle moments of the segment partition.

    With ``want_dr1`` also returns d/dR1 of the expectation,
    E[sigma'(R1*X) * X * sigma(R2*Y)].  R1, R2 >= 0.
    """
    cache = smoothing_cache(act)
    R1 = np.asarray(R1, dtype=float)
    R2 = np.asarray(R2, dtype=float)
    rho = np.asarray(rho, dtype=float)
    R1, R2, rho = np.broadcast_arrays(R1, R2, rho)
    near_one = np.abs(rho) >= _CORR_ONE
    rho_safe = np.clip(rho, -_CORR_ONE, _CORR_ONE)

    bx = np.clip(cache.xs / np.maximum(R1, _TINY)[..., None], -_BIG, _BIG)
    by = np.clip(cache.xs / np.maximum(R2, _TINY)[..., None], -_BIG, _BIG)
    P, Cx, Cy, Cxy = _corner_tables(bx, by, rho_safe)
    M1, Mx, My, Mxy = _rect(P), _rect(Cx), _rect(Cy), _rect(Cxy)

    m = cache.slopes
    c = cache.intercepts
    mj, ml = m[:, None], m[None, :]
    cj, cl = c[:, None], c[None, :]
    r1e = R1[..., None, None]
    r2e = R2[..., None, None]
    val = (
        (mj * ml) * r1e * r2e * Mxy
        + (mj * cl) * r1e * Mx
        + (cj * ml) * r2e * My
        + (cj * cl) * M1
    ).sum(axis=(-2, -1))
    if want_dr1:
        dval = (mj * (ml * r2e * Mxy + cl * Mx)).sum(axis=(-2, -1))
    if np.any(near_one):
        exact = _pwl_product_corr_one(act, R1, R2, np.sign(rho))
        val = np.where(near_one, exact, val)
        if want_dr1:
            h = 1e-6
            bump = _pwl_product_corr_one(act, R1 + h, R2, np.sign(rho))
            dip = _pwl_product_corr_one(act, np.maximum(R1 - h, 0.0), R2, np.sign(rho))
            dval = np.where(near_one, (bump - dip) / (2 * h), dval)
    if want_dr1:
        return val, dval
    return val


def _pwl_product_corr_one(act: ActivationSpec, R1, R2, sign):
    """E[sigma(R1*X) sigma(sign*R2*X)]: the perfectly correlated limit,
    a one-dimensional piecewise-quadratic Gaussian integral."""
    cache = smoothing_cache(act)
    R1 = np.asarray(R1, dtype=float)
    R2 = np.asarray(R2, dtype=float)
    sign = np.where(np.asarray(sign, dtype=float) < 0, -1.0, 1.0)
    R1, R2, sign = np.broadcast_arrays(R1, R2, sign)

    b1 = cache.xs / np.maximum(R1, _TINY)[..., None]
    b2 = cache.xs / (sign * np.maximum(R2, _TINY))[..., None]
    bounds = np.concatenate([b1, b2], axis=-1)
    bounds = np.clip(np.sort(bounds, axis=-1), -_BIG, _BIG)
    pad = np.full(bounds.shape[:-1] + (1,), _BIG)
    edges = np.concatenate([-pad, bounds, pad], axis=-1)
    lo, hi = edges[..., :-1], edges[..., 1:]
    mid = 0.5 * (lo + hi)

    m1 = R1[..., None] * sigma_deriv(act, R1[..., None] * mid)
    c1 = sigma_eval(act, R1[..., None] * mid) - m1 * mid
    a2 = sign[..., None] * R2[..., None]
    m2 = a2 * sigma_deriv(act, a2 * mid)
    c2 = sigma_eval(act, a2 * mid) - m2 * mid

    cdf_lo, cdf_hi = ndtr(lo), ndtr(hi)
    pdf_lo, pdf_hi = norm_pdf(lo), norm_pdf(hi)
    m0 = cdf_hi - cdf_lo
    mx = pdf_lo - pdf_hi
    mxx = m0 - (hi * pdf_hi - lo * pdf_lo)
    val = m1 * m2 * mxx + (m1 * c2 + m2 * c1) * mx + c1 * c2 * m0
    return val.sum(axis=-1)


# ---------------------------------------------------------------------------
# potentials
# ---------------------------------------------------------------------------

def v_eval(act: ActivationSpec, delta: float, r):
    """Single-neuron potential v(r) = -q(tau_plus r)/2 + q(tau_minus r)/2."""
    tp, tm = _taus(delta)
    r = np.asarray(r, dtype=float)
    qp, _ = q_eval(act, tp * r)
    qm, _ = q_eval(act, tm * r)
    out = -0.5 * np.asarray(qp) + 0.5 * np.asarray(qm)
    return out if out.ndim else float(out)


def v_prime(act: ActivationSpec, delta: float, r):
    tp, tm = _taus(delta)
    r = np.asarray(r, dtype=float)
    _, dqp = q_eval(act, tp * r)
    _, dqm = q_eval(act, tm * r)
    out = -0.5 * tp * np.asarray(dqp) + 0.5 * tm * np.asarray(dqm)
    return out if out.ndim else float(out)


def u_angle(act: ActivationSpec, delta: float, r1, r2, alpha):
    """Pair potential of two neurons with radii r1, r2 at angle alpha."""
    tp, tm = _taus(delta)
    rho = np.cos(np.asarray(alpha, dtype=float))
    r1 = np.asarray(r1, dtype=float)
    r2 = np.asarray(r2, dtype=float)
    out = 0.5 * pwl_gaussian_product(act, tp * r1, tp * r2, rho) + \
        0.5 * pwl_gaussian_product(act, tm * r1, tm * r2, rho)
    return out if out.ndim else float(out)


def u_infty(act: ActivationSpec, delta: float, r1, r2):
    """d = infinity pair potential: orthogonal neurons decouple per class."""
    tp, tm = _taus(delta)
    r1 = np.asarray(r1, dtype=float)
    r2 = np.asarray(r2, dtype=float)
    qp1, _ = q_eval(act, tp * r1)
    qm1, _ = q_eval(act, tm * r1)
    qp2, _ = q_eval(act, tp * r2)
    qm2, _ = q_eval(act, tm * r2)
    out = 0.5 * (np.asarray(qp1) * np.asarray(qp2) + np.asarray(qm1) * np.asarray(qm2))
    return out if out.ndim else float(out)


@lru_cache(maxsize=64)
def _theta_rule(d: float, n: int = N_THETA_NODES):
    """Gauss-Legendre nodes on [0, pi] with the normalized sin^(d-2) density
    folded into the weights (log-domain to survive large d)."""
    x, w = roots_legendre(n)
    theta = 0.5 * math.pi * (x + 1.0)
    logw = np.log(w * 0.5 * math.pi) + (d - 2.0) * np.log(np.sin(theta))
    logw -= logw.max()
    weights = np.exp(logw)
    weights /= weights.sum()
    return theta, weights


def u_d_eval(act: ActivationSpec, delta: float, d: float, r1, r2,
             n_theta: int = N_THETA_NODES):
    """Pair potential averaged over the angle distribution at dimension d."""
    if d == math.inf:
        return u_infty(act, delta, r1, r2)
    if d < 2:
        raise ValueError("u_d requires d >= 2")
    theta, w = _theta_rule(float(d), n_theta)
    r1 = np.asarray(r1, dtype=float)
    r2 = np.asarray(r2, dtype=float)
    r1b, r2b = np.broadcast_arrays(r1, r2)
    vals = u_angle(act, delta, r1b[..., None], r2b[..., None], theta)
    out = np.sum(np.asarray(vals) * w, axis=-1)
    return out if out.ndim else float(out)


def u_d_dr1(act: ActivationSpec, delta: float, d: float, r1, r2,
            n_theta: int = N_THETA_NODES):
    """d/dr1 of the pair potential, by differentiating inside the angle
    average (exact segment-moment derivative, no finite differences)."""
    tp, tm = _taus(delta)
    r1 = np.asarray(r1, dtype=float)
    r2 = np.asarray(r2, dtype=float)
    if d == math.inf:
        _, dqp1 = q_eval(act, tp * r1)
        _, dqm1 = q_eval(act, tm * r1)
        qp2, _ = q_eval(act, tp * r2)
        qm2, _ = q_eval(act, tm * r2)
        out = 0.5 * (tp * np.asarray(dqp1) * np.asarray(qp2)
                     + tm * np.asarray(dqm1) * np.asarray(qm2))
        return out if out.ndim else float(out)
    theta, w = _theta_rule(float(d), n_theta)
    r1b, r2b = np.broadcast_arrays(r1, r2)
    rho = np.cos(theta)
    _, dp = pwl_gaussian_product(
        act, tp * r1b[..., None], tp * r2b[..., None], rho, want_dr1=True
    )
    _, dm = pwl_gaussian_product(
        act, tm * r1b[..., None], tm * r2b[..., None], rho, want_dr1=True
    )
    vals = 0.5 * (tp * dp + tm * dm)
    out = np.sum(vals * w, axis=-1)
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# ReLU reduced coordinates (a, b, r1, r2), d = infinity
# ---------------------------------------------------------------------------

def relu_q_pm(delta: float, r1, r2, b):
    """Gaussian means q_+/- of relu(b + s*G) with s^2 = tau^2 r1^2 + r2^2,
    one per class: q = b*Phi(b/s) + s*phi(b/s); at s = 0 it is max(b, 0)."""
    tp, tm = _taus(delta)
    r1 = np.asarray(r1, dtype=float)
    r2 = np.asarray(r2, dtype=float)
    b = np.asarray(b, dtype=float)

    def one(tau):
        s = np.hypot(tau * r1, r2)
        z = np.clip(b / np.maximum(s, _TINY), -_BIG, _BIG)
        val = b * ndtr(z) + s * norm_pdf(z)
        return np.where(s > 0.0, val, np.maximum(b, 0.0))

    return one(tp), one(tm)


def _relu_means(delta: float, atoms: AtomEnsemble):
    a, b, r1, r2 = (atoms.atoms[:, i] for i in range(4))
    qp, qm = relu_q_pm(delta, r1, r2, b)
    return float(np.dot(atoms.weights, a * qp)), float(np.dot(atoms.weights, a * qm))


# ---------------------------------------------------------------------------
# order parameters, effective potential, reduced risk
# ---------------------------------------------------------------------------

def _q_means(act: ActivationSpec, delta: float, atoms: AtomEnsemble):
    """Weighted means of the two class kernels over the ensemble."""
    tp, tm = _taus(delta)
    if atoms.space is Space.RADIAL_1D:
        r = atoms.atoms[:, 0]
        qp, _ = q_eval(act, tp * r)
        qm, _ = q_eval(act, tm * r)
    elif atoms.space is Space.ANISO_2D:
        a1, a2 = atoms.atoms[:, 0], atoms.atoms[:, 1]
        rp = np.hypot(tp * a1, a2)
        rm = np.hypot(tm * a1, a2)
        qp, _ = q_eval(act, rp)
        qm, _ = q_eval(act, rm)
    else:
        return _relu_means(delta, atoms)
    w = atoms.weights
    return float(np.dot(w, np.asarray(qp))), float(np.dot(w, np.asarray(qm)))


def lambda_pm(act: ActivationSpec, delta: float, atoms: AtomEnsemble):
    """Order parameters: lambda_+ = (<q_+, rho> - 1)/2, lambda_- = (<q_-, rho> + 1)/2."""
    mp, mm = _q_means(act, delta, atoms)
    return 0.5 * (mp - 1.0), 0.5 * (mm + 1.0)


def reduced_risk(act: ActivationSpec, delta: float, d: float, atoms: AtomEnsemble):
    """Population risk of the rotation-invariant measure the atoms represent.

    At d = infinity this is (1 - <q_+>)^2/2 + (1 + <q_->)^2/2 >= 0 for every
    space; at finite d (RADIAL_1D only) it is 1 + 2<v> + <u_d x u_d>.
    """
    if d == math.inf:
        mp, mm = _q_means(act, delta, atoms)
        return 0.5 * (1.0 - mp) ** 2 + 0.5 * (1.0 + mm) ** 2
    if atoms.space is not Space.RADIAL_1D:
        raise ValueError("finite-d reduced risk exists only in the radial space")
    r = atoms.atoms[:, 0]
    w = atoms.weights
    vterm = float(np.dot(w, v_eval(act, delta, r)))
    umat = u_d_eval(act, delta, d, r[:, None], r[None, :])
    uterm = float(w @ umat @ w)
    return 1.0 + 2.0 * vterm + uterm


def psi_value(act: ActivationSpec, delta: float, point, atoms: AtomEnsemble,
              d: float = math.inf):
    """Effective potential psi(point; rho) = v + integral of u against rho."""
    point = np.asarray(point, dtype=float)
    lp, lm = lambda_pm(act, delta, atoms)
    tp, tm = _taus(delta)
    if atoms.space is Space.RADIAL_1D:
        r = point[..., 0] if point.ndim > 0 and point.shape[-1:] == (1,) else point
        r = np.asarray(r, dtype=float)
        if d == math.inf:
            qp, _ = q_eval(act, tp * r)
            qm, _ = q_eval(act, tm * r)
            out = lp * np.asarray(qp) + lm * np.asarray(qm)
        else:
            rj = atoms.atoms[:, 0]
            out = v_eval(act, delta, r) + np.sum(
                atoms.weights * u_d_eval(act, delta, d, r[..., None], rj), axis=-1
            )
        return out if np.ndim(out) else float(out)
    if d != math.inf:
        raise ValueError("finite d only supported in the radial space")
    if atoms.space is Space.ANISO_2D:
        a1, a2 = point[..., 0], point[..., 1]
        qp, _ = q_eval(act, np.hypot(tp * a1, a2))
        qm, _ = q_eval(act, np.hypot(tm * a1, a2))
        out = lp * np.asarray(qp) + lm * np.asarray(qm)
        return out if np.ndim(out) else float(out)
    a, b, r1, r2 = (point[..., i] for i in range(4))
    qp, qm = relu_q_pm(delta, r1, r2, b)
    out = a * (lp * qp + lm * qm)
    return out if np.ndim(out) else float(out)


def psi_grad_points(act: ActivationSpec, delta: float, points, atoms: AtomEnsemble,
                    d: float = math.inf) -> np.ndarray:
    """Gradient of the effective potential at each row of ``points``.

    Radial coordinates must be nonnegative; returns an array of the same
    shape as ``points``.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[1] != atoms.space.dim:
        raise ValueError("point dimension does not match the ensemble space")
    rad = points[:, list(atoms.space.radial_columns)]
    if np.any(rad < 0.0):
        raise ValueError("negative radial coordinate")
    tp, tm = _taus(delta)
    lp, lm = lambda_pm(act, delta, atoms)
    out = np.empty_like(points)

    if atoms.space is Space.RADIAL_1D:
        r = points[:, 0]
        if d == math.inf:
            _, dqp = q_eval(act, tp * r)
            _, dqm = q_eval(act, tm * r)
            out[:, 0] = lp * tp * np.asarray(dqp) + lm * tm * np.asarray(dqm)
        else:
            rj = atoms.atoms[:, 0]
            du = u_d_dr1(act, delta, d, r[:, None], rj[None, :])
            out[:, 0] = v_prime(act, delta, r) + du @ atoms.weights
        return out

    if d != math.inf:
        raise ValueError("finite d only supported in the radial space")

    if atoms.space is Space.ANISO_2D:
        a1, a2 = points[:, 0], points[:, 1]
        rp = np.hypot(tp * a1, a2)
        rm = np.hypot(tm * a1, a2)
        _, dqp = q_eval(act, rp)
        _, dqm = q_eval(act, rm)
        with np.errstate(invalid="ignore", divide="ignore"):
            cp = np.where(rp > 0.0, lp * np.asarray(dqp) / np.maximum(rp, _TINY), 0.0)
            cm = np.where(rm > 0.0, lm * np.asarray(dqm) / np.maximum(rm, _TINY), 0.0)
        out[:, 0] = cp * tp * tp * a1 + cm * tm * tm * a1
        out[:, 1] = cp * a2 + cm * a2
        return out

    a, b, r1, r2 = (points[:, i] for i in range(4))
    qp, qm = relu_q_pm(delta, r1, r2, b)
    sp = np.hypot(tp * r1, r2)
    sm = np.hypot(tm * r1, r2)
    zp = np.clip(b / np.maximum(sp, _TINY), -_BIG, _BIG)
    zm = np.clip(b / np.maximum(sm, _TINY), -_BIG, _BIG)
    dq_db_p = np.where(sp > 0.0, ndtr(zp), (b > 0.0).astype(float))
    dq_db_m = np.where(sm > 0.0, ndtr(zm), (b > 0.0).astype(float))
    dq_ds_p = np.where(sp > 0.0, norm_pdf(zp), 0.0)
    dq_ds_m = np.where(sm > 0.0, norm_pdf(zm), 0.0)
    inv_sp = np.where(sp > 0.0, 1.0 / np.maximum(sp, _TINY), 0.0)
    inv_sm = np.where(sm > 0.0, 1.0 / np.maximum(sm, _TINY), 0.0)
    out[:, 0] = lp * qp + lm * qm
    out[:, 1] = a * (lp * dq_db_p + lm * dq_db_m)
    out[:, 2] = a * (lp * dq_ds_p * tp * tp * r1 * inv_sp
                     + lm * dq_ds_m * tm * tm * r1 * inv_sm)
    out[:, 3] = a * (lp * dq_ds_p * r2 * inv_sp + lm * dq_ds_m * r2 * inv_sm)
    return out


def psi_grad(act: ActivationSpec, delta: float, point, atoms: AtomEnsemble,
             d: float = math.inf) -> np.ndarray:
    """Gradient of psi at a single point of the ensemble's space."""
    point = np.asarray(point, dtype=float).reshape(1, -1)
    return psi_grad_points(act, delta, point, atoms, d)[0]


def risk_gradient_atoms(act: ActivationSpec, delta: float, d: float,
                        atoms: AtomEnsemble) -> np.ndarray:
    """Gradient of reduced_risk with respect to the atom coordinates,
    written out from the risk expression itself (independent of psi_grad;
    the two are tied by grad_i R = 2 w_i grad psi(x_i))."""
    w = atoms.weights
    tp, tm = _taus(delta)
    if d == math.inf:
        mp, mm = _q_means(act, delta, atoms)
        out = np.empty_like(atoms.atoms)
        if atoms.space is Space.RADIAL_1D:
            r = atoms.atoms[:, 0]
            _, dqp = q_eval(act, tp * r)
            _, dqm = q_eval(act, tm * r)
            out[:, 0] = -(1.0 - mp) * w * tp * np.asarray(dqp) \
                + (1.0 + mm) * w * tm * np.asarray(dqm)
            return out
        if atoms.space is Space.ANISO_2D:
            a1, a2 = atoms.atoms[:, 0], atoms.atoms[:, 1]
            rp, rm = np.hypot(tp * a1, a2), np.hypot(tm * a1, a2)
            _, dqp = q_eval(act, rp)
            _, dqm = q_eval(act, rm)
            gp = np.where(rp > 0, np.asarray(dqp) / np.maximum(rp, _TINY), 0.0)
            gm = np.where(rm > 0, np.asarray(dqm) / np.maximum(rm, _TINY), 0.0)
            out[:, 0] = -(1.0 - mp) * w * gp * tp * tp * a1 \
                + (1.0 + mm) * w * gm * tm * tm * a1
            out[:, 1] = -(1.0 - mp) * w * gp * a2 + (1.0 + mm) * w * gm * a2
            return out
        a, b, r1, r2 = (atoms.atoms[:, i] for i in range(4))
        qp, qm = relu_q_pm(delta, r1, r2, b)
        sp, sm = np.hypot(tp * r1, r2), np.hypot(tm * r1, r2)
        zp = np.clip(b / np.maximum(sp, _TINY), -_BIG, _BIG)
        zm = np.clip(b / np.maximum(sm, _TINY), -_BIG, _BIG)
        db_p = np.where(sp > 0, ndtr(zp), (b > 0).astype(float))
        db_m = np.where(sm > 0, ndtr(zm), (b > 0).astype(float))
        ds_p = np.where(sp > 0, norm_pdf(zp), 0.0)
        ds_m = np.where(sm > 0, norm_pdf(zm), 0.0)
        isp = np.where(sp > 0, 1.0 / np.maximum(sp, _TINY), 0.0)
        ism = np.where(sm > 0, 1.0 / np.maximum(sm, _TINY), 0.0)
        cp, cm = -(1.0 - mp) * w, (1.0 + mm) * w
        out[:, 0] = cp * qp + cm * qm
        out[:, 1] = cp * a * db_p + cm * a * db_m
        out[:, 2] = cp * a * ds_p * tp * tp * r1 * isp \
            + cm * a * ds_m * tm * tm * r1 * ism
        out[:, 3] = cp * a * ds_p * r2 * isp + cm * a * ds_m * r2 * ism
        return out
    if atoms.space is not Space.RADIAL_1D:
        raise ValueError("finite-d risk gradient exists only in the radial space")
    r = atoms.atoms[:, 0]
    du = u_d_dr1(act, delta, d, r[:, None], r[None, :])
    out = np.empty_like(atoms.atoms)
    out[:, 0] = 2.0 * w * (v_prime(act, delta, r) + du @ w)
    return out
