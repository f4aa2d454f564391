"""Activation functions, synthetic data model, and Gaussian-smoothed scalars.

The three activations are a bounded piecewise-linear sigmoid, a non-monotone
three-segment variant, and a ReLU unit with trainable offset and output
weight.  Data are two centered Gaussian classes whose covariances differ by
a factor (1 +/- delta)^2, either on every coordinate (isotropic) or only on
the first ``s0`` coordinates (anisotropic).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

import numpy as np
from scipy.special import ndtr

INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class DivergenceError(RuntimeError):
    """Raised when an iteration produces non-finite or runaway values."""


def norm_pdf(x):
    return INV_SQRT_2PI * np.exp(-0.5 * np.square(x))


class ActivationKind(Enum):
    PIECEWISE_LINEAR = "piecewise_linear"
    NON_MONOTONE = "non_monotone"
    RELU_AFFINE = "relu_affine"


@dataclass(frozen=True)
class ActivationSpec:
    """A scalar activation given by its kind and breakpoints.

    ``knots`` is an ordered tuple of (t, s) pairs; the function is linear
    between consecutive knots and constant outside the first/last one.
    RELU_AFFINE carries no knots; offset and output weight live with the
    weight ensemble, and the caller supplies the pre-activation.
    """

    kind: ActivationKind
    knots: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        if self.kind is ActivationKind.RELU_AFFINE:
            if self.knots:
                raise ValueError("relu_affine takes no knots")
            return
        if len(self.knots) < 2:
            raise ValueError("piecewise activation needs at least two knots")
        ts = [t for t, _ in self.knots]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("knot abscissae must be strictly increasing")
        if self.kind is ActivationKind.PIECEWISE_LINEAR and len(self.knots) != 2:
            raise ValueError("piecewise_linear has exactly two knots")

    @property
    def bounded(self) -> bool:
        return self.kind is not ActivationKind.RELU_AFFINE


def piecewise_linear(s1: float = -2.5, s2: float = 7.5,
                     t1: float = 0.5, t2: float = 1.5) -> ActivationSpec:
    """Saturating ramp: s1 below t1, s2 above t2, linear in between."""
    return ActivationSpec(ActivationKind.PIECEWISE_LINEAR, ((t1, s1), (t2, s2)))


def non_monotone() -> ActivationSpec:
    """Three-segment activation that dips before rising: knots
    (0, -2.5) -> (0.5, -4) -> (1.5, 7.5), constant outside."""
    return ActivationSpec(
        ActivationKind.NON_MONOTONE, ((0.0, -2.5), (0.5, -4.0), (1.5, 7.5))
    )


def relu_affine() -> ActivationSpec:
    return ActivationSpec(ActivationKind.RELU_AFFINE)


@dataclass(frozen=True)
class DataModel:
    """Two-class Gaussian mixture: y = +-1 with covariance (1 +- delta)^2.

    ``d`` may be math.inf for the reduced (dimension-free) computations.
    If ``s0`` is set, only the first s0 coordinates carry the class signal.
    """

    delta: float
    d: float
    s0: int | None = None

    def __post_init__(self):
        if not 0.0 <= self.delta < 1.0:
            raise ValueError("delta must lie in [0, 1)")
        if self.d != math.inf:
            if int(self.d) != self.d or self.d < 1:
                raise ValueError("d must be a positive integer or math.inf")
        if self.s0 is not None:
            if self.d == math.inf:
                raise ValueError("anisotropic model needs finite d")
            if not 1 <= self.s0 <= self.d:
                raise ValueError("s0 must lie in [1, d]")

    @property
    def tau_plus(self) -> float:
        return 1.0 + self.delta

    @property
    def tau_minus(self) -> float:
        return 1.0 - self.delta

    @property
    def anisotropic(self) -> bool:
        return self.s0 is not None and self.s0 < self.d


@dataclass(frozen=True)
class SmoothedKernelCache:
    """Per-segment constants of a piecewise-linear activation.

    ``slopes``/``intercepts`` have one entry per interval, including the two
    constant tails (slope 0).  ``sigma_sl``/``sigma_itc`` are the slope and
    intercept of the single interior segment of the two-knot activation,
    sigma_sl = (s2 - s1)/(t2 - t1) and sigma_itc = s1 - sigma_sl * t1.
    """

    xs: np.ndarray          # (K,) knot abscissae
    ys: np.ndarray          # (K,) knot values
    slopes: np.ndarray      # (K+1,)
    intercepts: np.ndarray  # (K+1,)
    sigma_sl: float | None
    sigma_itc: float | None


@lru_cache(maxsize=None)
def smoothing_cache(act: ActivationSpec) -> SmoothedKernelCache:
    if act.kind is ActivationKind.RELU_AFFINE:
        raise ValueError("relu_affine has no piecewise-segment cache")
    xs = np.array([t for t, _ in act.knots], dtype=float)
    ys = np.array([s for _, s in act.knots], dtype=float)
    inner = np.diff(ys) / np.diff(xs)
    slopes = np.concatenate(([0.0], inner, [0.0]))
    intercepts = np.concatenate(([ys[0]], ys[:-1] - inner * xs[:-1], [ys[-1]]))
    if len(xs) == 2:
        sl = float(inner[0])
        cache_sl, cache_itc = sl, float(ys[0] - sl * xs[0])
    else:
        cache_sl = cache_itc = None
    return SmoothedKernelCache(xs, ys, slopes, intercepts, cache_sl, cache_itc)


def sigma_eval(act: ActivationSpec, t):
    """Activation value; vectorized in t."""
    t = np.asarray(t, dtype=float)
    if act.kind is ActivationKind.RELU_AFFINE:
        out = np.maximum(t, 0.0)
    else:
        cache = smoothing_cache(act)
        out = np.interp(t, cache.xs, cache.ys)
    return out if out.ndim else float(out)

def sigma_deriv(act: ActivationSpec, t):
    """Weak derivative of the activation (right derivative at knots)."""
    t = np.asarray(t, dtype=float)
    if act.kind is ActivationKind.RELU_AFFINE:
        out = np.where(t >= 0.0, 1.0, 0.0)
    else:
        cache = smoothing_cache(act)
        idx = np.searchsorted(cache.xs, t, side="right")
        out = cache.slopes[idx]
    return out if out.ndim else float(out)


def g_smoothed(act: ActivationSpec, a, b):
    """Gaussian-smoothed activation mean E[sigma(a + b*G)], G ~ N(0,1).

    Closed form: each linear segment contributes Phi/phi terms.  Requires
    b > 0; the b -> 0 limit is sigma(a) and is left to callers.
    """
    cache = smoothing_cache(act)
    a = np.asarray(a, dtype=float)
    b_arr = np.asarray(b, dtype=float)
    if np.any(b_arr <= 0.0):
        raise ValueError("g_smoothed requires b > 0")
    a, b_arr = np.broadcast_arrays(a, b_arr)
    alpha = (cache.xs - a[..., None]) / b_arr[..., None]   # (..., K)
    cdf = ndtr(alpha)
    pdf = norm_pdf(alpha)
    out = cache.ys[-1] * np.ones_like(a) + cache.ys[0] * cdf[..., 0] \
        - cache.ys[-1] * cdf[..., -1]
    inner_m = cache.slopes[1:-1]
    inner_c = cache.intercepts[1:-1]
    lin = inner_m * a[..., None] + inner_c
    out = out + np.sum(lin * (cdf[..., 1:] - cdf[..., :-1]), axis=-1)
    out = out + b_arr * np.sum(inner_m * (pdf[..., :-1] - pdf[..., 1:]), axis=-1)
    return out if out.ndim else float(out)


def q_eval(act: ActivationSpec, r):
    """Radial smoothing q(r) = E[sigma(r*G)] and its derivative q'(r).

    q(0) = sigma(0) exactly.  q'(r) comes from the segment-wise exponential
    formula; at r = 0 the right limit is returned (zero whenever the
    activation is flat around the origin, as for the default sigmoid).
    """
    cache = smoothing_cache(act)
    r = np.asarray(r, dtype=float)
    if np.any(r < 0.0):
        raise ValueError("q_eval requires r >= 0")
    rs = np.where(r > 0.0, r, 1.0)
    q = np.where(r > 0.0, g_smoothed(act, 0.0, rs), sigma_eval(act, 0.0))

    m = cache.slopes[1:-1]
    with np.errstate(divide="ignore"):
        ratio = cache.xs / rs[..., None]
    pdf = norm_pdf(ratio)
    qp_pos = np.sum(m * (pdf[..., :-1] - pdf[..., 1:]), axis=-1)
    # r -> 0+: only a segment whose left knot sits exactly at 0 contributes
    at_zero = norm_pdf(0.0) * np.sum(
        m * ((cache.xs[:-1] == 0.0) - (cache.xs[1:] == 0.0).astype(float))
    )
    qp = np.where(r > 0.0, qp_pos, at_zero)
    if q.ndim:
        return q, qp
    return float(q), float(qp)


def class_scales(model: DataModel, y):
    """Per-coordinate standard deviations of x given the label(s) y."""
    y = np.asarray(y)
    tau = np.where(y > 0, model.tau_plus, model.tau_minus)
    d = int(model.d)
    scales = np.ones(y.shape + (d,))
    s0 = d if model.s0 is None else model.s0
    scales[..., :s0] = tau[..., None]
    return scales


def sample_example(model: DataModel, rng: np.random.Generator):
    """Draw one labeled example (y, x): y uniform on {+-1}, x | y Gaussian."""
    if model.d == math.inf:
        raise ValueError("sampling requires finite d")
    y = 1 if rng.random() < 0.5 else -1
    x = rng.standard_normal(int(model.d)) * class_scales(model, y)
    return y, x


def sample_batch(model: DataModel, n: int, rng: np.random.Generator):
    """Vectorized sampler: labels (n,) and features (n, d)."""
    if model.d == math.inf:
        raise ValueError("sampling requires finite d")
    y = np.where(rng.random(n) < 0.5, 1.0, -1.0)
    x = rng.standard_normal((n, int(model.d))) * class_scales(model, y)
    return y, x
