"""One-pass SGD on the full N x D weight ensemble.

Each step consumes a fresh sample (never revisited).  The noisy variant adds
an l2 shrinkage and per-unit Gaussian kicks of size sqrt(2 s_k / beta).
Step sizes follow s_k = epsilon * xi(k) with xi constant or a power decay
k^(-exponent); the matching PDE time of iteration k solves
integral_0^t xi = sum_{j<k} s_j.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .kernels import AtomEnsemble, Space, pwl_gaussian_product, v_eval
from .model import (
    ActivationKind,
    ActivationSpec,
    DataModel,
    DivergenceError,
    class_scales,
    sigma_deriv,
    sigma_eval,
    smoothing_cache,
)
from .streams import stream

_GUARD_STRIDE = 256
_NORM_LIMIT = 1e6


def _mean_sorted(values: np.ndarray) -> float:
    """Mean with a value-sorted reduction: the result depends only on the
    multiset of unit outputs, so permuting units (or changing the thread
    count) cannot move the trajectory by even one ulp."""
    return float(np.sum(np.sort(values)) / values.size)


@dataclass(frozen=True)
class Schedule:
    """Step-size modulation xi: constant c, or max(k, 1)^(-exponent)."""

    kind: str
    value: float = 1.0

    def __post_init__(self):
        if self.kind not in ("constant", "power"):
            raise ValueError("schedule kind must be 'constant' or 'power'")
        if self.kind == "constant" and self.value <= 0:
            raise ValueError("constant schedule needs c > 0")
        if self.kind == "power" and not 0 < self.value < 1:
            raise ValueError("power schedule needs exponent in (0, 1)")

    def xi_impl(self, k):
        """Multiplier applied to epsilon at iteration k."""
        if self.kind == "constant":
            return self.value * np.ones_like(np.asarray(k, dtype=float))
        return np.maximum(np.asarray(k, dtype=float), 1.0) ** (-self.value)

    def xi_time(self, t):
        """xi as a function of PDE time (singular at 0 for power decay)."""
        if self.kind == "constant":
            return self.value * np.ones_like(np.asarray(t, dtype=float))
        return np.asarray(t, dtype=float) ** (-self.value)

    def xi_integral(self, t):
        """integral_0^t xi(s) ds."""
        t = np.asarray(t, dtype=float)
        if self.kind == "constant":
            return self.value * t
        p = 1.0 - self.value
        return t**p / p

    def time_from_cumulative(self, s):
        """Invert xi_integral: the PDE time whose xi-mass equals s."""
        if self.kind == "constant":
            return s / self.value
        p = 1.0 - self.value
        return (p * s) ** (1.0 / p)


def constant_schedule(c: float = 1.0) -> Schedule:
    return Schedule("constant", c)


def power_schedule(exponent: float = 0.25) -> Schedule:
    return Schedule("power", exponent)


def step_sizes(schedule: Schedule, epsilon: float, k) -> np.ndarray:
    return epsilon * schedule.xi_impl(k)


def iteration_to_time(schedule: Schedule, epsilon: float, k: int) -> float:
    """PDE time t with integral_0^t xi = sum_{j<k} s_j."""
    if k <= 0:
        return 0.0
    if schedule.kind == "constant":
        return epsilon * k
    total = 0.0
    chunk = 1 << 20
    for start in range(0, k, chunk):
        j = np.arange(start, min(start + chunk, k), dtype=float)
        total += float(np.sum(np.maximum(j, 1.0) ** (-schedule.value)))
    return float(schedule.time_from_cumulative(epsilon * total))


@dataclass
class WeightEnsemble:
    """N weight vectors, plus output weights / offsets for the ReLU unit."""

    w: np.ndarray
    a: np.ndarray | None = None
    b: np.ndarray | None = None

    def __post_init__(self):
        self.w = np.atleast_2d(np.asarray(self.w, dtype=float))
        if not np.all(np.isfinite(self.w)):
            raise ValueError("weights must be finite")
        if (self.a is None) != (self.b is None):
            raise ValueError("output weight and offset come together")
        if self.a is not None:
            self.a = np.asarray(self.a, dtype=float)
            self.b = np.asarray(self.b, dtype=float)
            n = self.w.shape[0]
            if self.a.shape != (n,) or self.b.shape != (n,):
                raise ValueError("a and b need one entry per unit")

    @property
    def n_units(self) -> int:
        return self.w.shape[0]

    @property
    def dim(self) -> int:
        return self.w.shape[1]

    def copy(self) -> "WeightEnsemble":
        return WeightEnsemble(
            self.w.copy(),
            None if self.a is None else self.a.copy(),
            None if self.b is None else self.b.copy(),
        )

    def radial_atoms(self, model: DataModel, space: Space | None = None) -> AtomEnsemble:
        """Collapse the ensemble onto its reduced coordinates."""
        if space is None:
            if self.a is not None:
                space = Space.RELU_4D
            elif model.anisotropic:
                space = Space.ANISO_2D
            else:
                space = Space.RADIAL_1D
        if space is Space.RADIAL_1D:
            atoms = np.linalg.norm(self.w, axis=1)[:, None]
        else:
            s0 = model.s0 if model.s0 is not None else self.dim
            r1 = np.linalg.norm(self.w[:, :s0], axis=1)
            r2 = np.linalg.norm(self.w[:, s0:], axis=1)
            if space is Space.ANISO_2D:
                atoms = np.column_stack([r1, r2])
            else:
                atoms = np.column_stack([self.a, self.b, r1, r2])
        return AtomEnsemble.equal_weights(space, atoms)


def gaussian_init(n_units: int, model: DataModel, scale: float,
                  rng: np.random.Generator, a0: float | None = None,
                  b0: float | None = None) -> WeightEnsemble:
    """w_i ~ N(0, scale^2/d * I_d); constant a, b for the ReLU unit."""
    d = int(model.d)
    w = rng.standard_normal((n_units, d)) * (scale / math.sqrt(d))
    if a0 is None:
        return WeightEnsemble(w)
    return WeightEnsemble(w, np.full(n_units, float(a0)), np.full(n_units, float(b0)))


@dataclass(frozen=True)
class SgdConfig:
    epsilon: float
    schedule: Schedule
    steps: int
    beta: float = math.inf
    lam: float = 0.0
    seed: int = 0
    risk_eval_stride: int = 0
    mc_samples: int = 10_000
    exact_risk: bool = True

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")
        if self.steps < 0:
            raise ValueError("steps must be nonnegative")
        if not self.beta > 0:
            raise ValueError("beta must be positive (math.inf for noiseless)")
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if self.mc_samples < 2:
            raise ValueError("mc_samples must be at least 2")


@dataclass
class SummaryRow:
    iteration: int
    t: float
    risk_exact: float
    risk_mc: float
    mc_se: float
    error_rate: float
    mean_norm: float
    a_mean: float = math.nan
    b_mean: float = math.nan
    r1_mean: float = math.nan
    r2_mean: float = math.nan

    FIELDS = ("iteration", "t", "risk_exact", "risk_mc", "mc_se", "error_rate",
              "mean_norm", "a_mean", "b_mean", "r1_mean", "r2_mean")


@dataclass
class SgdTrajectory:
    rows: list[SummaryRow]
    snapshots: list[tuple[int, AtomEnsemble]]
    final: WeightEnsemble

    def snapshot_iterations(self) -> list[int]:
        return [k for k, _ in self.snapshots]


@dataclass
class McRisk:
    estimate: float
    std_error: float
    error_rate: float

    def __iter__(self):
        return iter((self.estimate, self.std_error, self.error_rate))


def predictions(act: ActivationSpec, weights: WeightEnsemble, x: np.ndarray):
    """Network output (1/N) sum_i sigma_*(x; theta_i) for rows of x."""
    z = x @ weights.w.T
    if act.kind is ActivationKind.RELU_AFFINE:
        return np.maximum(z + weights.b, 0.0) @ weights.a / weights.n_units
    return np.mean(sigma_eval(act, z), axis=-1)


def mc_risk(act: ActivationSpec, model: DataModel, weights: WeightEnsemble,
            n_samples: int, rng: np.random.Generator) -> McRisk:
    """Monte-Carlo estimate of the population risk E[(y - yhat)^2], its
    standard error, and the misclassification rate P(sign(yhat) != y)."""
    total = 0.0
    total_sq = 0.0
    miscls = 0
    done = 0
    chunk = 65536
    while done < n_samples:
        n = min(chunk, n_samples - done)
        y = np.where(rng.random(n) < 0.5, 1.0, -1.0)
        x = rng.standard_normal((n, int(model.d))) * class_scales(model, y)
        yhat = predictions(act, weights, x)
        sq = np.square(y - yhat)
        total += float(np.sum(sq))
        total_sq += float(np.sum(np.square(sq)))
        miscls += int(np.count_nonzero(np.sign(yhat) != y))
        done += n
    mean = total / n_samples
    var = max(total_sq / n_samples - mean * mean, 0.0)
    return McRisk(mean, math.sqrt(var / n_samples), miscls / n_samples)


def _pair_stats(model: DataModel, weights: WeightEnsemble, tau: float):
    """Per-class scalar statistics of the Gaussian pre-activations:
    standard deviations s_i and correlation matrix of <w_i, x>."""
    s0 = model.s0 if model.s0 is not None else weights.dim
    w1, w2 = weights.w[:, :s0], weights.w[:, s0:]
    g = tau * tau * (w1 @ w1.T) + (w2 @ w2.T)
    s = np.sqrt(np.maximum(np.diag(g), 0.0))
    denom = np.outer(s, s)
    with np.errstate(invalid="ignore", divide="ignore"):
        rho = np.where(denom > 0.0, g / np.where(denom > 0.0, denom, 1.0), 0.0)
    return s, np.clip(rho, -1.0, 1.0)


def exact_population_risk(act: ActivationSpec, model: DataModel,
                          weights: WeightEnsemble) -> float:
    """Population risk 1 + (2/N) sum_i V + (1/N^2) sum_ij U in closed form.

    Pre-activations are Gaussian per class, so V and U reduce to the
    smoothed one- and two-neuron kernels; a zero-norm unit is treated as
    uncorrelated with everything (right-angle convention).
    """
    if act.kind is ActivationKind.RELU_AFFINE:
        raise ValueError("exact risk is defined for the bounded activations only")
    if model.d == math.inf:
        raise ValueError("exact risk needs finite d")
    n = weights.n_units
    risk = 1.0
    for sign, tau in ((-1.0, model.tau_plus), (+1.0, model.tau_minus)):
        s, rho = _pair_stats(model, weights, tau)
        risk += sign * float(np.sum(_q_of(act, s))) / n
        iu, ju = np.triu_indices(n, 1)
        u_off = pwl_gaussian_product(act, s[iu], s[ju], rho[iu, ju])
        u_diag = pwl_gaussian_product(act, s, s, np.ones_like(s))
        risk += 0.5 * (2.0 * float(np.sum(u_off)) + float(np.sum(u_diag))) / (n * n)
    return float(risk)


def _q_of(act, s):
    from .model import q_eval

    q, _ = q_eval(act, s)
    return np.asarray(q)


def sgd_run(model: DataModel, act: ActivationSpec, cfg: SgdConfig,
            init: WeightEnsemble, checkpoints=None) -> SgdTrajectory:
    """Run one-pass (noisy) SGD from ``init`` and record periodic summaries.

    theta_i <- (1 - 2 lam s_k) theta_i + 2 s_k (y - yhat) grad sigma_*(x; theta_i)
               + sqrt(2 s_k / beta) g_i,   one fresh sample per step.

    Bit-reproducible for a given seed: all randomness comes from counter-based
    streams keyed off cfg.seed.
    """
    relu = act.kind is ActivationKind.RELU_AFFINE
    if relu and init.a is None:
        raise ValueError("relu runs need output weights and offsets")
    if init.dim != int(model.d):
        raise ValueError("init dimension does not match the data model")
    ens = init.copy()
    w, n, d = ens.w, ens.n_units, ens.dim
    noisy = cfg.beta != math.inf
    if checkpoints is None:
        stride = cfg.risk_eval_stride or max(1, cfg.steps // 50)
        checkpoints = set(range(0, cfg.steps + 1, stride))
    else:
        checkpoints = {int(k) for k in checkpoints if 0 <= k <= cfg.steps}
        checkpoints.add(0)
    checkpoints.add(cfg.steps)

    data = stream(cfg.seed, "data")
    noise = stream(cfg.seed, "noise") if noisy else None
    if not relu:
        cache = smoothing_cache(act)

    rows: list[SummaryRow] = []
    snapshots: list[tuple[int, AtomEnsemble]] = []

    def record(k: int, t: float):
        atoms = ens.radial_atoms(model)
        risk_exact = math.nan
        if cfg.exact_risk and not relu:
            risk_exact = exact_population_risk(act, model, ens)
        mc = mc_risk(act, model, ens, cfg.mc_samples, stream(cfg.seed, "mc", k))
        norms = np.linalg.norm(w, axis=1)
        row = SummaryRow(k, t, risk_exact, mc.estimate, mc.std_error,
                         mc.error_rate, float(np.mean(norms)))
        if relu:
            row.a_mean = float(np.mean(ens.a))
            row.b_mean = float(np.mean(ens.b))
            row.r1_mean = float(np.mean(atoms.atoms[:, 2]))
            row.r2_mean = float(np.mean(atoms.atoms[:, 3]))
        rows.append(row)
        snapshots.append((k, atoms))

    record(0, 0.0)
    cum = 0.0
    block = 4096
    y_blk = x_blk = None
    for k in range(cfg.steps):
        j = k % block
        if j == 0:
            m = min(block, cfg.steps - k)
            y_blk = np.where(data.random(m) < 0.5, 1.0, -1.0)
            x_blk = data.standard_normal((m, d)) * class_scales(model, y_blk)
        y, x = y_blk[j], x_blk[j]
        s_k = cfg.epsilon * float(cfg.schedule.xi_impl(k))
        z = w @ x
        if relu:
            pre = z + ens.b
            active = pre > 0.0
            rect = np.maximum(pre, 0.0)
            yhat = _mean_sorted(ens.a * rect)
            coef = 2.0 * s_k * (y - yhat)
            gw = coef * (ens.a * active)
            ga = coef * rect
            gb = coef * (ens.a * active)
            if cfg.lam > 0.0:
                w *= 1.0 - 2.0 * cfg.lam * s_k
                ens.a *= 1.0 - 2.0 * cfg.lam * s_k
                ens.b *= 1.0 - 2.0 * cfg.lam * s_k
            w += gw[:, None] * x
            ens.a += ga
            ens.b += gb
            if noisy:
                amp = math.sqrt(2.0 * s_k / cfg.beta)
                w += amp * noise.standard_normal((n, d))
                ens.a += amp * noise.standard_normal(n)
                ens.b += amp * noise.standard_normal(n)
        else:
            yhat = _mean_sorted(np.interp(z, cache.xs, cache.ys))
            deriv = cache.slopes[np.searchsorted(cache.xs, z, side="right")]
            coef = 2.0 * s_k * (y - yhat)
            if cfg.lam > 0.0:
                w *= 1.0 - 2.0 * cfg.lam * s_k
            w += (coef * deriv)[:, None] * x
            if noisy:
                w += math.sqrt(2.0 * s_k / cfg.beta) * noise.standard_normal((n, d))
        cum += s_k
        if (k + 1) % _GUARD_STRIDE == 0 or (k + 1) in checkpoints:
            if not np.all(np.isfinite(w)) or np.max(np.abs(w)) > _NORM_LIMIT:
                raise DivergenceError(f"weight ensemble diverged at step {k + 1}")
        if (k + 1) in checkpoints:
            record(k + 1, float(cfg.schedule.time_from_cumulative(cum)))
    return SgdTrajectory(rows, snapshots, ens)
