"""Cross-validation of SGD against the reduced dynamics, and the
finite-temperature fixed-point check.

Comparisons run on radial marginals: the risk functional applied to both
empirical measures, plus the 1-D Wasserstein-1 distance (sorted-sample /
quantile form).  The scaling of the SGD-vs-limit gap with N is summarized
by a log-log slope.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dd import DdTrajectory, dd_integrate, log_time_grid
from .kernels import AtomEnsemble, Space, lambda_pm, psi_value, reduced_risk
from .model import ActivationSpec, DataModel
from .sgd import (
    SgdConfig,
    SgdTrajectory,
    WeightEnsemble,
    gaussian_init,
    iteration_to_time,
    sgd_run,
)
from .streams import stream


def wasserstein1_1d(samples_a, samples_b) -> float:
    """W1 between two empirical measures on the line.

    Equal sizes: mean absolute difference of sorted samples.  Unequal:
    integral of |F_a - F_b| over the merged support (quantile form).
    """
    a = np.sort(np.asarray(samples_a, dtype=float).ravel())
    b = np.sort(np.asarray(samples_b, dtype=float).ravel())
    if a.size == 0 or b.size == 0:
        raise ValueError("empty sample set")
    if a.size == b.size:
        return float(np.mean(np.abs(a - b)))
    allv = np.sort(np.concatenate([a, b]))
    mids = allv[:-1]
    fa = np.searchsorted(a, mids, side="right") / a.size
    fb = np.searchsorted(b, mids, side="right") / b.size
    return float(np.sum(np.abs(fa - fb) * np.diff(allv)))


@dataclass
class ChaosCell:
    n_units: int | float
    epsilon: float
    horizon: float
    max_risk_gap: float
    w1_gap_at_horizon: float
    error: str = ""


@dataclass
class ChaosReport:
    cells: list[ChaosCell]
    slope: float

    def rows(self):
        for c in self.cells:
            yield (c.n_units, c.epsilon, c.horizon, c.max_risk_gap,
                   c.w1_gap_at_horizon, c.error)


def risk_of_radii(act: ActivationSpec, delta: float, radii) -> float:
    """Dimension-free reduced risk of an empirical radial measure."""
    atoms = AtomEnsemble.equal_weights(Space.RADIAL_1D,
                                       np.asarray(radii, float)[:, None])
    return reduced_risk(act, delta, math.inf, atoms)


class RadialFlowTable:
    """Tabulated radial pair kernel at fixed dimension, for fast reduced
    dynamics and risk evaluation on large ensembles.

    The pair potential u_d and its first-argument derivative are bilinearly
    interpolated from a K x K grid; because the interpolation weights
    separate, a mean-field drift or a risk quadratic form over J atoms costs
    O(J + K^2) instead of J^2 kernel evaluations.
    """

    def __init__(self, act: ActivationSpec, delta: float, d: float,
                 r_max: float = 8.0, n_grid: int = 160):
        from .kernels import u_d_dr1, u_d_eval, v_prime

        self.act, self.delta, self.d = act, delta, d
        self.grid = np.linspace(0.0, r_max, n_grid)
        self.u_tab = np.empty((n_grid, n_grid))
        self.du_tab = np.empty((n_grid, n_grid))
        chunk = max(1, (1 << 21) // (n_grid * 400))
        for lo in range(0, n_grid, chunk):
            rows = slice(lo, min(lo + chunk, n_grid))
            g1 = self.grid[rows][:, None]
            g2 = self.grid[None, :]
            self.u_tab[rows] = np.asarray(u_d_eval(act, delta, d, g1, g2))
            self.du_tab[rows] = np.asarray(u_d_dr1(act, delta, d, g1, g2))
        self.vp_tab = np.asarray(v_prime(act, delta, self.grid))

    def project(self, radii: np.ndarray, weights: np.ndarray) -> np.ndarray:
        """Linear-binning weights of the empirical measure onto the grid."""
        k = len(self.grid)
        h = self.grid[1] - self.grid[0]
        pos = np.clip(radii, 0.0, self.grid[-1]) / h
        idx = np.minimum(pos.astype(int), k - 2)
        frac = pos - idx
        beta = np.zeros(k)
        np.add.at(beta, idx, weights * (1.0 - frac))
        np.add.at(beta, idx + 1, weights * frac)
        return beta

    def risk(self, radii: np.ndarray, weights: np.ndarray) -> float:
        from .kernels import v_eval

        beta = self.project(radii, weights)
        vterm = float(np.dot(weights, np.asarray(v_eval(self.act, self.delta,
                                                        radii))))
        return 1.0 + 2.0 * vterm + float(beta @ self.u_tab @ beta)

    def drift(self, radii: np.ndarray, weights: np.ndarray) -> np.ndarray:
        """psi_d'(r_i; rho_hat) via the tabulated kernel."""
        beta = self.project(radii, weights)
        conv = self.du_tab @ beta
        return np.interp(radii, self.grid, self.vp_tab) \
            + np.interp(radii, self.grid, conv)

    def integrate(self, radii0: np.ndarray, times: np.ndarray,
                  schedule, snapshot_times) -> DdTrajectory:
        """Explicit Euler of the reduced flow with the tabulated drift."""
        from .dd import _xi_averages
        from .kernels import AtomEnsemble, Space

        r = np.asarray(radii0, float).copy()
        j = len(r)
        w = np.full(j, 1.0 / j)
        xi_avg = _xi_averages(schedule, times)
        snap_idx = {int(np.argmin(np.abs(times - t))) for t in snapshot_times}
        snap_idx |= {0, len(times) - 1}
        out_t, ens, risks = [], [], []

        def snap(i):
            out_t.append(float(times[i]))
            ens.append(AtomEnsemble.equal_weights(Space.RADIAL_1D, r[:, None].copy()))
            risks.append(self.risk(r, w))

        snap(0)
        for i in range(len(times) - 1):
            dt = times[i + 1] - times[i]
            r -= 2.0 * xi_avg[i] * dt * self.drift(r, w)
            np.maximum(r, 0.0, out=r)
            if i + 1 in snap_idx:
                snap(i + 1)
        return DdTrajectory(np.array(out_t), ens, np.array(risks))


def trajectory_gaps(risk_fn, reference: DdTrajectory, check_times,
                    radii_at_times) -> tuple[float, float]:
    """Max risk gap over checkpoints and W1 at the last checkpoint, between
    radial samples and the reference atom trajectory; both measured through
    the same risk functional."""
    max_gap = 0.0
    w1_last = math.nan
    for t, radii in zip(check_times, radii_at_times):
        idx = int(np.argmin(np.abs(reference.times - t)))
        gap = abs(risk_fn(np.asarray(radii, float)) - reference.risks[idx])
        max_gap = max(max_gap, gap)
        w1_last = wasserstein1_1d(radii, reference.ensembles[idx].radii())
    return max_gap, w1_last


def chaos_sweep(model: DataModel, act: ActivationSpec, base_cfg: SgdConfig,
                n_list, eps_list, horizon: float, init_scale: float = 0.8,
                n_reference_atoms: int = 400, n_checkpoints: int = 20,
                n_time_points: int = 20_000, n_replicas: int = 1) -> ChaosReport:
    """SGD-vs-limit gap across ensemble sizes and step sizes.

    One reduced-dynamics reference per sweep (initialized at the matched
    law's quantiles); each (N, eps) cell runs SGD to the horizon and
    reports the max risk gap over log-spaced checkpoints plus the terminal
    W1 between radial empirical measures, both averaged over ``n_replicas``
    independent runs.  An entry N = math.inf plays back the reference
    against itself (zero-gap control).  Per-cell failures are recorded, not
    raised.  The slope is the log-log fit of gap against N at the smallest
    step size.
    """
    seed = base_cfg.seed
    d = int(model.d)
    # reference init: exact quantiles of the radial law of N(0, scale^2/d I_d),
    # so the limit proxy carries O(1/J) quantization error instead of the
    # O(1/sqrt(J)) sampling error an iid draw would add to every gap
    from scipy.stats import chi2

    u = (np.arange(n_reference_atoms) + 0.5) / n_reference_atoms
    radii0 = init_scale / math.sqrt(d) * np.sqrt(chi2.ppf(u, df=d))
    grid = log_time_grid(horizon, n_time_points)
    check_times = np.geomspace(horizon / 100.0, horizon, n_checkpoints)
    # the reference is the reduced flow at the data dimension itself (the
    # actual mean-field limit of d-dimensional SGD), via the tabulated kernel
    table = RadialFlowTable(act, model.delta, d)
    reference = table.integrate(radii0, grid, base_cfg.schedule, check_times)
    ref_weights = np.full(n_reference_atoms, 1.0 / n_reference_atoms)

    def risk_fn(radii):
        radii = np.asarray(radii, float)
        return table.risk(radii, np.full(len(radii), 1.0 / len(radii)))

    n_finite = [int(n) for n in n_list if n != math.inf]
    n_max = max(n_finite) if n_finite else 0
    cells: list[ChaosCell] = []
    for eps in eps_list:
        acc: dict[int | float, list[tuple[float, float]]] = {n: [] for n in n_list}
        errors: dict[int | float, str] = {n: "" for n in n_list}
        steps = _steps_for_horizon(base_cfg, eps, horizon)
        ks = sorted({min(max(int(round(t / eps)), 1), steps)
                     for t in check_times})
        for rep in range(n_replicas):
            # the coupling construction: one data stream and one nested
            # initialization pool per replica, shared by every ensemble size,
            # so the N-comparison is paired and the trend is not washed out
            # by independent sampling noise
            rep_seed = int(stream(seed, "chaos", _eps_key(eps), rep).integers(2**63))
            pool = gaussian_init(n_max, model, init_scale,
                                 stream(rep_seed, "init-pool")) if n_max else None
            for n in n_list:
                try:
                    if n == math.inf:
                        if rep == 0:
                            radii = [reference.at_time(t).radii()
                                     for t in check_times]
                            acc[n].append(trajectory_gaps(
                                risk_fn, reference, check_times, radii))
                        continue
                    init = WeightEnsemble(pool.w[: int(n)].copy())
                    cfg = SgdConfig(
                        epsilon=eps, schedule=base_cfg.schedule, steps=steps,
                        beta=base_cfg.beta, lam=base_cfg.lam, seed=rep_seed,
                        risk_eval_stride=steps, mc_samples=base_cfg.mc_samples,
                        exact_risk=False,
                    )
                    traj = _sgd_radii_at(model, act, cfg, init, ks)
                    times = [iteration_to_time(cfg.schedule, eps, k) for k in ks]
                    acc[n].append(trajectory_gaps(risk_fn, reference,
                                                  times, traj))
                except Exception as exc:  # per-cell isolation
                    errors[n] = f"{type(exc).__name__}: {exc}"
        for n in n_list:
            if errors[n] or not acc[n]:
                cells.append(ChaosCell(n, eps, horizon, math.nan, math.nan,
                                       errors[n] or "no replicas completed"))
            else:
                gaps = [g for g, _ in acc[n]]
                w1s = [w for _, w in acc[n]]
                cells.append(ChaosCell(n, eps, horizon, float(np.mean(gaps)),
                                       float(np.mean(w1s))))
    slope = _fit_slope(cells, min(eps_list))
    return ChaosReport(cells, slope)


def _eps_key(eps: float) -> int:
    return int(round(eps * 1e12))


def _steps_for_horizon(base_cfg: SgdConfig, eps: float, horizon: float) -> int:
    sched = base_cfg.schedule
    if sched.kind == "constant":
        return int(math.ceil(horizon / (eps * sched.value)))
    k = 1
    while iteration_to_time(sched, eps, k) < horizon:
        k *= 2
    lo, hi = k // 2, k
    while lo + 1 < hi:
        mid = (lo + hi) // 2
        if iteration_to_time(sched, eps, mid) < horizon:
            lo = mid
        else:
            hi = mid
    return hi


def _sgd_radii_at(model, act, cfg, init, iterations):
    traj = sgd_run(model, act, cfg, init, checkpoints=iterations)
    have = dict(traj.snapshots)
    radii = []
    for k in iterations:
        if k not in have:
            raise RuntimeError(f"missing snapshot at iteration {k}")
        radii.append(have[k].radii())
    return radii


def _fit_slope(cells: list[ChaosCell], eps: float) -> float:
    pts = [(c.n_units, c.max_risk_gap) for c in cells
           if c.epsilon == eps and c.n_units != math.inf
           and not c.error and c.max_risk_gap > 0]
    if len(pts) < 2:
        return math.nan
    x = np.log([p[0] for p in pts])
    y = np.log([p[1] for p in pts])
    return float(np.polyfit(x, y, 1)[0])


def boltzmann_residual(samples, act: ActivationSpec, delta: float, beta: float,
                       lam: float, n_grid: int = 2048) -> float:
    """W1 distance between an empirical measure and the Gibbs density
    exp(-beta (psi(r; rho_hat) + lam r^2 / 2)) built from that same measure.

    The density is normalized on a bounded grid covering the samples; if the
    grid cannot hold at least 99% of the target mass the estimate is
    meaningless and an error is raised.
    """
    samples = np.sort(np.asarray(samples, dtype=float).ravel())
    if samples.size == 0:
        raise ValueError("empty sample set")
    atoms = AtomEnsemble.equal_weights(Space.RADIAL_1D, samples[:, None])
    width = max(4.0 / math.sqrt(beta * max(lam, 1e-12)), 0.5)
    hi = float(samples.max()) + width
    grid = np.linspace(0.0, hi, n_grid)
    energy = np.asarray(psi_value(act, delta, grid, atoms, math.inf)) \
        + 0.5 * lam * np.square(grid)
    loglik = -beta * energy
    loglik -= loglik.max()
    dens = np.exp(loglik)
    cell = grid[1] - grid[0]
    total = float(np.sum(dens) * cell)
    # estimated tail mass beyond the grid from the last cell's decay rate
    tail = float(dens[-1] * cell / max(1.0 - math.exp(
        min(loglik[-1] - loglik[-2], -1e-12)), 1e-12)) if n_grid > 1 else 0.0
    if total <= 0 or tail > 0.01 * total:
        raise ValueError("Gibbs density mass escapes the evaluation grid")
    cdf_target = np.cumsum(dens) * cell / total
    cdf_emp = np.searchsorted(samples, grid, side="right") / samples.size
    return float(np.sum(np.abs(cdf_emp - cdf_target)) * cell)
