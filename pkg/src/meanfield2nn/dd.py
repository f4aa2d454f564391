"""Reduced distributional dynamics via the multiple-deltas ansatz.

The evolving measure is an equal-weight sum of J point masses whose
locations follow the coupled gradient flow x_i' = -2 xi(t) grad psi(x_i; rho),
equivalently -J xi(t) grad_i of the J-atom risk.  Radial coordinates are
clamped at zero, the discrete analogue of the dynamics keeping its mass on
the open half-line.  A finite-temperature 1-D model system adds Gaussian
kicks and an l2 confinement (Euler-Maruyama with reflection at zero).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .kernels import (
    AtomEnsemble,
    Space,
    lambda_pm,
    psi_grad_points,
    psi_value,
    reduced_risk,
)
from .model import ActivationSpec, DivergenceError, q_eval, sigma_deriv, sigma_eval
from .sgd import Schedule


def log_time_grid(t_max: float, n_points: int = 100_000,
                  t_min: float | None = None) -> np.ndarray:
    """Integration times: 0, then n_points log10-equispaced values up to t_max."""
    if t_min is None:
        t_min = t_max * 1e-6
    grid = np.geomspace(t_min, t_max, n_points)
    return np.concatenate([[0.0], grid])


def _xi_averages(schedule: Schedule, times: np.ndarray) -> np.ndarray:
    """Exact interval averages of xi over consecutive grid times; finite even
    when xi itself is singular at t = 0 (power decay)."""
    integral = schedule.xi_integral(times)
    dt = np.diff(times)
    return np.diff(integral) / np.where(dt > 0, dt, 1.0)


@dataclass
class DdTrajectory:
    times: np.ndarray
    ensembles: list[AtomEnsemble]
    risks: np.ndarray

    def at_time(self, t: float) -> AtomEnsemble:
        idx = int(np.argmin(np.abs(self.times - t)))
        return self.ensembles[idx]


def _clamp_radial(space: Space, atoms: np.ndarray) -> None:
    for c in space.radial_columns:
        np.maximum(atoms[:, c], 0.0, out=atoms[:, c])


def dd_integrate(act: ActivationSpec, delta: float, d: float,
                 atoms0: AtomEnsemble, time_grid, schedule: Schedule,
                 snapshot_times=None) -> DdTrajectory:
    """Explicit Euler on the atom locations over ``time_grid``.

    Requires equal weights (the ansatz preserves them).  Snapshots are taken
    at every grid time unless ``snapshot_times`` selects a subset; risks are
    recorded wherever a snapshot is taken.
    """
    times = np.asarray(time_grid, dtype=float)
    if times[0] != 0.0 or np.any(np.diff(times) <= 0):
        raise ValueError("time grid must start at 0 and increase strictly")
    if np.ptp(atoms0.weights) > 1e-12:
        raise ValueError("the multiple-deltas ansatz needs equal weights")
    if d != math.inf and atoms0.space is not Space.RADIAL_1D:
        raise ValueError("finite d is only available in the radial space")

    if snapshot_times is None:
        snap_idx = set(range(len(times)))
    else:
        snap_idx = {int(np.argmin(np.abs(times - t))) for t in np.asarray(snapshot_times)}
    snap_idx.add(0)
    snap_idx.add(len(times) - 1)

    x = atoms0.atoms.copy()
    w = atoms0.weights.copy()
    xi_avg = _xi_averages(schedule, times)
    ensembles: list[AtomEnsemble] = []
    out_times: list[float] = []
    risks: list[float] = []

    def snap(i):
        ens = AtomEnsemble(atoms0.space, x.copy(), w.copy())
        ensembles.append(ens)
        out_times.append(float(times[i]))
        risks.append(reduced_risk(act, delta, d, ens))

    if 0 in snap_idx:
        snap(0)
    current = AtomEnsemble(atoms0.space, x, w)
    for i in range(len(times) - 1):
        dt = times[i + 1] - times[i]
        grad = psi_grad_points(act, delta, x, current, d)
        x -= 2.0 * xi_avg[i] * dt * grad
        if not np.all(np.isfinite(x)):
            raise DivergenceError(f"atom coordinates non-finite at t={times[i + 1]}")
        _clamp_radial(atoms0.space, x)
        if i + 1 in snap_idx:
            snap(i + 1)
    return DdTrajectory(np.array(out_times), ensembles, np.array(risks))


def langevin_mf_1d(act: ActivationSpec, delta: float, beta: float, lam: float,
                   atoms0: AtomEnsemble, time_grid, schedule: Schedule,
                   rng: np.random.Generator, snapshot_times=None) -> DdTrajectory:
    """Euler-Maruyama for the interacting 1-D diffusion at temperature 1/beta:

        r_i <- r_i - 2 xi (psi'(r_i; rho_hat) + lam r_i) dt
                   + sqrt(4 xi dt / beta) g_i,   reflected at 0.

    The noise amplitude is the exact discretization of the diffusion term
    2 xi / beta, so the stationary law is the Gibbs density
    exp(-beta (psi + lam r^2/2)) that boltzmann_residual checks against.
    A model system for the finite-temperature dynamics in one coordinate
    (not the radial projection of the d-dimensional diffusion).
    """
    if atoms0.space is not Space.RADIAL_1D:
        raise ValueError("the Langevin model system is one-dimensional")
    if not (0 < beta < math.inf):
        raise ValueError("beta must be finite and positive")
    times = np.asarray(time_grid, dtype=float)
    if times[0] != 0.0 or np.any(np.diff(times) <= 0):
        raise ValueError("time grid must start at 0 and increase strictly")

    if snapshot_times is None:
        snap_idx = set(range(len(times)))
    else:
        snap_idx = {int(np.argmin(np.abs(times - t))) for t in np.asarray(snapshot_times)}
    snap_idx.add(0)
    snap_idx.add(len(times) - 1)

    x = atoms0.atoms.copy()
    w = atoms0.weights.copy()
    xi_avg = _xi_averages(schedule, times)
    ensembles, out_times, risks = [], [], []

    def snap(i):
        ens = AtomEnsemble(Space.RADIAL_1D, x.copy(), w.copy())
        ensembles.append(ens)
        out_times.append(float(times[i]))
        risks.append(reduced_risk(act, delta, math.inf, ens))

    if 0 in snap_idx:
        snap(0)
    current = AtomEnsemble(Space.RADIAL_1D, x, w)
    j = x.shape[0]
    for i in range(len(times) - 1):
        dt = times[i + 1] - times[i]
        xi = xi_avg[i]
        drift = psi_grad_points(act, delta, x, current, math.inf)[:, 0] + lam * x[:, 0]
        x[:, 0] += -2.0 * xi * dt * drift \
            + math.sqrt(4.0 * xi * dt / beta) * rng.standard_normal(j)
        if not np.all(np.isfinite(x)):
            raise DivergenceError(f"particles non-finite at t={times[i + 1]}")
        np.abs(x, out=x)
        if i + 1 in snap_idx:
            snap(i + 1)
    return DdTrajectory(np.array(out_times), ensembles, np.array(risks))


def fixed_point_residual(act: ActivationSpec, delta: float, d: float,
                         atoms: AtomEnsemble) -> float:
    """Max norm of grad psi over the atoms carrying weight (> 1e-12)."""
    grads = psi_grad_points(act, delta, atoms.atoms, atoms, d)
    norms = np.linalg.norm(grads, axis=1)
    mask = atoms.weights > 1e-12
    return float(np.max(norms[mask])) if np.any(mask) else 0.0


def delta_stationary_radius(act: ActivationSpec, delta: float,
                            bracket: tuple[float, float] = (1e-2, 60.0)) -> float:
    """Radius r* where the single point mass is stationary at d = infinity:
    tau+ q'(tau+ r)(q(tau+ r) - 1) + tau- q'(tau- r)(q(tau- r) + 1) = 0.

    The drift vanishes identically at tiny radii (q' underflows), so the
    sign change is bracketed on a log grid first.
    """
    tp, tm = 1.0 + delta, 1.0 - delta

    def f(r):
        qp, dqp = q_eval(act, tp * r)
        qm, dqm = q_eval(act, tm * r)
        return tp * dqp * (qp - 1.0) + tm * dqm * (qm + 1.0)

    grid = np.geomspace(bracket[0], bracket[1], 400)
    vals = np.array([f(r) for r in grid])
    neg = np.flatnonzero(vals < 0)
    if len(neg) == 0:
        raise ValueError("no inward drift found: no interior stationary radius")
    i = neg[0]
    after = np.flatnonzero(vals[i:] > 0)
    if len(after) == 0:
        raise ValueError("drift never turns outward: no interior stationary radius")
    j = i + after[0]
    return float(brentq(f, grid[j - 1], grid[j], xtol=1e-14))


def delta_stability(act: ActivationSpec, delta: float, r_star: float,
                    h: float = 1e-4) -> tuple[float, bool]:
    """Second radial derivative of psi(.; delta_{r*}) at r*, by central
    differences of the exact psi'; positive means the point mass attracts."""
    frozen = AtomEnsemble.equal_weights(Space.RADIAL_1D, [[r_star]])
    res = fixed_point_residual(act, delta, math.inf, frozen)
    if res > 1e-6:
        raise ValueError(f"r_star is not stationary (|psi'| = {res:.2e})")

    def dpsi(r):
        return psi_grad_points(act, delta, np.array([[r]]), frozen, math.inf)[0, 0]

    second = (dpsi(r_star + h) - dpsi(max(r_star - h, 0.0))) / (2.0 * h)
    return float(second), bool(second > 0.0)


def origin_instability_criterion(act: ActivationSpec, delta: float,
                                 smoothing_h: float) -> float:
    """Scalar trap indicator for the zero-weight point mass.

    s = kappa(h) * [(1-Delta)^2 - (1+Delta)^2 + sigma(0)((1-Delta)^2 + (1+Delta)^2)]
    with kappa(h) = (sigma'(h) - sigma'(-h)) / (2h), a finite-difference
    curvature proxy; s > 0 flags the origin as a stable (bad) fixed point.
    """
    if smoothing_h <= 0:
        raise ValueError("smoothing_h must be positive")
    kappa = (sigma_deriv(act, smoothing_h) - sigma_deriv(act, -smoothing_h)) \
        / (2.0 * smoothing_h)
    tp2 = (1.0 + delta) ** 2
    tm2 = (1.0 - delta) ** 2
    bracket = tm2 - tp2 + sigma_eval(act, 0.0) * (tm2 + tp2)
    return float(kappa * bracket)
