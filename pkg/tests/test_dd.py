import math

import numpy as np
import pytest

from meanfield2nn import dd
from meanfield2nn import kernels as K
from meanfield2nn import model as M
from meanfield2nn.sgd import constant_schedule, power_schedule
from meanfield2nn.streams import stream
from tests.test_kernels import radial, zero_risk_two_atom

ACT = M.piecewise_linear()
NM = M.non_monotone()
INF = math.inf


class TestTimeGrid:
    def test_shape(self):
        g = dd.log_time_grid(10.0, 100)
        assert g[0] == 0.0 and g[-1] == 10.0 and len(g) == 101
        assert np.all(np.diff(g) > 0)

    def test_xi_averages_regularize_power_start(self):
        g = dd.log_time_grid(1.0, 50)
        avg = dd._xi_averages(power_schedule(0.25), g)
        assert np.all(np.isfinite(avg)) and np.all(avg > 0)

    def test_xi_averages_exact_for_constant(self):
        g = dd.log_time_grid(2.0, 30)
        avg = dd._xi_averages(constant_schedule(1.7), g)
        assert np.allclose(avg, 1.7)


class TestDdIntegrate:
    def test_zero_risk_measure_is_stationary(self):
        atoms = zero_risk_two_atom(ACT, 0.6)
        grid = dd.log_time_grid(1.0, 500)
        traj = dd.dd_integrate(ACT, 0.6, INF, atoms, grid, constant_schedule(),
                               snapshot_times=[1.0])
        assert np.allclose(traj.ensembles[-1].atoms, atoms.atoms, atol=1e-12)

    def test_single_atom_at_stationary_radius(self):
        r_star = dd.delta_stationary_radius(ACT, 0.2)
        grid = dd.log_time_grid(10.0, 2000)
        traj = dd.dd_integrate(ACT, 0.2, INF, radial([r_star]), grid,
                               constant_schedule(), snapshot_times=[10.0])
        assert abs(traj.ensembles[-1].atoms[0, 0] - r_star) < 1e-8

    def test_risk_monotone(self):
        rng = np.random.default_rng(1)
        atoms = radial(np.abs(rng.normal(0.8, 0.3, 25)))
        grid = dd.log_time_grid(3.0, 120)
        traj = dd.dd_integrate(ACT, 0.45, INF, atoms, grid, constant_schedule())
        tol = 1e-8 * 25 * float(np.max(np.diff(grid)))
        assert np.all(np.diff(traj.risks) <= tol)

    def test_risk_monotone_finite_d(self):
        rng = np.random.default_rng(2)
        atoms = radial(np.abs(rng.normal(0.9, 0.3, 5)))
        grid = dd.log_time_grid(0.5, 60)
        traj = dd.dd_integrate(ACT, 0.4, 30, atoms, grid, constant_schedule())
        tol = 1e-8 * 5 * float(np.max(np.diff(grid)))
        assert np.all(np.diff(traj.risks) <= tol)

    def test_euler_halving_order(self):
        rng = np.random.default_rng(3)
        atoms = radial(np.abs(rng.normal(0.8, 0.2, 8)))

        def final(n):
            grid = np.linspace(0.0, 0.5, n + 1)
            return dd.dd_integrate(ACT, 0.5, INF, atoms, grid,
                                   constant_schedule(),
                                   snapshot_times=[0.5]).ensembles[-1].atoms

        ref = final(3200)
        err = [np.max(np.abs(final(n) - ref)) for n in (100, 200, 400)]
        orders = np.log2(np.array(err[:-1]) / np.array(err[1:]))
        assert np.all(orders > 0.9)

    def test_conservation(self):
        atoms = radial([0.4, 0.9, 1.5, 2.0])
        grid = dd.log_time_grid(1.0, 100)
        traj = dd.dd_integrate(ACT, 0.3, INF, atoms, grid, constant_schedule())
        for ens in traj.ensembles:
            assert ens.n_atoms == 4
            assert np.allclose(ens.weights, 0.25)

    def test_gradient_flow_identity(self):
        # one Euler step equals -J xi grad of the J-atom risk
        atoms = radial([0.5, 1.3, 2.4])
        xi, dt = 1.0, 1e-3
        grid = np.array([0.0, dt])
        traj = dd.dd_integrate(ACT, 0.4, INF, atoms, grid, constant_schedule())
        step = traj.ensembles[-1].atoms - atoms.atoms
        risk_grad = K.risk_gradient_atoms(ACT, 0.4, INF, atoms)
        assert np.max(np.abs(step + 3 * xi * dt * risk_grad)) < 1e-10

    def test_unequal_weights_rejected(self):
        bad = K.AtomEnsemble(K.Space.RADIAL_1D, [[0.5], [1.0]],
                             np.array([0.3, 0.7]))
        with pytest.raises(ValueError):
            dd.dd_integrate(ACT, 0.4, INF, bad, dd.log_time_grid(1.0, 10),
                            constant_schedule())

    def test_four_dim_space_runs(self):
        rng = np.random.default_rng(4)
        atoms = np.column_stack([
            np.ones(6), np.ones(6),
            np.abs(rng.normal(0.3, 0.1, 6)), np.abs(rng.normal(0.7, 0.1, 6)),
        ])
        ens = K.AtomEnsemble.equal_weights(K.Space.RELU_4D, atoms)
        grid = dd.log_time_grid(0.5, 300)
        traj = dd.dd_integrate(M.relu_affine(), 0.6, INF, ens, grid,
                               power_schedule(0.25))
        tol = 1e-8 * 6 * float(np.max(np.diff(grid)))
        assert np.all(np.diff(traj.risks) <= tol)
        assert traj.risks[-1] < traj.risks[0]


class TestLangevin:
    def test_ou_stationary_variance(self):
        # zero activation: pure quadratic well, variance 1/(beta lam)
        act0 = M.piecewise_linear(s1=0.0, s2=0.0)
        beta, lam = 20.0, 1.0
        atoms = radial(np.full(4000, 0.5))
        grid = np.linspace(0.0, 30.0, 6001)
        traj = dd.langevin_mf_1d(act0, 0.0, beta, lam, atoms, grid,
                                 constant_schedule(), stream(5, "lv"),
                                 snapshot_times=[30.0])
        r = traj.ensembles[-1].atoms[:, 0]
        assert float(np.mean(r**2)) == pytest.approx(1.0 / (beta * lam), rel=0.1)

    def test_infinite_temperature_off_matches_dd_with_confinement(self):
        # beta -> inf limit: same integrator as dd with the lam r drift added
        lam = 0.3
        atoms = radial([0.5, 1.2, 2.0])
        grid = np.linspace(0.0, 0.2, 201)
        traj = dd.langevin_mf_1d(ACT, 0.4, 1e30, lam, atoms, grid,
                                 constant_schedule(), stream(6, "lv"),
                                 snapshot_times=[0.2])
        x = atoms.atoms.copy()
        w = atoms.weights
        for i in range(200):
            ens = K.AtomEnsemble(K.Space.RADIAL_1D, x.copy(), w)
            drift = K.psi_grad_points(ACT, 0.4, x, ens, INF)[:, 0] + lam * x[:, 0]
            x[:, 0] -= 2 * 0.001 * drift
            x = np.abs(x)
        assert np.max(np.abs(traj.ensembles[-1].atoms - x)) < 1e-6

    def test_reflection_keeps_nonnegative(self):
        atoms = radial(np.full(100, 0.01))
        grid = np.linspace(0.0, 1.0, 501)
        traj = dd.langevin_mf_1d(ACT, 0.2, 5.0, 0.5, atoms, grid,
                                 constant_schedule(), stream(7, "lv"))
        for ens in traj.ensembles:
            assert np.all(ens.atoms >= 0)


class TestFixedPoints:
    def test_zero_risk_measure_residual(self):
        atoms = zero_risk_two_atom(ACT, 0.6)
        assert dd.fixed_point_residual(ACT, 0.6, INF, atoms) < 1e-10

    def test_stationary_point_mass_residual(self):
        r_star = dd.delta_stationary_radius(ACT, 0.3)
        assert dd.fixed_point_residual(ACT, 0.3, INF, radial([r_star])) < 1e-8

    def test_generic_ensemble_has_residual(self):
        atoms = radial([0.5, 1.0, 2.0])
        assert dd.fixed_point_residual(ACT, 0.3, INF, atoms) > 1e-3

    def test_zero_weight_atoms_ignored(self):
        r_star = dd.delta_stationary_radius(ACT, 0.3)
        ens = K.AtomEnsemble(K.Space.RADIAL_1D,
                             [[r_star], [17.0]], np.array([1.0, 0.0]))
        assert dd.fixed_point_residual(ACT, 0.3, INF, ens) < 1e-8


class TestDeltaStability:
    def test_unique_fixed_point_is_stable(self):
        # below the critical separation: lambda+ < 0 < lambda-, attracting
        r_star = dd.delta_stationary_radius(ACT, 0.2)
        lp, lm = K.lambda_pm(ACT, 0.2, radial([r_star]))
        assert lp < 0 < lm
        second, stable = dd.delta_stability(ACT, 0.2, r_star)
        assert stable and second > 0

    def test_second_derivative_matches_value_fd(self):
        r_star = dd.delta_stationary_radius(ACT, 0.25)
        second, _ = dd.delta_stability(ACT, 0.25, r_star)
        frozen = radial([r_star])
        h = 1e-4
        vals = [float(K.psi_value(ACT, 0.25, r_star + s * h, frozen, INF))
                for s in (-1, 0, 1)]
        fd2 = (vals[0] - 2 * vals[1] + vals[2]) / h**2
        assert second == pytest.approx(fd2, rel=1e-4, abs=1e-7)

    def test_rejects_non_stationary_radius(self):
        with pytest.raises(ValueError):
            dd.delta_stability(ACT, 0.2, 0.123)

    def test_weight_representation_invariance(self):
        r_star = dd.delta_stationary_radius(ACT, 0.2)
        one, _ = dd.delta_stability(ACT, 0.2, r_star)
        # delta_stability freezes the measure itself; representing it as
        # three coincident atoms changes nothing
        trip = radial([r_star] * 3)
        res = dd.fixed_point_residual(ACT, 0.2, INF, trip)
        assert res < 1e-8
        lp1 = K.lambda_pm(ACT, 0.2, radial([r_star]))
        lp3 = K.lambda_pm(ACT, 0.2, trip)
        assert lp1 == pytest.approx(lp3, abs=1e-15)


class TestOriginCriterion:
    def test_flat_default_activation(self):
        assert dd.origin_instability_criterion(ACT, 0.5, 0.25) == 0.0

    def test_non_monotone_predicts_trapping(self):
        # slopes: -3 on (0, 0.5), 0 left of 0 -> kappa = -6;
        # bracket = (0.25 - 2.25) + (-2.5)(0.25 + 2.25) = -8.25
        s = dd.origin_instability_criterion(NM, 0.5, 0.25)
        assert s == pytest.approx(49.5)
        assert s > 0

    def test_delta_zero_reduces_to_twice_sigma0(self):
        # bracket collapses to 2 sigma(0); sign flips with sigma(0)
        h = 0.25
        kappa = (M.sigma_deriv(NM, h) - M.sigma_deriv(NM, -h)) / (2 * h)
        assert dd.origin_instability_criterion(NM, 0.0, h) \
            == pytest.approx(kappa * 2 * M.sigma_eval(NM, 0.0))

    def test_rejects_bad_smoothing(self):
        with pytest.raises(ValueError):
            dd.origin_instability_criterion(ACT, 0.5, 0.0)
