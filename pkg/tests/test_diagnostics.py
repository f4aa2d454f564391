import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from meanfield2nn import diagnostics as DG
from meanfield2nn import kernels as K
from meanfield2nn import model as M
from meanfield2nn.sgd import SgdConfig, constant_schedule
from meanfield2nn.streams import stream

ACT = M.piecewise_linear()

samples = st.lists(st.floats(-50, 50), min_size=1, max_size=40)


class TestWasserstein:
    def test_identical(self):
        x = np.array([0.1, 2.2, -3.0])
        assert DG.wasserstein1_1d(x, x) == 0.0

    def test_translation(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=100)
        assert DG.wasserstein1_1d(x, x + 2.5) == pytest.approx(2.5, abs=1e-12)

    def test_brute_force_assignment(self):
        rng = np.random.default_rng(1)
        for _ in range(5):
            a = rng.normal(size=6)
            b = rng.normal(size=6)
            brute = min(
                float(np.mean(np.abs(a - b[list(perm)])))
                for perm in itertools.permutations(range(6))
            )
            assert DG.wasserstein1_1d(a, b) == pytest.approx(brute, abs=1e-12)

    def test_unequal_sizes_vs_scipy(self):
        from scipy.stats import wasserstein_distance

        rng = np.random.default_rng(2)
        a = rng.normal(size=23)
        b = rng.normal(1.0, 2.0, size=57)
        assert DG.wasserstein1_1d(a, b) \
            == pytest.approx(wasserstein_distance(a, b), abs=1e-12)

    @given(samples, samples)
    @settings(max_examples=100, deadline=None)
    def test_symmetry_and_nonnegative(self, a, b):
        d1 = DG.wasserstein1_1d(a, b)
        d2 = DG.wasserstein1_1d(b, a)
        assert d1 >= 0
        assert d1 == pytest.approx(d2, abs=1e-10)

    @given(samples, samples, samples)
    @settings(max_examples=100, deadline=None)
    def test_triangle_inequality(self, a, b, c):
        dab = DG.wasserstein1_1d(a, b)
        dbc = DG.wasserstein1_1d(b, c)
        dac = DG.wasserstein1_1d(a, c)
        assert dac <= dab + dbc + 1e-10

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            DG.wasserstein1_1d([], [1.0])


class TestBoltzmannResidual:
    def test_exact_sampling_control(self):
        # zero activation leaves the pure quadratic lam r^2 / 2: exact
        # sampling from its Gibbs law (a half-normal) must sit close
        act0 = M.piecewise_linear(s1=0.0, s2=0.0)
        beta, lam = 50.0, 0.5
        draws = np.abs(stream(3, "bg").normal(0.0, 1.0 / math.sqrt(beta * lam),
                                              100_000))
        assert DG.boltzmann_residual(draws, act0, 0.0, beta, lam) < 0.02

    def test_residual_decreases_with_run_length(self):
        # same step size, 10^3 versus 10^5 steps from a far-off start: the
        # short run has not equilibrated yet
        from meanfield2nn.dd import langevin_mf_1d
        from tests.test_kernels import radial

        beta, lam, dt = 50.0, 0.5, 5e-4
        atoms = radial(np.full(500, 3.0))
        res = {}
        for n_steps in (1_000, 100_000):
            grid = np.linspace(0.0, n_steps * dt, n_steps + 1)
            traj = langevin_mf_1d(ACT, 0.5, beta, lam, atoms, grid,
                                  constant_schedule(), stream(4, "lv", n_steps),
                                  snapshot_times=[grid[-1]])
            res[n_steps] = DG.boltzmann_residual(
                traj.ensembles[-1].atoms[:, 0], ACT, 0.5, beta, lam)
        assert res[100_000] < res[1_000]

    def test_large_beta_concentrates_at_minimum(self):
        # Laplace regime: mass shrinks toward the minimizer of psi_lam like
        # 1/sqrt(beta curvature)
        act0 = M.piecewise_linear(s1=0.0, s2=0.0)
        beta, lam = 4000.0, 1.0
        draws = np.abs(stream(5, "bg").normal(0.0, 1.0 / math.sqrt(beta * lam),
                                              50_000))
        point = np.zeros(50_000)
        gap = DG.wasserstein1_1d(draws, point)
        assert gap < 0.05 + 2.0 / math.sqrt(beta * lam)
        assert DG.boltzmann_residual(draws, act0, 0.0, beta, lam) < 0.01

    def test_escaping_mass_rejected(self):
        # samples huddled at 0 put lambda+ < 0, so psi decreases outward and
        # with nearly no confinement the Gibbs well sits far beyond the grid
        with pytest.raises(ValueError):
            DG.boltzmann_residual(np.full(50, 0.05), ACT, 0.5, 50.0, 0.01)


class TestChaosSweep:
    def test_dd_versus_itself_is_zero(self):
        model = M.DataModel(0.8, 10)
        base = SgdConfig(epsilon=1e-3, schedule=constant_schedule(), steps=0,
                         seed=6, mc_samples=2)
        rep = DG.chaos_sweep(model, ACT, base, [math.inf], [1e-3], 0.05,
                             n_reference_atoms=50, n_checkpoints=5,
                             n_time_points=200)
        cell = rep.cells[0]
        assert cell.max_risk_gap == 0.0
        assert cell.w1_gap_at_horizon == 0.0

    def test_small_sweep_reports_finite_gaps(self):
        model = M.DataModel(0.8, 10)
        base = SgdConfig(epsilon=2e-4, schedule=constant_schedule(), steps=0,
                         seed=7, mc_samples=2)
        rep = DG.chaos_sweep(model, ACT, base, [20, 80], [2e-4], 0.05,
                             n_reference_atoms=100, n_checkpoints=5,
                             n_time_points=500)
        for cell in rep.cells:
            assert cell.error == ""
            assert cell.max_risk_gap >= 0.0
            assert cell.w1_gap_at_horizon >= 0.0
        assert math.isfinite(rep.slope)

    def test_cell_errors_are_isolated(self):
        model = M.DataModel(0.8, 10)
        base = SgdConfig(epsilon=1e-3, schedule=constant_schedule(), steps=0,
                         seed=8, mc_samples=2, beta=1e-18)
        rep = DG.chaos_sweep(model, ACT, base, [4, math.inf], [1e-3], 0.05,
                             n_reference_atoms=20, n_checkpoints=3,
                             n_time_points=100)
        errs = {c.n_units: c.error for c in rep.cells}
        assert errs[4] != ""          # the diverging cell is recorded
        assert errs[math.inf] == ""   # the control cell still runs
