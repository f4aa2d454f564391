import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from meanfield2nn import model as M

ACT = M.piecewise_linear()
NM = M.non_monotone()


class TestActivationSpec:
    def test_knots_must_increase(self):
        with pytest.raises(ValueError):
            M.ActivationSpec(M.ActivationKind.PIECEWISE_LINEAR,
                             ((1.5, -2.5), (0.5, 7.5)))

    def test_piecewise_linear_needs_two_knots(self):
        with pytest.raises(ValueError):
            M.ActivationSpec(M.ActivationKind.PIECEWISE_LINEAR,
                             ((0.0, 1.0), (1.0, 2.0), (2.0, 3.0)))

    def test_relu_takes_no_knots(self):
        with pytest.raises(ValueError):
            M.ActivationSpec(M.ActivationKind.RELU_AFFINE, ((0.0, 0.0),))


class TestSigmaEval:
    def test_saturation_below(self):
        assert M.sigma_eval(ACT, 0.0) == -2.5
        assert M.sigma_eval(ACT, -10.0) == -2.5

    def test_linear_midpoint(self):
        assert M.sigma_eval(ACT, 1.0) == pytest.approx(2.5)

    def test_saturation_above(self):
        assert M.sigma_eval(ACT, 1.5) == 7.5
        assert M.sigma_eval(ACT, 99.0) == 7.5

    def test_non_monotone_interpolation(self):
        # between the knots (0, -2.5) and (0.5, -4)
        assert M.sigma_eval(NM, 0.25) == pytest.approx(-3.25)

    def test_relu(self):
        relu = M.relu_affine()
        assert M.sigma_eval(relu, -1.0) == 0.0
        assert M.sigma_eval(relu, 2.0) == 2.0
        assert M.sigma_deriv(relu, 2.0) == 1.0
        assert M.sigma_deriv(relu, -2.0) == 0.0

    def test_right_derivative_at_knots(self):
        assert M.sigma_deriv(ACT, 0.5) == pytest.approx(10.0)
        assert M.sigma_deriv(ACT, 1.5) == 0.0
        assert M.sigma_deriv(NM, 0.0) == pytest.approx(-3.0)
        assert M.sigma_deriv(NM, 0.5) == pytest.approx(11.5)

    @given(st.floats(-20, 20), st.floats(-20, 20))
    @settings(max_examples=200, deadline=None)
    def test_lipschitz(self, t1, t2):
        lip = 11.5  # steepest segment across both bounded activations
        for act in (ACT, NM):
            assert abs(M.sigma_eval(act, t1) - M.sigma_eval(act, t2)) \
                <= lip * abs(t1 - t2) + 1e-12


def _g_quad_oracle(act, a, b):
    """Adaptive Gaussian-weight quadrature with breakpoints at the kinks."""
    cache = M.smoothing_cache(act)
    pts = sorted(float(x) for x in (cache.xs - a) / b if -9 < (x - a) / b < 9)
    val, err = integrate.quad(
        lambda x: M.sigma_eval(act, a + b * x) * M.norm_pdf(x),
        -9.0, 9.0, points=pts or None, limit=200, epsabs=1e-12, epsrel=1e-12,
    )
    assert err < 1e-9
    return val


class TestGSmoothed:
    def test_b_to_zero_limit_is_sigma(self):
        assert M.g_smoothed(ACT, 0.0, 1e-12) == pytest.approx(-2.5, abs=1e-12)

    def test_b_to_infinity_limit(self):
        assert M.g_smoothed(ACT, 0.0, 1e9) == pytest.approx(2.5, abs=1e-6)

    def test_rejects_nonpositive_b(self):
        with pytest.raises(ValueError):
            M.g_smoothed(ACT, 0.0, 0.0)
        with pytest.raises(ValueError):
            M.g_smoothed(ACT, 0.0, -1.0)

    def test_monte_carlo(self):
        rng = np.random.default_rng(314)
        g = rng.standard_normal(100_000)
        vals = M.sigma_eval(ACT, 1.0 + g)
        se = float(np.std(vals) / math.sqrt(len(vals)))
        assert abs(M.g_smoothed(ACT, 1.0, 1.0) - float(np.mean(vals))) < 3 * se

    @pytest.mark.parametrize("act", [ACT, NM], ids=["pwl", "nonmono"])
    def test_vs_adaptive_quadrature(self, act):
        worst = 0.0
        for a in np.linspace(-5, 5, 11):
            for b in np.geomspace(0.01, 10, 9):
                worst = max(worst, abs(M.g_smoothed(act, a, b)
                                       - _g_quad_oracle(act, a, b)))
        assert worst < 1e-10

    def test_two_knot_closed_form_constants(self):
        cache = M.smoothing_cache(ACT)
        assert cache.sigma_sl == pytest.approx((7.5 + 2.5) / (1.5 - 0.5))
        assert cache.sigma_itc == pytest.approx(-2.5 - cache.sigma_sl * 0.5)
        # explicit Phi/phi closed form with those constants
        from scipy.special import ndtr

        a, b = 0.7, 1.3
        sl, itc = cache.sigma_sl, cache.sigma_itc
        a1, a2 = (0.5 - a) / b, (1.5 - a) / b
        direct = 7.5 + (-2.5 - itc - sl * a) * ndtr(a1) \
            + (sl * a + itc - 7.5) * ndtr(a2) \
            + sl * b * (M.norm_pdf(a1) - M.norm_pdf(a2))
        assert M.g_smoothed(ACT, a, b) == pytest.approx(direct, abs=1e-14)


class TestQEval:
    def test_at_zero(self):
        q, qp = M.q_eval(ACT, 0.0)
        assert q == -2.5 and qp == 0.0

    def test_large_radius(self):
        q, qp = M.q_eval(ACT, 1e8)
        assert q == pytest.approx(2.5, abs=1e-6)
        assert qp == pytest.approx(0.0, abs=1e-10)

    def test_derivative_vs_finite_difference(self):
        h = 1e-5
        for act in (ACT, NM):
            for r in (0.3, 1.0, 2.7, 8.0):
                lo, _ = M.q_eval(act, r - h)
                hi, _ = M.q_eval(act, r + h)
                _, qp = M.q_eval(act, r)
                assert qp == pytest.approx((hi - lo) / (2 * h), abs=1e-6)

    def test_nondecreasing_and_positive_derivative(self):
        r = np.geomspace(0.01, 100, 300)
        q, qp = M.q_eval(ACT, r)
        assert np.all(np.diff(q) >= -1e-14)  # one-ulp wiggle in saturation
        assert np.all(qp >= 0)
        # below r ~ 0.04 the true positive value exp(-t1^2/2r^2) underflows
        assert np.all(qp[r >= 0.05] > 0)

    def test_non_monotone_limit_at_zero(self):
        _, qp = M.q_eval(NM, 0.0)
        assert qp == pytest.approx(-3.0 * M.norm_pdf(0.0))

    def test_derivative_ratio_monotone(self):
        # q'(tau- r)/q'(tau+ r) strictly increasing on a log grid (checked
        # where the exponentials are representable in float64)
        r = np.geomspace(0.01, 100, 200)
        for delta in (0.1, 0.3, 0.5, 0.7, 0.9):
            _, qp_plus = M.q_eval(ACT, (1 + delta) * r)
            _, qp_minus = M.q_eval(ACT, (1 - delta) * r)
            mask = (np.asarray(qp_plus) > 1e-280) & (np.asarray(qp_minus) > 1e-280)
            ratio = np.asarray(qp_minus)[mask] / np.asarray(qp_plus)[mask]
            assert len(ratio) > 100
            assert np.all(np.diff(ratio) > 0)


class TestDataModel:
    def test_tau_fields(self):
        m = M.DataModel(0.8, 40)
        assert m.tau_plus == 1.8 and m.tau_minus == pytest.approx(0.2)

    def test_validation(self):
        with pytest.raises(ValueError):
            M.DataModel(1.0, 10)
        with pytest.raises(ValueError):
            M.DataModel(0.5, 10, s0=11)

    def test_delta_zero_isotropy(self):
        m = M.DataModel(0.0, 6)
        rng = np.random.default_rng(0)
        y, x = M.sample_batch(m, 100_000, rng)
        assert np.var(x, axis=0) == pytest.approx(np.ones(6), abs=0.03)

    def test_second_moment(self):
        m = M.DataModel(0.8, 8)
        rng = np.random.default_rng(1)
        y, x = M.sample_batch(m, 200_000, rng)
        plus = x[y > 0]
        norms = np.sum(plus**2, axis=1) / 8
        se = np.std(norms) / math.sqrt(len(norms))
        assert np.mean(norms) == pytest.approx(1.8**2, abs=3 * se)

    def test_anisotropic_variances(self):
        m = M.DataModel(0.5, 4, s0=2)
        rng = np.random.default_rng(2)
        y, x = M.sample_batch(m, 200_000, rng)
        minus = x[y < 0]
        assert np.var(minus, axis=0) == pytest.approx([0.25, 0.25, 1, 1], abs=0.02)

    def test_labels_balanced(self):
        m = M.DataModel(0.3, 3)
        rng = np.random.default_rng(3)
        y, _ = M.sample_batch(m, 100_000, rng)
        assert abs(float(np.mean(y))) < 0.02
        ys = {M.sample_example(m, rng)[0] for _ in range(64)}
        assert ys == {1, -1}
