import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from conftest import brute_poisson_gammas, quad_normal_gammas
from mdpdglm.dpd import dpd_objective, gamma_set, integrals, mean_psi, neg_loglik, psi_alpha
from mdpdglm.errors import DomainError
from mdpdglm.model import NormalLinearRegression, PoissonRegression, Sample


def _central_gradient(fn, eta, h=1e-6):
    eta = np.asarray(eta, dtype=float)
    out = np.empty_like(eta)
    for j in range(eta.size):
        e = np.zeros_like(eta)
        e[j] = h
        out[j] = (fn(eta + e) - fn(eta - e)) / (2 * h)
    return out


class TestGammaSet:
    @pytest.mark.parametrize("x", [-2.0, 0.0, 1.3])
    def test_poisson_alpha0_gamma1(self, poisson, x):
        g = gamma_set(poisson, [x], [0.7], 0.0)
        assert abs(g.gamma1) < 1e-15

    def test_poisson_alpha0_gamma11(self, poisson):
        assert gamma_set(poisson, [0.0], [1.0], 0.0).gamma11 == pytest.approx(1.0, abs=1e-15)

    @pytest.mark.parametrize("lp,alpha", [(1.0, 0.25), (-2.0, 0.5), (3.0, 1.0), (0.0, 0.1), (4.5, 0.7)])
    def test_poisson_brute_force(self, poisson, lp, alpha):
        g = gamma_set(poisson, [1.0], [lp], alpha)
        g1, g11 = brute_poisson_gammas(lp, alpha)
        assert g.gamma1 == pytest.approx(g1, rel=1e-10, abs=1e-14)
        assert g.gamma11 == pytest.approx(g11, rel=1e-10)
        assert g.gamma2 is None and g.gamma12 is None

    def test_poisson_generic_alpha0_path(self, poisson):
        # the windowed sum reproduces the closed form used at alpha = 0
        from mdpdglm.dpd import _poisson_integrals
        lp = np.array([-3.0, 0.0, 2.0, 6.0])
        g0, g1, g11 = _poisson_integrals(lp, (0.0,))[0.0]
        np.testing.assert_allclose(g0, 1.0, rtol=1e-12)
        np.testing.assert_allclose(g1, 0.0, atol=1e-9)
        np.testing.assert_allclose(g11, np.exp(lp), rtol=1e-11)

    @pytest.mark.parametrize("alpha", [0.0, 0.3, 1.0])
    def test_normal_quadrature(self, normal, alpha):
        g = gamma_set(normal, [1.0, 0.5], [0.2, -0.4, 1.7], alpha)
        ref = quad_normal_gammas(0.2 + 0.5 * -0.4, 1.7, alpha)
        for key, val in ref.items():
            assert getattr(g, key) == pytest.approx(val, rel=1e-10, abs=1e-13)

    def test_large_mean(self, poisson):
        g = gamma_set(poisson, [1.0], [9.0], 0.5)
        assert np.isfinite(g.gamma11) and g.gamma11 > 0

    def test_negative_alpha(self, poisson):
        with pytest.raises(DomainError):
            integrals(poisson, np.zeros(2), None, (-0.1,))

    def test_vectorised_matches_scalar(self, poisson):
        lp = np.array([0.3, -1.2, 0.3, 2.0])
        many = integrals(poisson, lp, None, (0.4,))[0.4]
        for i, v in enumerate(lp):
            one = gamma_set(poisson, [1.0], [v], 0.4)
            assert many.gamma11[i] == one.gamma11


class TestPsi:
    def test_zero_residual(self, poisson):
        psi = psi_alpha(poisson, 3.0, np.array([1.0]), [math.log(3.0)], 0.0)
        np.testing.assert_allclose(psi, 0.0, atol=1e-14)

    def test_mle_score(self, poisson):
        np.testing.assert_allclose(psi_alpha(poisson, 3.0, np.array([1.0]), [0.0], 0.0), [-2.0])

    def test_direct_display(self, poisson):
        g1, _ = brute_poisson_gammas(1.0, 0.5)
        f = stats.poisson.pmf(0, math.e)
        expected = g1 - (0.0 - math.e) * f**0.5
        np.testing.assert_allclose(psi_alpha(poisson, 0.0, np.array([1.0]), [1.0], 0.5), [expected],
                                   rtol=1e-10)

    def test_shapes(self, normal):
        assert psi_alpha(normal, 0.1, np.array([1.0, 2.0]), [0.0, 1.0, 1.0], 0.3).shape == (3,)
        y = np.zeros(4)
        assert psi_alpha(normal, y, np.ones((4, 2)), [0.0, 1.0, 1.0], 0.3).shape == (4, 3)

    @pytest.mark.parametrize("lp", [-2.0, -0.5, 0.0, 1.0, 2.5])
    @pytest.mark.parametrize("alpha", [0.0, 0.1, 0.5, 1.0])
    def test_poisson_fisher_consistency(self, poisson, lp, alpha):
        y = np.arange(0, 400, dtype=float)
        f = stats.poisson.pmf(y, math.exp(lp))
        psi = psi_alpha(poisson, y, np.ones((y.size, 1)), [lp], alpha)
        assert abs(np.sum(psi[:, 0] * f)) < 1e-8

    @pytest.mark.parametrize("alpha", [0.0, 0.1, 0.5, 1.0])
    def test_normal_fisher_consistency(self, normal, alpha):
        eta = np.array([0.4, 1.3])
        x = np.array([1.0])
        for j in range(2):
            val = integrate.quad(lambda y: psi_alpha(normal, y, x, eta, alpha)[j]
                                 * stats.norm.pdf(y, 0.4, 1.3), -30, 30, epsabs=1e-13, limit=200)[0]
            assert abs(val) < 1e-8

    @settings(max_examples=25, deadline=None)
    @given(st.floats(-3, 3), st.floats(0.0, 1.0))
    def test_fisher_consistency_property(self, lp, alpha):
        m = PoissonRegression()
        y = np.arange(0, 200, dtype=float)
        f = stats.poisson.pmf(y, math.exp(lp))
        psi = psi_alpha(m, y, np.ones((y.size, 1)), [lp], alpha)[:, 0]
        assert abs(np.sum(psi * f)) < 1e-8

    @pytest.mark.parametrize("alpha", [0.1, 0.25, 0.5, 1.0])
    def test_bounded_for_positive_alpha(self, poisson, alpha):
        y = np.arange(0, 10**6 + 1, dtype=float)
        psi = np.abs(psi_alpha(poisson, y, np.ones((y.size, 1)), [1.0], alpha)[:, 0])
        assert np.isfinite(psi).all()
        assert np.argmax(psi) < 20
        # far in the tail only gamma_1 is left
        assert psi[-1] == pytest.approx(abs(gamma_set(poisson, [1.0], [1.0], alpha).gamma1), rel=1e-12)

    def test_unbounded_at_mle(self, poisson):
        y = np.arange(0, 10**6 + 1, dtype=float)
        psi = np.abs(psi_alpha(poisson, y, np.ones((y.size, 1)), [1.0], 0.0)[:, 0])
        assert np.all(np.diff(psi[3:]) > 0)
        assert psi[-1] > 9.9e5


class TestObjective:
    @pytest.mark.parametrize("model_name", ["poisson", "normal"])
    def test_gradient_is_scaled_mean_psi(self, model_name):
        rng = np.random.default_rng(11)
        for _ in range(10):
            if model_name == "poisson":
                m = PoissonRegression()
                X = rng.standard_normal((15, 2))
                eta = rng.uniform(-0.7, 0.7, 2)
                y = rng.poisson(np.exp(X @ eta)).astype(float)
            else:
                m = NormalLinearRegression()
                X = np.column_stack([np.ones(15), rng.standard_normal(15)])
                eta = np.append(rng.uniform(-1, 1, 2), rng.uniform(0.5, 2.0))
                y = X @ eta[:2] + eta[2] * rng.standard_normal(15)
            alpha = rng.uniform(0.05, 1.0)
            s = Sample(y, X)
            grad = _central_gradient(lambda e: dpd_objective(m, s, e, alpha), eta)
            np.testing.assert_allclose(grad, (1 + alpha) * mean_psi(m, s, eta, alpha), atol=1e-7)

    def test_single_observation_gradient(self, poisson):
        s = Sample([2.0], [[1.0]])
        grad = _central_gradient(lambda e: dpd_objective(poisson, s, e, 0.4), [0.3])
        assert abs(grad[0] - 1.4 * mean_psi(poisson, s, [0.3], 0.4)[0]) < 1e-6

    def test_huge_count_finite(self, poisson):
        for y in (10.0, 1e3, 1e4):
            assert np.isfinite(dpd_objective(poisson, Sample([y], [[1.0]]), [0.5], 0.5))

    def test_duplicate_observations(self, poisson):
        one = dpd_objective(poisson, Sample([3.0], [[0.7]]), [0.9], 0.3)
        two = dpd_objective(poisson, Sample([3.0, 3.0], [[0.7], [0.7]]), [0.9], 0.3)
        assert one == two

    def test_needs_positive_alpha(self, poisson):
        with pytest.raises(DomainError):
            dpd_objective(poisson, Sample([1.0], [[1.0]]), [0.0], 0.0)

    def test_neg_loglik_gradient(self, poisson):
        s = Sample([0.0, 2.0, 5.0], [[0.2], [1.0], [1.5]])
        grad = _central_gradient(lambda e: neg_loglik(poisson, s, e), [0.8])
        np.testing.assert_allclose(grad, mean_psi(poisson, s, [0.8], 0.0), atol=1e-8)
