import math

import numpy as np
import pytest

from skygp.aggregation import Contribution, Prediction, aggregate
from skygp.error_bound import (
    BoundParams,
    ErrorBound,
    beta,
    estimate_lipschitz,
    eta,
    gamma_i,
    kernel_lipschitz,
)
from skygp.expert import new_expert
from skygp.kernel import Hyperparameters
from skygp.pool import Pool, PoolConfig


def unit_box(n, **kw):
    return BoundParams(domain_lo=np.zeros(n), domain_hi=np.ones(n), **kw)


def pred_of(sigmas, omegas, mean=0.0):
    cs = [Contribution(i, 0.0, s * s, w, w) for i, (s, w) in enumerate(zip(sigmas, omegas))]
    return Prediction(mean, float(np.mean(np.square(sigmas))), cs)


class TestBeta:
    def test_reference_value(self):
        # [DERIVED] ceil(sqrt(2) / 0.2) = 8 per dimension
        b = beta(unit_box(2, tau=0.1, delta=0.01), 2)
        np.testing.assert_allclose(b, 2 * math.sqrt(4 * math.log(8) - 2 * math.log(0.005)), rtol=1e-12)
        np.testing.assert_allclose(b, 8.698, atol=5e-4)

    def test_coarse_grid_limit(self):
        # [TRIVIAL] every ceiling collapses to one
        p = unit_box(3, tau=1e9, delta=0.02)
        np.testing.assert_allclose(beta(p, 3), 2 * math.sqrt(-2 * math.log(0.02 / 3)), rtol=1e-12)

    def test_collapsed_dimension(self):
        p = BoundParams(domain_lo=[0.0, 0.5], domain_hi=[1.0, 0.5], tau=0.1, delta=0.01)
        q = BoundParams(domain_lo=[0.0], domain_hi=[1.0], tau=0.1, delta=0.01)
        expected = 2 * math.sqrt(2 * math.log(math.ceil(math.sqrt(2) / 0.2)) - 2 * math.log(0.005))
        np.testing.assert_allclose(beta(p, 2), expected, rtol=1e-12)
        assert beta(q, 1) < beta(p, 2)

    def test_wider_domain_increases(self):
        a = beta(BoundParams(domain_lo=[0, 0], domain_hi=[1, 1], tau=0.05), 2)
        b = beta(BoundParams(domain_lo=[0, 0], domain_hi=[2, 2], tau=0.05), 2)
        assert b > a

    def test_monotone_in_tau_and_delta(self):
        taus = [0.001, 0.01, 0.1, 1.0]
        bs = [beta(unit_box(2, tau=t), 2) for t in taus]
        assert all(x >= y for x, y in zip(bs, bs[1:]))
        deltas = [0.001, 0.01, 0.1, 0.4]
        bs = [beta(unit_box(2, delta=d), 2) for d in deltas]
        assert all(x > y for x, y in zip(bs, bs[1:]))


class TestParams:
    @pytest.mark.parametrize("kw", [
        {"delta": 0.0}, {"delta": 1.0}, {"tau": -1.0}, {"Gamma": -0.5},
        {"domain_lo": [1.0], "domain_hi": [0.0]},
        {"domain_lo": [0.0, 0.0], "domain_hi": [1.0]},
    ])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            BoundParams(**kw)

    def test_delta_against_max_agg(self):
        p = BoundParams(delta=0.3)
        p.check_agg(3)
        with pytest.raises(ValueError):
            p.check_agg(4)


class TestGamma:
    def test_zero_tau(self):
        assert gamma_i(BoundParams(tau=0.0), 3.0, 2.0, 16.0, 1.0) == 0.0

    def test_kernel_term_only(self):
        # [DERIVED] sqrt(2 * 2) * 0.5
        assert gamma_i(BoundParams(tau=0.5, Gamma=1.0), 0.0, 0.0, 4.0, 2.0) == 1.0

    def test_unit_constants(self):
        # [DERIVED] sqrt(4) + sqrt(2) + 1
        g = gamma_i(BoundParams(tau=1.0, Gamma=1.0), 1.0, 1.0, 4.0, 1.0)
        np.testing.assert_allclose(g, 3 + math.sqrt(2), rtol=1e-15)
        np.testing.assert_allclose(g, 4.414, atol=5e-4)

    def test_linear_in_tau(self):
        a = gamma_i(BoundParams(tau=0.1), 0.7, 1.3, 9.0, 2.0)
        b = gamma_i(BoundParams(tau=0.3), 0.7, 1.3, 9.0, 2.0)
        np.testing.assert_allclose(b, 3 * a, rtol=1e-14)


class TestEta:
    def test_simplified(self):
        # [DERIVED] 2 * 8.698 * 0.1
        p = BoundParams(use_simplified=True)
        np.testing.assert_allclose(eta(p, pred_of([0.1], [1.0]), 8.698), 1.7396, rtol=1e-14)

    def test_single_expert(self):
        e = eta(BoundParams(), pred_of([0.2], [1.0]), 3.0, [0.05])
        np.testing.assert_allclose(e, 3.0 * 0.2 + 0.05, rtol=1e-15)

    def test_weighted(self):
        e = eta(BoundParams(), pred_of([0.1, 0.3], [0.25, 0.75]), 2.0, [0.4, 0.0])
        np.testing.assert_allclose(e, 2.0 * (0.025 + 0.225) + 0.1, rtol=1e-14)

    def test_zero_slack(self):
        e = eta(BoundParams(), pred_of([0.1, 0.3], [0.5, 0.5]), 2.0)
        np.testing.assert_allclose(e, 2.0 * 0.2, rtol=1e-15)

    def test_monotone_in_sigma(self):
        p = BoundParams()
        vals = [eta(p, pred_of([s, 0.2], [0.6, 0.4]), 4.0, [0.1, 0.1]) for s in np.linspace(0.01, 1, 20)]
        assert np.all(np.diff(vals) > 0)

    def test_missing_contributions(self):
        with pytest.raises(ValueError):
            eta(BoundParams(), Prediction(0.0, 1.0), 2.0)

    def test_all_weights_zero_uses_prior(self):
        p = aggregate("rbcm", [0.3, -0.3], [2.0, 2.0], prior_var=2.0)
        np.testing.assert_allclose(eta(BoundParams(), p, 3.0), 3.0 * math.sqrt(2.0), rtol=1e-15)


class TestLipschitz:
    def test_kernel_analytic(self):
        # [DERIVED] max of |d/dr sf^2 exp(-r^2 / 2l^2)| at r = l
        h = Hyperparameters([0.5, 2.0], 1.5)
        r = np.linspace(0, 3, 300001)
        slope = np.max(np.abs(np.gradient(h.signal_var * np.exp(-r**2 / (2 * 0.25)), r)))
        np.testing.assert_allclose(kernel_lipschitz(h), slope, rtol=1e-6)

    def test_estimates_bound_true_slope(self):
        # a one-point posterior mean is c * k(x, x0) with a closed-form slope
        h = Hyperparameters([0.5], 1.0, 0.1)
        e = new_expert(h, [0.5], 1.0, capacity=4)
        L_mu, L_sigma = estimate_lipschitz(e, [0.0], [1.0], n_pairs=2000, rng=np.random.default_rng(1))
        c = 1.0 / 1.01
        true_mu = c * kernel_lipschitz(h)
        assert 0.95 * true_mu <= L_mu <= 1.001 * true_mu
        assert L_sigma > 0


class TestErrorBound:
    def make_pool(self):
        h = Hyperparameters([0.3], 1.0, 0.05)
        pool = Pool(h, PoolConfig(mode="fast", capacity=5, max_agg=2))
        for x in np.linspace(0, 1, 12):
            pool.process([x], math.sin(3 * x))
        return h, pool

    def test_radius_matches_eta(self):
        h, pool = self.make_pool()
        p = unit_box(1, L_mu=1.0, L_sigma=0.5)
        eb = ErrorBound(p, h)
        pred = pool.predict_only([0.37])
        r = eb.radius(pool, pred)
        g = gamma_i(p, 0.5, 1.0, eb.beta**2, kernel_lipschitz(h))
        assert pred.error_radius == r
        np.testing.assert_allclose(r, eta(p, pred, eb.beta, [g] * len(pred.contributions)), rtol=1e-14)

    def test_beta_delta_override(self):
        h, pool = self.make_pool()
        a = ErrorBound(unit_box(1, L_mu=0.0, L_sigma=1.0), h)
        b = ErrorBound(unit_box(1, L_mu=0.0, L_sigma=1.0, beta_delta=1.0), h)
        pred = pool.predict_only([0.5])
        assert a.radius(pool, pred) > b.radius(pool, pred)

    def test_cache_follows_version(self):
        h, pool = self.make_pool()
        eb = ErrorBound(unit_box(1, n_pairs=32), h)
        e = pool.experts_in_order()[0]
        g1 = eb.expert_gamma(e)
        assert eb.expert_gamma(e) == g1
        v = e.version
        if e.full:
            e.replace([0.05], 0.1)
        else:
            e.append([0.05], 0.1)
        assert e.version != v
        eb.expert_gamma(e)
        assert eb._cache[e.uid][0] == e.version

    def test_empty_pool_prior_radius(self):
        h = Hyperparameters([0.3], 2.0, 0.05)
        pool = Pool(h, PoolConfig())
        eb = ErrorBound(unit_box(1), h)
        np.testing.assert_allclose(eb.radius(pool, pool.predict_only([0.2])), eb.beta * 2.0, rtol=1e-14)
