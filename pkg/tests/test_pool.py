import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from skygp.aggregation import aggregate
from skygp.kernel import Hyperparameters
from skygp.pool import APPENDED, REJECTED, REPLACED, SPAWNED, Pool, PoolConfig

from conftest import batch_gp

H1 = Hyperparameters([1.0], 1.0, 0.1)


def layout(h, centers, **cfg):
    """Pool whose list holds one single-point expert per center, in the given order."""
    pool = Pool(h, PoolConfig(**cfg))
    for i, c in enumerate(centers):
        pool._spawn(np.atleast_1d(np.asarray(c, dtype=float)), 0.0, i)
    return pool


class TestPoolConfig:
    @pytest.mark.parametrize("kwargs", [
        {"mode": "slow"}, {"capacity": 0}, {"max_agg": 0}, {"max_window": -1},
        {"decay": 1.0}, {"decay": 0.0}, {"theta_min": 1.0}, {"aggregation": "sum"},
        {"window_scale": 0.0}, {"prior_var": -1.0}, {"weighting": "rank"}, {"max_experts": 0},
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            PoolConfig(**kwargs)

    def test_defaults(self):
        c = PoolConfig()
        assert (c.window_scale, c.decay, c.theta_min, c.variance_floor) == (1.0, 0.999, 0.05, 1e-12)
        assert Pool(Hyperparameters([1.0], 2.0), c).prior_var == 4.0


class TestWindowSize:
    def test_first_sample(self):
        assert Pool(H1).window_size([0.0]) == 0

    def test_repeated_input(self):
        # [DERIVED] d = 1/sf^2 = 1, floor(e) = 2
        pool = layout(H1, [[0.0]], max_window=40)
        pool.last_x = np.array([0.3])
        assert pool.window_size([0.3]) == 2
        pool.config.max_window = 1
        assert pool.window_size([0.3]) == 1

    def test_saturation(self):
        pool = layout(H1, [[0.0]], max_window=7)
        pool.last_x = np.array([0.0])
        assert pool.window_size([2.0]) == 7
        assert pool.window_size([1e3]) == 7

    def test_scale(self):
        pool = layout(H1, [[0.0]], max_window=100, window_scale=0.5)
        pool.last_x = np.array([1.0])
        expected = math.floor(math.exp(math.exp(0.5) / 0.5))
        assert pool.window_size([0.0]) == expected


class TestLocalize:
    def test_zero_window(self):
        pool = layout(H1, [[0.0], [5.0], [10.0]])
        pool.nu_prev = 1
        cand, nu = pool.localize([9.0])
        assert cand.tolist() == [1] and nu == 1

    def test_three_centers(self):
        # [DERIVED] argmax of k(9, {0, 5, 10}) is position 2
        pool = layout(H1, [[0.0], [5.0], [10.0]], max_window=1)
        pool.nu_prev = 1
        pool.last_x = np.array([9.0])
        cand, nu = pool.localize([9.0])
        assert cand.tolist() == [0, 1, 2] and nu == 2
        assert pool.nu_prev == 2

    def test_window_clipped(self):
        pool = layout(H1, [[0.0], [5.0], [10.0]], max_window=1)
        pool.nu_prev = 0
        pool.last_x = np.array([0.0])
        cand, _ = pool.localize([0.0])
        assert cand.tolist() == [0, 1]

    def test_theta_filter(self):
        pool = layout(H1, [[0.0], [5.0], [10.0]], max_window=1, theta_min=0.5)
        pool.nu_prev = 1
        pool.last_x = np.array([5.0])
        for pos, v in enumerate([0.1, 0.2, 0.9]):
            pool._set_theta(pos, v)
        cand, nu = pool.localize([5.0])
        assert cand.tolist() == [2] and nu == 2

    def test_theta_starvation_falls_back(self):
        pool = layout(H1, [[0.0], [5.0], [10.0]], max_window=1, theta_min=0.5)
        pool.nu_prev = 1
        pool.last_x = np.array([5.0])
        for pos in range(3):
            pool._set_theta(pos, 0.1)
        cand, nu = pool.localize([0.0])
        assert cand.tolist() == [1] and nu == 1

    def test_empty_pool(self):
        with pytest.raises(RuntimeError):
            Pool(H1).localize([0.0])


class TestInsertionIndex:
    def test_single_expert_goes_right(self):
        pool = layout(H1, [[0.0]])
        assert pool.insertion_index([1.0], 0) == 1
        pool._spawn(np.array([1.0]), 0.0, 1)
        np.testing.assert_array_equal(pool.centers().ravel(), [0.0, 1.0])

    def test_missing_left_neighbour(self):
        # [DERIVED] d_left = inf, d_right = 1/k(4, 10) finite
        pool = layout(H1, [[0.0], [10.0]])
        pos = pool.insertion_index([4.0], 0)
        assert pos == 1
        pool._spawn(np.array([4.0]), 0.0, pos)
        np.testing.assert_array_equal(pool.centers().ravel(), [0.0, 4.0, 10.0])

    def test_closer_left(self):
        pool = layout(H1, [[0.0], [5.0], [10.0]])
        assert pool.insertion_index([4.0], 1) == 1
        assert pool.insertion_index([6.0], 1) == 2

    def test_tie_goes_left(self):
        pool = layout(H1, [[0.0], [5.0], [10.0]])
        assert pool.insertion_index([5.0], 1) == 1

    def test_order_bijection_after_spawns(self, rng):
        pool = Pool(Hyperparameters([0.3]), PoolConfig(capacity=1, max_agg=2))
        for x in rng.uniform(-5, 5, size=(60, 1)):
            pool.process(x, 0.0)
        assert sorted(pool.order) == sorted(pool.experts)
        assert len(set(pool.order)) == len(pool.order) == pool.n_experts
        for pos, uid in enumerate(pool.order):
            np.testing.assert_array_equal(pool.centers()[pos], pool.experts[uid].center)
            np.testing.assert_allclose(pool.thetas()[pos], pool.experts[uid].theta, rtol=1e-15)
        assert 0 <= pool.nu_prev < pool.n_experts


class TestProcess:
    def test_first_sample_spawns_with_prior(self):
        pool = Pool(Hyperparameters([1.0], 2.0), PoolConfig())
        pred, ev = pool.process([0.5], 1.0)
        assert ev.kind == SPAWNED and ev.position == 0
        assert pred.mean == 0.0 and pred.variance == 4.0 and pred.contributions == []

    def test_append_to_single_expert(self):
        pool = Pool(H1, PoolConfig(capacity=5))
        pool.process([0.0], 1.0)
        e = pool.expert_at(0)
        expected = e.predict([0.2])
        pred, ev = pool.process([0.2], 0.5)
        assert ev.kind == APPENDED and ev.position == 0
        np.testing.assert_allclose([pred.mean, pred.variance], expected, rtol=1e-15)
        assert e.N == 2

    def test_fast_spawns_when_full(self):
        pool = Pool(H1, PoolConfig(capacity=2, mode="fast"))
        for x in (0.0, 0.1):
            pool.process([x], x)
        before = pool.expert_at(0).data
        _, ev = pool.process([0.05], 0.0)
        assert ev.kind == SPAWNED
        after = pool.expert_at(0 if ev.position == 1 else 1).data
        np.testing.assert_array_equal(before[0], after[0])
        np.testing.assert_array_equal(before[1], after[1])

    def test_dense_replaces_central_point(self):
        # [DERIVED] held {0, 3}, center 1.5; x = 1.5 beats every held point and no history exists
        pool = Pool(H1, PoolConfig(capacity=2, mode="dense"))
        pool.process([0.0], 0.0)
        pool.process([3.0], 0.0)
        e = pool.expert_at(0)
        assert e.most_central_count([1.5]) == 0 and e.delta_trigger([1.5]) < 0
        _, ev = pool.process([1.5], 1.0)
        assert ev.kind == REPLACED
        assert e.N == 2 and pool.n_experts == 1

    def test_dense_spawns_when_not_central(self):
        pool = Pool(H1, PoolConfig(capacity=2, mode="dense"))
        pool.process([0.0], 0.0)
        pool.process([3.0], 0.0)
        _, ev = pool.process([4.0], 0.0)
        assert ev.kind == SPAWNED and pool.n_experts == 2

    def test_prediction_precedes_update(self, rng):
        pool = Pool(Hyperparameters([0.5, 0.5]), PoolConfig(capacity=5, max_agg=2))
        for x in rng.normal(size=(40, 2)):
            y = float(np.sin(x).sum())
            before = pool.predict_only(x)
            pred, _ = pool.process(x, y)
            assert (pred.mean, pred.variance) == (before.mean, before.variance)

    def test_prediction_ignores_sample_without_cache(self, rng):
        # same check, with the cached localisation invalidated
        pool = Pool(Hyperparameters([0.5]), PoolConfig(capacity=5, max_agg=2))
        for x in rng.normal(size=(30, 1)):
            before = pool.predict_only(x)
            pool._cache = None
            pred, _ = pool.process(x, 123.0)
            assert (pred.mean, pred.variance) == (before.mean, before.variance)

    def test_capacity_invariant(self, rng):
        for mode in ("fast", "dense"):
            pool = Pool(Hyperparameters([0.4]), PoolConfig(capacity=7, mode=mode, max_agg=2))
            for x in rng.normal(size=(300, 1)):
                pool.process(x, 0.0)
                assert all(e.N <= 7 for e in pool.experts.values())

    def test_decay_on_spawn_only(self):
        pool = layout(H1, [[0.0], [5.0], [10.0]], capacity=1, decay=0.5, max_window=0)
        pool.nu_prev = 0
        pool.last_x = np.array([0.0])
        _, ev = pool.process([0.0], 0.0)
        assert ev.kind == SPAWNED
        # old experts at 5 and 10 were outside the aggregation set
        thetas = dict(zip([float(c) for c in pool.centers().ravel()], pool.thetas()))
        assert thetas[5.0] == 0.5 and thetas[10.0] == 0.5

    def test_no_decay_on_append(self):
        pool = layout(H1, [[0.0], [5.0]], capacity=3, decay=0.5)
        pool.last_x = np.array([0.0])
        _, ev = pool.process([0.0], 0.0)
        assert ev.kind == APPENDED
        np.testing.assert_array_equal(pool.thetas(), [1.0, 1.0])

    def test_decay_every_step(self):
        pool = layout(H1, [[0.0], [5.0]], capacity=3, decay=0.5, decay_every_step=True)
        pool.last_x = np.array([0.0])
        pool.process([0.0], 0.0)
        np.testing.assert_array_equal(pool.thetas(), [1.0, 0.5])

    def test_hard_budget_rejects(self):
        pool = Pool(H1, PoolConfig(capacity=1, max_experts=2))
        kinds = [pool.process([x], 0.0)[1].kind for x in (0.0, 5.0, 10.0, 15.0)]
        assert kinds == [SPAWNED, SPAWNED, REJECTED, REJECTED]
        assert pool.n_experts == 2 and pool.total_points == 2


class TestPredictOnly:
    def test_pure(self, rng):
        pool = Pool(Hyperparameters([0.5]), PoolConfig(capacity=3, max_agg=2))
        for x in rng.normal(size=(20, 1)):
            pool.process(x, float(x[0]))
        state = pool.snapshot()
        a = pool.predict_only([0.3])
        b = pool.predict_only([0.3])
        assert a.to_dict() == b.to_dict()
        assert pool.snapshot() == state

    def test_single_aggregation_is_nearest(self):
        pool = layout(H1, [[0.0], [5.0], [10.0]], max_window=1)
        pool.nu_prev = 1
        pool.last_x = np.array([9.0])
        pred = pool.predict_only([9.0])
        np.testing.assert_allclose([pred.mean, pred.variance], pool.expert_at(2).predict([9.0]))

    def test_clamped_to_available(self):
        pool = layout(H1, [[0.0], [1.0], [2.0]], max_agg=4, max_window=40, aggregation="poe")
        pool.last_x = np.array([5.0])
        pred = pool.predict_only([1.0])
        assert len(pred.contributions) == 3
        mu, var = zip(*(pool.expert_at(i).predict([1.0]) for i in range(3)))
        ref = aggregate("poe", mu, var)
        np.testing.assert_allclose([pred.mean, pred.variance], [ref.mean, ref.variance], rtol=1e-14)

    def test_empty_pool_prior(self):
        pred = Pool(Hyperparameters([1.0], 3.0), PoolConfig(prior_var=2.0)).predict_only([0.0])
        assert pred.mean == 0.0 and pred.variance == 2.0


class TestExactReduction:
    @settings(max_examples=20, deadline=None)
    @given(st.integers(2, 40), st.integers(0, 2**31 - 1))
    def test_single_expert_is_exact_gp(self, n, seed):
        r = np.random.default_rng(seed)
        h = Hyperparameters(r.uniform(0.5, 2.0, 2), 1.0, 0.1)
        X = r.uniform(-2, 2, size=(n, 2))
        y = r.normal(size=n)
        pool = Pool(h, PoolConfig(capacity=n, max_agg=1, max_window=0))
        for x, t in zip(X, y):
            pool.process(x, t)
        assert pool.n_experts == 1
        Q = r.uniform(-2, 2, size=(5, 2))
        m_ref, v_ref = batch_gp(h, X, y, Q)
        got = np.array([[p.mean, p.variance] for p in map(pool.predict_only, Q)])
        np.testing.assert_allclose(got[:, 0], m_ref, atol=1e-8)
        np.testing.assert_allclose(got[:, 1], v_ref, atol=1e-8)
