import math

import numpy as np
import pytest

from delay_bandits.contextual import (
    ContextualReduction,
    FixedContext,
    GAccumulator,
    MixtureContext,
    ParameterCover,
    SubsampleContext,
    build_cover,
    expected_g,
    make_context_distribution,
    misspecification_level,
    optimal_actions,
    run_reduction,
    update_g,
)
from delay_bandits.core import random_actions
from delay_bandits.delayenv import ContextualDelayedEnv
from delay_bandits.errors import CoverError
from delay_bandits.models import ContextConfig, CoverConfig


class TestCover:
    def test_one_dimensional_grid(self):
        cover = build_cover(1)
        assert cover.method == "grid"
        assert cover.size == 11
        np.testing.assert_allclose(cover.points[:, 0], np.linspace(0.0, 1.0, 11), atol=1e-12)

    def test_two_dimensional_grid_radius(self):
        cover = build_cover(2, resolution=0.1)
        assert cover.method == "grid"
        assert np.all(np.linalg.norm(cover.points, axis=1) <= 1.0 + 1e-9)
        assert cover.achieved_radius <= 0.1 * math.sqrt(2.0)

    def test_capped_sampling_keeps_basis(self):
        cover = build_cover(6, cap=100)
        assert cover.method == "halton"
        assert cover.size == 100
        np.testing.assert_array_equal(cover.points[:6], np.eye(6))
        assert np.all(cover.points >= 0)
        assert np.all(np.linalg.norm(cover.points, axis=1) <= 1.0 + 1e-9)

    def test_grid_over_cap_falls_back_to_sampling(self):
        cover = build_cover(3, resolution=0.1, cap=20)
        assert cover.method == "halton"
        assert cover.size == 20

    def test_cover_is_deterministic(self):
        first = build_cover(5, cap=64, seed=3)
        second = build_cover(5, cap=64, seed=3)
        np.testing.assert_array_equal(first.points, second.points)
        assert first.achieved_radius == second.achieved_radius

    def test_invalid_covers(self):
        with pytest.raises(CoverError):
            build_cover(6, cap=5)
        with pytest.raises(ValueError):
            build_cover(0)


def test_optimal_actions_break_ties_low():
    action_set = np.array([[1.0, 0.0], [0.0, 1.0]])
    thetas = np.array([[0.2, 0.7], [0.7, 0.2], [0.0, 0.0]])
    np.testing.assert_array_equal(optimal_actions(action_set, thetas), [[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]])


class TestG:
    def setup_method(self):
        self.cover = build_cover(2, resolution=0.25)
        rng = np.random.default_rng(11)
        self.sets = [random_actions(rng, 4, 2), random_actions(rng, 4, 2)]

    def test_fixed_distribution_is_exact(self):
        history = [self.sets[0]] * 8
        estimate = update_g(history, self.cover, 3)
        assert estimate.rounds == 4
        np.testing.assert_allclose(estimate.vectors, optimal_actions(self.sets[0], self.cover.points))
        np.testing.assert_allclose(expected_g(FixedContext(self.sets[0]), self.cover), estimate.vectors)

    def test_first_epoch_uses_one_set(self):
        estimate = update_g([self.sets[1], self.sets[0]], self.cover, 1)
        assert estimate.rounds == 1
        np.testing.assert_allclose(estimate.vectors, optimal_actions(self.sets[1], self.cover.points))

    def test_short_history_rejected(self):
        with pytest.raises(ValueError):
            update_g([self.sets[0]], self.cover, 3)
        with pytest.raises(ValueError):
            GAccumulator(self.cover).estimate(1)

    def test_accumulator_matches_batch_average(self):
        accumulator = GAccumulator(self.cover)
        history = [self.sets[i % 2] for i in range(6)]
        for action_set in history:
            accumulator.add(action_set)
        expected = np.mean([optimal_actions(s, self.cover.points) for s in history], axis=0)
        np.testing.assert_allclose(accumulator.estimate(4).vectors, expected)
        assert accumulator.estimate(4).rounds == 6

    def test_deviation_bound_holds_for_a_mixture(self):
        horizon = 4096
        cover = build_cover(2)
        distribution = MixtureContext(self.sets, weights=[0.3, 0.7])
        truth = expected_g(distribution, cover)
        rng = np.random.default_rng(5)
        history = [distribution.sample(rng) for _ in range(horizon // 2)]
        delta = 1.0 / horizon ** 2

        checked = within = 0
        for m in range(1, 13):
            estimate = update_g(history, cover, m)
            bound = 2.0 * math.sqrt(math.log(2 * horizon * cover.size / delta) / 2 ** (m - 1))
            deviations = np.abs((truth - estimate.vectors) @ cover.points.T)
            checked += deviations.size
            within += int(np.sum(deviations <= bound))
        assert within >= 0.95 * checked


class TestMisspecificationLevel:
    def test_threshold_epoch(self):
        levels = [misspecification_level(m, 4096, 200) for m in range(1, 13)]
        assert all(level == 1.0 for level in levels[:6])
        assert all(level < 1.0 for level in levels[6:])
        assert all(a >= b for a, b in zip(levels, levels[1:]))

    def test_explicit_formula(self):
        value = misspecification_level(10, 4096, 200, delta=0.01)
        assert value == pytest.approx(2.0 * math.sqrt(math.log(4096 * 200 / 0.01) / 1024))


class TestDistributions:
    def test_mixture_weights_validated(self):
        with pytest.raises(ValueError):
            MixtureContext([np.eye(2), np.eye(2)], weights=[0.5, 0.6])

    def test_subsample_draws_sorted_subsets(self, rng):
        pool = random_actions(rng, 10, 3)
        distribution = SubsampleContext(pool, 4)
        drawn = distribution.sample(rng)
        assert drawn.shape == (4, 3)
        rows = [int(np.flatnonzero(np.all(np.isclose(pool, row), axis=1))[0]) for row in drawn]
        assert rows == sorted(rows) and len(set(rows)) == 4
        with pytest.raises(TypeError):
            expected_g(distribution, build_cover(3))

    def test_built_in_distributions(self, rng):
        assert isinstance(make_context_distribution(ContextConfig(kind="fixed"), 2, 5, rng), FixedContext)
        mixture = make_context_distribution(ContextConfig(kind="mixture", numSets=3), 2, 5, rng)
        assert len(mixture.action_sets) == 3
        subsample = make_context_distribution(ContextConfig(kind="subsample"), 2, 5, rng)
        assert subsample.pool.shape == (20, 2)
        with pytest.raises(ValueError):
            make_context_distribution(ContextConfig(kind="subsample", poolSize=3), 2, 5, rng)


def test_epoch_of():
    assert [ContextualReduction.epoch_of(t) for t in range(1, 10)] == [0, 1, 2, 2, 3, 3, 3, 3, 4]


def test_reduction_on_a_fixed_action_set():
    rng = np.random.default_rng(21)
    action_set = random_actions(rng, 5, 2)
    theta = np.array([0.6, 0.3])
    env = ContextualDelayedEnv(theta, FixedContext(action_set), 512, 20.0, np.random.default_rng(22))
    cover = build_cover(2, resolution=0.2)
    reduction = ContextualReduction(cover, 512, 20.0)
    record = run_reduction(env, reduction=reduction)

    assert len(record.rows) == 512
    assert len(reduction.estimates) == 9 == record.metadata["epochs"]
    assert [estimate.rounds for estimate in reduction.estimates] == [2 ** (m - 1) for m in range(1, 10)]
    for estimate in reduction.estimates:
        distances = np.linalg.norm(estimate.vectors[:, None, :] - action_set[None, :, :], axis=2)
        assert np.all(distances.min(axis=1) <= 1e-12)

    assert record.rows[0].action == int(np.argmin(action_set @ cover.points[0]))
    assert record.rows[0].epoch == 0 and record.rows[1].epoch == 1
    assert record.metadata["cover_size"] == cover.size
    assert record.metadata["epsilons"] == reduction.epsilons
    assert all(a >= b for a, b in zip(reduction.epsilons, reduction.epsilons[1:]))
    gaps = record.gaps()
    assert np.all(gaps >= 0)
    assert record.total == pytest.approx(math.fsum(gaps))


def test_run_reduction_builds_its_own_cover():
    action_sets = [np.array([[1.0, 0.0], [0.0, 1.0]]), np.array([[0.6, 0.8], [0.8, 0.6]])]
    env = ContextualDelayedEnv([0.5, 0.5], MixtureContext(action_sets), 64, 5.0, np.random.default_rng(1),
                               context_rng=np.random.default_rng(2))
    record = run_reduction(env, CoverConfig(resolution=0.5, cap=64), beta=1.0)
    assert record.metadata["cover_method"] == "grid"
    assert record.metadata["cover_size"] == 6
    assert record.metadata["epochs"] == 6
    assert len(env.contexts) == 64
    # Every payoff either arrives inside its epoch, crosses an epoch boundary, or misses the horizon
    assert record.metadata["cross_epoch_dropped"] <= env.delivered


def test_manual_cover():
    cover = ParameterCover(points=np.array([[0.1, 0.9], [0.9, 0.1]]), resolution=0.0,
                           achieved_radius=float("nan"), method="manual")
    reduction = ContextualReduction(cover, 16, 0.0)
    action_set = np.eye(2)
    assert reduction.select(1, action_set) == 0
    assert reduction.select(2, action_set) in (0, 1)
    assert reduction.epoch == 1
