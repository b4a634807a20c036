import numpy as np
import pytest

from delay_bandits.core import generate_instance
from delay_bandits.delayenv import DelayedFeedbackEnv, FeedbackEvent
from delay_bandits.linucb import (
    DelayedLinUCB,
    RidgeState,
    confidence_radius,
    ingest,
    run_linucb,
    select,
)
from delay_bandits.models import PayoffKind


def test_confidence_radius():
    assert confidence_radius(6000, 16000, 6, 1.0) == pytest.approx(8.80, abs=0.01)
    assert confidence_radius(1, 100, 2, 1.0) < confidence_radius(50, 100, 2, 1.0)


def test_first_choice_is_the_lowest_index(small_instance):
    state = RidgeState(small_instance.n)
    assert select(state, small_instance.action_matrix(), 1, 1000) == 0
    assert select(state, small_instance.action_matrix(), 1, 1000, PayoffKind.REWARD) == 0


def test_single_update_matches_closed_form():
    state = RidgeState(2)
    action = np.array([0.6, 0.8])
    state.ingest(action, [0.5])
    np.testing.assert_allclose(state.estimate, action * 0.25)
    np.testing.assert_allclose(state.gram, np.eye(2) + np.outer(action, action))


def test_unexplored_direction_has_the_largest_bonus():
    state = RidgeState(2)
    state.ingest(np.tile([1.0, 0.0], (20, 1)), np.full(20, 0.5))
    norms = state.inverse_norms(np.eye(2))
    assert norms[1] > norms[0]
    assert norms[0] == pytest.approx(1.0 / np.sqrt(21.0))


def test_loss_and_reward_choices_differ():
    actions = np.eye(2)
    state = RidgeState(2)
    ingest(state, actions, [FeedbackEvent(t, t % 2, 0.9 if t % 2 else 0.1, t) for t in range(1, 401)])
    assert select(state, actions, 400, 1000, PayoffKind.LOSS) == 0
    assert select(state, actions, 400, 1000, PayoffKind.REWARD) == 1


def test_zero_delay_estimate_is_ridge_regression():
    instance = generate_instance(4, n=3, K=10, max_delay=0.0)
    env = DelayedFeedbackEnv(instance, 2000, np.random.default_rng(4))
    policy = DelayedLinUCB(instance.action_matrix(), 2000)
    for t in range(1, 2001):
        env.play(policy.select(t))
        policy.observe(t, env.collect())
    assert policy.arrived == 2000

    features = instance.action_matrix()[[event.action_index for event in env.history]]
    payoffs = np.array([event.payoff for event in env.history])
    expected = np.linalg.solve(np.eye(3) + features.T @ features, features.T @ payoffs)
    np.testing.assert_allclose(policy.state.estimate, expected, atol=1e-6)


def test_nothing_arrives_under_huge_delay(small_instance):
    instance = small_instance.model_copy(update={"max_delay": 1e9})
    policy = DelayedLinUCB(instance.action_matrix(), 300)
    record = run_linucb(instance, 300, np.random.default_rng(0), policy=policy)
    assert policy.arrived == 0
    np.testing.assert_array_equal(policy.state.estimate, np.zeros(instance.n))
    assert record.metadata["dropped_events"] == 300


def test_only_arrived_feedback_is_used(small_instance):
    env = DelayedFeedbackEnv(small_instance, 600, np.random.default_rng(2))
    policy = DelayedLinUCB(small_instance.action_matrix(), 600)
    log_dets = []
    for t in range(1, 601):
        env.play(policy.select(t))
        policy.observe(t, env.collect())
        log_dets.append(np.linalg.slogdet(policy.state.gram)[1])
    env.finish()

    delivered = [event for event in env.history if event.arrival_round <= 600]
    vectors = small_instance.action_matrix()[[event.action_index for event in delivered]]
    np.testing.assert_allclose(policy.state.gram, np.eye(small_instance.n) + vectors.T @ vectors)
    assert policy.arrived == len(delivered) == env.delivered
    assert np.all(np.diff(log_dets) >= -1e-9)


def test_run_linucb_record(small_instance):
    record = run_linucb(small_instance, 500, np.random.default_rng(3), reg=0.5)
    assert len(record.rows) == 500
    assert record.metadata["reg"] == 0.5
    assert record.rows[0].epoch is None and record.rows[0].B is None


def test_invalid_regulariser():
    with pytest.raises(ValueError):
        RidgeState(3, reg=0.0)
