"""Shared fixtures for the delay bandits test suite"""

import numpy as np
import pytest

from delay_bandits.core import generate_instance, make_instance
from delay_bandits.models import PayoffKind


def two_arm_instance(means, max_delay, payoff_kind=PayoffKind.LOSS):
    """Standard-basis actions, so the mean of arm i is theta_i"""
    return make_instance(theta=list(means), actions=np.eye(2), max_delay=max_delay,
                         payoff_kind=payoff_kind)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_instance():
    return generate_instance(3, n=3, K=12, max_delay=50.0)


@pytest.fixture
def make_two_arm():
    return two_arm_instance


@pytest.fixture
def two_arm_loss():
    return two_arm_instance((0.1, 0.9), 50.0)


@pytest.fixture
def two_arm_reward():
    return two_arm_instance((0.9, 0.1), 50.0, PayoffKind.REWARD)
