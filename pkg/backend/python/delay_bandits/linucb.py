"""
LinUCB baseline that learns only from feedback that has already arrived
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg

from .delayenv import DelayedFeedbackEnv, FeedbackEvent, RunRecord, run_policy
from .models import BanditInstance, PayoffKind

logger = logging.getLogger(__name__)

# Scores closer than this count as tied; ties go to the lowest index
TIE_TOLERANCE = 1e-12


def confidence_radius(t: int, horizon: int, dim: int, reg: float) -> float:
    """beta_t = sqrt(reg) + sqrt(2 ln T + n ln(1 + t / (n reg)))"""
    return math.sqrt(reg) + math.sqrt(2.0 * math.log(horizon) + dim * math.log(1.0 + t / (dim * reg)))


@dataclass
class RidgeState:
    """Regularised least squares over arrived feedback: H theta = b"""
    dim: int
    reg: float = 1.0
    gram: np.ndarray = field(init=False)
    response: np.ndarray = field(init=False)
    estimate: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.reg <= 0:
            raise ValueError(f"Regulariser must be positive, got {self.reg}")
        self.gram = self.reg * np.eye(self.dim)
        self.response = np.zeros(self.dim)
        self.estimate = np.zeros(self.dim)
        self._factor = scipy.linalg.cho_factor(self.gram)

    def ingest(self, vectors: np.ndarray, payoffs: np.ndarray) -> None:
        vectors = np.atleast_2d(np.asarray(vectors, dtype=float))
        payoffs = np.asarray(payoffs, dtype=float)
        if payoffs.size == 0:
            return
        self.gram = self.gram + vectors.T @ vectors
        self.response = self.response + vectors.T @ payoffs
        self._factor = scipy.linalg.cho_factor(self.gram)
        self.estimate = scipy.linalg.cho_solve(self._factor, self.response)

    def inverse_norms(self, vectors: np.ndarray) -> np.ndarray:
        """sqrt(a^T H^-1 a) for every row a"""
        solved = scipy.linalg.cho_solve(self._factor, vectors.T)
        return np.sqrt(np.maximum(np.einsum('ij,ji->i', vectors, solved), 0.0))


def select(state: RidgeState, actions: np.ndarray, t: int, horizon: int,
           payoff_kind: PayoffKind = PayoffKind.LOSS) -> int:
    """Optimistic action: lowest lower bound for losses, highest upper bound for rewards"""
    beta = confidence_radius(t, horizon, state.dim, state.reg)
    bonus = beta * state.inverse_norms(actions)
    means = actions @ state.estimate
    if PayoffKind(payoff_kind) is PayoffKind.LOSS:
        scores = means - bonus
        return int(np.flatnonzero(scores <= scores.min() + TIE_TOLERANCE)[0])
    scores = means + bonus
    return int(np.flatnonzero(scores >= scores.max() - TIE_TOLERANCE)[0])


def ingest(state: RidgeState, actions: np.ndarray, events: Sequence[FeedbackEvent]) -> RidgeState:
    if events:
        indices = [event.action_index for event in events]
        state.ingest(actions[indices], np.array([event.payoff for event in events]))
    return state


class DelayedLinUCB:
    """Round-loop policy wrapper around RidgeState"""

    epoch = None
    guess_value = None

    def __init__(self, actions, horizon: int, payoff_kind: PayoffKind = PayoffKind.LOSS,
                 reg: float = 1.0):
        self.actions = np.atleast_2d(np.asarray(actions, dtype=float))
        self.horizon = int(horizon)
        self.payoff_kind = PayoffKind(payoff_kind)
        self.state = RidgeState(self.actions.shape[1], reg)
        self.arrived = 0

    def select(self, t: int) -> int:
        return select(self.state, self.actions, t, self.horizon, self.payoff_kind)

    def observe(self, t: int, events: Sequence[FeedbackEvent]) -> None:
        ingest(self.state, self.actions, events)
        self.arrived += len(events)


def run_linucb(instance: BanditInstance, horizon: int, rng: np.random.Generator,
               reg: float = 1.0, policy: Optional[DelayedLinUCB] = None) -> RunRecord:
    env = DelayedFeedbackEnv(instance, horizon, rng)
    if policy is None:
        policy = DelayedLinUCB(instance.action_matrix(), horizon, instance.payoff_kind, reg)
    record = run_policy(env, policy)
    record.metadata.update({"reg": policy.state.reg, "dropped_events": env.dropped})
    logger.debug(f"LinUCB used {policy.arrived} of {horizon} payoffs")
    return record
