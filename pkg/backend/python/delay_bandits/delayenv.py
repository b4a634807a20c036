"""
Delayed-feedback environments

A payoff u drawn at round t is delivered at the end of round ceil(t + D * u).
The environment owns the ground truth, the pending-feedback queue and the
per-round regret log; learners only ever see the delivered events.
"""

import logging
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Protocol, Sequence

import numpy as np
import pandas as pd

from .core import compute_gaps, expected_payoffs, sample_payoff, sample_payoff_from_mean
from .errors import HorizonExceededError
from .models import BanditInstance, NoiseLaw

logger = logging.getLogger(__name__)

TRACE_COLUMNS = ["t", "action", "gap", "cum_regret", "epoch", "B", "events_arrived"]


@dataclass(frozen=True)
class FeedbackEvent:
    played_round: int
    action_index: int
    payoff: float
    arrival_round: int


def arrival_round(played_round: int, payoff: float, max_delay: float) -> int:
    """Round at whose end the payoff is observed; the ceiling is applied once"""
    return int(math.ceil(played_round + max_delay * payoff))


class DelayQueue:
    """Pending feedback keyed by arrival round"""

    def __init__(self):
        self._pending: Dict[int, List[FeedbackEvent]] = defaultdict(list)
        self._count = 0

    def __len__(self) -> int:
        return self._count

    def push(self, event: FeedbackEvent) -> None:
        self._pending[event.arrival_round].append(event)
        self._count += 1

    def pop_due(self, round_index: int) -> List[FeedbackEvent]:
        """Remove and return the events arriving at this round, oldest play first"""
        due = self._pending.pop(round_index, [])
        self._count -= len(due)
        return sorted(due, key=lambda event: event.played_round)

    def drain(self) -> List[FeedbackEvent]:
        remaining = [event for key in sorted(self._pending) for event in self._pending[key]]
        self._pending.clear()
        self._count = 0
        return remaining


@dataclass
class RoundLog:
    t: int
    action: int
    gap: float
    cum_regret: float
    epoch: Optional[int] = None
    B: Optional[float] = None
    events_arrived: int = 0


@dataclass
class RunRecord:
    rows: List[RoundLog] = field(default_factory=list)
    algorithm: str = ""
    seed: Optional[int] = None
    metadata: Dict[str, Any] = field(default_factory=dict)

    @property
    def total(self) -> float:
        return self.rows[-1].cum_regret if self.rows else 0.0

    def gaps(self) -> np.ndarray:
        return np.array([row.gap for row in self.rows], dtype=float)

    def actions(self) -> np.ndarray:
        return np.array([row.action for row in self.rows], dtype=int)

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame([asdict(row) for row in self.rows], columns=TRACE_COLUMNS)
        return frame.astype({"t": int, "action": int, "gap": float, "cum_regret": float,
                             "epoch": "Int64", "B": float, "events_arrived": int})


def pseudo_regret(record: RunRecord) -> float:
    """Sum of ground-truth gaps of the played actions"""
    return math.fsum(row.gap for row in record.rows)


class _DelayedFeedback:
    """Round counter, feedback queue and regret log shared by both environments"""

    def __init__(self, horizon: int, max_delay: float, rng: np.random.Generator):
        if horizon < 1:
            raise ValueError(f"Horizon must be positive, got {horizon}")
        self.horizon = int(horizon)
        self.max_delay = float(max_delay)
        self.rng = rng
        self.round = 0
        self.queue = DelayQueue()
        self.record = RunRecord()
        self.history: List[FeedbackEvent] = []
        self.delivered = 0
        self.dropped = 0
        self._cumulative = 0.0

    @property
    def done(self) -> bool:
        return self.round >= self.horizon

    def _check_horizon(self) -> None:
        if self.round >= self.horizon:
            raise HorizonExceededError(self.horizon)

    def _enqueue(self, action_index: int, payoff: float, gap: float,
                 epoch: Optional[int], guess: Optional[float]) -> None:
        self.round += 1
        event = FeedbackEvent(
            played_round=self.round,
            action_index=int(action_index),
            payoff=payoff,
            arrival_round=arrival_round(self.round, payoff, self.max_delay),
        )
        self.queue.push(event)
        self.history.append(event)
        self._cumulative += gap
        self.record.rows.append(RoundLog(
            t=self.round, action=int(action_index), gap=gap,
            cum_regret=self._cumulative, epoch=epoch, B=guess,
        ))

    def collect(self) -> List[FeedbackEvent]:
        """Events delivered at the end of the current round"""
        events = self.queue.pop_due(self.round)
        self.delivered += len(events)
        if self.record.rows:
            self.record.rows[-1].events_arrived = len(events)
        return events

    def finish(self) -> int:
        """Drop feedback that would arrive after the horizon; returns how many"""
        late = self.queue.drain()
        self.dropped = len(late)
        if late:
            logger.debug(f"{len(late)} events arrive after round {self.horizon} and are dropped")
        return self.dropped


class DelayedFeedbackEnv(_DelayedFeedback):
    """
    Fixed action set environment

    Parameters:
    -----------
    instance : BanditInstance
        Ground truth
    horizon : int
        Number of rounds T
    rng : numpy.random.Generator
        Payoff stream of this run
    """

    def __init__(self, instance: BanditInstance, horizon: int, rng: np.random.Generator):
        super().__init__(horizon, instance.max_delay, rng)
        self.instance = instance
        self.gap_profile = compute_gaps(instance)
        self._means = expected_payoffs(instance)
        self._gaps = np.asarray(self.gap_profile.gaps, dtype=float)

    def play(self, action_index: int, epoch: Optional[int] = None,
             guess: Optional[float] = None) -> None:
        self._check_horizon()
        payoff = sample_payoff(self.instance, action_index, self.rng, means=self._means)
        self._enqueue(action_index, payoff, float(self._gaps[action_index]), epoch, guess)


class ContextualDelayedEnv(_DelayedFeedback):
    """
    Environment whose action set is redrawn every round from a context distribution

    The regret of a round is <a_t, theta> - min over the round's set of <a, theta>.
    """

    def __init__(self, theta, distribution, horizon: int, max_delay: float,
                 rng: np.random.Generator, noise_law: NoiseLaw = NoiseLaw.MIXTURE,
                 context_rng: Optional[np.random.Generator] = None):
        super().__init__(horizon, max_delay, rng)
        self.theta = np.asarray(theta, dtype=float)
        self.distribution = distribution
        self.noise_law = NoiseLaw(noise_law)
        self.context_rng = context_rng if context_rng is not None else rng
        self.contexts: List[np.ndarray] = []
        self._current: Optional[np.ndarray] = None

    def observe_context(self) -> np.ndarray:
        """Action set of the round about to be played"""
        self._check_horizon()
        if self._current is None:
            self._current = np.atleast_2d(np.asarray(self.distribution.sample(self.context_rng), dtype=float))
            self.contexts.append(self._current)
        return self._current

    def play(self, action_index: int, epoch: Optional[int] = None,
             guess: Optional[float] = None) -> None:
        action_set = self.observe_context()
        values = action_set @ self.theta
        mean = float(values[action_index])
        payoff = sample_payoff_from_mean(mean, self.noise_law, self.rng)
        gap = max(mean - float(values.min()), 0.0)
        self._current = None
        self._enqueue(action_index, payoff, gap, epoch, guess)


def write_trace(record: RunRecord, path, downsample: int = 1) -> Path:
    """Write the per-round trace as CSV, keeping rounds that are multiples of downsample"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = record.to_frame()
    if downsample > 1:
        frame = frame[frame["t"] % downsample == 0]
    frame.to_csv(path, index=False)
    return path


def read_trace(path) -> pd.DataFrame:
    return pd.read_csv(path, float_precision="round_trip")


class Policy(Protocol):
    """What the round loop needs from a learner"""

    epoch: Optional[int]
    guess_value: Optional[float]

    def select(self, t: int) -> int: ...

    def observe(self, t: int, events: Sequence[FeedbackEvent]) -> None: ...


def run_policy(env: DelayedFeedbackEnv, policy: Policy) -> RunRecord:
    """Play every round of the horizon, delivering arrivals after each play"""
    for t in range(1, env.horizon + 1):
        action = policy.select(t)
        env.play(action, epoch=policy.epoch, guess=policy.guess_value)
        policy.observe(t, env.collect())
    env.finish()
    return env.record
