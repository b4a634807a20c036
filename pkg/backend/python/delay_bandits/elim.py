"""
Phased elimination over a volumetric spanner under payoff-proportional delay

One learner covers three variants: delay-as-loss, its misspecified
generalisation (epsilon > 0) and delay-as-reward. Each epoch m pulls every
spanner arm 2^m times round-robin, builds delay-aware confidence bounds from
the feedback that arrived inside the epoch, and removes dominated actions.
"""

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, FrozenSet, List, Optional, Sequence

import numpy as np

from .delayenv import DelayedFeedbackEnv, FeedbackEvent, RunRecord, run_policy
from .models import BanditInstance, BMode, PayoffKind
from .settings import RECONSTRUCTION_TOLERANCE
from .spanner import Spanner, compute_spanner, decompose_all

logger = logging.getLogger(__name__)

# Multiplier of rho * sqrt(|S_m|) * epsilon in the elimination rule
MISSPECIFICATION_SLACK = 4.0
# Second-width bounds of an arm with no guaranteed feedback
VACUOUS_UPPER = 1.0
VACUOUS_LOWER = -1.0


def default_beta(num_actions: int, horizon: int) -> float:
    """Width coefficient sqrt(2 ln(K T^3))"""
    return math.sqrt(2.0 * math.log(num_actions * float(horizon) ** 3))


def misspecification_slack(rho: float, spanner_size: int, epsilon: float) -> float:
    """4 rho sqrt(|S_m|) epsilon; a non-finite rho leaves no usable bound"""
    if not math.isfinite(rho):
        return math.inf
    return MISSPECIFICATION_SLACK * rho * math.sqrt(spanner_size) * epsilon


@dataclass
class GuessState:
    """
    Guess B of the optimal payoff

    Loss mode starts at 1/D and doubles on every restart, reward mode starts
    at 1 and halves. In ignored mode B is +inf for losses and -inf for rewards.
    """
    payoff_kind: PayoffKind
    mode: BMode
    max_delay: float
    value: float = field(init=False)
    restarts: int = 0

    def __post_init__(self):
        if self.mode is BMode.IGNORED:
            self.value = math.inf if self.payoff_kind is PayoffKind.LOSS else -math.inf
        elif self.payoff_kind is PayoffKind.LOSS:
            self.value = 1.0 / self.max_delay if self.max_delay > 0 else math.inf
        else:
            self.value = 1.0

    @property
    def ignored(self) -> bool:
        return self.mode is BMode.IGNORED

    def advance(self) -> float:
        self.restarts += 1
        if self.payoff_kind is PayoffKind.LOSS:
            self.value *= 2.0
        else:
            self.value /= 2.0
        return self.value


@dataclass(frozen=True)
class ArmStats:
    """Within-epoch statistics of one spanner arm"""
    action_index: int
    norm: float
    observed_rounds: FrozenSet[int]
    certain_rounds: FrozenSet[int]
    unobserved_rounds: FrozenSet[int]
    mu_plus: float
    mu_minus: float
    mu_certain: Optional[float]  # None when no play is guaranteed to have arrived
    upper_1: float
    lower_1: float
    upper_2: float
    lower_2: float

    @property
    def certain_count(self) -> int:
        return len(self.certain_rounds)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "action": self.action_index,
            "cm": self.certain_count,
            "Om": len(self.observed_rounds),
            "Em": len(self.unobserved_rounds),
            "muPlus": self.mu_plus,
            "muMinus": self.mu_minus,
            "muF": self.mu_certain,
            "bounds": [self.lower_1, self.upper_1, self.lower_2, self.upper_2],
        }


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    start: int
    end: int
    beta: float
    arms: List[ArmStats]

    def _column(self, name: str) -> np.ndarray:
        return np.array([getattr(arm, name) for arm in self.arms], dtype=float)

    @property
    def upper_1(self) -> np.ndarray:
        return self._column("upper_1")

    @property
    def lower_1(self) -> np.ndarray:
        return self._column("lower_1")

    @property
    def upper_2(self) -> np.ndarray:
        return self._column("upper_2")

    @property
    def lower_2(self) -> np.ndarray:
        return self._column("lower_2")


@dataclass(frozen=True)
class ActionBounds:
    ucb: np.ndarray
    lcb: np.ndarray


@dataclass
class ActiveSet:
    indices: List[int]
    epoch: int = 0
    spanner: Optional[Spanner] = None
    coefficients: Optional[np.ndarray] = None  # rows follow indices, columns follow spanner members
    residuals: Optional[np.ndarray] = None
    rho: float = float("nan")


@dataclass
class EpochRecord:
    """Everything decided at the end of one completed epoch"""
    phase: int
    guess: float
    active: List[int]
    members: List[int]
    coefficients: np.ndarray
    rho: float
    stats: EpochStats
    bounds: ActionBounds
    eliminated: List[int]
    emptied: bool
    slack: float = 0.0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "phase": self.phase,
            "m": self.stats.epoch,
            "start": self.stats.start,
            "end": self.stats.end,
            "B": _json_number(self.guess),
            "activeCount": len(self.active),
            "spannerSize": len(self.members),
            "rho": _json_number(self.rho),
            "perArm": [arm.to_dict() for arm in self.stats.arms],
            "eliminated": list(self.eliminated),
            "emptied": self.emptied,
            "slack": _json_number(self.slack),
        }


def _json_number(value: float) -> Optional[float]:
    return float(value) if math.isfinite(value) else None


class DiagnosticsLog:
    """Append-only JSON lines file, one record per completed epoch"""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._handle = open(self.path, "w", encoding="utf-8")

    def write(self, record: Dict[str, Any]) -> None:
        self._handle.write(json.dumps(record, sort_keys=True) + "\n")

    def close(self) -> None:
        if not self._handle.closed:
            self._handle.close()

    def __enter__(self) -> "DiagnosticsLog":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def epoch_schedule(members: Sequence[int], epoch: int, remaining: Optional[int] = None) -> List[int]:
    """
    Round-robin pulls of an epoch: each member 2^epoch times in member order

    The schedule is cut to `remaining` rounds when the horizon is near.
    """
    if epoch < 1:
        raise ValueError(f"Epochs are numbered from 1, got {epoch}")
    schedule = list(members) * (2 ** epoch)
    if remaining is not None:
        schedule = schedule[:max(int(remaining), 0)]
    return schedule


def epoch_stats(events: Sequence[FeedbackEvent], schedule: Sequence[int], start: int,
                epoch: int, beta: float, max_delay: float, members: Sequence[int],
                vectors: np.ndarray) -> EpochStats:
    """
    Statistics of a completed epoch

    Parameters:
    -----------
    events : sequence of FeedbackEvent
        Feedback delivered so far; only plays of this epoch that arrived by
        its last round are used
    schedule : sequence of int
        Action played at each round of the epoch
    start : int
        First round of the epoch
    epoch : int
        Epoch index m
    beta : float
        Width coefficient
    max_delay : float
        Maximum delay D
    members, vectors
        Spanner arms and their vectors, in round-robin order
    """
    end = start + len(schedule) - 1
    pulls = float(2 ** epoch)
    first_width = beta / math.sqrt(pulls)

    arrived: Dict[int, float] = {
        event.played_round: event.payoff
        for event in events
        if start <= event.played_round <= end and event.arrival_round <= end
    }

    arms = []
    for position, action in enumerate(members):
        rounds = [start + k for k, played in enumerate(schedule) if played == action]
        observed = frozenset(tau for tau in rounds if tau in arrived)
        # Deterministic: every play at least D rounds before the end has arrived
        certain = frozenset(tau for tau in rounds if tau + max_delay <= end)
        unobserved = frozenset(rounds) - observed
        norm = float(np.linalg.norm(vectors[position]))

        observed_sum = math.fsum(arrived[tau] for tau in observed)
        mu_plus = (observed_sum + len(unobserved)) / pulls
        mu_minus = observed_sum / pulls

        if certain:
            mu_certain = math.fsum(arrived[tau] for tau in certain) / len(certain)
            second_width = beta / math.sqrt(len(certain)) * norm
            upper_2, lower_2 = mu_certain + second_width, mu_certain - second_width
        else:
            mu_certain = None
            upper_2, lower_2 = VACUOUS_UPPER, VACUOUS_LOWER

        arms.append(ArmStats(
            action_index=int(action),
            norm=norm,
            observed_rounds=observed,
            certain_rounds=certain,
            unobserved_rounds=unobserved,
            mu_plus=mu_plus,
            mu_minus=mu_minus,
            mu_certain=mu_certain,
            upper_1=mu_plus + first_width * norm,
            lower_1=mu_minus - first_width * norm,
            upper_2=upper_2,
            lower_2=lower_2,
        ))
    return EpochStats(epoch=epoch, start=start, end=end, beta=beta, arms=arms)


def all_action_bounds(coefficients: np.ndarray, stats: EpochStats,
                      payoff_kind: PayoffKind = PayoffKind.LOSS) -> ActionBounds:
    """
    Confidence bounds of every active action from its spanner coefficients

    Positive coefficients take the upper bound of a member and negative ones
    the lower bound when building an upper confidence bound, and the other
    way round for lower confidence bounds.
    """
    coefficients = np.atleast_2d(coefficients)
    positive = np.clip(coefficients, 0.0, None)
    negative = np.clip(coefficients, None, 0.0)
    upper_1, lower_1 = stats.upper_1, stats.lower_1
    upper_2, lower_2 = stats.upper_2, stats.lower_2

    if PayoffKind(payoff_kind) is PayoffKind.LOSS:
        ucb = positive @ upper_2 + negative @ lower_2
        lcb = np.maximum(positive @ lower_1 + negative @ upper_1,
                         positive @ lower_2 + negative @ upper_2)
    else:
        lcb = positive @ lower_2 + negative @ upper_2
        ucb = np.maximum(positive @ upper_1 + negative @ lower_1,
                         positive @ upper_2 + negative @ lower_2)
    return ActionBounds(ucb=ucb, lcb=lcb)


def action_bounds(coefficients, stats: EpochStats,
                  payoff_kind: PayoffKind = PayoffKind.LOSS) -> tuple:
    """(UCB, LCB) of a single action"""
    bounds = all_action_bounds(np.asarray(coefficients, dtype=float).reshape(1, -1), stats, payoff_kind)
    return float(bounds.ucb[0]), float(bounds.lcb[0])


def eliminate(active: Sequence[int], bounds: ActionBounds, guess: float, slack: float = 0.0,
              payoff_kind: PayoffKind = PayoffKind.LOSS) -> tuple:
    """
    Apply the elimination rule to an active set

    Loss: drop a when LCB(a) >= min(min UCB, B) + slack.
    Reward: drop a when max(max LCB, B) >= UCB(a) + slack.

    Returns:
    --------
    survivors : list of int
    removed : list of int
    """
    active = list(active)
    if PayoffKind(payoff_kind) is PayoffKind.LOSS:
        threshold = min(float(np.min(bounds.ucb)), guess) + slack
        drop = bounds.lcb >= threshold
    else:
        threshold = max(float(np.max(bounds.lcb)), guess)
        drop = threshold >= bounds.ucb + slack
    survivors = [a for a, dropped in zip(active, drop) if not dropped]
    removed = [a for a, dropped in zip(active, drop) if dropped]
    return survivors, removed


class PhasedElimination:
    """
    Online phased-elimination learner

    Parameters:
    -----------
    actions : array-like, shape (K, n)
        Action vectors
    horizon : int
        Number of rounds T
    max_delay : float
        Maximum delay D
    payoff_kind : PayoffKind, default=PayoffKind.LOSS
        Delay-as-loss or delay-as-reward rules
    epsilon : float, default=0.0
        Misspecification level; 0 gives the well-specified rule
    b_mode : BMode, default=BMode.IGNORED
        Whether the optimal-payoff guess B takes part in elimination
    beta : float, optional
        Width coefficient; defaults to sqrt(2 ln(K T^3))
    spanner_budget : int, optional
        Spanner size target; defaults to 3n
    first_epoch : int, default=1
        Index m of the first epoch of every phase, so the first epoch pulls
        each spanner arm 2^first_epoch times
    diagnostics : DiagnosticsLog, optional
        Receives one record per completed epoch
    """

    def __init__(self, actions, horizon: int, max_delay: float,
                 payoff_kind: PayoffKind = PayoffKind.LOSS, epsilon: float = 0.0,
                 b_mode: BMode = BMode.IGNORED, beta: Optional[float] = None,
                 spanner_budget: Optional[int] = None, first_epoch: int = 1,
                 diagnostics: Optional[DiagnosticsLog] = None):
        self.actions = np.atleast_2d(np.asarray(actions, dtype=float))
        if self.actions.shape[0] == 0:
            raise ValueError("Cannot run elimination on an empty action set")
        if epsilon < 0:
            raise ValueError(f"Misspecification level must be non-negative, got {epsilon}")
        if first_epoch < 1:
            raise ValueError(f"Epochs are numbered from 1, got first_epoch={first_epoch}")
        self.horizon = int(horizon)
        self.max_delay = float(max_delay)
        self.payoff_kind = PayoffKind(payoff_kind)
        self.epsilon = float(epsilon)
        self.beta = default_beta(self.actions.shape[0], self.horizon) if beta is None else float(beta)
        self.spanner_budget = spanner_budget
        self.first_epoch = int(first_epoch)
        self.diagnostics = diagnostics

        self.guess = GuessState(self.payoff_kind, BMode(b_mode), self.max_delay)
        self.history: List[EpochRecord] = []
        self.eliminated_count = 0
        self.truncated = False
        self.phase = 0

        self._schedule: List[int] = []
        self._start = 0
        self._end = 0
        self._events: List[FeedbackEvent] = []
        self._restart()

    @property
    def epoch(self) -> int:
        return self.active.epoch

    @property
    def guess_value(self) -> float:
        return self.guess.value

    @property
    def rho_max(self) -> float:
        values = [record.rho for record in self.history if math.isfinite(record.rho)]
        return max(values) if values else float("nan")

    def _restart(self) -> None:
        self.phase += 1
        self.active = ActiveSet(indices=list(range(self.actions.shape[0])), epoch=self.first_epoch - 1)
        self._schedule = []

    def _start_epoch(self, t: int) -> None:
        active = self.active
        active.epoch += 1
        budget = self.spanner_budget if self.spanner_budget is not None else 3 * self.actions.shape[1]
        vectors = self.actions[active.indices]
        local = compute_spanner(vectors, size_budget=budget)
        active.spanner = Spanner(
            member_indices=tuple(active.indices[i] for i in local.member_indices),
            member_vectors=local.member_vectors,
            target_size=local.target_size,
        )
        active.coefficients, active.residuals = decompose_all(vectors, active.spanner)
        ok = active.residuals <= RECONSTRUCTION_TOLERANCE
        active.rho = float(np.linalg.norm(active.coefficients[ok], axis=1).max()) if ok.any() else math.inf
        if not ok.all():
            failed = [active.indices[i] for i in np.nonzero(~ok)[0]]
            logger.warning(f"Decomposition failed for actions {failed}; their bounds are vacuous")

        full = active.spanner.size * 2 ** active.epoch
        self._schedule = epoch_schedule(active.spanner.member_indices, active.epoch,
                                        remaining=self.horizon - t + 1)
        self._start = t
        self._end = t + len(self._schedule) - 1
        self.truncated = len(self._schedule) < full
        self._events = []

    def select(self, t: int) -> int:
        if not self._schedule or t > self._end:
            self._start_epoch(t)
        return int(self._schedule[t - self._start])

    def observe(self, t: int, events: Sequence[FeedbackEvent]) -> None:
        self._events.extend(event for event in events if event.played_round >= self._start)
        if t != self._end:
            return
        if self.truncated:
            logger.debug(f"Epoch {self.epoch} cut at the horizon; no elimination")
            return
        self._finish_epoch()

    def _finish_epoch(self) -> None:
        active = self.active
        spanner = active.spanner
        stats = epoch_stats(self._events, self._schedule, self._start, active.epoch, self.beta,
                            self.max_delay, spanner.member_indices, spanner.member_vectors)
        bounds = all_action_bounds(active.coefficients, stats, self.payoff_kind)

        failed = active.residuals > RECONSTRUCTION_TOLERANCE
        if failed.any():
            bounds.ucb[failed] = math.inf
            bounds.lcb[failed] = -math.inf

        slack = misspecification_slack(active.rho, spanner.size, self.epsilon)
        survivors, removed = eliminate(active.indices, bounds, self.guess.value, slack, self.payoff_kind)
        emptied = not survivors

        record = EpochRecord(
            phase=self.phase,
            guess=self.guess.value,
            active=list(active.indices),
            members=list(spanner.member_indices),
            coefficients=active.coefficients,
            rho=active.rho,
            stats=stats,
            bounds=bounds,
            eliminated=[] if emptied and self.guess.ignored else removed,
            emptied=emptied,
            slack=slack,
        )
        self.history.append(record)
        if self.diagnostics is not None:
            self.diagnostics.write(record.to_dict())

        if emptied:
            if self.guess.ignored:
                logger.warning(f"Epoch {active.epoch} would eliminate every action; keeping the active set")
            else:
                previous = self.guess.value
                self.guess.advance()
                logger.debug(f"Active set emptied at epoch {active.epoch}; B {previous:g} -> {self.guess.value:g}")
                self._restart()
                return
        else:
            self.eliminated_count += len(removed)
            active.indices = survivors
            if removed:
                logger.debug(f"Epoch {active.epoch}: eliminated {removed}, {len(survivors)} remain")
        self._schedule = []


def run_elimination(instance: BanditInstance, horizon: int, rng: np.random.Generator,
                    epsilon: float = 0.0, b_mode: BMode = BMode.IGNORED,
                    beta: Optional[float] = None, spanner_budget: Optional[int] = None,
                    first_epoch: int = 1,
                    diagnostics: Optional[DiagnosticsLog] = None) -> RunRecord:
    """
    Run phased elimination on a fixed-action instance for `horizon` rounds

    The variant (loss or reward) follows the instance's payoff kind.
    """
    env = DelayedFeedbackEnv(instance, horizon, rng)
    policy = PhasedElimination(
        instance.action_matrix(), horizon, instance.max_delay,
        payoff_kind=instance.payoff_kind, epsilon=epsilon, b_mode=b_mode,
        beta=beta, spanner_budget=spanner_budget, first_epoch=first_epoch,
        diagnostics=diagnostics,
    )
    record = run_policy(env, policy)
    record.metadata.update({
        "beta": policy.beta,
        "epochs": len(policy.history),
        "phases": policy.phase,
        "eliminated": policy.eliminated_count,
        "rho_max": policy.rho_max,
        "first_epoch": policy.first_epoch,
        "dropped_events": env.dropped,
    })
    return record
