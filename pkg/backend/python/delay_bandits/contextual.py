"""
Reduction from contextual to fixed-action delayed linear bandits

Rounds are split into epochs (2^(m-1), 2^m]. Epoch m builds the abstract
action set X_m = {g_m(theta) : theta in cover}, where g_m(theta) averages the
optimal action under theta over the action sets seen in rounds 1..2^(m-1),
and runs a fresh misspecified phased-elimination learner on X_m. The learner
nominates cover points; the reduction plays the corresponding optimal action
of the current action set and forwards delayed payoffs back.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Protocol, Sequence, Tuple

import numpy as np
from scipy.stats import norm, qmc
from sklearn.neighbors import NearestNeighbors

from .core import random_actions
from .delayenv import ContextualDelayedEnv, FeedbackEvent, RunRecord
from .elim import DiagnosticsLog, PhasedElimination
from .errors import CoverError
from .models import BMode, ContextConfig, CoverConfig, PayoffKind
from .settings import TOLERANCE

logger = logging.getLogger(__name__)

# Feasible points drawn to measure the covering radius
RADIUS_SAMPLES = 2000
# Keeps the inverse normal CDF finite
QUANTILE_CLIP = 1e-12


@dataclass(frozen=True)
class ParameterCover:
    points: np.ndarray
    resolution: float
    achieved_radius: float
    method: str

    @property
    def size(self) -> int:
        return self.points.shape[0]


def _ball_grid(n: int, resolution: float) -> np.ndarray:
    values = np.unique(np.append(np.arange(0.0, 1.0 + TOLERANCE, resolution), 1.0))
    values = values[values <= 1.0]
    mesh = np.stack(np.meshgrid(*([values] * n), indexing="ij"), axis=-1).reshape(-1, n)
    return mesh[np.linalg.norm(mesh, axis=1) <= 1.0 + TOLERANCE]


def _ball_points(uniform: np.ndarray) -> np.ndarray:
    """Map points of [0, 1]^(n+1) into the non-negative part of the unit ball"""
    dim = uniform.shape[1] - 1
    clipped = np.clip(uniform, QUANTILE_CLIP, 1.0 - QUANTILE_CLIP)
    directions = np.abs(norm.ppf(clipped[:, :dim]))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    radii = clipped[:, dim] ** (1.0 / dim)
    return directions * radii[:, None]


def covering_radius(points: np.ndarray, seed: int = 0, samples: int = RADIUS_SAMPLES) -> float:
    """Largest distance from a random feasible parameter to its nearest cover point"""
    rng = np.random.default_rng(seed)
    sampled = _ball_points(rng.uniform(size=(samples, points.shape[1] + 1)))
    distances, _ = NearestNeighbors(n_neighbors=1).fit(points).kneighbors(sampled)
    return float(distances.max())


def build_cover(n: int, resolution: float = 0.1, cap: int = 512, seed: int = 0) -> ParameterCover:
    """
    Finite cover of the non-negative part of the unit ball

    Parameters:
    -----------
    n : int
        Dimension
    resolution : float, default=0.1
        Grid step for n <= 3
    cap : int, default=512
        Maximum number of points
    seed : int, default=0
        Seed of the scrambled Halton sequence and of the radius samples

    Returns:
    --------
    cover : ParameterCover
        A grid when n <= 3 and the grid fits under the cap, otherwise the n
        basis vectors followed by cap - n low-discrepancy points
    """
    if n < 1:
        raise ValueError(f"Dimension must be positive, got {n}")
    if cap < n:
        raise CoverError(f"Cap {cap} cannot hold the {n} basis directions")

    points = _ball_grid(n, resolution) if n <= 3 else None
    if points is not None and points.shape[0] <= cap:
        method = "grid"
    else:
        method = "halton"
        sampler = qmc.Halton(d=n + 1, scramble=True, seed=seed)
        points = np.vstack([np.eye(n), _ball_points(sampler.random(cap - n))])

    radius = covering_radius(points, seed)
    logger.debug(f"Cover of dimension {n}: {points.shape[0]} points ({method}), radius {radius:.4f}")
    return ParameterCover(points=points, resolution=resolution, achieved_radius=radius, method=method)


def optimal_actions(action_set: np.ndarray, thetas: np.ndarray) -> np.ndarray:
    """Row i is argmin over the set of <a, thetas[i]>, ties to the lowest index"""
    values = thetas @ action_set.T
    return action_set[np.argmin(values, axis=1)]


class ContextDistribution(Protocol):
    def sample(self, rng: np.random.Generator) -> np.ndarray: ...


class FixedContext:
    """Degenerate distribution: the same action set every round"""

    def __init__(self, actions):
        self.actions = np.atleast_2d(np.asarray(actions, dtype=float))

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return self.actions

    def support(self) -> List[Tuple[float, np.ndarray]]:
        return [(1.0, self.actions)]


class MixtureContext:
    """Finite mixture of action sets"""

    def __init__(self, action_sets: Sequence, weights: Optional[Sequence[float]] = None):
        self.action_sets = [np.atleast_2d(np.asarray(s, dtype=float)) for s in action_sets]
        if weights is None:
            weights = np.full(len(self.action_sets), 1.0 / len(self.action_sets))
        self.weights = np.asarray(weights, dtype=float)
        if self.weights.shape != (len(self.action_sets),) or not math.isclose(self.weights.sum(), 1.0):
            raise ValueError("Mixture weights must be one probability per action set")

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return self.action_sets[int(rng.choice(len(self.action_sets), p=self.weights))]

    def support(self) -> List[Tuple[float, np.ndarray]]:
        return list(zip(self.weights.tolist(), self.action_sets))


class SubsampleContext:
    """Uniformly random K-subsets of a fixed pool, drawn afresh every round"""

    def __init__(self, pool, size: int):
        self.pool = np.atleast_2d(np.asarray(pool, dtype=float))
        if not 1 <= size <= self.pool.shape[0]:
            raise ValueError(f"Subset size {size} outside [1, {self.pool.shape[0]}]")
        self.size = int(size)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        chosen = np.sort(rng.choice(self.pool.shape[0], size=self.size, replace=False))
        return self.pool[chosen]


def make_context_distribution(config: ContextConfig, n: int, K: int,
                              rng: np.random.Generator) -> ContextDistribution:
    """Built-in distribution described by a ContextConfig; action sets are drawn from rng"""
    if config.kind == "fixed":
        return FixedContext(random_actions(rng, K, n))
    if config.kind == "mixture":
        return MixtureContext([random_actions(rng, K, n) for _ in range(config.num_sets)])
    pool_size = config.pool_size if config.pool_size is not None else 4 * K
    if pool_size < K:
        raise ValueError(f"Pool of {pool_size} actions cannot supply subsets of {K}")
    return SubsampleContext(random_actions(rng, pool_size, n), K)


def expected_g(distribution, cover: ParameterCover) -> np.ndarray:
    """Population g(theta) = E[argmin_{a in A} <a, theta>] for a finite-support distribution"""
    if not hasattr(distribution, "support"):
        raise TypeError(f"{type(distribution).__name__} has no finite support")
    return sum(weight * optimal_actions(actions, cover.points)
               for weight, actions in distribution.support())


@dataclass(frozen=True)
class GEstimate:
    epoch: int
    rounds: int
    vectors: np.ndarray  # one row per cover point


class GAccumulator:
    """Running sum of per-round optimal actions under every cover point"""

    def __init__(self, cover: ParameterCover):
        self.cover = cover
        self.total = np.zeros_like(cover.points)
        self.count = 0

    def add(self, action_set: np.ndarray) -> None:
        self.total += optimal_actions(action_set, self.cover.points)
        self.count += 1

    def estimate(self, epoch: int) -> GEstimate:
        if self.count == 0:
            raise ValueError("No action set observed yet")
        return GEstimate(epoch=epoch, rounds=self.count, vectors=self.total / self.count)


def update_g(history: Sequence[np.ndarray], cover: ParameterCover, epoch: int) -> GEstimate:
    """g_m averaged over the first 2^(m-1) observed action sets"""
    rounds = 2 ** (epoch - 1)
    if len(history) < rounds:
        raise ValueError(f"Epoch {epoch} needs {rounds} action sets, got {len(history)}")
    accumulator = GAccumulator(cover)
    for action_set in history[:rounds]:
        accumulator.add(np.atleast_2d(action_set))
    return accumulator.estimate(epoch)


def misspecification_level(epoch: int, horizon: int, cover_size: int,
                           delta: Optional[float] = None) -> float:
    """epsilon_m = min(1, 2 sqrt(ln(T |cover| / delta) / 2^m)) with delta = 1/T^2 by default"""
    if delta is None:
        delta = 1.0 / float(horizon) ** 2
    return min(1.0, 2.0 * math.sqrt(math.log(horizon * cover_size / delta) / 2 ** epoch))


@dataclass
class _EpochRun:
    epoch: int
    offset: int  # rounds before the epoch
    learner: PhasedElimination
    nominations: Dict[int, int] = field(default_factory=dict)  # local round -> cover index


class ContextualReduction:
    """
    Round-loop policy for contextual environments

    Parameters:
    -----------
    cover : ParameterCover
        Candidate parameters
    horizon : int
        Number of rounds T
    max_delay : float
        Maximum delay D
    delta : float, optional
        Confidence level of the misspecification schedule; 1/T^2 by default
    b_mode, beta, spanner_budget
        Passed to every per-epoch elimination learner
    diagnostics : DiagnosticsLog, optional
        Shared by the per-epoch learners
    """

    def __init__(self, cover: ParameterCover, horizon: int, max_delay: float,
                 delta: Optional[float] = None, b_mode: BMode = BMode.IGNORED,
                 beta: Optional[float] = None, spanner_budget: Optional[int] = None,
                 diagnostics: Optional[DiagnosticsLog] = None):
        self.cover = cover
        self.horizon = int(horizon)
        self.max_delay = float(max_delay)
        self.delta = delta
        self.b_mode = BMode(b_mode)
        self.beta = beta
        self.spanner_budget = spanner_budget
        self.diagnostics = diagnostics

        self.accumulator = GAccumulator(cover)
        self.estimates: List[GEstimate] = []
        self.epsilons: List[float] = []
        self.dropped = 0
        self._run: Optional[_EpochRun] = None

    @property
    def epoch(self) -> int:
        return self._run.epoch if self._run is not None else 0

    @property
    def guess_value(self) -> Optional[float]:
        return self._run.learner.guess_value if self._run is not None else None

    @staticmethod
    def epoch_of(t: int) -> int:
        """Epoch containing round t; round 1 precedes epoch 1"""
        return max(int(t) - 1, 0).bit_length()

    def _start_epoch(self, epoch: int) -> None:
        offset = 2 ** (epoch - 1)
        estimate = self.accumulator.estimate(epoch)
        epsilon = misspecification_level(epoch, self.horizon, self.cover.size, self.delta)
        learner = PhasedElimination(
            estimate.vectors, min(offset, self.horizon - offset), self.max_delay,
            payoff_kind=PayoffKind.LOSS, epsilon=epsilon, b_mode=self.b_mode,
            beta=self.beta, spanner_budget=self.spanner_budget, diagnostics=self.diagnostics,
        )
        self.estimates.append(estimate)
        self.epsilons.append(epsilon)
        self._run = _EpochRun(epoch=epoch, offset=offset, learner=learner)
        logger.debug(f"Reduction epoch {epoch}: epsilon {epsilon:.4f}, rounds {offset + 1}..{min(2 * offset, self.horizon)}")

    def select(self, t: int, action_set: np.ndarray) -> int:
        """Index within action_set of the action to play in round t"""
        action_set = np.atleast_2d(action_set)
        epoch = self.epoch_of(t)
        if epoch == 0:
            theta = self.cover.points[0]
        else:
            if self._run is None or self._run.epoch != epoch:
                self._start_epoch(epoch)
            local = t - self._run.offset
            nominated = self._run.learner.select(local)
            self._run.nominations[local] = nominated
            theta = self.cover.points[nominated]
        self.accumulator.add(action_set)
        return int(np.argmin(action_set @ theta))

    def observe(self, t: int, events: Sequence[FeedbackEvent]) -> None:
        if self._run is None:
            self.dropped += len(events)
            return
        run = self._run
        forwarded = []
        for event in events:
            local = event.played_round - run.offset
            if local in run.nominations:
                forwarded.append(FeedbackEvent(
                    played_round=local,
                    action_index=run.nominations[local],
                    payoff=event.payoff,
                    arrival_round=event.arrival_round - run.offset,
                ))
        late = len(events) - len(forwarded)
        if late:
            self.dropped += late
            logger.debug(f"Dropped {late} payoffs played before epoch {run.epoch}")
        run.learner.observe(t - run.offset, forwarded)


def run_reduction(env: ContextualDelayedEnv, cover_cfg: Optional[CoverConfig] = None,
                  b_mode: BMode = BMode.IGNORED, beta: Optional[float] = None,
                  spanner_budget: Optional[int] = None,
                  diagnostics: Optional[DiagnosticsLog] = None,
                  reduction: Optional[ContextualReduction] = None) -> RunRecord:
    """Run the reduction against a contextual environment for its whole horizon"""
    if reduction is None:
        cover_cfg = cover_cfg if cover_cfg is not None else CoverConfig()
        cover = build_cover(env.theta.shape[0], cover_cfg.resolution, cover_cfg.cap, cover_cfg.seed)
        reduction = ContextualReduction(cover, env.horizon, env.max_delay, delta=cover_cfg.delta,
                                        b_mode=b_mode, beta=beta, spanner_budget=spanner_budget,
                                        diagnostics=diagnostics)
    cover = reduction.cover
    for t in range(1, env.horizon + 1):
        index = reduction.select(t, env.observe_context())
        env.play(index, epoch=reduction.epoch, guess=reduction.guess_value)
        reduction.observe(t, env.collect())
    env.finish()

    record = env.record
    record.metadata.update({
        "cover_size": cover.size,
        "cover_method": cover.method,
        "cover_radius": cover.achieved_radius,
        "epsilons": list(reduction.epsilons),
        "epochs": len(reduction.estimates),
        "cross_epoch_dropped": reduction.dropped,
        "dropped_events": env.dropped,
    })
    return record
