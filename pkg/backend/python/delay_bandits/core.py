"""
Instance model: generation, ground-truth gaps and payoff sampling
"""

import json
import logging
from pathlib import Path
from typing import Callable, Dict, Optional, Sequence

import numpy as np

from .models import BanditInstance, GapProfile, NoiseLaw, PayoffKind
from .settings import TOLERANCE

logger = logging.getLogger(__name__)

# Scale of the clipped-Gaussian noise law
GAUSSIAN_NOISE_SCALE = 0.1


def _unit_rows(matrix: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return matrix / norms


def random_actions(rng: np.random.Generator, K: int, n: int) -> np.ndarray:
    """K unit-norm actions with coordinates drawn uniformly on [0, 1] before normalising"""
    return _unit_rows(rng.uniform(0.0, 1.0, size=(K, n)))


def generate_instance(seed, n, K, max_delay=1000.0, payoff_kind=PayoffKind.LOSS,
                      noise_law=NoiseLaw.MIXTURE):
    """
    Draw a random instance the way the synthetic study does

    Parameters:
    -----------
    seed : int
        Seed of the generator; the instance is a pure function of it
    n : int
        Dimension
    K : int
        Number of actions
    max_delay : float, default=1000.0
        Maximum delay D
    payoff_kind : PayoffKind, default=PayoffKind.LOSS
        Whether payoffs are losses or rewards
    noise_law : NoiseLaw, default=NoiseLaw.MIXTURE
        Payoff sampling law

    Returns:
    --------
    instance : BanditInstance
        theta = |nu| / ||nu|| with nu standard normal; every action has
        coordinates drawn uniformly on [0, 1] and is normalised to unit norm
    """
    if n < 1 or K < 1:
        raise ValueError(f"Need n >= 1 and K >= 1, got n={n}, K={K}")
    rng = np.random.default_rng(seed)

    nu = np.abs(rng.standard_normal(n))
    while not np.any(nu > 0):
        nu = np.abs(rng.standard_normal(n))
    theta = nu / np.linalg.norm(nu)

    actions = random_actions(rng, K, n)

    return BanditInstance(
        n=n,
        K=K,
        theta=theta.tolist(),
        actions=actions.tolist(),
        max_delay=float(max_delay),
        payoff_kind=PayoffKind(payoff_kind),
        noise_law=NoiseLaw(noise_law),
        seed=seed,
    )


def make_instance(theta, actions, max_delay=0.0, payoff_kind=PayoffKind.LOSS,
                  noise_law=NoiseLaw.MIXTURE, misspecification=None):
    """Build a validated instance from explicit vectors"""
    theta = np.asarray(theta, dtype=float)
    actions = np.atleast_2d(np.asarray(actions, dtype=float))
    return BanditInstance(
        n=theta.shape[0],
        K=actions.shape[0],
        theta=theta.tolist(),
        actions=actions.tolist(),
        max_delay=float(max_delay),
        payoff_kind=PayoffKind(payoff_kind),
        noise_law=NoiseLaw(noise_law),
        misspecification=None if misspecification is None else [float(e) for e in misspecification],
    )


def expected_payoffs(instance: BanditInstance) -> np.ndarray:
    """Mean payoff mu_a = <a, theta> + eps_a of every action"""
    means = instance.action_matrix() @ instance.theta_vector()
    if instance.misspecification is not None:
        means = means + np.asarray(instance.misspecification, dtype=float)
    return np.clip(means, 0.0, 1.0)


def compute_gaps(instance: BanditInstance) -> GapProfile:
    """
    Exact gap profile by enumeration over the K actions

    Gaps use the linear part <a, theta>; the optimal mean is the best mu_a,
    which differs from mu_{a*} only on misspecified instances. Ties break
    toward the lowest index.
    """
    linear = instance.action_matrix() @ instance.theta_vector()
    means = expected_payoffs(instance)

    if instance.payoff_kind is PayoffKind.LOSS:
        best = int(np.argmin(linear))
        gaps = linear - linear[best]
        optimal_mean = float(np.min(means))
    else:
        best = int(np.argmax(linear))
        gaps = linear[best] - linear
        optimal_mean = float(np.max(means))
    gaps = np.maximum(gaps, 0.0)
    gaps[best] = 0.0

    positive = gaps[gaps > TOLERANCE]
    return GapProfile(
        optimal_index=best,
        optimal_mean=optimal_mean,
        gaps=gaps.tolist(),
        min_gap=float(positive.min()) if positive.size else None,
        max_gap=float(gaps.max()),
        optimal_delay=instance.max_delay * optimal_mean,
    )


def _mixture(mu, rng):
    # With probability mu draw from U[mu, 1], otherwise from U[0, mu]
    if rng.random() < mu:
        return rng.uniform(mu, 1.0)
    return rng.uniform(0.0, mu)


def _bernoulli(mu, rng):
    return float(rng.random() < mu)


def _clipped_gaussian(mu, rng):
    # Symmetric clipping keeps the mean at mu
    half_width = min(mu, 1.0 - mu)
    noise = GAUSSIAN_NOISE_SCALE * rng.standard_normal()
    return mu + float(np.clip(noise, -half_width, half_width))


PAYOFF_SAMPLERS: Dict[NoiseLaw, Callable[[float, np.random.Generator], float]] = {
    NoiseLaw.MIXTURE: _mixture,
    NoiseLaw.BERNOULLI: _bernoulli,
    NoiseLaw.CLIPPED_GAUSSIAN: _clipped_gaussian,
}


def sample_payoff_from_mean(mu: float, noise_law: NoiseLaw, rng: np.random.Generator) -> float:
    """Draw u in [0, 1] with E[u] = mu under the given law"""
    mu = min(max(float(mu), 0.0), 1.0)
    u = PAYOFF_SAMPLERS[NoiseLaw(noise_law)](mu, rng)
    return min(max(float(u), 0.0), 1.0)


def sample_payoff(instance: BanditInstance, action_index: int, rng: np.random.Generator,
                  means: Optional[Sequence[float]] = None) -> float:
    """
    Draw the payoff of one play of an action

    Parameters:
    -----------
    instance : BanditInstance
        Instance being played
    action_index : int
        Index of the played action
    rng : numpy.random.Generator
        Per-run generator
    means : sequence of float, optional
        Precomputed expected payoffs (avoids recomputing A @ theta per round)
    """
    if not 0 <= action_index < instance.K:
        raise IndexError(f"Action index {action_index} outside [0, {instance.K})")
    mu = means[action_index] if means is not None else expected_payoffs(instance)[action_index]
    return sample_payoff_from_mean(mu, instance.noise_law, rng)


def save_instance(instance: BanditInstance, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(instance.to_json(), encoding="utf-8")
    logger.info(f"Instance saved to {path}")
    return path


def load_instance(path) -> BanditInstance:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Instance file not found: {path}")
    return BanditInstance.model_validate(json.loads(path.read_text(encoding="utf-8")))
