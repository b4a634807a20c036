"""
Volumetric spanners of finite action sets: construction, decomposition, certification.

A spanner S of A lets every action be written as a linear combination of the
members of S. The construction here is approximate: greedy volume growth
followed by swap local search on the certified norm factor
rho = max_a ||lambda(a)||_2, which is reported instead of assumed to be 1.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
import scipy.linalg

from .errors import DecompositionError
from .settings import RANK_THRESHOLD, RECONSTRUCTION_TOLERANCE, TOLERANCE

logger = logging.getLogger(__name__)

DEFAULT_SWAP_PASSES = 25
# Minimum decrease of rho accepted by the local search
SWAP_IMPROVEMENT = 1e-12
# Rows closer than this are the same action
DUPLICATE_DISTANCE = 1e-12


@dataclass(frozen=True)
class Spanner:
    member_indices: Tuple[int, ...]
    member_vectors: np.ndarray
    target_size: int

    @property
    def size(self) -> int:
        return len(self.member_indices)


@dataclass(frozen=True)
class SpannerDecomposition:
    coefficients: np.ndarray  # one row of lambda per input action
    norm_factor: float
    reconstruction_error: float

    @property
    def approximate(self) -> bool:
        return self.norm_factor > 1 + TOLERANCE


def numerical_rank(matrix) -> int:
    """Number of singular values above RANK_THRESHOLD times the largest one"""
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    if matrix.size == 0:
        return 0
    singular = np.linalg.svd(matrix, compute_uv=False)
    if singular.size == 0 or singular[0] == 0:
        return 0
    return int(np.sum(singular > RANK_THRESHOLD * singular[0]))


def _least_norm(members: np.ndarray, targets: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    # Minimum-norm solution of members.T @ lambda = target for every target row
    solution, *_ = np.linalg.lstsq(members.T, targets.T, rcond=RANK_THRESHOLD)
    coefficients = solution.T
    residuals = np.linalg.norm(targets - coefficients @ members, axis=1)
    return coefficients, residuals


def _norm_factor(actions: np.ndarray, members: List[int]) -> float:
    coefficients, residuals = _least_norm(actions[members], actions)
    if residuals.max() > RECONSTRUCTION_TOLERANCE:
        return np.inf
    return float(np.linalg.norm(coefficients, axis=1).max())


def _duplicate_groups(actions: np.ndarray) -> np.ndarray:
    """Index of the first row equal to each row"""
    groups = np.arange(actions.shape[0])
    for i in range(actions.shape[0]):
        if groups[i] != i:
            continue
        close = np.linalg.norm(actions[i + 1:] - actions[i], axis=1) <= DUPLICATE_DISTANCE
        later = np.nonzero(close)[0] + i + 1
        groups[later[groups[later] == later]] = i
    return groups


def _grow_by_volume(actions: np.ndarray, seed: List[int], rank: int, budget: int,
                    groups: np.ndarray) -> List[int]:
    # Work in coordinates of the row space so the Gram matrix of the seed is invertible
    _, _, vt = np.linalg.svd(actions, full_matrices=False)
    reduced = actions @ vt[:rank].T
    members = list(seed)
    gram = reduced[members].T @ reduced[members]

    while len(members) < budget:
        used = set(int(groups[i]) for i in members)
        candidates = np.array([g not in used for g in groups])
        if not candidates.any():
            break
        # det(G + y y^T) = det(G) (1 + y^T G^-1 y): pick the largest leverage
        leverage = np.einsum('ij,ij->i', reduced @ np.linalg.inv(gram), reduced)
        leverage[~candidates] = -np.inf
        chosen = int(np.argmax(leverage))
        members.append(chosen)
        gram = gram + np.outer(reduced[chosen], reduced[chosen])
    return members


def _swap_search(actions: np.ndarray, members: List[int], groups: np.ndarray,
                 max_passes: int) -> Tuple[List[int], float]:
    best = _norm_factor(actions, members)
    representatives = [i for i in range(actions.shape[0]) if groups[i] == i]
    for _ in range(max_passes):
        improved = False
        for position in range(len(members)):
            others = members[:position] + members[position + 1:]
            used = {int(groups[i]) for i in members}
            for candidate in representatives:
                if candidate in used:
                    continue
                trial = others[:position] + [candidate] + others[position:]
                value = _norm_factor(actions, trial)
                if value < best - SWAP_IMPROVEMENT:
                    members, best = trial, value
                    used = {int(groups[i]) for i in members}
                    improved = True
        if not improved:
            break
    return members, best


def compute_spanner(actions, size_budget: Optional[int] = None,
                    max_swap_passes: int = DEFAULT_SWAP_PASSES) -> Spanner:
    """
    Approximate volumetric spanner of a finite action set

    Parameters:
    -----------
    actions : array-like, shape (K, n)
        Action vectors
    size_budget : int, optional
        Target size; defaults to 3n, capped at K and floored at rank(A)
    max_swap_passes : int, default=25
        Upper bound on local-search passes

    Returns:
    --------
    spanner : Spanner
        Members in ascending index order (this order is the round-robin order)
    """
    actions = np.atleast_2d(np.asarray(actions, dtype=float))
    num_actions, dim = actions.shape
    if num_actions == 0:
        raise ValueError("Cannot build a spanner of an empty action set")

    target = 3 * dim if size_budget is None else int(size_budget)
    rank = numerical_rank(actions)
    budget = max(min(target, num_actions), rank, 1)
    if size_budget is not None and size_budget < rank:
        logger.warning(f"Spanner budget {size_budget} below rank {rank}; using {rank}")

    groups = _duplicate_groups(actions)
    distinct = np.unique(groups)
    if distinct.size == 1:
        members = [int(distinct[0])]
    elif num_actions <= budget:
        members = list(range(num_actions))
    else:
        # Pivoted QR picks a well-conditioned basis of the span
        _, _, pivots = scipy.linalg.qr(actions.T, mode='economic', pivoting=True)
        seed = [int(i) for i in pivots[:rank]]
        members = _grow_by_volume(actions, seed, rank, budget, groups)
        members, rho = _swap_search(actions, members, groups, max_swap_passes)
        logger.debug(f"Spanner of {num_actions} actions: size {len(members)}, rho {rho:.4f}")

    members = sorted(members)
    return Spanner(
        member_indices=tuple(members),
        member_vectors=actions[members].copy(),
        target_size=target,
    )


def decompose(action, spanner: Spanner) -> np.ndarray:
    """
    Minimum-norm coefficients lambda with action = sum_i lambda_i s_i

    Raises DecompositionError when the residual exceeds 1e-7.
    """
    action = np.asarray(action, dtype=float).reshape(1, -1)
    coefficients, residuals = _least_norm(spanner.member_vectors, action)
    if residuals[0] > RECONSTRUCTION_TOLERANCE:
        raise DecompositionError(float(residuals[0]))
    return coefficients[0]


def decompose_all(actions, spanner: Spanner) -> Tuple[np.ndarray, np.ndarray]:
    """Coefficients and residual norms for every action, without raising"""
    actions = np.atleast_2d(np.asarray(actions, dtype=float))
    return _least_norm(spanner.member_vectors, actions)


def certify(actions, spanner: Spanner) -> SpannerDecomposition:
    """Decompose every action and record the norm factor rho and the worst residual"""
    coefficients, residuals = decompose_all(actions, spanner)
    worst = int(np.argmax(residuals))
    if residuals[worst] > RECONSTRUCTION_TOLERANCE:
        raise DecompositionError(float(residuals[worst]), worst)

    decomposition = SpannerDecomposition(
        coefficients=coefficients,
        norm_factor=float(np.linalg.norm(coefficients, axis=1).max()),
        reconstruction_error=float(residuals[worst]),
    )
    if decomposition.approximate:
        logger.warning(f"Approximate spanner: rho = {decomposition.norm_factor:.4f} > 1")
    return decomposition
