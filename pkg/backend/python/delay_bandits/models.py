"""
Pydantic schemas: bandit instances, experiment configuration and summaries.
"""

import hashlib
import json
import re
from enum import Enum
from typing import Any, Dict, List, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, NonNegativeInt, field_validator, model_validator

from .settings import TOLERANCE


class PayoffKind(str, Enum):
    LOSS = "loss"
    REWARD = "reward"


class NoiseLaw(str, Enum):
    MIXTURE = "mixture"  # two-branch uniform mixture of the synthetic study
    BERNOULLI = "bernoulli"
    CLIPPED_GAUSSIAN = "clipped_gaussian"


class BMode(str, Enum):
    GUESS = "guess"
    IGNORED = "ignored"


class BanditInstance(BaseModel):
    """Ground truth of a fixed-action-set problem: parameter, actions, delay scale"""
    model_config = ConfigDict(populate_by_name=True)

    n: int = Field(..., ge=1)
    K: int = Field(..., ge=1)
    theta: List[float]
    actions: List[List[float]]
    max_delay: float = Field(..., alias="maxDelay", ge=0)
    payoff_kind: PayoffKind = Field(PayoffKind.LOSS, alias="payoffKind")
    noise_law: NoiseLaw = Field(NoiseLaw.MIXTURE, alias="noiseLaw")
    seed: Optional[int] = None
    # Per-action deviation from linearity (misspecified instances only)
    misspecification: Optional[List[float]] = None

    @model_validator(mode="after")
    def _check_geometry(self) -> "BanditInstance":
        theta = np.asarray(self.theta, dtype=float)
        actions = np.asarray(self.actions, dtype=float)
        if theta.shape != (self.n,):
            raise ValueError(f"theta must have {self.n} coordinates, got {theta.shape}")
        if actions.shape != (self.K, self.n):
            raise ValueError(f"actions must be a {self.K}x{self.n} array, got {actions.shape}")
        if np.any(theta < 0) or np.linalg.norm(theta) > 1 + TOLERANCE:
            raise ValueError("theta must lie in the non-negative part of the unit ball")
        if np.any(actions < 0) or np.any(np.linalg.norm(actions, axis=1) > 1 + TOLERANCE):
            raise ValueError("every action must lie in the non-negative part of the unit ball")
        means = actions @ theta
        if self.misspecification is not None:
            if len(self.misspecification) != self.K:
                raise ValueError("misspecification needs one entry per action")
            means = means + np.asarray(self.misspecification, dtype=float)
        if np.any(means < -TOLERANCE) or np.any(means > 1 + TOLERANCE):
            raise ValueError("expected payoffs must lie in [0, 1]")
        return self

    def theta_vector(self) -> np.ndarray:
        return np.asarray(self.theta, dtype=float)

    def action_matrix(self) -> np.ndarray:
        return np.asarray(self.actions, dtype=float).reshape(self.K, self.n)

    def to_json(self) -> str:
        return self.model_dump_json(by_alias=True, exclude_none=True)


class GapProfile(BaseModel):
    optimal_index: int
    optimal_mean: float
    gaps: List[float]
    min_gap: Optional[float] = None  # absent when every action is optimal
    max_gap: float
    optimal_delay: float


class AlgorithmName(str, Enum):
    ELIM_LOSS = "elim-loss"
    ELIM_REWARD = "elim-reward"
    ELIM_MISSPECIFIED = "elim-misspecified"
    CONTEXTUAL = "contextual-reduction"
    LINUCB = "linucb"


_COMPACT_SPEC = re.compile(r"^\s*([a-z\-]+)\s*(?:\(\s*([0-9eE.+\-]+)\s*\))?\s*$")


class AlgorithmSpec(BaseModel):
    """
    One learner of a sweep

    Accepts objects ({"name": "linucb", "reg": 0.5}) as well as the compact
    strings "elim-loss", "elim-misspecified(0.05)" or "linucb(1.0)".
    """
    name: AlgorithmName
    epsilon: float = Field(0.0, ge=0)
    reg: float = Field(1.0, gt=0)

    @model_validator(mode="before")
    @classmethod
    def _parse_compact(cls, value: Any) -> Any:
        if not isinstance(value, str):
            return value
        match = _COMPACT_SPEC.match(value)
        if match is None:
            raise ValueError(f"Unrecognised algorithm '{value}'")
        name, argument = match.groups()
        parsed: Dict[str, Any] = {"name": name}
        if argument is not None:
            if name == AlgorithmName.ELIM_MISSPECIFIED.value:
                parsed["epsilon"] = float(argument)
            elif name == AlgorithmName.LINUCB.value:
                parsed["reg"] = float(argument)
            else:
                raise ValueError(f"Algorithm '{name}' takes no argument")
        return parsed

    @property
    def label(self) -> str:
        if self.name is AlgorithmName.ELIM_MISSPECIFIED:
            return f"{self.name.value}({self.epsilon:g})"
        if self.name is AlgorithmName.LINUCB and self.reg != 1.0:
            return f"{self.name.value}({self.reg:g})"
        return self.name.value


class CoverConfig(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    resolution: float = Field(0.1, gt=0, le=1)
    cap: int = Field(512, ge=1)
    seed: int = 0
    # Confidence level of the reduction; None means 1/T^2
    delta: Optional[float] = Field(None, gt=0, lt=1)


class ContextConfig(BaseModel):
    """Context distribution of the contextual reduction"""
    model_config = ConfigDict(populate_by_name=True)

    kind: Literal["fixed", "mixture", "subsample"] = "mixture"
    num_sets: int = Field(2, alias="numSets", ge=1)
    pool_size: Optional[int] = Field(None, alias="poolSize", ge=1)


class ExperimentConfig(BaseModel):
    """Sweep configuration; field aliases are the JSON names"""
    model_config = ConfigDict(populate_by_name=True)

    n: int = Field(..., ge=1)
    K: int = Field(..., ge=1)
    T: int = Field(..., ge=1)
    D: float = Field(..., ge=0)
    payoff_kind: PayoffKind = Field(PayoffKind.LOSS, alias="payoffKind")
    algorithms: List[AlgorithmSpec] = Field(..., min_length=1)
    seeds: List[NonNegativeInt] = Field(..., min_length=1)
    b_mode: BMode = Field(BMode.IGNORED, alias="BMode")
    spanner_budget: Optional[int] = Field(None, alias="spannerBudget", ge=1)
    cover_cfg: CoverConfig = Field(default_factory=CoverConfig, alias="coverCfg")
    output_dir: Optional[str] = Field(None, alias="outputDir")
    noise_law: NoiseLaw = Field(NoiseLaw.MIXTURE, alias="noiseLaw")
    master_seed: NonNegativeInt = Field(0, alias="masterSeed")
    # Explicit width coefficient; None means sqrt(2 ln(K T^3))
    beta: Optional[float] = Field(None, gt=0)
    # Index of the first epoch of the fixed-action elimination learners
    first_epoch: int = Field(1, alias="firstEpoch", ge=1)
    context: ContextConfig = Field(default_factory=ContextConfig)

    @field_validator("algorithms")
    @classmethod
    def _unique_labels(cls, algorithms: List[AlgorithmSpec]) -> List[AlgorithmSpec]:
        labels = [spec.label for spec in algorithms]
        if len(set(labels)) != len(labels):
            raise ValueError(f"Duplicate algorithms in {labels}")
        return algorithms

    @field_validator("seeds")
    @classmethod
    def _unique_seeds(cls, seeds: List[int]) -> List[int]:
        if len(set(seeds)) != len(seeds):
            raise ValueError(f"Duplicate seeds in {seeds}")
        return seeds

    @model_validator(mode="after")
    def _check_payoff_kind(self) -> "ExperimentConfig":
        for spec in self.algorithms:
            if spec.name is AlgorithmName.ELIM_LOSS and self.payoff_kind is not PayoffKind.LOSS:
                raise ValueError("elim-loss needs payoffKind 'loss'")
            if spec.name is AlgorithmName.ELIM_REWARD and self.payoff_kind is not PayoffKind.REWARD:
                raise ValueError("elim-reward needs payoffKind 'reward'")
            if spec.name is AlgorithmName.CONTEXTUAL and self.payoff_kind is not PayoffKind.LOSS:
                raise ValueError("contextual-reduction is defined for losses only")
        return self

    def config_hash(self) -> str:
        canonical = json.dumps(self.model_dump(mode="json", by_alias=True), sort_keys=True)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class RunSummary(BaseModel):
    """Final figures of one (algorithm, seed) run, as stored in summary.json"""
    algorithm: str
    seed: int
    final_regret: float
    rounds: int
    epochs: int = 0
    eliminated: int = 0
    rho_max: Optional[float] = None
    dropped_events: int = 0
