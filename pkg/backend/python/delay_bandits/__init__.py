"""
Delay Bandits

Linear bandits whose feedback delay is proportional to the payoff itself:
instance generation, volumetric spanners, delayed-feedback environments,
phased elimination (loss, reward and misspecified variants), the contextual
reduction, a delayed LinUCB baseline and the sweep harness.
"""

__version__ = "0.1.0"

from .contextual import build_cover, misspecification_level, run_reduction, update_g
from .core import compute_gaps, generate_instance, make_instance, sample_payoff
from .delayenv import ContextualDelayedEnv, DelayedFeedbackEnv, pseudo_regret
from .elim import PhasedElimination, default_beta, run_elimination
from .linucb import DelayedLinUCB, run_linucb
from .harness import audit, load_sweep, run_sweep, spanner_check, summarize
from .spanner import certify, compute_spanner, decompose

__all__ = [
    'generate_instance',
    'make_instance',
    'compute_gaps',
    'sample_payoff',
    'compute_spanner',
    'decompose',
    'certify',
    'DelayedFeedbackEnv',
    'ContextualDelayedEnv',
    'pseudo_regret',
    'PhasedElimination',
    'default_beta',
    'run_elimination',
    'build_cover',
    'update_g',
    'misspecification_level',
    'run_reduction',
    'DelayedLinUCB',
    'run_linucb',
    'run_sweep',
    'summarize',
    'load_sweep',
    'audit',
    'spanner_check',
]
