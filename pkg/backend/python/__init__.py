"""
Delay Bandits Lab

This package contains the Python components of the delay-as-payoff linear
bandit laboratory: the phased-elimination learners, the contextual reduction,
the delayed-feedback LinUCB baseline and the experiment harness.
"""

__version__ = "0.1.0"
