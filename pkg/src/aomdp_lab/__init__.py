"""Belief-state reinforcement learning with a costly measurement action.

Subpackages: core protocol types, the particle belief filter, the
linear-Gaussian testbed, the posterior-sampling agent, exact small-scale
verification oracles, and the batch experiment harness.
"""

__version__ = "0.1.0"

from .core import (AomdpSpec, BeliefSummary, History, PeriodObservation,
                   ProtocolError, advance_history, reward_of_belief)

__all__ = [
    "__version__",
    "AomdpSpec",
    "BeliefSummary",
    "History",
    "PeriodObservation",
    "ProtocolError",
    "advance_history",
    "reward_of_belief",
]
