"""Foundational types for actively-observable MDP environments.

A period is split into two half-steps: a binary measurement action that can
reveal the latent state exactly, followed by an ordinary control action.
These types enforce the information ordering (observe -> measure -> context
-> control) mechanically so the control decision can never see the latent
state unless it was measured.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Protocol, Sequence, Tuple

import numpy as np

__all__ = [
    "AomdpSpec",
    "PeriodObservation",
    "History",
    "BeliefSummary",
    "Environment",
    "ProtocolError",
    "advance_history",
    "reward_of_belief",
]


class ProtocolError(RuntimeError):
    """An environment/agent interaction event arrived out of order."""


@dataclass(frozen=True)
class AomdpSpec:
    """Static description of an actively-observable MDP instance."""

    observed_state_dim: int
    latent_state_dim: int
    emission_dim: int
    control_actions: Tuple[int, ...] = (0, 1)
    measure_actions: Tuple[int, ...] = (0, 1)
    gamma: float = 0.9

    def __post_init__(self) -> None:
        if not (0.0 <= self.gamma < 1.0):
            raise ValueError(f"gamma must be in [0,1), got {self.gamma}")
        if not self.control_actions or not self.measure_actions:
            raise ValueError("action sets must be non-empty")
        if min(self.observed_state_dim, self.latent_state_dim, self.emission_dim) < 1:
            raise ValueError("state/emission dims must be >= 1")

    @property
    def half_step_gamma(self) -> float:
        """Discount applied per half-step (two half-steps per period)."""
        return math.sqrt(self.gamma)


@dataclass(frozen=True)
class PeriodObservation:
    """What the agent sees at the start of a period, before measuring.

    z is the observed state vector, o the emission of the latent state.
    revealed_u is populated only after a measured half-step.
    """

    z: Tuple[float, ...]
    o: Tuple[float, ...]
    revealed_u: Optional[Tuple[float, ...]] = None

    def __post_init__(self) -> None:
        for v in (*self.z, *self.o):
            if v is not None and not math.isnan(v) and not math.isfinite(v):
                raise ValueError("non-finite observation component")


@dataclass(frozen=True)
class BeliefSummary:
    """Agent-facing belief: observed state plus weighted particle moments."""

    z: Tuple[float, ...]
    mean_u: float
    std_u: float
    i: int = 0

    def __post_init__(self) -> None:
        if self.std_u < 0:
            raise ValueError("std_u must be nonnegative")


# One history entry per event; half-step toggles 1 -> 2 on measure and
# 2 -> 1 on the combined control + next observation.
_EVENTS = ("observe", "measure", "control")


@dataclass(frozen=True)
class History:
    """Ordered event log with a half-step state machine."""

    entries: Tuple[tuple, ...] = ()
    t: int = 0
    k: int = 0  # 0 = before first observation

    def expects(self) -> str:
        if self.k == 0:
            return "observe"
        return "measure" if self.k == 1 else "control"


def advance_history(h: History, event: str, payload: tuple = ()) -> History:
    """Append an event, enforcing observe -> measure -> control ordering."""
    if event not in _EVENTS:
        raise ValueError(f"unknown event {event!r}")
    if event != h.expects():
        raise ProtocolError(f"expected {h.expects()!r} at (t={h.t}, k={h.k}), got {event!r}")
    entries = h.entries + ((event, *payload),)
    if event == "observe":
        return History(entries, t=h.t + 1, k=1)
    if event == "measure":
        return History(entries, t=h.t, k=2)
    # control closes the period; the next legal event is the next observation
    return History(entries, t=h.t, k=0)


def reward_of_belief(
    r: Callable[[Sequence[float], float], float],
    z_next: Sequence[float],
    values: np.ndarray,
    weights: np.ndarray,
) -> float:
    """Expected reward under a weighted particle belief: sum_j w_j r(z, u_j)."""
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if values.size == 0:
        raise ValueError("empty particle set")
    if abs(float(weights.sum()) - 1.0) > 1e-9:
        raise ValueError("weights must be normalized")
    rewards = np.array([r(z_next, float(u)) for u in values])
    return float(np.dot(weights, rewards))


class Environment(Protocol):
    """Per-period interaction protocol of an actively-observable MDP.

    step_measure must be called exactly once before step_control in each
    period. The true latent reward returned by step_control is an evaluation
    channel only; agents never receive it unless they measured.
    """

    spec: AomdpSpec

    def reset(self, rng: np.random.Generator) -> PeriodObservation: ...

    def step_measure(self, i: int) -> Optional[float]: ...

    def observe_context(self) -> float: ...

    def step_control(self, a: int) -> Tuple[PeriodObservation, float]: ...
