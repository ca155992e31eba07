"""Core protocol types: validation, discounting, and event ordering."""

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from aomdp_lab.core import (AomdpSpec, BeliefSummary, History, PeriodObservation,
                            ProtocolError, advance_history, reward_of_belief)


def test_spec_half_step_gamma():
    spec = AomdpSpec(observed_state_dim=2, latent_state_dim=1, emission_dim=1, gamma=0.9)
    assert spec.half_step_gamma == pytest.approx(math.sqrt(0.9))
    assert spec.half_step_gamma ** 2 == pytest.approx(spec.gamma)


@pytest.mark.parametrize("bad", [-0.1, 1.0, 1.5])
def test_spec_rejects_bad_gamma(bad):
    with pytest.raises(ValueError):
        AomdpSpec(observed_state_dim=1, latent_state_dim=1, emission_dim=1, gamma=bad)


def test_spec_rejects_empty_actions_and_dims():
    with pytest.raises(ValueError):
        AomdpSpec(observed_state_dim=0, latent_state_dim=1, emission_dim=1)
    with pytest.raises(ValueError):
        AomdpSpec(observed_state_dim=1, latent_state_dim=1, emission_dim=1,
                  control_actions=())


def test_observation_rejects_infinite_components():
    with pytest.raises(ValueError):
        PeriodObservation(z=(math.inf, 0.0), o=(0.0,))
    PeriodObservation(z=(math.nan, 0.0), o=(0.0,))  # missing data is allowed


def test_belief_summary_rejects_negative_std():
    with pytest.raises(ValueError):
        BeliefSummary(z=(0.0,), mean_u=0.0, std_u=-1e-9)


def test_history_enforces_order():
    h = History()
    assert h.expects() == "observe"
    h = advance_history(h, "observe")
    assert (h.t, h.k) == (1, 1)
    with pytest.raises(ProtocolError):
        advance_history(h, "control")
    h = advance_history(h, "measure")
    with pytest.raises(ProtocolError):
        advance_history(h, "observe")
    h = advance_history(h, "control")
    assert h.expects() == "observe"
    with pytest.raises(ValueError):
        advance_history(h, "nonsense")


@given(st.integers(min_value=1, max_value=20))
def test_history_period_count_matches_observations(n_periods):
    h = History()
    for _ in range(n_periods):
        h = advance_history(h, "observe")
        h = advance_history(h, "measure")
        h = advance_history(h, "control")
    assert h.t == n_periods
    assert len(h.entries) == 3 * n_periods


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=30))
def test_reward_of_belief_matches_manual_average(values):
    values = np.asarray(values)
    weights = np.full(values.size, 1.0 / values.size)
    r = lambda z, u: 2.0 * u + z[0]
    got = reward_of_belief(r, (1.5,), values, weights)
    assert got == pytest.approx(2.0 * values.mean() + 1.5)


def test_reward_of_belief_validates_inputs():
    with pytest.raises(ValueError):
        reward_of_belief(lambda z, u: u, (0.0,), np.array([]), np.array([]))
    with pytest.raises(ValueError):
        reward_of_belief(lambda z, u: u, (0.0,), np.array([1.0]), np.array([0.5]))
