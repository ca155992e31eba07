"""Testbed calibration, dynamics, serialization, and protocol checks."""

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from aomdp_lab.core import ProtocolError
from aomdp_lab.heartsteps import (BASE_E_MEAN, NEGATIVE_TARGETS, POSITIVE_TARGETS,
                                  PRIOR_O_MEAN, R_E_CLIP, RHO_MAX, EnvState,
                                  HeartStepsEnv, ScenarioConfig, UserParams,
                                  base_user, calibrate_scenario, generate_users,
                                  negative_effect_size, positive_effect_size,
                                  scenario_from_json, step_dynamics,
                                  users_from_json, users_to_json)


def _users(pos="minimal", neg="zero", n=500, seed=0, **kw):
    cfg = ScenarioConfig(positive_level=pos, negative_level=neg, n_users=n, **kw)
    rng = np.random.default_rng(seed)
    return cfg, generate_users(cfg, rng)


# -- effect-size calibration --------------------------------------------------


@pytest.mark.parametrize("level", ["minimal", "small", "medium"])
def test_population_positive_effect_hits_target(level):
    _, users = _users(pos=level, n=4000)
    avg = np.mean([positive_effect_size(u) for u in users])
    assert avg == pytest.approx(POSITIVE_TARGETS[level], abs=0.004)


@pytest.mark.parametrize("level", ["zero", "minimal", "small"])
def test_per_user_negative_effect_is_exact(level):
    _, users = _users(neg=level, n=50)
    for u in users:
        assert abs(negative_effect_size(u)) == pytest.approx(
            NEGATIVE_TARGETS[level], abs=1e-12)
        assert negative_effect_size(u) <= 0.0  # measuring never helps the reward


def test_reward_e_coefficient_clipped():
    _, users = _users(n=300)
    assert all(u.theta_R[2] >= R_E_CLIP for u in users)


def test_closed_loop_reward_lag_is_stationary():
    for level in ("minimal", "small", "medium"):
        _, users = _users(pos=level, n=300)
        for u in users:
            rho = u.theta_R[3] + u.theta_R[1] * (u.theta_M[2] + max(u.theta_M[6], 0.0))
            assert rho <= RHO_MAX + 1e-12


def test_scenario_levels_scale_interaction_coefficient():
    base = base_user()
    small = calibrate_scenario(base, ScenarioConfig(positive_level="small"))
    medium = calibrate_scenario(base, ScenarioConfig(positive_level="medium"))
    assert small.theta_M[6] == 0.5
    assert medium.theta_M[6] == 0.8


def test_passive_policy_reward_is_centered():
    cfg, users = _users(n=4)
    for u in users:
        rng = np.random.default_rng(123)
        state = EnvState(e_prev=0.0, r_prev=0.0, t=0)
        total, n = 0.0, 30000
        for _ in range(n):
            _, _, e, r, _ = step_dynamics(u, state, i=0, a=0, rng=rng)
            state = EnvState(e_prev=e, r_prev=r, t=state.t + 1)
            total += r
        assert total / n == pytest.approx(0.0, abs=0.05)


def test_uninformative_emission_drops_latent_coupling():
    cfg, users = _users(n=5, emission_informative=False)
    for u in users:
        assert u.theta_O[1] == 0.0
    cfg2, users2 = _users(n=5)
    assert all(abs(u.theta_O[1] - PRIOR_O_MEAN[1]) < 0.3 for u in users2)


def test_general_variant_matches_mediated_expectation():
    """The synthesized direct blocks equal the mediator-marginalized means."""
    cfg = ScenarioConfig(positive_level="medium", negative_level="small",
                         model_variant="general", n_users=3)
    users = generate_users(cfg, np.random.default_rng(5))
    for u in users:
        assert u.general_model is not None
        row = np.array([1.0, 0.7, -0.3, 0.2, 1.0, 0.7, -0.3, 0.2])
        e0, r0, c, a = 0.7, -0.3, 0.2, 1
        m_mean = float(u.theta_M @ row)
        e_mean = (u.theta_E[0] + u.theta_E[1] * e0 + u.theta_E[2] * a
                  + u.theta_E[3] * a * e0)
        r_mean = (u.theta_R[0] + u.theta_R[1] * m_mean + u.theta_R[2] * e_mean
                  + u.theta_R[3] * r0)
        assert float(u.general_model["E"] @ row) == pytest.approx(e_mean, abs=1e-10)
        assert float(u.general_model["R"] @ row) == pytest.approx(r_mean, abs=1e-10)
        o_mean = u.theta_O[0] + u.theta_O[1] * r_mean
        assert float(u.general_model["O"] @ row) == pytest.approx(o_mean, abs=1e-10)


# -- serialization -------------------------------------------------------------


def test_users_json_round_trip_is_exact():
    cfg, users = _users(pos="medium", neg="small", n=7, seed=3)
    back = users_from_json(users_to_json(users))
    assert len(back) == len(users)
    for u, v in zip(users, back):
        assert u.theta_C == v.theta_C
        np.testing.assert_array_equal(u.theta_M, v.theta_M)
        np.testing.assert_array_equal(u.theta_E, v.theta_E)
        np.testing.assert_array_equal(u.theta_R, v.theta_R)
        np.testing.assert_array_equal(u.theta_O, v.theta_O)
        assert u.theta_E_I == v.theta_E_I and u.theta_E_IE == v.theta_E_IE


def test_scenario_json_round_trip_and_validation():
    cfg = scenario_from_json(json.dumps({"positive_level": "small", "horizon": 50}))
    assert cfg.positive_level == "small" and cfg.horizon == 50
    with pytest.raises(ValueError):
        ScenarioConfig(positive_level="huge")
    with pytest.raises(ValueError):
        ScenarioConfig(horizon=1)
    with pytest.raises(ValueError):
        ScenarioConfig(model_variant="nonlinear")


def test_user_generation_is_seed_deterministic():
    _, a = _users(n=6, seed=42)
    _, b = _users(n=6, seed=42)
    for u, v in zip(a, b):
        np.testing.assert_array_equal(u.theta_M, v.theta_M)
        assert u.theta_E_I == v.theta_E_I


# -- environment protocol -------------------------------------------------------


def _fresh_env(seed=0, **kw):
    cfg, users = _users(n=1, seed=seed, **kw)
    env = HeartStepsEnv(users[0])
    obs = env.reset(np.random.default_rng(seed))
    return env, obs


def test_env_protocol_order_enforced():
    env, obs = _fresh_env()
    assert len(obs.z) == 2 and len(obs.o) == 1
    with pytest.raises(ProtocolError):
        env.observe_context()
    with pytest.raises(ProtocolError):
        env.step_control(0)
    env.step_measure(0)
    with pytest.raises(ProtocolError):
        env.step_measure(0)
    env.observe_context()
    obs2, r = env.step_control(1)
    assert math.isfinite(r)
    with pytest.raises(ValueError):
        env.step_measure(2)


def test_measurement_reveals_exactly_the_latent_reward():
    env, _ = _fresh_env(seed=9)
    env.step_measure(1)
    env.observe_context()
    _, r1 = env.step_control(0)
    revealed = env.step_measure(1)
    assert revealed == r1
    env.observe_context()
    env.step_control(0)
    assert env.step_measure(0) is None


def test_env_noise_stream_is_action_independent():
    """Common random numbers: the env consumes the same draws per period
    regardless of the actions taken, so contexts and noise stay aligned."""
    cfg, users = _users(n=1, seed=13)
    seqs = []
    for (i_pol, a_pol) in ((0, 0), (1, 1)):
        env = HeartStepsEnv(users[0])
        env.reset(np.random.default_rng(77))
        cs = []
        for _ in range(20):
            env.step_measure(i_pol)
            cs.append(env.observe_context())
            env.step_control(a_pol)
        seqs.append(cs)
    np.testing.assert_array_equal(seqs[0], seqs[1])


@settings(max_examples=50, deadline=None)
@given(st.integers(min_value=0, max_value=10 ** 6))
def test_step_dynamics_produces_finite_draws(seed):
    rng = np.random.default_rng(seed)
    cfg, users = _users(pos="medium", neg="small", n=1, seed=seed % 17)
    state = EnvState(e_prev=float(rng.normal()), r_prev=float(rng.normal()), t=0)
    c, m, e, r, o = step_dynamics(users[0], state, i=int(rng.integers(2)),
                                  a=int(rng.integers(2)), rng=rng)
    assert all(math.isfinite(v) for v in (c, m, e, r, o))
