"""Experiment harness: RNG streams, aggregation, persistence, CLI."""

import csv
import json
import math
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from aomdp_lab.harness import (METRICS, STEP_COLUMNS, RunPlan, StepRecord,
                               aggregate, episode_rngs, plan_from_json,
                               run_episode, run_plan, write_steps_csv)
from aomdp_lab.heartsteps import ScenarioConfig, generate_users
from aomdp_lab.rlsvi import Agent, AgentConfig
from aomdp_lab.cli import main as cli_main

TINY = {"scenario": {"n_users": 2, "horizon": 6, "seed": 5,
                     "positive_level": "small"},
        "agents": ["active", "zero"], "reps": 2, "parallelism": 1}


def test_env_stream_is_shared_across_agents():
    e1, s1, a1 = episode_rngs(3, user=1, rep=2, kind="active")
    e2, s2, a2 = episode_rngs(3, user=1, rep=2, kind="never")
    assert e1.integers(1 << 30) == e2.integers(1 << 30)  # common random numbers
    assert s1.integers(1 << 30) != s2.integers(1 << 30)
    e3, _, _ = episode_rngs(3, user=1, rep=3, kind="active")
    assert e1.integers(1 << 30) != e3.integers(1 << 30)


def test_run_episode_is_deterministic_and_well_formed():
    cfg = ScenarioConfig(n_users=1, horizon=8, seed=11)
    user = generate_users(cfg, np.random.default_rng(11))[0]

    def go():
        env_rng, smc_rng, agent_rng = episode_rngs(11, 0, 0, "active")
        return run_episode(user, Agent(AgentConfig(kind="active", n_particles=20)),
                           8, env_rng, smc_rng, agent_rng)

    a, b = go(), go()
    assert len(a) == 8
    for ra, rb in zip(a, b):
        assert ra == rb
    assert a[0].I == 1  # forced first measurement
    assert all(math.isfinite(r.R_hat) for r in a)
    cums = np.diff([r.cum_reward for r in a])
    np.testing.assert_allclose(cums, [r.R_true for r in a][1:])


def test_aggregate_computes_paired_adjusted_reward():
    def rec(agent, rep, t, cum, i=0, mse=0.0, user=0):
        return StepRecord(agent=agent, user=user, rep=rep, t=t, I=i, A=0, C=0.0,
                          M=0.0, E=0.0, O=0.0, R_true=0.0, R_hat=0.0,
                          belief_mean_1=0.0, belief_std_1=0.0, belief_mean_2=0.0,
                          belief_std_2=0.0, ess=1.0, cum_reward=cum,
                          theta_mse_r=mse)

    records = [rec("active", 0, 1, 5.0, i=1), rec("active", 1, 1, 7.0, i=0),
               rec("zero", 0, 1, 1.0), rec("zero", 1, 1, 2.0)]
    rows = aggregate(records)
    adj = {(r["agent"], r["metric"]): r for r in rows}
    act = adj[("active", "adjusted_reward")]
    assert act["mean"] == pytest.approx(np.mean([5 - 1, 7 - 2]))
    assert act["sd"] == pytest.approx(np.std([4.0, 5.0], ddof=1))
    assert act["n_reps"] == 2
    half = 1.96 * act["sd"] / math.sqrt(2)
    assert act["ci_hi"] - act["mean"] == pytest.approx(half)
    assert adj[("zero", "adjusted_reward")]["mean"] == 0.0
    assert adj[("active", "measure_rate")]["mean"] == pytest.approx(0.5)


def test_aggregate_requires_zero_policy():
    rec = StepRecord(agent="active", user=0, rep=0, t=1, I=0, A=0, C=0.0, M=0.0,
                     E=0.0, O=0.0, R_true=0.0, R_hat=0.0, belief_mean_1=0.0,
                     belief_std_1=0.0, belief_mean_2=0.0, belief_std_2=0.0,
                     ess=1.0, cum_reward=0.0, theta_mse_r=0.0)
    with pytest.raises(ValueError):
        aggregate([rec])
    with pytest.raises(ValueError):
        aggregate([])


def test_plan_json_round_trip_and_validation():
    plan = plan_from_json(json.dumps(TINY))
    assert plan.scenario.n_users == 2
    assert plan.root_seed == 5
    plan2 = plan_from_json(json.dumps({**TINY, "seed": 99}))
    assert plan2.root_seed == 99
    with pytest.raises(ValueError):
        RunPlan(scenario=ScenarioConfig(), agents=())
    with pytest.raises(ValueError):
        RunPlan(scenario=ScenarioConfig(), agents=("martian",))
    with pytest.raises(ValueError):
        RunPlan(scenario=ScenarioConfig(), agents=("zero",), reps=0)


def _run(tmp_path, workers, subdir):
    out = tmp_path / subdir
    plan = plan_from_json(json.dumps({**TINY, "output_dir": str(out),
                                      "parallelism": workers}))
    assert run_plan(plan) == 0
    return out


def test_run_plan_writes_outputs_and_is_worker_invariant(tmp_path):
    out1 = _run(tmp_path, 1, "w1")
    out2 = _run(tmp_path, 2, "w2")
    for name in ("steps.csv", "summary.csv", "manifest.json", "users.json"):
        assert (out1 / name).exists()
    assert (out1 / "steps.csv").read_bytes() == (out2 / "steps.csv").read_bytes()
    assert (out1 / "summary.csv").read_bytes() == (out2 / "summary.csv").read_bytes()
    with open(out1 / "steps.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert tuple(rows[0].keys()) == STEP_COLUMNS
    assert len(rows) == 2 * 2 * 2 * 6  # agents x users x reps x horizon
    manifest = json.loads((out1 / "manifest.json").read_text())
    assert manifest["n_failures"] == 0 and manifest["seed"] == 5


def test_steps_csv_is_sorted_and_fixed_precision(tmp_path):
    rec = StepRecord(agent="b", user=0, rep=0, t=2, I=0, A=0, C=0.1, M=0.0,
                     E=0.0, O=0.0, R_true=1 / 3, R_hat=0.0, belief_mean_1=0.0,
                     belief_std_1=0.0, belief_mean_2=0.0, belief_std_2=0.0,
                     ess=1.0, cum_reward=0.0, theta_mse_r=0.0)
    rec2 = StepRecord(**{**rec.__dict__, "agent": "a", "t": 1})
    path = tmp_path / "steps.csv"
    write_steps_csv(path, [rec, rec2])
    lines = path.read_text().splitlines()
    assert lines[1].startswith("a,") and lines[2].startswith("b,")
    assert f"{1 / 3:.17g}" in lines[2]


# -- CLI -------------------------------------------------------------------------


def test_cli_simulate_and_calibrate(tmp_path):
    plan_path = tmp_path / "plan.json"
    out = tmp_path / "out"
    plan_path.write_text(json.dumps({**TINY, "output_dir": str(out)}))
    assert cli_main(["simulate", "--plan", str(plan_path)]) == 0
    assert (out / "steps.csv").exists()

    scen = tmp_path / "scenario.json"
    scen.write_text(json.dumps({"n_users": 3, "positive_level": "medium"}))
    assert cli_main(["calibrate", "--scenario", str(scen)]) == 0
    users_out = tmp_path / "users.json"
    assert cli_main(["gen-users", "--scenario", str(scen), "--out", str(users_out)]) == 0
    assert len(json.loads(users_out.read_text())) == 3


def test_cli_oracle_report(tmp_path):
    report = tmp_path / "report.json"
    assert cli_main(["oracle", "--out", str(report)]) == 0
    assert json.loads(report.read_text())["all_ok"]


def test_cli_usage_errors_exit_1(tmp_path):
    assert cli_main(["simulate"]) == 1  # missing --plan
    assert cli_main(["simulate", "--plan", str(tmp_path / "missing.json")]) == 1
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert cli_main(["simulate", "--plan", str(bad)]) == 1
    plan = tmp_path / "plan.json"
    plan.write_text(json.dumps(TINY))
    assert cli_main(["simulate", "--plan", str(plan), "--workers", "0"]) == 1


def test_cli_seed_env_override(tmp_path, monkeypatch):
    plan_path = tmp_path / "plan.json"
    for seed, subdir in ((None, "a"), (123, "b"), (123, "c")):
        out = tmp_path / subdir
        plan_path.write_text(json.dumps({**TINY, "output_dir": str(out)}))
        if seed is None:
            monkeypatch.delenv("AOMDP_LAB_SEED", raising=False)
        else:
            monkeypatch.setenv("AOMDP_LAB_SEED", str(seed))
        assert cli_main(["simulate", "--plan", str(plan_path)]) == 0
    a = (tmp_path / "a" / "steps.csv").read_bytes()
    b = (tmp_path / "b" / "steps.csv").read_bytes()
    c = (tmp_path / "c" / "steps.csv").read_bytes()
    assert a != b and b == c
    monkeypatch.setenv("AOMDP_LAB_SEED", "not-a-number")
    assert cli_main(["simulate", "--plan", str(plan_path)]) == 1


def test_cli_desk_preset_shrinks_the_plan(tmp_path):
    plan_path = tmp_path / "plan.json"
    out = tmp_path / "desk"
    plan_path.write_text(json.dumps({**TINY,
                                     "scenario": {"n_users": 3, "horizon": 8, "seed": 5},
                                     "output_dir": str(out)}))
    assert cli_main(["simulate", "--plan", str(plan_path), "--desk"]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["scenario"]["n_users"] == 8
    assert manifest["scenario"]["horizon"] == 60
    assert manifest["reps"] == 10
