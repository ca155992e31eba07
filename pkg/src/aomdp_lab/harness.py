"""Batch experiment runner.

Fans (user, rep, agent) episodes over a worker pool, with one RNG stream per
(root seed, user, rep, stream) key. The environment stream is keyed without
the agent so every agent faces the same noise sequence (common random
numbers); the filter and agent streams are agent-specific. Results land in
steps.csv (one row per period), summary.csv (per-agent/period mean and 95%
normal-approximation CI of the adjusted reward, measurement rate, and
reward-coefficient MSE) and manifest.json.
"""

from __future__ import annotations

import json
import math
import os
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from . import __version__
from .core import ProtocolError
from .heartsteps import (HeartStepsEnv, ScenarioConfig, UserParams,
                         generate_users, scenario_from_json, users_to_json)
from .rlsvi import AGENT_KINDS, Agent, AgentConfig

__all__ = [
    "RunPlan",
    "StepRecord",
    "STEP_COLUMNS",
    "episode_rngs",
    "run_episode",
    "aggregate",
    "run_plan",
    "plan_from_json",
    "write_steps_csv",
    "write_summary_csv",
]

AGENT_IDS = {kind: k + 1 for k, kind in enumerate(AGENT_KINDS)}
_ENV_STREAM, _SMC_STREAM, _AGENT_STREAM = 0, 1, 2

STEP_COLUMNS = ("agent", "user", "rep", "t", "I", "A", "C", "M", "E", "O",
                "R_true", "R_hat", "belief_mean_1", "belief_std_1",
                "belief_mean_2", "belief_std_2", "ess", "cum_reward",
                "theta_mse_r")

SUMMARY_COLUMNS = ("agent", "t", "metric", "mean", "sd", "n_reps", "ci_lo", "ci_hi")

METRICS = ("adjusted_reward", "measure_rate", "theta_mse")


@dataclass(frozen=True)
class RunPlan:
    scenario: ScenarioConfig
    agents: Tuple[str, ...]
    reps: int = 50
    output_dir: str = "out"
    parallelism: int = 1
    seed: Optional[int] = None

    def __post_init__(self) -> None:
        if not self.agents:
            raise ValueError("agent list must not be empty")
        for kind in self.agents:
            if kind not in AGENT_KINDS:
                raise ValueError(f"unknown agent kind {kind!r}")
        if self.reps < 1:
            raise ValueError("reps must be >= 1")
        if self.parallelism < 1:
            raise ValueError("parallelism must be >= 1")

    @property
    def root_seed(self) -> int:
        return self.scenario.seed if self.seed is None else self.seed


@dataclass
class StepRecord:
    agent: str
    user: int
    rep: int
    t: int
    I: int
    A: int
    C: float
    M: float
    E: float
    O: float
    R_true: float
    R_hat: float
    belief_mean_1: float
    belief_std_1: float
    belief_mean_2: float
    belief_std_2: float
    ess: float
    cum_reward: float
    theta_mse_r: float


def plan_from_json(text: str) -> RunPlan:
    d = json.loads(text)
    scenario = scenario_from_json(json.dumps(d["scenario"])) if "scenario" in d else ScenarioConfig()
    return RunPlan(
        scenario=scenario,
        agents=tuple(d.get("agents", ("active", "always", "never", "zero"))),
        reps=d.get("reps", 50),
        output_dir=d.get("output_dir", "out"),
        parallelism=d.get("parallelism", 1),
        seed=d.get("seed"),
    )


def episode_rngs(root_seed: int, user: int, rep: int,
                 kind: str) -> Tuple[np.random.Generator, np.random.Generator, np.random.Generator]:
    """Env/filter/agent streams; the env stream ignores the agent kind."""
    def stream(agent_key: int, purpose: int) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence(
            entropy=root_seed, spawn_key=(user, rep, agent_key, purpose)))
    return (stream(0, _ENV_STREAM),
            stream(AGENT_IDS[kind], _SMC_STREAM),
            stream(AGENT_IDS[kind], _AGENT_STREAM))


def _agent_config(plan_scenario: ScenarioConfig, kind: str) -> AgentConfig:
    overrides = dict(plan_scenario.agent or {})
    overrides.pop("kind", None)
    if plan_scenario.model_variant == "general":
        # the reward surrogate leans on the mediated working model
        overrides.setdefault("reward_design", False)
    return AgentConfig(kind=kind, **overrides)


def run_episode(user: UserParams, agent: Agent, horizon: int,
                env_rng: np.random.Generator, smc_rng: np.random.Generator,
                agent_rng: np.random.Generator, *, agent_label: str = "",
                user_idx: int = 0, rep: int = 0,
                belief_trace: Optional[list] = None) -> List[StepRecord]:
    """One full episode under the interaction protocol; deterministic given
    the three streams."""
    env = HeartStepsEnv(user, gamma=agent.cfg.gamma)
    obs = env.reset(env_rng)
    agent.reset(float(obs.z[1]), smc_rng, agent_rng)
    theta_r_true = np.asarray(user.theta_R, dtype=float)
    records: List[StepRecord] = []
    cum = 0.0
    for t in range(1, horizon + 1):
        agent.observe((obs.z[0], obs.z[1]), obs.o[0])
        i = agent.choose_measure()
        revealed = env.step_measure(i)
        agent.apply_measure(i, revealed)
        if belief_trace is not None:
            belief_trace.append((t, 1, agent._b1m[-1], agent._b1s[-1],
                                 agent.belief.last_ess, int(agent.belief.last_resampled)))
            belief_trace.append((t, 2, agent._b2m[-1], agent._b2s[-1],
                                 agent.belief.last_ess, 0))
        c = env.observe_context()
        a = agent.choose_control(c)
        agent.end_period()
        obs, r = env.step_control(a)
        cum += r
        means = agent.belief.suffstats.posterior_mean("R")
        diff = means - theta_r_true[None, :]
        mse = float(agent.belief.weights @ np.mean(diff * diff, axis=1))
        records.append(StepRecord(
            agent=agent_label or agent.cfg.kind, user=user_idx, rep=rep, t=t,
            I=i, A=a, C=c, M=obs.z[0], E=obs.z[1], O=obs.o[0], R_true=r,
            R_hat=math.nan, belief_mean_1=agent._b1m[-1], belief_std_1=agent._b1s[-1],
            belief_mean_2=agent._b2m[-1], belief_std_2=agent._b2s[-1],
            ess=agent.belief.last_ess, cum_reward=cum, theta_mse_r=mse))
    agent.finalize((obs.z[0], obs.z[1]), obs.o[0])
    for rec, rhat in zip(records, agent.reward_estimates()):
        rec.R_hat = rhat
    return records


def _episode_task(args) -> Tuple[Tuple[str, int, int], List[StepRecord], Optional[str]]:
    (root_seed, user_idx, user, rep, kind, horizon, scenario) = args
    key = (kind, user_idx, rep)
    try:
        env_rng, smc_rng, agent_rng = episode_rngs(root_seed, user_idx, rep, kind)
        agent = Agent(_agent_config(scenario, kind))
        records = run_episode(user, agent, horizon, env_rng, smc_rng, agent_rng,
                              agent_label=kind, user_idx=user_idx, rep=rep)
        return key, records, None
    except Exception:
        return key, [], traceback.format_exc()


# -- aggregation --------------------------------------------------------------


def aggregate(records: Sequence[StepRecord]) -> List[dict]:
    """Per-(agent, t) summary rows over reps of user-averaged metrics.

    adjusted_reward subtracts the zero policy's user-averaged cumulative
    reward rep by rep (common random numbers make this a paired contrast).
    """
    if not records:
        raise ValueError("no records to aggregate")
    agents = sorted({r.agent for r in records})
    if "zero" not in agents:
        raise ValueError("adjusted reward needs zero-policy runs in the record set")
    # (agent, rep, t) -> user-averaged metrics
    cells: Dict[Tuple[str, int, int], List[Tuple[float, float, float]]] = {}
    for r in records:
        cells.setdefault((r.agent, r.rep, r.t), []).append(
            (r.cum_reward, float(r.I), r.theta_mse_r))
    means = {key: tuple(np.mean(np.asarray(v), axis=0)) for key, v in cells.items()}
    reps = sorted({r.rep for r in records})
    ts = sorted({r.t for r in records})
    out: List[dict] = []
    for agent in agents:
        for t in ts:
            series = {m: [] for m in METRICS}
            for rep in reps:
                cum, rate, mse = means[(agent, rep, t)]
                zero_cum = means[("zero", rep, t)][0]
                series["adjusted_reward"].append(cum - zero_cum)
                series["measure_rate"].append(rate)
                series["theta_mse"].append(mse)
            n = len(reps)
            for metric in METRICS:
                vals = np.asarray(series[metric])
                mean = float(vals.mean())
                sd = float(vals.std(ddof=1)) if n > 1 else 0.0
                half = 1.96 * sd / math.sqrt(n)
                out.append({"agent": agent, "t": t, "metric": metric,
                            "mean": mean, "sd": sd, "n_reps": n,
                            "ci_lo": mean - half, "ci_hi": mean + half})
    return out


# -- persistence --------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


def write_steps_csv(path: Path, records: Iterable[StepRecord]) -> None:
    rows = sorted(records, key=lambda r: (r.agent, r.user, r.rep, r.t))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(STEP_COLUMNS) + "\n")
        for r in rows:
            fh.write(",".join(_fmt(getattr(r, c)) for c in STEP_COLUMNS) + "\n")


def write_summary_csv(path: Path, summary: Sequence[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(SUMMARY_COLUMNS) + "\n")
        for row in summary:
            fh.write(",".join(_fmt(row[c]) for c in SUMMARY_COLUMNS) + "\n")


def run_plan(plan: RunPlan) -> int:
    """Execute a plan; returns 0 on success, 2 on partial failure."""
    out = Path(plan.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    scenario = plan.scenario
    users = generate_users(scenario, np.random.default_rng(
        np.random.SeedSequence(entropy=plan.root_seed, spawn_key=(0xA11CE,))))
    tasks = [(plan.root_seed, ui, user, rep, kind, scenario.horizon, scenario)
             for kind in plan.agents
             for ui, user in enumerate(users)
             for rep in range(plan.reps)]
    results = []
    if plan.parallelism > 1:
        with ProcessPoolExecutor(max_workers=plan.parallelism) as pool:
            results = list(pool.map(_episode_task, tasks, chunksize=4))
    else:
        results = [_episode_task(t) for t in tasks]
    records: List[StepRecord] = []
    failures: List[Tuple[Tuple[str, int, int], str]] = []
    for key, recs, err in results:
        if err is not None:
            failures.append((key, err))
        else:
            records.extend(recs)
    if failures:
        with open(out / "errors.log", "w", encoding="utf-8") as fh:
            for key, err in failures:
                fh.write(f"episode agent={key[0]} user={key[1]} rep={key[2]}\n{err}\n")
    if records:
        write_steps_csv(out / "steps.csv", records)
        if "zero" in plan.agents:
            write_summary_csv(out / "summary.csv", aggregate(records))
    manifest = {
        "version": __version__,
        "seed": plan.root_seed,
        "agents": list(plan.agents),
        "reps": plan.reps,
        "parallelism": plan.parallelism,
        "scenario": {
            "positive_level": scenario.positive_level,
            "negative_level": scenario.negative_level,
            "emission_informative": scenario.emission_informative,
            "model_variant": scenario.model_variant,
            "n_users": scenario.n_users,
            "horizon": scenario.horizon,
            "seed": scenario.seed,
            "agent": scenario.agent,
        },
        "n_failures": len(failures),
    }
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    with open(out / "users.json", "w", encoding="utf-8") as fh:
        fh.write(users_to_json(users))
    return 2 if failures else 0
