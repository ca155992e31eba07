"""Randomized least-squares value iteration over the particle belief.

The active agent keeps two linear Q-functions: a 7-feature measurement head
and a 9-feature control head. Control targets bootstrap two half-steps ahead
(skipping the measurement half-step) with a double-Q discipline: the argmax
action is chosen under a target weight vector copied from the sampled
weights every ``target_copy_every`` periods, while the evaluation uses the
previous period's sample. Posteriors follow the Bayesian ridge closed form
and exploration comes from sampling the weights each period.

Baselines: always/never-measure fix the measurement action and learn a
stationary 8-feature control head with one-step targets; the stationary
variant ("vanilla") additionally never measures; the zero policy takes no
actions at all.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .core import BeliefSummary
from .smc import BlockSpec, ParticleBelief, default_priors

__all__ = [
    "AgentConfig",
    "QWeights",
    "QPosterior",
    "phi_I",
    "phi_A",
    "phi_A_baseline",
    "target_I",
    "target_A",
    "blr_update",
    "sample_beta",
    "act_measure",
    "act_control",
    "designed_reward",
    "Agent",
    "make_agent",
    "baseline_policy",
]

AGENT_KINDS = ("active", "always", "never", "zero", "vanilla_rlsvi")

DIM_I = 7
DIM_A = 9
DIM_A8 = 8


@dataclass(frozen=True)
class AgentConfig:
    kind: str = "active"
    gamma: float = 0.9
    n_particles: int = 50
    target_copy_every: int = 10
    lambda_sigma_I: float = 0.2
    sigma2_I: float = 0.02
    lambda_sigma_A: float = 5.0
    sigma2_A: float = 0.02
    reward_design: bool = True
    recompute_targets: bool = True

    def __post_init__(self) -> None:
        if self.kind not in AGENT_KINDS:
            raise ValueError(f"kind must be one of {AGENT_KINDS}")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        for name in ("n_particles", "target_copy_every"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("lambda_sigma_I", "sigma2_I", "lambda_sigma_A", "sigma2_A"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")

    @property
    def lambda_I(self) -> float:
        return self.lambda_sigma_I / self.sigma2_I

    @property
    def lambda_A(self) -> float:
        return self.lambda_sigma_A / self.sigma2_A


@dataclass
class QWeights:
    beta_I: np.ndarray
    beta_A: np.ndarray
    beta_A_target: np.ndarray
    steps_since_copy: int = 0


@dataclass(frozen=True)
class QPosterior:
    rows: np.ndarray
    targets: np.ndarray
    lam: float
    sigma2: float
    mu: np.ndarray
    cov: np.ndarray


# -- feature maps -----------------------------------------------------------


def phi_I(summary: BeliefSummary) -> np.ndarray:
    """[1, E, b_mean, b_std, I, I*E, I*b_mean]."""
    e = summary.z[1]
    b, s, i = summary.mean_u, summary.std_u, float(summary.i)
    return np.array([1.0, e, b, s, i, i * e, i * b])


def phi_A(summary: BeliefSummary, context: float, a: int) -> np.ndarray:
    """[1, E, b_mean, C, I, A, A*E, A*b_mean, A*C]."""
    e = summary.z[1]
    b, i, a = summary.mean_u, float(summary.i), float(a)
    return np.array([1.0, e, b, context, i, a, a * e, a * b, a * context])


def phi_A_baseline(e: float, b_mean: float, context: float, a: int) -> np.ndarray:
    """Control features without the measurement column (fixed-I baselines)."""
    a = float(a)
    return np.array([1.0, e, b_mean, context, a, a * e, a * b_mean, a * context])


def _q_pair(beta: np.ndarray, e, u, c, i):
    """Q(a=0), Q(a=1) under the 9-feature head; broadcasts over arrays."""
    base = beta[0] + beta[1] * e + beta[2] * u + beta[3] * c + beta[4] * i
    lift = beta[5] + beta[6] * e + beta[7] * u + beta[8] * c
    return base, base + lift


def _double_q(beta_eval: np.ndarray, beta_sel: np.ndarray, e, u, c, i):
    """Evaluate the greedy action (ties to 0) chosen under the target head."""
    s0, s1 = _q_pair(beta_sel, e, u, c, i)
    e0, e1 = _q_pair(beta_eval, e, u, c, i)
    return np.where(s1 > s0, e1, e0)


def _q_pair8(beta: np.ndarray, e, u, c):
    base = beta[0] + beta[1] * e + beta[2] * u + beta[3] * c
    lift = beta[4] + beta[5] * e + beta[6] * u + beta[7] * c
    return base, base + lift


# -- targets ----------------------------------------------------------------


def target_I(values: np.ndarray, weights: np.ndarray, e: float, context: float,
             i_taken: int, beta_a_prev: np.ndarray, beta_a_target: np.ndarray,
             gamma: float) -> float:
    """Measurement-head regression target.

    Measured: weights-weighted double-Q control value over the Dirac beliefs
    at each pre-measurement particle. Unmeasured: the same evaluation at the
    belief mean with the measurement column zeroed.
    """
    root = math.sqrt(gamma)
    if i_taken == 1:
        vals = _double_q(beta_a_prev, beta_a_target, e, np.asarray(values), context, 1.0)
        return root * float(np.dot(weights, vals))
    b_mean = float(np.dot(weights, values))
    return root * float(_double_q(beta_a_prev, beta_a_target, e, b_mean, context, 0.0))


def target_A(r_hat: float, e_next: float, b_next: float, c_next: float,
             i_next: int, beta_a_prev: np.ndarray, beta_a_target: np.ndarray,
             gamma: float) -> float:
    """Control-head target: reward estimate plus the discounted double-Q
    value at the next period's post-measurement belief."""
    boot = float(_double_q(beta_a_prev, beta_a_target, e_next, b_next, c_next, float(i_next)))
    return float(r_hat) + gamma * boot


# -- Bayesian ridge ---------------------------------------------------------


def blr_update(rows: np.ndarray, targets: np.ndarray, lam: float, sigma2: float,
               dim: Optional[int] = None) -> QPosterior:
    """Closed-form Gaussian posterior over linear Q-weights (zero prior mean)."""
    if lam <= 0 or sigma2 <= 0:
        raise ValueError("lam and sigma2 must be > 0")
    rows = np.asarray(rows, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if rows.size == 0:
        if dim is None:
            raise ValueError("dim required when no rows are given")
        rows = rows.reshape(0, dim)
        targets = targets.reshape(0)
    d = rows.shape[1]
    prec = rows.T @ rows / sigma2 + lam * np.eye(d)
    cov = np.linalg.inv(prec)
    cov = 0.5 * (cov + cov.T)
    mu = cov @ (rows.T @ targets / sigma2)
    return QPosterior(rows=rows, targets=targets, lam=lam, sigma2=sigma2, mu=mu, cov=cov)


def sample_beta(q: QPosterior, rng: np.random.Generator) -> np.ndarray:
    chol = np.linalg.cholesky(q.cov)
    return q.mu + chol @ rng.standard_normal(q.mu.shape[0])


# -- action selection -------------------------------------------------------


def act_measure(summary: BeliefSummary, beta_i: np.ndarray, t: int) -> int:
    """Greedy measurement choice; forced to measure at the first period."""
    if t < 1:
        raise ValueError("t must be >= 1")
    if t == 1:
        return 1
    e, b = summary.z[1], summary.mean_u
    gap = beta_i[4] + beta_i[5] * e + beta_i[6] * b
    return int(gap > 0.0)


def act_control(summary: BeliefSummary, context: float, beta_a: np.ndarray,
                t: int, rng: Optional[np.random.Generator] = None) -> int:
    """Greedy control choice; uniform at the first period."""
    if t < 1:
        raise ValueError("t must be >= 1")
    if t == 1:
        if rng is None:
            raise ValueError("first-period control draw needs an rng")
        return int(rng.integers(0, 2))
    e, b = summary.z[1], summary.mean_u
    gap = beta_a[5] + beta_a[6] * e + beta_a[7] * b + beta_a[8] * context
    return int(gap > 0.0)


def designed_reward(theta_r: np.ndarray, m: float, e: float, b_prev: float) -> float:
    """Low-variance reward surrogate from the learned reward regression."""
    theta_r = np.asarray(theta_r, dtype=float)
    return float(theta_r[0] + theta_r[1] * m + theta_r[2] * e + theta_r[3] * b_prev)


# -- the per-episode agent ---------------------------------------------------


class Agent:
    """One episode's learner; owns the particle belief and both Q-heads.

    Drive it in protocol order each period: observe (from period 2 on),
    choose_measure, apply_measure, choose_control, end_period. After the
    final period call finalize with the trailing observation so the last
    reward estimate exists.
    """

    def __init__(self, config: AgentConfig, priors: Optional[Dict[str, BlockSpec]] = None):
        self.cfg = config
        self.priors = priors if priors is not None else default_priors()
        self._learns_control = config.kind != "zero"
        self._stationary = config.kind in ("always", "never", "vanilla_rlsvi")
        self._dim_a = DIM_A8 if self._stationary else DIM_A

    # lifecycle ------------------------------------------------------------

    def reset(self, e0: float, smc_rng: np.random.Generator,
              agent_rng: np.random.Generator) -> None:
        cfg = self.cfg
        self.belief = ParticleBelief(cfg.n_particles, self.priors, smc_rng, e0=e0)
        self._smc_rng = smc_rng
        self._rng = agent_rng
        self.t = 0
        self.weights = QWeights(beta_I=np.zeros(DIM_I), beta_A=np.zeros(self._dim_a),
                                beta_A_target=np.zeros(self._dim_a))
        self._beta_a_prev = np.zeros(self._dim_a)
        # per-period history (index l-1 for period l)
        self._e: List[float] = []        # E_{l-1}
        self._b1m: List[float] = []
        self._b1s: List[float] = []
        self._pv: List[np.ndarray] = []  # step-1 particle values
        self._pw: List[np.ndarray] = []  # step-1 particle weights
        self._i: List[int] = []
        self._b2m: List[float] = []
        self._b2s: List[float] = []
        self._c: List[float] = []
        self._a: List[int] = []
        self._rhat: List[float] = []     # grows one period behind
        self._rows_i: List[np.ndarray] = []
        self._rows_a: List[np.ndarray] = []

    # period protocol --------------------------------------------------------

    def observe(self, z: Tuple[float, float], o: float) -> None:
        """Start period t: fold in the new observation and refresh the
        control head. z = (M_{t-1}, E_{t-1}), o = O_{t-1}."""
        self.t += 1
        t = self.t
        m_prev, e_prev = float(z[0]), float(z[1])
        if t == 1:
            # no transition yet; the belief is the latent prior
            self._e.append(e_prev)
            b1m, b1s = self.belief.moments()
            self._snapshot_step1(b1m, b1s)
            return
        self.belief.step1(m_prev, e_prev, float(o), self._c[-1], self._a[-1],
                          self._i[-1], self._smc_rng)
        b1m, b1s = self.belief.moments()
        # period t-1's reward estimate is final now
        if self.cfg.reward_design:
            theta_r = self.belief.theta_draw_mean("R")
            self._rhat.append(designed_reward(theta_r, m_prev, e_prev, self._b2m[-1]))
        else:
            self._rhat.append(b1m)
        self._e.append(e_prev)
        self._snapshot_step1(b1m, b1s)
        if self._learns_control:
            self._refresh_control_head()

    def _snapshot_step1(self, b1m: float, b1s: float) -> None:
        self._b1m.append(b1m)
        self._b1s.append(b1s)
        self._pv.append(self.belief.values.copy())
        self._pw.append(self.belief.weights.copy())

    def choose_measure(self) -> int:
        kind = self.cfg.kind
        if kind == "always":
            return 1
        if kind in ("never", "zero", "vanilla_rlsvi"):
            return 0
        summary = self.summary_step1()
        return act_measure(summary, self.weights.beta_I, self.t)

    def apply_measure(self, i: int, revealed: Optional[float]) -> None:
        self._i.append(int(i))
        self.belief.step2(int(i), revealed)
        b2m, b2s = self.belief.moments()
        self._b2m.append(b2m)
        self._b2s.append(b2s)

    def choose_control(self, context: float) -> int:
        self._c.append(float(context))
        if self.cfg.kind == "zero":
            a = 0
        elif self.t == 1:
            a = int(self._rng.integers(0, 2))
        else:
            e, b = self._e[-1], self._b2m[-1]
            if self._stationary:
                beta = self.weights.beta_A
                gap = beta[4] + beta[5] * e + beta[6] * b + beta[7] * context
                a = int(gap > 0.0)
            else:
                a = act_control(self.summary_step2(), context, self.weights.beta_A, self.t)
        self._a.append(a)
        return a

    def end_period(self) -> None:
        """Close period t: store the control row and refresh the measure head."""
        l = self.t - 1
        if self._stationary:
            self._rows_a.append(phi_A_baseline(self._e[l], self._b2m[l], self._c[l], self._a[l]))
        else:
            self._rows_a.append(np.array([1.0, self._e[l], self._b2m[l], self._c[l],
                                          float(self._i[l]), float(self._a[l]),
                                          self._a[l] * self._e[l], self._a[l] * self._b2m[l],
                                          self._a[l] * self._c[l]]))
        if self.cfg.kind == "active":
            s = BeliefSummary(z=(math.nan, self._e[l]), mean_u=self._b1m[l],
                              std_u=self._b1s[l], i=self._i[l])
            self._rows_i.append(phi_I(s))
            self._refresh_measure_head()

    def finalize(self, z: Tuple[float, float], o: float) -> float:
        """Run one trailing belief propagation so the last period's reward
        estimate exists; returns it."""
        m_prev, e_prev = float(z[0]), float(z[1])
        self.belief.step1(m_prev, e_prev, float(o), self._c[-1], self._a[-1],
                          self._i[-1], self._smc_rng)
        if self.cfg.reward_design:
            theta_r = self.belief.theta_draw_mean("R")
            rhat = designed_reward(theta_r, m_prev, e_prev, self._b2m[-1])
        else:
            rhat = self.belief.moments()[0]
        self._rhat.append(rhat)
        return rhat

    # learning ----------------------------------------------------------------

    def _refresh_control_head(self) -> None:
        """Fit the control head on all closed periods and draw fresh weights."""
        cfg = self.cfg
        n = self.t - 2  # rows 1..t-2 have complete bootstrap inputs
        beta_prev = self.weights.beta_A
        if n > 0:
            rows = np.stack(self._rows_a[:n])
            rhat = np.asarray(self._rhat[:n])
            e_next = np.asarray(self._e[1:n + 1])
            b_next = np.asarray(self._b2m[1:n + 1])
            c_next = np.asarray(self._c[1:n + 1])
            if self._stationary:
                q0, q1 = _q_pair8(beta_prev, e_next, b_next, c_next)
                boot = np.maximum(q0, q1)
            else:
                i_next = np.asarray(self._i[1:n + 1], dtype=float)
                boot = _double_q(beta_prev, self.weights.beta_A_target,
                                 e_next, b_next, c_next, i_next)
            y = rhat + cfg.gamma * boot
        else:
            rows = np.zeros((0, self._dim_a))
            y = np.zeros(0)
        post = blr_update(rows, y, cfg.lambda_A, cfg.sigma2_A, dim=self._dim_a)
        self._beta_a_prev = beta_prev
        self.weights.beta_A = sample_beta(post, self._rng)
        if not self._stationary:
            self.weights.steps_since_copy += 1
            if self.weights.steps_since_copy >= cfg.target_copy_every:
                self.weights.beta_A_target = self.weights.beta_A.copy()
                self.weights.steps_since_copy = 0

    def _refresh_measure_head(self) -> None:
        """Fit the measurement head on all periods so far and draw weights."""
        cfg = self.cfg
        n = self.t
        rows = np.stack(self._rows_i[:n])
        beta_a = self.weights.beta_A
        beta_tg = self.weights.beta_A_target
        root = math.sqrt(cfg.gamma)
        vals = np.stack(self._pv[:n])     # (n, J)
        wts = np.stack(self._pw[:n])
        e_col = np.asarray(self._e[:n])[:, None]
        c_col = np.asarray(self._c[:n])[:, None]
        per = _double_q(beta_a, beta_tg, e_col, vals, c_col, 1.0)
        measured = root * np.sum(wts * per, axis=1)
        b1 = np.asarray(self._b1m[:n])
        unmeasured = root * _double_q(beta_a, beta_tg, np.asarray(self._e[:n]),
                                      b1, np.asarray(self._c[:n]), 0.0)
        y = np.where(np.asarray(self._i[:n]) == 1, measured, unmeasured)
        post = blr_update(rows, y, cfg.lambda_I, cfg.sigma2_I, dim=DIM_I)
        self.weights.beta_I = sample_beta(post, self._rng)

    # summaries ------------------------------------------------------------

    def summary_step1(self) -> BeliefSummary:
        return BeliefSummary(z=(math.nan, self._e[-1]), mean_u=self._b1m[-1],
                             std_u=self._b1s[-1], i=0)

    def summary_step2(self) -> BeliefSummary:
        return BeliefSummary(z=(math.nan, self._e[-1]), mean_u=self._b2m[-1],
                             std_u=self._b2s[-1], i=self._i[-1])

    def reward_estimates(self) -> List[float]:
        return list(self._rhat)


def make_agent(config: AgentConfig, priors: Optional[Dict[str, BlockSpec]] = None) -> Agent:
    return Agent(config, priors)


def baseline_policy(kind: str, **overrides) -> Agent:
    """Fixed-measurement baselines and the do-nothing reference policy."""
    if kind not in ("always", "never", "zero"):
        raise ValueError("baseline kind must be always, never, or zero")
    return Agent(AgentConfig(kind=kind, **overrides))
