"""Exact small-scale verification machinery.

A tiny tabular instance of the two-half-step decision process, belief-grid
value iteration over it, the measuring-advantage decomposition, the
weakly-revealing singular-value check, and a scalar Kalman filter used as an
independent oracle for the particle filter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

__all__ = [
    "TabularAomdp",
    "BeliefGrid",
    "ValueTables",
    "belief_value_iteration",
    "advantage_decomposition",
    "weakly_revealing_sigma",
    "kalman_filter",
    "random_tabular",
    "oracle_report",
]

_ROW_TOL = 1e-12
_MAX_ENTRIES = 1_000_000


@dataclass(frozen=True)
class TabularAomdp:
    """Finite two-half-step process.

    trans[z, u, i, a, z', u'] is the joint next-state law after the control
    half-step; emission[u, o] emits from the latent state at the start of a
    period; reward[z', u'] accrues on arrival; gamma discounts per period
    (sqrt(gamma) per half-step).
    """

    trans: np.ndarray
    emission: np.ndarray
    reward: np.ndarray
    gamma: float

    def __post_init__(self) -> None:
        t = np.asarray(self.trans, dtype=float)
        om = np.asarray(self.emission, dtype=float)
        r = np.asarray(self.reward, dtype=float)
        object.__setattr__(self, "trans", t)
        object.__setattr__(self, "emission", om)
        object.__setattr__(self, "reward", r)
        if t.ndim != 6 or t.shape[4] != t.shape[0] or t.shape[5] != t.shape[1]:
            raise ValueError("trans must have shape [z,u,i,a,z,u]")
        if t.shape[2] != 2:
            raise ValueError("the measurement action is binary")
        if om.shape[0] != t.shape[1]:
            raise ValueError("emission rows must index the latent states")
        if r.shape != (t.shape[0], t.shape[1]):
            raise ValueError("reward must be indexed [z', u']")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if np.any(t < -_ROW_TOL) or np.any(om < -_ROW_TOL):
            raise ValueError("negative probabilities")
        rows = t.reshape(-1, t.shape[4] * t.shape[5]).sum(axis=1)
        if np.max(np.abs(rows - 1.0)) > _ROW_TOL:
            raise ValueError("transition rows must sum to 1")
        if np.max(np.abs(om.sum(axis=1) - 1.0)) > _ROW_TOL:
            raise ValueError("emission rows must sum to 1")

    @property
    def n_z(self) -> int:
        return self.trans.shape[0]

    @property
    def n_u(self) -> int:
        return self.trans.shape[1]

    @property
    def n_o(self) -> int:
        return self.emission.shape[1]

    @property
    def n_a(self) -> int:
        return self.trans.shape[3]

    def reward_observed_only(self, tol: float = 1e-12) -> bool:
        return bool(np.max(np.abs(self.reward - self.reward[:, :1])) <= tol)


@dataclass(frozen=True)
class BeliefGrid:
    """Uniform discretization of the 2-point simplex: p = b(u=1) = k/m."""

    m: int

    def __post_init__(self) -> None:
        if self.m < 1:
            raise ValueError("resolution must be >= 1")

    @property
    def points(self) -> np.ndarray:
        return np.arange(self.m + 1) / self.m


@dataclass(frozen=True)
class ValueTables:
    """Converged belief-grid tables.

    q_i[z, g, i]: value of the measurement choice at belief grid point g.
    q_a[z, g, i, a]: control value given the post-measurement indicator i.
    """

    q_i: np.ndarray
    q_a: np.ndarray
    grid: BeliefGrid
    residual: float
    interp_bound: float


def _control_backup(env: TabularAomdp, grid: BeliefGrid, v_next: np.ndarray) -> np.ndarray:
    """One control-half-step Bellman backup from the next-period measurement
    values v_next[z, g] (already maxed over the measurement choice)."""
    p = grid.points
    nz, nu, no, na = env.n_z, env.n_u, env.n_o, env.n_a
    root = math.sqrt(env.gamma)
    q_a = np.zeros((nz, p.size, 2, na))
    for z in range(nz):
        for i in range(2):
            for a in range(na):
                # joint arrival law m[g, z', u'] under belief p
                t0 = env.trans[z, 0, i, a]  # (z', u')
                t1 = env.trans[z, 1, i, a]
                joint = (1.0 - p)[:, None, None] * t0[None] + p[:, None, None] * t1[None]
                val = np.einsum("gzu,zu->g", joint, env.reward)
                for z2 in range(nz):
                    for o2 in range(no):
                        w = joint[:, z2, 0] * env.emission[0, o2] + joint[:, z2, 1] * env.emission[1, o2]
                        top = joint[:, z2, 1] * env.emission[1, o2]
                        ok = w > 1e-300
                        p_next = np.where(ok, top / np.where(ok, w, 1.0), 0.0)
                        val = val + root * w * np.interp(p_next, p, v_next[z2])
                q_a[z, :, i, a] = val
    return q_a


def _measure_backup(env: TabularAomdp, grid: BeliefGrid, q_a: np.ndarray) -> np.ndarray:
    """Measurement-half-step backup from the control table."""
    p = grid.points
    root = math.sqrt(env.gamma)
    v_dirac = np.max(q_a[:, [0, -1], 1, :], axis=2)  # (z, u) values at collapsed beliefs
    q_i = np.zeros((env.n_z, p.size, 2))
    for z in range(env.n_z):
        q_i[z, :, 1] = root * ((1.0 - p) * v_dirac[z, 0] + p * v_dirac[z, 1])
        q_i[z, :, 0] = root * np.max(q_a[z, :, 0, :], axis=1)
    return q_i


def belief_value_iteration(env: TabularAomdp, grid: BeliefGrid, tol: float = 1e-9,
                           max_iter: int = 100_000) -> ValueTables:
    """Alternating-half-step value iteration on the belief grid."""
    if env.n_u != 2:
        raise ValueError("belief-grid iteration supports exactly two latent states")
    nz = env.n_z
    q_i = np.zeros((nz, grid.m + 1, 2))
    q_a = np.zeros((nz, grid.m + 1, 2, env.n_a))
    for _ in range(max_iter):
        v_next = np.max(q_i, axis=2)
        q_a_new = _control_backup(env, grid, v_next)
        q_i_new = _measure_backup(env, grid, q_a_new)
        resid = max(float(np.max(np.abs(q_a_new - q_a))), float(np.max(np.abs(q_i_new - q_i))))
        q_a, q_i = q_a_new, q_i_new
        if resid <= tol:
            bound = float(np.max(np.abs(np.diff(q_a, axis=1))))
            return ValueTables(q_i=q_i, q_a=q_a, grid=grid, residual=resid, interp_bound=bound)
    raise RuntimeError(f"value iteration did not reach tol={tol} in {max_iter} sweeps")


def advantage_decomposition(env: TabularAomdp, tables: ValueTables, z: int,
                            g: int) -> Tuple[float, float, float]:
    """Split the advantage of measuring at grid belief g into its delayed
    (dynamics-impact) and immediate (uncertainty-collapse) parts."""
    p = tables.grid.points[g]
    root = math.sqrt(env.gamma)
    q_a = tables.q_a
    v1_dirac = np.max(q_a[z, [0, -1], 1, :], axis=1)  # measured branch at collapsed beliefs
    v0_dirac = np.max(q_a[z, [0, -1], 0, :], axis=1)
    e_v1 = (1.0 - p) * v1_dirac[0] + p * v1_dirac[1]
    e_v0 = (1.0 - p) * v0_dirac[0] + p * v0_dirac[1]
    v0_here = float(np.max(q_a[z, g, 0, :]))
    total = float(tables.q_i[z, g, 1] - tables.q_i[z, g, 0])
    delayed = root * float(e_v1 - e_v0)
    immediate = root * float(e_v0 - v0_here)
    return total, delayed, immediate


def weakly_revealing_sigma(env: TabularAomdp, m: int = 2, measurement_enabled: bool = True) -> float:
    """S-th singular value of the 2-step emission matrix built from the
    augmented per-step states, with the first action fixed to measure.

    Rows index the augmented emission tuple, columns the augmented state
    (u_0, u_1) per observed-state block; observed components and the
    revealed-latent channels are deterministic, so with measurement enabled
    the matrix is a permutation and the value is exactly 1. With measurement
    disabled the latent channels fall back to the emission law.
    """
    if m != 2:
        raise ValueError("only the 2-step condition is implemented")
    if not env.reward_observed_only():
        raise ValueError("check requires rewards that depend only on the observed state")
    nz, nu, no = env.n_z, env.n_u, env.n_o
    chan = np.eye(nu) if measurement_enabled else env.emission  # P(channel | u)
    n_states = (nz * nu) ** 2
    n_emis = (nz * chan.shape[1]) ** 2
    if n_states * n_emis > _MAX_ENTRIES:
        raise ValueError("augmented matrix exceeds the size cap")
    # per-step channel matrix P((z, c) | (z, u)) is block diagonal over z
    step = np.kron(np.eye(nz), chan.T)  # (nz*nc, nz*nu)
    big = np.kron(step, step)
    s = np.linalg.svd(big, compute_uv=False)
    if s.size < n_states:
        return 0.0
    return float(np.sort(s)[::-1][n_states - 1])


def kalman_filter(a: float, q: float, c: float, s: float,
                  obs: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Scalar Kalman recursion for u_t = a u_{t-1} + N(0,q), o_t = c u_t + N(0,s).

    The prior is u_0 ~ N(0, 1); entry k of the outputs is the posterior of
    u_{k+1} given obs[:k+1].
    """
    if q <= 0 or s <= 0:
        raise ValueError("q and s must be > 0")
    obs = np.asarray(obs, dtype=float)
    means = np.empty(obs.size)
    variances = np.empty(obs.size)
    mean, var = 0.0, 1.0
    for k, o in enumerate(obs):
        mean, var = a * mean, a * a * var + q
        gain = var * c / (c * c * var + s)
        mean = mean + gain * (o - c * mean)
        var = (1.0 - gain * c) * var
        means[k] = mean
        variances[k] = var
    return means, variances


def random_tabular(rng: np.random.Generator, n_z: int = 2, n_u: int = 2,
                   n_o: int = 2, n_a: int = 2, gamma: float = 0.9,
                   i_dependent: bool = True) -> TabularAomdp:
    """Random instance with observed-state rewards (Dirichlet rows)."""
    trans = rng.dirichlet(np.ones(n_z * n_u), size=(n_z, n_u, 2, n_a)).reshape(
        n_z, n_u, 2, n_a, n_z, n_u)
    if not i_dependent:
        trans[:, :, 1, :] = trans[:, :, 0, :]
    emission = rng.dirichlet(np.ones(n_o), size=n_u)
    reward = np.repeat(rng.normal(size=(n_z, 1)), n_u, axis=1)
    return TabularAomdp(trans=trans, emission=emission, reward=reward, gamma=gamma)


def oracle_report(seed: int = 0, n_instances: int = 5, grid_m: int = 120) -> Dict[str, object]:
    """Run the three theory checks on random small instances."""
    rng = np.random.default_rng(seed)
    sigmas = [weakly_revealing_sigma(random_tabular(rng)) for _ in range(n_instances)]
    blind = random_tabular(rng)
    blind_flat = TabularAomdp(trans=blind.trans,
                              emission=np.full((blind.n_u, blind.n_o), 1.0 / blind.n_o),
                              reward=blind.reward, gamma=blind.gamma)
    sigma_blind = weakly_revealing_sigma(blind_flat, measurement_enabled=False)

    env = random_tabular(rng, i_dependent=False)
    tables = belief_value_iteration(env, BeliefGrid(grid_m), tol=1e-10)
    gaps, mins = [], []
    for z in range(env.n_z):
        for g in range(grid_m + 1):
            total, delayed, immediate = advantage_decomposition(env, tables, z, g)
            gaps.append(abs(total - (delayed + immediate)))
            mins.append(total)
    revealing_ok = all(s >= 1.0 - 1e-9 for s in sigmas)
    identity_ok = max(gaps) <= 2.0 * tables.interp_bound + 1e-12
    jensen_ok = min(mins) >= -1e-9
    return {
        "revealing_sigmas": sigmas,
        "revealing_ok": revealing_ok,
        "negative_control_sigma": sigma_blind,
        "negative_control_ok": sigma_blind < 1.0,
        "decomposition_max_gap": max(gaps),
        "decomposition_bound": tables.interp_bound,
        "decomposition_ok": identity_ok,
        "jensen_min_advantage": min(mins),
        "jensen_ok": jensen_ok,
        "all_ok": revealing_ok and sigma_blind < 1.0 and identity_ok and jensen_ok,
    }
