"""Particle belief over the latent reward with jointly learned parameters.

Each particle carries a latent-reward trajectory plus conjugate Gaussian
sufficient statistics for the three regression blocks of the testbed working
model:

    M-block (d=8): step count on [1, E_{l-1}, R_{l-1}, C_l, A_l, A*E, A*R, A*C]
    R-block (d=4): latent reward on [1, M_l, E_l, R_{l-1}]
    O-block (d=2): emission on [1, R_l]

Per period the filter runs two half-steps. Half-step 1 draws fresh
parameters from each particle's posterior, proposes the new latent value
from its conditional, and reweights by the step-count and emission
likelihoods. Half-step 2 either leaves the belief untouched (unmeasured) or
collapses every particle to the revealed value, reweighting from the
pre-half-step-1 weights by the joint transition density.

Completed regression rows for period l are ingested at the start of
half-step 1 of period l+2: only then is the period-l latent response final
(a measurement at period l+1 may overwrite it), and ingesting before the
parameter draw would double-count the step-count likelihood.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from . import kernels
from .core import BeliefSummary

__all__ = [
    "GaussianPosterior",
    "BlockSpec",
    "SuffStats",
    "ParticleBelief",
    "default_priors",
    "theta_posterior",
    "propagate_step1",
    "propagate_step2",
    "ess",
    "resample",
    "summarize",
]

BLOCKS = ("M", "R", "O")
BLOCK_DIMS = {"M": 8, "R": 4, "O": 2}


@dataclass(frozen=True)
class GaussianPosterior:
    mean: np.ndarray
    cov: np.ndarray


@dataclass(frozen=True)
class BlockSpec:
    """Prior and noise model for one regression block."""

    nu0: np.ndarray
    lam0_diag: np.ndarray
    noise_var: float

    @property
    def dim(self) -> int:
        return self.nu0.shape[0]


def default_priors(
    prior_scale: float = 0.01,
    sigma2_m: float = 0.972,
    sigma2_r: float = 0.240,
    sigma2_o: float = 0.637,
) -> Dict[str, BlockSpec]:
    """Shipped prior means and noise variances for the testbed blocks."""

    def block(nu0, var):
        nu0 = np.asarray(nu0, dtype=float)
        return BlockSpec(nu0, np.full(nu0.shape, prior_scale), var)

    return {
        "M": block([-0.043, -0.026, 0.062, 0.418, 0.001, 0.003, -0.035, 0.011], sigma2_m),
        "R": block([-0.005, 0.029, 0.012, 0.861], sigma2_r),
        "O": block([0.034, 0.534], sigma2_o),
    }


class SuffStats:
    """Per-particle Gram/moment accumulators for every block (batched)."""

    def __init__(self, n_particles: int, priors: Dict[str, BlockSpec]):
        self.n = n_particles
        self.priors = priors
        self.gram = {b: np.zeros((n_particles, s.dim, s.dim)) for b, s in priors.items()}
        self.xty = {b: np.zeros((n_particles, s.dim)) for b, s in priors.items()}
        self.count = 0

    def add_rows(self, block: str, x: np.ndarray, y: np.ndarray) -> None:
        """Rank-1 update with one row per particle."""
        self.gram[block] += np.einsum("ji,jk->jik", x, x)
        self.xty[block] += x * y[:, None]

    def gather(self, idx: np.ndarray) -> None:
        for b in self.gram:
            self.gram[b] = self.gram[b][idx].copy()
            self.xty[b] = self.xty[b][idx].copy()

    def posterior_chol(self, block: str) -> Tuple[np.ndarray, np.ndarray]:
        """Batched posterior means and Cholesky factors of the precision.

        precision A = Gram/noise_var + Lam0^-1; mean = A^-1 (XtY/noise_var +
        Lam0^-1 nu0). Sampling uses theta = mean + solve(L^T, z) with A=LL^T.
        """
        spec = self.priors[block]
        a = self.gram[block] / spec.noise_var
        d = spec.dim
        dix = np.arange(d)
        a = a.copy()
        a[:, dix, dix] += 1.0 / spec.lam0_diag
        rhs = self.xty[block] / spec.noise_var + spec.nu0 / spec.lam0_diag
        try:
            chol = np.linalg.cholesky(a)
        except np.linalg.LinAlgError:
            a[:, dix, dix] += 1e-9
            chol = np.linalg.cholesky(a)
        mean = np.linalg.solve(a, rhs[..., None])[..., 0]
        return mean, chol

    def sample_theta(self, block: str, rng: np.random.Generator) -> np.ndarray:
        mean, chol = self.posterior_chol(block)
        z = rng.standard_normal(mean.shape)
        draw = np.linalg.solve(np.swapaxes(chol, 1, 2), z[..., None])[..., 0]
        return mean + draw

    def posterior_mean(self, block: str) -> np.ndarray:
        mean, _ = self.posterior_chol(block)
        return mean


def theta_posterior(ss: SuffStats, block: str, noise_var: Optional[float] = None, j: int = 0) -> GaussianPosterior:
    """Closed-form conjugate posterior for one particle's block."""
    spec = ss.priors[block]
    var = spec.noise_var if noise_var is None else noise_var
    if var <= 0:
        raise ValueError("noise_var must be positive")
    a = ss.gram[block][j] / var + np.diag(1.0 / spec.lam0_diag)
    rhs = ss.xty[block][j] / var + spec.nu0 / spec.lam0_diag
    try:
        cov = np.linalg.inv(a)
    except np.linalg.LinAlgError as exc:
        a = a + 1e-9 * np.eye(a.shape[0])
        try:
            cov = np.linalg.inv(a)
        except np.linalg.LinAlgError:
            raise ValueError("posterior precision not invertible") from exc
    cov = 0.5 * (cov + cov.T)
    return GaussianPosterior(mean=cov @ rhs, cov=cov)


class ParticleBelief:
    """Weighted particle set over the latent reward, with parameter learning."""

    def __init__(self, n_particles: int, priors: Optional[Dict[str, BlockSpec]] = None,
                 rng: Optional[np.random.Generator] = None, e0: float = 0.0):
        if n_particles < 1:
            raise ValueError("need at least one particle")
        rng = rng if rng is not None else np.random.default_rng()
        self.n = n_particles
        self.priors = priors if priors is not None else default_priors()
        self.values = rng.standard_normal(n_particles)
        self.prev_values = self.values.copy()
        self.weights = np.full(n_particles, 1.0 / n_particles)
        self.prev_weights = self.weights.copy()
        self.suffstats = SuffStats(n_particles, self.priors)
        self.last_theta: Dict[str, np.ndarray] = {}
        self.half_step = 1
        self.t = 1
        self.last_ess = float(n_particles)
        self.last_resampled = False
        self._e_cache = float(e0)
        self._pending: Optional[dict] = None
        self._log_m: Optional[np.ndarray] = None
        self._mean_r: Optional[np.ndarray] = None
        self._collapsed: Optional[float] = None

    # -- half-step 1 ------------------------------------------------------

    def step1(self, m_prev: float, e_prev: float, o_prev: float,
              c_prev: float, a_prev: int, i_prev: int,
              rng: np.random.Generator) -> "ParticleBelief":
        """Propagate to period t's pre-measurement belief.

        Arguments are the period-t observation (M_{t-1}, E_{t-1}, O_{t-1})
        and the previous period's context and actions.
        """
        if self.half_step != 2:
            raise RuntimeError("step1 requires a completed half-step 2")
        del i_prev  # recorded by callers; the working model has no direct use
        e_lag = self._e_cache

        if self._pending is not None:
            self._ingest_pending()

        theta = {b: self.suffstats.sample_theta(b, rng) for b in BLOCKS}
        self.last_theta = theta

        self.prev_weights = self.weights.copy()

        # conditional draw of the new latent value given the fresh parameters
        tr = theta["R"]
        mean_r = tr[:, 0] + tr[:, 1] * m_prev + tr[:, 2] * e_prev + tr[:, 3] * self.values
        sig_r = np.sqrt(self.priors["R"].noise_var)
        new_values = mean_r + sig_r * rng.standard_normal(self.n)

        tm = theta["M"]
        m_pred = (tm[:, 0] + tm[:, 1] * e_lag + tm[:, 2] * self.values + tm[:, 3] * c_prev
                  + a_prev * (tm[:, 4] + tm[:, 5] * e_lag + tm[:, 6] * self.values + tm[:, 7] * c_prev))
        to = theta["O"]
        o_pred = to[:, 0] + to[:, 1] * new_values

        log_m = kernels.gaussian_loglik(np.full(self.n, m_prev), np.ascontiguousarray(m_pred),
                                        self.priors["M"].noise_var)
        log_o = kernels.gaussian_loglik(np.full(self.n, o_prev), np.ascontiguousarray(o_pred),
                                        self.priors["O"].noise_var)
        log_m = np.asarray(log_m)
        with np.errstate(divide="ignore"):
            logw = np.log(self.weights) + log_m + np.asarray(log_o)
        w, self.last_ess, degenerate = kernels.normalize_log_weights(np.ascontiguousarray(logw))
        if degenerate:
            warnings.warn("all particle weights degenerate; reset to uniform", RuntimeWarning)
        self.weights = np.asarray(w)

        self.prev_values = self.values
        self.values = new_values
        self._log_m = log_m
        self._mean_r = mean_r

        self.last_resampled = False
        if self.last_ess < 0.5 * self.n:
            self._resample(rng)

        self._pending = dict(m=m_prev, e=e_prev, o=o_prev, c=c_prev, a=a_prev, e_lag=e_lag)
        self._collapsed = None
        self._e_cache = e_prev
        self.half_step = 1
        self.t += 1
        return self

    def _ingest_pending(self) -> None:
        p = self._pending
        assert p is not None
        a = float(p["a"])
        ones = np.ones(self.n)
        xm = np.stack([ones, np.full(self.n, p["e_lag"]), self.prev_values,
                       np.full(self.n, p["c"]), np.full(self.n, a),
                       np.full(self.n, a * p["e_lag"]), a * self.prev_values,
                       np.full(self.n, a * p["c"])], axis=1)
        self.suffstats.add_rows("M", xm, np.full(self.n, p["m"]))
        xr = np.stack([ones, np.full(self.n, p["m"]), np.full(self.n, p["e"]),
                       self.prev_values], axis=1)
        self.suffstats.add_rows("R", xr, self.values)
        xo = np.stack([ones, self.values], axis=1)
        self.suffstats.add_rows("O", xo, np.full(self.n, p["o"]))
        self.suffstats.count += 1
        self._pending = None

    def _resample(self, rng: np.random.Generator) -> None:
        idx = np.asarray(kernels.systematic_resample(np.ascontiguousarray(self.weights),
                                                     float(rng.uniform())))
        self.values = self.values[idx].copy()
        self.prev_values = self.prev_values[idx].copy()
        self.suffstats.gather(idx)
        self.last_theta = {b: v[idx].copy() for b, v in self.last_theta.items()}
        if self._log_m is not None:
            self._log_m = self._log_m[idx].copy()
        if self._mean_r is not None:
            self._mean_r = self._mean_r[idx].copy()
        self.weights = np.full(self.n, 1.0 / self.n)
        # resampling re-equalizes the trajectory posterior, so the base
        # weights for a subsequent measured half-step are uniform too
        self.prev_weights = self.weights.copy()
        self.last_resampled = True

    # -- half-step 2 ------------------------------------------------------

    def step2(self, i: int, revealed: Optional[float] = None) -> "ParticleBelief":
        if self.half_step != 1:
            raise RuntimeError("step2 requires a completed half-step 1")
        if i == 0:
            self.half_step = 2
            return self
        if revealed is None:
            raise RuntimeError("measured half-step without a revealed value")
        if self._log_m is None or self._mean_r is None:
            # first period: no transition yet, the prior is symmetric
            self.values = np.full(self.n, float(revealed))
            self.weights = np.full(self.n, 1.0 / self.n)
        else:
            log_r = kernels.gaussian_loglik(np.full(self.n, float(revealed)),
                                            np.ascontiguousarray(self._mean_r),
                                            self.priors["R"].noise_var)
            with np.errstate(divide="ignore"):
                logw = np.log(self.prev_weights) + self._log_m + np.asarray(log_r)
            w, _, degenerate = kernels.normalize_log_weights(np.ascontiguousarray(logw))
            if degenerate:
                warnings.warn("all particle weights degenerate; reset to uniform", RuntimeWarning)
            self.weights = np.asarray(w)
            self.values = np.full(self.n, float(revealed))
        self._collapsed = float(revealed)
        self.half_step = 2
        return self

    # -- summaries --------------------------------------------------------

    def moments(self) -> Tuple[float, float]:
        if self._collapsed is not None:
            # a measured half-step leaves a Dirac; report it without float drift
            return self._collapsed, 0.0
        return kernels.weighted_moments(np.ascontiguousarray(self.values),
                                        np.ascontiguousarray(self.weights))

    def theta_posterior_mean(self, block: str) -> np.ndarray:
        """Weight-averaged posterior mean of one block across particles."""
        means = self.suffstats.posterior_mean(block)
        return self.weights @ means

    def theta_draw_mean(self, block: str) -> np.ndarray:
        return self.weights @ self.last_theta[block]

    def theta_draw_mse(self, block: str, truth: np.ndarray) -> float:
        d = self.last_theta[block] - np.asarray(truth)[None, :]
        return float(np.mean(np.sum(d * d, axis=1)))


# -- functional wrappers (operation-level API) ----------------------------


def propagate_step1(b: ParticleBelief, obs: Tuple[float, float, float],
                    prev_actions: Tuple[int, int], prev_context: float,
                    rng: np.random.Generator) -> ParticleBelief:
    """obs = (M_{t-1}, E_{t-1}, O_{t-1}); prev_actions = (i_{t-1}, a_{t-1})."""
    m_prev, e_prev, o_prev = obs
    i_prev, a_prev = prev_actions
    return b.step1(m_prev, e_prev, o_prev, prev_context, a_prev, i_prev, rng)


def propagate_step2(b: ParticleBelief, i: int, revealed: Optional[float] = None) -> ParticleBelief:
    return b.step2(i, revealed)


def ess(weights: np.ndarray) -> float:
    weights = np.asarray(weights, dtype=float)
    if abs(float(weights.sum()) - 1.0) > 1e-9:
        raise ValueError("weights must be normalized")
    return 1.0 / float(np.square(weights).sum())


def resample(b: ParticleBelief, rng: np.random.Generator) -> ParticleBelief:
    b._resample(rng)
    return b


def summarize(b: ParticleBelief, z: Tuple[float, ...], i: int = 0) -> BeliefSummary:
    mean, std = b.moments()
    return BeliefSummary(z=tuple(float(v) for v in z), mean_u=mean, std_u=std, i=i)
