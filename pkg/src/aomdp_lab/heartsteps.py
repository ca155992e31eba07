"""Linear-Gaussian digital-health testbed.

One period: a context C is drawn, the control action A together with the
previous engagement E and latent reward R produces a step count M, the next
engagement E' (where the measurement action I enters with a delayed cost),
the next latent reward R', and a noisy emission O' of R'. All variables are
standardized scales.

Mediated model (default):

    C  = c0 + eps_C
    M  = thM . [1, E, R, C, A, A*E, A*R, A*C] + eps_M
    E' = thE0 + thE1*E + thE2*A + thE3*A*E + thEI*I + thEIE*I*E + eps_E
    R' = thR0 + thR1*M + thR2*E' + thR3*R + eps_R
    O' = thO0 + thO1*R' + eps_O

General variant: E', R', O' each get the full 8-coefficient form over
[1, E, R, C, A, A*E, A*R, A*C] (M unchanged, I still enters E').
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.optimize import brentq

from .core import AomdpSpec, PeriodObservation, ProtocolError

__all__ = [
    "UserParams",
    "ScenarioConfig",
    "EnvState",
    "HeartStepsEnv",
    "base_user",
    "step_dynamics",
    "positive_effect_size",
    "negative_effect_size",
    "calibrate_scenario",
    "generate_users",
    "users_to_json",
    "users_from_json",
    "scenario_from_json",
]

POSITIVE_LEVELS = ("minimal", "small", "medium")
NEGATIVE_LEVELS = ("zero", "minimal", "small")
MODEL_VARIANTS = ("mediated", "general")

# Population-average effect-size targets per level.
POSITIVE_TARGETS = {"minimal": 0.026, "small": 0.119, "medium": 0.191}
NEGATIVE_TARGETS = {"zero": 0.0, "minimal": 0.010, "small": 0.039}

# Prior block means; the user generator draws around these.
PRIOR_M_MEAN = np.array([-0.043, -0.026, 0.062, 0.418, 0.001, 0.003, -0.035, 0.011])
PRIOR_R_MEAN = np.array([-0.005, 0.029, 0.012, 0.861])
PRIOR_O_MEAN = np.array([0.034, 0.534])
# Engagement coefficients [intercept, E-lag, A, A*E]: standardized scale,
# mild persistence, mild intervention burden.
BASE_E_MEAN = np.array([0.0, 0.2, -0.05, 0.01])

USER_STD = 0.05
R_E_CLIP = 0.02
# Generator mean of the reward regression's E-coefficient. Wide enough that
# per-user burden coefficients solved against it stay moderate (few users sit
# at the clip floor, where the solve would demand outsized engagement dips).
GEN_R_E_COEF = 0.15
# bound on the closed-loop reward lag (the R recursion composed with the
# R -> M -> R path, worst case all-treat); keeps the reward chain stationary
# and well mixed under every policy
RHO_MAX = 0.85

SIGMA2_C = 1.0
SIGMA2_M = 0.972
SIGMA2_E = 0.96  # keeps stationary Var(E) = 1 with E-lag 0.2
SIGMA2_R = 0.240
SIGMA2_O = 0.637


@dataclass
class UserParams:
    theta_C: float
    theta_M: np.ndarray  # (8,)
    theta_E: np.ndarray  # (4,) [intercept, E-lag, A, A*E]
    theta_E_I: float
    theta_E_IE: float
    theta_R: np.ndarray  # (4,) [intercept, M, E, R-lag]
    theta_O: np.ndarray  # (2,)
    sigma2_C: float = SIGMA2_C
    sigma2_M: float = SIGMA2_M
    sigma2_E: float = SIGMA2_E
    sigma2_R: float = SIGMA2_R
    sigma2_O: float = SIGMA2_O
    general_model: Optional[Dict[str, np.ndarray]] = None  # blocks E,R,O: (8,)

    def __post_init__(self) -> None:
        self.theta_M = np.asarray(self.theta_M, dtype=float)
        self.theta_E = np.asarray(self.theta_E, dtype=float)
        self.theta_R = np.asarray(self.theta_R, dtype=float)
        self.theta_O = np.asarray(self.theta_O, dtype=float)
        for name in ("sigma2_C", "sigma2_M", "sigma2_E", "sigma2_R", "sigma2_O"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    def copy(self) -> "UserParams":
        gm = None
        if self.general_model is not None:
            gm = {k: v.copy() for k, v in self.general_model.items()}
        return UserParams(self.theta_C, self.theta_M.copy(), self.theta_E.copy(),
                          self.theta_E_I, self.theta_E_IE, self.theta_R.copy(),
                          self.theta_O.copy(), self.sigma2_C, self.sigma2_M,
                          self.sigma2_E, self.sigma2_R, self.sigma2_O, gm)


@dataclass(frozen=True)
class ScenarioConfig:
    positive_level: str = "minimal"
    negative_level: str = "zero"
    emission_informative: bool = True
    model_variant: str = "mediated"
    n_users: int = 42
    horizon: int = 100
    seed: int = 0
    agent: Optional[dict] = None  # optional agent config block carried in JSON

    def __post_init__(self) -> None:
        if self.positive_level not in POSITIVE_LEVELS:
            raise ValueError(f"positive_level must be one of {POSITIVE_LEVELS}")
        if self.negative_level not in NEGATIVE_LEVELS:
            raise ValueError(f"negative_level must be one of {NEGATIVE_LEVELS}")
        if self.model_variant not in MODEL_VARIANTS:
            raise ValueError(f"model_variant must be one of {MODEL_VARIANTS}")
        if self.horizon < 2:
            raise ValueError("horizon must be >= 2")
        if self.n_users < 1:
            raise ValueError("n_users must be >= 1")


@dataclass
class EnvState:
    e_prev: float
    r_prev: float
    t: int


# -- calibration helpers ---------------------------------------------------


def _gauss_hermite_expect(fn, mean: float, std: float, n: int = 101) -> float:
    """E[fn(X)] for X ~ N(mean, std^2) by Gauss-Hermite quadrature."""
    nodes, wts = np.polynomial.hermite_e.hermegauss(n)
    x = mean + std * nodes
    return float(np.dot(wts, fn(x)) / np.sqrt(2.0 * np.pi))


def _positive_factor(x, sigma2_r: float = SIGMA2_R, sigma2_m: float = SIGMA2_M):
    return x / np.sqrt(sigma2_r + sigma2_m * x * x)


@lru_cache(maxsize=1)
def _gen_r_m_coef() -> float:
    """Population mean of the reward regression's M-coefficient.

    The three published effect-size levels share one population factor
    E[f(theta)] = small_target / 0.5; solve the generator mean for it."""
    ratio = POSITIVE_TARGETS["small"] / 0.5
    h = lambda mu: _gauss_hermite_expect(_positive_factor, mu, USER_STD) - ratio
    return float(brentq(h, 1e-4, 2.0, xtol=1e-12))


def _positive_factor_mean() -> float:
    return _gauss_hermite_expect(_positive_factor, _gen_r_m_coef(), USER_STD)


def _solve_theta_e_i(target: float, theta_r_e: float, sigma2_r: float,
                     sigma2_e: float) -> float:
    """Per-user burden coefficient hitting the standardized negative target."""
    if target == 0.0:
        return 0.0
    return -target * math.sqrt(sigma2_r + sigma2_e * theta_r_e ** 2) / theta_r_e


def _base_theta_m6() -> float:
    """Vanilla A*R coefficient solved so the minimal-level population-average
    positive effect size matches its target."""
    return POSITIVE_TARGETS["minimal"] / _positive_factor_mean()




def _gen_r_mean() -> np.ndarray:
    mean = PRIOR_R_MEAN.copy()
    mean[1] = _gen_r_m_coef()
    mean[2] = GEN_R_E_COEF
    return mean


def base_user() -> UserParams:
    """Population-center parameters before scenario calibration."""
    theta_m = PRIOR_M_MEAN.copy()
    theta_m[6] = _base_theta_m6()
    return UserParams(
        theta_C=0.0,
        theta_M=theta_m,
        theta_E=BASE_E_MEAN.copy(),
        theta_E_I=0.0,
        theta_E_IE=0.0,
        theta_R=_gen_r_mean(),
        theta_O=PRIOR_O_MEAN.copy(),
    )


# -- dynamics ---------------------------------------------------------------


def _interaction_row(e: float, r: float, c: float, a: float) -> np.ndarray:
    return np.array([1.0, e, r, c, a, a * e, a * r, a * c])


def step_dynamics(p: UserParams, state: EnvState, i: int, a: int,
                  rng: np.random.Generator) -> Tuple[float, float, float, float, float]:
    """Draw one period's (C, M, E, R, O), in that causal order."""
    e0, r0 = state.e_prev, state.r_prev
    c = p.theta_C + math.sqrt(p.sigma2_C) * rng.standard_normal()
    row = _interaction_row(e0, r0, c, a)
    m = float(p.theta_M @ row) + math.sqrt(p.sigma2_M) * rng.standard_normal()
    if p.general_model is not None:
        e = (float(p.general_model["E"] @ row) + p.theta_E_I * i + p.theta_E_IE * i * e0
             + math.sqrt(p.sigma2_E) * rng.standard_normal())
        r = float(p.general_model["R"] @ row) + math.sqrt(p.sigma2_R) * rng.standard_normal()
        o = float(p.general_model["O"] @ row) + math.sqrt(p.sigma2_O) * rng.standard_normal()
    else:
        te = p.theta_E
        e = (te[0] + te[1] * e0 + te[2] * a + te[3] * a * e0
             + p.theta_E_I * i + p.theta_E_IE * i * e0
             + math.sqrt(p.sigma2_E) * rng.standard_normal())
        tr = p.theta_R
        r = tr[0] + tr[1] * m + tr[2] * e + tr[3] * r0 + math.sqrt(p.sigma2_R) * rng.standard_normal()
        o = p.theta_O[0] + p.theta_O[1] * r + math.sqrt(p.sigma2_O) * rng.standard_normal()
    for v in (c, m, e, r, o):
        if not math.isfinite(v):
            raise FloatingPointError("non-finite testbed draw")
    return c, m, e, r, o


def positive_effect_size(p: UserParams) -> float:
    """Standardized effect of A*R on R through M."""
    denom = math.sqrt(p.sigma2_R + p.sigma2_M * p.theta_R[1] ** 2)
    if denom == 0.0:
        raise ZeroDivisionError("zero effect-size denominator")
    return float(p.theta_M[6] * p.theta_R[1] / denom)


def negative_effect_size(p: UserParams) -> float:
    """Standardized (signed) effect of I on R through E."""
    denom = math.sqrt(p.sigma2_R + p.sigma2_E * p.theta_R[2] ** 2)
    if denom == 0.0:
        raise ZeroDivisionError("zero effect-size denominator")
    return float(p.theta_E_I * p.theta_R[2] / denom)


def _general_blocks(p: UserParams) -> Dict[str, np.ndarray]:
    """Marginalize the mediators out of the mediated model to seed the
    general-variant coefficient blocks (basis [1,E,R,C,A,A*E,A*R,A*C])."""
    tm, te, tr, to = p.theta_M, p.theta_E, p.theta_R, p.theta_O
    e_gen = np.array([te[0], te[1], 0.0, 0.0, te[2], te[3], 0.0, 0.0])
    # R' = r0 + r1*M + r2*E' + r3*R with M and E' expanded in the basis
    r_gen = tr[1] * tm + tr[2] * e_gen
    r_gen[0] += tr[0]
    r_gen[2] += tr[3]
    o_gen = to[1] * r_gen.copy()
    o_gen[0] += to[0]
    return {"E": e_gen, "R": r_gen, "O": o_gen}


def calibrate_scenario(base: UserParams, cfg: ScenarioConfig) -> UserParams:
    """Apply scenario levels to one user's parameters."""
    p = base.copy()
    if cfg.positive_level == "small":
        p.theta_M[6] = 0.5
    elif cfg.positive_level == "medium":
        p.theta_M[6] = 0.8
    p.theta_R[2] = max(p.theta_R[2], R_E_CLIP)
    # closed-loop lag of the reward chain: direct lag plus the indirect
    # R -> M -> R path, which is strongest when every period is treated
    feedback = p.theta_R[1] * (p.theta_M[2] + max(p.theta_M[6], 0.0))
    p.theta_R[3] = min(p.theta_R[3], RHO_MAX - feedback)
    if cfg.negative_level == "zero":
        p.theta_E_I = 0.0
        p.theta_E_IE = 0.0
    else:
        p.theta_E_I = _solve_theta_e_i(NEGATIVE_TARGETS[cfg.negative_level],
                                       p.theta_R[2], p.sigma2_R, p.sigma2_E)
        p.theta_E_IE = -0.1 * p.theta_E_I
    if not cfg.emission_informative:
        p.theta_O[1] = 0.0
    # center the latent reward at zero under the passive policy, matching
    # the standardized scale of the source data
    e_mean = p.theta_E[0] / (1.0 - p.theta_E[1])
    m_mean = p.theta_M[0] + p.theta_M[1] * e_mean + p.theta_M[3] * p.theta_C
    p.theta_R[0] = -(p.theta_R[1] * m_mean + p.theta_R[2] * e_mean)
    if cfg.model_variant == "general":
        p.general_model = _general_blocks(p)
    else:
        p.general_model = None
    return p


def generate_users(cfg: ScenarioConfig, rng: np.random.Generator) -> List[UserParams]:
    """Synthetic user population: block coefficients drawn around the prior
    means with per-coordinate std 0.05, then scenario calibration."""
    center = base_user()
    users = []
    for _ in range(cfg.n_users):
        raw = UserParams(
            theta_C=center.theta_C + USER_STD * rng.standard_normal(),
            theta_M=center.theta_M + USER_STD * rng.standard_normal(8),
            theta_E=center.theta_E + USER_STD * rng.standard_normal(4),
            theta_E_I=0.0,
            theta_E_IE=0.0,
            theta_R=_gen_r_mean() + USER_STD * rng.standard_normal(4),
            theta_O=PRIOR_O_MEAN + USER_STD * rng.standard_normal(2),
        )
        users.append(calibrate_scenario(raw, cfg))
    return users


# -- JSON round trip --------------------------------------------------------


def _fmt(x: float) -> float:
    return float(f"{x:.17g}")


def users_to_json(users: List[UserParams]) -> str:
    out = []
    for p in users:
        d = {
            "theta_C": _fmt(p.theta_C),
            "theta_M": [_fmt(v) for v in p.theta_M],
            "theta_E": [_fmt(v) for v in p.theta_E],
            "theta_E_I": _fmt(p.theta_E_I),
            "theta_E_IE": _fmt(p.theta_E_IE),
            "theta_R": [_fmt(v) for v in p.theta_R],
            "theta_O": [_fmt(v) for v in p.theta_O],
            "sigma2": {k: _fmt(getattr(p, f"sigma2_{k}")) for k in "CMERO"},
        }
        if p.general_model is not None:
            d["general_model"] = {k: [_fmt(v) for v in vec] for k, vec in p.general_model.items()}
        out.append(d)
    return json.dumps(out, indent=1)


def users_from_json(text: str) -> List[UserParams]:
    users = []
    for d in json.loads(text):
        gm = None
        if "general_model" in d:
            gm = {k: np.asarray(v, dtype=float) for k, v in d["general_model"].items()}
        s = d.get("sigma2", {})
        users.append(UserParams(
            theta_C=d["theta_C"], theta_M=d["theta_M"], theta_E=d["theta_E"],
            theta_E_I=d["theta_E_I"], theta_E_IE=d["theta_E_IE"],
            theta_R=d["theta_R"], theta_O=d["theta_O"],
            sigma2_C=s.get("C", SIGMA2_C), sigma2_M=s.get("M", SIGMA2_M),
            sigma2_E=s.get("E", SIGMA2_E), sigma2_R=s.get("R", SIGMA2_R),
            sigma2_O=s.get("O", SIGMA2_O), general_model=gm))
    return users


def scenario_from_json(text: str) -> ScenarioConfig:
    d = json.loads(text)
    return ScenarioConfig(
        positive_level=d.get("positive_level", "minimal"),
        negative_level=d.get("negative_level", "zero"),
        emission_informative=d.get("emission_informative", True),
        model_variant=d.get("model_variant", "mediated"),
        n_users=d.get("n_users", 42),
        horizon=d.get("horizon", 100),
        seed=d.get("seed", 0),
        agent=d.get("agent"),
    )


# -- environment -------------------------------------------------------------


class HeartStepsEnv:
    """Environment wrapper enforcing the observe/measure/control protocol.

    Observed state per period t: (M_{t-1}, E_{t-1}); emission O_{t-1} of the
    latent reward R_{t-1}; measuring reveals R_{t-1} exactly.
    """

    def __init__(self, params: UserParams, gamma: float = 0.9):
        self.params = params
        self.spec = AomdpSpec(observed_state_dim=2, latent_state_dim=1,
                              emission_dim=1, gamma=gamma)
        self._rng: Optional[np.random.Generator] = None
        self._phase = "reset"
        self.state = EnvState(e_prev=0.0, r_prev=0.0, t=0)
        self._context = 0.0
        self._measured = 0

    def reset(self, rng: np.random.Generator) -> PeriodObservation:
        self._rng = rng
        e0 = rng.standard_normal()
        r0 = rng.standard_normal()
        p = self.params
        if p.general_model is not None:
            # the general testbed still emits O_0 from R_0 at baseline
            o0 = p.theta_O[0] + p.theta_O[1] * r0 + math.sqrt(p.sigma2_O) * rng.standard_normal()
        else:
            o0 = p.theta_O[0] + p.theta_O[1] * r0 + math.sqrt(p.sigma2_O) * rng.standard_normal()
        self.state = EnvState(e_prev=e0, r_prev=r0, t=1)
        self._phase = "measure"
        return PeriodObservation(z=(math.nan, e0), o=(o0,))

    def step_measure(self, i: int) -> Optional[float]:
        if self._phase != "measure":
            raise ProtocolError(f"step_measure out of order (phase={self._phase})")
        if i not in (0, 1):
            raise ValueError("measure action must be 0 or 1")
        self._measured = i
        self._phase = "context"
        return self.state.r_prev if i == 1 else None

    def observe_context(self) -> float:
        if self._phase != "context":
            raise ProtocolError(f"observe_context out of order (phase={self._phase})")
        p = self.params
        assert self._rng is not None
        self._context = p.theta_C + math.sqrt(p.sigma2_C) * self._rng.standard_normal()
        self._phase = "control"
        return self._context

    def step_control(self, a: int) -> Tuple[PeriodObservation, float]:
        if self._phase != "control":
            raise ProtocolError(f"step_control out of order (phase={self._phase})")
        if a not in (0, 1):
            raise ValueError("control action must be 0 or 1")
        p = self.params
        assert self._rng is not None
        rng = self._rng
        e0, r0 = self.state.e_prev, self.state.r_prev
        c = self._context
        row = _interaction_row(e0, r0, c, a)
        m = float(p.theta_M @ row) + math.sqrt(p.sigma2_M) * rng.standard_normal()
        i = self._measured
        if p.general_model is not None:
            e = (float(p.general_model["E"] @ row) + p.theta_E_I * i + p.theta_E_IE * i * e0
                 + math.sqrt(p.sigma2_E) * rng.standard_normal())
            r = float(p.general_model["R"] @ row) + math.sqrt(p.sigma2_R) * rng.standard_normal()
            o = float(p.general_model["O"] @ row) + math.sqrt(p.sigma2_O) * rng.standard_normal()
        else:
            te = p.theta_E
            e = (te[0] + te[1] * e0 + te[2] * a + te[3] * a * e0
                 + p.theta_E_I * i + p.theta_E_IE * i * e0
                 + math.sqrt(p.sigma2_E) * rng.standard_normal())
            tr = p.theta_R
            r = tr[0] + tr[1] * m + tr[2] * e + tr[3] * r0 + math.sqrt(p.sigma2_R) * rng.standard_normal()
            o = p.theta_O[0] + p.theta_O[1] * r + math.sqrt(p.sigma2_O) * rng.standard_normal()
        self.state = EnvState(e_prev=e, r_prev=r, t=self.state.t + 1)
        self._phase = "measure"
        return PeriodObservation(z=(m, e), o=(o,)), r
