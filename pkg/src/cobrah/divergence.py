"""Bernoulli and trajectory KL divergences and the confidence radii built on them."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import EmptyHistory, InsufficientData, InvalidProbability, RadiusUndefined
from .history import ObservationLog
from .model import ArmSpec, DynamicsSpec, RewardModelSpec, StateVec, mean_reward, rollout

KL_CLIP = 1e-9


@dataclass(frozen=True)
class ConcentrationConfig:
    """Constants of the trajectory-KL concentration bound.

    Defaults describe the logistic instantiation on X = [0,1]^2, Theta = [0,1]:
    a Bernoulli reward is 1/2-sub-Gaussian, and the log-likelihood ratio is
    linear in r with slope logit(g') - logit(g), bounded by the logit range 3.
    """

    L_f: float = 1.0
    L_p: float = 3.0
    L_g: float = 0.25 * math.sqrt(3.0)
    sigma: float = 0.5
    diam_X: float = math.sqrt(2.0)
    diam_XTheta: float = math.sqrt(3.0)
    d_x: int = 2
    d_theta: int = 1

    def __post_init__(self):
        if not 0.0 < self.L_f <= 1.0:
            raise ValueError(f"L_f must lie in (0, 1], got {self.L_f}")
        for name in ("L_p", "L_g", "sigma", "diam_X", "diam_XTheta", "d_x", "d_theta"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


class VarianceEstimator(enum.Enum):
    EMPIRICAL_LLR = "empirical_llr"


@dataclass(frozen=True)
class TunedRadiusConfig:
    eta: float = 1.0
    variance_estimator: VarianceEstimator = VarianceEstimator.EMPIRICAL_LLR
    # below this many observations the variance estimate is not trusted and the cap is used
    min_observations: int = 2

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        if self.min_observations < 2:
            raise ValueError("min_observations must be at least 2")

    @property
    def cap(self) -> float:
        return self.eta / 4.0


def _as_params(p) -> tuple[float, StateVec]:
    if isinstance(p, tuple) and len(p) == 2 and isinstance(p[1], StateVec):
        return float(p[0]), p[1]
    theta, b, a = (float(v) for v in p)
    return theta, StateVec(b, a)


def bernoulli_kl(p: float, q: float) -> float:
    """KL(Bern(p) || Bern(q)); ``q`` is clipped away from {0, 1}."""
    if math.isnan(p) or math.isnan(q):
        raise InvalidProbability("NaN probability")
    if not (0.0 <= p <= 1.0 and 0.0 <= q <= 1.0):
        raise InvalidProbability(f"probabilities must lie in [0, 1], got p={p}, q={q}")
    q = min(max(q, KL_CLIP), 1.0 - KL_CLIP)
    kl = 0.0
    if p > 0.0:
        kl += p * math.log(p / q)
    if p < 1.0:
        kl += (1.0 - p) * math.log((1.0 - p) / (1.0 - q))
    return max(kl, 0.0)


def _mean_path(params, actions, dyn: DynamicsSpec, model: RewardModelSpec) -> list[float]:
    theta, x0 = _as_params(params)
    arm = ArmSpec(theta, dyn, x0, model)
    return [mean_reward(model, theta, x) for x in rollout(arm, actions)]


def trajectory_kl(
    params_true,
    params_alt,
    actions: Sequence[int],
    observed_rounds: Sequence[int],
    dynamics: DynamicsSpec,
    model: RewardModelSpec = RewardModelSpec(),
) -> float:
    """Sum over observed rounds of KL between the reward laws that two
    (theta, x0) pairs induce when driven by the same action sequence.

    ``observed_rounds`` are 1-based round indices into ``actions``.
    """
    if len(observed_rounds) == 0:
        raise EmptyHistory("no observed rounds")
    rounds = [int(t) for t in observed_rounds]
    if min(rounds) < 1 or max(rounds) > len(actions):
        raise ValueError("observed rounds must lie in 1..len(actions)")
    g_true = _mean_path(params_true, actions, dynamics, model)
    g_alt = _mean_path(params_alt, actions, dynamics, model)
    return sum(bernoulli_kl(g_true[t - 1], g_alt[t - 1]) for t in rounds)


def c_f_constant(cfg: ConcentrationConfig) -> float:
    d = cfg.d_x + cfg.d_theta
    first = 8.0 * cfg.L_f * cfg.diam_X * math.sqrt(math.pi)
    second = 48.0 * math.sqrt(2.0) * 2.0 ** (1.0 / d) * cfg.L_f * cfg.diam_XTheta * math.sqrt(math.pi * d)
    return first + second


def confidence_scale(cfg: ConcentrationConfig, alpha: float) -> float:
    """B(alpha) = c_f / sqrt(log(1/alpha)) + L_p * sigma * sqrt(2)."""
    if not 0.0 < alpha < 1.0:
        raise RadiusUndefined(f"alpha must lie in (0, 1), got {alpha}")
    return c_f_constant(cfg) / math.sqrt(math.log(1.0 / alpha)) + cfg.L_p * cfg.sigma * math.sqrt(2.0)


def concentration_threshold(cfg: ConcentrationConfig, alpha: float, n: int) -> float:
    """Level that the per-observation trajectory KL exceeds with probability <= alpha."""
    return confidence_scale(cfg, alpha) * math.sqrt(math.log(1.0 / alpha) / n)


def radius_theoretical(cfg: ConcentrationConfig, t: float, pulls: int) -> float:
    if t < 2:
        raise RadiusUndefined(f"radius needs t >= 2, got {t}")
    if pulls < 1:
        raise RadiusUndefined(f"radius needs at least one pull, got {pulls}")
    log_t = math.log(t)
    scale = c_f_constant(cfg) / (2.0 * math.sqrt(log_t)) + cfg.L_p * cfg.sigma * math.sqrt(2.0)
    return scale * math.sqrt(4.0 * log_t / pulls)


def radius_tuned(cfg: TunedRadiusConfig, variance_est: float, t: float, pulls: int) -> float:
    if variance_est < 0:
        raise ValueError("variance estimate must be non-negative")
    if pulls < 1:
        raise RadiusUndefined(f"radius needs at least one pull, got {pulls}")
    return math.sqrt(min(cfg.cap, variance_est) * math.log(t) / pulls)


def llr_terms(rewards: np.ndarray, g_alt: np.ndarray, g_hat: np.ndarray) -> np.ndarray:
    """Per-round log-likelihood ratios log p(r | alt) - log p(r | mle)."""
    g_hat = np.clip(g_hat, KL_CLIP, 1.0 - KL_CLIP)
    g_alt = np.clip(g_alt, KL_CLIP, 1.0 - KL_CLIP)
    return rewards * np.log(g_alt / g_hat) + (1.0 - rewards) * np.log((1.0 - g_alt) / (1.0 - g_hat))


def sample_variance(values: Sequence[float]) -> float:
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        raise InsufficientData("variance needs at least two values")
    return float(np.var(values, ddof=1))


def estimate_trajectory_variance(
    obs: ObservationLog,
    mle,
    alt,
    dynamics: DynamicsSpec,
    model: RewardModelSpec = RewardModelSpec(),
) -> float:
    """Plug-in variance of the per-round log-likelihood ratio between ``alt``
    and the fitted parameters ``mle`` over the observed rounds."""
    rounds = obs.observed_rounds
    if rounds.size < 2:
        raise InsufficientData(f"need two observed rounds, have {rounds.size}")
    actions = obs.actions
    g_hat = np.array(_mean_path(mle, actions, dynamics, model))[rounds - 1]
    g_alt = np.array(_mean_path(alt, actions, dynamics, model))[rounds - 1]
    return sample_variance(llr_terms(obs.rewards, g_alt, g_hat))
