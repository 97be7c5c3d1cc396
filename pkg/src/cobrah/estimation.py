"""Constrained maximum likelihood of (theta, x0) and optimistic mean estimates."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels as K
from .divergence import KL_CLIP, TunedRadiusConfig
from .errors import EmptyHistory, InvalidRadius
from .history import ObservationLog
from .model import (
    IDENTITY_MAP,
    DynamicsSpec,
    RewardModelSpec,
    StateVec,
    compose_step,
    state_maps,
)

__all__ = [
    "SolverConfig",
    "MleResult",
    "UcbResult",
    "TunedRadius",
    "Evidence",
    "neg_log_likelihood",
    "fit_mle",
    "ucb_mean",
    "ucb_solve",
    "lattice_starts",
]


@dataclass(frozen=True)
class SolverConfig:
    """Multi-start projected-gradient settings shared by the MLE and UCB solvers."""

    lattice: int = 5
    ucb_lattice: int | None = None
    max_iter: int = 200
    step: float = 0.05
    tol: float = 1e-7
    gradient: str = "fd"
    fd_step: float = 1e-5
    penalty_init: float = 10.0
    penalty_rounds: int = 5
    feasibility_tol: float = 1e-6

    def __post_init__(self):
        if self.gradient not in ("fd", "analytic"):
            raise ValueError(f"gradient must be 'fd' or 'analytic', got {self.gradient!r}")
        if self.lattice < 0 or (self.ucb_lattice is not None and self.ucb_lattice < 0):
            raise ValueError("lattice sizes must be non-negative")

    @classmethod
    def fast(cls) -> "SolverConfig":
        """Lighter settings for running policies over long horizons."""
        return cls(lattice=2, ucb_lattice=2, max_iter=40, gradient="analytic", penalty_rounds=4, tol=1e-6)


@dataclass(frozen=True)
class MleResult:
    theta_hat: float
    x0_hat: StateVec
    neg_log_likelihood: float
    converged: bool

    @property
    def params(self) -> np.ndarray:
        return np.array([self.theta_hat, self.x0_hat.b, self.x0_hat.a])


@dataclass(frozen=True)
class UcbResult:
    value: float
    params: np.ndarray
    plug_in: float


@dataclass(frozen=True)
class TunedRadius:
    """Candidate-dependent radius sqrt(min(eta/4, V) log t / T_i), where V is the
    variance of per-round log-likelihood ratios between candidate and MLE."""

    cfg: TunedRadiusConfig
    t: float
    pulls: int

    @property
    def log_factor(self) -> float:
        return math.log(self.t) / self.pulls


@dataclass
class Evidence:
    """Observed-round state maps and rewards of one arm.

    ``maps[k]`` maps x0 to the state at the k-th observed round; ``last_map``
    maps x0 to the state after the latest elapsed round.
    """

    maps: np.ndarray
    rewards: np.ndarray
    last_map: np.ndarray = field(default_factory=lambda: IDENTITY_MAP.copy())
    n_rounds: int = 0
    pulls: int = 0

    @classmethod
    def from_log(cls, log: ObservationLog, dynamics: DynamicsSpec) -> "Evidence":
        actions = log.actions
        maps = state_maps(dynamics, actions)
        idx = log.observed_rounds - 1
        last = maps[-1] if len(actions) else IDENTITY_MAP.copy()
        return cls(
            np.ascontiguousarray(maps[idx]),
            log.rewards.astype(float),
            last,
            len(actions),
            int(actions.sum()) if len(actions) else 0,
        )

    @property
    def n_observed(self) -> int:
        return int(self.rewards.shape[0])


def lattice_starts(size: int) -> np.ndarray:
    if size <= 0:
        return np.empty((0, 3))
    axis = np.array([0.5]) if size == 1 else np.linspace(0.0, 1.0, size)
    mesh = np.meshgrid(axis, axis, axis, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def _stack_starts(lattice: int, warm: Sequence) -> np.ndarray:
    rows = [np.asarray(w, dtype=float).reshape(3) for w in warm if w is not None]
    base = lattice_starts(lattice)
    if rows:
        base = np.vstack([np.array(rows), base]) if base.size else np.array(rows)
    return np.ascontiguousarray(base)


def _logits(params: np.ndarray, maps: np.ndarray, model: RewardModelSpec) -> np.ndarray:
    lo, hi = maps[..., 2, :], maps[..., 3, :]
    x = np.minimum(np.maximum(maps[..., 0, :] * params[1:] + maps[..., 1, :], lo), hi)
    return model.nu * params[0] + x @ np.asarray(model.omega, dtype=float)


def _as_array(candidate) -> np.ndarray:
    if isinstance(candidate, MleResult):
        return candidate.params
    if isinstance(candidate, tuple) and len(candidate) == 2 and isinstance(candidate[1], StateVec):
        return np.array([candidate[0], candidate[1].b, candidate[1].a], dtype=float)
    return np.asarray(candidate, dtype=float).reshape(3)


def neg_log_likelihood(candidate, log: ObservationLog, dynamics: DynamicsSpec,
                       model: RewardModelSpec = RewardModelSpec()) -> float:
    """-sum log p(r_t | theta, x_t) over observed rounds, states rolled from x0."""
    if log.n_observed == 0:
        raise EmptyHistory("no observed rounds")
    ev = Evidence.from_log(log, dynamics)
    s = _logits(_as_array(candidate), ev.maps, model)
    r = ev.rewards
    return float(np.sum(r * np.logaddexp(0.0, -s) + (1.0 - r) * np.logaddexp(0.0, s)))


def _fit(ev: Evidence, model: RewardModelSpec, cfg: SolverConfig, warm: Sequence = ()) -> MleResult:
    if ev.n_observed == 0:
        raise EmptyHistory("no observed rounds")
    starts = _stack_starts(cfg.lattice, warm)
    if starts.shape[0] == 0:
        starts = lattice_starts(1)
    z, f, conv = K.fit_nll(
        starts, ev.maps, ev.rewards, float(model.nu), float(model.omega[0]), float(model.omega[1]),
        cfg.max_iter, cfg.step, cfg.tol, cfg.gradient == "fd", cfg.fd_step,
    )
    return MleResult(float(z[0]), StateVec(float(z[1]), float(z[2])), float(f * ev.n_observed), bool(conv))


def fit_mle(log: ObservationLog, dynamics: DynamicsSpec, model: RewardModelSpec = RewardModelSpec(),
            cfg: SolverConfig = SolverConfig(), warm_starts: Sequence = ()) -> MleResult:
    """Minimise the negative log-likelihood over (theta, b0, a0) in [0,1]^3."""
    if log.n_observed == 0:
        raise EmptyHistory("no observed rounds")
    return _fit(Evidence.from_log(log, dynamics), model, cfg, warm_starts)


def _target_map(ev: Evidence, dynamics: DynamicsSpec, log: ObservationLog | None,
                t: int, next_action: int) -> np.ndarray:
    if log is not None and t <= len(log):
        return IDENTITY_MAP.copy() if t == 0 else state_maps(dynamics, log.actions[:t])[-1]
    out = ev.last_map
    for _ in range(t - ev.n_rounds):
        out = compose_step(out, dynamics, next_action)
    return out


def _solve(ev: Evidence, mle: MleResult, tmap: np.ndarray, radius, model: RewardModelSpec,
           cfg: SolverConfig, warm: Sequence = ()) -> UcbResult:
    zhat = mle.params
    nu, w0, w1 = float(model.nu), float(model.omega[0]), float(model.omega[1])
    work = np.empty(3)
    plug_in = float(K.target_mean(zhat, tmap, nu, w0, w1, False, work))
    if isinstance(radius, TunedRadius) and ev.n_observed < radius.cfg.min_observations:
        radius = math.sqrt(radius.cfg.cap * radius.log_factor)
    if isinstance(radius, TunedRadius):
        mode, rad, cap, L = K.TUNED_RADIUS, 0.0, radius.cfg.cap, radius.log_factor
    else:
        if radius < 0:
            raise InvalidRadius(f"radius must be non-negative, got {radius}")
        if radius == 0:
            return UcbResult(plug_in, zhat, plug_in)
        mode, rad, cap, L = K.FIXED_RADIUS, float(radius), 0.0, 0.0
    if ev.n_observed == 0:
        raise EmptyHistory("no observed rounds")
    q = np.clip(1.0 / (1.0 + np.exp(-_logits(zhat, ev.maps, model))), KL_CLIP, 1.0 - KL_CLIP)
    lattice = cfg.lattice if cfg.ucb_lattice is None else cfg.ucb_lattice
    starts = _stack_starts(lattice, [zhat, *warm])
    value, z = K.maximise_target(
        starts, zhat, ev.maps, ev.rewards, np.log(q), np.log1p(-q), np.ascontiguousarray(tmap),
        nu, w0, w1, rad, mode, cap, L, cfg.max_iter, cfg.step, cfg.tol, cfg.gradient == "fd",
        cfg.fd_step, cfg.penalty_init, cfg.penalty_rounds, cfg.feasibility_tol,
    )
    return UcbResult(float(value), z, plug_in)


def ucb_solve(log: ObservationLog, mle: MleResult, t: int, radius, dynamics: DynamicsSpec,
              model: RewardModelSpec = RewardModelSpec(), cfg: SolverConfig = SolverConfig(),
              next_action: int = 1, warm_starts: Sequence = ()) -> UcbResult:
    """Maximise g(theta, f^t(x0)) over candidates within ``radius`` of the MLE in
    average trajectory KL. Rounds past the end of ``log`` use ``next_action``."""
    ev = Evidence.from_log(log, dynamics)
    tmap = _target_map(ev, dynamics, log, t, next_action)
    return _solve(ev, mle, tmap, radius, model, cfg, warm_starts)


def ucb_mean(log: ObservationLog, mle: MleResult, t: int, radius, dynamics: DynamicsSpec,
             model: RewardModelSpec = RewardModelSpec(), cfg: SolverConfig = SolverConfig(),
             next_action: int = 1, warm_starts: Sequence = ()) -> float:
    return ucb_solve(log, mle, t, radius, dynamics, model, cfg, next_action, warm_starts).value
