"""Ground-truth world model: states, clipped affine dynamics, logistic rewards."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyHistory, InvalidMean


def _clamp01(v: float) -> float:
    return min(max(v, 0.0), 1.0)


@dataclass(frozen=True)
class StateVec:
    """Beneficial factor ``b`` and adverse factor ``a`` of one arm."""

    b: float
    a: float

    def as_array(self) -> np.ndarray:
        return np.array([self.b, self.a], dtype=float)

    def clamped(self) -> "StateVec":
        return StateVec(_clamp01(self.b), _clamp01(self.a))

    def in_box(self) -> bool:
        return 0.0 <= self.b <= 1.0 and 0.0 <= self.a <= 1.0


@dataclass(frozen=True)
class DynamicsSpec:
    """x' = clip(D x + Q y + K) with D = diag(d1, d2), Q = (q1, q2), K = (k1, k2)."""

    d1: float
    d2: float
    q1: float
    q2: float
    k1: float
    k2: float

    @classmethod
    def from_primitives(cls, d1, d2, q1p, q2p, k1, k2) -> "DynamicsSpec":
        # sampled q' values map to the action effect as q1 = -q'1 - k1, q2 = q'2 - k2
        return cls(d1, d2, -q1p - k1, q2p - k2, k1, k2)

    @classmethod
    def identity(cls) -> "DynamicsSpec":
        return cls(1.0, 1.0, 0.0, 0.0, 0.0, 0.0)

    @property
    def decay(self) -> np.ndarray:
        return np.array([self.d1, self.d2])

    @property
    def effect(self) -> np.ndarray:
        return np.array([self.q1, self.q2])

    @property
    def drift(self) -> np.ndarray:
        return np.array([self.k1, self.k2])

    def is_stable(self) -> bool:
        return max(abs(self.d1), abs(self.d2)) <= 1.0

    def as_tuple(self) -> tuple[float, ...]:
        return (self.d1, self.d2, self.q1, self.q2, self.k1, self.k2)


@dataclass(frozen=True)
class RewardModelSpec:
    """Logistic link g = 1 / (1 + exp(-(nu * theta + omega . x)))."""

    nu: float = 1.0
    omega: tuple[float, float] = (1.0, -1.0)

    def logit(self, theta: float, x: StateVec) -> float:
        return self.nu * theta + self.omega[0] * x.b + self.omega[1] * x.a

    def lipschitz(self) -> float:
        """Upper bound on the Lipschitz constant of ``mean_reward`` in (theta, x)."""
        return 0.25 * math.sqrt(self.nu**2 + self.omega[0] ** 2 + self.omega[1] ** 2)


@dataclass(frozen=True)
class ArmSpec:
    theta: float
    dynamics: DynamicsSpec
    x0: StateVec = StateVec(0.0, 0.0)
    reward_model: RewardModelSpec = field(default_factory=RewardModelSpec)

    def __post_init__(self):
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError(f"theta must lie in [0, 1], got {self.theta}")
        if not self.x0.in_box():
            raise ValueError(f"x0 must lie in [0, 1]^2, got {self.x0}")


@dataclass(frozen=True)
class SuperArm:
    """Sorted, duplicate-free set of arm indices chosen in one round."""

    members: tuple[int, ...] = ()

    @classmethod
    def of(cls, indices: Iterable[int], m: int | None = None, capacity: int | None = None) -> "SuperArm":
        members = tuple(sorted(int(i) for i in indices))
        if len(set(members)) != len(members):
            raise ValueError(f"duplicate arm indices in {members}")
        if members and members[0] < 0:
            raise ValueError("arm indices must be non-negative")
        if m is not None and members and members[-1] >= m:
            raise ValueError(f"arm index {members[-1]} out of range for {m} arms")
        if capacity is not None and len(members) > capacity:
            raise ValueError(f"super-arm of size {len(members)} exceeds capacity {capacity}")
        return cls(members)

    def __len__(self) -> int:
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    def __contains__(self, i) -> bool:
        return i in self.members

    def action_vector(self, m: int) -> np.ndarray:
        y = np.zeros(m, dtype=np.int8)
        y[list(self.members)] = 1
        return y


def mean_reward(spec: RewardModelSpec, theta: float, x: StateVec) -> float:
    z = spec.logit(theta, x)
    # split by sign so exp never overflows
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def step_dynamics(dyn: DynamicsSpec, x: StateVec, y: int, theta: float | None = None) -> StateVec:
    """One restless transition. ``theta`` is accepted for the general f(theta, x, y)
    signature; the piecewise-linear instantiation ignores it."""
    b = dyn.d1 * x.b + dyn.q1 * y + dyn.k1
    a = dyn.d2 * x.a + dyn.q2 * y + dyn.k2
    return StateVec(_clamp01(b), _clamp01(a))


def rollout(arm: ArmSpec, actions: Sequence[int]) -> list[StateVec]:
    """States x_1..x_T where x_t = f(x_{t-1}, y_t)."""
    if len(actions) == 0:
        raise EmptyHistory("rollout needs at least one action")
    x = arm.x0
    out = []
    for y in actions:
        x = step_dynamics(arm.dynamics, x, int(y), arm.theta)
        out.append(x)
    return out


def sample_reward(rng: np.random.Generator, mean: float) -> int:
    if not (0.0 <= mean <= 1.0):
        raise InvalidMean(f"mean must lie in [0, 1], got {mean}")
    return int(rng.random() < mean)


# -- clipped affine maps -------------------------------------------------------
#
# Every f^t restricted to one state component has the form
#     x0 -> min(max(alpha * x0 + beta, lo), hi)
# because composing a clip with an affine map and another clip stays in that
# family. A map is stored as a (4, 2) array: rows alpha, beta, lo, hi and one
# column per state component.

IDENTITY_MAP = np.array([[1.0, 1.0], [0.0, 0.0], [0.0, 0.0], [1.0, 1.0]])


def compose_step(state_map: np.ndarray, dyn: DynamicsSpec, y: int) -> np.ndarray:
    """Map of f(., y) applied after ``state_map``."""
    out = np.empty((4, 2))
    for c, (d, q, k) in enumerate(((dyn.d1, dyn.q1, dyn.k1), (dyn.d2, dyn.q2, dyn.k2))):
        alpha, beta, lo, hi = state_map[:, c]
        shift = q * y + k
        if d >= 0:
            new_lo, new_hi = d * lo + shift, d * hi + shift
        else:
            new_lo, new_hi = d * hi + shift, d * lo + shift
        out[0, c] = d * alpha
        out[1, c] = d * beta + shift
        out[2, c] = _clamp01(new_lo)
        out[3, c] = _clamp01(new_hi)
    return out


def state_maps(dyn: DynamicsSpec, actions: Sequence[int]) -> np.ndarray:
    """Stacked maps for f^1..f^T, shape (T, 4, 2)."""
    maps = np.empty((len(actions), 4, 2))
    current = IDENTITY_MAP
    for t, y in enumerate(actions):
        current = compose_step(current, dyn, int(y))
        maps[t] = current
    return maps


def apply_map(state_map: np.ndarray, x0: np.ndarray) -> np.ndarray:
    """Evaluate a (…, 4, 2) map stack at initial state(s) ``x0`` of shape (…, 2)."""
    alpha, beta, lo, hi = (state_map[..., i, :] for i in range(4))
    return np.minimum(np.maximum(alpha * x0 + beta, lo), hi)
