"""COBRAH policies, baselines and super-arm selection rules."""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .divergence import ConcentrationConfig, TunedRadiusConfig, radius_theoretical
from .errors import CapacityExceedsArms
from .estimation import Evidence, MleResult, SolverConfig, TunedRadius, _fit, _solve
from .model import IDENTITY_MAP, DynamicsSpec, RewardModelSpec, SuperArm, compose_step

SB = "sb"
FF = "ff"


def _check_capacity(m: int, capacity: int) -> None:
    if capacity < 1:
        raise ValueError(f"capacity must be at least 1, got {capacity}")
    if capacity > m:
        raise CapacityExceedsArms(f"capacity {capacity} exceeds number of arms {m}")


def select_top_c(values: Sequence[float], capacity: int) -> SuperArm:
    """The ``capacity`` largest values; ties go to the lower index."""
    values = np.asarray(values, dtype=float)
    _check_capacity(values.size, capacity)
    order = np.lexsort((np.arange(values.size), -values))
    return SuperArm.of(order[:capacity])


def select_ff(values_by_action, capacity: int) -> SuperArm:
    """Maximise sum_i g_i(y_i) subject to sum_i y_i <= capacity.

    ``values_by_action`` has shape (m, 2): column 0 is the arm's value when
    visited, column 1 when not. The aggregate decomposes, so the best set takes
    the largest non-negative gains g_i(1) - g_i(0).
    """
    pairs = np.asarray(values_by_action, dtype=float)
    m = pairs.shape[0]
    _check_capacity(m, capacity)
    gains = _gains(pairs[:, 0], pairs[:, 1])
    order = np.lexsort((np.arange(m), -gains))
    chosen = [i for i in order[:capacity] if gains[i] >= 0]
    return SuperArm.of(chosen)


def _gains(visit: np.ndarray, rest: np.ndarray) -> np.ndarray:
    with np.errstate(invalid="ignore"):
        gains = visit - rest
    # both infinite: nothing is known either way
    return np.where(np.isnan(gains), 0.0, gains)


def init_rounds(m: int, capacity: int) -> int:
    return -(-m // capacity)


def init_block(t: int, m: int, capacity: int) -> SuperArm:
    """Round ``t`` (1-based) of the covering phase: consecutive index blocks."""
    start = (t - 1) * capacity
    return SuperArm.of(range(start, min(start + capacity, m)))


def sw_window(m: int, capacity: int, horizon: int) -> int:
    """Sliding-window length min{(m/C)^(1/3), T}, rounded up, at least 1."""
    return max(1, min(math.ceil((m / capacity) ** (1.0 / 3.0) - 1e-12), horizon))


def sw_window_general(m: int, horizon: int, triggered: int, variation: float) -> float:
    """Distribution-independent window m^(1/3) T^(2/3) K^(-1/3) V^(-2/3), capped at T."""
    return min(m ** (1 / 3) * horizon ** (2 / 3) * triggered ** (-1 / 3) * variation ** (-2 / 3), horizon)


@dataclass(frozen=True)
class SWConfig:
    window: int
    triggered: int
    variation: float | None = None

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("window must be at least 1")


@dataclass
class PolicyTrace:
    chosen: list[SuperArm] = field(default_factory=list)
    pulls: np.ndarray | None = None
    ucbs: list[np.ndarray] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.chosen)


class Policy:
    """Shared bookkeeping: ``select(t)`` then ``observe(t, chosen, rewards)``.

    ``rewards`` has one entry per arm, NaN where nothing was observed.
    """

    name = "policy"
    covers_arms = True

    def __init__(self, m: int, capacity: int, feedback: str = SB):
        _check_capacity(m, capacity)
        if feedback not in (SB, FF):
            raise ValueError(f"feedback must be 'sb' or 'ff', got {feedback!r}")
        self.m = m
        self.capacity = capacity
        self.feedback = feedback
        self._trace = PolicyTrace(pulls=np.zeros(m, dtype=np.int64))

    @property
    def n_init(self) -> int:
        return init_rounds(self.m, self.capacity) if self.covers_arms else 0

    def select(self, t: int) -> SuperArm:
        if t <= self.n_init:
            return init_block(t, self.m, self.capacity)
        return self._choose(t)

    def _choose(self, t: int) -> SuperArm:
        raise NotImplementedError

    def observe(self, t: int, chosen: SuperArm, rewards: np.ndarray) -> None:
        self._trace.chosen.append(chosen)
        self._trace.pulls[list(chosen.members)] += 1
        self._update(t, chosen.action_vector(self.m), np.asarray(rewards, dtype=float))

    def _update(self, t: int, actions: np.ndarray, rewards: np.ndarray) -> None:
        pass

    def trace(self) -> PolicyTrace:
        return self._trace


class RandomPolicy(Policy):
    name = "random"
    covers_arms = False

    def __init__(self, m, capacity, feedback=SB, rng: np.random.Generator | None = None):
        super().__init__(m, capacity, feedback)
        self.rng = rng if rng is not None else np.random.default_rng()

    def _choose(self, t):
        return SuperArm.of(self.rng.choice(self.m, self.capacity, replace=False))


class CUCB(Policy):
    """Empirical mean plus sqrt(3 ln t / (2 T_i)).

    Under full feedback each arm keeps separate statistics for visited and
    unvisited rounds so the two action values can be compared.
    """

    name = "cucb"

    def __init__(self, m, capacity, feedback=SB):
        super().__init__(m, capacity, feedback)
        self.sums = np.zeros((m, 2))
        self.counts = np.zeros((m, 2))

    def _stats(self):
        return self.sums, self.counts

    def _index(self, t, sums, counts):
        with np.errstate(divide="ignore", invalid="ignore"):
            idx = sums / counts + np.sqrt(3.0 * math.log(t) / (2.0 * counts))
        return np.where(counts > 0, idx, np.inf)

    def _choose(self, t):
        sums, counts = self._stats()
        if self.feedback == SB:
            index = self._index(t, sums[:, 0], counts[:, 0])
            self._trace.ucbs.append(index)
            return select_top_c(index, self.capacity)
        index = self._index(t, sums, counts)
        self._trace.ucbs.append(index)
        return select_ff(index, self.capacity)

    def _update(self, t, actions, rewards):
        seen = ~np.isnan(rewards)
        col = 0 if self.feedback == SB else None
        for i in np.flatnonzero(seen):
            c = col if col is not None else 1 - int(actions[i])
            self.sums[i, c] += rewards[i]
            self.counts[i, c] += 1


class SlidingWindowUCB(CUCB):
    """CUCB restricted to each arm's last ``window`` observations."""

    name = "sw-ucb"

    def __init__(self, m, capacity, feedback=SB, window: int = 1):
        super().__init__(m, capacity, feedback)
        if window < 1:
            raise ValueError("window must be at least 1")
        self.window = window
        self.recent = [[deque(maxlen=window), deque(maxlen=window)] for _ in range(m)]

    def _stats(self):
        sums = np.array([[sum(q) for q in arm] for arm in self.recent], dtype=float)
        counts = np.array([[len(q) for q in arm] for arm in self.recent], dtype=float)
        return sums, counts

    def _update(self, t, actions, rewards):
        for i in np.flatnonzero(~np.isnan(rewards)):
            c = 0 if self.feedback == SB else 1 - int(actions[i])
            self.recent[i][c].append(float(rewards[i]))


class _ArmTracker:
    """Incrementally maintained evidence for one arm."""

    def __init__(self, dynamics: DynamicsSpec, capacity: int = 64):
        self.dynamics = dynamics
        self.maps = np.empty((capacity, 4, 2))
        self.rewards = np.empty(capacity)
        self.n_obs = 0
        self.last = IDENTITY_MAP.copy()
        self.n_rounds = 0
        self.pulls = 0
        self.mle: MleResult | None = None
        self.stale = True
        self.ucb_arg: dict[int, np.ndarray] = {}

    def record(self, y: int, r: float) -> None:
        self.last = compose_step(self.last, self.dynamics, y)
        self.n_rounds += 1
        self.pulls += y
        if not math.isnan(r):
            if self.n_obs == self.maps.shape[0]:
                self.maps = np.concatenate([self.maps, np.empty_like(self.maps)])
                self.rewards = np.concatenate([self.rewards, np.empty_like(self.rewards)])
            self.maps[self.n_obs] = self.last
            self.rewards[self.n_obs] = r
            self.n_obs += 1
            self.stale = True

    def evidence(self) -> Evidence:
        return Evidence(self.maps[: self.n_obs], self.rewards[: self.n_obs], self.last, self.n_rounds, self.pulls)


class Cobrah(Policy):
    """Trajectory-KL UCB policy.

    The learner knows each arm's dynamics and reward link and estimates only
    (theta, x0). ``radius`` is ``"theoretical"`` for B(t^-4) sqrt(4 log t / T_i)
    or ``"tuned"`` for the variance-capped radius.
    """

    def __init__(self, dynamics: Sequence[DynamicsSpec], capacity: int, feedback: str = SB,
                 radius: str = "tuned", models: Sequence[RewardModelSpec] | RewardModelSpec | None = None,
                 concentration: ConcentrationConfig = ConcentrationConfig(),
                 tuned: TunedRadiusConfig = TunedRadiusConfig(),
                 solver: SolverConfig | None = None):
        super().__init__(len(dynamics), capacity, feedback)
        if radius not in ("theoretical", "tuned"):
            raise ValueError(f"radius must be 'theoretical' or 'tuned', got {radius!r}")
        if models is None or isinstance(models, RewardModelSpec):
            models = [models or RewardModelSpec()] * self.m
        self.models = list(models)
        self.radius_kind = radius
        self.concentration = concentration
        self.tuned = tuned
        self.solver = solver or SolverConfig.fast()
        self.arms = [_ArmTracker(d) for d in dynamics]
        self.name = f"cobrah-{feedback}" + ("-tuned" if radius == "tuned" else "")

    def _radius(self, t: int, tracker: _ArmTracker):
        if self.radius_kind == "tuned":
            return TunedRadius(self.tuned, t, tracker.pulls)
        return radius_theoretical(self.concentration, t, tracker.pulls)

    def arm_ucb(self, i: int, t: int, action: int = 1) -> float:
        tracker = self.arms[i]
        model = self.models[i]
        ev = tracker.evidence()
        if tracker.stale:
            warm = [tracker.mle.params] if tracker.mle is not None else []
            tracker.mle = _fit(ev, model, self.solver, warm)
            tracker.stale = False
        tmap = compose_step(tracker.last, tracker.dynamics, action)
        warm = [tracker.ucb_arg[action]] if action in tracker.ucb_arg else []
        res = _solve(ev, tracker.mle, tmap, self._radius(t, tracker), model, self.solver, warm)
        tracker.ucb_arg[action] = res.params
        return res.value

    def _choose(self, t):
        if self.feedback == SB:
            ucb = np.array([self.arm_ucb(i, t, 1) for i in range(self.m)])
            self._trace.ucbs.append(ucb)
            return select_top_c(ucb, self.capacity)
        ucb = np.array([[self.arm_ucb(i, t, 1), self.arm_ucb(i, t, 0)] for i in range(self.m)])
        self._trace.ucbs.append(ucb)
        return select_ff(ucb, self.capacity)

    def _update(self, t, actions, rewards):
        for i, tracker in enumerate(self.arms):
            tracker.record(int(actions[i]), float(rewards[i]))

    def mle(self, i: int) -> MleResult | None:
        return self.arms[i].mle
