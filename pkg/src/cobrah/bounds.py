"""Regret-bound calculators and brute-force gap constants on small instances."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .divergence import ConcentrationConfig, bernoulli_kl, confidence_scale
from .errors import GapDegenerate, InvalidBound, TooLarge
from .model import ArmSpec, mean_reward, rollout

MAX_ARMS = 4
MAX_HORIZON = 20


def count_super_arms(m: int, capacity: int) -> int:
    """Number of non-empty subsets of at most ``capacity`` arms."""
    return sum(math.comb(m, k) for k in range(1, capacity + 1))


@dataclass(frozen=True)
class RegretBoundInputs:
    m: int
    capacity: int
    n_super_arms: int
    L_g: float
    diam_XTheta: float
    delta_min: float
    Delta_min: float | None = None
    horizon: int | None = None

    def __post_init__(self):
        for name in ("m", "capacity", "n_super_arms", "L_g", "diam_XTheta"):
            if getattr(self, name) <= 0:
                raise InvalidBound(f"{name} must be positive")
        if not self.delta_min > 0:
            raise InvalidBound(f"delta_min must be positive, got {self.delta_min}")


def theorem2_bound(inp: RegretBoundInputs, cfg: ConcentrationConfig = ConcentrationConfig(),
                   n: int | None = None) -> float:
    """C L_g diam |S| (4 B(ceil(m/C)^-4)^2 log n / delta^2 + m^2 pi^2 / 3).

    The same expression serves the full-feedback bound with delta_min replaced
    by its super-arm analogue.
    """
    n = inp.horizon if n is None else n
    if n is None or n < 1:
        raise InvalidBound("horizon n must be a positive integer")
    per_round = bad_round_increment(inp.capacity, inp.L_g, inp.diam_XTheta)
    return per_round * inp.n_super_arms * expected_bad_rounds(inp.m, inp.capacity, inp.delta_min, n, cfg)


def bad_round_increment(capacity: int, L_g: float, diam: float) -> float:
    """Largest regret a single suboptimal round can add."""
    return capacity * L_g * diam


def expected_bad_rounds(m: int, capacity: int, delta_min: float, n: int,
                        cfg: ConcentrationConfig = ConcentrationConfig()) -> float:
    """Bound on the expected number of bad rounds per super-arm."""
    if not delta_min > 0:
        raise InvalidBound(f"delta_min must be positive, got {delta_min}")
    blocks = -(-m // capacity)
    if blocks < 2:
        raise InvalidBound("the bound needs ceil(m/C) >= 2 for B to be defined")
    B = confidence_scale(cfg, float(blocks) ** -4)
    return 4.0 * B * B * math.log(n) / delta_min ** 2 + m ** 2 * math.pi ** 2 / 3.0


def _check_size(arms: Sequence[ArmSpec], actions: np.ndarray) -> None:
    if len(arms) > MAX_ARMS:
        raise TooLarge(f"brute force limited to {MAX_ARMS} arms, got {len(arms)}")
    if actions.shape[0] > MAX_HORIZON:
        raise TooLarge(f"brute force limited to horizon {MAX_HORIZON}, got {actions.shape[0]}")


def brute_force_delta_min(arms: Sequence[ArmSpec], actions, capacity: int) -> tuple[float, float]:
    """(Delta_min, delta_min) under a fixed action sequence.

    ``actions`` has shape (T, m). Delta_min is the smallest positive gap between
    the best and any other full-capacity super-arm over all rounds. delta_min is
    the smallest average trajectory KL, over rounds t and ordered pairs (i, j)
    whose means at t differ by at least Delta_min / (2m), between arm i and arm
    j's parameters driven through arm i's dynamics on the rounds i was pulled
    before t.
    """
    actions = np.asarray(actions, dtype=int)
    if actions.ndim != 2 or actions.shape[1] != len(arms):
        raise ValueError("actions must have shape (T, m)")
    _check_size(arms, actions)
    T, m = actions.shape
    if not 1 <= capacity <= m:
        raise ValueError(f"capacity must lie in 1..{m}")
    g = np.array([[mean_reward(a.reward_model, a.theta, x) for x in rollout(a, actions[:, i])]
                  for i, a in enumerate(arms)]).T
    gaps = []
    for t in range(T):
        values = sorted(g[t, list(s)].sum() for s in itertools.combinations(range(m), capacity))
        best = values[-1]
        gaps.extend(best - v for v in values[:-1] if best - v > 0)
    if not gaps:
        raise GapDegenerate("no super-arm is ever strictly worse than the best")
    Delta = min(gaps)

    # mean paths of arm j's (theta, x0) pushed through arm i's dynamics and actions
    cross = {}
    for i, j in itertools.permutations(range(m), 2):
        alt = ArmSpec(arms[j].theta, arms[i].dynamics, arms[j].x0, arms[i].reward_model)
        cross[i, j] = [mean_reward(alt.reward_model, alt.theta, x) for x in rollout(alt, actions[:, i])]
    delta = math.inf
    for t in range(1, T):
        for i, j in itertools.permutations(range(m), 2):
            if abs(g[t, i] - g[t, j]) < Delta / (2 * m):
                continue
            pulled = [s for s in range(t) if actions[s, i] == 1]
            if not pulled:
                continue
            kl = sum(bernoulli_kl(g[s, i], cross[i, j][s]) for s in pulled)
            delta = min(delta, kl / len(pulled))
    if not math.isfinite(delta):
        raise GapDegenerate("no arm pair separated by Delta_min / (2m) after a pull")
    return Delta, delta
