"""Per-arm observation history shared by estimation and divergence code."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np


class Observation(NamedTuple):
    round: int
    action: int
    observed: bool
    reward: int | None


@dataclass
class ObservationLog:
    """Every elapsed round of one arm: the action taken and, when seen, the reward.

    Rounds are 1-based and consecutive because the arm's state moves every
    round whether or not it was selected.
    """

    arm_id: int = 0
    entries: list[Observation] = field(default_factory=list)

    @classmethod
    def from_arrays(cls, actions: Sequence[int], rewards: Sequence, arm_id: int = 0) -> "ObservationLog":
        """Build from parallel sequences; a reward of ``None`` or NaN means unobserved."""
        log = cls(arm_id)
        for y, r in zip(actions, rewards):
            if r is None or (isinstance(r, float) and np.isnan(r)):
                log.append(int(y))
            else:
                log.append(int(y), int(r))
        return log

    def append(self, action: int, reward: int | None = None) -> Observation:
        if action not in (0, 1):
            raise ValueError(f"action must be 0 or 1, got {action}")
        if reward is not None and reward not in (0, 1):
            raise ValueError(f"reward must be 0 or 1, got {reward}")
        obs = Observation(len(self.entries) + 1, int(action), reward is not None, reward)
        self.entries.append(obs)
        return obs

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def actions(self) -> np.ndarray:
        return np.array([e.action for e in self.entries], dtype=np.int8)

    @property
    def observed_rounds(self) -> np.ndarray:
        return np.array([e.round for e in self.entries if e.observed], dtype=np.int64)

    @property
    def rewards(self) -> np.ndarray:
        """Rewards of the observed rounds, aligned with ``observed_rounds``."""
        return np.array([e.reward for e in self.entries if e.observed], dtype=float)

    @property
    def pull_count(self) -> int:
        return sum(e.action for e in self.entries)

    @property
    def n_observed(self) -> int:
        return sum(1 for e in self.entries if e.observed)
