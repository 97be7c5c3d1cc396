"""Environment loop, greedy dynamic oracle, regret accounting and replications."""
from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .divergence import TunedRadiusConfig
from .errors import ConfigError
from .estimation import SolverConfig
from .model import ArmSpec, SuperArm
from .policies import (
    CUCB,
    FF,
    SB,
    Cobrah,
    Policy,
    RandomPolicy,
    SlidingWindowUCB,
    init_rounds,
    select_ff,
    select_top_c,
    sw_window,
)

POLICY_IDS = ("cobrah", "cobrah-tuned", "cucb", "sw-ucb", "random")

# purpose tags for independent random streams
TAG_REWARD = 1
TAG_POLICY = 2


def stream(seed: int, replication: int, arm: int, tag: int) -> np.random.Generator:
    return np.random.default_rng([seed, replication, arm, tag])


@dataclass(frozen=True)
class PolicySpec:
    id: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.id not in POLICY_IDS:
            raise ConfigError(f"unknown policy {self.id!r}; expected one of {', '.join(POLICY_IDS)}")

    def label(self, feedback: str) -> str:
        if self.id.startswith("cobrah"):
            return self.id.replace("cobrah", f"cobrah-{feedback}")
        return self.id


@dataclass(frozen=True)
class CohortSource:
    """``kind`` is ``synthetic`` (uniform parameter ranges), ``enrollment``
    (habituation-style cohort) or ``fitted`` (rows written by the fitter)."""

    kind: str = "synthetic"
    m: int = 20
    seed: int | None = None
    path: str | None = None

    def __post_init__(self):
        if self.kind not in ("synthetic", "enrollment", "fitted"):
            raise ConfigError(f"unknown cohort kind {self.kind!r}")
        if self.kind == "fitted" and not self.path:
            raise ConfigError("fitted cohort needs a path")
        if self.kind != "fitted" and self.m < 1:
            raise ConfigError("cohort needs at least one arm")


@dataclass(frozen=True)
class ExperimentConfig:
    horizon: int
    cohort: CohortSource = CohortSource()
    capacity: int | None = None
    budget: float | None = None
    feedback: str = SB
    policies: tuple[PolicySpec, ...] = (PolicySpec("cobrah-tuned"),)
    replications: int = 1
    seed: int = 0
    burn_in: int = 30
    reward_window: int = 200
    enrollment_window: int = 5
    output: str = "runs/latest"

    def capacity_for(self, m: int) -> int:
        if self.capacity is not None:
            return self.capacity
        return max(1, math.floor(self.budget * m + 0.5))

    def validate(self, m: int) -> None:
        if self.feedback not in (SB, FF):
            raise ConfigError(f"feedback must be 'sb' or 'ff', got {self.feedback!r}")
        if self.capacity is None and self.budget is None:
            raise ConfigError("either capacity or budget must be set")
        if self.capacity is not None and self.budget is not None:
            raise ConfigError("set capacity or budget, not both")
        if self.budget is not None and not 0.0 < self.budget <= 1.0:
            raise ConfigError(f"budget must lie in (0, 1], got {self.budget}")
        C = self.capacity_for(m)
        if not 1 <= C <= m:
            raise ConfigError(f"capacity {C} must lie in 1..{m}")
        if self.horizon < init_rounds(m, C):
            raise ConfigError(f"horizon {self.horizon} shorter than the {init_rounds(m, C)} covering rounds")
        if self.replications < 1:
            raise ConfigError("replications must be at least 1")
        if not self.policies:
            raise ConfigError("no policies configured")
        if self.burn_in < 0 or self.reward_window < 1 or self.enrollment_window < 1:
            raise ConfigError("burn_in must be >= 0 and rolling windows >= 1")


@dataclass
class RoundRecord:
    round: int
    chosen: SuperArm
    means: np.ndarray
    rewards: np.ndarray
    oracle_chosen: SuperArm
    oracle_means: np.ndarray
    inst_regret: float
    cum_regret: float
    agg_reward: float
    agg_mean: float


class Cohort:
    """Vectorised ground truth for a list of arms."""

    def __init__(self, arms: Sequence[ArmSpec]):
        self.arms = list(arms)
        self.m = len(self.arms)
        self.theta = np.array([a.theta for a in arms])
        self.decay = np.array([[a.dynamics.d1, a.dynamics.d2] for a in arms])
        self.effect = np.array([[a.dynamics.q1, a.dynamics.q2] for a in arms])
        self.drift = np.array([[a.dynamics.k1, a.dynamics.k2] for a in arms])
        self.nu = np.array([a.reward_model.nu for a in arms])
        self.omega = np.array([a.reward_model.omega for a in arms], dtype=float)
        self.x0 = np.array([[a.x0.b, a.x0.a] for a in arms])

    def step(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        return np.clip(self.decay * states + self.effect * actions[:, None] + self.drift, 0.0, 1.0)

    def means(self, states: np.ndarray) -> np.ndarray:
        z = self.nu * self.theta + np.sum(self.omega * states, axis=1)
        return 1.0 / (1.0 + np.exp(-z))


def _as_cohort(arms) -> Cohort:
    return arms if isinstance(arms, Cohort) else Cohort(arms)


def oracle_step(arms, oracle_states: np.ndarray, capacity: int, feedback: str):
    """Greedy full-information choice on the oracle's own trajectory."""
    cohort = _as_cohort(arms)
    m = cohort.m
    visit = cohort.means(cohort.step(oracle_states, np.ones(m)))
    if feedback == SB:
        chosen = select_top_c(visit, capacity)
    else:
        rest = cohort.means(cohort.step(oracle_states, np.zeros(m)))
        chosen = select_ff(np.column_stack([visit, rest]), capacity)
    return chosen, cohort.step(oracle_states, chosen.action_vector(m).astype(float))


def aggregate(means: np.ndarray, chosen: SuperArm, feedback: str) -> float:
    if feedback == SB:
        return float(sum(means[i] for i in chosen.members))
    return float(means.sum())


def build_policy(spec: PolicySpec, arms: Sequence[ArmSpec], capacity: int, feedback: str,
                 horizon: int, rng: np.random.Generator) -> Policy:
    m = len(arms)
    p = dict(spec.params)
    if spec.id == "random":
        return RandomPolicy(m, capacity, feedback, rng)
    if spec.id == "cucb":
        return CUCB(m, capacity, feedback)
    if spec.id == "sw-ucb":
        window = int(p.get("window", sw_window(m, capacity, horizon)))
        return SlidingWindowUCB(m, capacity, feedback, window)
    fast = SolverConfig.fast()
    solver = SolverConfig(
        lattice=int(p.get("lattice", fast.lattice)),
        ucb_lattice=int(p.get("ucb_lattice", fast.ucb_lattice)),
        max_iter=int(p.get("max_iter", fast.max_iter)),
        gradient=str(p.get("gradient", fast.gradient)),
        penalty_rounds=int(p.get("penalty_rounds", fast.penalty_rounds)),
        tol=float(p.get("tol", fast.tol)),
    )
    return Cobrah(
        [a.dynamics for a in arms], capacity, feedback,
        radius="tuned" if spec.id == "cobrah-tuned" else "theoretical",
        models=[a.reward_model for a in arms],
        tuned=TunedRadiusConfig(eta=float(p.get("eta", 1.0)), min_observations=int(p.get("min_obs", 2))),
        solver=solver,
    )


def run_episode(cfg: ExperimentConfig, replication: int, arms: Sequence[ArmSpec] | None = None,
                policy: PolicySpec | None = None) -> list[RoundRecord]:
    """One replication of one policy; deterministic in (seed, replication)."""
    if arms is None:
        from .cohort import load_cohort

        arms = load_cohort(cfg.cohort, cfg.seed)
    cfg.validate(len(arms))
    spec = policy or cfg.policies[0]
    cohort = Cohort(arms)
    m = cohort.m
    C = cfg.capacity_for(m)
    agent = build_policy(spec, arms, C, cfg.feedback, cfg.horizon, stream(cfg.seed, replication, m, TAG_POLICY))
    noise = [stream(cfg.seed, replication, i, TAG_REWARD) for i in range(m)]
    states = cohort.x0.copy()
    oracle_states = cohort.x0.copy()
    cum = 0.0
    records = []
    for t in range(1, cfg.horizon + 1):
        chosen = agent.select(t)
        if len(chosen) > C:
            raise RuntimeError(f"policy {spec.id} exceeded capacity at round {t}")
        y = chosen.action_vector(m)
        states = cohort.step(states, y.astype(float))
        means = cohort.means(states)
        u = np.array([g.random() for g in noise])
        rewards = (u < means).astype(float)
        if cfg.feedback == SB:
            feedback = np.full(m, np.nan)
            feedback[y == 1] = rewards[y == 1]
        else:
            feedback = rewards.copy()
        agent.observe(t, chosen, feedback)
        oracle_chosen, oracle_states = oracle_step(cohort, oracle_states, C, cfg.feedback)
        oracle_means = cohort.means(oracle_states)
        inst = aggregate(oracle_means, oracle_chosen, cfg.feedback) - aggregate(means, chosen, cfg.feedback)
        cum += inst
        records.append(RoundRecord(
            t, chosen, means, feedback, oracle_chosen, oracle_means, inst, cum,
            aggregate(rewards, chosen, cfg.feedback), aggregate(means, chosen, cfg.feedback),
        ))
    return records


# -- metrics -------------------------------------------------------------------

def rolling_mean(series: Sequence[float], window: int) -> np.ndarray:
    """Trailing mean over the last ``window`` values (fewer at the start)."""
    x = np.asarray(series, dtype=float)
    csum = np.concatenate([[0.0], np.cumsum(x)])
    idx = np.arange(1, x.size + 1)
    lo = np.maximum(idx - window, 0)
    return (csum[idx] - csum[lo]) / (idx - lo)


def visit_intervals(rounds: Sequence[int]) -> list[int]:
    r = list(rounds)
    return [b - a for a, b in zip(r, r[1:])]


@dataclass
class PolicyMetrics:
    policy: str
    inst_regret: np.ndarray
    cum_regret: np.ndarray
    cum_reward: np.ndarray
    longrun_avg: np.ndarray
    rolling_avg: np.ndarray
    enrolled_count: np.ndarray
    enrolled_frac: np.ndarray
    rolling_enrollment: np.ndarray
    visit_counts: np.ndarray
    intervals: list[list[list[int]]]
    pulls: np.ndarray

    @property
    def replications(self) -> int:
        return self.cum_regret.shape[0]

    def mean(self, name: str) -> np.ndarray:
        return getattr(self, name).mean(axis=0)

    def sd(self, name: str) -> np.ndarray:
        values = getattr(self, name)
        return values.std(axis=0, ddof=1) if values.shape[0] > 1 else np.zeros(values.shape[1])

    def mean_enrollment(self, burn_in: int) -> float:
        return float(self.enrolled_frac[:, burn_in:].mean())


@dataclass
class MetricsBundle:
    config: ExperimentConfig
    m: int
    capacity: int
    policies: dict[str, PolicyMetrics]

    def __getitem__(self, label: str) -> PolicyMetrics:
        return self.policies[label]


def episode_metrics(records: list[RoundRecord], m: int, capacity: int, cfg: ExperimentConfig) -> dict:
    n = len(records)
    inst = np.array([r.inst_regret for r in records])
    reward = np.array([r.agg_reward for r in records])
    cum_reward = np.cumsum(reward)
    # successes seen by the learner: every arm under full feedback, the chosen ones otherwise
    enrolled = np.array([np.nansum(r.rewards) for r in records])
    skip = init_rounds(m, capacity)
    visits: list[list[int]] = [[] for _ in range(m)]
    for rec in records[skip:]:
        for i in rec.chosen.members:
            visits[i].append(rec.round)
    pulls = np.zeros(m, dtype=np.int64)
    for rec in records:
        pulls[list(rec.chosen.members)] += 1
    return dict(
        inst_regret=inst,
        cum_regret=np.cumsum(inst),
        cum_reward=cum_reward,
        longrun_avg=cum_reward / np.arange(1, n + 1),
        rolling_avg=rolling_mean(reward, cfg.reward_window),
        enrolled_count=enrolled,
        enrolled_frac=enrolled / m,
        rolling_enrollment=rolling_mean(enrolled / m, cfg.enrollment_window),
        visit_counts=np.array([len(v) for v in visits]),
        intervals=[visit_intervals(v) for v in visits],
        pulls=pulls,
    )


def _episode_job(args):
    cfg, replication, arms, spec = args
    records = run_episode(cfg, replication, arms, spec)
    return episode_metrics(records, len(arms), cfg.capacity_for(len(arms)), cfg)


def worker_count() -> int:
    raw = os.environ.get("COBRAH_THREADS", "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"COBRAH_THREADS must be an integer, got {raw!r}") from None
    if n < 0:
        raise ConfigError("COBRAH_THREADS must be >= 0")
    return n if n > 0 else (os.cpu_count() or 1)


def run_experiment(cfg: ExperimentConfig, arms: Sequence[ArmSpec] | None = None,
                   workers: int | None = None) -> MetricsBundle:
    if arms is None:
        from .cohort import load_cohort

        arms = load_cohort(cfg.cohort, cfg.seed)
    m = len(arms)
    cfg.validate(m)
    C = cfg.capacity_for(m)
    jobs = [(cfg, rep, list(arms), spec) for spec in cfg.policies for rep in range(cfg.replications)]
    workers = worker_count() if workers is None else workers
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            results = list(pool.map(_episode_job, jobs))
    else:
        results = []
        for job in jobs:
            try:
                results.append(_episode_job(job))
            except Exception as exc:
                raise RuntimeError(f"replication {job[1]} of {job[3].id} failed: {exc}") from exc
    policies = {}
    for k, spec in enumerate(cfg.policies):
        chunk = results[k * cfg.replications:(k + 1) * cfg.replications]
        stacked = {key: np.stack([r[key] for r in chunk]) for key in chunk[0] if key != "intervals"}
        label = spec.label(cfg.feedback)
        policies[label] = PolicyMetrics(policy=label, intervals=[r["intervals"] for r in chunk], **stacked)
    return MetricsBundle(cfg, m, C, policies)
