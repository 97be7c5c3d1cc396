"""Synthetic cohorts, historical visit/enrollment CSVs and grid-search fitting."""
from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, EmptyHistory, OrderError, ParseError
from .model import ArmSpec, DynamicsSpec, RewardModelSpec, StateVec

HISTORY_COLUMNS = ("patient_id", "period", "visited", "enrolled")
FITTED_COLUMNS = ("patient_id", "d1", "d2", "q1", "q2", "k1", "k2", "theta", "x0_b", "x0_a", "loglik")


@dataclass(frozen=True)
class SyntheticCohortSpec:
    """Uniform sampling ranges for each arm's parameters."""

    m: int
    seed: int = 0
    d: tuple[float, float] = (0.5, 1.0)
    q_prime: tuple[float, float] = (0.1, 2.0)
    k: tuple[float, float] = (0.1, 2.0)
    b: tuple[float, float] = (0.0, 1.0)
    a: tuple[float, float] = (0.0, 1.0)
    theta: tuple[float, float] = (0.0, 1.0)
    reward_model: RewardModelSpec = RewardModelSpec()

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("cohort needs at least one arm")


def generate_synthetic_cohort(spec: SyntheticCohortSpec) -> list[ArmSpec]:
    rng = np.random.default_rng(spec.seed)
    m = spec.m
    d1, d2 = rng.uniform(*spec.d, size=m), rng.uniform(*spec.d, size=m)
    q1p, q2p = rng.uniform(*spec.q_prime, size=m), rng.uniform(*spec.q_prime, size=m)
    k1, k2 = rng.uniform(*spec.k, size=m), rng.uniform(*spec.k, size=m)
    b0, a0 = rng.uniform(*spec.b, size=m), rng.uniform(*spec.a, size=m)
    theta = rng.uniform(*spec.theta, size=m)
    return [
        ArmSpec(
            float(theta[i]),
            DynamicsSpec.from_primitives(d1[i], d2[i], q1p[i], q2p[i], k1[i], k2[i]),
            StateVec(float(b0[i]), float(a0[i])),
            spec.reward_model,
        )
        for i in range(m)
    ]


@dataclass(frozen=True)
class EnrollmentCohortSpec:
    """Habituation-style cohort: a visit lowers the beneficial factor and raises
    the adverse one, and both recover slowly while an arm is left alone.

    Enrollment is a steep logistic in b - a, so an arm stays enrolled only while
    its beneficial factor dominates. Visits pay off once an arm has fallen out
    of enrollment, and harm an arm that is already enrolled.
    """

    m: int
    seed: int = 0
    d: tuple[float, float] = (0.85, 0.95)
    visit_effect: tuple[float, float] = (0.4, 0.6)
    drift: tuple[float, float] = (0.0, 0.02)
    theta: tuple[float, float] = (0.0, 1.0)
    slope: float = 12.0

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("cohort needs at least one arm")
        if self.slope <= 0:
            raise ValueError("slope must be positive")


def generate_enrollment_cohort(spec: EnrollmentCohortSpec) -> list[ArmSpec]:
    rng = np.random.default_rng(spec.seed)
    m = spec.m
    d1, d2 = rng.uniform(*spec.d, size=m), rng.uniform(*spec.d, size=m)
    e1, e2 = rng.uniform(*spec.visit_effect, size=m), rng.uniform(*spec.visit_effect, size=m)
    k1, k2 = rng.uniform(*spec.drift, size=m), rng.uniform(*spec.drift, size=m)
    theta = rng.uniform(*spec.theta, size=m)
    model = RewardModelSpec(nu=1.0, omega=(spec.slope, -spec.slope))
    arms = []
    for i in range(m):
        dyn = DynamicsSpec(float(d1[i]), float(d2[i]), float(-e1[i]), float(e2[i]), float(k1[i]), float(-k2[i]))
        arms.append(ArmSpec(float(theta[i]), dyn, StateVec(0.0, 0.0), model))
    return arms


# -- historical records ---------------------------------------------------------

@dataclass(frozen=True)
class PatientHistoryRecord:
    patient_id: int
    periods: np.ndarray
    visited: np.ndarray
    enrolled: np.ndarray

    def __post_init__(self):
        if np.any(np.diff(self.periods) <= 0):
            raise OrderError(f"patient {self.patient_id}: periods must be strictly increasing")

    def __len__(self) -> int:
        return int(self.periods.size)

    @property
    def rounds(self) -> list[tuple[int, int, int]]:
        return list(zip(self.periods.tolist(), self.visited.tolist(), self.enrolled.tolist()))

    @property
    def n_visits(self) -> int:
        return int(self.visited.sum())

    def timeline(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Actions over every period from the first to the last recorded one, with
        the enrollment outcome and an observed flag. Gaps count as unvisited and
        unobserved."""
        if len(self) == 0:
            raise EmptyHistory(f"patient {self.patient_id} has no rows")
        span = int(self.periods[-1] - self.periods[0]) + 1
        idx = self.periods - self.periods[0]
        actions = np.zeros(span, dtype=np.int8)
        outcome = np.zeros(span)
        observed = np.zeros(span, dtype=bool)
        actions[idx] = self.visited
        outcome[idx] = self.enrolled
        observed[idx] = True
        return actions, outcome, observed


def _parse_int(value: str, name: str, line: int, allowed=None) -> int:
    try:
        v = int(value.strip())
    except (ValueError, AttributeError):
        raise ParseError(f"{name} must be an integer, got {value!r}", line) from None
    if allowed is not None and v not in allowed:
        raise ParseError(f"{name} must be one of {sorted(allowed)}, got {v}", line)
    return v


def parse_history_csv(path) -> list[PatientHistoryRecord]:
    """Read ``patient_id,period,visited,enrolled`` rows into per-patient records,
    ordered by patient id and period."""
    path = Path(path)
    rows: dict[int, list[tuple[int, int, int, int]]] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParseError("missing header row", 1)
        if tuple(h.strip() for h in header) != HISTORY_COLUMNS:
            raise ParseError(f"header must be {','.join(HISTORY_COLUMNS)}", 1)
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(HISTORY_COLUMNS):
                raise ParseError(f"expected {len(HISTORY_COLUMNS)} fields, got {len(row)}", line)
            pid = _parse_int(row[0], "patient_id", line)
            period = _parse_int(row[1], "period", line)
            visited = _parse_int(row[2], "visited", line, {0, 1})
            enrolled = _parse_int(row[3], "enrolled", line, {0, 1})
            rows.setdefault(pid, []).append((period, visited, enrolled, line))
    records = []
    for pid in sorted(rows):
        entries = sorted(rows[pid])
        for prev, cur in zip(entries, entries[1:]):
            if cur[0] == prev[0]:
                raise OrderError(f"patient {pid}: period {cur[0]} repeated (line {max(cur[3], prev[3])})")
        arr = np.array([e[:3] for e in entries], dtype=np.int64)
        records.append(PatientHistoryRecord(pid, arr[:, 0], arr[:, 1].astype(np.int8), arr[:, 2].astype(np.int8)))
    return records


# -- grid fitting ------------------------------------------------------------------

@dataclass(frozen=True)
class FitResult:
    patient_id: int
    arm: ArmSpec
    loglik: float


@dataclass(frozen=True)
class FitGrid:
    """Per-axis candidate values; q1 is searched on [-1, 0] to keep visits
    lowering the beneficial factor."""

    size: int = 5
    d: tuple[float, float] = (0.0, 1.0)
    q1: tuple[float, float] = (-1.0, 0.0)
    q2: tuple[float, float] = (0.0, 1.0)
    k: tuple[float, float] = (0.0, 1.0)
    theta: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        if self.size < 1:
            raise ValueError("grid resolution must be at least 1")

    def axis(self, name: str) -> np.ndarray:
        lo, hi = getattr(self, name)
        return np.array([lo]) if self.size == 1 else np.linspace(lo, hi, self.size)


def _component_paths(decay, effect, drift, actions) -> np.ndarray:
    """State paths for every (decay, effect, drift) triple, shape (G^3, T), from 0."""
    dd, ee, kk = (v.ravel() for v in np.meshgrid(decay, effect, drift, indexing="ij"))
    x = np.zeros(dd.size)
    out = np.empty((dd.size, actions.size))
    for t, y in enumerate(actions):
        x = np.clip(dd * x + ee * y + kk, 0.0, 1.0)
        out[:, t] = x
    return out


def _log_sigmoid(z):
    return -np.logaddexp(0.0, -z)


def fit_patient_grid(record: PatientHistoryRecord, grid_resolution: int = 5,
                     model: RewardModelSpec = RewardModelSpec(), grid: FitGrid | None = None) -> FitResult:
    """Exhaustive lattice search over (d1, d2, q1, q2, k1, k2, theta) with x0 = 0.

    The two state components evolve independently, so their paths are computed
    once per (d, q, k) triple. Ties go to the lexicographically smallest
    candidate in (d1, d2, q1, q2, k1, k2, theta) order.
    """
    grid = grid or FitGrid(grid_resolution)
    actions, outcome, observed = record.timeline()
    G = grid.size
    d, th = grid.axis("d"), grid.axis("theta")
    k = grid.axis("k")
    b_paths = _component_paths(d, grid.axis("q1"), k, actions)[:, observed]
    a_paths = _component_paths(d, grid.axis("q2"), k, actions)[:, observed]
    r = outcome[observed]
    w0, w1 = model.omega
    base = w0 * b_paths[:, None, :] + w1 * a_paths[None, :, :]
    ll = np.empty((G ** 3, G ** 3, G))
    for j, theta in enumerate(th):
        z = model.nu * theta + base
        ll[:, :, j] = np.sum(r * _log_sigmoid(z) + (1.0 - r) * _log_sigmoid(-z), axis=2)
    # axes: d1 q1 k1 | d2 q2 k2 | theta  ->  d1 d2 q1 q2 k1 k2 theta
    ordered = ll.reshape((G,) * 7).transpose(0, 3, 1, 4, 2, 5, 6)
    flat = int(np.argmax(ordered))
    i_d1, i_d2, i_q1, i_q2, i_k1, i_k2, i_th = np.unravel_index(flat, ordered.shape)
    q1, q2 = grid.axis("q1"), grid.axis("q2")
    dyn = DynamicsSpec(float(d[i_d1]), float(d[i_d2]), float(q1[i_q1]), float(q2[i_q2]),
                       float(k[i_k1]), float(k[i_k2]))
    arm = ArmSpec(float(th[i_th]), dyn, StateVec(0.0, 0.0), model)
    return FitResult(record.patient_id, arm, float(ordered.flat[flat]))


def history_loglik(record: PatientHistoryRecord, arm: ArmSpec) -> float:
    """Bernoulli log-likelihood of the recorded enrollments under ``arm``."""
    actions, outcome, observed = record.timeline()
    x = np.array([arm.x0.b, arm.x0.a])
    dyn = arm.dynamics
    d, q, k = np.array([dyn.d1, dyn.d2]), np.array([dyn.q1, dyn.q2]), np.array([dyn.k1, dyn.k2])
    total = 0.0
    for t, y in enumerate(actions):
        x = np.clip(d * x + q * y + k, 0.0, 1.0)
        if observed[t]:
            z = arm.reward_model.nu * arm.theta + float(np.dot(arm.reward_model.omega, x))
            total += float(_log_sigmoid(z if outcome[t] else -z))
    return total


def fit_cohort(records: Sequence[PatientHistoryRecord], grid_resolution: int = 5,
               model: RewardModelSpec = RewardModelSpec(), workers: int = 1) -> list[FitResult]:
    if workers > 1 and len(records) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=min(workers, len(records))) as pool:
            return list(pool.map(fit_patient_grid, records, itertools.repeat(grid_resolution),
                                 itertools.repeat(model)))
    return [fit_patient_grid(r, grid_resolution, model) for r in records]


def write_fitted_cohort(path, fits: Sequence[FitResult]) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FITTED_COLUMNS)
        for f in fits:
            dyn = f.arm.dynamics
            values = (dyn.d1, dyn.d2, dyn.q1, dyn.q2, dyn.k1, dyn.k2, f.arm.theta, f.arm.x0.b, f.arm.x0.a, f.loglik)
            w.writerow([f.patient_id, *(f"{v:.6f}" for v in values)])


def read_fitted_cohort(path, model: RewardModelSpec = RewardModelSpec()) -> list[ArmSpec]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"fitted cohort file not found: {path}")
    arms = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != FITTED_COLUMNS:
            raise ParseError(f"header must be {','.join(FITTED_COLUMNS)}", 1)
        for row in reader:
            try:
                v = {k: float(row[k]) for k in FITTED_COLUMNS[1:]}
            except (TypeError, ValueError):
                raise ParseError("non-numeric field", reader.line_num) from None
            dyn = DynamicsSpec(v["d1"], v["d2"], v["q1"], v["q2"], v["k1"], v["k2"])
            arms.append(ArmSpec(v["theta"], dyn, StateVec(v["x0_b"], v["x0_a"]), model))
    if not arms:
        raise ConfigError(f"fitted cohort file {path} has no rows")
    return arms


def load_cohort(source, seed: int = 0) -> list[ArmSpec]:
    """Materialise a ``simulation.CohortSource``; its own seed wins over ``seed``."""
    s = seed if source.seed is None else source.seed
    if source.kind == "synthetic":
        return generate_synthetic_cohort(SyntheticCohortSpec(source.m, s))
    if source.kind == "enrollment":
        return generate_enrollment_cohort(EnrollmentCohortSpec(source.m, s))
    return read_fitted_cohort(source.path)
