"""Metric CSVs, the run manifest and static SVG charts."""
from __future__ import annotations

import csv
import hashlib
import json
import os
import tempfile
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .errors import ConfigError  # noqa: E402
from .simulation import MetricsBundle  # noqa: E402

REGRET_CSV = "regret.csv"
REWARD_CSV = "reward.csv"
ENROLLMENT_CSV = "enrollment.csv"
VISITS_CSV = "visits.csv"
INTERVALS_CSV = "intervals.csv"
MANIFEST = "manifest.json"
CSV_FILES = (REGRET_CSV, REWARD_CSV, ENROLLMENT_CSV, VISITS_CSV, INTERVALS_CSV)
CHARTS = ("regret.svg", "reward.svg", "enrollment.svg", "visit_hist.svg", "interval_hist.svg")

COLUMNS = {
    REGRET_CSV: ("round", "policy", "replication", "inst_regret", "cum_regret"),
    REWARD_CSV: ("round", "policy", "replication", "cum_reward", "longrun_avg", "rolling_avg"),
    ENROLLMENT_CSV: ("round", "policy", "replication", "enrolled_count", "enrolled_frac", "rolling5"),
    VISITS_CSV: ("policy", "arm", "visit_count"),
    INTERVALS_CSV: ("policy", "arm", "interval"),
}


def fmt(x: float) -> str:
    out = f"{x:.6f}"
    return "0.000000" if out == "-0.000000" else out


def _write_rows(path: Path, header, rows) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _round_rows(bundle: MetricsBundle, fields):
    n = bundle.config.horizon
    for t in range(n):
        for label, pm in bundle.policies.items():
            for rep in range(pm.replications):
                yield [t + 1, label, rep, *(fmt(getattr(pm, f)[rep, t]) for f in fields)]


def write_metrics(bundle: MetricsBundle, out_dir) -> list[str]:
    """Write the five metric CSVs; returns their file names."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_rows(out / REGRET_CSV, COLUMNS[REGRET_CSV], _round_rows(bundle, ("inst_regret", "cum_regret")))
    _write_rows(out / REWARD_CSV, COLUMNS[REWARD_CSV],
                _round_rows(bundle, ("cum_reward", "longrun_avg", "rolling_avg")))
    _write_rows(out / ENROLLMENT_CSV, COLUMNS[ENROLLMENT_CSV],
                _round_rows(bundle, ("enrolled_count", "enrolled_frac", "rolling_enrollment")))
    visits, intervals = [], []
    for label, pm in bundle.policies.items():
        totals = pm.visit_counts.sum(axis=0)
        visits.extend([label, i, int(c)] for i, c in enumerate(totals))
        for rep_intervals in pm.intervals:
            for i, arm_intervals in enumerate(rep_intervals):
                intervals.extend([label, i, int(v)] for v in arm_intervals)
    _write_rows(out / VISITS_CSV, COLUMNS[VISITS_CSV], visits)
    _write_rows(out / INTERVALS_CSV, COLUMNS[INTERVALS_CSV], intervals)
    return list(CSV_FILES)


def config_hash(snapshot: dict) -> str:
    blob = json.dumps(snapshot, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def file_digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out_dir, payload: dict) -> Path:
    """Atomically replace ``manifest.json`` in ``out_dir``."""
    out = Path(out_dir)
    fd, tmp = tempfile.mkstemp(prefix=".manifest-", dir=out)
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, out / MANIFEST)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return out / MANIFEST


# -- charts ------------------------------------------------------------------------

def read_metric_csv(path: Path) -> list[dict]:
    if not path.is_file():
        raise ConfigError(f"missing metric file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        expected = COLUMNS.get(path.name)
        if expected and tuple(reader.fieldnames or ()) != expected:
            raise ConfigError(f"{path}: unexpected header {reader.fieldnames}")
        rows = list(reader)
    if not rows and path.name != INTERVALS_CSV:
        raise ConfigError(f"metric file has no data rows: {path}")
    return rows


def _curves(rows, field):
    """policy -> (rounds, array of shape (replications, rounds))."""
    data = defaultdict(lambda: defaultdict(dict))
    for r in rows:
        data[r["policy"]][int(r["replication"])][int(r["round"])] = float(r[field])
    out = {}
    for policy, reps in data.items():
        rounds = sorted(next(iter(reps.values())))
        out[policy] = (np.array(rounds), np.array([[reps[k][t] for t in rounds] for k in sorted(reps)]))
    return out


def _ordered(curves: dict, order) -> list:
    known = [p for p in order if p in curves]
    return known + sorted(p for p in curves if p not in known)


def _band(ax, x, values, label):
    mean = values.mean(axis=0)
    sd = values.std(axis=0, ddof=1) if values.shape[0] > 1 else np.zeros_like(mean)
    line, = ax.plot(x, mean, label=label)
    ax.fill_between(x, mean - sd, mean + sd, color=line.get_color(), alpha=0.2, linewidth=0)


def _save(fig, path: Path) -> None:
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def render_charts(run_dir, order=()) -> list[str]:
    run = Path(run_dir)
    regret = read_metric_csv(run / REGRET_CSV)
    reward = read_metric_csv(run / REWARD_CSV)
    enrollment = read_metric_csv(run / ENROLLMENT_CSV)
    visits = read_metric_csv(run / VISITS_CSV)
    intervals = read_metric_csv(run / INTERVALS_CSV)
    plt.rcParams["svg.hashsalt"] = "cobrah"

    curves = _curves(regret, "cum_regret")
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for policy in _ordered(curves, order):
        _band(ax, *curves[policy], policy)
    ax.set(xlabel="round", ylabel="cumulative regret", title="Cumulative regret (mean ± sd)")
    ax.legend()
    _save(fig, run / "regret.svg")

    longrun, rolling = _curves(reward, "longrun_avg"), _curves(reward, "rolling_avg")
    fig, axes = plt.subplots(1, 2, figsize=(11, 4.5), sharey=True)
    for policy in _ordered(longrun, order):
        _band(axes[0], *longrun[policy], policy)
        _band(axes[1], *rolling[policy], policy)
    axes[0].set(xlabel="round", ylabel="reward per round", title="Long-run average reward")
    axes[1].set(xlabel="round", title="Rolling average reward")
    axes[0].legend()
    _save(fig, run / "reward.svg")

    curves = _curves(enrollment, "rolling5")
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for policy in _ordered(curves, order):
        _band(ax, *curves[policy], policy)
    ax.set(xlabel="round", ylabel="fraction enrolled", title="Rolling enrollment")
    ax.legend()
    _save(fig, run / "enrollment.svg")

    counts = defaultdict(list)
    for r in visits:
        counts[r["policy"]].append(int(r["visit_count"]))
    fig, ax = plt.subplots(figsize=(7, 4.5))
    top = max(max(v) for v in counts.values())
    bins = np.linspace(0, max(top, 1), 21)
    for policy in _ordered(counts, order):
        ax.hist(counts[policy], bins=bins, histtype="step", label=policy, log=True)
    ax.set(xlabel="visits per arm", ylabel="number of arms (log scale)", title="Visit counts")
    ax.legend()
    _save(fig, run / "visit_hist.svg")

    gaps = defaultdict(list)
    for r in intervals:
        gaps[r["policy"]].append(int(r["interval"]))
    fig, ax = plt.subplots(figsize=(7, 4.5))
    if gaps:
        top = max(max(v) for v in gaps.values())
        bins = np.arange(0.5, top + 1.5) if top <= 60 else np.linspace(0.5, top + 0.5, 61)
        for policy in _ordered(gaps, order):
            ax.hist(gaps[policy], bins=bins, histtype="step", label=policy)
        ax.legend()
    ax.set(xlabel="rounds between visits", ylabel="count", title="Visit intervals")
    _save(fig, run / "interval_hist.svg")
    return list(CHARTS)
