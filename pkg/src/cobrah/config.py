"""INI experiment files: an ``[experiment]`` section plus one ``[policy.ID]`` section per policy.

Example::

    [experiment]
    horizon = 600
    cohort = synthetic
    arms = 20
    capacity = 4
    feedback = sb
    replications = 5
    seed = 0

    [policy.cobrah-tuned]
    eta = 0.01

    [policy.cucb]
"""
from __future__ import annotations

import configparser
from pathlib import Path
from typing import Iterable

from .errors import ConfigError
from .simulation import CohortSource, ExperimentConfig, PolicySpec

EXPERIMENT = "experiment"
POLICY_PREFIX = "policy."

_INT_KEYS = ("horizon", "arms", "capacity", "replications", "seed", "cohort_seed", "burn_in",
             "reward_window", "enrollment_window")
_FLOAT_KEYS = ("budget",)
_STR_KEYS = ("cohort", "cohort_path", "feedback", "output")
KNOWN_KEYS = set(_INT_KEYS + _FLOAT_KEYS + _STR_KEYS)


def _scalar(text: str):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def read_ini(path) -> configparser.ConfigParser:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        with path.open(encoding="utf-8") as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return parser


def apply_overrides(parser: configparser.ConfigParser, overrides: Iterable[str]) -> None:
    """``key=value`` sets an experiment key; ``policy.ID.key=value`` a policy one."""
    for item in overrides:
        key, sep, value = item.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        if key.startswith(POLICY_PREFIX):
            section, dot, name = key.rpartition(".")
            if not dot or section == "policy":
                raise ConfigError(f"policy override must look like policy.ID.key=value, got {item!r}")
        else:
            section, name = EXPERIMENT, key
        if not parser.has_section(section):
            parser.add_section(section)
        parser.set(section, name, value)


def _get(section, key, cast):
    try:
        return cast(section[key])
    except ValueError:
        raise ConfigError(f"[{section.name}] {key} = {section[key]!r} is not a valid {cast.__name__}") from None


def build_config(parser: configparser.ConfigParser) -> ExperimentConfig:
    if not parser.has_section(EXPERIMENT):
        raise ConfigError("missing [experiment] section")
    exp = parser[EXPERIMENT]
    unknown = set(exp) - KNOWN_KEYS
    if unknown:
        raise ConfigError(f"unknown [experiment] keys: {', '.join(sorted(unknown))}")
    if "horizon" not in exp:
        raise ConfigError("[experiment] horizon is required")
    v = {k: _get(exp, k, int) for k in _INT_KEYS if k in exp}
    v.update({k: _get(exp, k, float) for k in _FLOAT_KEYS if k in exp})
    v.update({k: exp[k].strip() for k in _STR_KEYS if k in exp})
    cohort = CohortSource(
        kind=v.get("cohort", "synthetic"),
        m=v.get("arms", 20),
        seed=v.get("cohort_seed"),
        path=v.get("cohort_path"),
    )
    policies = []
    for name in parser.sections():
        if name.startswith(POLICY_PREFIX):
            params = {k: _scalar(val.strip()) for k, val in parser[name].items()}
            policies.append(PolicySpec(name[len(POLICY_PREFIX):], params))
    if not policies:
        raise ConfigError("no [policy.ID] sections")
    kwargs = {k: v[k] for k in ("capacity", "budget", "replications", "seed", "burn_in",
                                "reward_window", "enrollment_window", "feedback", "output") if k in v}
    return ExperimentConfig(horizon=v["horizon"], cohort=cohort, policies=tuple(policies), **kwargs)


def load_config(path, overrides: Iterable[str] = ()) -> tuple[ExperimentConfig, configparser.ConfigParser]:
    parser = read_ini(path)
    apply_overrides(parser, overrides)
    return build_config(parser), parser


def snapshot(parser: configparser.ConfigParser) -> dict:
    return {name: dict(parser[name]) for name in parser.sections()}
