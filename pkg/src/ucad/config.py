"""Run configuration: ``key=value`` files with command-line overrides.

Keys use the names below; ``lambda`` is accepted for the consistency weight
(stored as ``lam``) and ``steps`` for ``total_steps``.
"""
from __future__ import annotations

import dataclasses

from .exceptions import ConfigError
from .training import STRATEGIES, TrainConfig

ALIASES = {"lambda": "lam", "steps": "total_steps", "T": "temperature", "N": "n_regions"}
_FIELDS = {f.name: f for f in dataclasses.fields(TrainConfig)}
_TYPES = {
    "strategy": str, "k_target": int, "n_regions": int, "slic_iterations": int,
    "warmup_steps": int, "total_steps": int, "eval_every": int, "batch": int, "hidden": int,
    "seed": int, "check_invariants": bool,
}


def canonical_key(key):
    key = key.strip().replace("-", "_")
    key = ALIASES.get(key, key)
    if key not in _FIELDS:
        raise ConfigError(f"unknown config key {key!r}")
    return key


def coerce(key, raw):
    """Parse a string config value for ``key``; ``none`` clears optional ints."""
    if raw is None:
        return None
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    if key in ("k_target", "n_regions") and text.lower() in ("none", "auto", ""):
        return None
    kind = _TYPES.get(key, float)
    try:
        if kind is bool:
            if text.lower() in ("1", "true", "yes"):
                return True
            if text.lower() in ("0", "false", "no"):
                return False
            raise ValueError(text)
        return kind(text)
    except ValueError:
        raise ConfigError(f"invalid value {raw!r} for {key}") from None


def parse_config_text(text):
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key=value, got {line!r}")
        key, raw = line.split("=", 1)
        key = canonical_key(key)
        values[key] = coerce(key, raw)
    return values


def load_config_file(path):
    try:
        with open(path) as fh:
            return parse_config_text(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc


def build_config(file_values=None, overrides=None):
    """TrainConfig from defaults, then file values, then overrides (flags win)."""
    values = {}
    for source in (file_values or {}, overrides or {}):
        for key, raw in source.items():
            if raw is None:
                continue
            key = canonical_key(key)
            values[key] = coerce(key, raw)
    for key, val in values.items():
        if key == "check_invariants":
            continue
        _validate_range(key, val)
    return TrainConfig(**values)


_RANGES = {
    "k_target": (1, None), "slic_iterations": (1, None), "n_regions": (0, None),
    "warmup_steps": (0, None), "total_steps": (1, None), "eval_every": (1, None),
    "batch": (1, None), "hidden": (1, None), "w_l": (0, None), "w_u": (0, None),
    "lam": (0, None), "beta_max": (0, None), "beta_min": (0, None), "alpha": (0, 1),
    "momentum": (0, None), "weight_decay": (0, None),
}
_POSITIVE = ("compactness", "temperature", "lr")


def _flag(key):
    inverse = {v: k for k, v in ALIASES.items() if k in ("lambda", "steps")}
    return "--" + inverse.get(key, key).replace("_", "-")


def _validate_range(key, val):
    if val is None:
        return
    if key == "strategy" and val not in STRATEGIES:
        raise ConfigError(f"--strategy must be one of {', '.join(STRATEGIES)}, got {val!r}")
    if key in _POSITIVE and not val > 0:
        raise ConfigError(f"{_flag(key)} must be > 0, got {val}")
    if key in _RANGES:
        lo, hi = _RANGES[key]
        if (lo is not None and val < lo) or (hi is not None and val > hi):
            bounds = f">= {lo}" if hi is None else f"in [{lo}, {hi}]"
            raise ConfigError(f"{_flag(key)} must be {bounds}, got {val}")


def dump_config(cfg):
    """Canonical ``key=value`` text, one key per line in field order."""
    lines = []
    for name in _FIELDS:
        if name == "check_invariants":
            continue
        val = getattr(cfg, name)
        key = "lambda" if name == "lam" else name
        lines.append(f"{key}={'none' if val is None else val}")
    return "\n".join(lines) + "\n"
