"""Sectioned ``key = value`` run configuration.

Every key has a documented default in :data:`DEFAULTS`; unknown sections or
keys are rejected. Values given on the command line override the file.
"""
from __future__ import annotations

import configparser
from pathlib import Path
from typing import Any, Iterable

from .frames import BudgetConfig
from .rewards import RewardConfig

__all__ = ["ConfigError", "DEFAULTS", "RunConfig"]


class ConfigError(ValueError):
    pass


# section -> key -> (default, help)
DEFAULTS: dict[str, dict[str, tuple[Any, str]]] = {
    "run": {
        "seed": (None, "global seed; required by generating commands"),
        "jobs": (1, "bounded worker pool size"),
    },
    "budget": {
        "n_g": (64, "stage-1 global frames"),
        "n_l": (64, "stage-2 zoom frames"),
        "m_max": (5, "max stage-1 spans accepted by the format score"),
        "k_spans": (5, "inference cap on stage-1 spans"),
        "cap_factor": (1.5, "per-span cap multiplier on the proportional share"),
    },
    "reward": {
        "alpha": (0.1, "format weight inside the localization reward"),
        "beta": (0.1, "format weight inside the answer reward"),
        "gamma0": (0.3, "answer weight at curriculum start"),
        "gamma1": (0.7, "answer weight after the ramp"),
        "ramp_steps": (1000, "curriculum length in steps"),
        "shaping_thresholds": ("", "tIoU bonuses as 't:bonus,t:bonus'; empty disables"),
        "length_penalty_per_char_over": (1e-4, "penalty per rationale char over the cap"),
        "max_rationale_chars": (2000, "rationale length cap"),
    },
    "grpo": {
        "kl_coef": (0.0, "KL penalty coefficient in the loss"),
        "normalize": (False, "standardize rewards per batch before grouping"),
        "eps": (1e-8, "normalization epsilon"),
        "teacher_force_ratio": (0.5, "share of stage-2 calls fed gold spans in train mode"),
    },
    "dataset": {
        "chunk_len_s": (3.0, "uniform chunk length in seconds"),
        "merge_threshold": (0.85, "similarity needed to merge adjacent chunks"),
        "link_threshold": (0.75, "similarity needed to link entity mentions"),
        "dup_threshold": (0.8, "question token-Jaccard treated as duplicate"),
        "split_ratios": ("0.90,0.05,0.05", "train,val,test video ratios"),
        "deictic_terms": (
            "this clip,this moment,this video,the clip,here,now",
            "comma-separated banned phrases",
        ),
    },
    "backend": {
        "kind": ("echo", "echo | random | malformed | http | pipe"),
        "url": ("", "base URL for http (env SPANQA_BACKEND_URL overrides empty)"),
        "command": ("", "command line for the pipe backend"),
        "retries": (2, "transport retries"),
        "backoff_s": (0.1, "initial retry backoff in seconds"),
    },
    "eval": {
        "thresholds": ("0.3,0.5,0.7", "recall IoU thresholds"),
        "single_best": (False, "score the best single span instead of the union"),
    },
}


def _coerce(section: str, key: str, raw: Any) -> Any:
    default = DEFAULTS[section][key][0]
    if raw is None or not isinstance(raw, str):
        return raw
    try:
        if isinstance(default, bool):
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int) or (default is None and key == "seed"):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError as e:
        raise ConfigError(f"{section}.{key}: cannot parse {raw!r}") from e
    return raw.strip()


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(",") if x.strip())


class RunConfig:
    def __init__(self, values: dict[str, dict[str, Any]] | None = None):
        self.values = {s: {k: v[0] for k, v in keys.items()} for s, keys in DEFAULTS.items()}
        for section, keys in (values or {}).items():
            for key, raw in keys.items():
                self.set(section, key, raw)

    def set(self, section: str, key: str, raw: Any) -> None:
        if section not in DEFAULTS:
            raise ConfigError(f"unknown config section [{section}]")
        if key not in DEFAULTS[section]:
            raise ConfigError(f"unknown config key {section}.{key}")
        self.values[section][key] = _coerce(section, key, raw)

    @classmethod
    def load(cls, path: str | Path | None = None, overrides: Iterable[str] = ()) -> "RunConfig":
        cfg = cls()
        if path is not None:
            parser = configparser.ConfigParser(interpolation=None)
            parser.optionxform = str
            try:
                with open(path) as fh:
                    parser.read_file(fh)
            except configparser.Error as e:
                raise ConfigError(f"{path}: {e}") from e
            for section in parser.sections():
                for key, raw in parser.items(section):
                    cfg.set(section, key, raw)
        for item in overrides:
            name, sep, raw = item.partition("=")
            section, dot, key = name.partition(".")
            if not sep or not dot:
                raise ConfigError(f"override must look like section.key=value, got {item!r}")
            cfg.set(section.strip(), key.strip(), raw)
        return cfg

    def get(self, section: str, key: str) -> Any:
        return self.values[section][key]

    def require(self, section: str, key: str) -> Any:
        v = self.values[section][key]
        if v is None or v == "":
            raise ConfigError(f"missing required key: {section}.{key}")
        return v

    @property
    def seed(self) -> int:
        return self.require("run", "seed")

    def budget(self) -> BudgetConfig:
        return BudgetConfig(**self.values["budget"])

    def reward(self) -> RewardConfig:
        r = dict(self.values["reward"])
        pairs = []
        for item in str(r.pop("shaping_thresholds")).split(","):
            if item.strip():
                t, _, b = item.partition(":")
                try:
                    pairs.append((float(t), float(b)))
                except ValueError as e:
                    raise ConfigError(f"reward.shaping_thresholds: bad entry {item!r}") from e
        return RewardConfig(shaping_thresholds=tuple(pairs), m_max=self.get("budget", "m_max"), **r)

    def split_ratios(self) -> tuple[float, ...]:
        return _floats(self.get("dataset", "split_ratios"))

    def thresholds(self) -> tuple[float, ...]:
        return _floats(self.get("eval", "thresholds"))

    def deictic_terms(self) -> tuple[str, ...]:
        return tuple(t.strip() for t in self.get("dataset", "deictic_terms").split(",") if t.strip())

    def dump(self) -> str:
        lines = []
        for section, keys in DEFAULTS.items():
            lines.append(f"[{section}]")
            for key, (_, help_) in keys.items():
                v = self.values[section][key]
                lines.append(f"# {help_}")
                lines.append(f"{key} = {'' if v is None else v}")
            lines.append("")
        return "\n".join(lines)
