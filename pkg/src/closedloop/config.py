"""Run configuration: flat ``key = value`` files plus command-line overrides."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

MODES = ("plan", "train-ssl", "train-rl", "train-open-ssl", "eval", "oracle-check")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    mode: str = "plan"
    seed: int = 0
    # domain
    domain: str = "driving"
    map_path: str = ""
    exo_count: int = 6
    particle_count: int = 100
    max_steps: int = 60
    # search
    scenario_count: int = 10
    max_depth: int = 3
    horizon: int = 9
    gamma: float = 0.95
    exploration: float = 1.0
    max_trials: int = 12
    time_budget: float = 0.0
    gap_tolerance: float = 1e-3
    optimistic_trial_period: int = 10
    value_clipping: bool = True
    search_workers: int = 1
    # learner
    hidden: tuple = (128, 128)
    head_hidden: int = 128
    batch_size: int = 64
    learning_rate: float = 3e-4
    alpha: float = 0.01
    alpha_learning_rate: float = 1e-3
    learn_alpha: bool = True
    value_scale: float = 100.0
    polyak: float = 0.005
    rl_gamma: float = 0.95
    # closed loop
    budget: int = 10_000
    buffer_capacity: int = 100_000
    updates_per_tuple: int = 1
    snapshot_every: int = 50
    actors: tuple = ()
    temperature: float = 1.0
    # open loop
    dataset: str = ""
    epochs: int = 10
    # evaluation
    episodes: int = 10
    eval_every: int = 500
    eval_episodes: int = 20
    eval_seeds: tuple = (0, 1, 2, 3, 4)
    checkpoint: str = ""
    # oracle check
    oracle_seeds: int = 50
    oracle_scenarios: tuple = (5, 20)
    oracle_depths: tuple = (2, 3)

    def validate(self) -> RunConfig:
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {', '.join(MODES)}, got {self.mode!r}")
        if self.domain not in ("driving", "tiger"):
            raise ConfigError(f"domain must be driving or tiger, got {self.domain!r}")
        if self.max_depth < 1 or self.horizon < self.max_depth:
            raise ConfigError("need 1 <= max_depth <= horizon")
        if self.scenario_count < 1 or self.batch_size < 1 or self.budget < 0:
            raise ConfigError("scenario_count and batch_size must be >= 1, budget >= 0")
        if self.max_trials < 0 or self.time_budget < 0:
            raise ConfigError("max_trials and time_budget must be >= 0")
        if self.max_trials == 0 and self.time_budget == 0:
            raise ConfigError("set max_trials or time_budget")
        for a in self.actors:
            if a not in ("exploit", "explore", "on_policy"):
                raise ConfigError(f"unknown actor mode {a!r}")
        if self.mode == "eval" and not self.checkpoint:
            raise ConfigError("eval needs checkpoint = PATH")
        for key in ("checkpoint", "map_path"):
            path = getattr(self, key)
            if path and not Path(path).exists():
                raise ConfigError(f"{key}: file not found: {path}")
        if self.mode == "train-open-ssl" and self.dataset and not Path(self.dataset).exists():
            raise ConfigError(f"dataset: file not found: {self.dataset}")
        return self

    def actor_modes(self) -> tuple:
        if self.actors:
            return self.actors
        return ("exploit", "explore", "on_policy") if self.mode == "train-rl" else ("exploit",)

    def items(self):
        for f in dataclasses.fields(self):
            yield f.name, format_value(getattr(self, f.name))


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}
_TUPLE_TYPES = {"hidden": int, "eval_seeds": int, "oracle_scenarios": int, "oracle_depths": int, "actors": str}


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(format_value(t) for t in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _convert(key: str, text: str):
    if key not in _FIELDS:
        raise ConfigError(f"unknown key {key!r}")
    default = _FIELDS[key].default
    text = text.strip()
    try:
        if key in _TUPLE_TYPES:
            return tuple(_TUPLE_TYPES[key](t.strip()) for t in text.split(",") if t.strip())
        if isinstance(default, bool):
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(f"expected a boolean, got {text!r}")
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        return text
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {exc}") from None


def parse_config(text: str, source: str = "<config>", base: RunConfig | None = None) -> RunConfig:
    cfg = dataclasses.replace(base) if base is not None else RunConfig()
    for no, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{no}: expected key = value")
        key, value = line.split("=", 1)
        try:
            setattr(cfg, key.strip(), _convert(key.strip(), value))
        except ConfigError as exc:
            raise ConfigError(f"{source}:{no}: {exc}") from None
    return cfg


def apply_overrides(cfg: RunConfig, overrides) -> RunConfig:
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set {item!r}: expected key=value")
        key, value = item.split("=", 1)
        try:
            setattr(cfg, key.strip(), _convert(key.strip(), value))
        except ConfigError as exc:
            raise ConfigError(f"--set {item!r}: {exc}") from None
    return cfg


def load_config(path: str | Path | None = None, overrides=(), **fields) -> RunConfig:
    cfg = RunConfig(**fields)
    if path:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        cfg = parse_config(path.read_text(), str(path), cfg)
    return apply_overrides(cfg, overrides)


__all__ = ["ConfigError", "MODES", "RunConfig", "apply_overrides", "format_value", "load_config", "parse_config"]
