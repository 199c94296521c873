"""Experiment configuration: typed tree, JSON (de)serialization, validation.

Parse errors always name the offending field with a dotted path so a bad
config file points at itself ("scorer.noise_p: must be in [0, 0.5]").
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from enum import Enum
from typing import Optional

from .gridworld import VALID_SIZES
from .learner import LearnerConfig
from .sampler import MixtureSchedule, ScheduleMode


class ConfigError(ValueError):
    """Invalid experiment config; message starts with the dotted field path."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


class SamplerKind(Enum):
    UER = "UER"
    PER = "PER"
    VLM_ONLY = "VLM_ONLY"
    VLM_TD = "VLM_TD"
    ERO = "ERO"
    RELO = "RELO"
    AER = "AER"


class ScorerKind(Enum):
    NONE = "NONE"
    ORACLE = "ORACLE"
    NOISY = "NOISY"
    MISLEADING = "MISLEADING"
    ABSTRACT = "ABSTRACT"
    CONSTANT = "CONSTANT"
    EXTERNAL = "EXTERNAL"


@dataclass(frozen=True)
class EnvConfig:
    size: int = 8
    t_max: Optional[int] = None  # None -> 10 * size^2

    def __post_init__(self):
        if self.size not in VALID_SIZES:
            raise ConfigError("env.size", f"must be one of {VALID_SIZES}, got {self.size}")
        if self.t_max is not None and self.t_max < 1:
            raise ConfigError("env.t_max", f"must be >= 1, got {self.t_max}")


@dataclass(frozen=True)
class ScorerConfig:
    kind: ScorerKind = ScorerKind.ORACLE
    noise_p: float = 0.1        # NOISY only
    constant: float = 1.0       # CONSTANT only
    address: Optional[str] = None  # EXTERNAL only

    def __post_init__(self):
        if not 0.0 <= self.noise_p <= 0.5:
            raise ConfigError("scorer.noise_p", f"must be in [0, 0.5], got {self.noise_p}")
        if not 0.0 <= self.constant <= 1.0:
            raise ConfigError("scorer.constant", f"must be in [0, 1], got {self.constant}")
        if self.kind is ScorerKind.EXTERNAL and not self.address:
            raise ConfigError("scorer.address", "required when kind is EXTERNAL")


DEFAULT_SEEDS = (0, 1, 2, 3, 4)


@dataclass(frozen=True)
class ExperimentConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    sampler: SamplerKind = SamplerKind.VLM_ONLY
    scorer: ScorerConfig = field(default_factory=ScorerConfig)
    schedule: MixtureSchedule = field(default_factory=MixtureSchedule)
    learner: LearnerConfig = field(default_factory=LearnerConfig)
    total_steps: int = 300_000
    eval_every: int = 10_000
    eval_episodes: int = 32
    seeds: tuple = DEFAULT_SEEDS

    def __post_init__(self):
        if self.total_steps < 0:
            raise ConfigError("total_steps", f"must be >= 0, got {self.total_steps}")
        if self.eval_every < 1:
            raise ConfigError("eval_every", f"must be >= 1, got {self.eval_every}")
        if self.eval_episodes < 1:
            raise ConfigError("eval_episodes", f"must be >= 1, got {self.eval_episodes}")
        if len(self.seeds) < 1:
            raise ConfigError("seeds", "need at least one seed")
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))


_MISSING = object()


def _pick(obj: dict, key: str, path: str, default=_MISSING):
    if not isinstance(obj, dict):
        raise ConfigError(path.rsplit(".", 1)[0] if "." in path else path, "must be an object")
    if key in obj:
        return obj[key]
    if default is _MISSING:
        raise ConfigError(path, "missing required field")
    return default


def _number(val, path: str) -> float:
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(path, f"must be a number, got {type(val).__name__}")
    return val


def _integer(val, path: str) -> int:
    if isinstance(val, bool) or not isinstance(val, int):
        raise ConfigError(path, f"must be an integer, got {type(val).__name__}")
    return val


def _enum(cls, val, path: str):
    try:
        return cls(val)
    except ValueError:
        options = ", ".join(m.value for m in cls)
        raise ConfigError(path, f"unknown value {val!r}; expected one of: {options}") from None


def _parse_env(obj: dict) -> EnvConfig:
    t_max = _pick(obj, "t_max", "env.t_max", None)
    return EnvConfig(
        size=_integer(_pick(obj, "size", "env.size", 8), "env.size"),
        t_max=None if t_max is None else _integer(t_max, "env.t_max"),
    )


def _parse_scorer(obj: dict) -> ScorerConfig:
    return ScorerConfig(
        kind=_enum(ScorerKind, _pick(obj, "kind", "scorer.kind", "ORACLE"), "scorer.kind"),
        noise_p=float(_number(_pick(obj, "noise_p", "scorer.noise_p", 0.1), "scorer.noise_p")),
        constant=float(_number(_pick(obj, "constant", "scorer.constant", 1.0), "scorer.constant")),
        address=_pick(obj, "address", "scorer.address", None),
    )


def _parse_mode(val, path: str) -> ScheduleMode:
    if isinstance(val, ScheduleMode):
        return val
    if isinstance(val, str):
        try:
            return ScheduleMode[val.upper()]
        except KeyError:
            pass
    options = ", ".join(m.name for m in ScheduleMode)
    raise ConfigError(path, f"unknown value {val!r}; expected one of: {options}")


def _parse_schedule(obj: dict) -> MixtureSchedule:
    d = MixtureSchedule()
    try:
        return MixtureSchedule(
            lambda0=float(_number(_pick(obj, "lambda0", "schedule.lambda0", d.lambda0), "schedule.lambda0")),
            lambda_max=float(
                _number(_pick(obj, "lambda_max", "schedule.lambda_max", d.lambda_max), "schedule.lambda_max")
            ),
            t_schedule=_integer(
                _pick(obj, "t_schedule", "schedule.t_schedule", d.t_schedule), "schedule.t_schedule"
            ),
            mode=_parse_mode(_pick(obj, "mode", "schedule.mode", d.mode), "schedule.mode"),
        )
    except ConfigError:
        raise
    except ValueError as e:
        raise ConfigError("schedule", str(e)) from None


def _parse_learner(obj: dict) -> LearnerConfig:
    d = LearnerConfig()
    kwargs = {}
    for name, caster in [
        ("gamma", _number),
        ("learning_rate", _number),
        ("batch_size", _integer),
        ("target_sync_every", _integer),
        ("train_freq", _integer),
        ("learning_starts", _integer),
        ("eps_start", _number),
        ("eps_end", _number),
        ("exploration_fraction", _number),
    ]:
        val = _pick(obj, name, f"learner.{name}", getattr(d, name))
        kwargs[name] = caster(val, f"learner.{name}")
        if caster is _number:
            kwargs[name] = float(kwargs[name])
    double = _pick(obj, "double", "learner.double", d.double)
    if not isinstance(double, bool):
        raise ConfigError("learner.double", "must be a boolean")
    try:
        return LearnerConfig(double=double, **kwargs)
    except ValueError as e:
        raise ConfigError("learner", str(e)) from None


def config_from_dict(obj: dict) -> ExperimentConfig:
    if not isinstance(obj, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    known = {
        "env", "sampler", "scorer", "schedule", "learner",
        "total_steps", "eval_every", "eval_episodes", "seeds",
    }
    for key in obj:
        if key not in known:
            raise ConfigError(key, "unknown field")
    seeds = _pick(obj, "seeds", "seeds", list(DEFAULT_SEEDS))
    if not isinstance(seeds, list) or not all(
        isinstance(s, int) and not isinstance(s, bool) for s in seeds
    ):
        raise ConfigError("seeds", "must be a list of integers")
    return ExperimentConfig(
        env=_parse_env(_pick(obj, "env", "env", {})),
        sampler=_enum(SamplerKind, _pick(obj, "sampler", "sampler", "VLM_ONLY"), "sampler"),
        scorer=_parse_scorer(_pick(obj, "scorer", "scorer", {})),
        schedule=_parse_schedule(_pick(obj, "schedule", "schedule", {})),
        learner=_parse_learner(_pick(obj, "learner", "learner", {})),
        total_steps=_integer(_pick(obj, "total_steps", "total_steps", 300_000), "total_steps"),
        eval_every=_integer(_pick(obj, "eval_every", "eval_every", 10_000), "eval_every"),
        eval_episodes=_integer(_pick(obj, "eval_episodes", "eval_episodes", 32), "eval_episodes"),
        seeds=tuple(seeds),
    )


def config_to_dict(cfg: ExperimentConfig) -> dict:
    return {
        "env": {"size": cfg.env.size, "t_max": cfg.env.t_max},
        "sampler": cfg.sampler.value,
        "scorer": {
            "kind": cfg.scorer.kind.value,
            "noise_p": cfg.scorer.noise_p,
            "constant": cfg.scorer.constant,
            "address": cfg.scorer.address,
        },
        "schedule": {
            "lambda0": cfg.schedule.lambda0,
            "lambda_max": cfg.schedule.lambda_max,
            "t_schedule": cfg.schedule.t_schedule,
            "mode": cfg.schedule.mode.name,
        },
        "learner": asdict(cfg.learner),
        "total_steps": cfg.total_steps,
        "eval_every": cfg.eval_every,
        "eval_episodes": cfg.eval_episodes,
        "seeds": list(cfg.seeds),
    }
