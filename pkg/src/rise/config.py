"""Shared domain types and the flat run configuration."""

from __future__ import annotations

import dataclasses
import enum
import os
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

import tomli_w

CONFIG_ENV_VAR = "RISE_CONFIG"
DEFAULT_CONFIG_NAME = "rise.toml"


class SkillCategory(str, enum.Enum):
    COARSE_PERCEPTION = "coarse-perception"
    FINE_GRAINED_PERCEPTION = "fine-grained-perception"
    INSTANCE_REASONING = "instance-reasoning"
    LOGICAL_REASONING = "logical-reasoning"
    MATH_AND_COUNTING = "math-and-counting"
    SCIENCE_AND_TECHNOLOGY = "science-and-technology"

    @property
    def display(self) -> str:
        """Surface form used in prompts, e.g. ``math & counting``."""
        return _SKILL_DISPLAY[self]


_SKILL_DISPLAY = {
    SkillCategory.COARSE_PERCEPTION: "coarse perception",
    SkillCategory.FINE_GRAINED_PERCEPTION: "fine-grained perception",
    SkillCategory.INSTANCE_REASONING: "instance reasoning",
    SkillCategory.LOGICAL_REASONING: "logical reasoning",
    SkillCategory.MATH_AND_COUNTING: "math & counting",
    SkillCategory.SCIENCE_AND_TECHNOLOGY: "science & technology",
}

# Fixed order; used for round-robin quota redistribution and CSV columns.
SKILLS: tuple[SkillCategory, ...] = tuple(SkillCategory)


class QuestionType(str, enum.Enum):
    MULTIPLE_CHOICE = "multiple-choice"
    NUMERICAL = "numerical"
    REGRESSION = "regression"

    @property
    def display(self) -> str:
        return self.value.replace("-", " ")


@dataclass(frozen=True)
class ImageRef:
    """Either a file on disk (or a URL) or a synthetic toy-world scene id."""

    kind: str  # "file" | "synthetic"
    ref: str

    @classmethod
    def file(cls, path: str | os.PathLike) -> "ImageRef":
        return cls("file", str(path))

    @classmethod
    def synthetic(cls, scene_id: str) -> "ImageRef":
        return cls("synthetic", scene_id)

    def __str__(self) -> str:
        return f"{self.kind}:{self.ref}"

    @classmethod
    def parse(cls, text: str) -> "ImageRef":
        kind, sep, ref = text.partition(":")
        if not sep or kind not in ("file", "synthetic") or not ref:
            raise ValueError(f"malformed image reference {text!r}")
        return cls(kind, ref)


class ConfigError(ValueError):
    """Raised for unparseable, unknown-key or invariant-violating configs."""

    def __init__(self, problems: list[str] | str):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass(frozen=True)
class ScheduleConfig:
    """Every knob of a run. Defaults reproduce the reference schedule."""

    # alternation schedule
    total_budget_B: int = 20
    cycles_n: int = 4
    phase_len_b: int = 5
    batch_size: int = 256
    rollouts_G: int = 8
    samples_M: int = 10
    # pseudo-label filtering and rewards
    tau_min: float = 0.3
    tau_max: float = 0.8
    lambda_v: float = 0.2
    lambda_s: float = 0.2
    eps_norm: float = 1e-6
    eps_clip: float = 0.2
    # sampling forwarded to backends
    temperature: float = 1.0
    top_p: float = 0.99
    max_tokens: int = 1024
    max_concurrency: int = 8
    seed: int = 0
    # construction
    candidates_per_construct: int = 256
    shard_target: int = 96
    drop_ties: bool = False
    stratify: bool = True
    use_supervisor: bool = True
    # toy policy optimisation
    step_size: float = 0.1
    # remote backend
    model: str = "default"
    request_timeout: float = 120.0
    # toy world
    toy_scene_pool: int = 512
    toy_invalid_rate: float = 0.1
    toy_format_error_rate: float = 0.02
    toy_solver_format_error_rate: float = 0.02
    toy_biased_skill: str = "math-and-counting"
    toy_initial_competence: float = 0.3
    toy_eta: float = 0.02
    toy_eta_bad: float = 0.04
    toy_signal_weighted: bool = False
    toy_recall: float = 0.9
    toy_false_reject: float = 0.3

    def replace(self, **changes: Any) -> "ScheduleConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


FIELD_TYPES: dict[str, type] = {
    f.name: type(f.default) for f in fields(ScheduleConfig)
}


def _coerce(key: str, value: Any) -> Any:
    expected = FIELD_TYPES[key]
    if expected is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected boolean, got {value!r}")
        return value
    if expected is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected integer, got {value!r}")
        return value
    if expected is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected number, got {value!r}")
        return float(value)
    if not isinstance(value, str):
        raise ConfigError(f"{key}: expected string, got {value!r}")
    return value


def config_from_mapping(data: Mapping[str, Any]) -> ScheduleConfig:
    unknown = sorted(set(data) - set(FIELD_TYPES))
    if unknown:
        raise ConfigError([f"unknown key {k!r}" for k in unknown])
    cfg = ScheduleConfig(**{k: _coerce(k, v) for k, v in data.items()})
    problems = validate_config(cfg)
    if problems:
        raise ConfigError(problems)
    return cfg


def load_config(source: str | bytes) -> ScheduleConfig:
    """Parse a flat TOML document into a validated :class:`ScheduleConfig`.

    Absent keys take their defaults; unknown keys are rejected so that a
    typo in e.g. ``lambda_s`` cannot silently fall back to a default.
    """
    if isinstance(source, bytes):
        source = source.decode("utf-8")
    try:
        data = tomllib.loads(source)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config does not parse: {exc}") from exc
    nested = [k for k, v in data.items() if isinstance(v, dict)]
    if nested:
        raise ConfigError([f"nested table {k!r} not allowed" for k in nested])
    return config_from_mapping(data)


def load_config_file(path: str | os.PathLike) -> ScheduleConfig:
    return load_config(Path(path).read_text(encoding="utf-8"))


def resolve_config_path(explicit: str | None) -> Path | None:
    """``--config`` wins, then ``$RISE_CONFIG``, then ``./rise.toml`` if it
    exists; ``None`` when there is nothing to load."""
    if explicit:
        return Path(explicit)
    env = os.environ.get(CONFIG_ENV_VAR)
    if env:
        return Path(env)
    default = Path(DEFAULT_CONFIG_NAME)
    return default if default.is_file() else None


def dump_config(cfg: ScheduleConfig) -> str:
    return tomli_w.dumps(cfg.to_dict())


def validate_config(c: ScheduleConfig) -> list[str]:
    """Return a list naming every violated invariant (empty when valid)."""
    problems = []
    positive_ints = (
        "total_budget_B", "cycles_n", "phase_len_b", "batch_size",
        "max_concurrency", "max_tokens", "candidates_per_construct",
        "toy_scene_pool",
    )
    for name in positive_ints:
        if getattr(c, name) < 1:
            problems.append(f"{name} must be a positive integer")
    if c.total_budget_B != c.cycles_n * c.phase_len_b:
        problems.append("B ≠ n·b (total_budget_B must equal cycles_n * phase_len_b)")
    if c.samples_M < 2:
        problems.append("samples_M must be at least 2")
    if c.rollouts_G < 2:
        problems.append("rollouts_G must be at least 2")
    if not 0.0 <= c.tau_min <= 1.0:
        problems.append("tau_min must lie in [0, 1]")
    if not 0.0 <= c.tau_max <= 1.0:
        problems.append("tau_max must lie in [0, 1]")
    if c.tau_min > c.tau_max:
        problems.append("tau_min > tau_max")
    if c.lambda_v < 0:
        problems.append("lambda_v must be nonnegative")
    if c.lambda_s < 0:
        problems.append("lambda_s must be nonnegative")
    if not c.eps_norm > 0:
        problems.append("eps_norm must be positive")
    if not 0.0 < c.eps_clip < 1.0:
        problems.append("eps_clip must lie in (0, 1)")
    if c.temperature < 0:
        problems.append("temperature must be nonnegative")
    if not 0.0 < c.top_p <= 1.0:
        problems.append("top_p must lie in (0, 1]")
    if not 0 <= c.seed < 2**64:
        problems.append("seed must be a 64-bit unsigned integer")
    if c.shard_target < 0:
        problems.append("shard_target must be nonnegative")
    if not c.step_size > 0:
        problems.append("step_size must be positive")
    if c.request_timeout <= 0:
        problems.append("request_timeout must be positive")
    for name in (
        "toy_invalid_rate", "toy_format_error_rate",
        "toy_solver_format_error_rate", "toy_initial_competence",
        "toy_recall", "toy_false_reject",
    ):
        if not 0.0 <= getattr(c, name) <= 1.0:
            problems.append(f"{name} must lie in [0, 1]")
    if c.toy_eta < 0 or c.toy_eta_bad < 0:
        problems.append("toy_eta and toy_eta_bad must be nonnegative")
    if c.toy_biased_skill not in {s.value for s in SKILLS} | {""}:
        problems.append(f"toy_biased_skill {c.toy_biased_skill!r} is not a skill")
    return problems


def shipped_config_path(name: str) -> Path:
    """Path of a config bundled with the package, e.g. ``"toy_biased"``."""
    from importlib import resources

    path = Path(str(resources.files("rise") / "configs" / f"{name}.toml"))
    if not path.is_file():
        raise ConfigError(f"no shipped config named {name!r}")
    return path
