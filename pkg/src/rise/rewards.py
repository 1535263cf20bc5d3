"""Questioner reward, solver reward and the skill-balancing bonus."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

from rise.config import SKILLS, ScheduleConfig, SkillCategory
from rise.parsing import (
    UNPARSEABLE,
    ExtractedAnswer,
    ParsedQuestion,
    QuestionRecord,
    extract_boxed_answer,
)

FORMAT_PENALTY = -1.0


@dataclass(frozen=True)
class SkillStats:
    """Per-skill question counts from the previous construct phase."""

    window_counts: Mapping[SkillCategory, int] = field(
        default_factory=lambda: {k: 0 for k in SKILLS}
    )

    def __post_init__(self):
        counts = {k: int(self.window_counts.get(k, 0)) for k in SKILLS}
        if any(n < 0 for n in counts.values()):
            raise ValueError("skill counts must be nonnegative")
        object.__setattr__(self, "window_counts", counts)

    @classmethod
    def from_skills(cls, skills: Iterable[SkillCategory]) -> "SkillStats":
        counts = {k: 0 for k in SKILLS}
        for k in skills:
            counts[k] += 1
        return cls(counts)

    @property
    def mean_nbar(self) -> float:
        return sum(self.window_counts.values()) / len(SKILLS)


@dataclass(frozen=True)
class RewardOutcome:
    value: float
    components: Mapping[str, float]

    @property
    def format_invalid(self) -> bool:
        return "format_penalty" in self.components


def skill_bonus(k: SkillCategory, stats: SkillStats) -> float:
    nbar = stats.mean_nbar
    if nbar == 0:
        return 0.0
    return max((nbar - stats.window_counts[k]) / nbar, 0.0)


def questioner_reward(
    parse: ParsedQuestion,
    d: float,
    v: int | str,
    stats: SkillStats,
    cfg: ScheduleConfig,
) -> RewardOutcome:
    """``d + λ_v·v + λ_s·bonus`` for valid questions, -1 otherwise.

    An unparseable verdict counts as ``v = 0``.
    """
    if not isinstance(parse, QuestionRecord):
        return RewardOutcome(FORMAT_PENALTY, {"format_penalty": FORMAT_PENALTY})
    if not 0.0 <= d <= 0.5:
        raise ValueError(f"difficulty {d!r} outside [0, 0.5]")
    v = 1 if v == 1 else 0
    bonus = skill_bonus(parse.skill, stats)
    value = d + cfg.lambda_v * v + cfg.lambda_s * bonus
    return RewardOutcome(value, {"difficulty_d": d, "validity_v": v, "skill_bonus_b": bonus})


def solver_reward(response: str, pseudo_label: ExtractedAnswer) -> RewardOutcome:
    if not pseudo_label.parseable or pseudo_label.normalized == UNPARSEABLE:
        raise ValueError("pseudo-label must be a real answer")
    extracted = extract_boxed_answer(response)
    if not extracted.parseable:
        return RewardOutcome(FORMAT_PENALTY, {"format_penalty": FORMAT_PENALTY})
    hit = 1.0 if extracted.normalized == pseudo_label.normalized else 0.0
    return RewardOutcome(hit, {"match": hit})
