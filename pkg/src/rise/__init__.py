"""Questioner/solver self-evolution with consistency-based curation."""

from rise.config import ScheduleConfig, SkillCategory, QuestionType, ImageRef, load_config, validate_config
from rise.orchestrator import Environment, run_evolution

__all__ = [
    "ScheduleConfig",
    "SkillCategory",
    "QuestionType",
    "ImageRef",
    "load_config",
    "validate_config",
    "Environment",
    "run_evolution",
]
__version__ = "0.1.0"
