from __future__ import annotations

import pytest

from rise.config import ScheduleConfig, load_config_file, shipped_config_path
from rise.orchestrator import Environment


def small_config(**changes) -> ScheduleConfig:
    """A fast toy schedule for unit tests."""
    base = dict(total_budget_B=4, cycles_n=2, phase_len_b=2, batch_size=6, rollouts_G=4,
                samples_M=6, candidates_per_construct=24, shard_target=12, toy_scene_pool=48,
                step_size=3.0)
    base.update(changes)
    return ScheduleConfig(**base)


@pytest.fixture
def cfg() -> ScheduleConfig:
    return small_config()


@pytest.fixture
def toy_env(cfg) -> Environment:
    return Environment.toy(cfg)


@pytest.fixture(scope="session")
def biased_cfg() -> ScheduleConfig:
    return load_config_file(shipped_config_path("toy_biased"))
