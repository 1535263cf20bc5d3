import pytest
from hypothesis import given, settings, strategies as st

from rise.config import (
    SKILLS,
    ConfigError,
    ImageRef,
    ScheduleConfig,
    SkillCategory,
    dump_config,
    load_config,
    load_config_file,
    resolve_config_path,
    shipped_config_path,
    validate_config,
)


def test_defaults_are_reference_hyperparameters():
    c = ScheduleConfig()
    assert (c.total_budget_B, c.cycles_n, c.phase_len_b) == (20, 4, 5)
    assert (c.batch_size, c.samples_M) == (256, 10)
    assert (c.tau_min, c.tau_max) == (0.3, 0.8)
    assert (c.lambda_v, c.lambda_s) == (0.2, 0.2)
    assert validate_config(c) == []


def test_coarse_factorization_is_valid():
    assert validate_config(ScheduleConfig(cycles_n=1, phase_len_b=20)) == []


def test_budget_mismatch_reported():
    problems = validate_config(ScheduleConfig(total_budget_B=20, cycles_n=3, phase_len_b=5))
    assert any("B ≠ n·b" in p for p in problems)


def test_tau_order_reported():
    problems = validate_config(ScheduleConfig(tau_min=0.9, tau_max=0.5))
    assert any("tau_min > tau_max" in p for p in problems)


def test_every_violation_is_reported_at_once():
    bad = ScheduleConfig(total_budget_B=7, eps_norm=0.0, tau_min=0.9, tau_max=0.1)
    problems = validate_config(bad)
    assert len(problems) >= 3


def test_unknown_key_is_an_error():
    with pytest.raises(ConfigError, match="lamda_s"):
        load_config("lamda_s = 0.1\n")


def test_nested_tables_rejected():
    with pytest.raises(ConfigError):
        load_config("[schedule]\ncycles_n = 4\n")


def test_bad_toml_is_config_error():
    with pytest.raises(ConfigError):
        load_config("cycles_n = = 4")


def test_wrong_type_is_config_error():
    with pytest.raises(ConfigError):
        load_config('cycles_n = "four"\n')


def test_invalid_values_rejected_on_load():
    with pytest.raises(ConfigError):
        load_config("total_budget_B = 21\n")


@settings(max_examples=60, deadline=None)
@given(n=st.integers(1, 12), b=st.integers(1, 12),
       lam=st.floats(0, 1), tmin=st.floats(0, 0.5), seed=st.integers(0, 2**32))
def test_load_dump_load_is_fixed_point(n, b, lam, tmin, seed):
    c = ScheduleConfig(total_budget_B=n * b, cycles_n=n, phase_len_b=b, lambda_s=lam,
                       tau_min=tmin, seed=seed)
    once = load_config(dump_config(c))
    assert once == c
    assert load_config(dump_config(once)) == once


def test_shipped_configs_load():
    for name in ("reference", "toy_biased"):
        c = load_config_file(shipped_config_path(name))
        assert validate_config(c) == []


def test_config_path_resolution(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv("RISE_CONFIG", raising=False)
    assert resolve_config_path(None) is None
    (tmp_path / "rise.toml").write_text("seed = 3\n")
    assert resolve_config_path(None).name == "rise.toml"
    monkeypatch.setenv("RISE_CONFIG", "/elsewhere.toml")
    assert str(resolve_config_path(None)) == "/elsewhere.toml"
    assert str(resolve_config_path("given.toml")) == "given.toml"


def test_skill_order_and_display():
    assert len(SKILLS) == 6
    assert SkillCategory.MATH_AND_COUNTING.display == "math & counting"


def test_image_ref_round_trip():
    for ref in (ImageRef.file("/data/a b.png"), ImageRef.synthetic("scene-00003")):
        assert ImageRef.parse(str(ref)) == ref
    with pytest.raises(ValueError):
        ImageRef.parse("nokind")
