"""Acceptance suite: one check per criterion, each printing a PASS/FAIL line.

Run under pytest, or directly with ``python tests/test_acceptance.py``.
"""

from __future__ import annotations

import filecmp
import itertools
import json
import math
import sys
import tempfile
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from oracles import advantage_oracle, curation_oracle, skill_bonus_oracle  # noqa: E402
from test_curation import make_candidate, random_pool  # noqa: E402
from test_grpo import gradient_relative_error, random_instance  # noqa: E402
from test_parsing import CORPUS, check_case, fuzz_parsers  # noqa: E402
from test_rewards import MATH, record, stats_with_bonus  # noqa: E402

from rise import rng as rngmod  # noqa: E402
from rise.agents import judge_validity, verdict_bit, verify_answer  # noqa: E402
from rise.cli import ablation_configs, dispatch  # noqa: E402
from rise.config import SKILLS, QuestionType, ScheduleConfig, load_config_file, shipped_config_path  # noqa: E402
from rise.curation import curate  # noqa: E402
from rise.grpo import group_advantages  # noqa: E402
from rise.orchestrator import (  # noqa: E402
    CONSTRUCT,
    QUESTIONER_UPDATE,
    SOLVER_UPDATE,
    SUPERVISOR_REFRESH,
    Environment,
    run_evolution,
)
from rise.parsing import FORMAT_INVALID, ExtractedAnswer, QuestionRecord  # noqa: E402
from rise.rewards import SkillStats, questioner_reward, skill_bonus, solver_reward  # noqa: E402
from rise.toyworld import audit_items  # noqa: E402

REFERENCE = json.loads((Path(__file__).parent / "fixtures" / "reference_runs.json").read_text(encoding="utf-8"))
SEEDS = range(5)


def biased_config() -> ScheduleConfig:
    return load_config_file(shipped_config_path("toy_biased"))


def two_sigma(p: float, n: int) -> float:
    return 2 * math.sqrt(p * (1 - p) / n)


# -- 1. GRPO ------------------------------------------------------------------

def check_c1():
    rng = np.random.default_rng(2024)
    cfg = ScheduleConfig()
    worst = worst_mean = worst_shift = 0.0
    for _ in range(1000):
        g = int(rng.integers(2, 17))
        scale = rng.choice([1e-2, 1.0, 1e2])
        r = rng.normal(size=g) * scale
        a = group_advantages(r, cfg.eps_norm)
        worst = max(worst, float(np.max(np.abs(a - advantage_oracle(r, cfg.eps_norm)))))
        worst_mean = max(worst_mean, abs(float(np.mean(a))))
        # shifts comparable to the spread; a huge offset only measures lost mantissa bits
        shifted = group_advantages(r + rng.uniform(-100, 100) * scale, cfg.eps_norm)
        worst_shift = max(worst_shift, float(np.max(np.abs(a - shifted))))
    # exact arithmetic where every intermediate is representable
    exact_centre = exact_shift = True
    for _ in range(1000):
        g = 2 ** int(rng.integers(1, 5))
        r = rng.integers(-16, 17, size=g) / 8
        exact_centre &= float(np.sum(r - r.mean())) == 0.0
        exact_shift &= np.array_equal(group_advantages(r, cfg.eps_norm),
                                      group_advantages(r + float(rng.integers(-1000, 1000)), cfg.eps_norm))
    grad = max(gradient_relative_error(*random_instance(rng)) for _ in range(50))
    ok = (worst <= 1e-12 and worst_mean <= 1e-14 and worst_shift <= 1e-12
          and exact_centre and exact_shift and grad < 1e-4)
    return ok, (f"oracle err {worst:.1e}, |mean| {worst_mean:.1e}, shift err {worst_shift:.1e}, "
                f"dyadic exact centring={exact_centre} shift={exact_shift}, grad rel err {grad:.1e}")


# -- 2. rewards -----------------------------------------------------------------

def check_c2():
    cfg = ScheduleConfig(lambda_v=0.2, lambda_s=0.2)
    worst, cells, invalid_ok = 0.0, 0, True
    for d, v, bonus in itertools.product([i / 10 for i in range(6)], [0, 1], [i / 4 for i in range(5)]):
        stats = stats_with_bonus(bonus)
        ledger = d + 0.2 * v + 0.2 * bonus
        worst = max(worst, abs(questioner_reward(record(), d, v, stats, cfg).value - ledger))
        invalid_ok &= questioner_reward(FORMAT_INVALID, d, v, stats, cfg).value == -1.0
        cells += 1
    label = ExtractedAnswer.of("3")
    solver_ok = (solver_reward("\\boxed{3}", label).value == 1.0
                 and solver_reward("\\boxed{03.0}", label).value == 1.0
                 and solver_reward("\\boxed{4}", label).value == 0.0
                 and solver_reward("no answer", label).value == -1.0
                 and solver_reward("\\boxed{}", label).value == -1.0)
    ok = worst <= 1e-12 and invalid_ok and solver_ok and cells == 60
    return ok, f"{cells} grid cells, max err {worst:.1e}, invalid -> -1: {invalid_ok}, solver ledger: {solver_ok}"


# -- 3. skill bonus -----------------------------------------------------------------

def check_c3():
    rng = np.random.default_rng(7)
    worst = 0.0
    for i in range(10_000):
        hi = int(rng.choice([1, 5, 50, 1000]))
        counts = rng.integers(0, hi + 1, size=len(SKILLS))
        if i % 10 == 0:
            counts[rng.integers(len(SKILLS))] = 0
        stats = SkillStats(dict(zip(SKILLS, map(int, counts))))
        for j, k in enumerate(SKILLS):
            worst = max(worst, abs(skill_bonus(k, stats) - float(skill_bonus_oracle(list(map(int, counts)), j))))
    empty = all(skill_bonus(k, SkillStats()) == 0.0 for k in SKILLS)
    clamp = skill_bonus(MATH, SkillStats({MATH: 60})) == 0.0
    full = skill_bonus(SKILLS[0], SkillStats({MATH: 60})) == 1.0
    assert skill_bonus_oracle([0, 0, 0, 0, 60, 0], 4) == Fraction(0)
    ok = worst <= 1e-12 and empty and clamp and full
    return ok, f"10000 vectors, max err {worst:.1e}, n̄=0 -> 0: {empty}, clamp: {clamp}, empty skill -> 1: {full}"


# -- 4. curation ------------------------------------------------------------------

def balanced_pool(rng, size):
    """Pools with every skill well represented, so the balance clause bites."""
    out = []
    for i in range(size):
        v, u = (1, 1) if rng.random() < 0.9 else (0, 1)
        out.append(make_candidate(i, SKILLS[i % len(SKILLS)], float(rng.choice([0.3, 0.5, 0.7, 0.9])), v, u))
    return out


def check_c4():
    rng = np.random.default_rng(11)
    mismatches = balance_cases = balance_failures = 0
    for trial in range(1000):
        pool = random_pool(rng, int(rng.integers(0, 201))) if trial < 500 else \
            balanced_pool(rng, int(rng.integers(60, 201)))
        target = int(rng.integers(0, 121))
        cfg = ScheduleConfig(shard_target=target, drop_ties=bool(trial % 7 == 0))
        _, judged, got = curate(pool, cfg, np.random.default_rng(trial))
        want = curation_oracle(pool, 0.3, 0.8, target, np.random.default_rng(trial), cfg.drop_ties)
        mismatches += got != want
        available = [sum(1 for e in judged if e.skill == k and not (cfg.drop_ties and e.report.tie))
                     for k in SKILLS]
        # every skill can supply its full share of ceil(T / 6)
        if target and min(available) >= math.ceil(target / len(SKILLS)):
            balance_cases += 1
            per_skill = [sum(1 for e in got if e.skill == k) for k in SKILLS]
            balance_failures += max(per_skill) - min(per_skill) > 1
    ok = mismatches == 0 and balance_failures == 0 and balance_cases >= 100
    return ok, (f"1000 pools, {mismatches} oracle mismatches; balance checked on {balance_cases} pools, "
                f"{balance_failures} violations")


# -- 5. schedule ----------------------------------------------------------------

def tiny(B, b):
    return ScheduleConfig(total_budget_B=B, cycles_n=B // b, phase_len_b=b, batch_size=1, rollouts_G=2,
                          samples_M=2, candidates_per_construct=2, shard_target=2, toy_scene_pool=4)


def cycle_pattern(n, b):
    return ([QUESTIONER_UPDATE] * b + [CONSTRUCT] + [SOLVER_UPDATE] * b + [SUPERVISOR_REFRESH]) * n


def trace_of(cfg):
    return run_evolution(cfg, Environment.toy(cfg)).trace


def check_c5():
    fine = trace_of(tiny(20, 5)).phases() == cycle_pattern(4, 5)
    coarse_trace = trace_of(tiny(20, 20))
    coarse = coarse_trace.phases() == cycle_pattern(1, 20) and coarse_trace.cycles() == [1]
    checked = bad = 0
    for B in range(4, 61):
        for b in (d for d in range(1, B + 1) if B % d == 0):
            t = trace_of(tiny(B, b))
            checked += 1
            bad += not (t.count(QUESTIONER_UPDATE) == t.count(SOLVER_UPDATE) == B
                        and t.phases() == cycle_pattern(B // b, b))
    ok = fine and coarse and bad == 0
    return ok, f"(20,4,5) ok={fine}, (20,1,20) ok={coarse}, {checked} factorizations, {bad} violations"


# -- 6. mode collapse -----------------------------------------------------------------

def check_c6():
    cfg = biased_config()
    threshold = REFERENCE["dominant_share_threshold"]
    parts, ok = [], True
    for seed in SEEDS:
        with_bonus = run_evolution(c := cfg.replace(lambda_s=0.2, seed=seed), Environment.toy(c)).reports[-1]
        without = run_evolution(c := cfg.replace(lambda_s=0.0, seed=seed), Environment.toy(c)).reports[-1]
        share = without.dominant_share()
        ok &= with_bonus.entropy > without.entropy and share > threshold
        parts.append(f"s{seed}: H {with_bonus.entropy:.3f} vs {without.entropy:.3f}, share {share:.2f}")
    return ok, f"threshold {threshold}; " + "; ".join(parts)


# -- 7. supervisor filtering ----------------------------------------------------------

def check_c7():
    cfg = biased_config()
    env = Environment.toy(cfg)
    prevalence = 0.5
    items = audit_items(env.world, 4000, prevalence, rngmod.stream(cfg.seed, "audit"))
    tp = fp = fn = 0
    for a in items:
        if a.kind == "validity":
            q = QuestionRecord(a.declared, QuestionType.MULTIPLE_CHOICE, a.question, a.question)
            flagged = not verdict_bit(judge_validity(env.supervisor, a.image, q))
        else:
            flagged = not verdict_bit(verify_answer(env.supervisor, a.image, a.question,
                                                    ExtractedAnswer.of(a.candidate)))
        tp += a.problematic and flagged
        fp += flagged and not a.problematic
        fn += a.problematic and not flagged
    precision, recall = tp / (tp + fp), tp / (tp + fn)
    want_p = env.world.confusion.expected_precision(prevalence)
    want_r = cfg.toy_recall
    pr_ok = (abs(precision - want_p) <= two_sigma(want_p, tp + fp)
             and abs(recall - want_r) <= two_sigma(want_r, tp + fn))
    parts, vc_ok = [], True
    for seed in SEEDS:
        rates = {}
        for on in (True, False):
            c = cfg.replace(use_supervisor=on, seed=seed)
            rates[on] = run_evolution(c, Environment.toy(c)).reports[-1].valid_and_correct_rate
        vc_ok &= rates[True] is not None and rates[False] is not None and rates[True] > rates[False]
        parts.append(f"s{seed}: {rates[True]:.2f} > {rates[False]:.2f}")
    return pr_ok and vc_ok, (f"{len(items)} judgments: precision {precision:.3f} (target {want_p:.2f}), "
                             f"recall {recall:.3f} (target {want_r:.2f}); VC rate on vs off " + "; ".join(parts))


# -- 8. alternation efficiency ----------------------------------------------------------

def check_c8():
    cfg = biased_config()
    threshold = REFERENCE["competence_threshold"]
    first = {}
    for b, seed, c in ablation_configs(cfg, [5, 20], list(SEEDS)):
        reports = run_evolution(c, Environment.toy(c), seed).reports
        first[(b, seed)] = next((r.cycle * b for r in reports if r.mean_competence >= threshold), math.inf)
    wins = [first[(5, s)] <= first[(20, s)] and first[(5, s)] < math.inf for s in SEEDS]
    detail = "; ".join(f"s{s}: b5 {first[(5, s)]} vs b20 {first[(20, s)]}" for s in SEEDS)
    return sum(wins) >= 4, f"threshold {threshold} (update steps to cross), {sum(wins)}/5 wins; {detail}"


# -- 9. determinism ---------------------------------------------------------------

def check_c9():
    config = str(shipped_config_path("toy_biased"))
    with tempfile.TemporaryDirectory() as tmp:
        runs = [Path(tmp) / name for name in ("run1", "run2")]
        codes = [dispatch(["evolve", "--backend", "toy", "--seed", "42", "--config", config, "--out", str(r)])
                 for r in runs]
        files = sorted(p.relative_to(runs[0]) for p in runs[0].rglob("*") if p.is_file())
        other = sorted(p.relative_to(runs[1]) for p in runs[1].rglob("*") if p.is_file())
        same = files == other and all(filecmp.cmp(runs[0] / f, runs[1] / f, shallow=False) for f in files)
        kinds = {"shards": any(f.parts[0] == "shards" for f in files),
                 "trace": Path("trace.jsonl") in files,
                 "csv": sum(f.suffix == ".csv" for f in files) >= 3}
    ok = codes == [0, 0] and same and all(kinds.values())
    return ok, f"exit codes {codes}, {len(files)} files byte-identical={same}, covers {kinds}"


# -- 10. parsing ----------------------------------------------------------------

def check_c10():
    failed = [c["id"] for c in CORPUS if not check_case(c)]
    formats = {c["format"] for c in CORPUS}
    fuzzed = fuzz_parsers(100_000, seed=10)
    ok = len(CORPUS) == 200 and not failed and formats == {"question", "answer", "validity", "verify"} \
        and fuzzed == 100_000
    return ok, f"{len(CORPUS) - len(failed)}/{len(CORPUS)} corpus cases, {fuzzed} fuzz strings without a crash"


CHECKS = {1: check_c1, 2: check_c2, 3: check_c3, 4: check_c4, 5: check_c5,
          6: check_c6, 7: check_c7, 8: check_c8, 9: check_c9, 10: check_c10}


def line(n: int, ok: bool, detail: str) -> str:
    return f"CRITERION {n}: {'PASS' if ok else 'FAIL'} {detail}"


@pytest.mark.parametrize("n", list(CHECKS))
def test_criterion(n, capsys):
    ok, detail = CHECKS[n]()
    with capsys.disabled():
        print("\n" + line(n, ok, detail))
    assert ok, detail


if __name__ == "__main__":
    results = [(n, *check()) for n, check in CHECKS.items()]
    for n, ok, detail in results:
        print(line(n, ok, detail))
    sys.exit(0 if all(ok for _, ok, _ in results) else 1)
