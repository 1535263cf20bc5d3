"""The alternation schedule: n cycles of (questioner phase, construct,
solver phase, supervisor refresh), each role getting b update steps per
cycle. ``n = 1, b = B`` is the coarse schedule.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from rise import rng as rngmod
from rise.agents import (
    AgentHandle,
    BackendError,
    RemoteBackend,
    generate_question,
    judge_validity,
    make_handles,
    refresh_supervisor,
    solve,
    verdict_bit,
)
from rise.config import SKILLS, ImageRef, ScheduleConfig, SkillCategory, dump_config, validate_config, ConfigError
from rise.curation import (
    Candidate,
    PseudoSample,
    build_candidates,
    curate,
    fan_out,
    sample_answers,
    write_shard,
)
from rise.grpo import group_advantages
from rise.parsing import QuestionRecord, parse_question_output
from rise.rewards import SkillStats, questioner_reward, solver_reward
from rise.scoring import consistency_score
from rise.telemetry import Confusion, CycleReport, emit_reports, fmt, skill_entropy, write_csv
from rise.toyworld import ToyWorld

logger = logging.getLogger(__name__)

QUESTIONER_UPDATE = "questioner-update"
CONSTRUCT = "construct"
SOLVER_UPDATE = "solver-update"
SUPERVISOR_REFRESH = "supervisor-refresh"
PHASES = (QUESTIONER_UPDATE, CONSTRUCT, SOLVER_UPDATE, SUPERVISOR_REFRESH)


@dataclass(frozen=True)
class PhaseEvent:
    phase: str
    cycle: int
    step: int
    counters: dict[str, Any] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps({"phase": self.phase, "cycle": self.cycle, "step": self.step,
                           "counters": self.counters}, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "PhaseEvent":
        d = json.loads(line)
        return cls(d["phase"], d["cycle"], d["step"], d["counters"])


class PhaseTrace(list):
    """Ordered list of :class:`PhaseEvent`."""

    def count(self, phase: str) -> int:  # type: ignore[override]
        return sum(1 for e in self if e.phase == phase)

    def cycles(self) -> list[int]:
        return sorted({e.cycle for e in self})

    def phases(self) -> list[str]:
        return [e.phase for e in self]

    def write(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for e in self:
                fh.write(e.to_json() + "\n")

    @classmethod
    def read(cls, path: str | Path) -> "PhaseTrace":
        with open(path, encoding="utf-8") as fh:
            return cls(PhaseEvent.from_json(line) for line in fh if line.strip())


@dataclass
class Environment:
    """Role handles plus the image pool; ``world`` is set in toy mode."""

    questioner: AgentHandle
    solver: AgentHandle
    supervisor: AgentHandle
    images: list[ImageRef]
    world: ToyWorld | None = None

    @classmethod
    def toy(cls, cfg: ScheduleConfig, seed: int | None = None) -> "Environment":
        world = ToyWorld.from_config(cfg, seed)
        qb, sb = world.backends(cfg)
        q, s, sup = make_handles(qb, sb, cfg)
        return cls(q, s, sup, world.images(), world)

    @classmethod
    def remote(cls, cfg: ScheduleConfig, images: Sequence[ImageRef],
               backend: RemoteBackend | None = None) -> "Environment":
        backend = backend or RemoteBackend.from_env(cfg)
        q, s, sup = make_handles(backend, backend, cfg)
        return cls(q, s, sup, list(images))

    def oracle(self):
        return self.world.valid_and_correct if self.world is not None else None

    def mean_competence(self) -> float | None:
        state = getattr(self.solver.backend, "state", None)
        return state.mean if state is not None else None

    def policy_skill_entropy(self) -> float | None:
        dist = getattr(self.questioner.backend, "skill_distribution", None)
        return skill_entropy(dist()) if dist is not None else None


@dataclass
class EvolutionState:
    env: Environment
    seed: int
    window: SkillStats = field(default_factory=SkillStats)
    cycle: int = 0
    step_q: int = 0
    step_s: int = 0
    shards: list[list[PseudoSample]] = field(default_factory=list)


@dataclass
class RunResult:
    state: EvolutionState
    trace: PhaseTrace
    reports: list[CycleReport]
    steps: list[dict[str, Any]]


def _r6(x: float | None):
    return None if x is None else round(float(x), 6)


def _sample_images(state: EvolutionState, n: int, *key) -> list[ImageRef]:
    pool = state.env.images
    rng = rngmod.stream(state.seed, *key)
    idx = rng.choice(len(pool), size=min(n, len(pool)), replace=False)
    return [pool[int(i)] for i in idx]


def update_skill_window(stats: SkillStats, constructed: Sequence[SkillCategory | QuestionRecord]) -> SkillStats:
    """Replace (not accumulate) the window with the just-constructed histogram."""
    skills = [q.skill if isinstance(q, QuestionRecord) else q for q in constructed]
    return SkillStats.from_skills(skills)


def questioner_phase(state: EvolutionState, cfg: ScheduleConfig, trace: PhaseTrace,
                     steps: list[dict]) -> EvolutionState:
    env = state.env
    q, s, sup = env.questioner, env.solver, env.supervisor
    for _ in range(cfg.phase_len_b):
        state.step_q += 1
        t = state.step_q
        if hasattr(q.backend, "snapshot_policy"):
            q.backend.snapshot_policy()
        images = _sample_images(state, cfg.batch_size, "q-images", t)

        def one(i: int, image: ImageRef):
            raws, rewards, skills = [], [], []
            for g in range(cfg.rollouts_G):
                raw = generate_question(q, image, rngmod.stream(state.seed, "q", t, i, g))
                parsed = parse_question_output(raw)
                if isinstance(parsed, QuestionRecord):
                    answers = sample_answers(s, image, parsed.text, cfg.samples_M,
                                             rngmod.stream(state.seed, "q-solve", t, i, g))
                    report = consistency_score(answers, cfg.samples_M)
                    v = verdict_bit(judge_validity(sup, image, parsed)) if cfg.use_supervisor else 1
                    skills.append(parsed.skill)
                    d = report.difficulty_d
                else:
                    v, d = 0, 0.0
                rewards.append(questioner_reward(parsed, d, v, state.window, cfg).value)
                raws.append(raw)
            return image, raws, rewards, skills

        results = fan_out(one, list(enumerate(images)), cfg.max_concurrency,
                          getattr(q.backend, "concurrent", False))
        all_rewards = [r for _, _, rs, _ in results for r in rs]
        if hasattr(q.backend, "action_of"):
            groups = [([q.backend.action_of(img, raw) for raw in raws], rs)
                      for img, raws, rs, _ in results]
            q.backend.update_policy(groups, cfg)
        skills = [k for *_, ks in results for k in ks]
        counters = {
            "questions": len(all_rewards),
            "format_invalid": sum(1 for r in all_rewards if r == -1.0),
            "mean_reward": _r6(np.mean(all_rewards)) if all_rewards else None,
            "zero_variance_groups": sum(1 for _, _, rs, _ in results if len(set(rs)) == 1),
            "policy_skill_entropy": _r6(env.policy_skill_entropy()),
        }
        counters.update({f"n_{k.value}": sum(1 for x in skills if x == k) for k in SKILLS})
        trace.append(PhaseEvent(QUESTIONER_UPDATE, state.cycle, t, counters))
        steps.append({"role": "questioner", "cycle": state.cycle, "step": t,
                      "mean_reward": counters["mean_reward"],
                      "policy_skill_entropy": counters["policy_skill_entropy"],
                      "mean_competence": _r6(env.mean_competence())})
    return state


def construct_phase(state: EvolutionState, cfg: ScheduleConfig, trace: PhaseTrace
                    ) -> tuple[list[PseudoSample], CycleReport]:
    env = state.env
    images = _sample_images(state, cfg.candidates_per_construct, "construct-images", state.cycle)
    pool = build_candidates(images, env.questioner, env.solver, env.supervisor, cfg,
                            state.seed, state.cycle, env.oracle())
    if pool.generated and pool.failures == pool.generated:
        raise BackendError(f"cycle {state.cycle}: every construct item failed")
    tau_passed, judged, sampled = curate(pool.entries, cfg,
                                         rngmod.stream(state.seed, "stratify", state.cycle))
    shard = [PseudoSample.from_candidate(c, state.cycle, state.step_q) for c in sampled]
    state.window = update_skill_window(state.window, pool.parsed_skills)

    report = CycleReport(
        cycle=state.cycle,
        skill_histogram=dict(state.window.window_counts),
        generated=pool.generated,
        parsed=pool.parsed,
        tau_passed=len(tau_passed),
        judge_passed=len(judged),
        sampled=len(sampled),
    )
    if env.world is not None:
        report.valid_and_correct_rate = _rate(sampled)
        report.pool_valid_and_correct_rate = _rate(pool.entries)
        report.confusion = Confusion.tally(
            (not c.valid_and_correct, not (c.v == 1 and c.u == 1)) for c in pool.entries
        )
    counters = {"generated": pool.generated, "parsed": pool.parsed, "degenerate": pool.degenerate,
                "failures": pool.failures, "tau_passed": len(tau_passed),
                "judge_passed": len(judged), "sampled": len(sampled)}
    counters.update({f"n_{k.value}": n for k, n in state.window.window_counts.items()})
    trace.append(PhaseEvent(CONSTRUCT, state.cycle, state.step_q, counters))
    return shard, report


def _rate(cands: Sequence[Candidate]) -> float | None:
    if not cands:
        return None
    return sum(1 for c in cands if c.valid_and_correct) / len(cands)


def solver_phase(state: EvolutionState, shard: Sequence[PseudoSample], cfg: ScheduleConfig,
                 trace: PhaseTrace, steps: list[dict]) -> tuple[EvolutionState, list[float]]:
    env = state.env
    s = env.solver
    step_means = []
    for _ in range(cfg.phase_len_b):
        state.step_s += 1
        t = state.step_s
        if not shard:
            logger.warning("cycle %d step %d: empty shard, solver update skipped", state.cycle, t)
            trace.append(PhaseEvent(SOLVER_UPDATE, state.cycle, t, {"skipped": True, "batch": 0}))
            steps.append({"role": "solver", "cycle": state.cycle, "step": t, "mean_reward": None,
                          "policy_skill_entropy": None, "mean_competence": _r6(env.mean_competence())})
            continue
        rng = rngmod.stream(state.seed, "s-batch", t)
        batch = [shard[int(i)] for i in rng.permutation(len(shard))[: cfg.batch_size]]

        def one(i: int, sample: PseudoSample):
            roll = rngmod.stream(state.seed, "s-roll", t, i)
            return [solver_reward(solve(s, sample.image, sample.question.text, roll),
                                  sample.pseudo_label).value for _ in range(cfg.rollouts_G)]

        groups = fan_out(one, list(enumerate(batch)), cfg.max_concurrency,
                         getattr(s.backend, "concurrent", False))
        advantages = [group_advantages(g, cfg.eps_norm) for g in groups]
        s.backend = s.backend.train(batch)
        rewards = [r for g in groups for r in g]
        mean_reward = float(np.mean(rewards))
        step_means.append(mean_reward)
        counters = {
            "skipped": False,
            "batch": len(batch),
            "mean_reward": _r6(mean_reward),
            "format_invalid": sum(1 for r in rewards if r == -1.0),
            "zero_advantage_groups": sum(1 for a in advantages if not np.any(a)),
            "mean_competence": _r6(env.mean_competence()),
        }
        trace.append(PhaseEvent(SOLVER_UPDATE, state.cycle, t, counters))
        steps.append({"role": "solver", "cycle": state.cycle, "step": t, "mean_reward": counters["mean_reward"],
                      "policy_skill_entropy": None, "mean_competence": counters["mean_competence"]})
    return state, step_means


STEP_COLUMNS = ("role", "cycle", "step", "mean_reward", "policy_skill_entropy", "mean_competence")

REPORT_KEYS = ("tp", "fp", "fn", "tn")


def _report_counters(r: CycleReport) -> dict[str, Any]:
    d = {
        "generated": r.generated, "parsed": r.parsed, "tau_passed": r.tau_passed,
        "judge_passed": r.judge_passed, "sampled": r.sampled,
        "valid_and_correct_rate": _r6(r.valid_and_correct_rate),
        "pool_valid_and_correct_rate": _r6(r.pool_valid_and_correct_rate),
        "mean_questioner_reward": _r6(r.mean_questioner_reward),
        "mean_solver_reward": _r6(r.mean_solver_reward),
        "mean_competence": _r6(r.mean_competence),
        "confusion": None if r.confusion is None else [getattr(r.confusion, k) for k in REPORT_KEYS],
    }
    d.update({f"n_{k.value}": r.skill_histogram[k] for k in SKILLS})
    return d


def reports_from_trace(trace: Sequence[PhaseEvent]) -> list[CycleReport]:
    """Rebuild cycle reports from the refresh events of a persisted trace."""
    reports = []
    for e in trace:
        if e.phase != SUPERVISOR_REFRESH or "report" not in e.counters:
            continue
        d = e.counters["report"]
        conf = d.get("confusion")
        reports.append(CycleReport(
            cycle=e.cycle,
            skill_histogram={k: d[f"n_{k.value}"] for k in SKILLS},
            generated=d["generated"], parsed=d["parsed"], tau_passed=d["tau_passed"],
            judge_passed=d["judge_passed"], sampled=d["sampled"],
            valid_and_correct_rate=d["valid_and_correct_rate"],
            pool_valid_and_correct_rate=d["pool_valid_and_correct_rate"],
            confusion=None if conf is None else Confusion(*conf),
            mean_questioner_reward=d["mean_questioner_reward"],
            mean_solver_reward=d["mean_solver_reward"],
            mean_competence=d["mean_competence"],
        ))
    return reports


def run_evolution(cfg: ScheduleConfig, env: Environment, seed: int | None = None,
                  out_dir: str | Path | None = None) -> RunResult:
    """Run ``cycles_n`` alternation cycles of ``phase_len_b`` steps per role.

    With ``out_dir`` the run directory gets a config snapshot, per-cycle
    shards, the phase trace and telemetry CSVs. The trace is written even
    when a backend failure aborts the run.
    """
    problems = validate_config(cfg)
    if problems:
        raise ConfigError(problems)
    seed = cfg.seed if seed is None else seed
    state = EvolutionState(env, seed)
    trace, reports, steps = PhaseTrace(), [], []
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        (out / "shards").mkdir(parents=True, exist_ok=True)
        (out / "config.toml").write_text(dump_config(cfg.replace(seed=seed)), encoding="utf-8")
        if env.world is not None:
            env.world.write_registry(out / "scenes.jsonl")
    try:
        for c in range(1, cfg.cycles_n + 1):
            state.cycle = c
            q_start = len(steps)
            questioner_phase(state, cfg, trace, steps)
            q_rewards = [r["mean_reward"] for r in steps[q_start:] if r["mean_reward"] is not None]
            shard, report = construct_phase(state, cfg, trace)
            state.shards.append(shard)
            if out is not None:
                write_shard(shard, out / "shards" / f"cycle-{c:03d}.jsonl")
            state, s_means = solver_phase(state, shard, cfg, trace, steps)
            refresh_supervisor(env.supervisor, env.solver)
            report.mean_questioner_reward = float(np.mean(q_rewards)) if q_rewards else None
            report.mean_solver_reward = float(np.mean(s_means)) if s_means else None
            report.mean_competence = env.mean_competence()
            reports.append(report)
            trace.append(PhaseEvent(SUPERVISOR_REFRESH, c, state.step_s,
                                    {"aliased": env.supervisor.backend is env.solver.backend,
                                     "report": _report_counters(report)}))
    finally:
        if out is not None:
            trace.write(out / "trace.jsonl")
            write_csv(out / "steps.csv", STEP_COLUMNS,
                      ([fmt(row[k]) for k in STEP_COLUMNS] for row in steps))
            emit_reports(reports_from_trace(trace), out)
    return RunResult(state, trace, reports, steps)
