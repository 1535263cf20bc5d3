"""Candidate construction, filtering, skill-stratified sampling and shards."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence, TypeVar

import numpy as np

from rise import rng as rngmod
from rise.agents import (
    AgentHandle,
    BackendError,
    generate_question,
    judge_validity,
    solve,
    verify_answer,
)
from rise.config import SKILLS, ImageRef, QuestionType, ScheduleConfig, SkillCategory
from rise.parsing import (
    UNPARSEABLE,
    ExtractedAnswer,
    QuestionRecord,
    extract_boxed_answer,
    parse_question_output,
)
from rise.scoring import ConsistencyReport, consistency_score

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
SHARD_KIND = "rise-shard"
SHARD_FIELDS = (
    "schema_version", "image", "skill", "qtype", "question", "question_raw",
    "pseudo_label", "label_raw", "c", "v", "u", "tie", "cycle", "step",
)

T = TypeVar("T")
# (image, declared skill, question text, normalized label) -> valid and correct
TruthOracle = Callable[[ImageRef, SkillCategory, str, str], bool]


@dataclass(frozen=True)
class Candidate:
    image: ImageRef
    question: QuestionRecord
    report: ConsistencyReport
    v: int | str
    u: int | str
    valid_and_correct: bool | None = None

    @property
    def skill(self) -> SkillCategory:
        return self.question.skill

    @property
    def c(self) -> float:
        return self.report.consistency_c


@dataclass
class CandidatePool:
    """One construct phase: the pool plus what was lost before it."""

    entries: list[Candidate] = field(default_factory=list)
    generated: int = 0
    parsed: int = 0
    degenerate: int = 0
    failures: int = 0
    parsed_skills: list[SkillCategory] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)


@dataclass(frozen=True)
class PseudoSample:
    image: ImageRef
    question: QuestionRecord
    pseudo_label: ExtractedAnswer
    consistency_c: float
    verdict_v: int | str
    verdict_u: int | str
    cycle: int = 0
    step: int = 0
    tie: bool = False

    @property
    def skill(self) -> SkillCategory:
        return self.question.skill

    @classmethod
    def from_candidate(cls, cand: Candidate, cycle: int, step: int) -> "PseudoSample":
        return cls(
            image=cand.image,
            question=cand.question,
            pseudo_label=cand.report.majority,
            # shards keep six decimals; rounding here keeps write/read exact
            consistency_c=round(cand.c, 6),
            verdict_v=cand.v,
            verdict_u=cand.u,
            cycle=cycle,
            step=step,
            tie=cand.report.tie,
        )

    def satisfies(self, tau_min: float, tau_max: float) -> bool:
        return tau_min <= self.consistency_c <= tau_max and self.verdict_v == 1 and self.verdict_u == 1


def fan_out(fn: Callable[..., T], items: Sequence, max_concurrency: int, concurrent: bool) -> list[T]:
    if concurrent and max_concurrency > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=max_concurrency) as pool:
            return list(pool.map(lambda args: fn(*args), items))
    return [fn(*args) for args in items]


def sample_answers(solver: AgentHandle, image: ImageRef, question: str, M: int,
                   rng: np.random.Generator) -> list[ExtractedAnswer]:
    return [extract_boxed_answer(solve(solver, image, question, rng)) for _ in range(M)]


def build_candidates(
    images: Sequence[ImageRef],
    questioner: AgentHandle,
    solver: AgentHandle,
    supervisor: AgentHandle,
    cfg: ScheduleConfig,
    seed: int,
    cycle: int = 0,
    oracle: TruthOracle | None = None,
) -> CandidatePool:
    """Generate one question per image, vote over M answers and judge it.

    Format-invalid questions and all-unparseable vote sets never enter the
    pool. With ``cfg.use_supervisor`` off both verdicts are fixed at 1.
    """

    def one(i: int, image: ImageRef):
        try:
            raw = generate_question(questioner, image, rngmod.stream(seed, "construct", cycle, i, "q"))
            parsed = parse_question_output(raw)
            if not isinstance(parsed, QuestionRecord):
                return "invalid", None
            answers = sample_answers(solver, image, parsed.text, cfg.samples_M,
                                     rngmod.stream(seed, "construct", cycle, i, "s"))
            report = consistency_score(answers, cfg.samples_M)
            if report.degenerate:
                return "degenerate", parsed
            if cfg.use_supervisor:
                v = judge_validity(supervisor, image, parsed).verdict
                u = verify_answer(supervisor, image, parsed.text, report.majority).verdict
            else:
                v = u = 1
            truth = None
            if oracle is not None:
                truth = oracle(image, parsed.skill, parsed.text, report.majority.normalized)
            return "ok", Candidate(image, parsed, report, v, u, truth)
        except BackendError as exc:
            logger.warning("construct item %d (%s) aborted: %s", i, image, exc)
            return "failed", None

    results = fan_out(one, list(enumerate(images)), cfg.max_concurrency,
                      getattr(questioner.backend, "concurrent", False))
    pool = CandidatePool(generated=len(images))
    for status, item in results:
        if status == "failed":
            pool.failures += 1
        elif status == "degenerate":
            pool.parsed += 1
            pool.degenerate += 1
            pool.parsed_skills.append(item.skill)
        elif status == "ok":
            pool.parsed += 1
            pool.parsed_skills.append(item.skill)
            pool.entries.append(item)
    return pool


def confidence_filter(pool: Iterable[T], tau_min: float, tau_max: float) -> list[T]:
    """Keep entries with tau_min <= c <= tau_max (closed interval)."""
    if not 0.0 <= tau_min <= tau_max <= 1.0:
        raise ValueError("need 0 <= tau_min <= tau_max <= 1")
    return [e for e in pool if tau_min <= e.c <= tau_max]


def judge_filter(pool: Iterable[T]) -> list[T]:
    """Keep entries with v = 1 and u = 1; unparseable verdicts fail."""
    return [e for e in pool if e.v == 1 and e.u == 1]


def stratified_quotas(counts: Sequence[int], target_total: int) -> list[int]:
    """Per-skill draw sizes: floor(target/6) each, capped by availability,
    then leftover handed out one at a time round-robin in skill order to
    skills that still have entries."""
    if target_total < 0:
        raise ValueError("target_total must be nonnegative")
    base = target_total // len(counts)
    take = [min(n, base) for n in counts]
    remaining = target_total - sum(take)
    while remaining > 0:
        progressed = False
        for k, n in enumerate(counts):
            if remaining == 0:
                break
            if take[k] < n:
                take[k] += 1
                remaining -= 1
                progressed = True
        if not progressed:
            break
    return take


def stratified_sample(pool: Sequence[T], target_total: int, rng: np.random.Generator,
                      skill_of: Callable[[T], SkillCategory] = lambda e: e.skill) -> list[T]:
    """Skill-balanced draw without replacement.

    For each skill in fixed order the chosen entries are a prefix of a
    seeded permutation of that skill's entries (in pool order).
    """
    by_skill = {k: [] for k in SKILLS}
    for e in pool:
        by_skill[skill_of(e)].append(e)
    quotas = stratified_quotas([len(by_skill[k]) for k in SKILLS], target_total)
    out = []
    for k, q in zip(SKILLS, quotas):
        entries = by_skill[k]
        if not entries:
            continue
        order = rng.permutation(len(entries))[:q]
        out.extend(entries[int(i)] for i in order)
    return out


def curate(pool: Iterable[Candidate], cfg: ScheduleConfig, rng: np.random.Generator
           ) -> tuple[list[Candidate], list[Candidate], list[Candidate]]:
    """τ-filter, judge-filter, then sample; returns every stage's survivors."""
    tau_passed = confidence_filter(pool, cfg.tau_min, cfg.tau_max)
    judged = judge_filter(tau_passed)
    eligible = [e for e in judged if not e.report.tie] if cfg.drop_ties else judged
    if cfg.stratify:
        sampled = stratified_sample(eligible, cfg.shard_target, rng)
    else:
        order = rng.permutation(len(eligible))[: cfg.shard_target]
        sampled = [eligible[int(i)] for i in order]
    return tau_passed, judged, sampled


# -- shards -------------------------------------------------------------------

class ShardSchemaError(ValueError):
    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")


def _verdict_json(v: int | str):
    return v if v in (0, 1) else None


def _verdict_from_json(v) -> int | str:
    return UNPARSEABLE if v is None else v


def _sample_line(s: PseudoSample) -> str:
    d = {
        "schema_version": SCHEMA_VERSION,
        "image": str(s.image),
        "skill": s.question.skill.value,
        "qtype": s.question.qtype.value,
        "question": s.question.text,
        "question_raw": s.question.raw,
        "pseudo_label": s.pseudo_label.normalized,
        "label_raw": s.pseudo_label.raw_span,
        "c": None,
        "v": _verdict_json(s.verdict_v),
        "u": _verdict_json(s.verdict_u),
        "tie": s.tie,
        "cycle": s.cycle,
        "step": s.step,
    }
    line = json.dumps(d, ensure_ascii=False)
    # fixed six-decimal rendering for c
    return line.replace('"c": null', f'"c": {s.consistency_c:.6f}', 1)


def write_shard(samples: Iterable[PseudoSample], path: str | Path) -> None:
    header = {"kind": SHARD_KIND, "schema_version": SCHEMA_VERSION, "fields": list(SHARD_FIELDS)}
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(header) + "\n")
        for s in samples:
            fh.write(_sample_line(s) + "\n")


_FIELD_CHECKS = {
    "schema_version": lambda x: x == SCHEMA_VERSION,
    "image": lambda x: isinstance(x, str),
    "skill": lambda x: x in {s.value for s in SKILLS},
    "qtype": lambda x: x in {t.value for t in QuestionType},
    "question": lambda x: isinstance(x, str) and bool(x.strip()),
    "question_raw": lambda x: isinstance(x, str),
    "pseudo_label": lambda x: isinstance(x, str) and bool(x) and x != UNPARSEABLE,
    "label_raw": lambda x: x is None or isinstance(x, str),
    "c": lambda x: isinstance(x, (int, float)) and not isinstance(x, bool) and 0 <= x <= 1,
    "v": lambda x: x in (0, 1, None) and not isinstance(x, bool),
    "u": lambda x: x in (0, 1, None) and not isinstance(x, bool),
    "tie": lambda x: isinstance(x, bool),
    "cycle": lambda x: isinstance(x, int) and not isinstance(x, bool),
    "step": lambda x: isinstance(x, int) and not isinstance(x, bool),
}


def read_shard(path: str | Path) -> list[PseudoSample]:
    samples = []
    header_seen = False
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            try:
                d = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ShardSchemaError(lineno, f"not JSON ({exc})") from exc
            if not isinstance(d, dict):
                raise ShardSchemaError(lineno, "record is not an object")
            if lineno == 1:
                if d.get("kind") != SHARD_KIND or d.get("schema_version") != SCHEMA_VERSION:
                    raise ShardSchemaError(lineno, "missing or incompatible shard header")
                header_seen = True
                continue
            for name in SHARD_FIELDS:
                if name not in d:
                    raise ShardSchemaError(lineno, f"missing field {name!r}")
                if not _FIELD_CHECKS[name](d[name]):
                    raise ShardSchemaError(lineno, f"bad value for {name!r}: {d[name]!r}")
            try:
                image = ImageRef.parse(d["image"])
            except ValueError as exc:
                raise ShardSchemaError(lineno, str(exc)) from exc
            question = QuestionRecord(SkillCategory(d["skill"]), QuestionType(d["qtype"]),
                                      d["question"], d["question_raw"])
            samples.append(PseudoSample(
                image=image,
                question=question,
                pseudo_label=ExtractedAnswer(d["pseudo_label"], d["label_raw"], True),
                consistency_c=float(d["c"]),
                verdict_v=_verdict_from_json(d["v"]),
                verdict_u=_verdict_from_json(d["u"]),
                cycle=d["cycle"],
                step=d["step"],
                tie=d["tie"],
            ))
    if not header_seen:
        raise ShardSchemaError(1, "empty file has no header")
    return samples
