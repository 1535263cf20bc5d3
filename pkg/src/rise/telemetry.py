"""Per-cycle quality and diversity statistics and their CSV reports."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from rise.config import SKILLS, SkillCategory

MAX_ENTROPY = math.log(len(SKILLS))


def skill_entropy(histogram: Mapping[SkillCategory, int] | Sequence[float]) -> float:
    """Shannon entropy in nats of a (not necessarily normalized) histogram."""
    counts = list(histogram.values()) if isinstance(histogram, Mapping) else list(histogram)
    if any(c < 0 for c in counts):
        raise ValueError("histogram counts must be nonnegative")
    total = sum(counts)
    if total <= 0:
        raise ValueError("entropy of an all-zero histogram is undefined")
    h = -sum((c / total) * math.log(c / total) for c in counts if c > 0)
    return max(h, 0.0) + 0.0  # no -0.0


@dataclass(frozen=True)
class Confusion:
    """Supervisor confusion with problematic samples as the positive class."""

    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __add__(self, other: "Confusion") -> "Confusion":
        return Confusion(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn)

    @classmethod
    def tally(cls, pairs: Iterable[tuple[bool, bool]]) -> "Confusion":
        """From (problematic, flagged) pairs."""
        tp = fp = fn = tn = 0
        for problematic, flagged in pairs:
            if problematic and flagged:
                tp += 1
            elif flagged:
                fp += 1
            elif problematic:
                fn += 1
            else:
                tn += 1
        return cls(tp, fp, fn, tn)


def supervisor_pr(confusion: Confusion) -> tuple[float | None, float | None]:
    """(precision, recall); a metric with a zero denominator is None."""
    precision = confusion.tp / (confusion.tp + confusion.fp) if confusion.tp + confusion.fp else None
    recall = confusion.tp / (confusion.tp + confusion.fn) if confusion.tp + confusion.fn else None
    return precision, recall


@dataclass
class CycleReport:
    cycle: int
    skill_histogram: dict[SkillCategory, int] = field(default_factory=lambda: {k: 0 for k in SKILLS})
    generated: int = 0
    parsed: int = 0
    tau_passed: int = 0
    judge_passed: int = 0
    sampled: int = 0
    valid_and_correct_rate: float | None = None  # over the sampled shard
    pool_valid_and_correct_rate: float | None = None  # over the parsed pool
    confusion: Confusion | None = None
    mean_questioner_reward: float | None = None
    mean_solver_reward: float | None = None
    mean_competence: float | None = None

    @property
    def entropy(self) -> float | None:
        if not any(self.skill_histogram.values()):
            return None
        return skill_entropy(self.skill_histogram)

    @property
    def funnel(self) -> tuple[int, int, int, int, int]:
        return (self.generated, self.parsed, self.tau_passed, self.judge_passed, self.sampled)

    def dominant_share(self) -> float | None:
        total = sum(self.skill_histogram.values())
        return max(self.skill_histogram.values()) / total if total else None


CYCLE_COLUMNS = (
    ["cycle"]
    + [f"n_{k.value}" for k in SKILLS]
    + ["skill_entropy", "generated", "parsed", "tau_passed", "judge_passed", "sampled",
       "valid_and_correct_rate", "pool_valid_and_correct_rate",
       "tp", "fp", "fn", "tn", "precision", "recall",
       "mean_questioner_reward", "mean_solver_reward", "mean_competence"]
)

SUMMARY_COLUMNS = ("metric", "value")


def fmt(x) -> str:
    """Locale-free fixed formatting; absent values are empty cells."""
    if x is None:
        return ""
    if isinstance(x, str):
        return x
    if isinstance(x, bool):
        return str(int(x))
    if isinstance(x, int):
        return str(x)
    return f"{x:.6f}"


def cycle_row(r: CycleReport) -> list[str]:
    conf = r.confusion
    precision, recall = supervisor_pr(conf) if conf else (None, None)
    return (
        [fmt(r.cycle)]
        + [fmt(r.skill_histogram.get(k, 0)) for k in SKILLS]
        + [fmt(r.entropy), *map(fmt, r.funnel),
           fmt(r.valid_and_correct_rate), fmt(r.pool_valid_and_correct_rate),
           *(fmt(getattr(conf, a)) if conf else "" for a in ("tp", "fp", "fn", "tn")),
           fmt(precision), fmt(recall),
           fmt(r.mean_questioner_reward), fmt(r.mean_solver_reward), fmt(r.mean_competence)]
    )


def summarize(reports: Sequence[CycleReport]) -> list[tuple[str, str]]:
    rows = [("cycles", fmt(len(reports)))]
    if not reports:
        return rows
    last = reports[-1]
    total = sum((r.confusion for r in reports if r.confusion), Confusion())
    precision, recall = supervisor_pr(total)
    rows += [
        ("final_skill_entropy", fmt(last.entropy)),
        ("final_dominant_skill_share", fmt(last.dominant_share())),
        ("final_valid_and_correct_rate", fmt(last.valid_and_correct_rate)),
        ("final_mean_competence", fmt(last.mean_competence)),
        ("total_generated", fmt(sum(r.generated for r in reports))),
        ("total_sampled", fmt(sum(r.sampled for r in reports))),
        ("supervisor_precision", fmt(precision)),
        ("supervisor_recall", fmt(recall)),
    ]
    return rows


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence[str]]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def emit_reports(reports: Sequence[CycleReport], out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "cycle_reports.csv", CYCLE_COLUMNS, (cycle_row(r) for r in reports))
    write_csv(out / "summary.csv", SUMMARY_COLUMNS, summarize(reports))


def read_cycle_reports(path: str | Path) -> list[dict[str, str]]:
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))
