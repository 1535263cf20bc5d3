"""Self-consistency, difficulty and majority vote over M solver answers."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Mapping, Sequence

from rise.parsing import ExtractedAnswer


class DegenerateReportError(ValueError):
    """Every sampled answer was unparseable, so there is no majority."""


@dataclass(frozen=True)
class ConsistencyReport:
    histogram: Mapping[str, int]
    total_M: int
    consistency_c: float
    difficulty_d: float
    majority: ExtractedAnswer | None
    tie: bool
    unparseable_count: int

    @property
    def degenerate(self) -> bool:
        return self.majority is None


def difficulty_score(c: float) -> float:
    if not 0.0 <= c <= 1.0:
        raise ValueError(f"consistency {c!r} outside [0, 1]")
    return min(c, 1.0 - c)


def _argmax(histogram: Mapping[str, int]) -> tuple[str, bool]:
    top = max(histogram.values())
    winners = sorted(a for a, n in histogram.items() if n == top)
    return winners[0], len(winners) > 1


def consistency_score(answers: Sequence[ExtractedAnswer], M: int | None = None) -> ConsistencyReport:
    """Build the report for one (image, question) pair.

    Unparseable answers count toward ``M`` but never win the vote. Ties go
    to the lexicographically smallest normalized answer and set ``tie``.
    """
    if not answers:
        raise ValueError("consistency_score needs at least one answer")
    if M is None:
        M = len(answers)
    if M != len(answers):
        raise ValueError(f"expected {M} answers, got {len(answers)}")
    histogram = Counter(a.normalized for a in answers if a.parseable)
    unparseable = M - sum(histogram.values())
    if not histogram:
        return ConsistencyReport({}, M, 0.0, 0.0, None, False, unparseable)
    winner, tie = _argmax(histogram)
    c = histogram[winner] / M
    majority = next(a for a in answers if a.parseable and a.normalized == winner)
    return ConsistencyReport(
        histogram=dict(sorted(histogram.items())),
        total_M=M,
        consistency_c=c,
        difficulty_d=difficulty_score(c),
        majority=majority,
        tie=tie,
        unparseable_count=unparseable,
    )


def majority_vote(report: ConsistencyReport) -> ExtractedAnswer:
    if report.degenerate:
        raise DegenerateReportError("no parseable answers to vote over")
    winner, _ = _argmax(report.histogram)
    if report.majority is not None and report.majority.normalized == winner:
        return report.majority
    return ExtractedAnswer(winner, winner, True)
