"""Parsers for the structured outputs the four prompts ask for.

Invalid model output is a value here, never an exception: a malformed
question maps to ``FORMAT_INVALID`` and a missing or broken box maps to the
``UNPARSEABLE`` sentinel.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Final, Union

from rise.config import QuestionType, SkillCategory

# NUL-prefixed and upper case: normalize_answer strips NULs and case-folds,
# so no normalized answer can ever equal this.
UNPARSEABLE: Final = "\x00UNPARSEABLE"


class _FormatInvalid:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "FORMAT_INVALID"

    def __bool__(self) -> bool:
        return False


FORMAT_INVALID: Final = _FormatInvalid()


@dataclass(frozen=True)
class QuestionRecord:
    skill: SkillCategory
    qtype: QuestionType
    text: str
    raw: str


@dataclass(frozen=True)
class ExtractedAnswer:
    normalized: str
    raw_span: str | None
    parseable: bool

    @classmethod
    def unparseable(cls, raw_span: str | None = None) -> "ExtractedAnswer":
        return cls(UNPARSEABLE, raw_span, False)

    @classmethod
    def of(cls, raw_span: str) -> "ExtractedAnswer":
        norm = normalize_answer(raw_span)
        if not norm:
            return cls.unparseable(raw_span)
        return cls(norm, raw_span, True)


ParsedQuestion = Union[QuestionRecord, _FormatInvalid]

_LABEL_JUNK = re.compile(r"[\s_\-]+")


def _label_key(label: str) -> str:
    label = label.strip().casefold().replace("&", " and ")
    return _LABEL_JUNK.sub(" ", label).strip()


_SKILL_LOOKUP = {_label_key(s.display): s for s in SkillCategory}
_SKILL_LOOKUP.update({_label_key(s.value): s for s in SkillCategory})
_TYPE_LOOKUP = {_label_key(t.value): t for t in QuestionType}


def lookup_skill(label: str) -> SkillCategory | None:
    return _SKILL_LOOKUP.get(_label_key(label))


def lookup_qtype(label: str) -> QuestionType | None:
    return _TYPE_LOOKUP.get(_label_key(label))


_TAGS = ("skill", "type", "question")


def parse_question_output(raw: str) -> ParsedQuestion:
    """Parse ``<skill>..</skill><type>..</type><question>..</question>``.

    Each tag pair must occur exactly once and in that order; text outside
    the tags is ignored.
    """
    if not isinstance(raw, str):
        return FORMAT_INVALID
    spans = []
    cursor = 0
    for tag in _TAGS:
        open_tag, close_tag = f"<{tag}>", f"</{tag}>"
        if raw.count(open_tag) != 1 or raw.count(close_tag) != 1:
            return FORMAT_INVALID
        start = raw.find(open_tag)
        end = raw.find(close_tag)
        if start < cursor or end < start + len(open_tag):
            return FORMAT_INVALID
        spans.append(raw[start + len(open_tag):end])
        cursor = end + len(close_tag)
    skill = lookup_skill(spans[0])
    qtype = lookup_qtype(spans[1])
    text = spans[2].strip()
    if skill is None or qtype is None or not text:
        return FORMAT_INVALID
    return QuestionRecord(skill=skill, qtype=qtype, text=text, raw=raw)


def format_question_output(skill: SkillCategory, qtype: QuestionType, text: str) -> str:
    """Render the questioner's output format (inverse of the parser)."""
    return (
        f"<skill>{skill.display}</skill>\n"
        f"<type>{qtype.display}</type>\n"
        f"<question>{text}</question>"
    )


_BOX_OPEN = "\\boxed{"


def boxed_span(raw: str) -> str | None:
    """Contents of the last ``\\boxed{...}``, or None if absent/unbalanced."""
    start = raw.rfind(_BOX_OPEN)
    if start < 0:
        return None
    i = start + len(_BOX_OPEN)
    depth = 1
    for j in range(i, len(raw)):
        ch = raw[j]
        if ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                return raw[i:j]
    return None


def extract_boxed_answer(raw: str) -> ExtractedAnswer:
    span = boxed_span(raw)
    if span is None:
        return ExtractedAnswer.unparseable()
    return ExtractedAnswer.of(span)


def format_boxed(answer: str) -> str:
    return f"{_BOX_OPEN}{answer}}}"


_PLAIN_NUMBER = re.compile(r"[+-]?\d+(\.\d+)?")


def _canonical_number(s: str) -> str:
    sign = ""
    if s[0] in "+-":
        sign, s = ("-" if s[0] == "-" else ""), s[1:]
    whole, _, frac = s.partition(".")
    whole = whole.lstrip("0") or "0"
    frac = frac.rstrip("0")
    out = f"{whole}.{frac}" if frac else whole
    return "0" if out == "0" else sign + out


def normalize_answer(raw_span: str) -> str:
    """Canonical form used for answer equality in voting and rewards."""
    s = raw_span.replace("\x00", "").casefold()
    s = " ".join(s.split())
    s = s.rstrip(" .")
    if _PLAIN_NUMBER.fullmatch(s):
        s = _canonical_number(s)
    return s


def parse_binary_verdict(raw: str) -> int | str:
    """1 or 0 from the final box, else ``UNPARSEABLE``."""
    span = boxed_span(raw) if isinstance(raw, str) else None
    if span is None:
        return UNPARSEABLE
    span = span.strip()
    if span == "1":
        return 1
    if span == "0":
        return 0
    return UNPARSEABLE
