import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rise.config import QuestionType, SkillCategory
from rise.parsing import (
    FORMAT_INVALID,
    UNPARSEABLE,
    ExtractedAnswer,
    QuestionRecord,
    extract_boxed_answer,
    format_boxed,
    format_question_output,
    normalize_answer,
    parse_binary_verdict,
    parse_question_output,
)

CORPUS = [json.loads(line) for line in
          (Path(__file__).parent / "fixtures" / "parsing_corpus.jsonl").read_text(encoding="utf-8").splitlines()]


def check_case(case) -> bool:
    raw, exp, fmt = case["raw"], case["expect"], case["format"]
    if fmt == "question":
        out = parse_question_output(raw)
        if not exp["valid"]:
            return out is FORMAT_INVALID
        return (isinstance(out, QuestionRecord) and out.skill.value == exp["skill"]
                and out.qtype.value == exp["qtype"] and out.text == exp["text"] and out.raw == raw)
    if fmt == "answer":
        out = extract_boxed_answer(raw)
        if not exp["parseable"]:
            return not out.parseable and out.normalized == UNPARSEABLE
        return out.parseable and out.normalized == exp["normalized"]
    out = parse_binary_verdict(raw)
    return out == (UNPARSEABLE if exp["verdict"] == "unparseable" else exp["verdict"])


def test_corpus_size_and_mix():
    assert len(CORPUS) == 200
    assert {c["format"] for c in CORPUS} == {"question", "answer", "validity", "verify"}


@pytest.mark.parametrize("case", CORPUS, ids=[c["id"] for c in CORPUS])
def test_conformance_corpus(case):
    assert check_case(case)


def test_spec_examples():
    rec = parse_question_output("<skill>math & counting</skill><type>numerical</type>"
                                "<question>How many red cubes?</question>")
    assert rec.skill is SkillCategory.MATH_AND_COUNTING and rec.qtype is QuestionType.NUMERICAL
    assert rec.text == "How many red cubes?"
    assert parse_question_output("<type>numerical</type><question>x</question>") is FORMAT_INVALID
    assert extract_boxed_answer("The answer is \\boxed{3}.").normalized == "3"
    assert extract_boxed_answer("no box").normalized == UNPARSEABLE
    assert parse_binary_verdict("valid \\boxed{1}") == 1
    assert parse_binary_verdict("\\boxed{maybe}") == UNPARSEABLE


@settings(max_examples=200, deadline=None)
@given(skill=st.sampled_from(list(SkillCategory)), qtype=st.sampled_from(list(QuestionType)),
       text=st.text(min_size=1).filter(lambda t: t.strip() and "<" not in t))
def test_question_format_round_trip(skill, qtype, text):
    rec = parse_question_output(format_question_output(skill, qtype, text))
    assert rec.skill is skill and rec.qtype is qtype and rec.text == text.strip()


@settings(max_examples=200, deadline=None)
@given(answer=st.text(alphabet=st.characters(blacklist_characters="{}\x00"), min_size=1))
def test_boxed_round_trip(answer):
    out = extract_boxed_answer(f"reasoning \\boxed{{x}} more {format_boxed(answer)}")
    if normalize_answer(answer):
        assert out.parseable and out.normalized == normalize_answer(answer)
    else:
        assert not out.parseable


@settings(max_examples=200, deadline=None)
@given(st.text())
def test_normalize_is_idempotent(s):
    assert normalize_answer(normalize_answer(s)) == normalize_answer(s)


def test_unparseable_sentinel_never_produced_by_normalization():
    # a model that literally writes the sentinel text gets an ordinary answer
    assert normalize_answer(UNPARSEABLE) == "unparseable"
    assert ExtractedAnswer.of(UNPARSEABLE).normalized == "unparseable"


def fuzz_parsers(n: int, seed: int = 0) -> int:
    """Feed ``n`` random byte strings to every parser; returns cases run."""
    rng = np.random.default_rng(seed)
    alphabet = np.frombuffer(b"<>/{}\\boxedskilltypequestion &01 \n", dtype=np.uint8)
    for i in range(n):
        length = int(rng.integers(0, 64))
        if i % 2:
            data = rng.integers(0, 256, size=length, dtype=np.uint8).tobytes()
        else:
            data = rng.choice(alphabet, size=length).tobytes()
        text = data.decode("utf-8", errors="replace")
        parse_question_output(text)
        extract_boxed_answer(text)
        parse_binary_verdict(text)
        normalize_answer(text)
    return n


def test_fuzz_small():
    assert fuzz_parsers(5_000, seed=1) == 5_000
