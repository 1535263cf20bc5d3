"""Synthetic scenes and toy agents with known ground truth.

Scenes are rows of object groups. Each skill has one question template over
a group, and the questioner's action space is (skill, difficulty knob). The
knob is rendered as a phrase that makes the scene harder to read; the toy
solver answers correctly with a logistic probability that rises with its
per-skill competence and falls with the knob. Because every question is
generated from a template, its validity and true answer can always be
recovered from the text alone (:meth:`ToyWorld.truth`).
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from rise import rng as rngmod
from rise.agents import Request
from rise.config import SKILLS, ImageRef, QuestionType, ScheduleConfig, SkillCategory
from rise.grpo import ToyPolicy, grpo_update
from rise.parsing import format_boxed, format_question_output, normalize_answer

COLORS = ("red", "blue", "green", "yellow", "purple", "orange", "gray", "brown")
SHAPES = ("cube", "sphere", "cylinder", "cone")
SIZES = ("tiny", "small", "medium", "large", "huge")
MATERIALS = ("metal", "rubber", "glass", "wood", "plastic")
COUNTS = tuple(str(i) for i in range(1, 10))

KNOB_PREFIXES = (
    "",
    "Look carefully. ",
    "Some objects may be partly hidden. ",
    "Lighting is dim and several objects overlap. ",
    "Heavy glare and occlusion make the objects hard to see. ",
)
N_KNOBS = len(KNOB_PREFIXES)
N_ACTIONS = len(SKILLS) * N_KNOBS

# Answer probability is sigmoid(slope * (competence - threshold[knob])).
KNOB_THRESHOLDS = (0.0, 0.25, 0.5, 0.75, 1.0)
LADDER_SLOPE = 12.0
BIASED_THRESHOLDS = (-1.0, -0.5, 0.0, 0.5, 1.0)
# The biased skill's shallow slope keeps several knobs near p = 0.5 at any
# competence, so its difficulty score stays close to the 0.5 maximum and is
# easy to farm.
BIASED_SLOPE = 2.5


@dataclass(frozen=True)
class ObjectGroup:
    color: str
    shape: str
    size: str
    material: str
    count: int


@dataclass(frozen=True)
class SceneSpec:
    scene_id: str
    groups: tuple[ObjectGroup, ...]  # left to right
    salient: int = 0

    def find(self, color: str, shape: str) -> int | None:
        for i, g in enumerate(self.groups):
            if g.color == color and g.shape == shape:
                return i
        return None

    def to_dict(self) -> dict:
        return {"scene_id": self.scene_id, "salient": self.salient,
                "groups": [asdict(g) for g in self.groups]}

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        return cls(d["scene_id"], tuple(ObjectGroup(**g) for g in d["groups"]), d["salient"])

    def answer_table(self) -> dict[SkillCategory, tuple[str, str]]:
        """One (question, answer) instance per skill, at the easiest knob."""
        table = {}
        for skill in SKILLS:
            t = TEMPLATES[skill]
            i = t.target(self)
            g = self.groups[i]
            table[skill] = (t.render(g.color, g.shape, 0), t.answer(self, i))
        return table


def sample_scene(rng: np.random.Generator, scene_id: str = "scene") -> SceneSpec:
    n = int(rng.integers(3, 6))
    colors = rng.choice(len(COLORS), size=n, replace=False)
    counts = rng.choice(np.arange(1, 10), size=n, replace=False)
    groups = tuple(
        ObjectGroup(
            color=COLORS[int(c)],
            shape=SHAPES[int(rng.integers(len(SHAPES)))],
            size=SIZES[int(rng.integers(len(SIZES)))],
            material=MATERIALS[int(rng.integers(len(MATERIALS)))],
            count=int(k),
        )
        for c, k in zip(colors, counts)
    )
    return SceneSpec(scene_id, groups, int(rng.integers(n)))


# -- templates --------------------------------------------------------------

def _most_color(groups: Sequence[ObjectGroup], weights: Sequence[int]) -> str | None:
    top = max(weights)
    winners = [g.color for g, w in zip(groups, weights) if w == top]
    return winners[0] if len(winners) == 1 else None


def _coarse(scene: SceneSpec, i: int) -> str | None:
    others = [g for j, g in enumerate(scene.groups) if j != i]
    return _most_color(others, [g.count for g in others]) if others else None


def _fine(scene: SceneSpec, i: int) -> str | None:
    return scene.groups[i].size


def _instance(scene: SceneSpec, i: int) -> str | None:
    return scene.groups[i + 1].color if i + 1 < len(scene.groups) else None


def _logical(scene: SceneSpec, i: int) -> str | None:
    weights = [g.count * (2 if j == i else 1) for j, g in enumerate(scene.groups)]
    return _most_color(scene.groups, weights)


def _math(scene: SceneSpec, i: int) -> str | None:
    return str(scene.groups[i].count)


def _science(scene: SceneSpec, i: int) -> str | None:
    return scene.groups[i].material


@dataclass(frozen=True)
class Template:
    skill: SkillCategory
    qtype: QuestionType
    core: str
    vocabulary: tuple[str, ...]
    answer_fn: Callable[[SceneSpec, int], str | None]
    pattern: re.Pattern = field(init=False, compare=False)

    def __post_init__(self):
        pat = re.escape(self.core)
        pat = pat.replace(re.escape("{color}"), "(?P<color>[a-z]+)")
        pat = pat.replace(re.escape("{shape}"), "(?P<shape>[a-z]+)")
        object.__setattr__(self, "pattern", re.compile(pat))

    def render(self, color: str, shape: str, knob: int) -> str:
        return KNOB_PREFIXES[knob] + self.core.format(color=color, shape=shape)

    def answer(self, scene: SceneSpec, i: int) -> str | None:
        return self.answer_fn(scene, i)

    def target(self, scene: SceneSpec) -> int:
        """First answerable group, scanning from the scene's salient group."""
        n = len(scene.groups)
        for off in range(n):
            i = (scene.salient + off) % n
            if self.answer(scene, i) is not None:
                return i
        raise ValueError(f"no answerable group for {self.skill.value} in {scene.scene_id}")

    def distractors(self, answer: str) -> tuple[str, ...]:
        return tuple(a for a in self.vocabulary if normalize_answer(a) != normalize_answer(answer))

    def near_miss(self, answer: str) -> str:
        """The vocabulary neighbour of ``answer`` (an off-by-one count, say)."""
        i = [normalize_answer(a) for a in self.vocabulary].index(normalize_answer(answer))
        return self.vocabulary[i + 1] if i + 1 < len(self.vocabulary) else self.vocabulary[i - 1]


MC, NUM = QuestionType.MULTIPLE_CHOICE, QuestionType.NUMERICAL
S = SkillCategory
TEMPLATES: dict[SkillCategory, Template] = {
    S.COARSE_PERCEPTION: Template(
        S.COARSE_PERCEPTION, MC,
        "Apart from the {color} {shape}s, which color has the most objects in the scene?",
        COLORS, _coarse),
    S.FINE_GRAINED_PERCEPTION: Template(
        S.FINE_GRAINED_PERCEPTION, MC,
        "What is the size of the {color} {shape}s?", SIZES, _fine),
    S.INSTANCE_REASONING: Template(
        S.INSTANCE_REASONING, MC,
        "What color are the objects immediately to the right of the {color} {shape}s?",
        COLORS, _instance),
    S.LOGICAL_REASONING: Template(
        S.LOGICAL_REASONING, MC,
        "If the number of {color} {shape}s were doubled, which color would have the most objects?",
        COLORS, _logical),
    S.MATH_AND_COUNTING: Template(
        S.MATH_AND_COUNTING, NUM, "How many {color} {shape}s are there?", COUNTS, _math),
    S.SCIENCE_AND_TECHNOLOGY: Template(
        S.SCIENCE_AND_TECHNOLOGY, MC,
        "Judging by their surface, what material are the {color} {shape}s made of?",
        MATERIALS, _science),
}
_PREFIX_ORDER = sorted(range(N_KNOBS), key=lambda k: -len(KNOB_PREFIXES[k]))


def encode_action(skill: SkillCategory, knob: int) -> int:
    return SKILLS.index(skill) * N_KNOBS + knob


def decode_action(action: int) -> tuple[SkillCategory, int]:
    s, k = divmod(int(action), N_KNOBS)
    return SKILLS[s], k


@dataclass(frozen=True)
class QuestionTruth:
    template_skill: SkillCategory
    knob: int
    color: str
    shape: str
    grounded: bool
    answer: str | None

    @property
    def answerable(self) -> bool:
        return self.grounded and self.answer is not None

    def valid_for(self, declared: SkillCategory) -> bool:
        return self.answerable and declared == self.template_skill

    def is_correct(self, candidate: str) -> bool:
        return self.answerable and normalize_answer(candidate) == normalize_answer(self.answer)


def interpret(scene: SceneSpec, text: str) -> QuestionTruth | None:
    """Recover template, knob and truth from question text; None if unknown."""
    text = text.strip()
    knob, body = 0, text
    for k in _PREFIX_ORDER:
        prefix = KNOB_PREFIXES[k]
        if prefix and text.startswith(prefix):
            knob, body = k, text[len(prefix):]
            break
    for skill, t in TEMPLATES.items():
        m = t.pattern.fullmatch(body)
        if m is None:
            continue
        color, shape = m["color"], m["shape"]
        i = scene.find(color, shape)
        if i is None:
            return QuestionTruth(skill, knob, color, shape, False, None)
        return QuestionTruth(skill, knob, color, shape, True, t.answer(scene, i))
    return None


# -- toy questioner -----------------------------------------------------------

def _corrupt(raw: str, rng: np.random.Generator) -> str:
    mode = int(rng.integers(3))
    if mode == 0:
        return raw.replace("</type>", "", 1)
    if mode == 1:
        return re.sub(r"<skill>.*?</skill>", "<skill>poetry</skill>", raw, count=1)
    return raw + "\n<question>And one more?</question>"


@dataclass(frozen=True)
class Emission:
    raw: str
    action: int
    injected: str | None  # None | "off-image" | "skill-mismatch"
    corrupted: bool


def toy_questioner_emit(policy: ToyPolicy, scene: SceneSpec, rng: np.random.Generator,
                        invalid_rate: float = 0.0, format_error_rate: float = 0.0) -> Emission:
    action = int(policy.sample(rng))
    skill, knob = decode_action(action)
    template = TEMPLATES[skill]
    injected = None
    if rng.random() < invalid_rate:
        if skill != S.MATH_AND_COUNTING and rng.random() < 0.5:
            template, injected = TEMPLATES[S.MATH_AND_COUNTING], "skill-mismatch"
        else:
            injected = "off-image"
    if injected == "off-image":
        present = {g.color for g in scene.groups}
        absent = [c for c in COLORS if c not in present]
        color = absent[int(rng.integers(len(absent)))]
        shape = SHAPES[int(rng.integers(len(SHAPES)))]
    else:
        g = scene.groups[template.target(scene)]
        color, shape = g.color, g.shape
    raw = format_question_output(skill, template.qtype, template.render(color, shape, knob))
    corrupted = bool(rng.random() < format_error_rate)
    if corrupted:
        raw = _corrupt(raw, rng)
    return Emission(raw, action, injected, corrupted)


# -- toy solver ---------------------------------------------------------------

@dataclass(frozen=True)
class ToySolverState:
    competence: tuple[float, ...]  # indexed like SKILLS
    eta: float = 0.02
    eta_bad: float = 0.04
    signal_weighted: bool = False

    def __post_init__(self):
        if len(self.competence) != len(SKILLS):
            raise ValueError("need one competence per skill")
        clamped = tuple(min(max(float(t), 0.0), 1.0) for t in self.competence)
        object.__setattr__(self, "competence", clamped)

    def theta(self, skill: SkillCategory) -> float:
        return self.competence[SKILLS.index(skill)]

    @property
    def mean(self) -> float:
        return sum(self.competence) / len(self.competence)


class UnknownTemplateError(ValueError):
    pass


def answer_probability(theta: float, knob: int, biased: bool = False) -> float:
    if biased:
        return 1.0 / (1.0 + math.exp(-BIASED_SLOPE * (theta - BIASED_THRESHOLDS[knob])))
    return 1.0 / (1.0 + math.exp(-LADDER_SLOPE * (theta - KNOB_THRESHOLDS[knob])))


_UNSURE = "The image does not let me settle this with confidence."


def toy_solver_answer(state: ToySolverState, scene: SceneSpec, question: str,
                      rng: np.random.Generator, biased_skill: SkillCategory | None = None,
                      format_error_rate: float = 0.0) -> str:
    truth = interpret(scene, question)
    if truth is None:
        raise UnknownTemplateError(f"not a toy question: {question!r}")
    if rng.random() < format_error_rate:
        return _UNSURE
    template = TEMPLATES[truth.template_skill]
    if not truth.answerable:
        answer = template.vocabulary[int(rng.integers(len(template.vocabulary)))]
    else:
        biased = truth.template_skill == biased_skill
        p = answer_probability(state.theta(truth.template_skill), truth.knob, biased)
        # A misreading is consistent: errors share one near-miss answer, so
        # c tracks max(p, 1 - p) and d tracks min(p, 1 - p).
        answer = truth.answer if rng.random() < p else template.near_miss(truth.answer)
    return f"Let me examine the relevant objects step by step.\nThe final answer is {format_boxed(answer)}."


def label_match_probability(state: ToySolverState, truth: QuestionTruth | None, label: str,
                            biased_skill: SkillCategory | None = None) -> float:
    """Chance that one solver rollout reproduces ``label``."""
    if truth is None:
        return 0.0
    template = TEMPLATES[truth.template_skill]
    if not truth.answerable:
        return 1.0 / len(template.vocabulary)
    p = answer_probability(state.theta(truth.template_skill), truth.knob,
                           truth.template_skill == biased_skill)
    if truth.is_correct(label):
        return p
    if normalize_answer(label) == normalize_answer(template.near_miss(truth.answer)):
        return 1.0 - p
    return 0.0


def toy_solver_train(state: ToySolverState, batch: Iterable, world: "ToyWorld") -> ToySolverState:
    """Move a sample's declared-skill competence up by eta when its pseudo
    label is right and down by eta_bad when it is wrong, then clamp.

    With ``signal_weighted`` each step is scaled by 4q(1 - q), q being the
    chance a rollout matches the label: the normalised variance of the 0/1
    rollout rewards. Samples the solver always (or never) reproduces give
    zero group-relative advantage and so teach nothing.
    """
    delta = [0.0] * len(SKILLS)
    for sample in batch:
        truth = world.truth(sample.image, sample.question.text)
        label = sample.pseudo_label.normalized
        correct = truth is not None and truth.is_correct(label)
        weight = 1.0
        if state.signal_weighted:
            q = label_match_probability(state, truth, label, world.biased_skill)
            weight = 4.0 * q * (1.0 - q)
        k = SKILLS.index(sample.question.skill)
        delta[k] += weight * (state.eta if correct else -state.eta_bad)
    if not any(delta):
        return state
    return replace(state, competence=tuple(t + d for t, d in zip(state.competence, delta)))


# -- toy supervisor -----------------------------------------------------------

@dataclass(frozen=True)
class ToySupervisorConfusion:
    recall_on_problematic: float = 0.9
    false_reject_rate: float = 0.3

    def __post_init__(self):
        for v in (self.recall_on_problematic, self.false_reject_rate):
            if not 0.0 <= v <= 1.0:
                raise ValueError("confusion rates must lie in [0, 1]")

    def expected_precision(self, prevalence: float) -> float:
        tp = self.recall_on_problematic * prevalence
        fp = self.false_reject_rate * (1.0 - prevalence)
        return tp / (tp + fp)


def false_reject_rate_for(precision: float, recall: float, prevalence: float) -> float:
    """Clean-item rejection rate giving ``precision`` at a problematic prevalence."""
    return recall * prevalence * (1.0 - precision) / (precision * (1.0 - prevalence))


def _verdict_text(ok: bool, kind: str) -> str:
    if kind == "validity":
        body = ("The question is grounded in the image and matches its declared skill."
                if ok else "The question is not valid for this image or its declared skill.")
    else:
        body = "The candidate answer agrees with the image." if ok else "The candidate answer is wrong."
    return f"{body} {format_boxed('1' if ok else '0')}"


# -- world and backends -----------------------------------------------------------

class ToyWorld:
    def __init__(self, scenes: Sequence[SceneSpec], seed: int = 0,
                 invalid_rate: float = 0.1, format_error_rate: float = 0.02,
                 solver_format_error_rate: float = 0.02,
                 biased_skill: SkillCategory | None = S.MATH_AND_COUNTING,
                 confusion: ToySupervisorConfusion = ToySupervisorConfusion()):
        self.scenes = {s.scene_id: s for s in scenes}
        self.order = [s.scene_id for s in scenes]
        self.seed = seed
        self.invalid_rate = invalid_rate
        self.format_error_rate = format_error_rate
        self.solver_format_error_rate = solver_format_error_rate
        self.biased_skill = biased_skill
        self.confusion = confusion

    @classmethod
    def from_config(cls, cfg: ScheduleConfig, seed: int | None = None) -> "ToyWorld":
        seed = cfg.seed if seed is None else seed
        scenes = [sample_scene(rngmod.stream(seed, "scene", i), f"scene-{i:05d}")
                  for i in range(cfg.toy_scene_pool)]
        biased = SkillCategory(cfg.toy_biased_skill) if cfg.toy_biased_skill else None
        return cls(scenes, seed, cfg.toy_invalid_rate, cfg.toy_format_error_rate,
                   cfg.toy_solver_format_error_rate, biased,
                   ToySupervisorConfusion(cfg.toy_recall, cfg.toy_false_reject))

    def images(self) -> list[ImageRef]:
        return [ImageRef.synthetic(sid) for sid in self.order]

    def scene(self, image: ImageRef) -> SceneSpec:
        if image.kind != "synthetic" or image.ref not in self.scenes:
            raise KeyError(f"unknown toy scene {image}")
        return self.scenes[image.ref]

    def truth(self, image: ImageRef, question: str) -> QuestionTruth | None:
        return interpret(self.scene(image), question)

    def valid_and_correct(self, image: ImageRef, declared: SkillCategory, question: str,
                          label: str) -> bool:
        truth = self.truth(image, question)
        return truth is not None and truth.valid_for(declared) and truth.is_correct(label)

    def judge(self, request: Request) -> str:
        """Greedy toy supervisor: the same request always gets the same verdict."""
        truth = self.truth(request.image, request.question)
        if request.kind == "validity":
            problematic = truth is None or not truth.valid_for(request.declared_skill)
            key = (request.declared_skill.value, request.question)
        else:
            problematic = truth is None or not truth.is_correct(request.candidate)
            key = (request.question, request.candidate)
        u = rngmod.hashed_uniform(self.seed, request.kind, request.image.ref, *key)
        c = self.confusion
        rejected = u < (c.recall_on_problematic if problematic else c.false_reject_rate)
        return _verdict_text(not rejected, request.kind)

    def write_registry(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for sid in self.order:
                fh.write(json.dumps(self.scenes[sid].to_dict(), sort_keys=True) + "\n")

    def backends(self, cfg: ScheduleConfig) -> tuple["ToyQuestionerBackend", "ToySolverBackend"]:
        policy = ToyPolicy.uniform(N_ACTIONS)
        state = ToySolverState((cfg.toy_initial_competence,) * len(SKILLS), cfg.toy_eta, cfg.toy_eta_bad,
                               cfg.toy_signal_weighted)
        return ToyQuestionerBackend(self, policy), ToySolverBackend(self, state)


class ToyQuestionerBackend:
    concurrent = False

    def __init__(self, world: ToyWorld, policy: ToyPolicy):
        self.world = world
        self.policy = policy
        self._actions: dict[tuple[str, str], int] = {}

    def complete(self, request: Request, rng: np.random.Generator | None) -> str:
        if request.kind != "question":
            raise ValueError(f"toy questioner cannot serve {request.kind!r} requests")
        scene = self.world.scene(request.image)
        em = toy_questioner_emit(self.policy, scene, rng, self.world.invalid_rate,
                                 self.world.format_error_rate)
        self._actions[(scene.scene_id, em.raw)] = em.action
        return em.raw

    def action_of(self, image: ImageRef, raw: str) -> int:
        return self._actions[(image.ref, raw)]

    def snapshot_policy(self) -> None:
        self.policy = self.policy.snapshot()
        self._actions.clear()

    def update_policy(self, groups, cfg: ScheduleConfig) -> "ToyQuestionerBackend":
        self.policy = grpo_update(self.policy, groups, cfg)
        return self

    def skill_distribution(self) -> np.ndarray:
        return self.policy.probs().reshape(len(SKILLS), N_KNOBS).sum(axis=1)


class ToySolverBackend:
    """Toy solver; also serves supervisor requests (shared parameters)."""

    concurrent = False

    def __init__(self, world: ToyWorld, state: ToySolverState):
        self.world = world
        self.state = state

    def complete(self, request: Request, rng: np.random.Generator | None) -> str:
        if request.kind == "solve":
            return toy_solver_answer(self.state, self.world.scene(request.image), request.question,
                                     rng, self.world.biased_skill, self.world.solver_format_error_rate)
        if request.kind in ("validity", "verify"):
            return self.world.judge(request)
        raise ValueError(f"toy solver cannot serve {request.kind!r} requests")

    def train(self, batch) -> "ToySolverBackend":
        return ToySolverBackend(self.world, toy_solver_train(self.state, batch, self.world))


# -- supervisor audit ---------------------------------------------------------

@dataclass(frozen=True)
class AuditItem:
    image: ImageRef
    kind: str  # "validity" | "verify"
    question: str
    declared: SkillCategory
    candidate: str | None
    problematic: bool


def audit_items(world: ToyWorld, n: int, prevalence: float, rng: np.random.Generator) -> list[AuditItem]:
    """``n`` labelled judge inputs, half validity and half verification
    checks, each problematic with probability ``prevalence``.

    Problematic validity items are off-image or skill-mismatched questions;
    problematic verification items carry a wrong candidate answer.
    """
    images = world.images()
    items = []
    for i in range(n):
        image = images[int(rng.integers(len(images)))]
        scene = world.scene(image)
        skill = SKILLS[int(rng.integers(len(SKILLS)))]
        knob = int(rng.integers(N_KNOBS))
        template = TEMPLATES[skill]
        g = scene.groups[template.target(scene)]
        text = template.render(g.color, g.shape, knob)
        problematic = bool(rng.random() < prevalence)
        if i % 2 == 0:
            declared = skill
            if problematic:
                if skill != S.MATH_AND_COUNTING and rng.random() < 0.5:
                    mg = scene.groups[TEMPLATES[S.MATH_AND_COUNTING].target(scene)]
                    text = TEMPLATES[S.MATH_AND_COUNTING].render(mg.color, mg.shape, knob)
                else:
                    absent = [c for c in COLORS if c not in {x.color for x in scene.groups}]
                    text = template.render(absent[int(rng.integers(len(absent)))], g.shape, knob)
            items.append(AuditItem(image, "validity", text, declared, None, problematic))
        else:
            answer = template.answer(scene, scene.groups.index(g))
            wrong = template.distractors(answer)
            candidate = wrong[int(rng.integers(len(wrong)))] if problematic else answer
            items.append(AuditItem(image, "verify", text, skill, candidate, problematic))
    return items
