"""Prompt templates for the four model roles.

Placeholders ``{QUESTION}``, ``{DECLARED_SKILL}``, ``{SKILL_CONTEXT}`` and
``{CANDIDATE_ANSWER}`` are filled with plain ``str.replace`` so that braces in
``\\boxed{}`` survive untouched.
"""

from __future__ import annotations

from rise.config import SkillCategory

QUESTIONER_SYSTEM = """\
You are an intelligent Question Generator. Given an image, generate exactly
one difficult visual reasoning question that is directly grounded in the image.

The question must:
1. require visual analysis or reasoning rather than simple description;
2. belong to exactly one skill category:
coarse perception, fine-grained perception, instance reasoning,
logical reasoning, math & counting, or science & technology;
3. belong to exactly one question type:
multiple choice, numerical, or regression;
4. have a short, unique, and verifiable answer.

Output strictly in the following format:
<skill>...</skill>
<type>...</type>
<question>...</question>"""

QUESTIONER_USER = "Generate one new challenging reasoning question based on this image."

SOLVER_SYSTEM = "You are a helpful visual reasoning assistant."

SOLVER_USER = """\
Please reason step by step carefully based on the image for the following
question:
{QUESTION}

After completing your reasoning, output the final clean and concise answer
strictly inside \\boxed{}."""

VALIDITY_SYSTEM = """\
You are a strict visual question validity judge. Decide whether the question
can be answered solely from the provided image and whether the declared skill
matches the question.

Use the following skill definition and restriction:
{SKILL_CONTEXT}

Output \\boxed{1} only if the question is image-grounded, well-posed,
answerable from the image alone, and consistent with the declared skill.
Otherwise, output \\boxed{0}."""

VALIDITY_USER = """\
Question: {QUESTION}
Declared Skill: {DECLARED_SKILL}

Judge whether the question is valid and whether the declared skill is correct.
Do not solve the question. End with \\boxed{1} or \\boxed{0}."""

VERIFIER_SYSTEM = """\
You are a strict visual question answering verifier. Given an image, a question,
and a candidate answer, decide whether the candidate answer is correct.
Output \\boxed{1} only if the candidate answer is correct."""

VERIFIER_USER = """\
Question: {QUESTION}
Candidate Answer: {CANDIDATE_ANSWER}

Briefly judge the answer correctness and end with \\boxed{1} or \\boxed{0}."""

_NO_COUNTING = (
    " Questions that are mainly solved by counting objects or estimating"
    " numeric quantities do not belong to this skill."
)

SKILL_CONTEXT: dict[SkillCategory, str] = {
    SkillCategory.COARSE_PERCEPTION: (
        "Coarse perception: recognizing the overall scene, dominant objects,"
        " global layout, style or category of the image." + _NO_COUNTING
    ),
    SkillCategory.FINE_GRAINED_PERCEPTION: (
        "Fine-grained perception: identifying small details such as"
        " attributes, text, textures, sizes or subtle differences of specific"
        " objects." + _NO_COUNTING
    ),
    SkillCategory.INSTANCE_REASONING: (
        "Instance reasoning: reasoning about particular object instances,"
        " their relations, relative positions and interactions." + _NO_COUNTING
    ),
    SkillCategory.LOGICAL_REASONING: (
        "Logical reasoning: multi-step deduction, comparison or hypothetical"
        " reasoning grounded in what the image shows." + _NO_COUNTING
    ),
    SkillCategory.MATH_AND_COUNTING: (
        "Math & counting: counting objects, arithmetic over visible"
        " quantities, reading numbers from charts or diagrams, and numeric"
        " comparison."
    ),
    SkillCategory.SCIENCE_AND_TECHNOLOGY: (
        "Science & technology: applying scientific, engineering or technical"
        " knowledge to what is shown in the image." + _NO_COUNTING
    ),
}


def fill(template: str, **values: str) -> str:
    for key, value in values.items():
        template = template.replace("{" + key + "}", value)
    return template
