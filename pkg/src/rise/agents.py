"""Role handles and model backends.

Four calls make up the model interface: ``generate_question`` and ``solve``
sample, ``judge_validity`` and ``verify_answer`` decode greedily. The
supervisor handle always points at the solver's backend object.
"""

from __future__ import annotations

import base64
import logging
import mimetypes
import os
import time
from dataclasses import dataclass, field
from typing import Any, Protocol

import httpx
import numpy as np

from rise import prompts
from rise.config import ImageRef, ScheduleConfig, SkillCategory
from rise.parsing import UNPARSEABLE, ExtractedAnswer, QuestionRecord, parse_binary_verdict

logger = logging.getLogger(__name__)

ENDPOINT_ENV_VAR = "RISE_ENDPOINT"
API_KEY_ENV_VAR = "RISE_API_KEY"

QUESTIONER, SOLVER, SUPERVISOR = "questioner", "solver", "supervisor"


class BackendError(RuntimeError):
    """Transport failure that survived the retry budget, or a bad response."""


@dataclass(frozen=True)
class Sampling:
    temperature: float = 1.0
    top_p: float = 0.99
    max_tokens: int = 1024

    @classmethod
    def from_config(cls, cfg: ScheduleConfig) -> "Sampling":
        return cls(cfg.temperature, cfg.top_p, cfg.max_tokens)

    def greedy(self) -> "Sampling":
        return Sampling(0.0, 1.0, self.max_tokens)


@dataclass(frozen=True)
class Request:
    """One model call. Remote backends render ``system``/``user``; toy
    backends read the structured fields instead."""

    kind: str  # "question" | "solve" | "validity" | "verify"
    image: ImageRef
    system: str
    user: str
    sampling: Sampling
    question: str | None = None
    declared_skill: SkillCategory | None = None
    candidate: str | None = None


class Backend(Protocol):
    concurrent: bool

    def complete(self, request: Request, rng: np.random.Generator | None) -> str: ...


@dataclass
class AgentHandle:
    role: str
    backend: Any
    sampling: Sampling = field(default_factory=Sampling)


@dataclass(frozen=True)
class JudgeVerdict:
    verdict: int | str
    kind: str  # "validity" (v) | "verification" (u)
    raw: str

    @property
    def passed(self) -> bool:
        return self.verdict == 1


def make_handles(questioner_backend, solver_backend, cfg: ScheduleConfig):
    """Questioner, solver and a supervisor aliasing the solver's backend."""
    sampling = Sampling.from_config(cfg)
    q = AgentHandle(QUESTIONER, questioner_backend, sampling)
    s = AgentHandle(SOLVER, solver_backend, sampling)
    sup = AgentHandle(SUPERVISOR, solver_backend, sampling.greedy())
    return q, s, sup


def refresh_supervisor(supervisor: AgentHandle, solver: AgentHandle) -> None:
    supervisor.backend = solver.backend


def _require(h: AgentHandle, role: str) -> None:
    if h.role != role:
        raise ValueError(f"expected a {role} handle, got {h.role}")


def generate_question(h: AgentHandle, x: ImageRef, rng: np.random.Generator) -> str:
    _require(h, QUESTIONER)
    req = Request("question", x, prompts.QUESTIONER_SYSTEM, prompts.QUESTIONER_USER, h.sampling)
    return h.backend.complete(req, rng)


def solve(h: AgentHandle, x: ImageRef, q: str, rng: np.random.Generator) -> str:
    _require(h, SOLVER)
    user = prompts.fill(prompts.SOLVER_USER, QUESTION=q)
    req = Request("solve", x, prompts.SOLVER_SYSTEM, user, h.sampling, question=q)
    return h.backend.complete(req, rng)


def judge_validity(h: AgentHandle, x: ImageRef, q: QuestionRecord) -> JudgeVerdict:
    _require(h, SUPERVISOR)
    system = prompts.fill(prompts.VALIDITY_SYSTEM, SKILL_CONTEXT=prompts.SKILL_CONTEXT[q.skill])
    user = prompts.fill(prompts.VALIDITY_USER, QUESTION=q.text, DECLARED_SKILL=q.skill.display)
    req = Request("validity", x, system, user, h.sampling.greedy(),
                  question=q.text, declared_skill=q.skill)
    raw = h.backend.complete(req, None)
    return JudgeVerdict(parse_binary_verdict(raw), "validity", raw)


def verify_answer(h: AgentHandle, x: ImageRef, q: str, candidate: ExtractedAnswer) -> JudgeVerdict:
    _require(h, SUPERVISOR)
    shown = candidate.raw_span if candidate.raw_span is not None else candidate.normalized
    user = prompts.fill(prompts.VERIFIER_USER, QUESTION=q, CANDIDATE_ANSWER=shown)
    req = Request("verify", x, prompts.VERIFIER_SYSTEM, user, h.sampling.greedy(),
                  question=q, candidate=candidate.normalized)
    raw = h.backend.complete(req, None)
    return JudgeVerdict(parse_binary_verdict(raw), "verification", raw)


def verdict_bit(verdict: JudgeVerdict | int | str) -> int:
    """Collapse a verdict to 0/1; unparseable counts as 0."""
    value = verdict.verdict if isinstance(verdict, JudgeVerdict) else verdict
    return 1 if value == 1 else 0


def image_content_part(x: ImageRef) -> dict:
    if x.kind != "file":
        raise ValueError(f"remote backends need file images, got {x}")
    if x.ref.startswith(("http://", "https://", "data:")):
        url = x.ref
    else:
        with open(x.ref, "rb") as fh:
            payload = base64.b64encode(fh.read()).decode("ascii")
        mime = mimetypes.guess_type(x.ref)[0] or "application/octet-stream"
        url = f"data:{mime};base64,{payload}"
    return {"type": "image_url", "image_url": {"url": url}}


def chat_payload(request: Request, model: str) -> dict:
    return {
        "model": model,
        "messages": [
            {"role": "system", "content": request.system},
            {
                "role": "user",
                "content": [image_content_part(request.image), {"type": "text", "text": request.user}],
            },
        ],
        "temperature": request.sampling.temperature,
        "top_p": request.sampling.top_p,
        "max_tokens": request.sampling.max_tokens,
    }


_RETRYABLE_STATUS = {408, 429, 500, 502, 503, 504}


class RemoteBackend:
    """Chat-completions endpoint client.

    Transport failures and transient HTTP statuses are retried with
    exponential backoff; whatever text the model returns is passed through
    unchanged, parseable or not.
    """

    concurrent = True

    def __init__(self, endpoint: str, api_key: str | None = None, model: str = "default",
                 timeout: float = 120.0, max_retries: int = 3, backoff: float = 0.5,
                 client: httpx.Client | None = None):
        self.endpoint = endpoint.rstrip("/")
        self.model = model
        self.max_retries = max_retries
        self.backoff = backoff
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._client = client or httpx.Client(timeout=timeout)
        self._headers = headers

    @classmethod
    def from_env(cls, cfg: ScheduleConfig, **kwargs) -> "RemoteBackend":
        endpoint = os.environ.get(ENDPOINT_ENV_VAR)
        if not endpoint:
            raise BackendError(f"{ENDPOINT_ENV_VAR} is not set")
        return cls(endpoint, os.environ.get(API_KEY_ENV_VAR), cfg.model, cfg.request_timeout, **kwargs)

    @property
    def url(self) -> str:
        if self.endpoint.endswith("/chat/completions"):
            return self.endpoint
        return self.endpoint + "/chat/completions"

    def complete(self, request: Request, rng: np.random.Generator | None = None) -> str:
        payload = chat_payload(request, self.model)
        last_error: Exception | None = None
        for attempt in range(self.max_retries + 1):
            if attempt:
                time.sleep(self.backoff * 2 ** (attempt - 1))
            try:
                resp = self._client.post(self.url, json=payload, headers=self._headers)
            except httpx.TransportError as exc:
                last_error = exc
                logger.warning("transport error on attempt %d: %s", attempt + 1, exc)
                continue
            if resp.status_code in _RETRYABLE_STATUS:
                last_error = BackendError(f"HTTP {resp.status_code}")
                logger.warning("HTTP %d on attempt %d", resp.status_code, attempt + 1)
                continue
            if resp.status_code >= 400:
                raise BackendError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                content = resp.json()["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise BackendError(f"malformed completion response: {exc}") from exc
            return content if isinstance(content, str) else ""
        raise BackendError(f"giving up after {self.max_retries + 1} attempts: {last_error}")

    # Inference endpoints cannot be trained; phase updates are logged only.
    def update_policy(self, groups, cfg) -> "RemoteBackend":
        return self

    def train(self, batch) -> "RemoteBackend":
        return self
