from __future__ import annotations

import logging
import threading
import time
from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

from ..domain import Caption, CaptionSource, ImageHandle, PipelineConfig
from ..errors import (
    BackendError,
    DimensionMismatch,
    EmptyResponse,
    InputError,
    SchemaError,
    TransientBackendError,
)
from . import parsing
from .backends import Backend
from .cache import ResponseCache, cache_key
from .request import AgentKind, AgentRequest

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class QuestionSet:
    questions: tuple[str, ...]
    expected: tuple[bool, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "questions", tuple(self.questions))
        object.__setattr__(self, "expected", tuple(bool(x) for x in self.expected))
        if len(self.questions) != len(self.expected):
            raise InputError("questions and expected answers differ in length")
        if not self.questions:
            raise InputError("a question set needs at least one question")

    def __len__(self) -> int:
        return len(self.questions)

    def to_json(self) -> dict[str, Any]:
        return {"questions": list(self.questions), "expected": list(self.expected)}


def _require_text(value: str, what: str) -> str:
    if not isinstance(value, str) or not value.strip():
        raise InputError(f"{what} must be a non-empty string")
    return value


class Agents:
    """All model-backed agents over one backend.

    Every backend response is cached under (agent kind, backend identity,
    decode parameters, input fingerprint). Retryable failures are retried up
    to ``attempts`` times in total with exponential backoff; at most
    ``max_inflight`` backend calls run at once.
    """

    def __init__(
        self,
        backend: Backend,
        *,
        temperature: float = 0.0,
        top_p: float = 1.0,
        max_inflight: int = 8,
        cache: ResponseCache | None = None,
        attempts: int = 3,
        backoff: float = 0.5,
        max_reprompts: int = 2,
    ):
        self.backend = backend
        self.temperature = float(temperature)
        self.top_p = float(top_p)
        self.cache = cache if cache is not None else ResponseCache()
        self.attempts = attempts
        self.backoff = backoff
        self.max_reprompts = max_reprompts
        self._inflight = threading.BoundedSemaphore(max_inflight)
        self._dim: int | None = None
        self._dim_lock = threading.Lock()

    @classmethod
    def from_config(cls, backend: Backend, cfg: PipelineConfig, **kwargs: Any) -> "Agents":
        return cls(
            backend,
            temperature=cfg.temperature,
            top_p=cfg.top_p,
            max_inflight=cfg.max_inflight,
            **kwargs,
        )

    @property
    def identity(self) -> str:
        return self.backend.identity

    @property
    def dim(self) -> int | None:
        return self._dim

    # -- plumbing -----------------------------------------------------------

    def request(self, kind: AgentKind, texts=(), images=(), options=None) -> AgentRequest:
        return AgentRequest(
            kind,
            tuple(texts),
            tuple(images),
            temperature=self.temperature,
            top_p=self.top_p,
            options=tuple((options or {}).items()),
        )

    def _call(self, request: AgentRequest) -> Any:
        kind = request.agent_kind
        key = cache_key(kind.value, self.identity, (request.temperature, request.top_p), request.fingerprint)
        cached = self.cache.get(key)
        if cached is not None:
            return cached
        call = self.backend.embed if kind.is_embedding else self.backend.chat
        for attempt in range(self.attempts):
            try:
                with self._inflight:
                    result = call(request)
                break
            except TransientBackendError as exc:
                if attempt + 1 == self.attempts:
                    raise BackendError(
                        f"{kind.value} failed after {self.attempts} attempts: {exc}"
                    ) from exc
                log.debug("transient %s failure (attempt %d): %s", kind.value, attempt + 1, exc)
                if self.backoff:
                    time.sleep(self.backoff * 2**attempt)
        self.cache.put(key, result)
        return result

    def _chat(self, request: AgentRequest) -> str:
        reply = self._call(request)
        if not reply.strip():
            raise EmptyResponse(f"{request.agent_kind.value} returned an empty reply")
        return reply

    # -- agents -------------------------------------------------------------

    def caption(self, image: ImageHandle, source: CaptionSource = CaptionSource.CANDIDATE) -> Caption:
        reply = self._chat(self.request(AgentKind.CAPTION, images=[image]))
        return Caption(reply.strip(), source)

    def imagine_text(self, t_m: str, c_r: Caption) -> tuple[list[str], Caption]:
        _require_text(t_m, "modification text")
        request = self.request(AgentKind.TEXT_IMAGINATION, texts=[t_m, c_r.text])
        edits, caption = parsing.parse_text_imagination(self._chat(request))
        return edits, Caption(caption, CaptionSource.TEXT_IMAGINATION)

    def imagine_vision(self, t_m: str, i_r: ImageHandle) -> tuple[list[tuple[str, bool]], Caption]:
        _require_text(t_m, "modification text")
        request = self.request(AgentKind.VISION_IMAGINATION, texts=[t_m], images=[i_r])
        attributes, caption = parsing.parse_vision_imagination(self._chat(request))
        return attributes, Caption(caption, CaptionSource.VISION_IMAGINATION)

    def generate_questions(
        self,
        m_t: Sequence[str],
        m_v: Sequence[tuple[str, bool]],
        t_m: str,
        n: int,
    ) -> QuestionSet:
        """Produce exactly ``n`` True/False statements with expected answers.

        Extra pairs are truncated. On a shortfall the agent is re-prompted up to
        ``max_reprompts`` times before SchemaError is raised.
        """
        if not isinstance(n, int) or n < 1:
            raise InputError(f"question count must be a positive integer, got {n!r}")
        _require_text(t_m, "modification text")
        texts = [t_m, parsing.render_edits(m_t), parsing.render_attributes(m_v)]
        best = 0
        for attempt in range(self.max_reprompts + 1):
            options = {"n": n, "attempt": attempt} if attempt else {"n": n}
            pairs = parsing.parse_questions(self._chat(self.request(AgentKind.QUESTION_GEN, texts, options=options)))
            if len(pairs) >= n:
                pairs = pairs[:n]
                return QuestionSet([q for q, _ in pairs], [a for _, a in pairs])
            best = max(best, len(pairs))
            log.info("question agent returned %d/%d parseable pairs (attempt %d)", len(pairs), n, attempt + 1)
        raise SchemaError(
            f"question agent produced at most {best} of {n} parseable pairs "
            f"after {self.max_reprompts} re-prompts"
        )

    def answer_question_text(self, c_a: Caption | str, question: str) -> bool:
        text = c_a.text if isinstance(c_a, Caption) else _require_text(c_a, "caption")
        _require_text(question, "question")
        reply = self._call(self.request(AgentKind.TEXT_VERIFIER, texts=[text, question]))
        return parsing.parse_verdict(reply)

    def answer_question_vision(self, i_a: ImageHandle, question: str) -> bool:
        _require_text(question, "question")
        reply = self._call(self.request(AgentKind.VISION_VERIFIER, texts=[question], images=[i_a]))
        return parsing.parse_verdict(reply)

    # -- embeddings ---------------------------------------------------------

    def _unit(self, raw: Sequence[float], what: str) -> np.ndarray:
        vector = np.asarray(raw, dtype=np.float64)
        if vector.ndim != 1 or vector.size == 0:
            raise BackendError(f"{what}: embedding must be a non-empty flat vector")
        with self._dim_lock:
            if self._dim is None:
                self._dim = vector.size
            elif vector.size != self._dim:
                raise DimensionMismatch(
                    f"{what}: backend changed embedding dimension from {self._dim} to {vector.size}"
                )
        norm = float(np.linalg.norm(vector))
        if not np.isfinite(norm) or norm == 0.0:
            raise BackendError(f"{what}: embedding has zero or non-finite norm")
        return vector / norm

    def embed_text(self, text: str) -> np.ndarray:
        _require_text(text, "text")
        return self._unit(self._call(self.request(AgentKind.EMBED_TEXT, texts=[text])), "embed_text")

    def embed_image(self, image: ImageHandle) -> np.ndarray:
        raw = self._call(self.request(AgentKind.EMBED_IMAGE, images=[image]))
        return self._unit(raw, f"embed_image({image.id})")

