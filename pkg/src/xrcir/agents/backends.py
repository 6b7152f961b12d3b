"""Model backends: a live HTTP client and a scripted mock.

Both expose the same two calls, ``chat(request) -> str`` and
``embed(request) -> list[float]``, and count every call they receive in
``calls`` (keyed by agent kind). Neither retries; the agent layer does.
"""

from __future__ import annotations

import base64
import hashlib
import json
import mimetypes
import os
import threading
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping, Protocol

import httpx
import numpy as np

from ..errors import BackendError, FormatError, MockScriptError, TransientBackendError
from .prompts import PromptBook
from .request import AgentKind, AgentRequest, fingerprint


class Backend(Protocol):
    identity: str
    calls: Counter

    def chat(self, request: AgentRequest) -> str: ...

    def embed(self, request: AgentRequest) -> list[float]: ...


class _CallCounter:
    def __init__(self) -> None:
        self.calls: Counter = Counter()
        self._count_lock = threading.Lock()

    def _count(self, kind: AgentKind) -> None:
        with self._count_lock:
            self.calls[kind.value] += 1

    @property
    def call_count(self) -> int:
        return sum(self.calls.values())


# ---------------------------------------------------------------------------
# Live HTTP backend
# ---------------------------------------------------------------------------


def image_url(uri: str) -> str:
    """Turn an image locator into something a chat endpoint accepts.

    Remote and data URLs pass through; local paths are inlined as base64.
    """
    if uri.startswith(("http://", "https://", "data:")):
        return uri
    path = Path(uri[7:] if uri.startswith("file://") else uri)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise BackendError(f"cannot resolve image {uri!r}: {exc}") from exc
    mime = mimetypes.guess_type(path.name)[0] or "image/png"
    return f"data:{mime};base64,{base64.b64encode(raw).decode('ascii')}"


class HttpBackend(_CallCounter):
    """Chat-completions and embeddings over HTTP.

    Chat: ``POST {model, messages, temperature, top_p}``; the reply text is read
    from ``choices[0].message.content``. Embeddings: ``POST {model, input}``;
    the vector is read from ``data[0].embedding``. Images are sent to the
    embedding endpoint as a data/remote URL string in ``input``.
    """

    def __init__(
        self,
        chat_url: str,
        embed_url: str,
        *,
        api_key: str | None = None,
        chat_model: str = "internvl3-8b",
        embed_model: str = "clip-vit-b-32",
        timeout: float = 60.0,
        prompts: PromptBook | None = None,
        client: httpx.Client | None = None,
    ):
        super().__init__()
        self.chat_url = chat_url
        self.embed_url = embed_url
        self.chat_model = chat_model
        self.embed_model = embed_model
        self.prompts = prompts or PromptBook()
        headers = {"Content-Type": "application/json"}
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        self._client = client or httpx.Client(timeout=timeout)
        self._headers = headers
        self.identity = (
            f"http:{chat_model}@{chat_url}|{embed_model}@{embed_url}|prompts:{self.prompts.version}"
        )

    @classmethod
    def from_env(cls, env: Mapping[str, str] | None = None, **kwargs: Any) -> "HttpBackend":
        env = os.environ if env is None else env
        chat_url, embed_url = env.get("XR_CHAT_URL"), env.get("XR_EMBED_URL")
        if not chat_url or not embed_url:
            raise BackendError("XR_CHAT_URL and XR_EMBED_URL must be set for live backends")
        return cls(chat_url, embed_url, api_key=env.get("XR_API_KEY"), **kwargs)

    def close(self) -> None:
        self._client.close()

    def _post(self, url: str, body: dict) -> Any:
        try:
            resp = self._client.post(url, json=body, headers=self._headers)
        except (httpx.TimeoutException, httpx.TransportError) as exc:
            raise TransientBackendError(f"{type(exc).__name__} from {url}: {exc}") from exc
        if resp.status_code >= 500:
            raise TransientBackendError(f"HTTP {resp.status_code} from {url}")
        if resp.status_code >= 400:
            raise BackendError(f"HTTP {resp.status_code} from {url}: {resp.text[:200]}")
        try:
            return resp.json()
        except ValueError as exc:
            raise BackendError(f"non-JSON reply from {url}") from exc

    def chat_body(self, request: AgentRequest) -> dict:
        content: list[dict] = [
            {"type": "image_url", "image_url": {"url": image_url(im.uri)}}
            for im in request.image_inputs
        ]
        content.append({"type": "text", "text": self.prompts.render(request)})
        return {
            "model": self.chat_model,
            "messages": [{"role": "user", "content": content}],
            "temperature": request.temperature,
            "top_p": request.top_p,
        }

    def chat(self, request: AgentRequest) -> str:
        body = self.chat_body(request)
        self._count(request.agent_kind)
        payload = self._post(self.chat_url, body)
        try:
            content = payload["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendError("chat reply lacks choices[0].message.content") from exc
        if isinstance(content, list):
            content = "".join(p.get("text", "") for p in content if isinstance(p, dict))
        if not isinstance(content, str):
            raise BackendError("chat reply content is not text")
        return content

    def embed(self, request: AgentRequest) -> list[float]:
        if request.agent_kind is AgentKind.EMBED_TEXT:
            value = request.text_inputs[0]
        else:
            value = image_url(request.image_inputs[0].uri)
        self._count(request.agent_kind)
        payload = self._post(self.embed_url, {"model": self.embed_model, "input": value})
        try:
            vector = payload["data"][0]["embedding"]
            return [float(x) for x in vector]
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise BackendError("embedding reply lacks data[0].embedding") from exc


# ---------------------------------------------------------------------------
# Mock backend
# ---------------------------------------------------------------------------


@dataclass
class MockRecord:
    kind: str
    inputs_hash: str
    response: Any = None
    error: dict | None = None
    inputs: dict | None = None  # human-readable copy of the inputs, ignored on lookup

    def to_json(self) -> dict:
        out: dict[str, Any] = {"kind": self.kind, "inputs_hash": self.inputs_hash}
        if self.inputs is not None:
            out["inputs"] = self.inputs
        if self.response is not None:
            out["response"] = self.response
        if self.error is not None:
            out["error"] = self.error
        return out


class MockScript:
    """Map from request fingerprints to canned responses.

    A record may carry ``error: {"status": int, "times": int}``: the first
    ``times`` matching calls fail with that HTTP-like status (every call, if
    ``times`` is absent) before ``response`` is returned.
    """

    def __init__(self, records: Iterable[MockRecord] = ()):
        self.records: dict[tuple[str, str], MockRecord] = {}
        for record in records:
            self.records[(record.kind, record.inputs_hash)] = record

    def __len__(self) -> int:
        return len(self.records)

    def add(
        self,
        kind: AgentKind | str,
        *,
        texts: Iterable[str] = (),
        images: Iterable[str] = (),
        options: Mapping[str, int] | None = None,
        response: Any = None,
        error: dict | None = None,
    ) -> MockRecord:
        kind = AgentKind(kind)
        texts, images = list(texts), list(images)
        inputs: dict[str, Any] = {"texts": texts, "images": images}
        if options:
            inputs["options"] = dict(options)
        record = MockRecord(
            kind.value, fingerprint(kind, texts, images, options), response, error, inputs
        )
        self.records[(record.kind, record.inputs_hash)] = record
        return record

    def lookup(self, request: AgentRequest) -> MockRecord:
        key = (request.agent_kind.value, request.fingerprint)
        try:
            return self.records[key]
        except KeyError:
            raise MockScriptError(
                f"mock script has no {key[0]} record for inputs {request.text_inputs!r} "
                f"{[im.id for im in request.image_inputs]!r} (hash {key[1]})"
            ) from None

    def dumps(self) -> str:
        return "".join(
            json.dumps(r.to_json(), ensure_ascii=False, sort_keys=True) + "\n"
            for r in self.records.values()
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "MockScript":
        records = []
        with Path(path).open("r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    raw = json.loads(line)
                    record = MockRecord(
                        kind=AgentKind(raw["kind"]).value,
                        inputs_hash=str(raw["inputs_hash"]),
                        response=raw.get("response"),
                        error=raw.get("error"),
                        inputs=raw.get("inputs"),
                    )
                except (json.JSONDecodeError, KeyError, ValueError, TypeError) as exc:
                    raise FormatError(f"bad mock record in {path}: {exc}", lineno) from None
                if record.response is None and record.error is None:
                    raise FormatError(f"mock record in {path} has neither response nor error", lineno)
                records.append(record)
        return cls(records)

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.dumps().encode("utf-8")).hexdigest()[:12]


class MockBackend(_CallCounter):
    """Deterministic scripted backend.

    ``embed_noise`` > 0 adds Gaussian noise to scripted embeddings, seeded by
    ``(seed, request fingerprint)`` so each seed gives a reproducible run.
    """

    def __init__(self, script: MockScript, *, embed_noise: float = 0.0, seed: int = 0, name: str = ""):
        super().__init__()
        self.script = script
        self.embed_noise = float(embed_noise)
        self.seed = int(seed)
        self._failures: Counter = Counter()
        self._fail_lock = threading.Lock()
        ident = f"mock:{name or script.digest}"
        if self.embed_noise:
            ident += f"|noise={self.embed_noise}|seed={self.seed}"
        self.identity = ident

    def _respond(self, request: AgentRequest) -> Any:
        self._count(request.agent_kind)
        record = self.script.lookup(request)
        if record.error is not None:
            times = record.error.get("times")
            key = (record.kind, record.inputs_hash)
            with self._fail_lock:
                fail = times is None or self._failures[key] < times
                if fail:
                    self._failures[key] += 1
            if fail:
                status = int(record.error.get("status", 500))
                message = f"scripted HTTP {status} for {record.kind}"
                if status >= 500:
                    raise TransientBackendError(message)
                raise BackendError(message)
        if record.response is None:
            raise BackendError(f"scripted {record.kind} record has no response")
        return record.response

    def chat(self, request: AgentRequest) -> str:
        response = self._respond(request)
        if not isinstance(response, str):
            raise BackendError(f"scripted {request.agent_kind.value} response is not text")
        return response

    def embed(self, request: AgentRequest) -> list[float]:
        response = self._respond(request)
        if not isinstance(response, list):
            raise BackendError(f"scripted {request.agent_kind.value} response is not a vector")
        vector = np.asarray(response, dtype=np.float64)
        if self.embed_noise:
            rng = np.random.default_rng([self.seed, int(request.fingerprint[:8], 16)])
            vector = vector + self.embed_noise * rng.standard_normal(vector.shape)
        return vector.tolist()
