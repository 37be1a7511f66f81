"""Clients for chat-completion and embedding services, plus offline mocks.

The HTTP client speaks an OpenAI-style wire protocol: one user message per
request, image attached as a second content part, decode parameters mapped
to top-level request fields. Transport failures retry with bounded
exponential backoff; a request that reached the server and got a response
is never retried.

Two deterministic mocks make the whole pipeline runnable offline:
``echo-first-caption`` answers with the first input caption found in the
prompt, and ``hash-embedder`` maps any text or image bytes to a stable unit
vector.
"""

from __future__ import annotations

import base64
import hashlib
import os
import threading
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import requests

from .errors import BackendError, ProtocolError, TransportError
from .store import EmbeddingVector


@dataclass(frozen=True)
class ImagePayload:
    media_type: str
    data: bytes

    def as_data_url(self) -> str:
        encoded = base64.b64encode(self.data).decode("ascii")
        return f"data:{self.media_type};base64,{encoded}"


@dataclass(frozen=True)
class DecodeParams:
    num_beams: int = 3
    max_new_tokens: int = 60
    deterministic: bool = True

    def __post_init__(self):
        if self.num_beams < 1:
            raise ValueError("num_beams must be >= 1")


@dataclass(frozen=True)
class GenerationRequest:
    prompt: str
    model_name: str = ""
    target_language: str = "en"
    image_payload: ImagePayload | None = None
    decode: DecodeParams = field(default_factory=DecodeParams)


@dataclass(frozen=True)
class GenerationResult:
    text: str
    latency_ms: float
    backend_id: str
    raw_response: dict
    attempts: int = 1


def postprocess_caption(text: str) -> str:
    """Trim a raw completion down to a single caption line.

    Keeps only the first line, strips whitespace and one layer of matching
    surrounding quotes.
    """
    line = text.strip().split("\n", 1)[0].strip()
    pairs = {('"', '"'), ("'", "'"), ("“", "”"), ("«", "»")}
    while len(line) >= 2 and (line[0], line[-1]) in pairs:
        line = line[1:-1].strip()
    return line


def _check_text_request(req: GenerationRequest) -> None:
    if not req.prompt:
        raise ValueError("prompt must be non-empty")
    if req.image_payload is not None:
        raise ValueError("text-only completion cannot carry an image payload")


def _check_multimodal_request(req: GenerationRequest) -> None:
    if not req.prompt:
        raise ValueError("prompt must be non-empty")
    if req.image_payload is None:
        raise ValueError("multimodal completion requires an image payload")


class HttpGateway:
    """Shared client for chat-completion and embedding endpoints.

    Safe to share between threads; ``max_concurrency`` caps in-flight
    requests.
    """

    def __init__(
        self,
        base_url: str,
        model: str = "",
        embedding_model: str = "",
        api_key_env: str = "",
        timeout: float = 60.0,
        max_attempts: int = 3,
        backoff_base: float = 0.5,
        max_concurrency: int = 4,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.embedding_model = embedding_model or model
        self.api_key_env = api_key_env
        self.timeout = timeout
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self.backend_id = f"http:{self.base_url}"
        self._slots = threading.Semaphore(max_concurrency)
        self._session = requests.Session()

    # -- wire helpers ---------------------------------------------------

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(self.api_key_env) if self.api_key_env else None
        if token:
            headers["Authorization"] = f"Bearer {token}"
        return headers

    def _post(self, path: str, payload: dict) -> tuple[dict, int]:
        """POST with bounded retries on transport failures only."""
        last_exc: Exception | None = None
        for attempt in range(1, self.max_attempts + 1):
            try:
                with self._slots:
                    response = self._session.post(
                        f"{self.base_url}{path}",
                        json=payload,
                        headers=self._headers(),
                        timeout=self.timeout,
                    )
            except (requests.ConnectionError, requests.Timeout) as exc:
                last_exc = exc
                if attempt < self.max_attempts:
                    time.sleep(self.backoff_base * (2 ** (attempt - 1)))
                continue
            if not 200 <= response.status_code < 300:
                raise ProtocolError(
                    f"{path}: HTTP {response.status_code}: {response.text[:200]}"
                )
            try:
                return response.json(), attempt
            except ValueError as exc:
                raise ProtocolError(f"{path}: response is not JSON") from exc
        raise TransportError(
            f"{path}: transport failed after {self.max_attempts} attempts: {last_exc}"
        )

    def _completion_payload(self, req: GenerationRequest, content) -> dict:
        payload = {
            "model": req.model_name or self.model,
            "messages": [{"role": "user", "content": content}],
            "max_tokens": req.decode.max_new_tokens,
            "num_beams": req.decode.num_beams,
        }
        if req.decode.deterministic:
            payload["temperature"] = 0.0
        return payload

    def _run_completion(self, req: GenerationRequest, content) -> GenerationResult:
        payload = self._completion_payload(req, content)
        started = time.perf_counter()
        body, attempts = self._post("/chat/completions", payload)
        latency_ms = (time.perf_counter() - started) * 1000.0
        try:
            raw_text = body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProtocolError(f"malformed completion response: {exc}") from exc
        text = postprocess_caption(raw_text)
        if not text:
            raise BackendError("empty completion")
        return GenerationResult(
            text=text,
            latency_ms=latency_ms,
            backend_id=self.backend_id,
            raw_response=body,
            attempts=attempts,
        )

    # -- operations -----------------------------------------------------

    def complete(self, req: GenerationRequest) -> GenerationResult:
        _check_text_request(req)
        return self._run_completion(req, req.prompt)

    def complete_multimodal(self, req: GenerationRequest) -> GenerationResult:
        _check_multimodal_request(req)
        if not req.image_payload.media_type.startswith("image/"):
            raise ValueError(
                f"unsupported media type: {req.image_payload.media_type!r}"
            )
        content = [
            {"type": "text", "text": req.prompt},
            {"type": "image_url", "image_url": {"url": req.image_payload.as_data_url()}},
        ]
        return self._run_completion(req, content)

    def embed_remote(
        self, items: Sequence[str | ImagePayload]
    ) -> list[EmbeddingVector]:
        if not items:
            raise ValueError("embedding batch must be non-empty")
        wire_items = [
            item.as_data_url() if isinstance(item, ImagePayload) else item
            for item in items
        ]
        body, _ = self._post(
            "/embeddings", {"model": self.embedding_model, "input": wire_items}
        )
        try:
            rows = [entry["embedding"] for entry in body["data"]]
        except (KeyError, TypeError) as exc:
            raise ProtocolError(f"malformed embeddings response: {exc}") from exc
        if len(rows) != len(items):
            raise ProtocolError(
                f"embeddings response has {len(rows)} rows for {len(items)} inputs"
            )
        dims = {len(row) for row in rows}
        if len(dims) != 1:
            raise ProtocolError(f"dimension inconsistency in batch: {sorted(dims)}")
        return [EmbeddingVector.from_values(row) for row in rows]


class EchoCaptionBackend:
    """Deterministic mock: answers with a caption already in the prompt.

    For captioning prompts this is the first input caption (the last
    ``CAPTION 1:`` line); for translation prompts it echoes the source text,
    which makes translation runs reproducible without a model.
    """

    backend_id = "echo-first-caption"

    _TRANSLATE_PREFIX = "Translate the following text from English into "

    def _answer(self, prompt: str) -> str:
        if prompt.startswith(self._TRANSLATE_PREFIX):
            head, _, rest = prompt.partition("\nEnglish: ")
            language = head[len(self._TRANSLATE_PREFIX) :].rstrip(".")
            suffix = f"\n{language}:"
            if rest.endswith(suffix):
                rest = rest[: -len(suffix)]
            return rest
        captions = [
            line[len("CAPTION 1: ") :]
            for line in prompt.split("\n")
            if line.startswith("CAPTION 1: ")
        ]
        if captions:
            return captions[-1]
        return "an aerial view of an area"

    def _result(self, req: GenerationRequest) -> GenerationResult:
        text = postprocess_caption(self._answer(req.prompt))
        if not text:
            raise BackendError("empty completion")
        return GenerationResult(
            text=text,
            latency_ms=0.0,
            backend_id=self.backend_id,
            raw_response={"backend": self.backend_id},
            attempts=1,
        )

    def complete(self, req: GenerationRequest) -> GenerationResult:
        _check_text_request(req)
        return self._result(req)

    def complete_multimodal(self, req: GenerationRequest) -> GenerationResult:
        _check_multimodal_request(req)
        return self._result(req)


class HashEmbedderBackend:
    """Deterministic mock embedder: bytes -> seeded unit vector."""

    backend_id = "hash-embedder"

    def __init__(self, dim: int = 32):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.dim = dim

    def _vector(self, item: str | ImagePayload) -> EmbeddingVector:
        data = item.data if isinstance(item, ImagePayload) else item.encode("utf-8")
        seed = int.from_bytes(hashlib.sha256(data).digest()[:8], "little")
        values = np.random.default_rng(seed).standard_normal(self.dim)
        values /= np.linalg.norm(values)
        return EmbeddingVector.from_values(values)

    def embed_remote(
        self, items: Sequence[str | ImagePayload]
    ) -> list[EmbeddingVector]:
        if not items:
            raise ValueError("embedding batch must be non-empty")
        return [self._vector(item) for item in items]


class MockGateway:
    """Bundles the two offline mocks behind the gateway interface."""

    def __init__(self, dim: int = 32):
        self._echo = EchoCaptionBackend()
        self._hash = HashEmbedderBackend(dim)
        self.backend_id = self._echo.backend_id

    def complete(self, req: GenerationRequest) -> GenerationResult:
        return self._echo.complete(req)

    def complete_multimodal(self, req: GenerationRequest) -> GenerationResult:
        return self._echo.complete_multimodal(req)

    def embed_remote(
        self, items: Sequence[str | ImagePayload]
    ) -> list[EmbeddingVector]:
        return self._hash.embed_remote(items)
