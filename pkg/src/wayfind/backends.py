"""Clients for the four external model capabilities: chat, VQA, grounding, embedding.

Three interchangeable implementations exist per capability:

* HTTP clients for live endpoints. Chat speaks the common chat-completion
  convention (POST JSON {model, messages, temperature[, max_tokens]} ->
  {choices: [{message: {content}}]}). The sidecar services use small JSON
  schemas: VQA {model, observation, question} -> {answer}; grounding
  {model, phrase, observations} -> {scores}; embedding {model, text} ->
  {embedding}.
* Scripted backends, table- or callable-driven, for tests and fixture
  recording.
* Replay backends reading a content-addressed cache directory; a cache miss
  is an error that names the digest.

Recording wrappers read through the cache and persist misses, which makes a
recorded pipeline run exactly reproducible offline. Cache keys are SHA-256
digests over a canonical byte encoding of (kind, payload, params), stable
across processes and platforms. Decoding temperature is fixed to 0 for all
pipeline calls so responses are cacheable.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Protocol, Sequence

import requests

from .errors import (
    CacheConflictError,
    ConfigError,
    DataError,
    EndpointError,
    GenerationError,
    ReplayMissError,
    TransportError,
    UnresolvableObservationError,
)

REQUEST_KINDS = ("chat", "vqa", "ground", "embed")
CHAT_ROLES = ("system", "user", "assistant")

RETRY_ATTEMPTS = 3
RETRY_BACKOFF_SECONDS = 0.5

ENV_VAR_URLS = {
    "chat": "WAYFIND_CHAT_URL",
    "vqa": "WAYFIND_VQA_URL",
    "ground": "WAYFIND_GROUND_URL",
    "embed": "WAYFIND_EMBED_URL",
}
ENV_VAR_API_KEY = "WAYFIND_API_KEY"


# ---------------------------------------------------------------------------
# Requests and cache keys
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ChatTurn:
    role: str
    content: str

    def __post_init__(self) -> None:
        if self.role not in CHAT_ROLES:
            raise DataError(f"chat role must be one of {CHAT_ROLES}, got {self.role!r}")
        if not self.content:
            raise DataError("chat turn content must be non-empty")


def user_turn(content: str) -> ChatTurn:
    return ChatTurn(role="user", content=content)


@dataclass(frozen=True)
class GenParams:
    """Decoding parameters for chat completion."""

    model: str
    temperature: float = 0.0
    max_tokens: int | None = None

    def to_dict(self) -> dict:
        params: dict = {"model": self.model, "temperature": float(self.temperature)}
        if self.max_tokens is not None:
            params["max_tokens"] = int(self.max_tokens)
        return params


def canonical_json_bytes(obj) -> bytes:
    """Stable byte encoding: sorted keys, compact separators, UTF-8."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode(
        "utf-8"
    )


@dataclass(frozen=True)
class BackendRequest:
    """A capability request in canonical form, ready for hashing."""

    kind: str
    payload: bytes
    params: Mapping[str, object]

    def __post_init__(self) -> None:
        if self.kind not in REQUEST_KINDS:
            raise DataError(f"unknown request kind {self.kind!r}")


def chat_request(turns: Sequence[ChatTurn], params: GenParams) -> BackendRequest:
    payload = canonical_json_bytes(
        {"turns": [{"role": t.role, "content": t.content} for t in turns]}
    )
    return BackendRequest(kind="chat", payload=payload, params=params.to_dict())


def vqa_request(observation: str, question: str, params: Mapping[str, object]) -> BackendRequest:
    payload = canonical_json_bytes({"observation": observation, "question": question})
    return BackendRequest(kind="vqa", payload=payload, params=dict(params))


def ground_request(
    phrase: str, observations: Sequence[str], params: Mapping[str, object]
) -> BackendRequest:
    # Observation order is semantic: scores come back in the same order.
    payload = canonical_json_bytes({"phrase": phrase, "observations": list(observations)})
    return BackendRequest(kind="ground", payload=payload, params=dict(params))


def embed_request(text: str, params: Mapping[str, object]) -> BackendRequest:
    payload = canonical_json_bytes({"text": text})
    return BackendRequest(kind="embed", payload=payload, params=dict(params))


def cache_key(request: BackendRequest) -> str:
    """256-bit hex digest of (kind, payload, params); pure and platform-stable."""
    h = hashlib.sha256()
    h.update(request.kind.encode("ascii"))
    h.update(b"\x00")
    h.update(request.payload)
    h.update(b"\x00")
    h.update(canonical_json_bytes(request.params))
    return h.hexdigest()


# ---------------------------------------------------------------------------
# Replay cache
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CacheEntry:
    key: str
    kind: str
    payload: bytes
    params: Mapping[str, object]
    response: bytes
    created_at: float

    def to_dict(self) -> dict:
        return {
            "key": self.key,
            "kind": self.kind,
            "payload": self.payload.decode("utf-8"),
            "params": dict(self.params),
            "response": self.response.decode("utf-8"),
            "created_at": self.created_at,
        }

    @classmethod
    def from_dict(cls, raw: Mapping) -> "CacheEntry":
        return cls(
            key=str(raw["key"]),
            kind=str(raw["kind"]),
            payload=str(raw["payload"]).encode("utf-8"),
            params=dict(raw["params"]),
            response=str(raw["response"]).encode("utf-8"),
            created_at=float(raw["created_at"]),
        )


def entry_for(request: BackendRequest, response: bytes, created_at: float | None = None) -> CacheEntry:
    return CacheEntry(
        key=cache_key(request),
        kind=request.kind,
        payload=request.payload,
        params=dict(request.params),
        response=response,
        created_at=time.time() if created_at is None else created_at,
    )


class ReplayCache:
    """Content-addressed response store: one JSON file per request digest.

    Writes are atomic (temp file + rename). Re-storing identical content is a
    no-op; storing different content under an existing key is an error.
    """

    def __init__(self, directory: str | Path, create: bool = False):
        self.directory = Path(directory)
        if create:
            self.directory.mkdir(parents=True, exist_ok=True)
        if not self.directory.is_dir():
            raise ConfigError(f"replay cache directory does not exist: {self.directory}")

    def path_for(self, key: str) -> Path:
        return self.directory / f"{key}.json"

    def load(self, key: str) -> CacheEntry | None:
        path = self.path_for(key)
        if not path.is_file():
            return None
        return CacheEntry.from_dict(json.loads(path.read_text(encoding="utf-8")))

    def store(self, entry: CacheEntry) -> None:
        existing = self.load(entry.key)
        if existing is not None:
            if (
                existing.kind == entry.kind
                and existing.payload == entry.payload
                and existing.response == entry.response
            ):
                return
            raise CacheConflictError(
                f"conflicting content for cache key {entry.key} ({entry.kind})"
            )
        path = self.path_for(entry.key)
        fd, tmp_name = tempfile.mkstemp(dir=self.directory, suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as handle:
                json.dump(entry.to_dict(), handle, sort_keys=True, indent=2)
                handle.write("\n")
            os.replace(tmp_name, path)
        except BaseException:
            if os.path.exists(tmp_name):
                os.unlink(tmp_name)
            raise

    def keys(self) -> list[str]:
        return sorted(p.stem for p in self.directory.glob("*.json"))

    def verify(self) -> list[str]:
        """Return keys whose stored content no longer hashes to the file name."""
        bad = []
        for key in self.keys():
            entry = self.load(key)
            recomputed = cache_key(
                BackendRequest(kind=entry.kind, payload=entry.payload, params=entry.params)
            )
            if recomputed != key or entry.key != key:
                bad.append(key)
        return bad


# ---------------------------------------------------------------------------
# Capability protocols and validated entry points
# ---------------------------------------------------------------------------

class ChatBackend(Protocol):
    def complete(self, turns: Sequence[ChatTurn], params: GenParams) -> str: ...


class VqaBackend(Protocol):
    def answer(self, observation: str, question: str) -> str: ...


class GroundingBackend(Protocol):
    def score(self, phrase: str, observations: Sequence[str]) -> list[float]: ...


class EmbeddingBackend(Protocol):
    def embed(self, text: str) -> list[float]: ...


def chat_complete(backend: ChatBackend, turns: Sequence[ChatTurn], params: GenParams) -> str:
    if not turns:
        raise DataError("chat_complete requires at least one turn")
    return backend.complete(list(turns), params)


def vqa_answer(backend: VqaBackend, observation: str, question: str) -> str:
    if not observation:
        raise DataError("vqa_answer requires an observation reference")
    if not question:
        raise DataError("vqa_answer requires a question")
    return backend.answer(observation, question)


def ground_score(
    backend: GroundingBackend, phrase: str, observations: Sequence[str]
) -> list[float]:
    if not observations:
        raise DataError("ground_score requires at least one observation")
    scores = [float(s) for s in backend.score(phrase, list(observations))]
    if len(scores) != len(observations):
        raise EndpointError(
            f"grounding backend returned {len(scores)} scores for {len(observations)} observations"
        )
    for s in scores:
        if not -1e-9 <= s <= 1.0 + 1e-9:
            raise EndpointError(f"grounding score {s} outside [0, 1]")
    return [min(max(s, 0.0), 1.0) for s in scores]


def embed_text(backend: EmbeddingBackend, text: str) -> list[float]:
    """Embed text and L2-normalize the result to a unit vector."""
    if not text:
        raise DataError("embed_text requires non-empty text")
    vector = [float(x) for x in backend.embed(text)]
    norm = math.sqrt(sum(x * x for x in vector))
    if norm <= 0.0:
        raise EndpointError("embedding backend returned a zero vector")
    return [x / norm for x in vector]


# ---------------------------------------------------------------------------
# Scripted backends (table- or callable-driven)
# ---------------------------------------------------------------------------

class ScriptedChat:
    """Chat backend answering from a table keyed by the last user turn.

    A `responder` callable taking the full turn list takes precedence over the
    table; `default` answers anything else. Calls are counted for tests.
    """

    def __init__(
        self,
        exact: Mapping[str, str] | None = None,
        default: str | None = None,
        responder: Callable[[Sequence[ChatTurn]], str] | None = None,
    ):
        self.exact = dict(exact or {})
        self.default = default
        self.responder = responder
        self.call_count = 0

    def complete(self, turns: Sequence[ChatTurn], params: GenParams) -> str:
        self.call_count += 1
        if self.responder is not None:
            return self.responder(turns)
        last_user = next((t.content for t in reversed(turns) if t.role == "user"), None)
        if last_user is not None and last_user in self.exact:
            return self.exact[last_user]
        if self.default is not None:
            return self.default
        raise EndpointError("scripted chat has no response for this prompt")


class ScriptedVqa:
    """VQA backend answering from a (observation, question) table."""

    def __init__(
        self,
        answers: Mapping[tuple[str, str], str] | None = None,
        default: str | None = None,
        resolvable: set[str] | None = None,
        responder: Callable[[str, str], str] | None = None,
    ):
        self.answers = dict(answers or {})
        self.default = default
        self.resolvable = resolvable
        self.responder = responder
        self.call_count = 0

    def answer(self, observation: str, question: str) -> str:
        self.call_count += 1
        if self.resolvable is not None and observation not in self.resolvable:
            raise UnresolvableObservationError(f"unresolvable observation: {observation!r}")
        if self.responder is not None:
            return self.responder(observation, question)
        key = (observation, question)
        if key in self.answers:
            return self.answers[key]
        if self.default is not None:
            return self.default
        raise UnresolvableObservationError(
            f"scripted VQA has no answer for {observation!r} / {question!r}"
        )


class ScriptedGrounder:
    """Grounding backend scoring from a (phrase, observation) table or callable."""

    def __init__(
        self,
        scores: Mapping[tuple[str, str], float] | None = None,
        default: float = 0.0,
        scorer: Callable[[str, str], float] | None = None,
    ):
        self.scores = dict(scores or {})
        self.default = default
        self.scorer = scorer
        self.call_count = 0

    def score(self, phrase: str, observations: Sequence[str]) -> list[float]:
        self.call_count += 1
        out = []
        for obs in observations:
            if self.scorer is not None:
                out.append(float(self.scorer(phrase, obs)))
            else:
                out.append(float(self.scores.get((phrase, obs), self.default)))
        return out


class HashEmbedder:
    """Deterministic embedding backend: SHA-256-driven pseudo-vectors.

    An explicit `table` overrides the hash for chosen texts, which makes it
    easy to construct orthogonal or identical pairs in tests.
    """

    def __init__(self, dim: int = 16, table: Mapping[str, Sequence[float]] | None = None):
        if dim < 1:
            raise ConfigError("embedding dimension must be >= 1")
        self.dim = dim
        self.table = {k: [float(x) for x in v] for k, v in (table or {}).items()}
        self.call_count = 0

    def embed(self, text: str) -> list[float]:
        self.call_count += 1
        if text in self.table:
            return list(self.table[text])
        digest = hashlib.sha256(text.encode("utf-8")).digest()
        raw = []
        for i in range(self.dim):
            chunk = digest[(2 * i) % 32 : (2 * i) % 32 + 2]
            value = int.from_bytes(chunk, "big")
            raw.append(value / 65535.0 * 2.0 - 1.0)
        return raw


# ---------------------------------------------------------------------------
# Live HTTP backends
# ---------------------------------------------------------------------------

def _post_json(
    session,
    url: str,
    body: Mapping,
    headers: Mapping[str, str],
    timeout: float,
    sleep: Callable[[float], None],
) -> Mapping:
    last_error: Exception | None = None
    for attempt in range(1, RETRY_ATTEMPTS + 1):
        try:
            response = session.post(url, json=body, headers=dict(headers), timeout=timeout)
        except requests.RequestException as exc:
            last_error = TransportError(f"POST {url} failed: {exc}")
        else:
            if response.status_code < 400:
                try:
                    return response.json()
                except ValueError as exc:
                    raise EndpointError(f"POST {url}: malformed JSON response: {exc}") from exc
            if response.status_code < 500:
                raise EndpointError(f"POST {url}: status {response.status_code}: {response.text}")
            last_error = EndpointError(
                f"POST {url}: status {response.status_code}: {response.text}"
            )
        if attempt < RETRY_ATTEMPTS:
            sleep(RETRY_BACKOFF_SECONDS * (2 ** (attempt - 1)))
    assert last_error is not None
    raise last_error


class _HttpBase:
    def __init__(
        self,
        url: str,
        api_key: str | None = None,
        timeout: float = 60.0,
        session=None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if not url:
            raise ConfigError("backend URL is not configured")
        self.url = url
        self.api_key = api_key
        self.timeout = timeout
        self.session = session if session is not None else requests.Session()
        self.sleep = sleep

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        return headers

    def _call(self, body: Mapping) -> Mapping:
        return _post_json(self.session, self.url, body, self._headers(), self.timeout, self.sleep)


class HttpChat(_HttpBase):
    def complete(self, turns: Sequence[ChatTurn], params: GenParams) -> str:
        body: dict = {
            "model": params.model,
            "messages": [{"role": t.role, "content": t.content} for t in turns],
            "temperature": params.temperature,
        }
        if params.max_tokens is not None:
            body["max_tokens"] = params.max_tokens
        data = self._call(body)
        try:
            content = data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise EndpointError(f"chat endpoint returned unexpected shape: {exc}") from exc
        if not isinstance(content, str) or not content:
            raise GenerationError("chat endpoint returned empty content")
        return content


class HttpVqa(_HttpBase):
    def __init__(self, url: str, model: str, **kwargs):
        super().__init__(url, **kwargs)
        self.model = model

    def answer(self, observation: str, question: str) -> str:
        data = self._call({"model": self.model, "observation": observation, "question": question})
        answer = data.get("answer")
        if not isinstance(answer, str):
            raise EndpointError("VQA endpoint response lacks an 'answer' string")
        return answer


class HttpGrounder(_HttpBase):
    def __init__(self, url: str, model: str, **kwargs):
        super().__init__(url, **kwargs)
        self.model = model

    def score(self, phrase: str, observations: Sequence[str]) -> list[float]:
        data = self._call(
            {"model": self.model, "phrase": phrase, "observations": list(observations)}
        )
        scores = data.get("scores")
        if not isinstance(scores, list):
            raise EndpointError("grounding endpoint response lacks a 'scores' list")
        return [float(s) for s in scores]


class HttpEmbedder(_HttpBase):
    def __init__(self, url: str, model: str, **kwargs):
        super().__init__(url, **kwargs)
        self.model = model

    def embed(self, text: str) -> list[float]:
        data = self._call({"model": self.model, "text": text})
        vector = data.get("embedding")
        if not isinstance(vector, list):
            raise EndpointError("embedding endpoint response lacks an 'embedding' list")
        return [float(x) for x in vector]


# ---------------------------------------------------------------------------
# Record / replay wrappers
# ---------------------------------------------------------------------------

def _decode_text(response: bytes) -> str:
    value = json.loads(response.decode("utf-8"))
    if not isinstance(value, str):
        raise EndpointError("cached response is not a string")
    return value


def _decode_floats(response: bytes) -> list[float]:
    value = json.loads(response.decode("utf-8"))
    if not isinstance(value, list):
        raise EndpointError("cached response is not a list")
    return [float(x) for x in value]


class RecordingChat:
    """Read-through cache over an inner chat backend."""

    def __init__(self, inner: ChatBackend, cache: ReplayCache):
        self.inner = inner
        self.cache = cache

    def complete(self, turns: Sequence[ChatTurn], params: GenParams) -> str:
        request = chat_request(turns, params)
        cached = self.cache.load(cache_key(request))
        if cached is not None:
            return _decode_text(cached.response)
        text = self.inner.complete(turns, params)
        self.cache.store(entry_for(request, canonical_json_bytes(text)))
        return text


class ReplayChat:
    def __init__(self, cache: ReplayCache):
        self.cache = cache

    def complete(self, turns: Sequence[ChatTurn], params: GenParams) -> str:
        key = cache_key(chat_request(turns, params))
        cached = self.cache.load(key)
        if cached is None:
            raise ReplayMissError(key, kind="chat")
        return _decode_text(cached.response)


class RecordingVqa:
    def __init__(self, inner: VqaBackend, cache: ReplayCache, params: Mapping[str, object]):
        self.inner = inner
        self.cache = cache
        self.params = dict(params)

    def answer(self, observation: str, question: str) -> str:
        request = vqa_request(observation, question, self.params)
        cached = self.cache.load(cache_key(request))
        if cached is not None:
            return _decode_text(cached.response)
        answer = self.inner.answer(observation, question)
        self.cache.store(entry_for(request, canonical_json_bytes(answer)))
        return answer


class ReplayVqa:
    def __init__(self, cache: ReplayCache, params: Mapping[str, object]):
        self.cache = cache
        self.params = dict(params)

    def answer(self, observation: str, question: str) -> str:
        key = cache_key(vqa_request(observation, question, self.params))
        cached = self.cache.load(key)
        if cached is None:
            raise ReplayMissError(key, kind="vqa")
        return _decode_text(cached.response)


class RecordingGrounder:
    def __init__(self, inner: GroundingBackend, cache: ReplayCache, params: Mapping[str, object]):
        self.inner = inner
        self.cache = cache
        self.params = dict(params)

    def score(self, phrase: str, observations: Sequence[str]) -> list[float]:
        request = ground_request(phrase, observations, self.params)
        cached = self.cache.load(cache_key(request))
        if cached is not None:
            return _decode_floats(cached.response)
        scores = [float(s) for s in self.inner.score(phrase, list(observations))]
        self.cache.store(entry_for(request, canonical_json_bytes(scores)))
        return scores


class ReplayGrounder:
    def __init__(self, cache: ReplayCache, params: Mapping[str, object]):
        self.cache = cache
        self.params = dict(params)

    def score(self, phrase: str, observations: Sequence[str]) -> list[float]:
        key = cache_key(ground_request(phrase, observations, self.params))
        cached = self.cache.load(key)
        if cached is None:
            raise ReplayMissError(key, kind="ground")
        return _decode_floats(cached.response)


class RecordingEmbedder:
    def __init__(self, inner: EmbeddingBackend, cache: ReplayCache, params: Mapping[str, object]):
        self.inner = inner
        self.cache = cache
        self.params = dict(params)

    def embed(self, text: str) -> list[float]:
        request = embed_request(text, self.params)
        cached = self.cache.load(cache_key(request))
        if cached is not None:
            return _decode_floats(cached.response)
        vector = [float(x) for x in self.inner.embed(text)]
        self.cache.store(entry_for(request, canonical_json_bytes(vector)))
        return vector


class ReplayEmbedder:
    def __init__(self, cache: ReplayCache, params: Mapping[str, object]):
        self.cache = cache
        self.params = dict(params)

    def embed(self, text: str) -> list[float]:
        key = cache_key(embed_request(text, self.params))
        cached = self.cache.load(key)
        if cached is None:
            raise ReplayMissError(key, kind="embed")
        return _decode_floats(cached.response)


# ---------------------------------------------------------------------------
# Configuration and assembly
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BackendConfig:
    """Endpoint URLs and model names for the four capabilities."""

    chat_url: str = ""
    chat_model: str = "chat-default"
    vqa_url: str = ""
    vqa_model: str = "vqa-default"
    ground_url: str = ""
    ground_model: str = "ground-default"
    embed_url: str = ""
    embed_model: str = "embed-default"
    api_key: str | None = None
    timeout: float = 60.0

    @classmethod
    def from_dict(cls, raw: Mapping, env: Mapping[str, str] | None = None) -> "BackendConfig":
        """Build from a config mapping, honoring WAYFIND_* environment overrides."""
        env = dict(os.environ if env is None else env)

        def section(name: str) -> Mapping:
            value = raw.get(name, {})
            return value if isinstance(value, Mapping) else {}

        def url(name: str) -> str:
            return env.get(ENV_VAR_URLS[name]) or str(section(name).get("url", ""))

        def model(name: str, default: str) -> str:
            return str(section(name).get("model", default))

        return cls(
            chat_url=url("chat"),
            chat_model=model("chat", "chat-default"),
            vqa_url=url("vqa"),
            vqa_model=model("vqa", "vqa-default"),
            ground_url=url("ground"),
            ground_model=model("ground", "ground-default"),
            embed_url=url("embed"),
            embed_model=model("embed", "embed-default"),
            api_key=env.get(ENV_VAR_API_KEY) or raw.get("api_key"),
            timeout=float(raw.get("timeout", 60.0)),
        )


@dataclass
class Backends:
    """The capability bundle a pipeline stage runs against."""

    chat: ChatBackend
    vqa: VqaBackend
    grounder: GroundingBackend
    embedder: EmbeddingBackend
    chat_params: GenParams


def build_backends(
    config: BackendConfig,
    mode: str,
    cache_dir: str | Path | None = None,
    inner: Backends | None = None,
) -> Backends:
    """Assemble the capability bundle for a run mode.

    live   -> HTTP clients only.
    record -> read-through cache over the inner bundle (HTTP by default).
    replay -> cache only; misses raise ReplayMissError.

    `inner` substitutes the live clients in record mode, which is how test
    fixtures are captured from scripted backends.
    """
    chat_params = GenParams(model=config.chat_model, temperature=0.0)
    vqa_params = {"model": config.vqa_model}
    ground_params = {"model": config.ground_model}
    embed_params = {"model": config.embed_model}

    if mode == "live":
        if inner is not None:
            return Backends(
                chat=inner.chat,
                vqa=inner.vqa,
                grounder=inner.grounder,
                embedder=inner.embedder,
                chat_params=chat_params,
            )
        return Backends(
            chat=HttpChat(config.chat_url, api_key=config.api_key, timeout=config.timeout),
            vqa=HttpVqa(config.vqa_url, config.vqa_model, api_key=config.api_key,
                        timeout=config.timeout),
            grounder=HttpGrounder(config.ground_url, config.ground_model,
                                  api_key=config.api_key, timeout=config.timeout),
            embedder=HttpEmbedder(config.embed_url, config.embed_model,
                                  api_key=config.api_key, timeout=config.timeout),
            chat_params=chat_params,
        )

    if cache_dir is None:
        raise ConfigError(f"mode {mode!r} requires a replay cache directory")

    if mode == "record":
        cache = ReplayCache(cache_dir, create=True)
        base = inner if inner is not None else build_backends(config, "live")
        return Backends(
            chat=RecordingChat(base.chat, cache),
            vqa=RecordingVqa(base.vqa, cache, vqa_params),
            grounder=RecordingGrounder(base.grounder, cache, ground_params),
            embedder=RecordingEmbedder(base.embedder, cache, embed_params),
            chat_params=chat_params,
        )

    if mode == "replay":
        cache = ReplayCache(cache_dir, create=False)
        return Backends(
            chat=ReplayChat(cache),
            vqa=ReplayVqa(cache, vqa_params),
            grounder=ReplayGrounder(cache, ground_params),
            embedder=ReplayEmbedder(cache, embed_params),
            chat_params=chat_params,
        )

    raise ConfigError(f"unknown run mode {mode!r}; expected live, record, or replay")
