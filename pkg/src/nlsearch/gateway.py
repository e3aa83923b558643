"""Completion backends and the execution-refinement loop.

Every backend implements :class:`CompletionClient`: take a
:class:`CompletionRequest`, return raw text. :func:`translate` renders the
prompt, calls the backend, parses the reply, and re-prompts with a corrective
suffix until a valid document comes back or the attempt budget runs out.
"""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Protocol, Sequence

import httpx

from .entities import FailureKind, ParseOutcome, SearchEntityDocument, parse_document
from .errors import AuthError, BackendUnavailable, ContractViolation, TranslationFailed
from .prompts import FewShotExample, PromptBundle, render_prompt
from .schema import SchemaRegistry

log = logging.getLogger(__name__)

DEFAULT_API_KEY_ENV = "NLSEARCH_API_KEY"


@dataclass(frozen=True)
class CompletionRequest:
    """One chat-style completion call.

    ``turns`` alternate user/assistant and start with a user turn. ``query``
    carries the original natural-language query so keyed mocks and logs can
    identify the request; backends do not send it.
    """

    system_message: str
    turns: tuple[tuple[str, str], ...]
    max_output_tokens: int = 1024
    temperature: float = 0.0
    query: str | None = None

    def __post_init__(self) -> None:
        if not self.turns:
            raise ContractViolation("a request needs at least one turn")
        for i, (role, _) in enumerate(self.turns):
            expected = "user" if i % 2 == 0 else "assistant"
            if role != expected:
                raise ContractViolation(f"turn {i} must be {expected!r}, got {role!r}")
        if self.temperature < 0:
            raise ContractViolation("temperature must be >= 0")
        if self.max_output_tokens < 1:
            raise ContractViolation("max_output_tokens must be >= 1")


def build_request(bundle: PromptBundle, *, max_output_tokens: int = 1024, temperature: float = 0.0) -> CompletionRequest:
    return CompletionRequest(
        system_message=bundle.system_message,
        turns=(("user", bundle.user_message()),),
        max_output_tokens=max_output_tokens,
        temperature=temperature,
        query=bundle.user_query,
    )


class CompletionClient(Protocol):
    def complete(self, request: CompletionRequest) -> str: ...


def complete(client: CompletionClient, request: CompletionRequest) -> str:
    """Send ``request`` to ``client`` and return its raw text unparsed."""
    return client.complete(request)


# --------------------------------------------------------------------------
# mock backend


class MockClient:
    """Scripted backend for tests and offline runs.

    With a list script, responses are replayed in order regardless of the
    request. With a mapping script (query -> list of responses), each query
    gets its own queue, which keeps concurrent runs deterministic. Every
    request received is appended to ``requests``.
    """

    def __init__(self, script: Sequence[str] | Mapping[str, Sequence[str]]):
        self._lock = threading.Lock()
        self.requests: list[CompletionRequest] = []
        if isinstance(script, Mapping):
            self._keyed: dict[str, list[str]] | None = {k: list(v) for k, v in script.items()}
            self._queue: list[str] = []
        else:
            self._keyed = None
            self._queue = list(script)

    def complete(self, request: CompletionRequest) -> str:
        with self._lock:
            self.requests.append(request)
            if self._keyed is None:
                queue = self._queue
            else:
                queue = self._keyed.get(request.query or "", [])
            if not queue:
                raise BackendUnavailable("mock script exhausted", retryable=False)
            return queue.pop(0)

    @property
    def remaining(self) -> int:
        with self._lock:
            if self._keyed is None:
                return len(self._queue)
            return sum(len(q) for q in self._keyed.values())


def mock_client(script: Sequence[str] | Mapping[str, Sequence[str]]) -> MockClient:
    return MockClient(script)


def load_mock_script(path: str | Path) -> MockClient:
    """Load a mock script file: a JSON list of responses, or an object mapping
    each query to its list of responses."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if isinstance(data, list):
        if not all(isinstance(x, str) for x in data):
            raise ValueError("mock script list entries must be strings")
        return MockClient(data)
    if isinstance(data, dict):
        script = {}
        for query, responses in data.items():
            if isinstance(responses, str):
                responses = [responses]
            if not isinstance(responses, list) or not all(isinstance(x, str) for x in responses):
                raise ValueError(f"responses for {query!r} must be a string or list of strings")
            script[query] = responses
        return MockClient(script)
    raise ValueError("mock script must be a JSON list or object")


# --------------------------------------------------------------------------
# HTTP backend


class HttpChatClient:
    """Chat-completion backend over HTTP.

    Provider families:

    * ``openai``: ``POST {base_url}/chat/completions`` with a bearer token;
      the system message is the first entry of ``messages``; the reply is
      ``choices[0].message.content``.
    * ``anthropic``: ``POST {base_url}/messages`` with an ``x-api-key``
      header; the system message goes in ``system``; the reply is the
      concatenated ``text`` blocks of ``content``.

    The credential is read from the environment variable named by
    ``api_key_env`` at call time.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        *,
        provider: str = "openai",
        api_key_env: str = DEFAULT_API_KEY_ENV,
        timeout: float = 60.0,
        transport: httpx.BaseTransport | None = None,
    ):
        if provider not in ("openai", "anthropic"):
            raise ValueError(f"unknown provider family {provider!r}")
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.provider = provider
        self.api_key_env = api_key_env
        self._http = httpx.Client(timeout=timeout, transport=transport)

    def close(self) -> None:
        self._http.close()

    def _payload(self, request: CompletionRequest) -> tuple[str, dict, dict]:
        key = os.environ.get(self.api_key_env)
        if not key:
            raise AuthError(f"environment variable {self.api_key_env} is not set")
        turns = [{"role": role, "content": text} for role, text in request.turns]
        if self.provider == "openai":
            url = f"{self.base_url}/chat/completions"
            headers = {"Authorization": f"Bearer {key}"}
            body = {
                "model": self.model,
                "messages": [{"role": "system", "content": request.system_message}, *turns],
                "temperature": request.temperature,
                "max_tokens": request.max_output_tokens,
            }
        else:
            url = f"{self.base_url}/messages"
            headers = {"x-api-key": key, "anthropic-version": "2023-06-01"}
            body = {
                "model": self.model,
                "system": request.system_message,
                "messages": turns,
                "temperature": request.temperature,
                "max_tokens": request.max_output_tokens,
            }
        return url, headers, body

    def complete(self, request: CompletionRequest) -> str:
        url, headers, body = self._payload(request)
        try:
            resp = self._http.post(url, headers=headers, json=body)
        except httpx.HTTPError as exc:
            raise BackendUnavailable(f"transport error: {exc}", retryable=True) from exc
        if resp.status_code in (401, 403):
            raise AuthError(f"backend rejected credentials (HTTP {resp.status_code})")
        if resp.status_code == 429 or resp.status_code >= 500:
            raise BackendUnavailable(f"HTTP {resp.status_code}", retryable=True)
        if resp.status_code >= 400:
            raise BackendUnavailable(f"HTTP {resp.status_code}: {resp.text[:200]}", retryable=False)
        try:
            data = resp.json()
            if self.provider == "openai":
                return data["choices"][0]["message"]["content"]
            return "".join(block["text"] for block in data["content"] if block.get("type") == "text")
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise BackendUnavailable(f"unexpected response body: {exc}", retryable=False) from exc


# --------------------------------------------------------------------------
# execution refinement

_PROBLEMS = {
    FailureKind.NOT_JSON: "was not a single valid JSON object",
    FailureKind.WRONG_ROOT: "was JSON but not a single object",
    FailureKind.UNKNOWN_FIELD: "used a field name that is not in the schema",
    FailureKind.TYPE_MISMATCH: "had a value of the wrong type",
}


@dataclass(frozen=True)
class RefinementPolicy:
    """How many attempts to make and how to alter the prompt between them.

    The template may use ``{attempt}`` (1-based number of the attempt being
    made), ``{problem}`` (a phrase for the failure class) and ``{detail}``.
    """

    max_attempts: int = 3
    alteration_template: str = "Attempt {attempt}: your previous reply {problem}; return ONLY one JSON object"

    def __post_init__(self) -> None:
        if self.max_attempts < 1:
            raise ContractViolation("max_attempts must be >= 1")

    def alteration(self, attempt: int, outcome: ParseOutcome) -> str:
        failure = outcome.failure
        problem = _PROBLEMS[failure.kind] if failure else "was invalid"
        detail = failure.detail if failure else ""
        text = self.alteration_template.format(attempt=attempt, problem=problem, detail=detail)
        if failure is not None and failure.kind in (FailureKind.UNKNOWN_FIELD, FailureKind.TYPE_MISMATCH):
            text += f" ({failure.detail})"
        return text


@dataclass(frozen=True)
class Attempt:
    raw_response: str
    outcome: ParseOutcome
    latency_ms: float


@dataclass
class TranslationRecord:
    query: str
    attempts: list[Attempt] = field(default_factory=list)
    final: SearchEntityDocument | None = None

    @property
    def succeeded(self) -> bool:
        return self.final is not None

    def transcript(self) -> str:
        lines = [f"query: {self.query}"]
        for i, att in enumerate(self.attempts, 1):
            status = "valid" if att.outcome.valid else f"invalid ({att.outcome.failure})"
            lines.append(f"attempt {i}: {status}; {att.latency_ms:.1f} ms")
            lines.append("  " + att.raw_response.replace("\n", "\n  "))
        return "\n".join(lines)


def translate(
    query: str,
    schema: SchemaRegistry,
    shots: Sequence[FewShotExample],
    client: CompletionClient,
    policy: RefinementPolicy = RefinementPolicy(),
    *,
    include_reasoning: bool = True,
    max_output_tokens: int = 1024,
    temperature: float = 0.0,
) -> TranslationRecord:
    """Translate one query into a validated document.

    Raises:
        EmptyQueryError: the query is blank.
        TranslationFailed: every attempt was invalid; carries the record.
        BackendUnavailable, AuthError: propagated from the client.
    """
    bundle = render_prompt(schema, shots, query, include_reasoning=include_reasoning)
    record = TranslationRecord(query=bundle.user_query)
    for attempt in range(1, policy.max_attempts + 1):
        request = build_request(bundle, max_output_tokens=max_output_tokens, temperature=temperature)
        started = time.perf_counter()
        raw = client.complete(request)
        elapsed = (time.perf_counter() - started) * 1000.0
        outcome = parse_document(raw, schema)
        record.attempts.append(Attempt(raw, outcome, elapsed))
        if outcome.valid:
            record.final = outcome.document
            return record
        log.info("attempt %d for %r invalid: %s", attempt, bundle.user_query, outcome.failure)
        bundle = bundle.with_suffix(policy.alteration(attempt + 1, outcome))
    raise TranslationFailed(record)
