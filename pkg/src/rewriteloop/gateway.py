"""Uniform completion interface over remote LLM endpoints plus a
deterministic mock, and the auxiliary labeling tasks (typo, quality,
relevance) built on top of it.

Wire shape for remote endpoints: POST {base_url}/complete with
{"instruction": str, "user": str, "max_tokens": int, "temperature": float,
"seed": int|null} returning {"text": str}. Mock endpoints use base_url
"mock://rag" or "mock://random" to select the fallback generator and read
canned answers from a directory of JSON files mapping fixture keys to text.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import re
import string
import threading
import time
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from urllib.parse import urlparse

import requests

from . import oracles
from .models import EmptyTextError, normalize_text
from .prompting import (
    GenerationOutput,
    PromptBundle,
    QUALITY_INSTRUCTION,
    RELEVANCE_INSTRUCTION,
    SearchIntent,
    TYPO_INSTRUCTION,
    render_generation_output,
)

logger = logging.getLogger(__name__)

API_KEY_ENV = "REWRITELOOP_API_KEY"


class GatewayError(RuntimeError):
    """Base class for completion failures."""


class TransportError(GatewayError):
    """Network-level failure or malformed response from a remote endpoint."""


class CompletionTimeoutError(GatewayError):
    """The endpoint did not answer within the configured deadline."""


class UnparsableLabelError(ValueError):
    """An auxiliary-label answer fell outside its closed vocabulary."""


class EndpointKind(str, Enum):
    REMOTE = "remote"
    MOCK = "mock"


class AuxTask(str, Enum):
    TYPO = "typo"
    QUALITY = "quality"
    RELEVANCE = "relevance"


AUX_VOCABULARY: dict[AuxTask, tuple[str, ...]] = {
    AuxTask.TYPO: ("yes", "no"),
    AuxTask.QUALITY: ("Yes", "No"),
    AuxTask.RELEVANCE: ("High", "Low", "None"),
}

_AUX_INSTRUCTIONS: dict[AuxTask, str] = {
    AuxTask.TYPO: TYPO_INSTRUCTION,
    AuxTask.QUALITY: QUALITY_INSTRUCTION,
    AuxTask.RELEVANCE: RELEVANCE_INSTRUCTION,
}


@dataclass(frozen=True)
class CompletionParams:
    max_tokens: int = 256
    temperature: float = 0.0
    seed: int | None = None

    def __post_init__(self) -> None:
        if self.max_tokens < 1:
            raise ValueError(f"max_tokens must be >= 1, got {self.max_tokens}")
        if self.temperature < 0:
            raise ValueError(f"temperature must be >= 0, got {self.temperature}")


@dataclass(frozen=True)
class ModelEndpoint:
    """A named completion backend; post-trained models arrive as new
    endpoints with kind=remote."""

    name: str
    base_url: str
    kind: EndpointKind


@dataclass(frozen=True)
class AuxLabel:
    task: AuxTask
    value: str

    def __post_init__(self) -> None:
        if self.value not in AUX_VOCABULARY[self.task]:
            raise ValueError(
                f"value {self.value!r} not in vocabulary for task {self.task.value}"
            )


def fixture_key(bundle: PromptBundle) -> str:
    """Key under which a mock fixture answers a bundle: the first 16 hex
    chars of the instruction's SHA-256, '::', then the raw user text."""
    digest = hashlib.sha256(bundle.instruction.encode("utf-8")).hexdigest()[:16]
    return f"{digest}::{bundle.user}"


def quality_payload(query_text: str, context_names: list[str] | tuple[str, ...], rewrite: str) -> str:
    return f"Query: {query_text}; Associated restaurant/Cuisine:{', '.join(context_names)}; Rewrite: {rewrite}"


def relevance_payload(query_text: str, restaurant: str, cuisine: str) -> str:
    return f"Query: {query_text}; Restaurant: {restaurant}; Cuisine: {cuisine}"


def typo_payload(query_text: str, context_names: list[str] | tuple[str, ...]) -> str:
    return f"Query: {query_text}; Associated restaurant/Cuisine:{', '.join(context_names)}"


_QUALITY_PAYLOAD_RE = re.compile(
    r"^Query: (?P<query>.*?); Associated restaurant/Cuisine:(?P<names>.*?); Rewrite: (?P<rewrite>.*)$"
)
_RELEVANCE_PAYLOAD_RE = re.compile(
    r"^Query: (?P<query>.*?); Restaurant: (?P<restaurant>.*?); Cuisine: (?P<cuisine>.*)$"
)
_TYPO_PAYLOAD_RE = re.compile(
    r"^Query: (?P<query>.*?); Associated restaurant/Cuisine:(?P<names>.*)$"
)
_N_REWRITES_RE = re.compile(r"provide (\d+) query rewrites")
_SANITIZE_RE = re.compile(r"[\"'“”‘’{}]")


def _split_names(joined: str) -> list[str]:
    return [part.strip() for part in joined.split(",") if part.strip()]


def _line_value(user: str, prefix: str) -> str:
    for line in user.splitlines():
        if line.startswith(prefix):
            return line[len(prefix):].strip()
    return ""


class MockCompleter:
    """Deterministic completion backend for tests and offline runs.

    Answers come from fixture files when a key matches; otherwise a fallback
    generator synthesizes an answer from the bundle alone, so output depends
    only on (bundle, params). Auxiliary-label bundles fall back to the rule
    oracles. The "rag" mode rewrites from the associated names in the user
    section; the "random" mode emits seeded random tokens and ignores context.
    """

    def __init__(self, fixtures_dir: str | Path | None = None):
        self._fixtures: dict[str, str] = {}
        if fixtures_dir is not None:
            for path in sorted(Path(fixtures_dir).glob("*.json")):
                data = json.loads(path.read_text(encoding="utf-8"))
                if not isinstance(data, dict):
                    raise ValueError(f"fixture file {path} must hold a JSON object")
                self._fixtures.update(data)

    def complete(self, mode: str, bundle: PromptBundle, params: CompletionParams) -> str:
        canned = self._fixtures.get(fixture_key(bundle))
        if canned is not None:
            return canned
        aux = self._aux_fallback(bundle)
        if aux is not None:
            return aux
        return self._generation_fallback(mode, bundle, params)

    def _aux_fallback(self, bundle: PromptBundle) -> str | None:
        if bundle.instruction == QUALITY_INSTRUCTION:
            m = _QUALITY_PAYLOAD_RE.match(bundle.user)
            if m is None:
                raise ValueError(f"malformed quality payload: {bundle.user!r}")
            return oracles.quality_label(
                m["query"], _split_names(m["names"]), m["rewrite"]
            )
        if bundle.instruction == RELEVANCE_INSTRUCTION:
            m = _RELEVANCE_PAYLOAD_RE.match(bundle.user)
            if m is None:
                raise ValueError(f"malformed relevance payload: {bundle.user!r}")
            return oracles.relevance_label(m["query"], [m["restaurant"]], [m["cuisine"]])
        if bundle.instruction == TYPO_INSTRUCTION:
            m = _TYPO_PAYLOAD_RE.match(bundle.user)
            if m is None:
                raise ValueError(f"malformed typo payload: {bundle.user!r}")
            return oracles.typo_label(m["query"], _split_names(m["names"]))
        return None

    def _generation_fallback(
        self, mode: str, bundle: PromptBundle, params: CompletionParams
    ) -> str:
        query = _line_value(bundle.user, "Query:")
        context = _split_names(_line_value(bundle.user, "Associated restaurant/Cuisine:"))
        m = _N_REWRITES_RE.search(bundle.instruction)
        n = int(m.group(1)) if m else 10
        if mode == "random":
            digest = hashlib.sha256(bundle.user.encode("utf-8")).hexdigest()
            rng = random.Random(f"{params.seed}:{digest}")
            rewrites = [
                "".join(rng.choice(string.ascii_lowercase) for _ in range(rng.randint(4, 9)))
                for _ in range(n)
            ]
            meaning = "random tokens"
        else:
            rewrites = []
            for name in context:
                try:
                    rewrites.append(normalize_text(name))
                except EmptyTextError:
                    continue
            try:
                q = normalize_text(query)
                rewrites.extend(q.split())
                rewrites.append(q)
            except EmptyTextError:
                pass
            meaning = _SANITIZE_RE.sub("", f"rewrites for {query}").strip() or "unknown query"
        deduped = list(dict.fromkeys(rewrites))[:n] or ["unknown"]
        output = GenerationOutput(
            query_meaning=meaning,
            correction=None,
            intent=SearchIntent.CUISINE if context else SearchIntent.NEITHER,
            rewrites=tuple(deduped),
        )
        return "Output: " + render_generation_output(output)


class LlmGateway:
    """Shared completion client with bounded retries and an in-flight cap.

    Thread-safe; remote calls honor `timeout_s` per attempt and retry
    transport failures and timeouts up to `retries` times with linear
    backoff. Per-endpoint call counts are kept for observability.
    """

    def __init__(
        self,
        fixtures_dir: str | Path | None = None,
        timeout_s: float = 10.0,
        retries: int = 2,
        backoff_s: float = 0.25,
        max_inflight: int = 8,
        sleep=time.sleep,
    ):
        if retries < 0:
            raise ValueError("retries must be >= 0")
        self.timeout_s = timeout_s
        self.retries = retries
        self.backoff_s = backoff_s
        self._mock = MockCompleter(fixtures_dir)
        self._inflight = threading.BoundedSemaphore(max_inflight)
        self._lock = threading.Lock()
        self.call_counts: dict[str, int] = {}
        self._sleep = sleep

    def complete(
        self, endpoint: ModelEndpoint, bundle: PromptBundle, params: CompletionParams
    ) -> str:
        with self._lock:
            self.call_counts[endpoint.name] = self.call_counts.get(endpoint.name, 0) + 1
        with self._inflight:
            if endpoint.kind is EndpointKind.MOCK:
                mode = urlparse(endpoint.base_url).netloc or "rag"
                return self._mock.complete(mode, bundle, params)
            return self._complete_remote(endpoint, bundle, params)

    def _complete_remote(
        self, endpoint: ModelEndpoint, bundle: PromptBundle, params: CompletionParams
    ) -> str:
        url = endpoint.base_url.rstrip("/") + "/complete"
        payload = {
            "instruction": bundle.instruction,
            "user": bundle.user,
            "max_tokens": params.max_tokens,
            "temperature": params.temperature,
            "seed": params.seed,
        }
        headers = {}
        api_key = os.environ.get(API_KEY_ENV)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        last_error: GatewayError | None = None
        for attempt in range(self.retries + 1):
            try:
                response = requests.post(
                    url, json=payload, timeout=self.timeout_s, headers=headers
                )
                response.raise_for_status()
                return response.json()["text"]
            except requests.Timeout as exc:
                last_error = CompletionTimeoutError(
                    f"{endpoint.name}: no answer within {self.timeout_s}s"
                )
                logger.warning("completion timeout (attempt %d): %s", attempt + 1, exc)
            except (requests.RequestException, KeyError, ValueError) as exc:
                last_error = TransportError(f"{endpoint.name}: {exc}")
                logger.warning("completion transport error (attempt %d): %s", attempt + 1, exc)
            if attempt < self.retries:
                self._sleep(self.backoff_s * (attempt + 1))
        assert last_error is not None
        raise last_error

    def aux_label(self, endpoint: ModelEndpoint, task: AuxTask, payload: str) -> AuxLabel:
        """Run one auxiliary-label request and parse its closed-vocabulary
        answer, canonicalizing case and stray punctuation."""
        bundle = PromptBundle(instruction=_AUX_INSTRUCTIONS[task], user=payload)
        text = self.complete(endpoint, bundle, CompletionParams(max_tokens=8))
        answer = text.strip().strip(".。").strip()
        for value in AUX_VOCABULARY[task]:
            if answer.lower() == value.lower():
                return AuxLabel(task=task, value=value)
        raise UnparsableLabelError(
            f"answer {text!r} outside vocabulary {AUX_VOCABULARY[task]} for {task.value}"
        )
