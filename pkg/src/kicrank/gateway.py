"""Chat-completion gateway.

One interface over four backends: ``http`` posts OpenAI-style JSON to a
real endpoint (with retries, response caching and an in-flight bound),
while ``identity``, ``oracle`` and ``scripted`` are deterministic
offline stand-ins used for tests, ablations and dry runs.

The offline backends understand the conversation shapes produced by
``kicrank.prompting``: they locate the candidate list or the scored
statement inside the final user turn.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import re
import threading
import time
import warnings
from dataclasses import dataclass
from pathlib import Path

import requests

from .prompting import Conversation, format_sort_response

log = logging.getLogger(__name__)

BACKENDS = ("http", "identity", "oracle", "scripted")

API_KEY_ENV_VARS = ("KICRANK_API_KEY", "OPENAI_API_KEY")

_CANDIDATE_LIST = re.compile(r"The list of candidate answers is \[(.*?)\]", re.DOTALL)
_QUESTION = re.compile(r"And the question is (.*?) Now, based on", re.DOTALL)
_SCORE_TURN = "Directly give a score out of 100"


class GatewayError(Exception):
    pass


@dataclass
class GatewayConfig:
    backend: str = "identity"
    endpoint: str = "https://api.openai.com/v1/chat/completions"
    model: str = "gpt-3.5-turbo"
    temperature: float = 0.0
    top_p: float = 1.0
    presence_penalty: float = 0.0
    frequency_penalty: float = 0.0
    max_in_flight: int = 4
    max_attempts: int = 5
    backoff_seconds: float = 1.0
    timeout_seconds: float = 60.0
    cache_path: str | None = None

    def validate(self):
        if self.backend not in BACKENDS:
            raise GatewayError(f"unknown backend {self.backend!r}; expected one of {BACKENDS}")
        if self.max_in_flight < 1 or self.max_attempts < 1:
            raise GatewayError("max_in_flight and max_attempts must be at least 1")


@dataclass
class GatewayStats:
    requests: int = 0
    network_calls: int = 0
    cache_hits: int = 0
    in_flight: int = 0
    max_in_flight_observed: int = 0


def cache_key(config: GatewayConfig, messages: list[dict]) -> str:
    """Pure function of the request: model, full message list and the
    sampling parameters."""
    payload = {
        "model": config.model,
        "messages": messages,
        "temperature": config.temperature,
        "top_p": config.top_p,
        "presence_penalty": config.presence_penalty,
        "frequency_penalty": config.frequency_penalty,
    }
    blob = json.dumps(payload, sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _as_messages(conversation: Conversation) -> list[dict]:
    return [{"role": m.role, "content": m.text} for m in conversation.messages]


def _extract_candidates(text: str) -> list[str] | None:
    match = None
    for match in _CANDIDATE_LIST.finditer(text):
        pass
    if match is None:
        return None
    return [c.strip() for c in match.group(1).split(", ") if c.strip()]


class Gateway:
    """Thread-safe completion client; see module docstring.

    ``oracle_answers`` maps the verbatim query text to the ground-truth
    candidate label; ``oracle_statements`` is the set of statement texts
    whose scored candidate is the ground truth. ``scripted_responses``
    is a transcript replayed in order.
    """

    def __init__(
        self,
        config: GatewayConfig,
        oracle_answers: dict[str, str] | None = None,
        oracle_statements: set[str] | None = None,
        scripted_responses: list[str] | None = None,
    ):
        config.validate()
        self.config = config
        self.stats = GatewayStats()
        self._oracle_answers = oracle_answers or {}
        self._oracle_statements = oracle_statements or set()
        self._script = list(scripted_responses or [])
        self._script_pos = 0
        self._lock = threading.Lock()
        self._sem = threading.Semaphore(config.max_in_flight)
        self._cache: dict[str, dict] = {}
        if config.cache_path and Path(config.cache_path).exists():
            self._load_cache(config.cache_path)

    # -- cache ---------------------------------------------------------

    def _load_cache(self, path):
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    record = json.loads(line)
                    self._cache[record["key"]] = record
                except (json.JSONDecodeError, KeyError):
                    warnings.warn(f"{path}:{lineno}: skipping corrupt cache line", stacklevel=2)

    def flush_cache(self, path: str | None = None) -> int:
        """Write every cache record as JSON lines; returns the count."""
        path = path or self.config.cache_path
        if path is None:
            raise GatewayError("no cache path configured")
        with self._lock:
            records = list(self._cache.values())
        with open(path, "w", encoding="utf-8") as fh:
            for record in records:
                fh.write(json.dumps(record, sort_keys=True, ensure_ascii=False) + "\n")
        return len(records)

    # -- completion ----------------------------------------------------

    def complete(self, conversation: Conversation) -> str:
        """Return the assistant reply for the conversation so far."""
        self._sem.acquire()
        with self._lock:
            self.stats.requests += 1
            self.stats.in_flight += 1
            self.stats.max_in_flight_observed = max(
                self.stats.max_in_flight_observed, self.stats.in_flight
            )
        try:
            if self.config.backend == "http":
                return self._complete_http(conversation)
            if self.config.backend == "identity":
                return self._complete_identity(conversation)
            if self.config.backend == "oracle":
                return self._complete_oracle(conversation)
            return self._complete_scripted()
        finally:
            with self._lock:
                self.stats.in_flight -= 1
            self._sem.release()

    def _complete_http(self, conversation: Conversation) -> str:
        messages = _as_messages(conversation)
        key = cache_key(self.config, messages)
        with self._lock:
            hit = self._cache.get(key)
            if hit is not None:
                self.stats.cache_hits += 1
                return hit["response"]

        payload = {
            "model": self.config.model,
            "messages": messages,
            "temperature": self.config.temperature,
            "top_p": self.config.top_p,
            "presence_penalty": self.config.presence_penalty,
            "frequency_penalty": self.config.frequency_penalty,
        }
        headers = {"Content-Type": "application/json"}
        for var in API_KEY_ENV_VARS:
            if os.environ.get(var):
                headers["Authorization"] = f"Bearer {os.environ[var]}"
                break

        last_error = None
        for attempt in range(self.config.max_attempts):
            if attempt:
                delay = self.config.backoff_seconds * (2 ** (attempt - 1))
                time.sleep(delay * (1.0 + 0.25 * random.random()))
            try:
                with self._lock:
                    self.stats.network_calls += 1
                resp = requests.post(
                    self.config.endpoint,
                    json=payload,
                    headers=headers,
                    timeout=self.config.timeout_seconds,
                )
                if resp.status_code == 429 or resp.status_code >= 500:
                    last_error = GatewayError(f"HTTP {resp.status_code} from {self.config.endpoint}")
                    log.warning("retryable status %s (attempt %d)", resp.status_code, attempt + 1)
                    continue
                resp.raise_for_status()
                try:
                    text = resp.json()["choices"][0]["message"]["content"]
                except (ValueError, KeyError, IndexError, TypeError) as exc:
                    last_error = GatewayError(f"malformed response body: {exc}")
                    continue
                record = {
                    "key": key,
                    "request": payload,
                    "response": text,
                    "timestamp": time.time(),
                }
                with self._lock:
                    self._cache[key] = record
                if self.config.cache_path:
                    with self._lock:
                        with open(self.config.cache_path, "a", encoding="utf-8") as fh:
                            fh.write(json.dumps(record, sort_keys=True, ensure_ascii=False) + "\n")
                return text
            except requests.RequestException as exc:
                last_error = GatewayError(f"request failed: {exc}")
                log.warning("request error (attempt %d): %s", attempt + 1, exc)
        raise GatewayError(f"giving up after {self.config.max_attempts} attempts: {last_error}")

    def _last_user_text(self, conversation: Conversation) -> str:
        for message in reversed(conversation.messages):
            if message.role == "user":
                return message.text
        return ""

    def _complete_identity(self, conversation: Conversation) -> str:
        last = self._last_user_text(conversation)
        if _SCORE_TURN in last:
            return "50"
        candidates = _extract_candidates(last)
        if candidates:
            return format_sort_response(candidates)
        return ""

    def _complete_oracle(self, conversation: Conversation) -> str:
        last = self._last_user_text(conversation)
        if _SCORE_TURN in last:
            statement = last.split(" " + _SCORE_TURN)[0].strip()
            return "100" if statement in self._oracle_statements else "0"
        candidates = _extract_candidates(last)
        if not candidates:
            return ""
        truth = None
        question = _QUESTION.search(last)
        if question:
            truth = self._oracle_answers.get(question.group(1).strip())
        if truth is not None:
            for i, cand in enumerate(candidates):
                if cand == truth or cand.startswith(truth + " ("):
                    ordered = [cand] + candidates[:i] + candidates[i + 1 :]
                    return format_sort_response(ordered)
        return format_sort_response(candidates)

    def _complete_scripted(self) -> str:
        with self._lock:
            if self._script_pos >= len(self._script):
                raise GatewayError("scripted transcript exhausted")
            text = self._script[self._script_pos]
            self._script_pos += 1
            return text


def oracle_tables(queries, verbalizer) -> tuple[dict[str, str], set[str]]:
    """Build the oracle backend's answer tables for a query set: the
    query-text to truth-label map for sort mode and the set of
    true completed statements for score mode."""
    answers: dict[str, str] = {}
    statements: set[str] = set()
    for query in queries:
        answers[verbalizer.query_text(query)] = verbalizer.entity_name(query.answer)
        statements.add(verbalizer.completed_statement(query, query.answer))
    return answers, statements
