"""LLM endpoint orchestration: tri-path signal generation and judge labelling.

Talks to any chat-completions-compatible endpoint: POST
``{base_url}/v1/chat/completions`` with ``model``, a single user message,
``temperature``, and ``max_tokens``; reads ``choices[0].message.content``.
The transport is injectable so tests can script exact status sequences and
capture request bodies without a network.

Retry policy: timeouts, HTTP 429, and HTTP 5xx are retried with exponential
backoff plus jitter; anything else fails immediately. A query produces a
bundle only when all three paths succeed.
"""

from __future__ import annotations

import concurrent.futures
import os
import random
import re
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

from .errors import (
    EmptyCompletion,
    EmptyInput,
    EndpointUnreachable,
    JudgeUnreachable,
    MissingVariable,
    RetriesExhausted,
    UnknownTemplate,
    UnparseableVerdict,
)
from .records import Record

DEFAULT_TEMPERATURE = 0.8
DEFAULT_MAX_TOKENS = 300

PROMPT_TEMPLATES = {
    "direct": (
        "Answer the question directly and concisely.\n"
        "Question: {{question}}\n"
        "Answer:"
    ),
    "cot": (
        "Answer the question. Think step by step and show your reasoning "
        "before the final answer.\n"
        "Question: {{question}}\n"
        "Answer:"
    ),
    "reverse": (
        "Given the following answer, state the most plausible original "
        "question it answers.\n"
        "Answer: {{answer}}\n"
        "Question:"
    ),
    "judge": (
        "Question: {{question}}\n"
        "Answer: {{answer}}\n"
        "Does the answer contain a hallucination (factually incorrect or "
        "unsupported content)? Reply with a single digit: 1 for yes, 0 for no."
    ),
}

_PLACEHOLDER_RE = re.compile(r"\{\{([A-Za-z_][A-Za-z0-9_]*)\}\}")

# First standalone 0/1: not part of a word, a longer integer, or a decimal.
_VERDICT_RE = re.compile(r"(?<![\w.])[01](?!\.?\d)(?!\w)")


def render_prompt(template_id: str, variables: dict[str, str]) -> str:
    """Byte-exact ``{{name}}`` substitution; no other transformation."""
    if template_id not in PROMPT_TEMPLATES:
        raise UnknownTemplate(template_id)
    template = PROMPT_TEMPLATES[template_id]

    def substitute(match: re.Match) -> str:
        name = match.group(1)
        if name not in variables:
            raise MissingVariable(name)
        return variables[name]

    return _PLACEHOLDER_RE.sub(substitute, template)


# --- endpoint configuration and transport ------------------------------------------

@dataclass
class LlmEndpointConfig:
    base_url: str = "http://localhost:8000"
    model: str = "local-model"
    api_key_env: str = "LLM_API_KEY"
    temperature: float = DEFAULT_TEMPERATURE
    max_tokens: int = DEFAULT_MAX_TOKENS
    timeout_seconds: float = 60.0
    max_retries: int = 3
    backoff_base_ms: int = 250
    max_concurrent: int = 4


class TransportTimeout(Exception):
    """Raised by a transport when the request timed out (retryable)."""


class TransportConnectionError(Exception):
    """Raised by a transport when the endpoint cannot be reached at all."""


@dataclass
class TransportReply:
    status: int
    body: dict


Transport = Callable[[str, dict, dict, float], TransportReply]


def requests_transport(url: str, headers: dict, payload: dict, timeout_s: float) -> TransportReply:
    import requests

    try:
        response = requests.post(url, headers=headers, json=payload, timeout=timeout_s)
    except requests.Timeout as exc:
        raise TransportTimeout(str(exc)) from exc
    except requests.RequestException as exc:
        raise TransportConnectionError(str(exc)) from exc
    try:
        body = response.json()
    except ValueError:
        body = {}
    return TransportReply(status=response.status_code, body=body)


@dataclass
class CompletionMeta:
    latency_ms: float
    prompt_tokens: int | None = None
    completion_tokens: int | None = None
    attempts: int = 1


class LlmClient:
    """One endpoint, with retry/backoff and request shaping."""

    def __init__(
        self,
        cfg: LlmEndpointConfig,
        transport: Transport | None = None,
        sleeper: Callable[[float], None] = time.sleep,
        rng: random.Random | None = None,
    ):
        self.cfg = cfg
        self.transport = transport if transport is not None else requests_transport
        self.sleeper = sleeper
        self.rng = rng if rng is not None else random.Random()

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.cfg.api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def complete(self, prompt: str, path_name: str) -> tuple[str, CompletionMeta]:
        """One chat completion with the configured sampling parameters."""
        url = self.cfg.base_url.rstrip("/") + "/v1/chat/completions"
        payload = {
            "model": self.cfg.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.cfg.temperature,
            "max_tokens": self.cfg.max_tokens,
        }
        attempts = self.cfg.max_retries + 1
        started = time.monotonic()
        for attempt in range(attempts):
            try:
                reply = self.transport(url, self._headers(), payload, self.cfg.timeout_seconds)
            except TransportTimeout:
                reply = None
            except TransportConnectionError as exc:
                raise EndpointUnreachable(f"{url}: {exc}") from exc

            if reply is not None:
                if reply.status == 200:
                    text = _extract_content(reply.body, path_name)
                    usage = reply.body.get("usage", {}) if isinstance(reply.body, dict) else {}
                    meta = CompletionMeta(
                        latency_ms=(time.monotonic() - started) * 1000.0,
                        prompt_tokens=usage.get("prompt_tokens"),
                        completion_tokens=usage.get("completion_tokens"),
                        attempts=attempt + 1,
                    )
                    return text, meta
                if reply.status != 429 and not 500 <= reply.status < 600:
                    raise EndpointUnreachable(f"{url}: HTTP {reply.status} is not retryable")

            if attempt + 1 < attempts:
                delay_ms = self.cfg.backoff_base_ms * (2 ** attempt)
                delay_ms *= 1.0 + self.rng.random()
                self.sleeper(delay_ms / 1000.0)
        raise RetriesExhausted(path_name, attempts)


def _extract_content(body: dict, path_name: str) -> str:
    try:
        text = body["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError):
        text = None
    if not text or not str(text).strip():
        raise EmptyCompletion(path_name)
    return str(text)


# --- tri-path generation -------------------------------------------------------------

@dataclass
class PathBundle:
    question: str
    answer_direct: str
    answer_cot: str
    question_reverse: str
    meta: dict[str, CompletionMeta] = field(default_factory=dict)


def generate_paths(
    query: str, cfg: LlmEndpointConfig, client: LlmClient | None = None
) -> PathBundle:
    """Generate the three reasoning paths for one query.

    The reverse-inference prompt receives the direct answer, not the query,
    so the third call only happens after the first succeeds.
    """
    if not query.strip():
        raise EmptyInput("query is empty")
    client = client if client is not None else LlmClient(cfg)

    direct, meta_direct = client.complete(
        render_prompt("direct", {"question": query}), "direct"
    )
    cot, meta_cot = client.complete(render_prompt("cot", {"question": query}), "cot")
    reverse, meta_reverse = client.complete(
        render_prompt("reverse", {"answer": direct}), "reverse"
    )
    return PathBundle(
        question=query,
        answer_direct=direct,
        answer_cot=cot,
        question_reverse=reverse,
        meta={"direct": meta_direct, "cot": meta_cot, "reverse": meta_reverse},
    )


# --- judge labelling ------------------------------------------------------------------

@dataclass
class JudgeVerdict:
    judge_id: str
    label: int | None
    raw_text: str


def parse_verdict(text: str) -> int | None:
    """First standalone 0 or 1 in the response, else None."""
    match = _VERDICT_RE.search(text)
    return int(match.group(0)) if match else None


def judge_label(
    question: str,
    answer: str,
    judges: Sequence[LlmEndpointConfig],
    clients: Sequence[LlmClient] | None = None,
) -> tuple[str, int | None, list[JudgeVerdict]]:
    """Two-judge labelling: concordant -> confirmed, discordant -> needs_review."""
    if len(judges) != 2:
        raise ValueError(f"the protocol uses exactly 2 judges, got {len(judges)}")
    if clients is None:
        clients = [LlmClient(cfg) for cfg in judges]

    prompt = render_prompt("judge", {"question": question, "answer": answer})
    verdicts: list[JudgeVerdict] = []
    for judge_index, (cfg, client) in enumerate(zip(judges, clients)):
        judge_id = f"judge{judge_index}:{cfg.model}"
        label: int | None = None
        raw = ""
        asks = cfg.max_retries + 1
        for _ in range(asks):
            try:
                raw, _meta = client.complete(prompt, f"judge{judge_index}")
            except EndpointUnreachable as exc:
                raise JudgeUnreachable(judge_id, str(exc)) from exc
            label = parse_verdict(raw)
            if label is not None:
                break
        if label is None:
            raise UnparseableVerdict(judge_id)
        verdicts.append(JudgeVerdict(judge_id=judge_id, label=label, raw_text=raw))

    if verdicts[0].label == verdicts[1].label:
        return "confirmed", verdicts[0].label, verdicts
    return "needs_review", None, verdicts


# --- batch helpers --------------------------------------------------------------------

def generate_records(
    queries: Sequence[tuple[str, str]],
    cfg: LlmEndpointConfig,
    cached: dict[str, Record] | None = None,
    split: str = "train",
    client_factory: Callable[[], LlmClient] | None = None,
) -> list[Record]:
    """Generate paths for (id, question) pairs, bounded-parallel.

    Ids present in ``cached`` are reused without issuing requests. Results
    come back in input order regardless of completion order.
    """
    cached = cached or {}
    make_client = client_factory if client_factory is not None else (lambda: LlmClient(cfg))

    def run_one(item: tuple[str, str]) -> Record:
        record_id, question = item
        if record_id in cached:
            return cached[record_id]
        bundle = generate_paths(question, cfg, client=make_client())
        return Record(
            id=record_id,
            question=question,
            answer_direct=bundle.answer_direct,
            answer_cot=bundle.answer_cot,
            question_reverse=bundle.question_reverse,
            label=None,
            label_status="unlabeled",
            split=split,
        ).check()

    with concurrent.futures.ThreadPoolExecutor(max_workers=max(cfg.max_concurrent, 1)) as pool:
        return list(pool.map(run_one, queries))


def label_records(
    records: Iterable[Record],
    judges: Sequence[LlmEndpointConfig],
    relabel: bool = False,
    client_factories: Sequence[Callable[[], LlmClient]] | None = None,
) -> list[Record]:
    """Judge every record's question/direct-answer pair, bounded-parallel."""
    records = list(records)
    if len(judges) != 2:
        raise ValueError(f"the protocol uses exactly 2 judges, got {len(judges)}")
    factories = (
        client_factories
        if client_factories is not None
        else [lambda cfg=cfg: LlmClient(cfg) for cfg in judges]
    )

    def run_one(record: Record) -> Record:
        if record.label_status == "confirmed" and not relabel:
            return record
        clients = [factory() for factory in factories]
        status, label, _verdicts = judge_label(
            record.question, record.answer_direct, judges, clients=clients
        )
        return Record(
            id=record.id,
            question=record.question,
            answer_direct=record.answer_direct,
            answer_cot=record.answer_cot,
            question_reverse=record.question_reverse,
            label=label,
            label_status=status,
            split=record.split,
        ).check()

    max_workers = max(judges[0].max_concurrent, 1)
    with concurrent.futures.ThreadPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(run_one, records))
