"""Endpoint protocol tests against scripted transports (no network)."""

import threading
from pathlib import Path

import pytest

from trifuse.errors import (
    EmptyCompletion,
    EndpointUnreachable,
    MissingVariable,
    RetriesExhausted,
    UnknownTemplate,
    UnparseableVerdict,
)
from trifuse.orchestrator import (
    LlmClient,
    LlmEndpointConfig,
    TransportReply,
    TransportTimeout,
    generate_paths,
    generate_records,
    judge_label,
    label_records,
    parse_verdict,
    render_prompt,
)

GOLDEN_DIR = Path(__file__).parent / "data" / "golden_prompts"


def ok_reply(text, prompt_tokens=7, completion_tokens=11):
    return TransportReply(
        status=200,
        body={
            "choices": [{"message": {"content": text}}],
            "usage": {"prompt_tokens": prompt_tokens, "completion_tokens": completion_tokens},
        },
    )


class ScriptedTransport:
    """Returns canned replies per call; records every request body."""

    def __init__(self, script):
        self.script = list(script)
        self.requests = []
        self.lock = threading.Lock()

    def __call__(self, url, headers, payload, timeout_s):
        with self.lock:
            self.requests.append({"url": url, "headers": headers, "payload": payload})
            action = self.script.pop(0)
        if isinstance(action, Exception):
            raise action
        return action


def client_with(script, cfg=None, sleeps=None):
    cfg = cfg or LlmEndpointConfig(max_retries=2, backoff_base_ms=100)
    transport = ScriptedTransport(script)
    sleeper = sleeps.append if sleeps is not None else (lambda s: None)
    return LlmClient(cfg, transport=transport, sleeper=sleeper), transport


class TestRenderPrompt:
    @pytest.mark.parametrize(
        "template_id,variables,golden",
        [
            ("direct", {"question": "What is the capital of Ireland?"}, "direct.txt"),
            ("cot", {"question": "What is the capital of Ireland?"}, "cot.txt"),
            ("reverse", {"answer": "Dublin is the capital of Ireland."}, "reverse.txt"),
            (
                "judge",
                {
                    "question": "What is the capital of Ireland?",
                    "answer": "Dublin is the capital of Ireland.",
                },
                "judge.txt",
            ),
        ],
    )
    def test_golden_renderings_byte_exact(self, template_id, variables, golden):
        rendered = render_prompt(template_id, variables)
        assert rendered.encode("utf-8") == (GOLDEN_DIR / golden).read_bytes()

    def test_missing_variable(self):
        with pytest.raises(MissingVariable) as exc:
            render_prompt("direct", {})
        assert exc.value.name == "question"

    def test_unknown_template(self):
        with pytest.raises(UnknownTemplate):
            render_prompt("direct2", {"question": "x"})


class TestVerdictParsing:
    @pytest.mark.parametrize(
        "text,expected",
        [
            ("1", 1),
            ("0", 0),
            ("The verdict is 1.", 1),
            ("I think (0) fits best", 0),
            ("score: 0.5 so I say 1", 1),  # 0.5 is a decimal, not a verdict
            ("10 out of 10", None),
            ("version v1 is fine", None),
            ("the answer is fine", None),
            ("2.1 then 0", 0),
        ],
    )
    def test_first_standalone_digit(self, text, expected):
        assert parse_verdict(text) == expected


class TestCompletionClient:
    def test_request_shaping_carries_sampling_parameters(self):
        client, transport = client_with([ok_reply("fine")])
        client.complete("prompt text", "direct")
        payload = transport.requests[0]["payload"]
        assert payload["temperature"] == 0.8
        assert payload["max_tokens"] == 300
        assert payload["messages"] == [{"role": "user", "content": "prompt text"}]
        assert transport.requests[0]["url"].endswith("/v1/chat/completions")

    def test_api_key_header_from_environment(self, monkeypatch):
        monkeypatch.setenv("LLM_API_KEY", "sk-secret")
        client, transport = client_with([ok_reply("fine")])
        client.complete("p", "direct")
        assert transport.requests[0]["headers"]["Authorization"] == "Bearer sk-secret"

    def test_429_then_success_backs_off(self):
        sleeps = []
        client, transport = client_with(
            [TransportReply(429, {}), ok_reply("recovered")], sleeps=sleeps
        )
        text, meta = client.complete("p", "direct")
        assert text == "recovered"
        assert meta.attempts == 2
        assert len(transport.requests) == 2
        assert len(sleeps) == 1 and sleeps[0] >= 0.100  # at least the base delay

    def test_timeouts_exhaust_retries(self):
        cfg = LlmEndpointConfig(max_retries=2, backoff_base_ms=1)
        client, transport = client_with([TransportTimeout()] * 3, cfg=cfg)
        with pytest.raises(RetriesExhausted) as exc:
            client.complete("p", "cot")
        assert exc.value.path_name == "cot"
        assert exc.value.attempts == 3
        assert len(transport.requests) == 3

    def test_server_errors_retry_then_fail(self):
        cfg = LlmEndpointConfig(max_retries=1, backoff_base_ms=1)
        client, transport = client_with([TransportReply(500, {})] * 2, cfg=cfg)
        with pytest.raises(RetriesExhausted):
            client.complete("p", "direct")
        assert len(transport.requests) == 2

    def test_client_errors_fail_immediately(self):
        client, transport = client_with([TransportReply(404, {})])
        with pytest.raises(EndpointUnreachable):
            client.complete("p", "direct")
        assert len(transport.requests) == 1

    def test_empty_completion_rejected(self):
        client, _ = client_with([ok_reply("   ")])
        with pytest.raises(EmptyCompletion):
            client.complete("p", "reverse")


class TestGeneratePaths:
    def test_three_requests_pass_through(self):
        cfg = LlmEndpointConfig()
        client, transport = client_with(
            [ok_reply("direct answer"), ok_reply("cot answer"), ok_reply("reverse question")],
            cfg=cfg,
        )
        bundle = generate_paths("Why is the sky blue?", cfg, client=client)
        assert bundle.answer_direct == "direct answer"
        assert bundle.answer_cot == "cot answer"
        assert bundle.question_reverse == "reverse question"
        assert len(transport.requests) == 3
        # reverse-inference sees the direct answer, not the query
        reverse_prompt = transport.requests[2]["payload"]["messages"][0]["content"]
        assert "direct answer" in reverse_prompt
        assert "Why is the sky blue?" not in reverse_prompt
        assert bundle.meta["direct"].completion_tokens == 11

    def test_retry_inside_one_path(self):
        cfg = LlmEndpointConfig(max_retries=2, backoff_base_ms=1)
        client, transport = client_with(
            [ok_reply("a_dir"), TransportReply(429, {}), ok_reply("a_cot"), ok_reply("q_rev")],
            cfg=cfg,
        )
        bundle = generate_paths("q?", cfg, client=client)
        assert bundle.answer_cot == "a_cot"
        assert len(transport.requests) == 4


class TestJudgeLabel:
    @staticmethod
    def judges():
        return [
            LlmEndpointConfig(model="judge-a", max_retries=1, backoff_base_ms=1),
            LlmEndpointConfig(model="judge-b", max_retries=1, backoff_base_ms=1),
        ]

    def test_concordant_judges_confirm(self):
        judges = self.judges()
        c1, _ = client_with([ok_reply("1")], cfg=judges[0])
        c2, _ = client_with([ok_reply("1")], cfg=judges[1])
        status, label, verdicts = judge_label("q?", "a.", judges, clients=[c1, c2])
        assert (status, label) == ("confirmed", 1)
        assert [v.label for v in verdicts] == [1, 1]
        assert all(v.raw_text == "1" for v in verdicts)

    def test_discordant_judges_flag_for_review(self):
        judges = self.judges()
        c1, _ = client_with([ok_reply("0")], cfg=judges[0])
        c2, _ = client_with([ok_reply("1")], cfg=judges[1])
        status, label, verdicts = judge_label("q?", "a.", judges, clients=[c1, c2])
        assert (status, label) == ("needs_review", None)
        assert [v.label for v in verdicts] == [0, 1]

    def test_unparseable_judge_raises_after_retries(self):
        judges = self.judges()
        c1, t1 = client_with(
            [ok_reply("the answer is fine"), ok_reply("still prose")], cfg=judges[0]
        )
        c2, _ = client_with([ok_reply("0")], cfg=judges[1])
        with pytest.raises(UnparseableVerdict) as exc:
            judge_label("q?", "a.", judges, clients=[c1, c2])
        assert "judge-a" in exc.value.judge_id
        assert len(t1.requests) == 2  # re-asked max_retries + 1 times

    def test_exactly_two_judges_required(self):
        with pytest.raises(ValueError):
            judge_label("q?", "a.", [LlmEndpointConfig()])


class CountingTransport:
    """Tracks the peak number of concurrently in-flight requests."""

    def __init__(self):
        self.in_flight = 0
        self.peak = 0
        self.total = 0
        self.lock = threading.Lock()

    def __call__(self, url, headers, payload, timeout_s):
        import time as _time

        with self.lock:
            self.in_flight += 1
            self.total += 1
            self.peak = max(self.peak, self.in_flight)
        _time.sleep(0.001)
        with self.lock:
            self.in_flight -= 1
        return ok_reply("text for " + payload["messages"][0]["content"][:20])


class TestBatchGeneration:
    def test_concurrency_bound_holds_under_load(self):
        cfg = LlmEndpointConfig(max_concurrent=4)
        transport = CountingTransport()
        queries = [(f"q{i}", f"question number {i}?") for i in range(100)]
        records = generate_records(
            queries, cfg,
            client_factory=lambda: LlmClient(cfg, transport=transport, sleeper=lambda s: None),
        )
        assert len(records) == 100
        assert transport.total == 300  # three paths per query
        assert transport.peak <= 4
        assert [r.id for r in records] == [f"q{i}" for i in range(100)]  # input order

    def test_cached_ids_skip_requests(self):
        cfg = LlmEndpointConfig(max_concurrent=2)
        transport = CountingTransport()
        queries = [("a", "first question?"), ("b", "second question?")]
        first = generate_records(
            queries, cfg,
            client_factory=lambda: LlmClient(cfg, transport=transport, sleeper=lambda s: None),
        )
        assert transport.total == 6
        cached = {r.id: r for r in first}
        again = generate_records(
            queries, cfg, cached=cached,
            client_factory=lambda: LlmClient(cfg, transport=transport, sleeper=lambda s: None),
        )
        assert transport.total == 6  # nothing new issued
        assert again == first

    def test_label_records_skips_confirmed_unless_forced(self):
        from trifuse.records import Record

        judges = [
            LlmEndpointConfig(model="judge-a", max_retries=0),
            LlmEndpointConfig(model="judge-b", max_retries=0),
        ]
        transport = ScriptedTransport([ok_reply("1"), ok_reply("1")])
        factories = [
            lambda: LlmClient(judges[0], transport=transport, sleeper=lambda s: None),
            lambda: LlmClient(judges[1], transport=transport, sleeper=lambda s: None),
        ]
        records = [
            Record(id="done", question="q?", answer_direct="a.",
                   label=0, label_status="confirmed", split="train"),
            Record(id="todo", question="q?", answer_direct="a.",
                   label_status="unlabeled", split="train"),
        ]
        labelled = label_records(records, judges, client_factories=factories)
        assert labelled[0].label == 0  # untouched
        assert labelled[1].label == 1 and labelled[1].label_status == "confirmed"
        assert len(transport.requests) == 2  # only the unlabeled record was judged
