import json
import logging
import math

import httpx
import pytest

from specloop.oracle import (
    ESTIMATED, PROVIDER_USAGE, ContextOverflow, FixtureMiss, HttpOracle, OracleError, OracleReply,
    RecordingOracle, ReplayOracle, ScriptedOracle, StochasticOracle, StochasticOracleConfig,
    StorageError, StreamKey, TransportError, conversation_hash, fenced, is_marginal_edit,
    load_profiles, marginal_edit,
)
from specloop.prompting import Conversation, count_tokens
from specloop.source import GapKind, extract_annotation

CORRECT = "/*@ normal_behavior ensures \\result == 2*x; @*/"
WRONG = ("/*@ normal_behavior ensures \\result == x; @*/", "/*@ normal_behavior ensures \\result >= 0; @*/")


def conv(*turns):
    c = Conversation.start(GapKind.CONTRACT, "system", "initial")
    for i, t in enumerate(turns):
        c.add_answer(t) if i % 2 == 0 else c.add_user(t)
    return c


def cfg(p, bias=0.0, seed=0):
    return StochasticOracleConfig(p, CORRECT, WRONG, bias, seed)


class TestReplay:
    def test_record_then_replay(self, tmp_path):
        path = tmp_path / "fx.jsonl"
        live = ScriptedOracle(["hello\n```\n//@ ensures true;\n```"])
        recorder = RecordingOracle(live, ReplayOracle(path))
        c = conv()
        reply = recorder.complete(c)
        assert ReplayOracle(path).complete(c) == reply
        rec = json.loads(path.read_text())
        assert rec["key"] == conversation_hash(c) and rec["messages"][0]["role"] == "system"

    def test_recorder_reads_through(self, tmp_path):
        path = tmp_path / "fx.jsonl"
        calls = []
        live = ScriptedOracle(lambda c, k: calls.append(k) or f"answer {len(calls)}")
        recorder = RecordingOracle(live, ReplayOracle(path))
        first = recorder.complete(conv(), StreamKey(0, "t", run_index=0))
        again = recorder.complete(conv(), StreamKey(0, "t", run_index=1))
        assert first == again and len(calls) == 1
        assert len(path.read_text().splitlines()) == 1

    def test_miss_names_hash(self, tmp_path):
        with pytest.raises(FixtureMiss) as err:
            ReplayOracle(tmp_path / "none.jsonl").complete(conv())
        assert conversation_hash(conv()) in str(err.value)

    def test_overwrite_warns(self, tmp_path, caplog):
        path = tmp_path / "fx.jsonl"
        fx = ReplayOracle(path)
        fx.record(conv(), OracleReply("first", 1, 1))
        with caplog.at_level(logging.WARNING):
            fx.record(conv(), OracleReply("second", 1, 1))
        assert "overwriting" in caplog.text
        assert ReplayOracle(path).complete(conv()).answer == "second"
        assert len(ReplayOracle(path)) == 1

    def test_bad_fixture(self, tmp_path):
        path = tmp_path / "fx.jsonl"
        path.write_text("{not json\n")
        with pytest.raises(StorageError):
            ReplayOracle(path)

    def test_hash_sensitive_to_roles_and_text(self):
        a = conv("x")
        b = Conversation.start(GapKind.CONTRACT, "system", "initial ")
        b.add_answer("x")
        assert conversation_hash(a) != conversation_hash(b)
        assert conversation_hash(a) == conversation_hash(a.as_dicts())

    def test_requires_user_turn(self, tmp_path):
        with pytest.raises(OracleError):
            ReplayOracle(tmp_path / "f.jsonl").complete(conv("answer"))


class TestScripted:
    def test_list_script(self):
        o = ScriptedOracle(["a", "b"])
        c = conv()
        assert o.complete(c).answer == "a"
        c.add_answer("a"); c.add_user("fb")
        assert o.complete(c).answer == "b"
        c.add_answer("b"); c.add_user("fb")
        assert o.complete(c).answer == "b"

    def test_estimates(self):
        c = conv()
        r = ScriptedOracle(["abcdefgh"]).complete(c)
        assert r.prompt_tokens == c.prompt_tokens() and r.completion_tokens == 2 and r.source == ESTIMATED

    def test_context_overflow(self):
        with pytest.raises(ContextOverflow):
            ScriptedOracle(["a"], context_window=2).complete(conv())


class TestStochastic:
    def test_p1_correct_first(self):
        r = StochasticOracle(cfg(1.0)).complete(conv())
        assert extract_annotation(r.answer, GapKind.CONTRACT).jml_text == CORRECT

    def test_p0_never_correct(self):
        o = StochasticOracle(cfg(0.0))
        for i in range(50):
            r = o.complete(conv(), StreamKey(i, "t"))
            assert extract_annotation(r.answer, GapKind.CONTRACT).jml_text in WRONG

    def test_seeded_determinism(self):
        def answers(seed):
            o = StochasticOracle(cfg(0.4, 0.5, seed=seed))
            return [o.complete(conv(), StreamKey(7, "t", 0, i, 0, i + 1)).answer for i in range(30)]
        assert answers(42) == answers(42)
        assert answers(42) != answers(43)

    def test_first_call_rate_binomial(self):
        p, trials = 0.3, 4000
        o = StochasticOracle(cfg(p))
        hits = sum(
            extract_annotation(o.complete(conv(), StreamKey(s, "t")).answer, GapKind.CONTRACT).jml_text == CORRECT
            for s in range(trials)
        )
        sigma = math.sqrt(trials * p * (1 - p))
        assert abs(hits - trials * p) <= 3 * sigma

    def test_stuck_frequency(self):
        b, trials = 0.6, 4000
        o = StochasticOracle(cfg(0.3, b))
        prev = fenced(WRONG[0])
        c = conv(prev, "feedback")
        edits = 0
        for s in range(trials):
            jml = extract_annotation(o.complete(c, StreamKey(s, "t", candidate_index=2)).answer,
                                     GapKind.CONTRACT).jml_text
            edits += is_marginal_edit(WRONG[0], jml)
        sigma = math.sqrt(trials * b * (1 - b))
        assert abs(edits - trials * b) <= 3 * sigma

    def test_pure_in_conversation_and_key(self):
        o = StochasticOracle(cfg(0.5, 0.5))
        k = StreamKey(3, "t", 1, 0, 1, 2)
        c = conv(fenced(WRONG[1]), "fb")
        assert o.complete(c, k) == o.complete(c, k)

    def test_profiles(self, tmp_path):
        path = tmp_path / "p.json"
        path.write_text(json.dumps({"default": cfg(0.0).to_dict(), "tasks": {"a": cfg(1.0).to_dict()}}))
        profiles = load_profiles(path)
        o = StochasticOracle(profiles)
        assert CORRECT in o.complete(conv(), StreamKey(0, "a")).answer
        assert CORRECT not in o.complete(conv(), StreamKey(0, "zzz")).answer
        with pytest.raises(OracleError):
            StochasticOracle({"a": cfg(1.0)}).complete(conv(), StreamKey(0, "b"))

    @pytest.mark.parametrize("bad", [
        dict(success_probability=1.5), dict(stuck_bias=-0.1), dict(wrong_answer_pool=()),
        dict(wrong_answer_pool=(CORRECT.replace(" ", "  "),)),
    ])
    def test_config_validation(self, bad):
        args = dict(success_probability=0.5, correct_answer=CORRECT, wrong_answer_pool=WRONG, stuck_bias=0.1)
        args.update(bad)
        with pytest.raises(ValueError):
            StochasticOracleConfig(**args)


def test_marginal_edit():
    import random
    rng = random.Random(0)
    for w in WRONG + ("/*@x@*/",):
        e = marginal_edit(w, rng)
        assert e != w and is_marginal_edit(w, e)
    assert not is_marginal_edit(WRONG[0], WRONG[1])


def _handler(responses, seen):
    it = iter(responses)

    def handle(request: httpx.Request):
        seen.append(request)
        r = next(it)
        if isinstance(r, Exception):
            raise r
        status, body = r
        return httpx.Response(status, json=body)
    return handle


def _completion(text, usage=True):
    body = {"choices": [{"message": {"role": "assistant", "content": text}}]}
    if usage:
        body["usage"] = {"prompt_tokens": 123, "completion_tokens": 45}
    return body


class TestHttp:
    def make(self, responses, seen, **kw):
        return HttpOracle("gpt-4o", api_base="http://llm.test/v1", api_key="k", backoff=0,
                          transport=httpx.MockTransport(_handler(responses, seen)), **kw)

    def test_provider_usage(self):
        seen = []
        o = self.make([(200, _completion("hi"))], seen, params={"temperature": 0.2})
        r = o.complete(conv())
        assert r == OracleReply("hi", 123, 45, PROVIDER_USAGE)
        body = json.loads(seen[0].content)
        assert body["model"] == "gpt-4o" and body["temperature"] == 0.2
        assert body["messages"] == [{"role": "system", "content": "system"}, {"role": "user", "content": "initial"}]
        assert seen[0].url == "http://llm.test/v1/chat/completions"
        assert seen[0].headers["authorization"] == "Bearer k"

    def test_estimated_without_usage(self):
        c = conv()
        r = self.make([(200, _completion("hello world", usage=False))], []).complete(c)
        assert r.source == ESTIMATED and r.completion_tokens == count_tokens("hello world")
        assert r.prompt_tokens == c.prompt_tokens()

    def test_retries_transient(self):
        seen = []
        o = self.make([httpx.ConnectError("down"), (503, {}), (200, _completion("ok"))], seen, max_retries=3)
        assert o.complete(conv()).answer == "ok"
        assert len(seen) == 3

    def test_gives_up(self):
        o = self.make([(503, {})] * 3, [], max_retries=2)
        with pytest.raises(TransportError):
            o.complete(conv())

    def test_client_error_not_retried(self):
        seen = []
        with pytest.raises(TransportError):
            self.make([(401, {"error": "bad key"})], seen).complete(conv())
        assert len(seen) == 1

    def test_provider_context_error(self):
        with pytest.raises(ContextOverflow):
            self.make([(400, {"error": {"code": "context_length_exceeded"}})], []).complete(conv())

    def test_local_context_check(self):
        seen = []
        with pytest.raises(ContextOverflow):
            self.make([], seen, context_window=1).complete(conv())
        assert seen == []

    def test_env_base(self, monkeypatch):
        monkeypatch.setenv("SPECLOOP_API_BASE", "http://env.test")
        monkeypatch.setenv("SPECLOOP_API_KEY", "secret")
        seen = []
        o = HttpOracle("m", transport=httpx.MockTransport(_handler([(200, _completion("x"))], seen)))
        o.complete(conv())
        assert seen[0].url.host == "env.test" and seen[0].headers["authorization"] == "Bearer secret"

    def test_no_base(self, monkeypatch):
        monkeypatch.delenv("SPECLOOP_API_BASE", raising=False)
        with pytest.raises(OracleError):
            HttpOracle("m")
