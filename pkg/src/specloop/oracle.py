"""LLM oracles: a chat-completion HTTP client, JSONL replay, and seeded simulators."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Mapping, Optional, Protocol, Sequence, Union

import httpx

from specloop.prompting import Conversation, Role, count_tokens

log = logging.getLogger(__name__)

API_BASE_ENV = "SPECLOOP_API_BASE"
API_KEY_ENV = "SPECLOOP_API_KEY"

PROVIDER_USAGE = "provider_usage"
ESTIMATED = "estimated"


class OracleError(Exception):
    pass


class TransportError(OracleError):
    pass


class ContextOverflow(OracleError):
    pass


class FixtureMiss(OracleError):
    def __init__(self, key: str):
        super().__init__(f"no recorded reply for conversation {key}")
        self.key = key


class StorageError(OracleError):
    pass


@dataclass(frozen=True)
class OracleReply:
    answer: str
    prompt_tokens: int
    completion_tokens: int
    source: str = ESTIMATED

    def __post_init__(self) -> None:
        if self.prompt_tokens < 0 or self.completion_tokens < 0:
            raise ValueError("token counts must be non-negative")

    def to_dict(self) -> dict:
        return {
            "answer": self.answer,
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
            "source": self.source,
        }


@dataclass(frozen=True)
class StreamKey:
    """Identifies one oracle draw inside a benchmark matrix.

    ``candidate_index`` is the 1-based global position of the draw within a
    strategy run; seeded oracles key their randomness on it.
    """

    seed: int
    task_id: str
    run_index: int = 0
    round_index: int = 0
    step: int = 0
    candidate_index: int = 1


class Oracle(Protocol):
    def complete(self, conv: Conversation, key: Optional[StreamKey] = None) -> OracleReply: ...


def conversation_hash(conv: Union[Conversation, Sequence[Mapping[str, str]]]) -> str:
    messages = conv.as_dicts() if isinstance(conv, Conversation) else conv
    payload = json.dumps(
        [[m["role"], m["content"]] for m in messages], ensure_ascii=False, separators=(",", ":")
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def _check_turn(conv: Conversation, context_window: Optional[int]) -> None:
    if not conv.messages or conv.last.role != Role.USER:
        raise OracleError("conversation must end with a user message")
    if context_window is not None and conv.prompt_tokens() > context_window:
        raise ContextOverflow(
            f"conversation holds {conv.prompt_tokens()} tokens, window is {context_window}"
        )


def estimated_reply(conv: Conversation, answer: str) -> OracleReply:
    return OracleReply(answer, conv.prompt_tokens(), count_tokens(answer), ESTIMATED)


class HttpOracle:
    """OpenAI-style ``/chat/completions`` client with retry on transient failures."""

    RETRY_STATUS = {408, 409, 429, 500, 502, 503, 504}

    def __init__(
        self,
        model: str,
        api_base: Optional[str] = None,
        api_key: Optional[str] = None,
        max_retries: int = 3,
        timeout: float = 120.0,
        context_window: Optional[int] = None,
        params: Optional[Mapping[str, Any]] = None,
        backoff: float = 1.0,
        transport: Optional[httpx.BaseTransport] = None,
    ):
        base = api_base or os.environ.get(API_BASE_ENV)
        if not base:
            raise OracleError(f"no API base URL; set {API_BASE_ENV}")
        key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        headers = {"Authorization": f"Bearer {key}"} if key else {}
        self.model = model
        self.max_retries = max_retries
        self.context_window = context_window
        self.params = dict(params or {})
        self.backoff = backoff
        self._client = httpx.Client(
            base_url=base.rstrip("/"), headers=headers, timeout=timeout, transport=transport
        )

    def close(self) -> None:
        self._client.close()

    def complete(self, conv: Conversation, key: Optional[StreamKey] = None) -> OracleReply:
        _check_turn(conv, self.context_window)
        body = {"model": self.model, "messages": conv.as_dicts(), **self.params}
        last_error = ""
        for attempt in range(self.max_retries + 1):
            if attempt:
                time.sleep(self.backoff * 2 ** (attempt - 1))
            try:
                resp = self._client.post("/chat/completions", json=body)
            except httpx.TransportError as exc:
                last_error = f"{type(exc).__name__}: {exc}"
                log.warning("chat completion attempt %d failed: %s", attempt + 1, last_error)
                continue
            if resp.status_code in self.RETRY_STATUS:
                last_error = f"HTTP {resp.status_code}"
                log.warning("chat completion attempt %d failed: %s", attempt + 1, last_error)
                continue
            if resp.status_code >= 400:
                text = resp.text[:500]
                if "context_length" in text or "maximum context" in text:
                    raise ContextOverflow(text)
                raise TransportError(f"HTTP {resp.status_code}: {text}")
            return self._parse(conv, resp.json())
        raise TransportError(f"giving up after {self.max_retries + 1} attempts ({last_error})")

    @staticmethod
    def _parse(conv: Conversation, data: dict) -> OracleReply:
        try:
            answer = data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError):
            raise TransportError(f"malformed completion response: {str(data)[:200]}") from None
        if not answer:
            raise TransportError("provider returned an empty answer")
        usage = data.get("usage") or {}
        if "prompt_tokens" in usage and "completion_tokens" in usage:
            return OracleReply(answer, int(usage["prompt_tokens"]), int(usage["completion_tokens"]),
                               PROVIDER_USAGE)
        return estimated_reply(conv, answer)


class ReplayOracle:
    """Serves replies recorded in a JSON Lines fixture, keyed by conversation hash."""

    def __init__(self, path: Union[str, Path], context_window: Optional[int] = None):
        self.path = Path(path)
        self.context_window = context_window
        self._lock = threading.Lock()
        self._entries: dict[str, OracleReply] = {}
        if self.path.exists():
            for lineno, line in enumerate(self.path.read_text(encoding="utf-8").splitlines(), 1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                    self._store(rec["key"], OracleReply(
                        rec["answer"], rec["prompt_tokens"], rec["completion_tokens"],
                        rec.get("source", ESTIMATED)))
                except (ValueError, KeyError) as exc:
                    raise StorageError(f"{self.path}:{lineno}: bad fixture record ({exc})") from None

    def _store(self, key: str, reply: OracleReply) -> None:
        if key in self._entries:
            log.warning("fixture %s: overwriting recorded reply for %s", self.path, key)
        self._entries[key] = reply

    def __len__(self) -> int:
        return len(self._entries)

    def complete(self, conv: Conversation, key: Optional[StreamKey] = None) -> OracleReply:
        _check_turn(conv, self.context_window)
        h = conversation_hash(conv)
        with self._lock:
            reply = self._entries.get(h)
        if reply is None:
            raise FixtureMiss(h)
        return reply

    def record(self, conv: Conversation, reply: OracleReply) -> dict:
        entry = {"key": conversation_hash(conv), "messages": conv.as_dicts(), **reply.to_dict()}
        with self._lock:
            try:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with self.path.open("a", encoding="utf-8") as fh:
                    fh.write(json.dumps(entry, ensure_ascii=False) + "\n")
            except OSError as exc:
                raise StorageError(f"cannot append to {self.path}: {exc}") from exc
            self._store(entry["key"], reply)
        return entry


class RecordingOracle:
    """Read-through recorder in front of a live oracle.

    A conversation already in the fixture is answered from it; anything else
    goes to ``inner`` and is recorded. Replays are keyed on content alone, so
    answering repeats from the fixture is what keeps a recorded session
    replayable: two runs reaching the same conversation get the same reply.
    """

    def __init__(self, inner: Oracle, fixture: ReplayOracle):
        self.inner = inner
        self.fixture = fixture

    def complete(self, conv: Conversation, key: Optional[StreamKey] = None) -> OracleReply:
        try:
            return self.fixture.complete(conv, key)
        except FixtureMiss:
            pass
        reply = self.inner.complete(conv, key)
        self.fixture.record(conv, reply)
        return reply


class ScriptedOracle:
    """Deterministic test oracle.

    ``script`` is either a list of answers (the n-th answer of a conversation
    is ``script[n]``, repeating the last one) or a callable receiving the
    conversation and stream key.
    """

    def __init__(
        self,
        script: Union[Sequence[str], Callable[[Conversation, Optional[StreamKey]], str]],
        context_window: Optional[int] = None,
    ):
        if not callable(script) and not script:
            raise ValueError("empty script")
        self.script = script
        self.context_window = context_window

    def complete(self, conv: Conversation, key: Optional[StreamKey] = None) -> OracleReply:
        _check_turn(conv, self.context_window)
        if callable(self.script):
            answer = self.script(conv, key)
        else:
            n = len(conv.answers())
            answer = self.script[min(n, len(self.script) - 1)]
        return estimated_reply(conv, answer)


def fenced(jml: str, reasoning: str = "Reasoning about the code step by step.") -> str:
    return f"{reasoning}\n```\n{jml}\n```"


@dataclass(frozen=True)
class StochasticOracleConfig:
    success_probability: float
    correct_answer: str
    wrong_answer_pool: tuple[str, ...]
    stuck_bias: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "wrong_answer_pool", tuple(self.wrong_answer_pool))
        if not 0.0 <= self.success_probability <= 1.0:
            raise ValueError("success_probability must lie in [0, 1]")
        if not 0.0 <= self.stuck_bias <= 1.0:
            raise ValueError("stuck_bias must lie in [0, 1]")
        if not self.correct_answer or not self.wrong_answer_pool:
            raise ValueError("need a correct answer and a non-empty wrong-answer pool")
        norm = "".join(self.correct_answer.split())
        if any("".join(w.split()) == norm for w in self.wrong_answer_pool):
            raise ValueError("a wrong answer equals the correct one up to whitespace")

    def to_dict(self) -> dict:
        return {
            "success_probability": self.success_probability,
            "correct_answer": self.correct_answer,
            "wrong_answer_pool": list(self.wrong_answer_pool),
            "stuck_bias": self.stuck_bias,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "StochasticOracleConfig":
        return cls(
            float(d["success_probability"]), d["correct_answer"], tuple(d["wrong_answer_pool"]),
            float(d.get("stuck_bias", 0.0)), int(d.get("seed", 0)),
        )


def marginal_edit(jml: str, rng: random.Random) -> str:
    """Duplicate one whitespace character: a cosmetic change that keeps the meaning."""
    spots = [i for i, ch in enumerate(jml) if ch in " \t"]
    if not spots:
        return jml.replace("*/", " */", 1) if "*/" in jml else jml + " "
    i = rng.choice(spots)
    return jml[: i + 1] + jml[i] + jml[i + 1:]


def is_marginal_edit(before: str, after: str) -> bool:
    if len(after) != len(before) + 1:
        return False
    return any(after[:i] + after[i + 1:] == before and after[i].isspace() for i in range(len(after)))


def _draw_rng(*parts: Any) -> random.Random:
    digest = hashlib.sha256(":".join(map(str, parts)).encode()).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


class StochasticOracle:
    """Seeded simulator of an unreliable LLM.

    A fresh draw is correct with probability ``p`` and otherwise picks from
    the wrong-answer pool. Inside a feedback conversation whose previous
    answer was wrong, the oracle gets stuck with probability ``stuck_bias``
    and resubmits a marginal edit of that answer.

    Every draw is a pure function of (config seed, stream seed, task id, run
    index, candidate index), so concurrent execution cannot change results
    and strategies that share a run see common random numbers.
    """

    def __init__(
        self,
        configs: Union[StochasticOracleConfig, Mapping[str, StochasticOracleConfig]],
        context_window: Optional[int] = None,
    ):
        self.configs = configs
        self.context_window = context_window

    def config_for(self, task_id: Optional[str]) -> StochasticOracleConfig:
        if isinstance(self.configs, StochasticOracleConfig):
            return self.configs
        if task_id in self.configs:
            return self.configs[task_id]
        if "default" in self.configs:
            return self.configs["default"]
        raise OracleError(f"no stochastic profile for task {task_id!r}")

    def complete(self, conv: Conversation, key: Optional[StreamKey] = None) -> OracleReply:
        _check_turn(conv, self.context_window)
        if key is None:
            key = StreamKey(seed=0, task_id="", candidate_index=len(conv.answers()) + 1)
        cfg = self.config_for(key.task_id or None)
        coords = (cfg.seed, key.seed, key.task_id, key.run_index, key.candidate_index)
        u_correct = _draw_rng("correct", *coords).random()
        u_stuck = _draw_rng("stuck", *coords).random()
        pick = _draw_rng("pick", *coords)

        previous = conv.answers()
        if previous:
            prev_jml = _last_fence(previous[-1].content)
            if prev_jml is not None and prev_jml.strip() != cfg.correct_answer.strip() \
                    and u_stuck < cfg.stuck_bias:
                return estimated_reply(conv, fenced(marginal_edit(prev_jml, pick)))
        if u_correct < cfg.success_probability:
            jml = cfg.correct_answer
        else:
            jml = pick.choice(cfg.wrong_answer_pool)
        return estimated_reply(conv, fenced(jml))


def _last_fence(answer: str) -> Optional[str]:
    parts = answer.split("```")
    if len(parts) < 3:
        return None
    body = parts[-2]
    return body.split("\n", 1)[1].strip() if "\n" in body else body.strip()


def load_profiles(path: Union[str, Path]) -> dict[str, StochasticOracleConfig]:
    """Read ``{"default": {...}, "tasks": {"<id>": {...}}}`` stochastic profiles."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    out = {tid: StochasticOracleConfig.from_dict(d) for tid, d in data.get("tasks", {}).items()}
    if "default" in data:
        out["default"] = StochasticOracleConfig.from_dict(data["default"])
    return out
