"""Error-recovery strategies around an oracle/verifier pair, plus the token-cost model.

Feedback keeps one conversation and appends verifier errors; sampling
restarts from scratch for every candidate; mixed runs several independent
feedback rounds one after another. All three share one round loop: a
sampling attempt is a feedback round of length one.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional

from specloop.oracle import Oracle, OracleError, StreamKey
from specloop.prompting import Conversation, render_feedback, render_initial, render_system
from specloop.source import AnnotationCandidate, ExtractionError, extract_annotation, splice
from specloop.task import SpecTask
from specloop.verifier import Verdict, Verifier, VerdictKind

NO_BLOCK_MESSAGE = "no JML block found"

_SPEC_RE = re.compile(r"^\s*(feedback|sampling):(\d+)\s*$|^\s*mixed:(\d+)x(\d+)\s*$")


class StrategyError(ValueError):
    pass


class ZeroInitialTokens(ValueError):
    pass


@dataclass(frozen=True)
class StrategyConfig:
    kind: str  # "feedback" | "sampling" | "mixed"
    rounds: int
    steps: int

    def __post_init__(self) -> None:
        if self.kind not in ("feedback", "sampling", "mixed"):
            raise StrategyError(f"unknown strategy {self.kind!r}")
        if self.rounds < 1 or self.steps < 1:
            raise StrategyError(f"{self.spec}: budgets must be at least 1")
        if self.kind == "feedback" and self.rounds != 1 or self.kind == "sampling" and self.steps != 1:
            raise StrategyError(f"inconsistent {self.kind} shape {self.rounds}x{self.steps}")

    @classmethod
    def feedback(cls, k: int) -> "StrategyConfig":
        return cls("feedback", 1, k)

    @classmethod
    def sampling(cls, n: int) -> "StrategyConfig":
        return cls("sampling", n, 1)

    @classmethod
    def mixed(cls, s: int, f: int) -> "StrategyConfig":
        return cls("mixed", s, f)

    @classmethod
    def parse(cls, text: str) -> "StrategyConfig":
        """Parse ``feedback:K``, ``sampling:N`` or ``mixed:SxF``."""
        m = _SPEC_RE.match(text)
        if not m:
            raise StrategyError(f"bad strategy spec {text!r}; expected feedback:K, sampling:N or mixed:SxF")
        if m.group(1):
            n = int(m.group(2))
            return cls.feedback(n) if m.group(1) == "feedback" else cls.sampling(n)
        return cls.mixed(int(m.group(3)), int(m.group(4)))

    @property
    def spec(self) -> str:
        if self.kind == "feedback":
            return f"feedback:{self.steps}"
        if self.kind == "sampling":
            return f"sampling:{self.rounds}"
        return f"mixed:{self.rounds}x{self.steps}"

    @property
    def candidate_budget(self) -> int:
        return self.rounds * self.steps

    def __str__(self) -> str:
        return self.spec


@dataclass(frozen=True)
class AttemptTrace:
    candidate_index: int
    round_index: int
    step_in_round: int
    annotation: Optional[str]
    verdict: Verdict
    prompt_tokens: int
    completion_tokens: int
    cumulative_tokens: int
    note: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "candidate_index": self.candidate_index,
            "round_index": self.round_index,
            "step_in_round": self.step_in_round,
            "annotation": self.annotation,
            "note": self.note,
            "verdict": self.verdict.to_dict(),
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
            "cumulative_tokens": self.cumulative_tokens,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AttemptTrace":
        return cls(
            d["candidate_index"], d["round_index"], d["step_in_round"], d.get("annotation"),
            Verdict.from_dict(d["verdict"]), d["prompt_tokens"], d["completion_tokens"],
            d["cumulative_tokens"], d.get("note"),
        )


@dataclass
class Outcome:
    strategy: str
    solved: bool
    solving_candidate_index: Optional[int]
    traces: list[AttemptTrace]
    initial_input_tokens: int
    cause: Optional[str] = None
    conversations: list[Conversation] = field(default_factory=list, repr=False, compare=False)

    @property
    def total_tokens(self) -> int:
        return self.traces[-1].cumulative_tokens if self.traces else 0

    @property
    def tokens_at_solution(self) -> Optional[int]:
        if self.solving_candidate_index is None:
            return None
        return self.traces[self.solving_candidate_index - 1].cumulative_tokens

    @property
    def token_ratio(self) -> Optional[float]:
        if not self.traces or self.initial_input_tokens <= 0:
            return None
        return float(measured_token_ratio(self))

    @property
    def solution(self) -> Optional[str]:
        if self.solving_candidate_index is None:
            return None
        return self.traces[self.solving_candidate_index - 1].annotation

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "solved": self.solved,
            "solving_candidate_index": self.solving_candidate_index,
            "initial_input_tokens": self.initial_input_tokens,
            "total_tokens": self.total_tokens,
            "tokens_at_solution": self.tokens_at_solution,
            "token_ratio": self.token_ratio,
            "cause": self.cause,
            "traces": [t.to_dict() for t in self.traces],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Outcome":
        return cls(
            d["strategy"], d["solved"], d.get("solving_candidate_index"),
            [AttemptTrace.from_dict(t) for t in d["traces"]], d["initial_input_tokens"], d.get("cause"),
        )


@dataclass(frozen=True)
class TokenCostModel:
    """Per-turn sizes: initial input, model output, and our feedback reply."""

    initial: int
    output: int
    feedback: int = 0

    def __post_init__(self) -> None:
        if min(self.initial, self.output, self.feedback) < 0:
            raise ValueError("token sizes must be non-negative")


def predicted_cost_feedback(model: TokenCostModel, n: int) -> int:
    if n < 1:
        raise ValueError("n must be at least 1")
    i, o, r = model.initial, model.output, model.feedback
    return n * (i + o) + n * (n - 1) // 2 * (o + r)


def predicted_cost_sampling(model: TokenCostModel, n: int) -> int:
    if n < 1:
        raise ValueError("n must be at least 1")
    return n * (model.initial + model.output)


def measured_token_ratio(outcome: Outcome) -> Fraction:
    """Tokens spent up to the solution (or the whole budget) over the initial query size."""
    if outcome.initial_input_tokens <= 0:
        raise ZeroInitialTokens("outcome has no initial input tokens")
    spent = outcome.tokens_at_solution if outcome.solved else outcome.total_tokens
    return Fraction(spent, outcome.initial_input_tokens)


def run_strategy(
    task: SpecTask,
    config: StrategyConfig,
    oracle: Oracle,
    verifier: Verifier,
    seed: int = 0,
    run_index: int = 0,
    templates: Optional[Path] = None,
) -> Outcome:
    doc = task.document
    kind = doc.gap.kind
    target = task.target
    system = render_system(kind, templates)
    initial = render_initial(kind, doc, templates)

    traces: list[AttemptTrace] = []
    conversations: list[Conversation] = []
    cumulative = 0
    initial_tokens = 0

    def finish(solved: bool, cause: Optional[str] = None) -> Outcome:
        return Outcome(config.spec, solved, len(traces) if solved else None, traces,
                       initial_tokens, cause, conversations)

    index = 0
    for round_index in range(config.rounds):
        conv = Conversation.start(kind, system, initial)
        conversations.append(conv)
        for step in range(config.steps):
            index += 1
            key = StreamKey(seed, task.id, run_index, round_index, step, index)
            try:
                reply = oracle.complete(conv, key)
            except OracleError as exc:
                return finish(False, f"{type(exc).__name__}: {exc}")
            if index == 1:
                initial_tokens = reply.prompt_tokens
            conv.add_answer(reply.answer, reply.completion_tokens)
            cumulative += reply.prompt_tokens + reply.completion_tokens

            cand: Optional[AnnotationCandidate] = None
            note = None
            try:
                cand = extract_annotation(reply.answer, kind)
            except ExtractionError as exc:
                note = str(exc)
                verdict = Verdict.syntax_error(NO_BLOCK_MESSAGE)
            else:
                verdict = verifier.verify(splice(doc, cand), target, cand)

            traces.append(AttemptTrace(
                index, round_index, step, cand.jml_text if cand else None, verdict,
                reply.prompt_tokens, reply.completion_tokens, cumulative, note,
            ))
            if verdict.ok:
                return finish(True)
            if step == config.steps - 1:
                break
            if verdict.kind is VerdictKind.TOOL_FAILURE:
                # nothing useful to report; ask the same question again
                conv.add_user(conv.last_user().content)
            else:
                conv.add_user(render_feedback(kind, verdict, target, templates))
    return finish(False)


def run_feedback(task: SpecTask, k: int, oracle: Oracle, verifier: Verifier, **kw) -> Outcome:
    return run_strategy(task, StrategyConfig.feedback(k), oracle, verifier, **kw)


def run_sampling(task: SpecTask, n: int, oracle: Oracle, verifier: Verifier, **kw) -> Outcome:
    return run_strategy(task, StrategyConfig.sampling(n), oracle, verifier, **kw)


def run_mixed(task: SpecTask, s: int, f: int, oracle: Oracle, verifier: Verifier, **kw) -> Outcome:
    return run_strategy(task, StrategyConfig.mixed(s, f), oracle, verifier, **kw)
