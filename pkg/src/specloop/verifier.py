"""Verdicts, the pattern-table subprocess adapter, and a rule-based mock backend."""

from __future__ import annotations

import configparser
import enum
import json
import re
import shlex
import subprocess
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Protocol, Union

from specloop.source import AnnotationCandidate


class VerdictKind(str, enum.Enum):
    SUCCESS = "success"
    SYNTAX_ERROR = "syntax_error"
    SEMANTIC_ERROR = "semantic_error"
    TOOL_FAILURE = "tool_failure"


@dataclass(frozen=True)
class Verdict:
    kind: VerdictKind
    parser_message: str = ""
    branch_labels: tuple[str, ...] = ()
    raw_output: str = ""
    wall_time_ms: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "branch_labels", tuple(self.branch_labels))
        if self.kind is VerdictKind.SEMANTIC_ERROR and not self.branch_labels:
            raise ValueError("a semantic error needs at least one open branch label")
        if self.kind is not VerdictKind.SEMANTIC_ERROR and self.branch_labels:
            raise ValueError(f"{self.kind.value} verdicts carry no branch labels")
        if self.kind is not VerdictKind.SYNTAX_ERROR and self.parser_message:
            raise ValueError(f"{self.kind.value} verdicts carry no parser message")

    @classmethod
    def success(cls, raw_output: str = "", wall_time_ms: int = 0) -> "Verdict":
        return cls(VerdictKind.SUCCESS, raw_output=raw_output, wall_time_ms=wall_time_ms)

    @classmethod
    def syntax_error(cls, message: str, raw_output: str = "", wall_time_ms: int = 0) -> "Verdict":
        return cls(VerdictKind.SYNTAX_ERROR, parser_message=message, raw_output=raw_output,
                   wall_time_ms=wall_time_ms)

    @classmethod
    def semantic_error(cls, labels, raw_output: str = "", wall_time_ms: int = 0) -> "Verdict":
        return cls(VerdictKind.SEMANTIC_ERROR, branch_labels=tuple(labels), raw_output=raw_output,
                   wall_time_ms=wall_time_ms)

    @classmethod
    def tool_failure(cls, raw_output: str = "", wall_time_ms: int = 0) -> "Verdict":
        return cls(VerdictKind.TOOL_FAILURE, raw_output=raw_output, wall_time_ms=wall_time_ms)

    @property
    def ok(self) -> bool:
        return self.kind is VerdictKind.SUCCESS

    def to_dict(self) -> dict:
        d: dict = {"kind": self.kind.value}
        if self.kind is VerdictKind.SYNTAX_ERROR:
            d["parser_message"] = self.parser_message
        if self.kind is VerdictKind.SEMANTIC_ERROR:
            d["branch_labels"] = list(self.branch_labels)
        if self.raw_output:
            d["raw_output"] = self.raw_output
        d["wall_time_ms"] = self.wall_time_ms
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Verdict":
        return cls(
            VerdictKind(d["kind"]),
            parser_message=d.get("parser_message", ""),
            branch_labels=tuple(d.get("branch_labels", ())),
            raw_output=d.get("raw_output", ""),
            wall_time_ms=d.get("wall_time_ms", 0),
        )

    def summary(self) -> str:
        if self.kind is VerdictKind.SYNTAX_ERROR:
            return f"syntax error: {self.parser_message.splitlines()[0] if self.parser_message else ''}"
        if self.kind is VerdictKind.SEMANTIC_ERROR:
            return "open branches: " + ", ".join(self.branch_labels)
        return self.kind.value.replace("_", " ")


class Verifier(Protocol):
    def verify(
        self, draft_source: str, target: str, candidate: Optional[AnnotationCandidate] = None
    ) -> Verdict: ...


@dataclass(frozen=True)
class PatternTable:
    """Regexes for the three recognisable backend outcomes.

    ``syntax_error`` must capture ``message``; ``semantic_error`` captures
    ``label`` once per open goal; ``success`` needs no groups.
    """

    syntax_error: re.Pattern
    semantic_error: re.Pattern
    success: re.Pattern

    @classmethod
    def compile(cls, syntax_error: str, semantic_error: str, success: str) -> "PatternTable":
        table = cls(
            re.compile(syntax_error, re.MULTILINE),
            re.compile(semantic_error, re.MULTILINE),
            re.compile(success, re.MULTILINE),
        )
        if "message" not in table.syntax_error.groupindex:
            raise ValueError("syntax_error pattern needs a (?P<message>...) group")
        if "label" not in table.semantic_error.groupindex:
            raise ValueError("semantic_error pattern needs a (?P<label>...) group")
        return table

    @classmethod
    def load(cls, path: Union[str, Path]) -> "PatternTable":
        """Read an INI file with ``[syntax_error]``, ``[semantic_error]`` and ``[success]`` sections."""
        parser = configparser.ConfigParser(interpolation=None)
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
        try:
            return cls.compile(
                parser["syntax_error"]["pattern"],
                parser["semantic_error"]["pattern"],
                parser["success"]["pattern"],
            )
        except KeyError as exc:
            raise ValueError(f"{path}: missing section or pattern key {exc}") from None


MOCK_PATTERNS = PatternTable.compile(
    r"^PARSE: (?P<message>.*)$",
    r"^OPEN: (?P<label>.+?)\s*$",
    r"^CLOSED\s*$",
)

# KeY's headless output differs between releases; override with a pattern file when needed.
KEY_PATTERNS = PatternTable.compile(
    r"(?s)(?P<message>Error during JML parsing:.*\S)",
    r"^\s*(?:Open goal|OPEN GOAL|Open branch)[^:]*:\s*(?P<label>.+?)\s*$",
    r"(?:Proof closed|All proofs? closed|closed: true|^CLOSED\s*$)",
)


def classify_output(
    exit_code: Optional[int], stdout: str, stderr: str, patterns: PatternTable = MOCK_PATTERNS,
    wall_time_ms: int = 0,
) -> Verdict:
    raw = stdout if not stderr else f"{stdout}\n{stderr}" if stdout else stderr
    m = patterns.syntax_error.search(raw)
    if m:
        return Verdict.syntax_error(m.group("message").strip(), raw, wall_time_ms)
    labels = [m.group("label").strip() for m in patterns.semantic_error.finditer(raw)]
    labels = [label for label in labels if label]
    if labels:
        return Verdict.semantic_error(labels, raw, wall_time_ms)
    if patterns.success.search(raw):
        return Verdict.success(raw, wall_time_ms)
    return Verdict.tool_failure(raw or f"exit code {exit_code} with no output", wall_time_ms)


@dataclass
class SubprocessVerifier:
    """Runs an external prover on a temp copy of the draft.

    ``command`` is a shell-style template; ``{file}`` is replaced by the draft
    path and ``{target}`` by the method to prove.
    """

    command: str
    patterns: PatternTable = KEY_PATTERNS
    timeout: float = 300.0
    filename: str = "Draft.java"

    def verify(
        self, draft_source: str, target: str, candidate: Optional[AnnotationCandidate] = None
    ) -> Verdict:
        with tempfile.TemporaryDirectory(prefix="specloop-") as tmp:
            path = Path(tmp) / self.filename
            path.write_text(draft_source, encoding="utf-8")
            argv = [arg.format(file=str(path), target=target) for arg in shlex.split(self.command)]
            start = time.monotonic()
            try:
                proc = subprocess.run(
                    argv, capture_output=True, timeout=self.timeout, cwd=tmp,
                    encoding="utf-8", errors="replace",
                )
            except subprocess.TimeoutExpired as exc:
                out = exc.stdout.decode("utf-8", "replace") if isinstance(exc.stdout, bytes) else (exc.stdout or "")
                return Verdict.tool_failure(f"timeout after {self.timeout}s\n{out}", _ms_since(start))
            except OSError as exc:
                return Verdict.tool_failure(f"could not start prover: {exc}", _ms_since(start))
        return classify_output(proc.returncode, proc.stdout, proc.stderr, self.patterns, _ms_since(start))


def _ms_since(start: float) -> int:
    return int((time.monotonic() - start) * 1000)


def _unbalanced_parens(text: str) -> bool:
    depth = 0
    for ch in text:
        depth += {"(": 1, ")": -1}.get(ch, 0)
        if depth < 0:
            return True
    return depth != 0


PREDICATES: dict[str, Callable[[str], bool]] = {
    "unbalanced_parens": _unbalanced_parens,
    "missing_semicolon": lambda t: ";" not in t,
    "missing_normal_behavior": lambda t: "normal_behavior" not in t,
    "missing_loop_invariant": lambda t: "loop_invariant" not in t,
    "always": lambda t: True,
}

UNMATCHED_LABEL = "Post (unmatched)"


@dataclass(frozen=True)
class MockRule:
    match: str  # "exact" | "substring" | "predicate"
    value: str
    verdict: Verdict

    def __post_init__(self) -> None:
        if self.match not in ("exact", "substring", "predicate"):
            raise ValueError(f"unknown rule match type {self.match!r}")
        if self.match == "predicate" and self.value not in PREDICATES:
            raise ValueError(f"unknown predicate {self.value!r}; known: {sorted(PREDICATES)}")

    def matches(self, jml_text: str) -> bool:
        if self.match == "exact":
            return jml_text.strip() == self.value.strip()
        if self.match == "substring":
            return self.value in jml_text
        return PREDICATES[self.value](jml_text)

    def to_dict(self) -> dict:
        return {"match": self.match, "value": self.value, "verdict": self.verdict.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "MockRule":
        return cls(d["match"], d["value"], Verdict.from_dict(d["verdict"]))


def mock_verify(
    rules: list[MockRule], draft_source: str, candidate: Optional[AnnotationCandidate]
) -> Verdict:
    if not rules:
        raise ValueError("mock verifier needs at least one rule")
    text = candidate.jml_text if candidate is not None else draft_source
    for rule in rules:
        if rule.matches(text):
            return rule.verdict
    return Verdict.semantic_error([UNMATCHED_LABEL])


@dataclass
class MockVerifier:
    rules: list[MockRule] = field(default_factory=list)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "MockVerifier":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls([MockRule.from_dict(d) for d in data])

    def dump(self, path: Union[str, Path]) -> None:
        Path(path).write_text(json.dumps([r.to_dict() for r in self.rules], indent=2) + "\n",
                              encoding="utf-8")

    def verify(
        self, draft_source: str, target: str, candidate: Optional[AnnotationCandidate] = None
    ) -> Verdict:
        return mock_verify(self.rules, draft_source, candidate)
