"""Prompt templates, rendering, conversations and token estimates."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Optional, Union

from specloop.source import AnnotatedDocument, GapKind
from specloop.verifier import Verdict, VerdictKind

TEMPLATE_DIR = Path(__file__).parent / "prompts"
TEMPLATE_NAMES = ("system", "initial", "feedback_syntax", "feedback_semantic")

FILE_PLACEHOLDER = "<partially annotated file>"
METHOD_PLACEHOLDER = "<method name>"
CALLED_PLACEHOLDER = "<called method>"
CALLING_PLACEHOLDER = "<calling method>"
PARSER_PLACEHOLDER = "<parser error>"
OPTIONS_PLACEHOLDER = "<list of possible options>"
LABELS_PLACEHOLDER = "<proof branch labels>"
VIOLATED_PLACEHOLDER = "<violated contract method>"
EXPECTING = "Was expecting one of:"


class PromptError(Exception):
    pass


class TemplateDrift(PromptError):
    pass


class MissingPlaceholderData(PromptError):
    pass


class UnsupportedVerdict(PromptError):
    pass


def count_tokens(text: str) -> int:
    """Tokenizer-free estimate: one token per started group of four UTF-8 bytes."""
    return math.ceil(len(text.encode("utf-8")) / 4)


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class PromptBundle:
    kind: GapKind
    system_text: str
    initial_text: str
    syntactic_feedback_template: str
    semantic_feedback_template: str

    def hashes(self) -> dict[str, str]:
        texts = (
            self.system_text,
            self.initial_text,
            self.syntactic_feedback_template,
            self.semantic_feedback_template,
        )
        return {f"{self.kind.value}/{name}.txt": sha256_text(t) for name, t in zip(TEMPLATE_NAMES, texts)}


def _expected_hashes(directory: Path) -> dict[str, str]:
    sums = directory / "SHA256SUMS"
    if not sums.exists():
        return {}
    out = {}
    for line in sums.read_text().splitlines():
        if line.strip():
            digest, name = line.split(maxsplit=1)
            out[name.strip()] = digest
    return out


@lru_cache(maxsize=None)
def _load_bundle(kind: GapKind, directory: Path) -> PromptBundle:
    texts = []
    for name in TEMPLATE_NAMES:
        path = directory / kind.value / f"{name}.txt"
        texts.append(path.read_bytes().decode("utf-8"))
    bundle = PromptBundle(kind, *texts)
    expected = _expected_hashes(directory)
    for name, digest in bundle.hashes().items():
        if name in expected and expected[name] != digest:
            raise TemplateDrift(f"{directory / name} does not match its recorded SHA-256")
    return bundle


def load_bundle(kind: Union[GapKind, str], directory: Optional[Path] = None) -> PromptBundle:
    return _load_bundle(GapKind(kind), Path(directory or TEMPLATE_DIR).resolve())


def template_hashes(directory: Optional[Path] = None) -> dict[str, str]:
    out: dict[str, str] = {}
    for kind in GapKind:
        out.update(load_bundle(kind, directory).hashes())
    return out


def render_system(kind: Union[GapKind, str], directory: Optional[Path] = None) -> str:
    return load_bundle(kind, directory).system_text


def render_initial(
    kind: Union[GapKind, str], doc: AnnotatedDocument, directory: Optional[Path] = None
) -> str:
    kind = GapKind(kind)
    if doc.gap.kind is not kind:
        raise MissingPlaceholderData(f"document has a {doc.gap.kind.value} gap, not {kind.value}")
    template = load_bundle(kind, directory).initial_text
    if kind is GapKind.INVARIANT:
        values = {METHOD_PLACEHOLDER: doc.gap.method}
    else:
        values = {CALLED_PLACEHOLDER: doc.gap.method, CALLING_PLACEHOLDER: doc.gap.calling_method}
    for placeholder, value in values.items():
        if not value:
            raise MissingPlaceholderData(f"no value for {placeholder}")
        template = template.replace(placeholder, value)
    # the source goes in last so placeholder-like text inside it survives
    return template.replace(FILE_PLACEHOLDER, doc.text)


def dedupe_labels(labels) -> list[str]:
    return list(dict.fromkeys(labels))


def render_feedback(
    kind: Union[GapKind, str],
    verdict: Verdict,
    violated_method: Optional[str] = None,
    directory: Optional[Path] = None,
) -> str:
    """Continue-the-conversation message for a failed candidate.

    ``violated_method`` fills the contract template's method slot; strategies
    pass the method whose contract the verifier was asked to prove.
    """
    kind = GapKind(kind)
    bundle = load_bundle(kind, directory)
    if verdict.kind is VerdictKind.SYNTAX_ERROR:
        message = verdict.parser_message
        text = bundle.syntactic_feedback_template
        if OPTIONS_PLACEHOLDER in text:
            head, sep, options = message.partition(EXPECTING)
            if sep:
                message = head.rstrip()
            text = text.replace(OPTIONS_PLACEHOLDER, options.strip())
        return text.replace(PARSER_PLACEHOLDER, message)
    if verdict.kind is VerdictKind.SEMANTIC_ERROR:
        text = bundle.semantic_feedback_template
        if VIOLATED_PLACEHOLDER in text:
            if not violated_method:
                raise MissingPlaceholderData("contract feedback needs the violated contract method")
            text = text.replace(VIOLATED_PLACEHOLDER, violated_method)
        return text.replace(LABELS_PLACEHOLDER, "\n".join(dedupe_labels(verdict.branch_labels)))
    raise UnsupportedVerdict(f"no feedback is defined for {verdict.kind.value}")


class Role:
    SYSTEM = "system"
    USER = "user"
    ASSISTANT = "assistant"


@dataclass(frozen=True)
class Message:
    role: str
    content: str
    tokens: int

    @classmethod
    def of(cls, role: str, content: str, tokens: Optional[int] = None) -> "Message":
        return cls(role, content, count_tokens(content) if tokens is None else tokens)

    def as_dict(self) -> dict[str, str]:
        return {"role": self.role, "content": self.content}


@dataclass
class Conversation:
    """System message, then strictly alternating user/assistant turns."""

    task_kind: GapKind
    messages: list[Message] = field(default_factory=list)

    @classmethod
    def start(cls, kind: GapKind, system: str, initial: str) -> "Conversation":
        return cls(kind, [Message.of(Role.SYSTEM, system), Message.of(Role.USER, initial)])

    @property
    def last(self) -> Message:
        return self.messages[-1]

    def last_user(self) -> Message:
        return next(m for m in reversed(self.messages) if m.role == Role.USER)

    def answers(self) -> list[Message]:
        return [m for m in self.messages if m.role == Role.ASSISTANT]

    def add_answer(self, content: str, tokens: Optional[int] = None) -> None:
        if self.last.role != Role.USER:
            raise PromptError("an answer must follow a user message")
        self.messages.append(Message.of(Role.ASSISTANT, content, tokens))

    def add_user(self, content: str) -> None:
        if self.last.role != Role.ASSISTANT:
            raise PromptError("a user message must follow an answer")
        self.messages.append(Message.of(Role.USER, content))

    def prompt_tokens(self) -> int:
        return sum(m.tokens for m in self.messages)

    def as_dicts(self) -> list[dict[str, str]]:
        return [m.as_dict() for m in self.messages]

    def __len__(self) -> int:
        return len(self.messages)
