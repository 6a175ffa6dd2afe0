"""Partially annotated Java+JML sources: gap location, splicing, answer extraction.

No Java grammar lives here. Method declarations are found with a line regex
and method bodies by brace counting; the verifier is the judge of everything
else.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from typing import Optional

INVARIANT_MARKER = "//Add invariant here"

JML_OPENERS = ("/*@", "//@")

_MODIFIERS = (
    "public|private|protected|static|final|synchronized|abstract|native|"
    "strictfp|default"
)
_NOT_A_TYPE = {
    "return", "new", "else", "if", "while", "for", "switch", "catch", "do",
    "throw", "case", "assert", "synchronized", "try",
}
_DECL_RE = re.compile(
    rf"^(?P<indent>[ \t]*)(?:(?:{_MODIFIERS})\s+)*(?:<[^>]*>\s+)?"
    r"(?P<type>[A-Za-z_$][\w$<>\[\],.?]*)\s+(?P<name>[A-Za-z_$][\w$]*)\s*\("
)
_FENCE_RE = re.compile(r"```[^\n`]*\n(.*?)```", re.DOTALL)


class GapKind(str, enum.Enum):
    INVARIANT = "invariant"
    CONTRACT = "contract"


class SourceError(Exception):
    pass


class NoGapFound(SourceError):
    pass


class MultipleGaps(SourceError):
    pass


class KindMismatch(SourceError):
    pass


class ExtractionError(SourceError):
    pass


class NoFencedBlock(ExtractionError):
    pass


class EmptyBlock(ExtractionError):
    pass


class NotJmlBlock(ExtractionError):
    """The last fenced block does not start with a JML comment opener."""


@dataclass(frozen=True)
class MethodDecl:
    name: str
    line: int
    indent: str


@dataclass(frozen=True)
class GapSite:
    kind: GapKind
    line: int
    method: str
    calling_method: Optional[str] = None

    def __post_init__(self) -> None:
        if self.kind is GapKind.CONTRACT and not self.calling_method:
            raise ValueError("contract gaps need a calling method")


@dataclass(frozen=True)
class AnnotationCandidate:
    jml_text: str
    kind: GapKind

    def __post_init__(self) -> None:
        if not self.jml_text.strip():
            raise ValueError("empty annotation")
        if not self.jml_text.lstrip().startswith(JML_OPENERS):
            raise ValueError(f"annotation does not open a JML comment: {self.jml_text[:20]!r}")


@dataclass(frozen=True)
class AnnotatedDocument:
    text: str
    gap: GapSite

    @property
    def lines(self) -> list[str]:
        return self.text.splitlines(keepends=True)

    @property
    def kind(self) -> GapKind:
        return self.gap.kind


def method_declarations(text: str) -> list[MethodDecl]:
    decls = []
    for i, line in enumerate(text.splitlines()):
        m = _DECL_RE.match(line)
        if m and m.group("type") not in _NOT_A_TYPE and m.group("name") not in _NOT_A_TYPE:
            decls.append(MethodDecl(m.group("name"), i, m.group("indent")))
    return decls


def _body_span(lines: list[str], start: int) -> tuple[int, int]:
    """Line range [start, end] of the method declared on ``start``, by brace counting."""
    depth = 0
    opened = False
    for i in range(start, len(lines)):
        code = re.sub(r"//.*", "", lines[i])
        code = re.sub(r'"(?:\\.|[^"\\])*"', '""', code)
        for ch in code:
            if ch == "{":
                depth += 1
                opened = True
            elif ch == "}":
                depth -= 1
        if opened and depth <= 0:
            return start, i
        if not opened and code.rstrip().endswith(";"):
            return start, i  # abstract / interface declaration
    return start, len(lines) - 1


def _has_jml_above(lines: list[str], line: int) -> bool:
    i = line - 1
    while i >= 0 and not lines[i].strip():
        i -= 1
    if i < 0:
        return False
    s = lines[i].strip()
    return s.startswith("//@") or s.endswith("*/") or s.startswith("@")


def _find_caller(text: str, callee: str, decls: list[MethodDecl]) -> Optional[str]:
    lines = text.splitlines()
    call = re.compile(rf"(?<![\w$]){re.escape(callee)}\s*\(")
    callers = []
    for d in decls:
        if d.name == callee:
            continue
        start, end = _body_span(lines, d.line)
        body = "\n".join(lines[start:end + 1])
        # skip the declaration's own name before searching for calls
        body = body[body.index("(") + 1:] if "(" in body else body
        if call.search(body):
            callers.append(d)
    if not callers:
        return None
    annotated = [d for d in callers if _has_jml_above(lines, d.line)]
    return (annotated or callers)[0].name


def parse_document(
    source_text: str,
    gap_hint: Optional[str] = None,
    calling_method: Optional[str] = None,
) -> AnnotatedDocument:
    """Locate the single specification gap in ``source_text``.

    An invariant gap is the line holding the marker comment. A contract gap
    needs ``gap_hint`` (the un-annotated callee); the calling method is taken
    from ``calling_method`` or inferred as the first (preferably annotated)
    method whose body calls the callee.
    """
    if not source_text:
        raise ValueError("empty source text")
    lines = source_text.splitlines()
    marker_lines = [i for i, line in enumerate(lines) if INVARIANT_MARKER in line]
    if len(marker_lines) > 1:
        raise MultipleGaps(f"invariant marker found on lines {[i + 1 for i in marker_lines]}")
    decls = method_declarations(source_text)

    if marker_lines:
        (line,) = marker_lines
        if lines[line].strip() != INVARIANT_MARKER:
            raise NoGapFound(f"line {line + 1}: the invariant marker must stand on its own line")
        enclosing = [d for d in decls if d.line < line and _body_span(lines, d.line)[1] >= line]
        if not enclosing:
            raise NoGapFound(f"line {line + 1}: marker is not inside a method")
        return AnnotatedDocument(source_text, GapSite(GapKind.INVARIANT, line, enclosing[-1].name))

    if gap_hint is None:
        raise NoGapFound("no invariant marker and no callee method named")
    matches = [d for d in decls if d.name == gap_hint]
    if not matches:
        raise NoGapFound(f"no declaration of method {gap_hint!r}")
    if len(matches) > 1:
        raise MultipleGaps(f"method {gap_hint!r} is declared {len(matches)} times")
    caller = calling_method or _find_caller(source_text, gap_hint, decls)
    if caller is None:
        raise NoGapFound(f"no method calls {gap_hint!r}")
    return AnnotatedDocument(
        source_text, GapSite(GapKind.CONTRACT, matches[0].line, gap_hint, caller)
    )


def _indent_of(line: str) -> str:
    return line[: len(line) - len(line.lstrip(" \t"))]


def _candidate_lines(doc: AnnotatedDocument, cand: AnnotationCandidate) -> list[str]:
    anchor = doc.lines[doc.gap.line]
    indent = _indent_of(anchor)
    newline = "\r\n" if anchor.endswith("\r\n") else "\n"
    return [indent + part + newline for part in cand.jml_text.splitlines()]


def splice(doc: AnnotatedDocument, cand: AnnotationCandidate) -> str:
    """Return the draft source with ``cand`` placed into the gap."""
    if cand.kind is not doc.gap.kind:
        raise KindMismatch(f"{cand.kind.value} candidate for a {doc.gap.kind.value} gap")
    lines = doc.lines
    new = _candidate_lines(doc, cand)
    at = doc.gap.line
    if doc.gap.kind is GapKind.INVARIANT:
        if not lines[at].endswith("\n"):
            new[-1] = new[-1].rstrip("\r\n")
        return "".join(lines[:at] + new + lines[at + 1:])
    return "".join(lines[:at] + new + lines[at:])


def unsplice(doc: AnnotatedDocument, cand: AnnotationCandidate, draft: str) -> str:
    """Inverse of :func:`splice`: remove the candidate lines and restore the gap."""
    lines = draft.splitlines(keepends=True)
    n = len(cand.jml_text.splitlines())
    at = doc.gap.line
    if doc.gap.kind is GapKind.INVARIANT:
        return "".join(lines[:at] + [doc.lines[at]] + lines[at + n:])
    return "".join(lines[:at] + lines[at + n:])


def extract_annotation(answer: str, kind: GapKind) -> AnnotationCandidate:
    blocks = _FENCE_RE.findall(answer)
    if not blocks:
        raise NoFencedBlock("answer contains no fenced code block")
    body = blocks[-1].strip()
    if not body:
        raise EmptyBlock("last fenced block is empty")
    if not body.startswith(JML_OPENERS):
        raise NotJmlBlock(f"last fenced block does not start with {' or '.join(JML_OPENERS)}")
    return AnnotationCandidate(body, kind)


def validate_shape(cand: AnnotationCandidate) -> list[str]:
    """Advisory checks only; an empty list means the candidate looks fine."""
    warnings = []
    if cand.kind is GapKind.CONTRACT and "normal_behavior" not in cand.jml_text:
        warnings.append("missing normal_behavior")
    if cand.kind is GapKind.INVARIANT and "loop_invariant" not in cand.jml_text:
        warnings.append("missing loop_invariant")
    return warnings
