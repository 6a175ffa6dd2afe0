from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Optional

from specloop.source import AnnotatedDocument, GapKind, parse_document


@dataclass(frozen=True)
class SpecTask:
    """One benchmark instance: a source file with a single annotation gap.

    ``target_method`` is the method whose contract must verify. For contract
    gaps it is the calling method; for invariant gaps it defaults to the
    method enclosing the marker.
    """

    id: str
    source_path: Optional[Path]
    kind: GapKind
    gap_hint: Optional[str] = None
    target_method: Optional[str] = None
    tags: tuple[str, ...] = ()
    source_text: Optional[str] = field(default=None, repr=False, compare=False)

    @classmethod
    def from_text(cls, id: str, text: str, kind: GapKind, gap_hint: Optional[str] = None,
                  target_method: Optional[str] = None, tags=()) -> "SpecTask":
        return cls(id, None, GapKind(kind), gap_hint, target_method, tuple(tags), text)

    @cached_property
    def text(self) -> str:
        if self.source_text is not None:
            return self.source_text
        if self.source_path is None:
            raise ValueError(f"task {self.id} has neither a source path nor source text")
        return Path(self.source_path).read_text(encoding="utf-8")

    @cached_property
    def document(self) -> AnnotatedDocument:
        calling = self.target_method if self.kind is GapKind.CONTRACT else None
        doc = parse_document(self.text, self.gap_hint, calling_method=calling)
        if doc.gap.kind is not self.kind:
            raise ValueError(f"task {self.id}: declared {self.kind.value} but found a {doc.gap.kind.value} gap")
        return doc

    @property
    def target(self) -> str:
        if self.target_method:
            return self.target_method
        gap = self.document.gap
        return gap.calling_method if gap.kind is GapKind.CONTRACT else gap.method

    def to_dict(self, relative_to: Optional[Path] = None) -> dict:
        path = self.source_path
        if path is not None and relative_to is not None:
            try:
                path = Path(path).resolve().relative_to(Path(relative_to).resolve())
            except ValueError:
                pass
        return {
            "id": self.id,
            "source_path": str(path) if path is not None else None,
            "kind": self.kind.value,
            "gap_hint": self.gap_hint,
            "target_method": self.target_method,
            "tags": list(self.tags),
        }
