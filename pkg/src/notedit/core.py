"""Domain types and elementary text utilities shared by every other module.

An edit is a short declarative sentence. Applied edits live in a notebook,
an append-only sequence of notes, one note per edit. Answers produced by a
reader are classified as grounded text or as an irrelevance signal.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Iterator


class NoteditError(Exception):
    """Base class for all errors raised by this package."""


class EmptyStatementError(NoteditError):
    """An edit statement is empty after whitespace trimming."""


class DuplicateEditIdError(NoteditError):
    """An edit id is already present in the notebook."""


_FNV64_OFFSET = 0xCBF29CE484222325
_FNV64_PRIME = 0x100000001B3
_FNV64_MASK = 0xFFFFFFFFFFFFFFFF


def fnv1a_64(data: str | bytes) -> int:
    """Stable 64-bit FNV-1a hash, identical across runs and platforms."""
    if isinstance(data, str):
        data = data.encode("utf-8")
    value = _FNV64_OFFSET
    for byte in data:
        value ^= byte
        value = (value * _FNV64_PRIME) & _FNV64_MASK
    return value


class TaskKind(Enum):
    """The two supported task families."""

    QUESTION_ANSWERING = "qa"
    FACT_CHECKING = "fc"


class AnswerKind(Enum):
    GROUNDED = "grounded"
    IRRELEVANT = "irrelevant"


def normalize_answer(text: str) -> str:
    """Canonicalize a raw answer for exact-match comparison.

    Keeps only the first line, lowercases it, collapses whitespace runs to
    single spaces, and drops trailing periods. Normalization is idempotent,
    so trailing "word ." and "word." both settle on "word".
    """
    lines = text.splitlines()
    first = lines[0] if lines else ""
    collapsed = " ".join(first.lower().split())
    return collapsed.rstrip(" .")


def exact_match(a: str, b: str) -> bool:
    """True when the two answers agree after normalization."""
    return normalize_answer(a) == normalize_answer(b)


@dataclass(frozen=True)
class Edit:
    """One edit: a declarative statement the edited model must honor."""

    id: str
    statement: str
    task: TaskKind = TaskKind.QUESTION_ANSWERING

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("edit id must be non-empty")
        if not self.statement.strip():
            raise EmptyStatementError(f"edit {self.id!r} has an empty statement")


@dataclass(frozen=True)
class InScope:
    """Scope marker for examples implied by one or more edits."""

    edit_ids: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.edit_ids:
            raise ValueError("in-scope examples must reference at least one edit id")


@dataclass(frozen=True)
class OutOfScope:
    """Scope marker for examples whose behavior must not change.

    The optional tag records why the example is hard, e.g. "neighbor_subject"
    (same relation, different subject) or "same_subject" (same subject,
    unrelated relation).
    """

    tag: str | None = None


Scope = InScope | OutOfScope


@dataclass(frozen=True)
class ScopedExample:
    """An input/expected pair labeled as inside or outside an edit scope."""

    input: str
    expected: str
    scope: Scope

    def __post_init__(self) -> None:
        if not self.input.strip():
            raise ValueError("example input must be non-empty")
        if not self.expected.strip():
            raise ValueError("example expected answer must be non-empty")


@dataclass(frozen=True)
class EditRecord:
    """One edit plus its labeled in-scope and out-of-scope examples."""

    edit: Edit
    in_scope: tuple[ScopedExample, ...] = ()
    out_of_scope: tuple[ScopedExample, ...] = ()

    def __post_init__(self) -> None:
        for example in self.in_scope:
            if not isinstance(example.scope, InScope):
                raise ValueError(f"record {self.edit.id!r}: in_scope example lacks an InScope scope")
            if self.edit.id not in example.scope.edit_ids:
                raise ValueError(
                    f"record {self.edit.id!r}: in_scope example does not reference the record's edit"
                )
        for example in self.out_of_scope:
            if not isinstance(example.scope, OutOfScope):
                raise ValueError(f"record {self.edit.id!r}: out_of_scope example carries an InScope scope")


@dataclass(frozen=True)
class Note:
    """One notebook entry: the text of an applied edit."""

    edit_id: str
    text: str
    seq: int


class Notebook:
    """Ordered, append-only collection of notes.

    Existing notes are never reordered or mutated; `seq` values are the
    contiguous range 0..n-1. Appends must be serialized by the caller
    (single writer); reads of a snapshot are safe from any thread.
    """

    __slots__ = ("_notes", "_seq_by_edit_id")

    def __init__(self, notes: Iterable[Note] = ()) -> None:
        self._notes: list[Note] = []
        self._seq_by_edit_id: dict[str, int] = {}
        for note in notes:
            if note.seq != len(self._notes):
                raise ValueError(f"non-contiguous seq {note.seq}, expected {len(self._notes)}")
            if note.edit_id in self._seq_by_edit_id:
                raise DuplicateEditIdError(f"duplicate edit id {note.edit_id!r}")
            self._notes.append(note)
            self._seq_by_edit_id[note.edit_id] = note.seq

    @property
    def notes(self) -> tuple[Note, ...]:
        return tuple(self._notes)

    def __len__(self) -> int:
        return len(self._notes)

    def __iter__(self) -> Iterator[Note]:
        return iter(tuple(self._notes))

    def __contains__(self, edit_id: str) -> bool:
        return edit_id in self._seq_by_edit_id

    def note_at(self, seq: int) -> Note:
        return self._notes[seq]

    def seq_of(self, edit_id: str) -> int:
        return self._seq_by_edit_id[edit_id]

    def append(self, edit: Edit) -> Note:
        """Add one note for `edit` and return it.

        Raises EmptyStatementError for blank statements and
        DuplicateEditIdError when the id was already appended; the paper
        trail stays intact either way.
        """
        statement = edit.statement.strip()
        if not statement:
            raise EmptyStatementError(f"edit {edit.id!r} has an empty statement")
        if edit.id in self._seq_by_edit_id:
            raise DuplicateEditIdError(f"duplicate edit id {edit.id!r}")
        note = Note(edit_id=edit.id, text=edit.statement, seq=len(self._notes))
        self._notes.append(note)
        self._seq_by_edit_id[edit.id] = note.seq
        return note


def append_edit(notebook: Notebook, edit: Edit) -> Notebook:
    """Append one edit to the notebook and return the notebook."""
    notebook.append(edit)
    return notebook


@dataclass(frozen=True)
class Answer:
    """Reader output: the raw text, its normalized form, and its kind."""

    raw: str
    normalized: str
    kind: AnswerKind

    @property
    def is_irrelevant(self) -> bool:
        return self.kind is AnswerKind.IRRELEVANT
