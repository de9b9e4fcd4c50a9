"""Durable persistence: the notebook file and the base-prediction cache.

Notebook files are JSON Lines, one {"seq", "edit_id", "text"} object per
line in seq order, UTF-8 with LF newlines. Appends are flushed per note so
every intermediate notebook state survives a crash; a file truncated
mid-line loads all complete lines and reports the partial tail instead of
failing.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from .core import Note, Notebook, NoteditError, fnv1a_64


class CorruptLineError(NoteditError):
    """A non-final notebook line cannot be parsed."""

    def __init__(self, line_no: int, reason: str) -> None:
        super().__init__(f"corrupt notebook line {line_no}: {reason}")
        self.line_no = line_no
        self.reason = reason


class SeqGapError(NoteditError):
    """Notebook seq values are not the contiguous range 0..n-1."""

    def __init__(self, expected: int, found: int) -> None:
        super().__init__(f"seq gap: expected {expected}, found {found}")
        self.expected = expected
        self.found = found


@dataclass(frozen=True)
class CorruptLine:
    """Report entry for an unparseable trailing line."""

    line_no: int
    reason: str


def _note_line(note: Note) -> str:
    return json.dumps(
        {"seq": note.seq, "edit_id": note.edit_id, "text": note.text}, ensure_ascii=False, sort_keys=True
    )


def save_notebook(notebook: Notebook, path: str | Path) -> None:
    """Write the whole notebook, one line per note, flushed before close."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as handle:
        for note in notebook:
            handle.write(_note_line(note) + "\n")
        handle.flush()


def append_note(path: str | Path, note: Note) -> None:
    """Append one note line and flush immediately."""
    with Path(path).open("a", encoding="utf-8", newline="\n") as handle:
        handle.write(_note_line(note) + "\n")
        handle.flush()


def _parse_note_line(line: str, line_no: int) -> Note:
    try:
        payload = json.loads(line)
    except json.JSONDecodeError as exc:
        raise CorruptLineError(line_no, f"invalid JSON: {exc.msg}") from exc
    if not isinstance(payload, dict):
        raise CorruptLineError(line_no, "line is not a JSON object")
    try:
        seq, edit_id, text = payload["seq"], payload["edit_id"], payload["text"]
    except KeyError as exc:
        raise CorruptLineError(line_no, f"missing field {exc.args[0]!r}") from exc
    if not isinstance(seq, int) or not isinstance(edit_id, str) or not isinstance(text, str):
        raise CorruptLineError(line_no, "field has the wrong type")
    return Note(edit_id=edit_id, text=text, seq=seq)


def load_notebook(path: str | Path) -> tuple[Notebook, list[CorruptLine]]:
    """Load a notebook file, tolerating one unparseable final line.

    A corrupt line followed by further lines is not a crash artifact and
    raises CorruptLineError. Seq values must be contiguous from 0 or
    SeqGapError is raised. An empty or all-blank file yields an empty
    notebook.
    """
    lines = Path(path).read_text(encoding="utf-8").split("\n")
    rows = [(i + 1, line) for i, line in enumerate(lines) if line.strip()]
    notes: list[Note] = []
    issues: list[CorruptLine] = []
    for position, (line_no, line) in enumerate(rows):
        try:
            note = _parse_note_line(line, line_no)
        except CorruptLineError as exc:
            if position == len(rows) - 1:
                issues.append(CorruptLine(line_no=exc.line_no, reason=exc.reason))
                break
            raise
        if note.seq != len(notes):
            raise SeqGapError(expected=len(notes), found=note.seq)
        notes.append(note)
    return Notebook(notes), issues


class PredictionCache:
    """Insert-only memo of reader answers, keyed by reader id and prompt.

    Prompts are keyed by a 64-bit digest; the full prompt is stored with
    each entry and verified on lookup, so digest collisions degrade to
    misses on the wrong prompt rather than wrong answers. When a path is
    given, every insert appends one JSONL line and the file is replayed on
    construction. Safe for concurrent get/put.
    """

    def __init__(
        self,
        path: str | Path | None = None,
        *,
        digest_fn: Callable[[str], int] = fnv1a_64,
    ) -> None:
        self._path = Path(path) if path is not None else None
        self._digest_fn = digest_fn
        self._entries: dict[tuple[str, int], list[tuple[str, str]]] = {}
        self._lock = threading.Lock()
        if self._path is not None and self._path.exists():
            self._replay()

    def _replay(self) -> None:
        assert self._path is not None
        for line in self._path.read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            row = json.loads(line)
            key = (row["reader_id"], int(row["digest"], 16))
            self._entries.setdefault(key, []).append((row["prompt"], row["answer"]))

    def __len__(self) -> int:
        return sum(len(bucket) for bucket in self._entries.values())

    def get(self, reader_id: str, prompt: str) -> str | None:
        key = (reader_id, self._digest_fn(prompt))
        with self._lock:
            for stored_prompt, answer in self._entries.get(key, ()):
                if stored_prompt == prompt:
                    return answer
        return None

    def put(self, reader_id: str, prompt: str, answer: str) -> None:
        digest = self._digest_fn(prompt)
        key = (reader_id, digest)
        with self._lock:
            bucket = self._entries.setdefault(key, [])
            for stored_prompt, _ in bucket:
                if stored_prompt == prompt:
                    return  # Insert-only: the first answer for a prompt stands.
            bucket.append((prompt, answer))
            if self._path is not None:
                row = {
                    "answer": answer,
                    "digest": f"{digest:016x}",
                    "prompt": prompt,
                    "reader_id": reader_id,
                }
                with self._path.open("a", encoding="utf-8", newline="\n") as handle:
                    handle.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")
                    handle.flush()
