"""Prompt templates and irrelevance detection.

The rendered strings below are the normative wire payloads sent to any
reader backend; they must stay byte-identical across runs. A reader signals
that no note is relevant by emitting the task's irrelevance marker:
"unanswerable" for question answering, "It's impossible to say" for
fact checking.
"""

from __future__ import annotations

import re
from enum import Enum
from typing import Iterable

from .core import Answer, AnswerKind, Note, NoteditError, TaskKind, normalize_answer


class MissingContextError(NoteditError):
    """A with-context template was rendered without a context argument."""


class UnexpectedContextError(NoteditError):
    """A no-context template was rendered with a non-empty context."""


class TemplateKind(Enum):
    MRC_WITH_CONTEXT = "mrc_with_context"
    QA_NO_CONTEXT = "qa_no_context"
    FC_WITH_CONTEXT = "fc_with_context"
    FC_NO_CONTEXT = "fc_no_context"
    BOOLEAN_PROBE = "boolean_probe"


QA_IRRELEVANCE_MARKER = "unanswerable"
FC_IRRELEVANCE_MARKER = "It's impossible to say"

MRC_WITH_CONTEXT_TEMPLATE = (
    'Read this and answer the question. If the question is unanswerable, '
    'say "unanswerable".\n\n{context}\n\n{question}'
)
QA_NO_CONTEXT_TEMPLATE = "Please answer this question: {question}"
FC_WITH_CONTEXT_TEMPLATE = (
    '{context}\n\nBased on the paragraph, can we conclude that "{hypothesis}"?'
    "\n\nOPTIONS:\n- Yes\n- It's impossible to say\n- No"
)
FC_NO_CONTEXT_TEMPLATE = "Is it true that {hypothesis}?"
BOOLEAN_PROBE_TEMPLATE = "Is it true that {statement}?"

_NO_CONTEXT_KINDS = frozenset(
    {TemplateKind.QA_NO_CONTEXT, TemplateKind.FC_NO_CONTEXT, TemplateKind.BOOLEAN_PROBE}
)

_YES_RE = re.compile(r"\byes\b")
_NO_RE = re.compile(r"\bno\b")


class FcVerdict(Enum):
    SUPPORTED = "supported"
    REFUTED = "refuted"
    IRRELEVANT = "irrelevant"


def irrelevance_marker(task: TaskKind) -> str:
    if task is TaskKind.QUESTION_ANSWERING:
        return QA_IRRELEVANCE_MARKER
    return FC_IRRELEVANCE_MARKER


def render_context(notes: Iterable[Note]) -> str:
    """Join note texts with single newlines, in the order supplied."""
    return "\n".join(note.text for note in notes)


def render(kind: TemplateKind, context: str | None, input_text: str) -> str:
    """Render one prompt, byte-exact.

    With-context kinds accept an empty context (an empty notebook still
    produces a valid prompt) but reject `None`; no-context kinds reject any
    non-empty context.
    """
    if kind in _NO_CONTEXT_KINDS:
        if context:
            raise UnexpectedContextError(f"{kind.value} takes no context")
    elif context is None:
        raise MissingContextError(f"{kind.value} requires a context string")

    if kind is TemplateKind.MRC_WITH_CONTEXT:
        return MRC_WITH_CONTEXT_TEMPLATE.format(context=context, question=input_text)
    if kind is TemplateKind.QA_NO_CONTEXT:
        return QA_NO_CONTEXT_TEMPLATE.format(question=input_text)
    if kind is TemplateKind.FC_WITH_CONTEXT:
        return FC_WITH_CONTEXT_TEMPLATE.format(context=context, hypothesis=input_text)
    if kind is TemplateKind.FC_NO_CONTEXT:
        return FC_NO_CONTEXT_TEMPLATE.format(hypothesis=input_text)
    return BOOLEAN_PROBE_TEMPLATE.format(statement=input_text)


def detect_irrelevance(raw: str, task: TaskKind) -> bool:
    """True when the normalized first line of `raw` contains the task marker.

    Containment rather than equality: real readers append punctuation or
    echo part of the instruction around the marker.
    """
    return irrelevance_marker(task).lower() in normalize_answer(raw)


def classify_answer(raw: str, task: TaskKind) -> Answer:
    """Wrap raw reader output as an Answer, flagging irrelevance."""
    kind = AnswerKind.IRRELEVANT if detect_irrelevance(raw, task) else AnswerKind.GROUNDED
    return Answer(raw=raw, normalized=normalize_answer(raw), kind=kind)


def fc_verdict(raw: str) -> FcVerdict | None:
    """Map a fact-checking answer to a verdict.

    The marker is tested first; "yes" and "no" are matched as whole words so
    that e.g. "notably" does not read as a refutation. Returns None when the
    answer matches none of the three options.
    """
    line = normalize_answer(raw)
    if FC_IRRELEVANCE_MARKER.lower() in line:
        return FcVerdict.IRRELEVANT
    if _YES_RE.search(line):
        return FcVerdict.SUPPORTED
    if _NO_RE.search(line):
        return FcVerdict.REFUTED
    return None
