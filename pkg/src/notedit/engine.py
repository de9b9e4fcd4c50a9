"""The edited model: sequential edit application and query strategies.

A query against the edited model runs in two steps. The top-k notes are
retrieved and the reader answers a with-context prompt over them; if that
answer is the irrelevance marker, the reader is asked again without context
and that parametric answer becomes final. The one-step variant skips the
fallback (the marker stands as the final answer), and the unedited variant
never sees the notebook at all.
"""

from __future__ import annotations

from dataclasses import dataclass

from .core import Answer, AnswerKind, Edit, Notebook, TaskKind, append_edit
from .prompts import TemplateKind, classify_answer, irrelevance_marker, render, render_context
from .reader import Reader, ReaderRequest
from .retriever import DEFAULT_TOP_K, HashingEmbedder, NotebookIndex, RetrievalResult

DEFAULT_MAX_TOKENS_QA = 20
DEFAULT_MAX_TOKENS_FC = 10


@dataclass(frozen=True)
class EditorConfig:
    """Knobs for the edited model."""

    k: int = DEFAULT_TOP_K
    task: TaskKind = TaskKind.QUESTION_ANSWERING
    max_tokens_qa: int = DEFAULT_MAX_TOKENS_QA
    max_tokens_fc: int = DEFAULT_MAX_TOKENS_FC

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")

    @property
    def max_tokens(self) -> int:
        if self.task is TaskKind.QUESTION_ANSWERING:
            return self.max_tokens_qa
        return self.max_tokens_fc


@dataclass(frozen=True)
class QueryTrace:
    """Everything one two-step query did.

    `fell_back` is true exactly when the with-context answer was the
    irrelevance marker; in that case `final` came from the no-context
    prompt.
    """

    input: str
    retrieved: RetrievalResult
    with_context_answer: Answer
    fell_back: bool
    final: Answer


def apply_edits_sequentially(notebook: Notebook, edits: list[Edit] | tuple[Edit, ...]) -> Notebook:
    """Fold the edits into the notebook one by one, in order.

    Not transactional: if an append fails partway, the earlier appends
    stand, mirroring deployments where every intermediate edited model has
    already been served.
    """
    for edit in edits:
        append_edit(notebook, edit)
    return notebook


def _with_context_kind(task: TaskKind) -> TemplateKind:
    if task is TaskKind.QUESTION_ANSWERING:
        return TemplateKind.MRC_WITH_CONTEXT
    return TemplateKind.FC_WITH_CONTEXT


def _no_context_kind(task: TaskKind) -> TemplateKind:
    if task is TaskKind.QUESTION_ANSWERING:
        return TemplateKind.QA_NO_CONTEXT
    return TemplateKind.FC_NO_CONTEXT


def _retrieve(
    notebook: Notebook,
    config: EditorConfig,
    input_text: str,
    index: NotebookIndex | None,
    embedder: HashingEmbedder | None,
) -> RetrievalResult:
    if index is None:
        index = NotebookIndex(embedder)
    index.sync(notebook)
    return index.top_k(input_text, config.k)


def _ask(reader: Reader, prompt: str, config: EditorConfig) -> Answer:
    raw = reader.complete(ReaderRequest(prompt=prompt, max_tokens=config.max_tokens))
    return classify_answer(raw, config.task)


def unedited_query(reader: Reader, config: EditorConfig, input_text: str) -> Answer:
    """Answer from parametric knowledge only; this is the base model."""
    if not input_text.strip():
        raise ValueError("query input must be non-empty")
    prompt = render(_no_context_kind(config.task), "", input_text)
    return _ask(reader, prompt, config)


def two_step_query(
    notebook: Notebook,
    reader: Reader,
    config: EditorConfig,
    input_text: str,
    *,
    index: NotebookIndex | None = None,
    embedder: HashingEmbedder | None = None,
) -> QueryTrace:
    """Grounded answer over retrieved notes, with parametric fallback.

    Issues at most two reader calls. An empty notebook skips retrieval and
    the with-context call entirely and goes straight to the fallback.
    """
    if not input_text.strip():
        raise ValueError("query input must be non-empty")
    if len(notebook) == 0:
        marker = irrelevance_marker(config.task)
        with_context = classify_answer(marker, config.task)
        retrieved = RetrievalResult(items=(), k=config.k)
    else:
        retrieved = _retrieve(notebook, config, input_text, index, embedder)
        ranked_notes = [notebook.note_at(seq) for seq in retrieved.seqs]
        context = render_context(ranked_notes)
        prompt = render(_with_context_kind(config.task), context, input_text)
        with_context = _ask(reader, prompt, config)
    fell_back = with_context.kind is AnswerKind.IRRELEVANT
    if fell_back:
        final = _ask(reader, render(_no_context_kind(config.task), "", input_text), config)
    else:
        final = with_context
    return QueryTrace(
        input=input_text,
        retrieved=retrieved,
        with_context_answer=with_context,
        fell_back=fell_back,
        final=final,
    )


def one_step_mrc_query(
    notebook: Notebook,
    reader: Reader,
    config: EditorConfig,
    input_text: str,
    *,
    index: NotebookIndex | None = None,
    embedder: HashingEmbedder | None = None,
) -> Answer:
    """Single with-context call; the marker, if emitted, is the final answer."""
    if not input_text.strip():
        raise ValueError("query input must be non-empty")
    if len(notebook) == 0:
        context = ""
    else:
        retrieved = _retrieve(notebook, config, input_text, index, embedder)
        context = render_context([notebook.note_at(seq) for seq in retrieved.seqs])
    prompt = render(_with_context_kind(config.task), context, input_text)
    return _ask(reader, prompt, config)
