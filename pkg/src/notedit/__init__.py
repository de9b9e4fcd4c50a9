"""Black-box model editing through a notebook of natural-language notes.

Edits are stored as notes, the most relevant notes are retrieved per query,
and a pluggable reader answers grounded on them, falling back to its own
parametric knowledge when it signals that no note is relevant.
"""

from .core import (
    Answer,
    AnswerKind,
    DuplicateEditIdError,
    Edit,
    EditRecord,
    EmptyStatementError,
    InScope,
    Note,
    Notebook,
    NoteditError,
    OutOfScope,
    ScopedExample,
    TaskKind,
    append_edit,
    exact_match,
    normalize_answer,
)
from .datakit import boolean_probe, filter_in_scope, filter_out_of_scope, generate_world, load_dataset, save_dataset
from .engine import (
    EditorConfig,
    QueryTrace,
    apply_edits_sequentially,
    one_step_mrc_query,
    two_step_query,
    unedited_query,
)
from .evaluation import (
    MetricsReport,
    behavior_preservation,
    edit_success,
    evaluate,
    harmonic_mean,
    run_evaluation,
)
from .prompts import TemplateKind, detect_irrelevance, irrelevance_marker, render, render_context
from .reader import FactTriple, HttpReader, MockReader, MockWorld, ReaderRequest
from .retriever import (
    Embedding,
    HashingEmbedder,
    NotebookIndex,
    RetrievalResult,
    cosine,
    embed_lexical,
    recall_at_k,
    top_k,
)
from .store import PredictionCache, load_notebook, save_notebook

__version__ = "0.1.0"

__all__ = [
    "Answer",
    "AnswerKind",
    "DuplicateEditIdError",
    "Edit",
    "EditRecord",
    "EditorConfig",
    "Embedding",
    "EmptyStatementError",
    "FactTriple",
    "HashingEmbedder",
    "HttpReader",
    "InScope",
    "MetricsReport",
    "MockReader",
    "MockWorld",
    "Note",
    "Notebook",
    "NotebookIndex",
    "NoteditError",
    "OutOfScope",
    "PredictionCache",
    "QueryTrace",
    "ReaderRequest",
    "RetrievalResult",
    "ScopedExample",
    "TaskKind",
    "TemplateKind",
    "append_edit",
    "apply_edits_sequentially",
    "behavior_preservation",
    "boolean_probe",
    "cosine",
    "detect_irrelevance",
    "edit_success",
    "embed_lexical",
    "evaluate",
    "exact_match",
    "filter_in_scope",
    "filter_out_of_scope",
    "generate_world",
    "harmonic_mean",
    "irrelevance_marker",
    "load_dataset",
    "load_notebook",
    "normalize_answer",
    "one_step_mrc_query",
    "recall_at_k",
    "render",
    "render_context",
    "run_evaluation",
    "save_dataset",
    "save_notebook",
    "top_k",
    "two_step_query",
    "unedited_query",
]
