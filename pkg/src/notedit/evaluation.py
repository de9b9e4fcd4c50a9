"""Editor scoring: edit success, behavior preservation, edit quality.

Edit success (ES) is exact-match accuracy pooled over all in-scope
examples. Behavior preservation (BP) is the fraction of out-of-scope
examples whose prediction matches the unedited base model's prediction
(cached, so the base pass runs once per dataset). Edit quality (EQ) is the
harmonic mean of the two. All three are percentages in [0, 100].

Reports carry full-precision values; displayed percentages are held at
hundredths and printed at one decimal, both rounded half-up.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from typing import Iterable, Literal, Sequence

from .core import (
    EditRecord,
    InScope,
    Notebook,
    NoteditError,
    OutOfScope,
    ScopedExample,
    TaskKind,
    exact_match,
)
from .engine import (
    EditorConfig,
    apply_edits_sequentially,
    one_step_mrc_query,
    two_step_query,
    unedited_query,
)
from .prompts import render, TemplateKind
from .reader import Reader, ReaderError
from .retriever import HashingEmbedder, NotebookIndex
from .store import PredictionCache

REPORT_VERSION = 1

Strategy = Literal["two_step", "one_step", "unedited"]
STRATEGIES: tuple[Strategy, ...] = ("two_step", "one_step", "unedited")

UNTAGGED = "untagged"


class OutOfRangeError(NoteditError):
    """A percentage argument fell outside [0, 100]."""


class NoInScopeExamplesError(NoteditError):
    """Edit success needs at least one in-scope example."""


class NoOutOfScopeExamplesError(NoteditError):
    """Behavior preservation needs at least one out-of-scope example."""


def harmonic_mean(a: float, b: float) -> float:
    """2ab / (a + b) over percentages; 0 when both are 0."""
    for value in (a, b):
        if not 0.0 <= value <= 100.0:
            raise OutOfRangeError(f"percentage out of range: {value}")
    if a + b == 0:
        return 0.0
    return 2.0 * a * b / (a + b)


def round_half_up(value: float, places: int = 1) -> Decimal:
    exponent = Decimal(1).scaleb(-places)
    return Decimal(str(value)).quantize(exponent, rounding=ROUND_HALF_UP)


def round_report(value: float) -> float:
    """One-decimal display value of a percentage.

    Percentages are carried at hundredths before the final one-decimal
    rounding, so a value like 96.8499741... reports as 96.9.
    """
    hundredths = round_half_up(value, places=2)
    return float(hundredths.quantize(Decimal("0.1"), rounding=ROUND_HALF_UP))


def edit_success(predictions: Iterable[tuple[str | None, str]]) -> float:
    """Percent of (predicted, expected) pairs that exact-match.

    A None prediction marks a failed query and counts as a miss.
    """
    hits = 0
    total = 0
    for predicted, expected in predictions:
        total += 1
        if predicted is not None and exact_match(predicted, expected):
            hits += 1
    if total == 0:
        raise NoInScopeExamplesError("edit success needs at least one in-scope example")
    return 100.0 * hits / total


def behavior_preservation(pairs: Iterable[tuple[str | None, str]]) -> float:
    """Percent of (edited, base) answer pairs that exact-match."""
    preserved = 0
    total = 0
    for edited, base in pairs:
        total += 1
        if edited is not None and exact_match(edited, base):
            preserved += 1
    if total == 0:
        raise NoOutOfScopeExamplesError("behavior preservation needs at least one out-of-scope example")
    return 100.0 * preserved / total


@dataclass(frozen=True)
class MetricsReport:
    """ES / BP / EQ plus retrieval recall and out-of-scope breakdowns."""

    es: float
    bp: float
    eq: float
    es_strict: float
    recall_at_k: float | None
    breakdown: dict[str, float]
    counts: dict[str, int]

    def __post_init__(self) -> None:
        if abs(self.eq - harmonic_mean(self.es, self.bp)) > 1e-9:
            raise ValueError("eq must equal the harmonic mean of es and bp")

    def to_json(self) -> dict:
        return {
            "report_version": REPORT_VERSION,
            "es": self.es,
            "bp": self.bp,
            "eq": self.eq,
            "es_strict": self.es_strict,
            "recall_at_k": self.recall_at_k,
            "breakdown": dict(sorted(self.breakdown.items())),
            "counts": dict(sorted(self.counts.items())),
            "display": {
                "es": round_report(self.es),
                "bp": round_report(self.bp),
                "eq": round_report(self.eq),
            },
        }


def report_to_json_bytes(report: MetricsReport) -> bytes:
    return (json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n").encode("utf-8")


def report_table(report: MetricsReport, label: str = "run") -> str:
    """Small aligned text table for humans."""
    recall = "-" if report.recall_at_k is None else f"{round_report(report.recall_at_k):.1f}"
    lines = [
        f"{'run':<12} {'ES':>7} {'BP':>7} {'EQ':>7} {'recall@k':>9}",
        f"{label:<12} {round_report(report.es):>7.1f} {round_report(report.bp):>7.1f} "
        f"{round_report(report.eq):>7.1f} {recall:>9}",
    ]
    return "\n".join(lines)


@dataclass(frozen=True)
class InScopeOutcome:
    """Per-example result of an in-scope query."""

    record_id: str
    input: str
    expected: str
    predicted: str | None
    correct: bool
    gold_seqs: frozenset[int]
    retrieved_seqs: frozenset[int]
    fell_back: bool | None
    failed: bool


@dataclass(frozen=True)
class OutOfScopeOutcome:
    """Per-example result of an out-of-scope query."""

    record_id: str | None
    input: str
    tag: str
    predicted: str | None
    base: str
    preserved: bool
    failed: bool


@dataclass(frozen=True)
class EvalRun:
    """A metrics report together with its per-example evidence."""

    report: MetricsReport
    in_scope: tuple[InScopeOutcome, ...]
    out_of_scope: tuple[OutOfScopeOutcome, ...]


def _no_context_prompt(config: EditorConfig, input_text: str) -> str:
    kind = (
        TemplateKind.QA_NO_CONTEXT
        if config.task is TaskKind.QUESTION_ANSWERING
        else TemplateKind.FC_NO_CONTEXT
    )
    return render(kind, "", input_text)


def _base_answer(
    reader: Reader, config: EditorConfig, input_text: str, cache: PredictionCache
) -> str:
    prompt = _no_context_prompt(config, input_text)
    cached = cache.get(reader.reader_id, prompt)
    if cached is not None:
        return cached
    answer = unedited_query(reader, config, input_text).raw
    cache.put(reader.reader_id, prompt, answer)
    return answer


def run_evaluation(
    records: Sequence[EditRecord],
    strategy: Strategy,
    config: EditorConfig,
    reader: Reader,
    *,
    embedder: HashingEmbedder | None = None,
    extra_out_of_scope: Sequence[ScopedExample] = (),
    cache: PredictionCache | None = None,
    parallel: int = 1,
) -> EvalRun:
    """Apply all edits sequentially, query every example, aggregate metrics.

    Reader failures mark the query failed: the example counts as incorrect
    (in scope) or not preserved (out of scope) instead of aborting the run.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    if parallel < 1:
        raise ValueError("parallel must be >= 1")
    if cache is None:
        cache = PredictionCache()

    notebook = Notebook()
    apply_edits_sequentially(notebook, [record.edit for record in records])
    index = NotebookIndex(embedder)
    if len(notebook):
        index.sync(notebook)

    in_scope_items: list[tuple[str, ScopedExample]] = [
        (record.edit.id, example) for record in records for example in record.in_scope
    ]
    oos_items: list[tuple[str | None, ScopedExample]] = [
        (record.edit.id, example) for record in records for example in record.out_of_scope
    ]
    oos_items.extend((None, example) for example in extra_out_of_scope)

    def run_strategy(input_text: str) -> tuple[str | None, frozenset[int], bool | None]:
        """Returns (raw final answer, retrieved seqs, fell_back)."""
        if strategy == "two_step":
            trace = two_step_query(notebook, reader, config, input_text, index=index)
            return trace.final.raw, frozenset(trace.retrieved.seqs), trace.fell_back
        if strategy == "one_step":
            if len(notebook):
                retrieved = frozenset(index.top_k(input_text, config.k).seqs)
            else:
                retrieved = frozenset()
            answer = one_step_mrc_query(notebook, reader, config, input_text, index=index)
            return answer.raw, retrieved, None
        return unedited_query(reader, config, input_text).raw, frozenset(), None

    def eval_in_scope(item: tuple[str, ScopedExample]) -> InScopeOutcome:
        record_id, example = item
        scope = example.scope
        assert isinstance(scope, InScope)
        gold = frozenset(notebook.seq_of(edit_id) for edit_id in scope.edit_ids)
        try:
            predicted, retrieved, fell_back = run_strategy(example.input)
        except ReaderError:
            return InScopeOutcome(
                record_id, example.input, example.expected, None, False, gold, frozenset(), None, True
            )
        correct = predicted is not None and exact_match(predicted, example.expected)
        return InScopeOutcome(
            record_id, example.input, example.expected, predicted, correct, gold, retrieved, fell_back, False
        )

    def eval_out_of_scope(item: tuple[str | None, ScopedExample]) -> OutOfScopeOutcome:
        record_id, example = item
        scope = example.scope
        assert isinstance(scope, OutOfScope)
        tag = scope.tag or UNTAGGED
        try:
            base = _base_answer(reader, config, example.input, cache)
            predicted, _, _ = run_strategy(example.input)
        except ReaderError:
            return OutOfScopeOutcome(record_id, example.input, tag, None, "", False, True)
        preserved = predicted is not None and exact_match(predicted, base)
        return OutOfScopeOutcome(record_id, example.input, tag, predicted, base, preserved, False)

    if parallel > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=parallel) as pool:
            in_scope_rows = tuple(pool.map(eval_in_scope, in_scope_items))
            oos_rows = tuple(pool.map(eval_out_of_scope, oos_items))
    else:
        in_scope_rows = tuple(eval_in_scope(item) for item in in_scope_items)
        oos_rows = tuple(eval_out_of_scope(item) for item in oos_items)

    es = edit_success((row.predicted, row.expected) for row in in_scope_rows)
    bp = behavior_preservation((row.predicted, row.base) for row in oos_rows)
    eq = harmonic_mean(es, bp)

    per_record: dict[str, bool] = {}
    for row in in_scope_rows:
        per_record[row.record_id] = per_record.get(row.record_id, True) and row.correct
    es_strict = 100.0 * sum(per_record.values()) / len(per_record)

    if strategy == "unedited":
        recall = None
    else:
        fractions = [
            len(row.retrieved_seqs & row.gold_seqs) / len(row.gold_seqs)
            for row in in_scope_rows
            if row.gold_seqs
        ]
        recall = 100.0 * sum(fractions) / len(fractions) if fractions else None

    breakdown: dict[str, float] = {}
    for tag in sorted({row.tag for row in oos_rows}):
        tagged = [(row.predicted, row.base) for row in oos_rows if row.tag == tag]
        breakdown[tag] = behavior_preservation(tagged)

    counts = {
        "edits": len(records),
        "in_scope": len(in_scope_rows),
        "out_of_scope": len(oos_rows),
        "failed_queries": sum(row.failed for row in in_scope_rows)
        + sum(row.failed for row in oos_rows),
    }
    report = MetricsReport(
        es=es,
        bp=bp,
        eq=eq,
        es_strict=es_strict,
        recall_at_k=recall,
        breakdown=breakdown,
        counts=counts,
    )
    return EvalRun(report=report, in_scope=in_scope_rows, out_of_scope=oos_rows)


def evaluate(
    records: Sequence[EditRecord],
    strategy: Strategy,
    config: EditorConfig,
    reader: Reader,
    **kwargs,
) -> MetricsReport:
    """Run the full evaluation and return just the metrics report."""
    return run_evaluation(records, strategy, config, reader, **kwargs).report
