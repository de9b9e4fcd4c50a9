from __future__ import annotations

from decimal import Decimal

import pytest
from hypothesis import given
from hypothesis import strategies as st

from notedit.core import Edit, EditRecord, InScope, OutOfScope, ScopedExample, TaskKind
from notedit.datakit import generate_world
from notedit.engine import EditorConfig
from notedit.evaluation import (
    MetricsReport,
    NoInScopeExamplesError,
    NoOutOfScopeExamplesError,
    OutOfRangeError,
    behavior_preservation,
    edit_success,
    evaluate,
    harmonic_mean,
    report_table,
    report_to_json_bytes,
    round_half_up,
    round_report,
    run_evaluation,
)
from notedit.reader import BackendError, MockReader, ReaderRequest
from notedit.store import PredictionCache


def test_harmonic_mean_exact_values() -> None:
    assert harmonic_mean(96.9, 96.8) == pytest.approx(96.84997418688694)
    assert harmonic_mean(41.9, 100.0) == pytest.approx(59.05567300916138)
    assert harmonic_mean(58.9, 49.8) == pytest.approx(53.96908923643054)
    assert harmonic_mean(60.1, 67.9) == pytest.approx(63.76234375)
    assert harmonic_mean(0.0, 100.0) == 0.0
    assert harmonic_mean(0.0, 0.0) == 0.0


def test_harmonic_mean_reported_at_one_decimal() -> None:
    # Report values are carried at hundredths, then shown at one decimal.
    assert round_half_up(harmonic_mean(96.9, 96.8), places=2) == Decimal("96.85")
    assert round_report(harmonic_mean(96.9, 96.8)) == 96.9
    assert round_report(harmonic_mean(41.9, 100.0)) == 59.1
    assert round_report(harmonic_mean(0.0, 100.0)) == 0.0


def test_harmonic_mean_out_of_range() -> None:
    with pytest.raises(OutOfRangeError):
        harmonic_mean(-1.0, 50.0)
    with pytest.raises(OutOfRangeError):
        harmonic_mean(50.0, 100.5)


@given(
    a=st.floats(min_value=0, max_value=100, allow_nan=False),
    b=st.floats(min_value=0, max_value=100, allow_nan=False),
)
def test_harmonic_mean_symmetric_and_bounded(a: float, b: float) -> None:
    value = harmonic_mean(a, b)
    assert value == harmonic_mean(b, a)
    assert value <= (a + b) / 2 + 1e-9
    assert value <= 2 * min(a, b) + 1e-9


def test_round_half_up() -> None:
    assert round_half_up(96.85, 1) == Decimal("96.9")
    assert round_half_up(96.84, 1) == Decimal("96.8")
    assert round_half_up(0.05, 1) == Decimal("0.1")


def test_edit_success_examples() -> None:
    assert edit_success([("a", "a"), ("b", "b")]) == 100.0
    assert edit_success([("a", "a"), ("b", "b"), ("c", "c"), ("x", "y")]) == 75.0
    assert edit_success([(None, "a"), ("a", "a")]) == 50.0
    with pytest.raises(NoInScopeExamplesError):
        edit_success([])


def test_behavior_preservation_examples() -> None:
    pairs = [("same", "same")] * 7 + [("left", "right")] * 3
    assert behavior_preservation(pairs) == 70.0
    assert behavior_preservation([("Answer.", "answer")]) == 100.0
    with pytest.raises(NoOutOfScopeExamplesError):
        behavior_preservation([])


def test_metrics_report_eq_consistency_enforced() -> None:
    with pytest.raises(ValueError):
        MetricsReport(es=100.0, bp=100.0, eq=50.0, es_strict=100.0, recall_at_k=None, breakdown={}, counts={})


def small_world(seed: int = 11, n_facts: int = 24):
    world, records = generate_world(seed, n_facts, 1, 2, 0.25)
    return MockReader(world), records


def test_evaluate_perfect_with_exhaustive_retrieval() -> None:
    reader, records = small_world()
    report = evaluate(records, "two_step", EditorConfig(k=len(records)), reader)
    assert (report.es, report.bp, report.eq) == (100.0, 100.0, 100.0)
    assert report.es_strict == 100.0
    assert report.recall_at_k == 100.0
    assert set(report.breakdown) == {"neighbor_subject", "same_subject"}
    assert all(value == 100.0 for value in report.breakdown.values())


def test_evaluate_unedited_strategy() -> None:
    reader, records = small_world()
    report = evaluate(records, "unedited", EditorConfig(k=5), reader)
    # Every edit is counterfactual, so the base model misses all of them.
    assert report.es == 0.0
    assert report.bp == 100.0
    assert report.recall_at_k is None
    assert report.eq == harmonic_mean(report.es, report.bp)


def test_evaluate_one_step_loses_behavior_preservation() -> None:
    reader, records = small_world()
    one_step = evaluate(records, "one_step", EditorConfig(k=len(records)), reader)
    two_step = evaluate(records, "two_step", EditorConfig(k=len(records)), reader)
    assert one_step.bp < two_step.bp
    assert one_step.bp == 0.0


def test_evaluate_eq_recomputable_from_report() -> None:
    reader, records = small_world()
    for strategy in ("two_step", "one_step", "unedited"):
        report = evaluate(records, strategy, EditorConfig(k=3), reader)
        assert report.eq == pytest.approx(harmonic_mean(report.es, report.bp), abs=1e-9)


def test_evaluate_failed_queries_count_against_metrics() -> None:
    reader, records = small_world(n_facts=8)
    poison_inputs = {records[0].in_scope[0].input, records[1].out_of_scope[0].input}

    class Flaky:
        reader_id = "flaky"

        def complete(self, request: ReaderRequest) -> str:
            if any(poison in request.prompt for poison in poison_inputs):
                raise BackendError(500, "boom")
            return reader.complete(request)

    clean = run_evaluation(records, "two_step", EditorConfig(k=len(records)), reader)
    flaky = run_evaluation(records, "two_step", EditorConfig(k=len(records)), Flaky())
    assert flaky.report.counts["failed_queries"] >= 2
    assert flaky.report.es < clean.report.es
    assert flaky.report.bp < clean.report.bp


def test_evaluate_parallel_matches_serial() -> None:
    reader, records = small_world(n_facts=12)
    config = EditorConfig(k=6)
    serial = evaluate(records, "two_step", config, reader)
    parallel = evaluate(records, "two_step", config, reader, parallel=4)
    assert report_to_json_bytes(serial) == report_to_json_bytes(parallel)


def test_cache_is_semantically_transparent(tmp_path) -> None:
    reader, records = small_world(n_facts=12)
    config = EditorConfig(k=6)
    without = evaluate(records, "two_step", config, reader)
    cache = PredictionCache(tmp_path / "cache.jsonl")
    first = evaluate(records, "two_step", config, reader, cache=cache)
    warm = evaluate(records, "two_step", config, reader, cache=cache)
    assert report_to_json_bytes(without) == report_to_json_bytes(first) == report_to_json_bytes(warm)


def test_report_json_layout() -> None:
    reader, records = small_world(n_facts=8)
    report = evaluate(records, "two_step", EditorConfig(k=8), reader)
    body = report_to_json_bytes(report)
    assert body.endswith(b"\n")
    import json

    payload = json.loads(body)
    assert payload["report_version"] == 1
    assert payload["display"]["es"] == 100.0
    assert payload["counts"]["edits"] == 8


def test_report_table_layout() -> None:
    reader, records = small_world(n_facts=8)
    report = evaluate(records, "two_step", EditorConfig(k=8), reader)
    table = report_table(report, label="two_step")
    assert "ES" in table and "two_step" in table and "100.0" in table


def test_es_strict_is_all_or_nothing_per_edit() -> None:
    records = [
        EditRecord(
            edit=Edit(id="e0", statement="The a of b is c."),
            in_scope=(
                ScopedExample(input="q1", expected="right", scope=InScope(("e0",))),
                ScopedExample(input="q2", expected="right", scope=InScope(("e0",))),
            ),
            out_of_scope=(ScopedExample(input="q3", expected="base", scope=OutOfScope()),),
        ),
        EditRecord(
            edit=Edit(id="e1", statement="The d of e is f."),
            in_scope=(ScopedExample(input="q4", expected="right", scope=InScope(("e1",))),),
        ),
    ]

    class Scripted:
        reader_id = "scripted"

        def complete(self, request: ReaderRequest) -> str:
            if "q2" in request.prompt:
                return "wrong"
            if "q3" in request.prompt:
                return "base"
            return "right"

    run = run_evaluation(records, "one_step", EditorConfig(k=1), Scripted())
    assert run.report.es == pytest.approx(100.0 * 2 / 3)
    assert run.report.es_strict == 50.0


def test_unknown_strategy_rejected() -> None:
    reader, records = small_world(n_facts=8)
    with pytest.raises(ValueError):
        evaluate(records, "three_step", EditorConfig(), reader)  # type: ignore[arg-type]
