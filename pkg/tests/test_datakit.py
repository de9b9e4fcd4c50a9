from __future__ import annotations

import random

import pytest

from notedit.core import Edit, EditRecord, InScope, OutOfScope, ScopedExample, TaskKind
from notedit.datakit import (
    FilterReason,
    InvalidSizeError,
    MockNliJudge,
    NliProbs,
    SchemaIssue,
    boolean_probe,
    filter_in_scope,
    filter_out_of_scope,
    filter_records,
    generate_world,
    load_dataset,
    save_dataset,
)

EDIT = "The ceo of apple is tim cook."
EXAMPLE = "Who is the ceo of apple?"


def judge_with(self_entail: float, neutral: float) -> MockNliJudge:
    rest = (1.0 - self_entail) / 2
    example_rest = (1.0 - neutral) / 2
    return MockNliJudge(
        table={
            (EDIT, EDIT): NliProbs(entail=self_entail, neutral=rest, contradict=rest),
            (EDIT, EXAMPLE): NliProbs(entail=example_rest, neutral=neutral, contradict=example_rest),
        }
    )


def test_nli_probs_validation() -> None:
    NliProbs(entail=0.2, neutral=0.5, contradict=0.3)
    with pytest.raises(ValueError):
        NliProbs(entail=0.9, neutral=0.5, contradict=0.3)
    with pytest.raises(ValueError):
        NliProbs(entail=-0.1, neutral=0.6, contradict=0.5)


def test_filter_in_scope_kept_below_threshold() -> None:
    decision = filter_in_scope(judge_with(0.90, 0.50), EDIT, EXAMPLE)
    assert decision.kept
    assert decision.reason is FilterReason.KEPT


def test_filter_in_scope_dropped_at_or_above_threshold() -> None:
    decision = filter_in_scope(judge_with(0.90, 0.80), EDIT, EXAMPLE)
    assert not decision.kept
    assert decision.reason is FilterReason.IN_SCOPE_NEUTRAL_TOO_HIGH


def test_filter_in_scope_zero_neutral_kept() -> None:
    assert filter_in_scope(judge_with(0.90, 0.0), EDIT, EXAMPLE).kept


def test_filter_out_of_scope_kept_above_threshold() -> None:
    assert filter_out_of_scope(judge_with(0.90, 0.95), EDIT, EXAMPLE).kept


def test_filter_out_of_scope_dropped_below_threshold() -> None:
    decision = filter_out_of_scope(judge_with(0.90, 0.50), EDIT, EXAMPLE)
    assert not decision.kept
    assert decision.reason is FilterReason.OUT_OF_SCOPE_NEUTRAL_TOO_LOW


def test_filter_boundary_equality_drops_both_rules() -> None:
    # neutral == 0.8 * self-entailment exactly; strict inequalities drop it.
    judge = judge_with(0.90, 0.8 * 0.90)
    assert not filter_in_scope(judge, EDIT, EXAMPLE).kept
    assert not filter_out_of_scope(judge, EDIT, EXAMPLE).kept


def test_filter_monotone_in_self_entailment() -> None:
    rng = random.Random(123)
    for _ in range(200):
        neutral = rng.random()
        s_low = rng.random()
        s_high = min(1.0, s_low + rng.random() * (1.0 - s_low))
        low, high = judge_with(s_low, neutral), judge_with(s_high, neutral)
        if filter_in_scope(low, EDIT, EXAMPLE).kept:
            assert filter_in_scope(high, EDIT, EXAMPLE).kept
        if not filter_out_of_scope(low, EDIT, EXAMPLE).kept:
            assert not filter_out_of_scope(high, EDIT, EXAMPLE).kept


def test_filter_records_drops_examples_keeps_edits() -> None:
    record = EditRecord(
        edit=Edit(id="e0", statement=EDIT),
        in_scope=(ScopedExample(input=EXAMPLE, expected="tim cook", scope=InScope(("e0",))),),
        out_of_scope=(ScopedExample(input="Where is apple hq?", expected="cupertino", scope=OutOfScope()),),
    )
    judge = judge_with(0.90, 0.95)  # High neutral: drops in-scope, keeps out-of-scope.
    filtered, decisions = filter_records(judge, [record])
    assert len(filtered) == 1
    assert filtered[0].in_scope == ()
    assert len(filtered[0].out_of_scope) == 1
    assert {d.reason for d in decisions} == {FilterReason.IN_SCOPE_NEUTRAL_TOO_HIGH, FilterReason.KEPT}
    assert all(isinstance(d.to_json()["kept"], bool) for d in decisions)


def test_mock_judge_default_and_table() -> None:
    judge = MockNliJudge()
    probs = judge.judge("any premise", "any hypothesis")
    assert probs == NliProbs(entail=0.1, neutral=0.8, contradict=0.1)
    loaded = MockNliJudge.from_json(
        {
            "default": {"entail": 0.3, "neutral": 0.4, "contradict": 0.3},
            "entries": [
                {"premise": "p", "hypothesis": "h", "entail": 0.9, "neutral": 0.05, "contradict": 0.05}
            ],
        }
    )
    assert loaded.judge("p", "h").entail == 0.9
    assert loaded.judge("p", "other").neutral == 0.4


def make_records() -> list[EditRecord]:
    _, records = generate_world(3, 6, 1, 2, 0.0)
    return records


def test_dataset_round_trip(tmp_path) -> None:
    records = make_records()
    path = tmp_path / "dataset.jsonl"
    save_dataset(records, path)
    loaded, issues = load_dataset(path)
    assert issues == []
    assert loaded == records


def test_load_dataset_collects_line_issues(tmp_path) -> None:
    good = (
        '{"id": "e1", "task": "qa", "statement": "The a of b is c.", '
        '"in_scope": [{"input": "What is the a of b?", "expected": "c", "edit_ids": ["e1"]}], '
        '"out_of_scope": []}'
    )
    missing_statement = '{"id": "e2", "task": "qa", "in_scope": [], "out_of_scope": []}'
    bad_json = '{"id": "e3", '
    path = tmp_path / "dataset.jsonl"
    path.write_text("\n".join([good, missing_statement, bad_json]) + "\n", encoding="utf-8")
    records, issues = load_dataset(path)
    assert [record.edit.id for record in records] == ["e1"]
    assert {issue.line_no for issue in issues} == {2, 3}
    fields = {issue.field for issue in issues}
    assert "statement" in fields and "json" in fields


def test_load_dataset_empty_file(tmp_path) -> None:
    path = tmp_path / "empty.jsonl"
    path.write_text("", encoding="utf-8")
    records, issues = load_dataset(path)
    assert records == [] and issues == []


def test_load_dataset_duplicate_id_reported(tmp_path) -> None:
    line = '{"id": "e1", "task": "qa", "statement": "The a of b is c.", "in_scope": [], "out_of_scope": []}'
    path = tmp_path / "dup.jsonl"
    path.write_text(line + "\n" + line + "\n", encoding="utf-8")
    records, issues = load_dataset(path)
    assert len(records) == 1
    assert issues == [SchemaIssue(2, "id", "duplicate edit id 'e1'")]


def test_load_dataset_missing_file(tmp_path) -> None:
    with pytest.raises(FileNotFoundError):
        load_dataset(tmp_path / "nope.jsonl")


def test_generate_world_deterministic(tmp_path) -> None:
    first_world, first_records = generate_world(7, 64, 1, 2, 0.25)
    second_world, second_records = generate_world(7, 64, 1, 2, 0.25)
    assert first_records == second_records
    assert first_world.facts == second_world.facts
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    save_dataset(first_records, a)
    save_dataset(second_records, b)
    assert a.read_bytes() == b.read_bytes()


def test_generate_world_different_seeds_differ() -> None:
    _, first = generate_world(7, 16, 0, 0, 0.0)
    _, second = generate_world(8, 16, 0, 0, 0.0)
    assert first != second


def test_generate_world_minimal() -> None:
    world, records = generate_world(5, 1, 0, 0, 0.0)
    assert len(records) == 1
    record = records[0]
    assert len(record.in_scope) == 1
    assert record.out_of_scope == ()
    # The edit contradicts the parametric fact.
    scope = record.in_scope[0].scope
    assert isinstance(scope, InScope)
    statement_obj = record.edit.statement.rstrip(".").rsplit(" is ", 1)[1]
    assert record.in_scope[0].expected == statement_obj


def test_generate_world_two_hop_counts() -> None:
    _, records = generate_world(9, 512, 0, 0, 0.25)
    two_hop = [
        example
        for record in records
        for example in record.in_scope
        if isinstance(example.scope, InScope) and len(example.scope.edit_ids) == 2
    ]
    assert len(two_hop) == 128
    ids = {record.edit.id for record in records}
    for example in two_hop:
        assert set(example.scope.edit_ids) <= ids


def test_generate_world_counterfactual_edits() -> None:
    world, records = generate_world(13, 32, 0, 0, 0.0)
    for record in records:
        statement = record.edit.statement.rstrip(".")
        body = statement[len("The "):]
        relation, rest = body.split(" of ", 1)
        subject, obj = rest.split(" is ", 1)
        assert world.lookup(subject, relation) is not None
        assert world.lookup(subject, relation) != obj


def test_generate_world_oos_tags_and_parametric_answers() -> None:
    world, records = generate_world(21, 16, 0, 4, 0.0)
    for record in records:
        tags = [example.scope.tag for example in record.out_of_scope]
        assert set(tags) == {"neighbor_subject", "same_subject"}
        for example in record.out_of_scope:
            question = example.input.rstrip("?")
            body = question[len("What is the "):]
            relation, subject = body.split(" of ", 1)
            assert world.lookup(subject, relation) == example.expected


def test_generate_world_invalid_sizes() -> None:
    with pytest.raises(InvalidSizeError):
        generate_world(1, -1, 0, 0, 0.0)
    with pytest.raises(InvalidSizeError):
        generate_world(1, 4, 0, 0, 1.5)
    with pytest.raises(InvalidSizeError):
        generate_world(1, 4, 0, 0, 0.9)  # 4 chains need 8 edits.
    with pytest.raises(InvalidSizeError):
        generate_world(1, 4, 0, 0, 0.5, task=TaskKind.FACT_CHECKING)


def test_generate_world_fc_claims() -> None:
    world, records = generate_world(17, 8, 1, 2, 0.0, task=TaskKind.FACT_CHECKING)
    record = records[0]
    assert record.edit.task is TaskKind.FACT_CHECKING
    assert all(example.expected == "Yes" for example in record.in_scope)
    assert all(example.expected == "Yes" for example in record.out_of_scope)
    assert not record.in_scope[0].input.endswith("?")


def test_boolean_probe() -> None:
    edit = Edit(id="e9", statement="The ceo of apple is tim cook.")
    probe = boolean_probe(edit)
    assert probe.input == "Is it true that The ceo of apple is tim cook?"
    assert probe.expected == "Yes"
    assert probe.scope == InScope(("e9",))
