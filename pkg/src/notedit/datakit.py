"""Dataset schemas, loaders, NLI-threshold filtering, and synthetic worlds.

The JSONL dataset format is one record per line:

    {"id": ..., "task": "qa" | "fc", "statement": ...,
     "in_scope": [{"input": ..., "expected": ..., "edit_ids": [...]}],
     "out_of_scope": [{"input": ..., "expected": ..., "tag": ...}]}

Filtering uses a pluggable NLI judge. With the edit statement as premise
and the example as hypothesis, an in-scope example is kept when the
predicted neutral probability is below 80% of the statement's
self-entailment probability, and an out-of-scope example is kept when it is
above that bar; equality drops in both rules.

`generate_world` builds a seeded counterfactual world for offline runs: a
parametric fact base, edits that contradict it, paraphrase questions,
out-of-scope questions about neighboring subjects and about unrelated
relations of the same subject, and two-hop questions whose answer needs two
notes at once. Entity names are sampled so that, at the configured
embedding dimension, distinct vocabulary tokens land in distinct hash
buckets whenever capacity allows, which keeps retrieval margins exact.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Protocol, Sequence

from .core import (
    Edit,
    EditRecord,
    InScope,
    NoteditError,
    OutOfScope,
    ScopedExample,
    TaskKind,
    fnv1a_64,
)
from .prompts import BOOLEAN_PROBE_TEMPLATE
from .reader import FactTriple, MockWorld
from .retriever import DEFAULT_DIM

NEIGHBOR_SUBJECT_TAG = "neighbor_subject"
SAME_SUBJECT_TAG = "same_subject"

FILTER_THRESHOLD_RATIO = 0.8

_RELATION_POOL_SIZE = 16
_NEIGHBOR_POOL_SIZE = 16
_EDITS_PER_SUBJECT = 12
_MAX_NAME_TRIES = 1000

# Words that appear in generated questions and note statements; they are
# reserved first so no entity name shares a hash bucket with them.
_TEMPLATE_WORDS = ("the", "of", "is", "what", "it", "true", "that")

_SYLLABLES = (
    "ba", "re", "mo", "ta", "li", "zu", "ke", "no", "vi", "sa",
    "du", "pe", "go", "ni", "fa", "lo", "ri", "wu", "ja", "che",
)

_QUESTION_VARIANTS = (
    "What is the {relation} of {subject}?",
    "what is the {relation} of {subject}?",
    "What is the {relation} of {subject}??",
    "WHAT IS THE {relation} OF {subject}?",
    " What is the {relation} of {subject}? ",
)

_CLAIM_VARIANTS = (
    "The {relation} of {subject} is {obj}",
    "the {relation} of {subject} is {obj}",
    "THE {relation} OF {subject} IS {obj}",
    " The {relation} of {subject} is {obj} ",
)


class InvalidSizeError(NoteditError):
    """World generation was asked for inconsistent sizes."""


@dataclass(frozen=True)
class NliProbs:
    """A 3-way NLI distribution; probabilities sum to 1."""

    entail: float
    neutral: float
    contradict: float

    def __post_init__(self) -> None:
        for name in ("entail", "neutral", "contradict"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} probability out of range: {value}")
        total = self.entail + self.neutral + self.contradict
        if abs(total - 1.0) > 1e-6:
            raise ValueError(f"probabilities must sum to 1, got {total}")


class NliJudge(Protocol):
    def judge(self, premise: str, hypothesis: str) -> NliProbs: ...


DEFAULT_JUDGE_PROBS = NliProbs(entail=0.1, neutral=0.8, contradict=0.1)


class MockNliJudge:
    """Table-driven judge: exact (premise, hypothesis) lookups plus a default."""

    def __init__(
        self,
        table: Mapping[tuple[str, str], NliProbs] | None = None,
        default: NliProbs = DEFAULT_JUDGE_PROBS,
    ) -> None:
        self.table = dict(table or {})
        self.default = default

    def judge(self, premise: str, hypothesis: str) -> NliProbs:
        return self.table.get((premise, hypothesis), self.default)

    @classmethod
    def from_json(cls, doc: Mapping) -> "MockNliJudge":
        default = DEFAULT_JUDGE_PROBS
        if "default" in doc:
            default = NliProbs(**doc["default"])
        table = {
            (entry["premise"], entry["hypothesis"]): NliProbs(
                entail=entry["entail"], neutral=entry["neutral"], contradict=entry["contradict"]
            )
            for entry in doc.get("entries", [])
        }
        return cls(table=table, default=default)


class FilterReason(Enum):
    KEPT = "kept"
    IN_SCOPE_NEUTRAL_TOO_HIGH = "in_scope_neutral_too_high"
    OUT_OF_SCOPE_NEUTRAL_TOO_LOW = "out_of_scope_neutral_too_low"


@dataclass(frozen=True)
class FilterDecision:
    """One keep/drop call, with the numbers that produced it."""

    example_input: str
    kept: bool
    reason: FilterReason
    neutral: float
    self_entailment: float

    def to_json(self) -> dict:
        return {
            "input": self.example_input,
            "kept": self.kept,
            "reason": self.reason.value,
            "neutral": self.neutral,
            "self_entailment": self.self_entailment,
        }


def filter_in_scope(judge: NliJudge, edit_statement: str, example_input: str) -> FilterDecision:
    """Keep when neutral < 0.8 x self-entailment; ties drop."""
    self_entailment = judge.judge(edit_statement, edit_statement).entail
    neutral = judge.judge(edit_statement, example_input).neutral
    kept = neutral < FILTER_THRESHOLD_RATIO * self_entailment
    reason = FilterReason.KEPT if kept else FilterReason.IN_SCOPE_NEUTRAL_TOO_HIGH
    return FilterDecision(example_input, kept, reason, neutral, self_entailment)


def filter_out_of_scope(judge: NliJudge, edit_statement: str, example_input: str) -> FilterDecision:
    """Keep when neutral > 0.8 x self-entailment; ties drop."""
    self_entailment = judge.judge(edit_statement, edit_statement).entail
    neutral = judge.judge(edit_statement, example_input).neutral
    kept = neutral > FILTER_THRESHOLD_RATIO * self_entailment
    reason = FilterReason.KEPT if kept else FilterReason.OUT_OF_SCOPE_NEUTRAL_TOO_LOW
    return FilterDecision(example_input, kept, reason, neutral, self_entailment)


def filter_records(
    judge: NliJudge, records: Sequence[EditRecord]
) -> tuple[list[EditRecord], list[FilterDecision]]:
    """Apply both threshold rules to every example of every record.

    Inputs are fed to the judge as hypotheses verbatim, so the rules work
    best on declarative inputs (claims or questions already converted to
    statements). Records keep their edit even if all examples drop.
    """
    filtered: list[EditRecord] = []
    decisions: list[FilterDecision] = []
    for record in records:
        kept_in: list[ScopedExample] = []
        for example in record.in_scope:
            decision = filter_in_scope(judge, record.edit.statement, example.input)
            decisions.append(decision)
            if decision.kept:
                kept_in.append(example)
        kept_out: list[ScopedExample] = []
        for example in record.out_of_scope:
            decision = filter_out_of_scope(judge, record.edit.statement, example.input)
            decisions.append(decision)
            if decision.kept:
                kept_out.append(example)
        filtered.append(
            EditRecord(edit=record.edit, in_scope=tuple(kept_in), out_of_scope=tuple(kept_out))
        )
    return filtered, decisions


@dataclass(frozen=True)
class SchemaIssue:
    """One recoverable problem found while loading a dataset line."""

    line_no: int
    field: str
    message: str


def record_to_json(record: EditRecord) -> dict:
    in_scope = []
    for example in record.in_scope:
        assert isinstance(example.scope, InScope)
        in_scope.append(
            {"input": example.input, "expected": example.expected, "edit_ids": list(example.scope.edit_ids)}
        )
    out_of_scope = []
    for example in record.out_of_scope:
        assert isinstance(example.scope, OutOfScope)
        row = {"input": example.input, "expected": example.expected}
        if example.scope.tag is not None:
            row["tag"] = example.scope.tag
        out_of_scope.append(row)
    return {
        "id": record.edit.id,
        "task": record.edit.task.value,
        "statement": record.edit.statement,
        "in_scope": in_scope,
        "out_of_scope": out_of_scope,
    }


def _record_from_json(payload: Mapping, line_no: int) -> tuple[EditRecord | None, list[SchemaIssue]]:
    issues: list[SchemaIssue] = []
    for name in ("id", "task", "statement"):
        if not isinstance(payload.get(name), str) or not payload.get(name):
            issues.append(SchemaIssue(line_no, name, f"missing or invalid {name!r}"))
    if issues:
        return None, issues
    try:
        task = TaskKind(payload["task"])
    except ValueError:
        return None, [SchemaIssue(line_no, "task", f"unknown task {payload['task']!r}")]
    try:
        edit = Edit(id=payload["id"], statement=payload["statement"], task=task)
        in_scope = []
        for entry in payload.get("in_scope", []):
            edit_ids = entry.get("edit_ids")
            if not isinstance(edit_ids, list) or not all(isinstance(item, str) for item in edit_ids):
                return None, [SchemaIssue(line_no, "in_scope", "edit_ids must be a list of strings")]
            in_scope.append(
                ScopedExample(
                    input=entry["input"], expected=entry["expected"], scope=InScope(tuple(edit_ids))
                )
            )
        out_of_scope = [
            ScopedExample(
                input=entry["input"], expected=entry["expected"], scope=OutOfScope(entry.get("tag"))
            )
            for entry in payload.get("out_of_scope", [])
        ]
        record = EditRecord(edit=edit, in_scope=tuple(in_scope), out_of_scope=tuple(out_of_scope))
    except (KeyError, TypeError) as exc:
        return None, [SchemaIssue(line_no, "record", f"malformed example entry: {exc}")]
    except (ValueError, NoteditError) as exc:
        return None, [SchemaIssue(line_no, "record", str(exc))]
    return record, []


def load_dataset(path: str | Path) -> tuple[list[EditRecord], list[SchemaIssue]]:
    """Load a JSONL dataset; line-level problems are reported, not fatal."""
    records: list[EditRecord] = []
    issues: list[SchemaIssue] = []
    seen_ids: set[str] = set()
    with Path(path).open("r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                payload = json.loads(line)
            except json.JSONDecodeError as exc:
                issues.append(SchemaIssue(line_no, "json", exc.msg))
                continue
            if not isinstance(payload, dict):
                issues.append(SchemaIssue(line_no, "json", "line is not a JSON object"))
                continue
            record, record_issues = _record_from_json(payload, line_no)
            issues.extend(record_issues)
            if record is None:
                continue
            if record.edit.id in seen_ids:
                issues.append(SchemaIssue(line_no, "id", f"duplicate edit id {record.edit.id!r}"))
                continue
            seen_ids.add(record.edit.id)
            records.append(record)
    return records, issues


def save_dataset(records: Iterable[EditRecord], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as handle:
        for record in records:
            handle.write(json.dumps(record_to_json(record), ensure_ascii=False, sort_keys=True) + "\n")


def boolean_probe(edit: Edit) -> ScopedExample:
    """Harder in-scope example: the edit statement recast as a yes/no question."""
    statement = edit.statement.strip().rstrip(".")
    return ScopedExample(
        input=BOOLEAN_PROBE_TEMPLATE.format(statement=statement),
        expected="Yes",
        scope=InScope((edit.id,)),
    )


class _NameMaker:
    """Deterministic entity names whose hash buckets avoid each other."""

    def __init__(self, rng: random.Random, dim: int) -> None:
        self._rng = rng
        self._dim = dim
        self._used_names: set[str] = set()
        self._used_buckets: set[int] = set()
        for word in _TEMPLATE_WORDS:
            self._used_buckets.add(fnv1a_64(word) % dim)
            self._used_names.add(word)

    def make(self) -> str:
        candidate = ""
        for attempt in range(_MAX_NAME_TRIES):
            n_syllables = 2 + attempt % 3
            candidate = "".join(self._rng.choice(_SYLLABLES) for _ in range(n_syllables))
            if candidate in self._used_names:
                continue
            bucket = fnv1a_64(candidate) % self._dim
            if bucket in self._used_buckets:
                continue
            self._used_buckets.add(bucket)
            self._used_names.add(candidate)
            return candidate
        # Bucket space exhausted; fall back to a string-unique name.
        while candidate in self._used_names:
            candidate = "".join(self._rng.choice(_SYLLABLES) for _ in range(4))
        self._used_names.add(candidate)
        return candidate


@dataclass(frozen=True)
class _PlannedEdit:
    subject: str
    relation: str
    original: str
    counterfactual: str
    chain_tail_index: int | None = None  # Set on chain heads only.


def _question(variant: int, relation: str, subject: str) -> str:
    template = _QUESTION_VARIANTS[variant % len(_QUESTION_VARIANTS)]
    return template.format(relation=relation, subject=subject)


def _claim(variant: int, relation: str, subject: str, obj: str) -> str:
    template = _CLAIM_VARIANTS[variant % len(_CLAIM_VARIANTS)]
    return template.format(relation=relation, subject=subject, obj=obj)


def generate_world(
    seed: int,
    n_facts: int,
    n_paraphrases: int,
    n_oos_per_edit: int,
    two_hop_fraction: float,
    *,
    task: TaskKind = TaskKind.QUESTION_ANSWERING,
    embed_dim: int = DEFAULT_DIM,
) -> tuple[MockWorld, list[EditRecord]]:
    """Build a seeded counterfactual world and its edit dataset.

    Every edit contradicts the parametric fact base, so an unedited reader
    gets every in-scope question wrong and a perfectly grounded one gets it
    right. `two_hop_fraction` of the edits (rounded) anchor two-hop
    questions; each chain links two dedicated edits and the question lists
    both edit ids. Out-of-scope questions alternate between a neighboring
    subject with the same relation and the same subject with an unrelated
    relation, and always have parametric answers.

    The same seed and sizes produce byte-identical output.
    """
    if n_facts < 0 or n_paraphrases < 0 or n_oos_per_edit < 0:
        raise InvalidSizeError("sizes must be >= 0")
    if not 0.0 <= two_hop_fraction <= 1.0:
        raise InvalidSizeError("two_hop_fraction must be in [0, 1]")
    n_two_hop = round(n_facts * two_hop_fraction)
    if 2 * n_two_hop > n_facts:
        raise InvalidSizeError(
            f"{n_two_hop} two-hop chains need {2 * n_two_hop} edits but only {n_facts} requested"
        )
    if task is TaskKind.FACT_CHECKING and n_two_hop > 0:
        raise InvalidSizeError("two-hop questions are only generated for the qa task")

    rng = random.Random(seed)
    namer = _NameMaker(rng, embed_dim)

    relation_pool = [namer.make() for _ in range(_RELATION_POOL_SIZE)]
    neighbor_pool = [namer.make() for _ in range(_NEIGHBOR_POOL_SIZE)]
    n_plain = n_facts - 2 * n_two_hop
    n_subjects = max(1, math.ceil(n_plain / _EDITS_PER_SUBJECT)) if n_plain else 1
    subjects = [namer.make() for _ in range(n_subjects)]
    objects = [namer.make() for _ in range(max(8, n_facts // 8))]

    grid = [(s, r) for s in subjects for r in relation_pool]
    rng.shuffle(grid)
    if n_plain > len(grid):
        raise InvalidSizeError("internal: grid capacity exceeded")

    def pick_object(exclude: str | None = None) -> str:
        choice = rng.choice(objects)
        while choice == exclude:
            choice = rng.choice(objects)
        return choice

    planned: list[_PlannedEdit] = []
    for subject, relation in grid[:n_plain]:
        original = pick_object()
        planned.append(_PlannedEdit(subject, relation, original, pick_object(exclude=original)))
    for _ in range(n_two_hop):
        tail_subject = rng.choice(subjects)
        tail = _PlannedEdit(
            subject=tail_subject,
            relation=namer.make(),
            original=pick_object(),
            counterfactual="",  # Filled below once chosen distinct from original.
        )
        tail_counterfactual = pick_object(exclude=tail.original)
        tail = _PlannedEdit(tail.subject, tail.relation, tail.original, tail_counterfactual)
        head = _PlannedEdit(
            subject=namer.make(),
            relation=namer.make(),
            original=pick_object(),
            counterfactual=tail.subject,
            chain_tail_index=len(planned) + 1,
        )
        planned.append(head)
        planned.append(tail)

    width = max(4, len(str(max(n_facts - 1, 0))))
    edit_ids = [f"e{i:0{width}d}" for i in range(len(planned))]

    parametric: dict[tuple[str, str], str] = {}
    for plan in planned:
        parametric[(plan.subject, plan.relation)] = plan.original

    taken_by_subject: dict[str, set[str]] = {}
    for plan in planned:
        taken_by_subject.setdefault(plan.subject, set()).add(plan.relation)

    def ensure_fact(subject: str, relation: str) -> str:
        key = (subject, relation)
        if key not in parametric:
            parametric[key] = rng.choice(objects)
        return parametric[key]

    def in_scope_input(variant: int, plan: _PlannedEdit) -> str:
        if task is TaskKind.QUESTION_ANSWERING:
            return _question(variant, plan.relation, plan.subject)
        return _claim(variant, plan.relation, plan.subject, plan.counterfactual)

    records: list[EditRecord] = []
    for i, plan in enumerate(planned):
        edit = Edit(
            id=edit_ids[i],
            statement=f"The {plan.relation} of {plan.subject} is {plan.counterfactual}.",
            task=task,
        )
        expected = plan.counterfactual if task is TaskKind.QUESTION_ANSWERING else "Yes"
        in_scope = [
            ScopedExample(
                input=in_scope_input(variant, plan),
                expected=expected,
                scope=InScope((edit.id,)),
            )
            for variant in range(1 + n_paraphrases)
        ]
        if plan.chain_tail_index is not None:
            tail = planned[plan.chain_tail_index]
            in_scope.append(
                ScopedExample(
                    input=f"What is the {tail.relation} of the {plan.relation} of {plan.subject}?",
                    expected=tail.counterfactual,
                    scope=InScope((edit.id, edit_ids[plan.chain_tail_index])),
                )
            )

        out_of_scope: list[ScopedExample] = []
        for t in range(n_oos_per_edit):
            if t % 2 == 0:
                neighbor = neighbor_pool[(i + t) % len(neighbor_pool)]
                answer = ensure_fact(neighbor, plan.relation)
                subject, relation, tag = neighbor, plan.relation, NEIGHBOR_SUBJECT_TAG
            else:
                free = [
                    r
                    for r in relation_pool
                    if r not in taken_by_subject.get(plan.subject, set())
                ]
                relation = free[(i + t) % len(free)] if free else namer.make()
                answer = ensure_fact(plan.subject, relation)
                subject, tag = plan.subject, SAME_SUBJECT_TAG
            if task is TaskKind.QUESTION_ANSWERING:
                oos_input = _question(0, relation, subject)
                oos_expected = answer
            else:
                oos_input = _claim(0, relation, subject, answer)
                oos_expected = "Yes"
            out_of_scope.append(
                ScopedExample(input=oos_input, expected=oos_expected, scope=OutOfScope(tag))
            )
        records.append(
            EditRecord(edit=edit, in_scope=tuple(in_scope), out_of_scope=tuple(out_of_scope))
        )

    world = MockWorld(
        FactTriple(subject=s, relation=r, obj=obj) for (s, r), obj in sorted(parametric.items())
    )
    return world, records
