"""Command-line entry point.

Machine-readable output goes to stdout as JSON (or to --out files); human
tables go to stderr, or to stdout when --pretty is set. Exit codes: 0
success, 1 user or data error, 2 reader backend error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Sequence

from .core import Edit, Notebook, NoteditError, TaskKind
from .datakit import (
    MockNliJudge,
    filter_records,
    generate_world,
    load_dataset,
    save_dataset,
)
from .engine import EditorConfig, two_step_query
from .evaluation import (
    STRATEGIES,
    report_table,
    report_to_json_bytes,
    round_report,
    run_evaluation,
)
from .reader import HttpReader, MockReader, MockWorld, ReaderError, load_world, save_world
from .retriever import NotebookIndex, recall_at_k
from .store import PredictionCache, append_note, load_notebook, save_notebook

EXIT_OK = 0
EXIT_USER_ERROR = 1
EXIT_BACKEND_ERROR = 2


def _load_or_empty(path: Path) -> Notebook:
    if not path.exists():
        return Notebook()
    notebook, issues = load_notebook(path)
    for issue in issues:
        print(f"warning: recovered past corrupt line {issue.line_no}: {issue.reason}", file=sys.stderr)
    return notebook


def _build_reader(args: argparse.Namespace):
    if args.reader == "mock":
        world = load_world(args.world) if args.world else MockWorld()
        return MockReader(world)
    if not args.base_url or not args.model:
        raise NoteditError("--reader http requires --base-url and --model")
    return HttpReader(args.base_url, args.model)


def _emit(payload: dict, pretty_text: str | None, pretty: bool) -> None:
    print(json.dumps(payload, ensure_ascii=False, sort_keys=True))
    if pretty_text:
        print(pretty_text, file=sys.stdout if pretty else sys.stderr)


def cmd_edit_add(args: argparse.Namespace) -> int:
    path = Path(args.notebook)
    notebook = _load_or_empty(path)
    note = notebook.append(Edit(id=args.id, statement=args.statement, task=TaskKind(args.task)))
    if path.exists():
        append_note(path, note)
    else:
        save_notebook(notebook, path)
    _emit({"appended": {"seq": note.seq, "edit_id": note.edit_id, "text": note.text}}, None, args.pretty)
    return EXIT_OK


def cmd_edit_list(args: argparse.Namespace) -> int:
    notebook = _load_or_empty(Path(args.notebook))
    rows = [{"seq": note.seq, "edit_id": note.edit_id, "text": note.text} for note in notebook]
    table = "\n".join(f"{row['seq']:>6}  {row['edit_id']:<12}  {row['text']}" for row in rows)
    _emit({"notes": rows}, table or None, args.pretty)
    return EXIT_OK


def cmd_query(args: argparse.Namespace) -> int:
    notebook = _load_or_empty(Path(args.notebook))
    reader = _build_reader(args)
    config = EditorConfig(k=args.k, task=TaskKind(args.task))
    trace = two_step_query(notebook, reader, config, args.input)
    payload: dict = {"answer": trace.final.normalized, "raw": trace.final.raw, "fell_back": trace.fell_back}
    if args.trace:
        payload["retrieved"] = [
            {"seq": seq, "score": score, "text": notebook.note_at(seq).text}
            for seq, score in trace.retrieved.items
        ]
        payload["with_context_answer"] = trace.with_context_answer.raw
    pretty = f"answer: {trace.final.normalized}  (fell_back={trace.fell_back})"
    _emit(payload, pretty, args.pretty)
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    records, issues = load_dataset(args.dataset)
    for issue in issues:
        print(f"warning: line {issue.line_no} field {issue.field}: {issue.message}", file=sys.stderr)
    if not records:
        raise NoteditError("dataset contains no usable records")
    reader = _build_reader(args)
    config = EditorConfig(k=args.k, task=TaskKind(args.task))
    cache = PredictionCache(args.cache) if args.cache else PredictionCache()
    run = run_evaluation(records, args.strategy, config, reader, cache=cache, parallel=args.parallel)
    body = report_to_json_bytes(run.report)
    if args.out:
        Path(args.out).write_bytes(body)
    else:
        sys.stdout.write(body.decode("utf-8"))
    table = report_table(run.report, label=args.strategy)
    print(table, file=sys.stdout if args.pretty else sys.stderr)
    return EXIT_OK


def cmd_recall(args: argparse.Namespace) -> int:
    records, issues = load_dataset(args.dataset)
    for issue in issues:
        print(f"warning: line {issue.line_no} field {issue.field}: {issue.message}", file=sys.stderr)
    if not records:
        raise NoteditError("dataset contains no usable records")
    notebook = Notebook()
    for record in records:
        notebook.append(record.edit)
    index = NotebookIndex()
    index.sync(notebook)
    k_values = sorted({int(part) for part in args.k_list.split(",") if part.strip()})
    if not k_values:
        raise NoteditError("--k-list must name at least one k")
    queries = [
        (example.input, {notebook.seq_of(edit_id) for edit_id in example.scope.edit_ids})
        for record in records
        for example in record.in_scope
    ]
    if not queries:
        raise NoteditError("dataset has no in-scope examples to retrieve for")
    table_rows = []
    results = {}
    for k in k_values:
        recall = recall_at_k((index.top_k(text, k), gold) for text, gold in queries)
        results[str(k)] = 100.0 * recall
        table_rows.append(f"{k:>6}  {round_report(100.0 * recall):>6.1f}")
    table = "\n".join([f"{'k':>6}  {'recall':>6}"] + table_rows)
    _emit({"recall_at_k": results}, table, args.pretty)
    return EXIT_OK


def cmd_filter(args: argparse.Namespace) -> int:
    records, issues = load_dataset(args.dataset)
    for issue in issues:
        print(f"warning: line {issue.line_no} field {issue.field}: {issue.message}", file=sys.stderr)
    judge = MockNliJudge()
    if args.judge_table:
        judge = MockNliJudge.from_json(json.loads(Path(args.judge_table).read_text(encoding="utf-8")))
    filtered, decisions = filter_records(judge, records)
    save_dataset(filtered, args.out)
    if args.audit:
        with Path(args.audit).open("w", encoding="utf-8", newline="\n") as handle:
            for decision in decisions:
                handle.write(json.dumps(decision.to_json(), ensure_ascii=False, sort_keys=True) + "\n")
    kept = sum(1 for d in decisions if d.kept)
    _emit(
        {"examples_considered": len(decisions), "examples_kept": kept, "records": len(filtered)},
        f"kept {kept}/{len(decisions)} examples across {len(filtered)} records",
        args.pretty,
    )
    return EXIT_OK


def cmd_gen_world(args: argparse.Namespace) -> int:
    world, records = generate_world(
        seed=args.seed,
        n_facts=args.n_facts,
        n_paraphrases=args.n_paraphrases,
        n_oos_per_edit=args.n_oos,
        two_hop_fraction=args.two_hop_fraction,
        task=TaskKind(args.task),
    )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_world(world, out_dir / "world.json")
    save_dataset(records, out_dir / "dataset.jsonl")
    _emit(
        {
            "world": str(out_dir / "world.json"),
            "dataset": str(out_dir / "dataset.jsonl"),
            "edits": len(records),
            "facts": len(world),
        },
        f"wrote {len(records)} edits and {len(world)} facts to {out_dir}",
        args.pretty,
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="notedit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--pretty", action="store_true", help="print human tables to stdout")

    reader_opts = argparse.ArgumentParser(add_help=False)
    reader_opts.add_argument("--reader", choices=("mock", "http"), default="mock")
    reader_opts.add_argument("--world", help="world JSON for the mock reader")
    reader_opts.add_argument("--base-url", help="chat-completions base URL for the http reader")
    reader_opts.add_argument("--model", help="model id for the http reader")
    reader_opts.add_argument("--k", type=int, default=5)
    reader_opts.add_argument("--task", choices=("qa", "fc"), default="qa")

    p = sub.add_parser("edit-add", parents=[common], help="append one edit to the notebook")
    p.add_argument("--notebook", required=True)
    p.add_argument("--id", required=True)
    p.add_argument("--statement", required=True)
    p.add_argument("--task", choices=("qa", "fc"), default="qa")
    p.set_defaults(func=cmd_edit_add)

    p = sub.add_parser("edit-list", parents=[common], help="list the persisted notebook")
    p.add_argument("--notebook", required=True)
    p.set_defaults(func=cmd_edit_list)

    p = sub.add_parser("query", parents=[common, reader_opts], help="two-step query over the notebook")
    p.add_argument("--notebook", required=True)
    p.add_argument("--trace", action="store_true", help="include retrieved notes and fallback flag")
    p.add_argument("input")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("eval", parents=[common, reader_opts], help="score a strategy on a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--strategy", choices=STRATEGIES, default="two_step")
    p.add_argument("--out", help="write the metrics report JSON here instead of stdout")
    p.add_argument("--cache", help="JSONL file for the base-prediction cache")
    p.add_argument("--parallel", type=int, default=1)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("recall", parents=[common], help="retrieval recall at several k")
    p.add_argument("--dataset", required=True)
    p.add_argument("--k-list", default="1,2,5,10", help="comma-separated k values")
    p.set_defaults(func=cmd_recall)

    p = sub.add_parser("filter", parents=[common], help="NLI-threshold filtering of a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--audit", help="write per-example decisions JSONL here")
    p.add_argument("--judge-table", help="JSON file with judge table entries and default")
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("gen-world", parents=[common], help="generate a seeded synthetic world")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--n-facts", type=int, default=128)
    p.add_argument("--n-paraphrases", type=int, default=1)
    p.add_argument("--n-oos", type=int, default=2)
    p.add_argument("--two-hop-fraction", type=float, default=0.125)
    p.add_argument("--task", choices=("qa", "fc"), default="qa")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_gen_world)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ReaderError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BACKEND_ERROR
    except (NoteditError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER_ERROR


if __name__ == "__main__":
    raise SystemExit(main())
