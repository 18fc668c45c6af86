"""Operator entry point: validate corpora, run batch interviews, evaluate,
calibrate, and serve the HTTP API.

Exit codes: 0 success, 1 one or more tasks failed, 2 usage or validation
errors. The completion cache makes every command idempotent: re-running an
interview with a warm cache issues no backend calls.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import pipeline
from .evaluation import (
    METHODS,
    TaskFileError,
    calibrate,
    evaluate_traces,
    format_report_table,
    load_tasks,
    tasks_from_traces,
)
from .knowledge import (
    CorpusError,
    SegmentationError,
    event_to_record,
    load_corpus,
    segment_script,
)
from .llm import MockBackend, RemoteBackend, ResponseCache
from .pipeline import PipelineConfig, trace_from_dict
from .retrieval import BM25Retriever

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_TASK_FAILURES = 1
EXIT_USAGE = 2


def _add_backend_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--mock",
        metavar="FIXTURES",
        help="use the scripted mock backend with this fixture JSONL instead of "
        "the remote backend configured via ROLEFACT_* env vars",
    )
    parser.add_argument("--cache", metavar="FILE", help="persistent completion cache file")
    parser.add_argument("--seed", type=int, default=None, help="seed for retry jitter")


def _make_backend(args: argparse.Namespace):
    cache = ResponseCache(args.cache) if args.cache else None
    if args.mock:
        return MockBackend.from_jsonl(args.mock, cache=cache)
    try:
        return RemoteBackend(cache=cache, seed=args.seed)
    except ValueError as exc:
        raise _usage_error(str(exc))


def _usage_error(message: str) -> SystemExit:
    print(f"error: {message}", file=sys.stderr)
    return SystemExit(EXIT_USAGE)


def _config_from_args(args: argparse.Namespace) -> PipelineConfig:
    return PipelineConfig(
        n=args.n,
        m=args.m,
        t=pipeline.as_fraction(args.t),
        anonymize=args.anonymize,
        use_retrieval=not args.no_retrieval,
        use_profile=not args.no_profile,
    )


def cmd_ingest(args: argparse.Namespace) -> int:
    scripts_dir = Path(args.scripts)
    if not scripts_dir.is_dir():
        raise _usage_error(f"not a directory: {scripts_dir}")
    files = sorted(p for p in scripts_dir.iterdir() if p.is_file())
    if not files:
        raise _usage_error(f"no script files in {scripts_dir}")

    out_lines: list[str] = []
    failures = 0
    backend = None
    for path in files:
        try:
            if path.suffix == ".jsonl":
                out_lines.extend(
                    line.rstrip("\n") for line in path.read_text(encoding="utf-8").splitlines()
                    if line.strip()
                )
            elif args.llm_segment:
                if backend is None:
                    backend = _make_backend(args)
                events = segment_script(
                    path.read_text(encoding="utf-8"), backend, story_id=path.stem
                )
                out_lines.extend(
                    json.dumps(event_to_record(e), ensure_ascii=False) for e in events
                )
            else:
                print(
                    f"{path}: raw script text needs --llm-segment", file=sys.stderr
                )
                failures += 1
        except (SegmentationError, OSError) as exc:
            print(f"{path}: {exc}", file=sys.stderr)
            failures += 1
    if failures:
        return EXIT_TASK_FAILURES

    out_path = Path(args.out)
    out_path.write_text("\n".join(out_lines) + "\n", encoding="utf-8")
    try:
        kb = load_corpus(out_path)
    except CorpusError as exc:
        print(f"{out_path}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    total_events = sum(len(s.events) for s in kb.stories.values())
    print(f"wrote {out_path}: {len(kb.stories)} stories, {total_events} events")
    return EXIT_OK


def cmd_interview(args: argparse.Namespace) -> int:
    kb = load_corpus(args.kb)
    tasks = load_tasks(args.tasks)
    backend = _make_backend(args)
    retriever = BM25Retriever(kb)
    cfg = _config_from_args(args)
    respond = METHODS[args.method]

    def run_one(task):
        return respond(backend, kb, retriever, task, cfg)

    results: list[tuple[object, object | None, Exception | None]] = []
    if args.parallel > 1:
        with ThreadPoolExecutor(max_workers=args.parallel) as pool:
            futures = [(task, pool.submit(run_one, task)) for task in tasks]
            for task, future in futures:
                try:
                    results.append((task, future.result(), None))
                except Exception as exc:
                    results.append((task, None, exc))
    else:
        for task in tasks:
            try:
                results.append((task, run_one(task), None))
            except Exception as exc:
                results.append((task, None, exc))

    failures = 0
    with Path(args.out).open("w", encoding="utf-8") as fh:
        for task, trace, error in results:
            if error is not None:
                failures += 1
                print(f"task {task.task_id}: {error}", file=sys.stderr)
                fh.write(
                    json.dumps({"task_id": task.task_id, "error": str(error)}) + "\n"
                )
            else:
                fh.write(trace.to_json() + "\n")
    print(f"wrote {args.out}: {len(results) - failures} traces, {failures} failures")
    return EXIT_TASK_FAILURES if failures else EXIT_OK


def _load_traces(path: str | Path):
    traces = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            if "error" in record:
                continue
            traces.append(trace_from_dict(record))
    return traces


def cmd_eval(args: argparse.Namespace) -> int:
    kb = load_corpus(args.kb)
    backend = _make_backend(args)
    traces = _load_traces(args.traces)
    tasks = load_tasks(args.tasks) if args.tasks else tasks_from_traces(traces)

    by_method: dict[str, list] = {}
    for trace in traces:
        by_method.setdefault(trace.method, []).append(trace)
    reports = {}
    for method, method_traces in sorted(by_method.items()):
        task_ids = {t.task["task_id"] for t in method_traces}
        method_tasks = [task for task in tasks if task.task_id in task_ids]
        reports[method] = evaluate_traces(
            backend, kb, method_tasks, method_traces, parallel=args.parallel
        )

    print(format_report_table(reports))
    if args.out:
        payload = {method: report.to_dict() for method, report in reports.items()}
        Path(args.out).write_text(
            json.dumps(payload, indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
        )
        print(f"wrote {args.out}")
    return EXIT_OK


def cmd_calibrate(args: argparse.Namespace) -> int:
    kb = load_corpus(args.kb)
    tasks = load_tasks(args.tasks)
    backend = _make_backend(args)
    retriever = BM25Retriever(kb)
    try:
        t_grid = [pipeline.as_fraction(part) for part in args.t_grid.split(",") if part]
        m_grid = [int(part) for part in args.m_grid.split(",") if part]
    except ValueError as exc:
        raise _usage_error(f"bad grid: {exc}")
    rows = calibrate(backend, kb, retriever, tasks, t_grid, m_grid, _config_from_args(args))
    header = f"{'t':>6} {'m':>3} {'fact_score':>11} {'sfpr':>7} {'thr_per_100':>12}"
    print(header)
    for row in rows:
        thr = "-" if row["thr_per_100"] is None else f"{row['thr_per_100']:.1f}"
        print(
            f"{row['t']:>6} {row['m']:>3} {row['fact_score']:>11.3f} "
            f"{row['sfpr']:>7.2f} {thr:>12}"
        )
    if args.out:
        Path(args.out).write_text(
            json.dumps(rows, indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
        )
        print(f"wrote {args.out}")
    return EXIT_OK


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service import create_app

    kb = load_corpus(args.kb)
    backend = _make_backend(args)
    app = create_app(
        kb,
        BM25Retriever(kb),
        backend,
        cors=args.cors,
        session_log_dir=args.session_log,
        ui_dir=args.ui,
    )
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rolefact",
        description="Script-grounded character role-play with fact verification",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_ingest = sub.add_parser("ingest", help="validate or build a corpus file")
    p_ingest.add_argument("--scripts", required=True, help="directory of script files")
    p_ingest.add_argument("--out", required=True, help="output corpus JSONL")
    p_ingest.add_argument(
        "--llm-segment", action="store_true", help="segment raw text via the LLM backend"
    )
    _add_backend_args(p_ingest)
    p_ingest.set_defaults(func=cmd_ingest)

    p_interview = sub.add_parser("interview", help="run batch interviews")
    p_interview.add_argument("--kb", required=True, help="corpus JSONL")
    p_interview.add_argument("--tasks", required=True, help="task JSONL")
    p_interview.add_argument("--method", choices=sorted(METHODS), default="rolefact")
    p_interview.add_argument("--out", required=True, help="output trace JSONL")
    p_interview.add_argument("--t", default="3/5", help="confidence threshold (rational)")
    p_interview.add_argument("--m", type=int, default=5, help="self-check sample size")
    p_interview.add_argument("--n", type=int, default=5, help="retrieved document count")
    p_interview.add_argument("--anonymize", action="store_true")
    p_interview.add_argument("--no-retrieval", action="store_true")
    p_interview.add_argument("--no-profile", action="store_true")
    p_interview.add_argument("--parallel", type=int, default=1)
    _add_backend_args(p_interview)
    p_interview.set_defaults(func=cmd_interview)

    p_eval = sub.add_parser("eval", help="score traces")
    p_eval.add_argument("--kb", required=True)
    p_eval.add_argument("--traces", required=True)
    p_eval.add_argument("--tasks", help="task JSONL; defaults to metadata embedded in traces")
    p_eval.add_argument("--out", help="report JSON output path")
    p_eval.add_argument("--parallel", type=int, default=1)
    _add_backend_args(p_eval)
    p_eval.set_defaults(func=cmd_eval)

    p_cal = sub.add_parser("calibrate", help="sweep the t/m grid")
    p_cal.add_argument("--kb", required=True)
    p_cal.add_argument("--tasks", required=True)
    p_cal.add_argument("--t-grid", required=True, help="comma-separated thresholds")
    p_cal.add_argument("--m-grid", required=True, help="comma-separated sample sizes")
    p_cal.add_argument("--out", help="table JSON output path")
    p_cal.add_argument("--t", default="3/5")
    p_cal.add_argument("--m", type=int, default=5)
    p_cal.add_argument("--n", type=int, default=5)
    p_cal.add_argument("--anonymize", action="store_true")
    p_cal.add_argument("--no-retrieval", action="store_true")
    p_cal.add_argument("--no-profile", action="store_true")
    _add_backend_args(p_cal)
    p_cal.set_defaults(func=cmd_calibrate)

    p_serve = sub.add_parser("serve", help="run the HTTP service")
    p_serve.add_argument("--kb", required=True)
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8200)
    p_serve.add_argument("--cors", action="store_true", help="allow any origin")
    p_serve.add_argument("--session-log", help="directory for session append logs")
    p_serve.add_argument("--ui", help="serve this directory (built web UI) at /ui")
    _add_backend_args(p_serve)
    p_serve.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    except (CorpusError, TaskFileError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
