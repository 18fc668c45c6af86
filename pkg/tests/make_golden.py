"""Regenerates tests/data/golden_traces.jsonl: the frozen end-to-end traces
for the fixture suite, one JSON document per task, produced with a fresh
scripted backend and a counting clock. Run after any change to the prompt
templates or fixtures:

    python3 tests/make_golden.py
"""

from __future__ import annotations

from pathlib import Path

from conftest import counting_clock, make_mock_backend
from rolefact.evaluation import load_tasks
from rolefact.knowledge import load_corpus
from rolefact.pipeline import PipelineConfig, run
from rolefact.retrieval import BM25Retriever

DATA = Path(__file__).parent / "data"


def generate_trace_lines() -> list[str]:
    kb = load_corpus(DATA / "corpus.jsonl")
    retriever = BM25Retriever(kb)
    tasks = load_tasks(DATA / "tasks.jsonl")
    backend = make_mock_backend()
    lines = []
    for task in tasks:
        trace = run(backend, kb, retriever, task, PipelineConfig(), clock=counting_clock())
        lines.append(trace.to_json())
    return lines


def main() -> None:
    out = DATA / "golden_traces.jsonl"
    out.write_text("\n".join(generate_trace_lines()) + "\n", encoding="utf-8")
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
