"""Metrics and experiment harness: Fact Score, supported facts per response,
an automated temporal-hallucination proxy, threshold/sample-size calibration
sweeps, and popularity-bucketed reporting.

A response's atomic facts are judged against the knowledge in scope for its
task: cutoff-limited events for dialogue completion and scene-grounded
interviews, the full story otherwise. The temporal proxy counts facts that the
cutoff-limited evidence rejects but the full story supports, i.e. knowledge
leaked from the character's future.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace
from fractions import Fraction
from pathlib import Path

from . import pipeline
from .baselines import baseline_respond, kgr_respond, sr_respond
from .knowledge import KnowledgeBase, KnowledgeEvent
from .llm import ChatRequest, LLMBackend, complete
from .pipeline import PipelineConfig, ResponseTrace, VERIFY_PARAMS
from .prompts import parse_fact_list, parse_verdict, render_dec_prompt, render_fcr_prompt

logger = logging.getLogger(__name__)

TASK_TYPES = ("adversarial", "open_ended", "dialogue_completion", "scene_grounded")
CUTOFF_TASK_TYPES = frozenset({"dialogue_completion", "scene_grounded"})

METHODS = {
    "baseline": baseline_respond,
    "kgr": kgr_respond,
    "sr": sr_respond,
    "rolefact": pipeline.run,
}


class TaskFileError(ValueError):
    pass


@dataclass(frozen=True)
class InterviewTask:
    task_id: str
    task_type: str
    story_id: str
    character: str
    question_or_context: str
    cutoff: int | None = None
    popularity_rank: int | None = None

    def __post_init__(self) -> None:
        if self.task_type not in TASK_TYPES:
            raise ValueError(f"unknown task_type {self.task_type!r}")
        if self.task_type in CUTOFF_TASK_TYPES:
            if self.cutoff is None:
                raise ValueError(f"task_type {self.task_type} requires a cutoff")
        elif self.cutoff is not None:
            raise ValueError(f"task_type {self.task_type} must not carry a cutoff")
        if not self.question_or_context:
            raise ValueError("question_or_context must be non-empty")
        if self.popularity_rank is not None and self.popularity_rank < 1:
            raise ValueError("popularity_rank must be a positive integer")


def load_tasks(path: str | Path) -> list[InterviewTask]:
    tasks = []
    seen: set[str] = set()
    with Path(path).open(encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise TaskFileError(f"line {line_no}: invalid JSON ({exc.msg})") from exc
            try:
                task = InterviewTask(
                    task_id=str(record["task_id"]),
                    task_type=str(record["task_type"]),
                    story_id=str(record["story_id"]),
                    character=str(record["character"]),
                    question_or_context=str(record["question_or_context"]),
                    cutoff=record.get("cutoff"),
                    popularity_rank=record.get("popularity_rank"),
                )
            except KeyError as exc:
                raise TaskFileError(f"line {line_no}: missing field {exc.args[0]!r}") from None
            except ValueError as exc:
                raise TaskFileError(f"line {line_no}: {exc}") from None
            if task.task_id in seen:
                raise TaskFileError(f"line {line_no}: duplicate task_id {task.task_id!r}")
            seen.add(task.task_id)
            tasks.append(task)
    return tasks


@dataclass(frozen=True)
class JudgedFact:
    text: str
    supported: bool
    judged_against: str


def _judge_one(backend: LLMBackend, fact: str, evidence: list[KnowledgeEvent]) -> bool:
    prompt = render_fcr_prompt(fact, evidence)
    response = complete(
        backend, ChatRequest(user_prompt=prompt, params=VERIFY_PARAMS, purpose="judge")
    )
    verdict = parse_verdict(response.text)
    if verdict is None:
        logger.warning("unparseable judge verdict; counting as unsupported")
        return False
    return verdict


def judge_facts(
    backend: LLMBackend,
    response_text: str,
    evidence_events: list[KnowledgeEvent],
    scope: str = "full_story",
) -> list[JudgedFact]:
    """Decompose a response and judge each fact against the given evidence."""
    prompt = render_dec_prompt(response_text)
    decomposition = complete(
        backend, ChatRequest(user_prompt=prompt, params=VERIFY_PARAMS, purpose="judge")
    )
    facts = parse_fact_list(decomposition.text)
    judged = []
    for fact in facts:
        supported = _judge_one(backend, fact, evidence_events) if evidence_events else False
        judged.append(JudgedFact(text=fact, supported=supported, judged_against=scope))
    return judged


def fact_score(judged_responses: list[list[JudgedFact]]) -> float:
    """Micro-averaged factual precision: supported facts / total facts."""
    if not judged_responses:
        raise ValueError("fact_score needs at least one judged response")
    total = sum(len(facts) for facts in judged_responses)
    if total == 0:
        return 0.0
    supported = sum(f.supported for facts in judged_responses for f in facts)
    return supported / total


def fact_score_macro(judged_responses: list[list[JudgedFact]]) -> float:
    """Per-response average of precision; fact-free responses are skipped."""
    if not judged_responses:
        raise ValueError("fact_score_macro needs at least one judged response")
    ratios = [
        sum(f.supported for f in facts) / len(facts)
        for facts in judged_responses
        if facts
    ]
    if not ratios:
        return 0.0
    return sum(ratios) / len(ratios)


def sfpr(judged_responses: list[list[JudgedFact]]) -> float:
    """Supported facts per response; fact-free responses count in the denominator."""
    if not judged_responses:
        raise ValueError("sfpr needs at least one judged response")
    supported = sum(f.supported for facts in judged_responses for f in facts)
    return supported / len(judged_responses)


def thr_proxy(
    backend: LLMBackend, trace: ResponseTrace, kb: KnowledgeBase, cutoff: int | None
) -> int:
    """Count of temporal-hallucination facts in one response.

    A fact counts iff the cutoff-limited evidence rejects it but the full story
    supports it; facts supported nowhere are cross-universe, not temporal.
    """
    if cutoff is None:
        raise ValueError("thr_proxy requires a temporal cutoff")
    story_id = trace.task["story_id"]
    limited = kb.events_up_to(story_id, cutoff)
    full = kb.events_up_to(story_id, None)
    prompt = render_dec_prompt(trace.final)
    decomposition = complete(
        backend, ChatRequest(user_prompt=prompt, params=VERIFY_PARAMS, purpose="judge")
    )
    count = 0
    for fact in parse_fact_list(decomposition.text):
        supported_limited = _judge_one(backend, fact, limited) if limited else False
        if supported_limited:
            continue
        if _judge_one(backend, fact, full):
            count += 1
    return count


@dataclass
class MetricBlock:
    responses: int
    facts: int
    supported: int
    fact_score: float
    fact_score_macro: float
    sfpr: float
    thr_responses: int = 0
    thr_facts: int = 0

    @property
    def thr_per_100(self) -> float | None:
        if self.thr_responses == 0:
            return None
        return 100.0 * self.thr_facts / self.thr_responses

    def to_dict(self) -> dict:
        return {
            "responses": self.responses,
            "facts": self.facts,
            "supported": self.supported,
            "fact_score": self.fact_score,
            "fact_score_macro": self.fact_score_macro,
            "sfpr": self.sfpr,
            "thr_responses": self.thr_responses,
            "thr_facts": self.thr_facts,
            "thr_per_100": self.thr_per_100,
        }


@dataclass
class ResponseJudgement:
    task: InterviewTask
    judged: list[JudgedFact]
    thr_count: int | None = None


def _metric_block(judgements: list[ResponseJudgement]) -> MetricBlock:
    judged_lists = [j.judged for j in judgements]
    thr_rows = [j for j in judgements if j.thr_count is not None]
    return MetricBlock(
        responses=len(judgements),
        facts=sum(len(j.judged) for j in judgements),
        supported=sum(f.supported for j in judgements for f in j.judged),
        fact_score=fact_score(judged_lists),
        fact_score_macro=fact_score_macro(judged_lists),
        sfpr=sfpr(judged_lists),
        thr_responses=len(thr_rows),
        thr_facts=sum(j.thr_count for j in thr_rows),
    )


@dataclass
class EvalReport:
    overall: MetricBlock
    per_task_type: dict[str, MetricBlock]
    per_popularity_bucket: dict[str, MetricBlock]
    excluding_top10: MetricBlock | None

    def to_dict(self) -> dict:
        return {
            "overall": self.overall.to_dict(),
            "per_task_type": {k: v.to_dict() for k, v in self.per_task_type.items()},
            "per_popularity_bucket": {
                k: v.to_dict() for k, v in self.per_popularity_bucket.items()
            },
            "excluding_top10": (
                self.excluding_top10.to_dict() if self.excluding_top10 else None
            ),
        }


def popularity_buckets(
    judgements: list[ResponseJudgement], bucket_size: int = 10
) -> tuple[dict[str, MetricBlock], MetricBlock | None]:
    """Metrics grouped by popularity-rank buckets, plus the aggregate over
    everything below the top ten; unranked tasks are skipped with a warning."""
    if bucket_size < 1:
        raise ValueError("bucket_size must be >= 1")
    ranked = []
    for judgement in judgements:
        if judgement.task.popularity_rank is None:
            logger.warning(
                "task %s has no popularity_rank; excluded from popularity buckets",
                judgement.task.task_id,
            )
            continue
        ranked.append(judgement)
    buckets: dict[str, list[ResponseJudgement]] = {}
    for judgement in ranked:
        rank = judgement.task.popularity_rank
        low = (rank - 1) // bucket_size * bucket_size + 1
        buckets.setdefault(f"{low}-{low + bucket_size - 1}", []).append(judgement)
    bucket_metrics = {
        key: _metric_block(rows)
        for key, rows in sorted(buckets.items(), key=lambda kv: int(kv[0].split("-")[0]))
    }
    tail = [j for j in ranked if j.task.popularity_rank > 10]
    if not tail and ranked:
        logger.warning("all ranked tasks are in the top ten; excluding-top-10 aggregate is empty")
    return bucket_metrics, _metric_block(tail) if tail else None


def judgement_for_trace(
    backend: LLMBackend, kb: KnowledgeBase, task: InterviewTask, trace: ResponseTrace
) -> ResponseJudgement:
    if task.task_type in CUTOFF_TASK_TYPES:
        evidence = kb.events_up_to(task.story_id, task.cutoff)
        scope = f"events<={task.cutoff}"
        thr_count = thr_proxy(backend, trace, kb, task.cutoff)
    else:
        evidence = kb.events_up_to(task.story_id, None)
        scope = "full_story"
        thr_count = None
    judged = judge_facts(backend, trace.final, evidence, scope=scope)
    return ResponseJudgement(task=task, judged=judged, thr_count=thr_count)


def tasks_from_traces(traces: list[ResponseTrace]) -> list[InterviewTask]:
    """Reconstruct task records from the metadata embedded in traces."""
    tasks: dict[str, InterviewTask] = {}
    for trace in traces:
        meta = trace.task
        task_id = str(meta["task_id"])
        if task_id in tasks:
            continue
        tasks[task_id] = InterviewTask(
            task_id=task_id,
            task_type=str(meta["task_type"]),
            story_id=str(meta["story_id"]),
            character=str(meta["character"]),
            question_or_context=trace.query,
            cutoff=meta.get("cutoff"),
            popularity_rank=meta.get("popularity_rank"),
        )
    return list(tasks.values())


def evaluate_traces(
    backend: LLMBackend,
    kb: KnowledgeBase,
    tasks: list[InterviewTask],
    traces: list[ResponseTrace],
    bucket_size: int = 10,
    parallel: int = 1,
) -> EvalReport:
    by_id = {task.task_id: task for task in tasks}
    pairs = []
    for trace in traces:
        task_id = trace.task.get("task_id")
        if task_id not in by_id:
            raise ValueError(f"trace references unknown task_id {task_id!r}")
        pairs.append((by_id[task_id], trace))
    if parallel > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=parallel) as pool:
            futures = [
                pool.submit(judgement_for_trace, backend, kb, task, trace)
                for task, trace in pairs
            ]
            judgements = [f.result() for f in futures]
    else:
        judgements = [
            judgement_for_trace(backend, kb, task, trace) for task, trace in pairs
        ]
    if not judgements:
        raise ValueError("no traces to evaluate")
    per_type = {
        task_type: _metric_block(rows)
        for task_type in TASK_TYPES
        if (rows := [j for j in judgements if j.task.task_type == task_type])
    }
    buckets, excluding = popularity_buckets(judgements, bucket_size=bucket_size)
    return EvalReport(
        overall=_metric_block(judgements),
        per_task_type=per_type,
        per_popularity_bucket=buckets,
        excluding_top10=excluding,
    )


def calibrate(
    backend: LLMBackend,
    kb: KnowledgeBase,
    retriever,
    tasks: list[InterviewTask],
    t_grid: list[Fraction],
    m_grid: list[int],
    cfg: PipelineConfig | None = None,
) -> list[dict]:
    """Metrics for every (t, m) grid cell.

    Self-check samples are cached by sample index, so sweeping t reuses them;
    only growing m triggers new calls. The m=0 column reduces to
    knowledge-guided rewriting.
    """
    if not t_grid or not m_grid:
        raise ValueError("calibration grids must be non-empty")
    if cfg is None:
        cfg = PipelineConfig()
    rows = []
    for m in m_grid:
        for t in t_grid:
            cell_cfg = replace(cfg, m=m, t=pipeline.as_fraction(t))
            traces = [
                pipeline.run(backend, kb, retriever, task, cell_cfg) for task in tasks
            ]
            report = evaluate_traces(backend, kb, tasks, traces)
            rows.append(
                {
                    "t": str(cell_cfg.t),
                    "m": m,
                    "fact_score": report.overall.fact_score,
                    "sfpr": report.overall.sfpr,
                    "thr_per_100": report.overall.thr_per_100,
                }
            )
    return rows


def format_report_table(reports: dict[str, EvalReport]) -> str:
    """Aligned text table: method rows, task-type columns, fact_score/sfpr cells."""
    types = [t for t in TASK_TYPES if any(t in r.per_task_type for r in reports.values())]
    if not types:
        types = list(TASK_TYPES)
    headers = ["method"] + [f"{t} FS" for t in types] + [f"{t} SFPR" for t in types]
    rows = []
    for method, report in reports.items():
        cells = [method]
        for t in types:
            block = report.per_task_type.get(t)
            cells.append(f"{block.fact_score:.3f}" if block else "-")
        for t in types:
            block = report.per_task_type.get(t)
            cells.append(f"{block.sfpr:.2f}" if block else "-")
        rows.append(cells)
    widths = [
        max(len(headers[i]), *(len(row[i]) for row in rows)) if rows else len(headers[i])
        for i in range(len(headers))
    ]
    lines = ["  ".join(h.ljust(w) for h, w in zip(headers, widths))]
    lines.append("  ".join("-" * w for w in widths))
    for row in rows:
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)))
    return "\n".join(lines)
