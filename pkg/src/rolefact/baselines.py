"""Comparison systems: plain role prompting, knowledge-guided rewriting (keep
only retrieval-supported facts), and self-reflection (keep only facts passing
the sampled self-check gate).

All three produce the same ResponseTrace shape as the verification pipeline so
traces are directly comparable; knowledge-guided rewriting is behaviorally
identical to the pipeline with m=0.
"""

from __future__ import annotations

import time
from dataclasses import replace
from typing import Callable

from .knowledge import KnowledgeBase
from .llm import LLMBackend
from .pipeline import (
    STATUS_RETRIEVAL,
    STATUS_SELF,
    STATUS_UNSUPPORTED,
    AtomicFact,
    PipelineConfig,
    ResponseTrace,
    StageRecord,
    _timed,
    confidence_gate,
    decompose,
    fact_check_retrieval,
    fact_check_self,
    generate_intermediate,
    retrieved_to_dicts,
    self_reflect_update,
    task_to_dict,
)
from .retrieval import Document


def _setup(backend, kb, retriever, task, cfg, clock, timings, stages, purpose):
    story = kb.story(task.story_id)
    query = task.question_or_context

    with _timed(timings, "ret", clock):
        hits: list[tuple[Document, float]] = []
        if cfg.use_retrieval and cfg.n > 0:
            hits = retriever.retrieve(
                task.story_id, query, cfg.n, cutoff=getattr(task, "cutoff", None)
            )

    with _timed(timings, "irg", clock):
        profile = None
        if cfg.use_profile:
            profile = kb.get_profile(task.story_id, task.character).description
        intermediate, record = generate_intermediate(
            backend, query, task.character, story.title, profile, hits, cfg,
            purpose=purpose,
        )
        stages.append(record)

    return story, query, hits, intermediate


def baseline_respond(
    backend: LLMBackend,
    kb: KnowledgeBase,
    retriever,
    task,
    cfg: PipelineConfig | None = None,
    clock: Callable[[], float] = time.perf_counter,
) -> ResponseTrace:
    """Role prompt + profile + retrieved dialogue; no verification at all."""
    if cfg is None:
        cfg = PipelineConfig()
    timings: dict[str, float] = {}
    stages: list[StageRecord] = []
    _, query, hits, intermediate = _setup(
        backend, kb, retriever, task, cfg, clock, timings, stages, "baseline"
    )
    return ResponseTrace(
        method="baseline",
        task=task_to_dict(task),
        query=query,
        config=cfg.to_dict(),
        retrieved=retrieved_to_dicts(hits),
        intermediate=intermediate,
        facts=[],
        final=intermediate,
        stages=stages,
        timings=timings,
    )


def kgr_respond(
    backend: LLMBackend,
    kb: KnowledgeBase,
    retriever,
    task,
    cfg: PipelineConfig | None = None,
    clock: Callable[[], float] = time.perf_counter,
) -> ResponseTrace:
    """Knowledge-guided rewriting: drop every fact absent from retrieved
    knowledge; no self-check, no gate."""
    if cfg is None:
        cfg = PipelineConfig()
    timings: dict[str, float] = {}
    stages: list[StageRecord] = []
    story, query, hits, intermediate = _setup(
        backend, kb, retriever, task, cfg, clock, timings, stages, "baseline"
    )

    with _timed(timings, "dec", clock):
        fact_texts, record = decompose(backend, intermediate)
        stages.append(record)

    facts: list[AtomicFact] = []
    evidence_ids = tuple(doc.doc_id for doc, _ in hits)
    with _timed(timings, "verify", clock):
        for i, text in enumerate(fact_texts, start=1):
            fact_id = f"f{i}"
            supported, record = fact_check_retrieval(backend, text, hits)
            if record is not None:
                stages.append(replace(record, stage=f"fcr[{fact_id}]"))
            if supported:
                facts.append(
                    AtomicFact(fact_id, text, STATUS_RETRIEVAL, evidence=evidence_ids)
                )
            else:
                facts.append(AtomicFact(fact_id, text, STATUS_UNSUPPORTED))

    removed = [f.text for f in facts if f.removed]
    if removed:
        with _timed(timings, "sru", clock):
            final, record = self_reflect_update(
                backend, query, intermediate, removed, task.character, story.title
            )
            stages.append(record)
    else:
        final = intermediate

    return ResponseTrace(
        method="kgr",
        task=task_to_dict(task),
        query=query,
        config=cfg.to_dict(),
        retrieved=retrieved_to_dicts(hits),
        intermediate=intermediate,
        facts=facts,
        final=final,
        stages=stages,
        timings=timings,
    )


def sr_respond(
    backend: LLMBackend,
    kb: KnowledgeBase,
    retriever,
    task,
    cfg: PipelineConfig | None = None,
    clock: Callable[[], float] = time.perf_counter,
) -> ResponseTrace:
    """Self-reflection: keep facts the model itself supports in k/m >= t of
    sampled self-checks; retrieval is never consulted for verification."""
    if cfg is None:
        cfg = PipelineConfig()
    timings: dict[str, float] = {}
    stages: list[StageRecord] = []
    story, query, hits, intermediate = _setup(
        backend, kb, retriever, task, cfg, clock, timings, stages, "baseline"
    )

    with _timed(timings, "dec", clock):
        fact_texts, record = decompose(backend, intermediate)
        stages.append(record)

    facts: list[AtomicFact] = []
    with _timed(timings, "verify", clock):
        for i, text in enumerate(fact_texts, start=1):
            fact_id = f"f{i}"
            k, records = fact_check_self(
                backend, text, task.character, story.title, cfg.m
            )
            for rec in records:
                stages.append(replace(rec, stage=f"fcs[{fact_id}]{rec.stage[3:]}"))
            status = STATUS_SELF if confidence_gate(k, cfg.m, cfg.t) else STATUS_UNSUPPORTED
            facts.append(AtomicFact(fact_id, text, status, k=k, m=cfg.m))

    removed = [f.text for f in facts if f.removed]
    if removed:
        with _timed(timings, "sru", clock):
            final, record = self_reflect_update(
                backend, query, intermediate, removed, task.character, story.title
            )
            stages.append(record)
    else:
        final = intermediate

    return ResponseTrace(
        method="sr",
        task=task_to_dict(task),
        query=query,
        config=cfg.to_dict(),
        retrieved=retrieved_to_dicts(hits),
        intermediate=intermediate,
        facts=facts,
        final=final,
        stages=stages,
        timings=timings,
    )
