"""Verification pipeline: intermediate response generation, atomic fact
decomposition, retrieval and sampled self fact-checks, the confidence gate,
and the self-reflection rewrite.

One run is a value-in/value-out computation producing a full ResponseTrace.
A fact supported by retrieved evidence skips the self-check entirely; a fact
that fails both is removed from the final response by the rewrite stage.
"""

from __future__ import annotations

import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Callable

from . import prompts
from .knowledge import KnowledgeBase
from .llm import ChatRequest, GenerationParams, LLMBackend, complete, sample_n
from .retrieval import Document

logger = logging.getLogger(__name__)

# Verification stages decode deterministically; the self-check needs sampling
# diversity or the k/m vote degenerates.
VERIFY_PARAMS = GenerationParams(temperature=0.0, top_p=0.95)
SELF_CHECK_PARAMS = GenerationParams(temperature=1.0, top_p=0.95)

STATUS_RETRIEVAL = "retrieval_supported"
STATUS_SELF = "self_supported"
STATUS_UNSUPPORTED = "unsupported"


class PipelineStageError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


def as_fraction(value) -> Fraction:
    """Exact rational from Fraction, int, float, or strings like '3/5'/'0.6'."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise ValueError("threshold must be a number")
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        return Fraction(str(value))
    if isinstance(value, str):
        return Fraction(value)
    raise ValueError(f"cannot interpret {value!r} as a rational")


@dataclass
class PipelineConfig:
    n: int = 5
    m: int = 5
    t: Fraction = Fraction(3, 5)
    generation: GenerationParams = field(default_factory=GenerationParams)
    anonymize: bool = False
    use_retrieval: bool = True
    use_profile: bool = True

    def __post_init__(self) -> None:
        self.t = as_fraction(self.t)
        if self.n < 0:
            raise ValueError("n must be >= 0")
        if self.m < 0:
            raise ValueError("m must be >= 0")
        if not 0 <= self.t <= 1:
            raise ValueError("t must be in [0, 1]")

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "m": self.m,
            "t": str(self.t),
            "temperature": self.generation.temperature,
            "top_p": self.generation.top_p,
            "max_tokens": self.generation.max_tokens,
            "anonymize": self.anonymize,
            "use_retrieval": self.use_retrieval,
            "use_profile": self.use_profile,
        }


@dataclass(frozen=True)
class AtomicFact:
    fact_id: str
    text: str
    status: str
    k: int = 0
    m: int = 0
    evidence: tuple[str, ...] = ()

    @property
    def removed(self) -> bool:
        return self.status == STATUS_UNSUPPORTED

    def to_dict(self) -> dict:
        return {
            "fact_id": self.fact_id,
            "text": self.text,
            "status": self.status,
            "k": self.k,
            "m": self.m,
            "evidence": list(self.evidence),
        }


@dataclass(frozen=True)
class StageRecord:
    stage: str
    prompt: str
    completion: str

    def to_dict(self) -> dict:
        return {"stage": self.stage, "prompt": self.prompt, "completion": self.completion}


@dataclass
class ResponseTrace:
    """Full audit of one run: retrieval, intermediate response, fact verdicts,
    removed claims, and the final response."""

    method: str
    task: dict
    query: str
    config: dict
    retrieved: list[dict]
    intermediate: str
    facts: list[AtomicFact]
    final: str
    stages: list[StageRecord]
    timings: dict[str, float]

    @property
    def removed_facts(self) -> list[AtomicFact]:
        return [f for f in self.facts if f.removed]

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "task": self.task,
            "query": self.query,
            "config": self.config,
            "retrieved": self.retrieved,
            "intermediate": self.intermediate,
            "facts": [f.to_dict() for f in self.facts],
            "removed": [f.fact_id for f in self.removed_facts],
            "final": self.final,
            "stages": [s.to_dict() for s in self.stages],
            "timings": self.timings,
        }

    def to_json(self) -> str:
        import json

        return json.dumps(self.to_dict(), ensure_ascii=False)


def trace_from_dict(data: dict) -> ResponseTrace:
    return ResponseTrace(
        method=data["method"],
        task=data["task"],
        query=data["query"],
        config=data["config"],
        retrieved=data["retrieved"],
        intermediate=data["intermediate"],
        facts=[
            AtomicFact(
                fact_id=f["fact_id"],
                text=f["text"],
                status=f["status"],
                k=f["k"],
                m=f["m"],
                evidence=tuple(f["evidence"]),
            )
            for f in data["facts"]
        ],
        final=data["final"],
        stages=[StageRecord(**s) for s in data["stages"]],
        timings=data["timings"],
    )


def task_to_dict(task) -> dict:
    return {
        "task_id": getattr(task, "task_id", None),
        "task_type": getattr(task, "task_type", None),
        "story_id": task.story_id,
        "character": task.character,
        "cutoff": getattr(task, "cutoff", None),
        "popularity_rank": getattr(task, "popularity_rank", None),
    }


def retrieved_to_dicts(hits: list[tuple[Document, float]]) -> list[dict]:
    rows = []
    for doc, score in hits:
        event = doc.event
        rows.append(
            {
                "doc_id": doc.doc_id,
                "story_id": event.story_id,
                "scene_index": event.scene_index,
                "time": event.time,
                "kind": event.kind,
                "speaker": event.speaker,
                "text": event.text,
                "score": score,
            }
        )
    return rows


@contextmanager
def _timed(timings: dict[str, float], name: str, clock: Callable[[], float]):
    started = clock()
    try:
        yield
    except PipelineStageError:
        raise
    except Exception as exc:
        raise PipelineStageError(name, exc) from exc
    finally:
        timings[name] = clock() - started


def generate_intermediate(
    backend: LLMBackend,
    query: str,
    role: str,
    story_title: str,
    profile: str | None,
    hits: list[tuple[Document, float]] | None,
    cfg: PipelineConfig,
    purpose: str = "irg",
) -> tuple[str, StageRecord]:
    evidence = None
    if cfg.use_retrieval:
        evidence = [doc for doc, _ in hits] if hits else []
    prompt = prompts.render_irg_prompt(
        query,
        role,
        story_title,
        profile if cfg.use_profile else None,
        evidence,
        anonymize=cfg.anonymize,
    )
    response = complete(
        backend, ChatRequest(user_prompt=prompt, params=cfg.generation, purpose=purpose)
    )
    return response.text, StageRecord("irg", prompt, response.text)


def decompose(backend: LLMBackend, response_text: str) -> tuple[list[str], StageRecord]:
    """Decompose a response into atomic fact texts; an empty parse is a valid
    fact-free response (logged, not an error)."""
    prompt = prompts.render_dec_prompt(response_text)
    response = complete(
        backend, ChatRequest(user_prompt=prompt, params=VERIFY_PARAMS, purpose="dec")
    )
    facts = prompts.parse_fact_list(response.text)
    if not facts and response.text.strip():
        logger.warning("fact decomposition produced no list items; treating as fact-free")
    return facts, StageRecord("dec", prompt, response.text)


def fact_check_retrieval(
    backend: LLMBackend,
    fact: str,
    hits: list[tuple[Document, float]],
    purpose: str = "fcr",
) -> tuple[bool, StageRecord | None]:
    """Verdict against retrieved evidence; empty evidence is False with no call."""
    if not hits:
        return False, None
    prompt = prompts.render_fcr_prompt(fact, [doc for doc, _ in hits])
    response = complete(
        backend, ChatRequest(user_prompt=prompt, params=VERIFY_PARAMS, purpose=purpose)
    )
    verdict = prompts.parse_verdict(response.text)
    if verdict is None:
        logger.warning("unparseable retrieval fact-check verdict; counting as unsupported")
        verdict = False
    return verdict, StageRecord("fcr", prompt, response.text)


def fact_check_self(
    backend: LLMBackend, fact: str, role: str, story_title: str, m: int
) -> tuple[int, list[StageRecord]]:
    """k supporting verdicts out of m sampled self-checks; m=0 means zero calls."""
    if m == 0:
        return 0, []
    prompt = prompts.render_fcs_prompt(fact, role, story_title)
    request = ChatRequest(user_prompt=prompt, params=SELF_CHECK_PARAMS, purpose="fcs")
    responses = sample_n(backend, request, m)
    k = 0
    records = []
    for i, response in enumerate(responses):
        verdict = prompts.parse_verdict(response.text)
        if verdict is None:
            logger.warning("unparseable self fact-check sample %d; counting as unsupported", i)
            verdict = False
        k += int(verdict)
        records.append(StageRecord(f"fcs[{i}]", prompt, response.text))
    return k, records


def confidence_gate(k: int, m: int, t: Fraction) -> bool:
    """True iff k/m >= t by exact rational comparison; m=0 always fails."""
    if not 0 <= k <= m:
        raise ValueError(f"need 0 <= k <= m, got k={k}, m={m}")
    if m == 0:
        return False
    return k * t.denominator >= t.numerator * m


def self_reflect_update(
    backend: LLMBackend,
    query: str,
    response_text: str,
    removed: list[str],
    role: str,
    story_title: str,
) -> tuple[str, StageRecord]:
    if not removed:
        raise ValueError("self_reflect_update requires a non-empty removed list")
    prompt = prompts.render_sru_prompt(query, response_text, removed, role, story_title)
    response = complete(
        backend, ChatRequest(user_prompt=prompt, params=VERIFY_PARAMS, purpose="sru")
    )
    return response.text, StageRecord("sru", prompt, response.text)


def run(
    backend: LLMBackend,
    kb: KnowledgeBase,
    retriever,
    task,
    cfg: PipelineConfig | None = None,
    clock: Callable[[], float] = time.perf_counter,
    method: str = "rolefact",
) -> ResponseTrace:
    """End-to-end verified response for one task.

    Retrieval-supported facts skip the self-check; remaining facts pass the
    confidence gate or are removed by the rewrite stage. When nothing is
    removed the rewrite is skipped and the final response equals the
    intermediate one.
    """
    if cfg is None:
        cfg = PipelineConfig()
    story = kb.story(task.story_id)
    query = task.question_or_context
    timings: dict[str, float] = {}
    stages: list[StageRecord] = []

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
            backend, query, task.character, story.title, profile, hits, cfg
        )
        stages.append(record)

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
                continue
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
        method=method,
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
