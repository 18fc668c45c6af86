"""Acceptance suite: one test per acceptance criterion, each at its stated
tolerance, printing one PASS line on success (run with -s to see them).

The headline experiment numbers are not reproducible at desk scale, so
acceptance is property-based over a deterministic scripted backend, plus an
optional live smoke test gated on real credentials.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import random
import threading
import time
from fractions import Fraction
from pathlib import Path

import httpx
import pytest

from conftest import counting_clock, make_mock_backend
from rolefact.baselines import kgr_respond
from rolefact.evaluation import (
    InterviewTask,
    JudgedFact,
    calibrate,
    evaluate_traces,
    fact_score,
    load_tasks,
    sfpr,
    thr_proxy,
)
from rolefact.knowledge import KnowledgeBase, KnowledgeEvent, Story, load_corpus
from rolefact.llm import ChatRequest, MockBackend, RemoteBackend, ResponseCache
from rolefact.pipeline import PipelineConfig, ResponseTrace, confidence_gate, run
from rolefact.retrieval import BM25Retriever, build_index, document_from_event, retrieve, tokenize

DATA = Path(__file__).parent / "data"

# Hand-derived verified sets (A_y) for the ten-task fixture suite.
HAND_DERIVED_VERIFIED = {
    "t01": {"f1"},
    "t02": {"f1"},
    "t03": set(),
    "t04": {"f1", "f2"},
    "t05": {"f1", "f2"},
    "t06": {"f1"},
    "t07": {"f1"},
    "t08": {"f1"},
    "t09": {"f1"},
    "t10": {"f1"},
}


def report(line: str) -> None:
    print(f"\nACCEPTANCE PASS — {line}")


# ---------------------------------------------------------------------------
# Criterion 1: Algorithm-1 golden trace
# ---------------------------------------------------------------------------


def generate_suite_traces() -> list[ResponseTrace]:
    kb = load_corpus(DATA / "corpus.jsonl")
    retriever = BM25Retriever(kb)
    tasks = load_tasks(DATA / "tasks.jsonl")
    backend = make_mock_backend()
    return [
        run(backend, kb, retriever, task, PipelineConfig(), clock=counting_clock())
        for task in tasks
    ]


def test_algorithm_golden_trace():
    started = time.perf_counter()
    first = [t.to_json() for t in generate_suite_traces()]
    second = [t.to_json() for t in generate_suite_traces()]
    elapsed = time.perf_counter() - started

    assert first == second, "trace JSON differs between runs"

    frozen = (DATA / "golden_traces.jsonl").read_text(encoding="utf-8").splitlines()
    assert first == frozen, "trace JSON differs from the frozen golden file"

    for line in first:
        trace = json.loads(line)
        verified = {
            f["fact_id"] for f in trace["facts"] if f["status"] != "unsupported"
        }
        assert verified == HAND_DERIVED_VERIFIED[trace["task"]["task_id"]]
        removed = {f["fact_id"] for f in trace["facts"]} - verified
        assert set(trace["removed"]) == removed

    assert elapsed < 5.0, f"golden suite took {elapsed:.2f}s"
    report(f"Algorithm-1 golden trace: byte-identical, A_y as derived ({elapsed:.2f}s)")


# ---------------------------------------------------------------------------
# Criterion 2: BM25 oracle equivalence
# ---------------------------------------------------------------------------

WORDS = [
    "lantern", "harbor", "mill", "storm", "bread", "canvas", "wind", "sail",
    "ledger", "winter", "dawn", "hill", "market", "oven", "ribbon", "wheel",
    "rain", "anchor", "cliff", "bell", "forge", "meadow", "kiln", "rope",
]


def synthetic_docs(rng: random.Random, count: int):
    docs = []
    for i in range(count):
        text = " ".join(rng.choices(WORDS, k=rng.randint(2, 16)))
        event = KnowledgeEvent(f"d{i:03d}", "synthetic", 0, i, "non_speech", None, text)
        docs.append(document_from_event(event))
    return docs


def oracle_rank(docs, query: str, n: int, cutoff, k1=1.2, b=0.75):
    total_docs = len(docs)
    lengths = {d.doc_id: len(d.tokens) for d in docs}
    avg_len = sum(lengths.values()) / total_docs
    doc_freq: dict[str, int] = {}
    for doc in docs:
        for token in set(doc.tokens):
            doc_freq[token] = doc_freq.get(token, 0) + 1
    scored = []
    for doc in docs:
        if cutoff is not None and doc.time > cutoff:
            continue
        score = 0.0
        for token in tokenize(query):
            tf = sum(1 for t in doc.tokens if t == token)
            if tf == 0:
                continue
            df = doc_freq[token]
            idf = math.log((total_docs - df + 0.5) / (df + 0.5) + 1.0)
            score += idf * tf * (k1 + 1) / (
                tf + k1 * (1 - b + b * lengths[doc.doc_id] / avg_len)
            )
        if score > 0.0:
            scored.append((doc, score))
    scored.sort(key=lambda pair: (-pair[1], pair[0].time, pair[0].doc_id))
    return scored[:n]


def test_bm25_oracle_equivalence():
    started = time.perf_counter()
    rng = random.Random(2_000_001)
    docs = synthetic_docs(rng, 200)
    index = build_index(docs)
    for query_index in range(50):
        query = " ".join(rng.choices(WORDS, k=rng.randint(1, 5)))
        n = rng.randint(1, 12)
        cutoff = rng.choice([None, rng.randint(0, 199)])
        got = retrieve(index, query, n, cutoff=cutoff)
        want = oracle_rank(docs, query, n, cutoff)
        assert [d.doc_id for d, _ in got] == [d.doc_id for d, _ in want], (
            f"query {query_index}: ranking mismatch"
        )
        for (_, got_score), (_, want_score) in zip(got, want):
            assert abs(got_score - want_score) <= 1e-12
    elapsed = time.perf_counter() - started
    assert elapsed < 10.0
    report(f"BM25 oracle equivalence: 50 queries over 200 docs exact ({elapsed:.2f}s)")


# ---------------------------------------------------------------------------
# Criterion 3: temporal safety
# ---------------------------------------------------------------------------


def hash_verdict(prompt: str, sample_index: int, salt: str = "") -> bool:
    digest = hashlib.sha256(f"{salt}{prompt}#{sample_index}".encode()).digest()
    return digest[0] % 2 == 0


def property_backend() -> MockBackend:
    def handler(request: ChatRequest, sample_index: int) -> str:
        if request.purpose in ("irg", "baseline"):
            return "The keeper watched the lantern over the harbor mill."
        if request.purpose in ("dec", "judge") and "atomic facts" in request.user_prompt:
            return "1. The keeper watched the lantern.\n2. The mill stood over the harbor."
        if request.purpose == "sru":
            return "The keeper watched the lantern."
        supported = hash_verdict(request.user_prompt, sample_index)
        return "Supported. Derived." if supported else "Not Supported. Derived."

    return MockBackend(default_handler=handler)


def random_story(rng: random.Random, story_id: str) -> Story:
    events = []
    scene = 0
    for t in range(rng.randint(3, 20)):
        if t and rng.random() < 0.25:
            scene += 1
        text = " ".join(rng.choices(WORDS, k=rng.randint(2, 8)))
        if rng.random() < 0.5:
            events.append(KnowledgeEvent(f"{story_id}-e{t}", story_id, scene, t, "speech", "KEEPER", text))
        else:
            events.append(KnowledgeEvent(f"{story_id}-e{t}", story_id, scene, t, "non_speech", None, text))
    return Story(story_id, story_id, (), tuple(events), frozenset({"KEEPER"}))


def test_temporal_safety():
    from rolefact.knowledge import CharacterProfile

    rng = random.Random(777_001)
    violations = 0
    cases = 0
    for case in range(1000):
        story = random_story(rng, f"s{case}")
        kb = KnowledgeBase(
            stories={story.story_id: story},
            profiles={
                (story.story_id, "KEEPER"): CharacterProfile(
                    story.story_id, "KEEPER", "The keeper of the mill."
                )
            },
        )
        retriever = BM25Retriever(kb)
        query = " ".join(rng.choices(WORDS, k=rng.randint(1, 4)))
        max_time = story.events[-1].time
        cutoff = rng.randint(0, max_time)
        hits = retriever.retrieve(story.story_id, query, rng.randint(1, 8), cutoff=cutoff)
        cases += 1
        violations += sum(1 for doc, _ in hits if doc.time > cutoff)

        if case % 5 == 0:
            task = InterviewTask(
                task_id=f"task-{case}",
                task_type="dialogue_completion",
                story_id=story.story_id,
                character="KEEPER",
                question_or_context=f"KEEPER: {query}",
                cutoff=cutoff,
            )
            trace = run(property_backend(), kb, retriever, task, PipelineConfig(m=2))
            times = {e.event_id: e.time for e in story.events}
            for row in trace.retrieved:
                violations += int(row["time"] > cutoff)
            for fact in trace.facts:
                violations += sum(1 for doc_id in fact.evidence if times[doc_id] > cutoff)

    assert cases == 1000
    assert violations == 0

    # thr proxy exactness on constructed two-scope fixtures
    for supported_at_cutoff, supported_at_full, expected in [
        (False, True, 1),   # future knowledge: counted
        (True, True, 0),    # already known: not counted
        (False, False, 0),  # cross-universe: not counted
    ]:
        assert _thr_case(supported_at_cutoff, supported_at_full) == expected
    assert _thr_mixed_case() == 2
    report("Temporal safety: 1000 cases, zero cutoff violations; thr proxy exact")


def _two_scope_kb() -> KnowledgeBase:
    events = (
        KnowledgeEvent("p0", "probe", 0, 0, "non_speech", None, "The kiln is cold."),
        KnowledgeEvent("p1", "probe", 1, 4, "non_speech", None, "The kiln roars back to life."),
    )
    return KnowledgeBase(stories={"probe": Story("probe", "probe", (), events, frozenset())})


def _probe_trace(final: str) -> ResponseTrace:
    return ResponseTrace(
        method="rolefact",
        task={"task_id": "probe", "task_type": "scene_grounded", "story_id": "probe",
              "character": "A", "cutoff": 0, "popularity_rank": None},
        query="q",
        config={},
        retrieved=[],
        intermediate=final,
        facts=[],
        final=final,
        stages=[],
        timings={},
    )


def _scoped_backend(verdicts: list[tuple[str, bool, bool]]) -> MockBackend:
    backend = MockBackend()
    listing = "\n".join(f"{i}. {fact}" for i, (fact, _, _) in enumerate(verdicts, 1))
    backend.add(listing, purpose="judge", match="Utterance:")
    for fact, at_cutoff, at_full in verdicts:
        backend.add(
            "Supported. Full." if at_full else "Not Supported. Full.",
            purpose="judge",
            match=[f"Statement: {fact}", "The kiln roars back to life."],
        )
        backend.add(
            "Supported. Cutoff." if at_cutoff else "Not Supported. Cutoff.",
            purpose="judge",
            match=f"Statement: {fact}",
        )
    return backend


def _thr_case(at_cutoff: bool, at_full: bool) -> int:
    backend = _scoped_backend([("the probed fact", at_cutoff, at_full)])
    return thr_proxy(backend, _probe_trace("resp"), _two_scope_kb(), cutoff=0)


def _thr_mixed_case() -> int:
    verdicts = [
        ("fact alpha", False, True),
        ("fact beta", True, True),
        ("fact gamma", False, False),
        ("fact delta", False, True),
        ("fact epsilon", True, False),
    ]
    backend = _scoped_backend(verdicts)
    return thr_proxy(backend, _probe_trace("resp"), _two_scope_kb(), cutoff=0)


# ---------------------------------------------------------------------------
# Criterion 4: confidence-gate boundary
# ---------------------------------------------------------------------------


def test_confidence_gate_boundary_exhaustive():
    thresholds = [Fraction(i, 5) for i in range(6)]
    discrepancies = 0
    for m in range(13):
        for k in range(m + 1):
            for t in thresholds:
                expected = m > 0 and Fraction(k, m) >= t
                if confidence_gate(k, m, t) is not expected:
                    discrepancies += 1
    assert discrepancies == 0
    assert confidence_gate(3, 5, Fraction(3, 5)) is True
    for t in thresholds:
        assert confidence_gate(0, 0, t) is False
    report("Confidence-gate boundary: exhaustive k<=m<=12 exact; 3/5 >= 3/5 holds; m=0 fails")


# ---------------------------------------------------------------------------
# Criterion 5: KGR == pipeline(m=0)
# ---------------------------------------------------------------------------


def test_kgr_equivalence_full_traces():
    kb = load_corpus(DATA / "corpus.jsonl")
    retriever = BM25Retriever(kb)
    tasks = load_tasks(DATA / "tasks.jsonl")
    cfg = PipelineConfig(m=0)
    for task in tasks:
        kgr = kgr_respond(make_mock_backend(), kb, retriever, task, cfg, clock=counting_clock())
        m0 = run(make_mock_backend(), kb, retriever, task, cfg, clock=counting_clock())
        kgr_dict, m0_dict = kgr.to_dict(), m0.to_dict()
        assert kgr_dict.pop("method") == "kgr"
        assert m0_dict.pop("method") == "rolefact"
        assert kgr_dict == m0_dict, task.task_id
    report("KGR equivalence: full trace equality with pipeline(m=0) on all 10 fixtures")


# ---------------------------------------------------------------------------
# Criterion 6: metric fixtures
# ---------------------------------------------------------------------------


def hand_labeled_fixture() -> list[list[JudgedFact]]:
    def response(*flags: bool) -> list[JudgedFact]:
        return [JudgedFact(f"fact {i}", flag, "fixture") for i, flag in enumerate(flags)]

    return [
        response(True, True, True, False),          # 3/4
        response(True, False),                      # 1/2
        response(True, True, True, True, True),     # 5/5
        response(False, False, False),              # 0/3
        response(True, True, True, True, False, False),  # 4/6
        response(),                                 # fact-free
    ]


def test_metric_fixtures_exact():
    responses = hand_labeled_fixture()
    assert sum(len(r) for r in responses) == 20
    assert fact_score(responses) == 13 / 20
    assert sfpr(responses) == 13 / 6
    assert fact_score(responses[:2]) == 4 / 6
    assert sfpr(responses[:2]) == 2.0

    kb = load_corpus(DATA / "corpus.jsonl")
    retriever = BM25Retriever(kb)
    tasks = load_tasks(DATA / "tasks.jsonl")
    backend = make_mock_backend()
    rows = calibrate(backend, kb, retriever, tasks, t_grid=[Fraction(3, 5)], m_grid=[0])
    kgr_traces = [kgr_respond(backend, kb, retriever, task, PipelineConfig(m=0)) for task in tasks]
    kgr_report = evaluate_traces(backend, kb, tasks, kgr_traces)
    assert rows[0]["fact_score"] == kgr_report.overall.fact_score
    assert rows[0]["sfpr"] == kgr_report.overall.sfpr
    assert rows[0]["thr_per_100"] == kgr_report.overall.thr_per_100
    report("Metric fixtures: 20-fact hand computation exact; calibration m=0 row equals KGR")


# ---------------------------------------------------------------------------
# Criterion 7: monotonicity in t
# ---------------------------------------------------------------------------


def test_monotonicity_on_cached_sample_tables():
    rng = random.Random(555_777)
    grid = [Fraction(i, 20) for i in range(21)]
    for _ in range(500):
        responses = []
        for _ in range(rng.randint(1, 6)):
            facts = []
            for _ in range(rng.randint(0, 6)):
                m = rng.randint(0, 12)
                facts.append((rng.randint(0, m) if m else 0, m))
            responses.append(facts)
        previous_size = None
        previous_sfpr = None
        for t in grid:
            size = sum(confidence_gate(k, m, t) for facts in responses for k, m in facts)
            table_sfpr = size / len(responses)
            if previous_size is not None:
                assert size <= previous_size
                assert table_sfpr <= previous_sfpr
            previous_size, previous_sfpr = size, table_sfpr
    report("Monotonicity: 500 random sample tables, raising t never grows A_y or SFPR")


# ---------------------------------------------------------------------------
# Criterion 8: cache discipline (fake-server call counter)
# ---------------------------------------------------------------------------


class FakeServer:
    """OpenAI-compatible handler that answers from the mock fixture table,
    inferring the stage from prompt shape and counting every request."""

    def __init__(self):
        fixtures = MockBackend.from_jsonl(DATA / "fixtures.jsonl").fixtures
        self.fixtures = fixtures
        self.calls = 0
        self._lock = threading.Lock()
        self._sample_counters: dict[str, int] = {}

    @staticmethod
    def _purposes_for(prompt: str) -> tuple[str, ...]:
        if "You will role-play as" in prompt:
            return ("irg", "baseline")
        if "list of atomic facts" in prompt:
            return ("dec", "judge")
        if "Evidence Knowledge:" in prompt:
            return ("fcr", "judge")
        if "supported by the storyline of" in prompt:
            return ("fcs",)
        if "unsupported claims" in prompt:
            return ("sru",)
        return ()

    def handle(self, http_request: httpx.Request) -> httpx.Response:
        payload = json.loads(http_request.content)
        prompt = payload["messages"][-1]["content"]
        with self._lock:
            self.calls += 1
            sample_index = self._sample_counters.get(prompt, 0)
            self._sample_counters[prompt] = sample_index + 1
        purposes = self._purposes_for(prompt)
        for fixture in self.fixtures:
            if fixture.purpose is not None and fixture.purpose not in purposes:
                continue
            if fixture.sample_index is not None and fixture.sample_index != sample_index:
                continue
            needles = fixture.match if isinstance(fixture.match, list) else [fixture.match]
            if all(needle in prompt for needle in needles if needle):
                return httpx.Response(
                    200,
                    json={"choices": [{"message": {"role": "assistant", "content": fixture.response}}]},
                )
        return httpx.Response(500, json={"error": f"no fixture for prompt: {prompt[:80]}"})


def run_interview_against_fake_server(cache_path: Path) -> int:
    server = FakeServer()
    backend = RemoteBackend(
        base_url="http://fake/v1",
        model="fixture-model",
        api_key="k",
        cache=ResponseCache(cache_path),
        transport=httpx.MockTransport(server.handle),
        backoff_base=0.0,
    )
    kb = load_corpus(DATA / "corpus.jsonl")
    retriever = BM25Retriever(kb)
    tasks = load_tasks(DATA / "tasks.jsonl")
    for task in tasks:
        trace = run(backend, kb, retriever, task, PipelineConfig())
        verified = {f.fact_id for f in trace.facts if f.status != "unsupported"}
        assert verified == HAND_DERIVED_VERIFIED[task.task_id]
    return server.calls


def test_cache_discipline_zero_calls_on_warm_rerun(tmp_path):
    cache_path = tmp_path / "cache.jsonl"
    cold_calls = run_interview_against_fake_server(cache_path)
    assert cold_calls > 0
    warm_calls = run_interview_against_fake_server(cache_path)
    assert warm_calls == 0
    report(f"Cache discipline: cold run {cold_calls} calls, warm rerun 0 calls")


# ---------------------------------------------------------------------------
# Criterion 9 (optional): live smoke test
# ---------------------------------------------------------------------------

LIVE = bool(os.environ.get("ROLEFACT_API_BASE") and os.environ.get("ROLEFACT_MODEL"))

LIVE_QUESTIONS = [
    "Did you meet the clockwork emperor of the glass city?",
    "How did you win the lightning chess tournament on the moon?",
    "Describe your friendship with the talking iceberg.",
    "When did you pilot the paper submarine across the desert?",
    "What did the invisible choir sing at your coronation?",
    "Why did you trade the mill for a mechanical whale?",
    "How did you teach the mountain to whistle?",
    "What happened when you dueled your own shadow at noon?",
    "Which star did you bottle for the harvest festival?",
    "How did you out-bake the ghost of the old lighthouse?",
]


@pytest.mark.skipif(not LIVE, reason="ROLEFACT_API_BASE / ROLEFACT_MODEL not configured")
def test_live_adversarial_smoke(tmp_path):
    kb = load_corpus(DATA / "corpus.jsonl")
    retriever = BM25Retriever(kb)
    backend = RemoteBackend(cache=ResponseCache(tmp_path / "live-cache.jsonl"))
    tasks = [
        InterviewTask(f"live-{i}", "adversarial", "windmill", "MIRA", question)
        for i, question in enumerate(LIVE_QUESTIONS)
    ]
    judged = []
    for task in tasks:
        trace = run(backend, kb, retriever, task, PipelineConfig())
        payload = json.loads(trace.to_json())
        for key in ("method", "task", "query", "config", "retrieved", "intermediate",
                    "facts", "removed", "final", "stages", "timings"):
            assert key in payload
        from rolefact.evaluation import judge_facts

        judged.append(judge_facts(backend, trace.final, kb.events_up_to("windmill")))
    score = fact_score(judged)
    assert 0.0 <= score <= 1.0
    report(f"Live smoke: 10 adversarial interviews, fact score {score:.2f}")
