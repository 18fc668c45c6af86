from __future__ import annotations

import itertools
from pathlib import Path

import pytest

from rolefact.evaluation import load_tasks
from rolefact.knowledge import load_corpus
from rolefact.llm import MockBackend
from rolefact.retrieval import BM25Retriever

DATA = Path(__file__).parent / "data"


def counting_clock():
    """Deterministic clock: 0.0, 1.0, 2.0, ... per call."""
    counter = itertools.count()
    return lambda: float(next(counter))


@pytest.fixture
def data_dir() -> Path:
    return DATA


@pytest.fixture
def kb():
    return load_corpus(DATA / "corpus.jsonl")


@pytest.fixture
def retriever(kb):
    return BM25Retriever(kb)


@pytest.fixture
def tasks():
    return load_tasks(DATA / "tasks.jsonl")


@pytest.fixture
def mock_backend():
    return MockBackend.from_jsonl(DATA / "fixtures.jsonl")


class PurposeCountingMock(MockBackend):
    """Mock backend that tallies generate calls per request purpose."""

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.purpose_calls: dict[str, int] = {}

    def _generate(self, request, sample_index):
        self.purpose_calls[request.purpose] = self.purpose_calls.get(request.purpose, 0) + 1
        return super()._generate(request, sample_index)


def make_mock_backend(cache=None) -> PurposeCountingMock:
    fixtures = MockBackend.from_jsonl(DATA / "fixtures.jsonl").fixtures
    return PurposeCountingMock(fixtures, cache=cache)


@pytest.fixture
def counting_backend() -> PurposeCountingMock:
    return make_mock_backend()


def write_corpus_lines(path: Path, lines: list[str]) -> Path:
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
