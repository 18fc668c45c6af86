"""BM25 retrieval over rendered knowledge events with temporal cutoff filtering.

Each knowledge event becomes one document. Scoring uses the Okapi form with a
non-negative IDF, IDF = ln((N - df + 0.5) / (df + 0.5) + 1). Ranking is
deterministic: descending score, then smaller event time, then doc_id.
Zero-score documents are never returned.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass

from .knowledge import KnowledgeBase, KnowledgeEvent

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)

DEFAULT_K1 = 1.2
DEFAULT_B = 0.75


def tokenize(text: str) -> list[str]:
    """Lowercase Unicode-alphanumeric word extraction; no stemming, no stopwords."""
    return [m.group(0).lower() for m in _TOKEN_RE.finditer(text)]


def render_event(event: KnowledgeEvent) -> str:
    if event.kind == "speech":
        return f"{event.speaker}: {event.text}"
    return f"[scene] {event.text}"


@dataclass(frozen=True)
class Document:
    """A knowledge event rendered for retrieval."""

    event: KnowledgeEvent
    rendered_text: str
    tokens: tuple[str, ...]

    @property
    def doc_id(self) -> str:
        return self.event.event_id

    @property
    def story_id(self) -> str:
        return self.event.story_id

    @property
    def time(self) -> int:
        return self.event.time


def document_from_event(event: KnowledgeEvent) -> Document:
    rendered = render_event(event)
    return Document(event=event, rendered_text=rendered, tokens=tuple(tokenize(rendered)))


class Index:
    """Inverted index over one story's documents."""

    def __init__(self, docs: list[Document], k1: float = DEFAULT_K1, b: float = DEFAULT_B):
        if not docs:
            raise ValueError("cannot build an index over an empty document set")
        if k1 <= 0:
            raise ValueError(f"k1 must be > 0, got {k1}")
        if not 0 <= b <= 1:
            raise ValueError(f"b must be in [0, 1], got {b}")
        self.k1 = k1
        self.b = b
        self.docs: dict[str, Document] = {}
        self.doc_len: dict[str, int] = {}
        postings: dict[str, list[tuple[str, int]]] = {}
        for doc in docs:
            if doc.doc_id in self.docs:
                raise ValueError(f"duplicate doc_id {doc.doc_id!r}")
            self.docs[doc.doc_id] = doc
            self.doc_len[doc.doc_id] = len(doc.tokens)
            for token, tf in Counter(doc.tokens).items():
                postings.setdefault(token, []).append((doc.doc_id, tf))
        self.postings = {
            token: sorted(entries) for token, entries in postings.items()
        }
        self.n_docs = len(self.docs)
        self.avg_doc_len = sum(self.doc_len.values()) / self.n_docs

    def idf(self, token: str) -> float:
        df = len(self.postings.get(token, ()))
        if df == 0:
            return 0.0
        return math.log((self.n_docs - df + 0.5) / (df + 0.5) + 1.0)

    def term_frequency(self, token: str, doc_id: str) -> int:
        for posting_doc, tf in self.postings.get(token, ()):
            if posting_doc == doc_id:
                return tf
        return 0


def build_index(docs: list[Document], k1: float = DEFAULT_K1, b: float = DEFAULT_B) -> Index:
    return Index(docs, k1=k1, b=b)


def bm25_score(index: Index, query_tokens: list[str], doc_id: str) -> float:
    """Okapi BM25 score of one document for the given query tokens."""
    if doc_id not in index.docs:
        raise KeyError(f"unknown doc_id: {doc_id!r}")
    length = index.doc_len[doc_id]
    norm = index.k1 * (1 - index.b + index.b * length / index.avg_doc_len)
    score = 0.0
    for token in query_tokens:
        tf = index.term_frequency(token, doc_id)
        if tf == 0:
            continue
        score += index.idf(token) * tf * (index.k1 + 1) / (tf + norm)
    return score


def retrieve(
    index: Index, query: str, n: int, cutoff: int | None = None
) -> list[tuple[Document, float]]:
    """Top-n documents by BM25 among docs with time <= cutoff.

    Ties break by smaller time, then doc_id; zero-score docs are excluded.
    """
    if n < 0:
        raise ValueError(f"n must be >= 0, got {n}")
    if n == 0:
        return []
    # Accumulating per query token in order keeps each document's float sum
    # bitwise identical to bm25_score's per-document loop.
    scores: dict[str, float] = {}
    for token in tokenize(query):
        entries = index.postings.get(token)
        if not entries:
            continue
        idf = index.idf(token)
        for doc_id, tf in entries:
            if cutoff is not None and index.docs[doc_id].time > cutoff:
                continue
            length = index.doc_len[doc_id]
            norm = index.k1 * (1 - index.b + index.b * length / index.avg_doc_len)
            scores[doc_id] = scores.get(doc_id, 0.0) + idf * tf * (index.k1 + 1) / (tf + norm)
    scored = [
        (index.docs[doc_id], score) for doc_id, score in scores.items() if score > 0.0
    ]
    scored.sort(key=lambda pair: (-pair[1], pair[0].time, pair[0].doc_id))
    return scored[:n]


class BM25Retriever:
    """Per-story BM25 retrieval over a knowledge base.

    Any retriever plugged into the pipeline must expose the same
    ``retrieve(story_id, query, n, cutoff=None)`` signature and honor the
    cutoff and ordering contract; only BM25 ships.
    """

    def __init__(
        self,
        kb: KnowledgeBase,
        k1: float = DEFAULT_K1,
        b: float = DEFAULT_B,
        speech_only: bool = False,
    ):
        self.kb = kb
        self.k1 = k1
        self.b = b
        self.speech_only = speech_only
        self._indexes: dict[str, Index] = {}

    def index_for(self, story_id: str) -> Index:
        if story_id not in self._indexes:
            story = self.kb.story(story_id)
            events = story.events
            if self.speech_only:
                events = tuple(e for e in events if e.kind == "speech")
            docs = [document_from_event(e) for e in events]
            self._indexes[story_id] = build_index(docs, k1=self.k1, b=self.b)
        return self._indexes[story_id]

    def retrieve(
        self, story_id: str, query: str, n: int, cutoff: int | None = None
    ) -> list[tuple[Document, float]]:
        return retrieve(self.index_for(story_id), query, n, cutoff=cutoff)
