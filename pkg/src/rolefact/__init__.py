"""Script-grounded character role-play with atomic fact verification."""

from .knowledge import (
    CharacterProfile,
    CorpusError,
    KnowledgeBase,
    KnowledgeEvent,
    SegmentationError,
    Story,
    load_corpus,
    segment_script,
)
from .llm import (
    ChatRequest,
    ChatResponse,
    GenerationParams,
    LLMBackend,
    MockBackend,
    RemoteBackend,
    ResponseCache,
    complete,
    sample_n,
)
from .pipeline import (
    AtomicFact,
    PipelineConfig,
    PipelineStageError,
    ResponseTrace,
    confidence_gate,
    run,
)
from .retrieval import BM25Retriever, Document, Index, build_index, bm25_score, retrieve, tokenize

__all__ = [
    "AtomicFact",
    "BM25Retriever",
    "CharacterProfile",
    "ChatRequest",
    "ChatResponse",
    "CorpusError",
    "Document",
    "GenerationParams",
    "Index",
    "KnowledgeBase",
    "KnowledgeEvent",
    "LLMBackend",
    "MockBackend",
    "PipelineConfig",
    "PipelineStageError",
    "RemoteBackend",
    "ResponseCache",
    "ResponseTrace",
    "SegmentationError",
    "Story",
    "bm25_score",
    "build_index",
    "complete",
    "confidence_gate",
    "load_corpus",
    "retrieve",
    "run",
    "sample_n",
    "segment_script",
    "tokenize",
]

__version__ = "0.1.0"
