"""HTTP service: corpus browsing plus live chat sessions with full
verification traces, backing the web UI.

Sessions live in memory (optionally mirrored to a JSONL append log for
restart recovery); message handling is serialized per session while distinct
sessions run concurrently. Responses are never streamed: verification is post
hoc over the complete intermediate response.
"""

from __future__ import annotations

import json
import logging
import threading
import time
import uuid
from dataclasses import dataclass, field, replace
from pathlib import Path

from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel

from . import pipeline
from .baselines import baseline_respond, kgr_respond, sr_respond
from .knowledge import KnowledgeBase
from .llm import LLMBackend, LLMError
from .pipeline import PipelineConfig, PipelineStageError

logger = logging.getLogger(__name__)

SESSION_METHODS = {
    "baseline": baseline_respond,
    "kgr": kgr_respond,
    "sr": sr_respond,
    "rolefact": pipeline.run,
}

USER_SPEAKER = "INTERVIEWER"


class SessionCreate(BaseModel):
    story_id: str
    character: str
    cutoff: int | None = None
    method: str = "rolefact"
    overrides: dict | None = None


class MessageIn(BaseModel):
    text: str
    overrides: dict | None = None


@dataclass
class ChatSession:
    session_id: str
    story_id: str
    character: str
    cutoff: int | None
    method: str
    config: PipelineConfig
    history: list[tuple[str, str]] = field(default_factory=list)
    lock: threading.Lock = field(default_factory=threading.Lock)
    turn: int = 0


@dataclass(frozen=True)
class _SessionTask:
    """Ad-hoc task view of one chat turn, for the pipeline interface."""

    task_id: str
    task_type: str
    story_id: str
    character: str
    question_or_context: str
    cutoff: int | None = None
    popularity_rank: int | None = None


def apply_overrides(config: PipelineConfig, overrides: dict | None) -> PipelineConfig:
    """New config with t/m/n overridden; raises ValueError on invalid values."""
    if not overrides:
        return config
    unknown = set(overrides) - {"t", "m", "n"}
    if unknown:
        raise ValueError(f"unknown override fields: {sorted(unknown)}")
    fields = {}
    if "t" in overrides:
        fields["t"] = pipeline.as_fraction(overrides["t"])
    if "m" in overrides:
        fields["m"] = int(overrides["m"])
    if "n" in overrides:
        fields["n"] = int(overrides["n"])
    return replace(config, **fields)


class SessionStore:
    def __init__(self, log_dir: str | Path | None = None):
        self._sessions: dict[str, ChatSession] = {}
        self._lock = threading.Lock()
        self.log_dir = Path(log_dir) if log_dir else None
        if self.log_dir:
            self.log_dir.mkdir(parents=True, exist_ok=True)

    def create(
        self,
        story_id: str,
        character: str,
        cutoff: int | None,
        method: str,
        config: PipelineConfig,
    ) -> ChatSession:
        session = ChatSession(
            session_id=uuid.uuid4().hex,
            story_id=story_id,
            character=character,
            cutoff=cutoff,
            method=method,
            config=config,
        )
        with self._lock:
            self._sessions[session.session_id] = session
        self._log(session.session_id, {
            "kind": "session",
            "story_id": story_id,
            "character": character,
            "cutoff": cutoff,
            "method": method,
            "config": config.to_dict(),
        })
        return session

    def get(self, session_id: str) -> ChatSession | None:
        with self._lock:
            return self._sessions.get(session_id)

    def log_turn(self, session_id: str, speaker: str, text: str) -> None:
        self._log(session_id, {"kind": "turn", "speaker": speaker, "text": text})

    def _log(self, session_id: str, record: dict) -> None:
        if not self.log_dir:
            return
        path = self.log_dir / f"{session_id}.jsonl"
        with path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")

    def recover(self, default_config: PipelineConfig) -> int:
        """Reload sessions from the append log after a restart."""
        if not self.log_dir:
            return 0
        count = 0
        for path in sorted(self.log_dir.glob("*.jsonl")):
            session = None
            with path.open(encoding="utf-8") as fh:
                for line in fh:
                    record = json.loads(line)
                    if record["kind"] == "session":
                        config = apply_overrides(
                            default_config,
                            {
                                "t": record["config"]["t"],
                                "m": record["config"]["m"],
                                "n": record["config"]["n"],
                            },
                        )
                        session = ChatSession(
                            session_id=path.stem,
                            story_id=record["story_id"],
                            character=record["character"],
                            cutoff=record["cutoff"],
                            method=record["method"],
                            config=config,
                        )
                    elif record["kind"] == "turn" and session is not None:
                        session.history.append((record["speaker"], record["text"]))
                        session.turn = sum(
                            1 for s, _ in session.history if s == USER_SPEAKER
                        )
            if session is not None:
                with self._lock:
                    self._sessions[session.session_id] = session
                count += 1
        return count


def create_app(
    kb: KnowledgeBase,
    retriever,
    backend: LLMBackend,
    default_config: PipelineConfig | None = None,
    cors: bool = False,
    session_log_dir: str | Path | None = None,
    ui_dir: str | Path | None = None,
    clock=time.perf_counter,
) -> FastAPI:
    if default_config is None:
        default_config = PipelineConfig()
    app = FastAPI(title="rolefact")
    if cors:
        app.add_middleware(
            CORSMiddleware,
            allow_origins=["*"],
            allow_methods=["*"],
            allow_headers=["*"],
        )
    if ui_dir is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=ui_dir, html=True), name="ui")
    store = SessionStore(log_dir=session_log_dir)
    store.recover(default_config)
    app.state.sessions = store

    @app.get("/v1/stories")
    def list_stories():
        return [
            {
                "story_id": story.story_id,
                "title": story.title,
                "event_count": len(story.events),
                "character_count": len(story.characters),
            }
            for story in sorted(kb.stories.values(), key=lambda s: s.story_id)
        ]

    def _story_or_404(story_id: str):
        try:
            return kb.story(story_id)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown story {story_id!r}")

    @app.get("/v1/stories/{story_id}/characters")
    def list_characters(story_id: str):
        story = _story_or_404(story_id)
        ranks = kb.popularity_ranks(story_id)
        speech_counts = {name: 0 for name in story.characters}
        for event in story.events:
            if event.kind == "speech":
                speech_counts[event.speaker] += 1
        return [
            {
                "character": name,
                "popularity_rank": ranks[name],
                "speech_events": speech_counts[name],
                "has_profile": (story_id, name) in kb.profiles,
            }
            for name in sorted(story.characters, key=lambda n: ranks[n])
        ]

    @app.get("/v1/stories/{story_id}/timeline")
    def timeline(story_id: str):
        story = _story_or_404(story_id)
        scenes: dict[int, list[int]] = {}
        for event in story.events:
            scenes.setdefault(event.scene_index, []).append(event.time)
        return [
            {"scene_index": scene, "min_time": min(times), "max_time": max(times)}
            for scene, times in sorted(scenes.items())
        ]

    @app.post("/v1/sessions")
    def create_session(body: SessionCreate):
        story = _story_or_404(body.story_id)
        if body.character not in story.characters:
            raise HTTPException(
                status_code=404,
                detail=f"unknown character {body.character!r} in story {body.story_id!r}",
            )
        if body.method not in SESSION_METHODS:
            raise HTTPException(status_code=422, detail=f"unknown method {body.method!r}")
        if body.cutoff is not None and body.cutoff < 0:
            raise HTTPException(status_code=422, detail="cutoff must be >= 0")
        try:
            config = apply_overrides(default_config, body.overrides)
        except (ValueError, ZeroDivisionError) as exc:
            raise HTTPException(status_code=422, detail=f"invalid overrides: {exc}")
        session = store.create(body.story_id, body.character, body.cutoff, body.method, config)
        return {"session_id": session.session_id}

    @app.post("/v1/sessions/{session_id}/message")
    def post_message(session_id: str, body: MessageIn):
        session = store.get(session_id)
        if session is None:
            raise HTTPException(status_code=404, detail=f"unknown session {session_id!r}")
        if not body.text.strip():
            raise HTTPException(status_code=422, detail="message text must be non-empty")
        overrides = dict(body.overrides or {})
        method_override = overrides.pop("method", None)
        if method_override is not None and method_override not in SESSION_METHODS:
            raise HTTPException(
                status_code=422, detail=f"unknown method {method_override!r}"
            )
        try:
            overridden = apply_overrides(session.config, overrides)
        except (ValueError, ZeroDivisionError) as exc:
            raise HTTPException(status_code=422, detail=f"invalid overrides: {exc}")

        with session.lock:
            session.config = overridden
            if method_override is not None:
                session.method = method_override
            session.history.append((USER_SPEAKER, body.text))
            session.turn += 1
            context = "\n".join(f"{speaker}: {text}" for speaker, text in session.history)
            task = _SessionTask(
                task_id=f"{session.session_id}:{session.turn}",
                task_type="scene_grounded" if session.cutoff is not None else "open_ended",
                story_id=session.story_id,
                character=session.character,
                question_or_context=context,
                cutoff=session.cutoff,
            )
            respond = SESSION_METHODS[session.method]
            try:
                trace = respond(backend, kb, retriever, task, session.config, clock=clock)
            except PipelineStageError as exc:
                session.history.pop()
                session.turn -= 1
                raise HTTPException(status_code=502, detail=str(exc))
            except LLMError as exc:
                session.history.pop()
                session.turn -= 1
                raise HTTPException(status_code=502, detail=f"backend failure: {exc}")
            session.history.append((session.character, trace.final))
            store.log_turn(session.session_id, USER_SPEAKER, body.text)
            store.log_turn(session.session_id, session.character, trace.final)
            return {"response": trace.final, "trace": trace.to_dict()}

    return app
