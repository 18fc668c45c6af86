"""Time-indexed script corpus: stories, scenes, knowledge events, and character profiles.

The corpus is a JSONL file with one record per line:

    {"record": "event", "event_id": ..., "story_id": ..., "scene_index": ...,
     "time": ..., "kind": "speech"|"non_speech", "speaker": ...?, "text": ...}
    {"record": "profile", "story_id": ..., "character": ..., "description": ...}
    {"record": "story", "story_id": ..., "title": ..., "scripts": [...]?}

Unknown fields inside a record are ignored. Event time is a running event
counter starting at zero within each story; it must be strictly increasing in
corpus order, and scene_index must be non-decreasing.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

logger = logging.getLogger(__name__)

EVENT_KINDS = ("speech", "non_speech")


class CorpusError(ValueError):
    """Raised for malformed corpus files or invariant violations."""


class SegmentationError(RuntimeError):
    """Raised when LLM script segmentation output cannot be parsed."""


@dataclass(frozen=True)
class KnowledgeEvent:
    """One timestamped speech or non-speech unit of a story script."""

    event_id: str
    story_id: str
    scene_index: int
    time: int
    kind: str
    speaker: str | None
    text: str

    def __post_init__(self) -> None:
        if not self.event_id:
            raise CorpusError("event_id must be non-empty")
        if self.kind not in EVENT_KINDS:
            raise CorpusError(f"event {self.event_id}: unknown kind {self.kind!r}")
        if self.scene_index < 0:
            raise CorpusError(f"event {self.event_id}: negative scene_index")
        if self.time < 0:
            raise CorpusError(f"event {self.event_id}: negative time")
        if self.kind == "speech" and not self.speaker:
            raise CorpusError(f"event {self.event_id}: speech event has no speaker")
        if self.kind == "non_speech" and self.speaker is not None:
            raise CorpusError(f"event {self.event_id}: non-speech event has a speaker")
        if not self.text:
            raise CorpusError(f"event {self.event_id}: empty text")


@dataclass(frozen=True)
class CharacterProfile:
    """Role description injected into the role-play prompt."""

    story_id: str
    character: str
    description: str

    def __post_init__(self) -> None:
        if not self.description:
            raise CorpusError(
                f"profile ({self.story_id}, {self.character}): empty description"
            )


@dataclass(frozen=True)
class Story:
    story_id: str
    title: str
    scripts: tuple[str, ...]
    events: tuple[KnowledgeEvent, ...]
    characters: frozenset[str]


@dataclass(frozen=True)
class KnowledgeBase:
    """Immutable, fully indexed corpus; safe to share across threads."""

    stories: dict[str, Story] = field(default_factory=dict)
    profiles: dict[tuple[str, str], CharacterProfile] = field(default_factory=dict)

    def story(self, story_id: str) -> Story:
        try:
            return self.stories[story_id]
        except KeyError:
            raise KeyError(f"unknown story: {story_id!r}") from None

    def events_up_to(
        self, story_id: str, cutoff: int | None = None
    ) -> list[KnowledgeEvent]:
        """All events with time <= cutoff, in story order; no cutoff means all."""
        story = self.story(story_id)
        if cutoff is None:
            return list(story.events)
        if cutoff < 0:
            raise ValueError(f"cutoff must be >= 0, got {cutoff}")
        return [e for e in story.events if e.time <= cutoff]

    def get_profile(self, story_id: str, character: str) -> CharacterProfile:
        try:
            return self.profiles[(story_id, character)]
        except KeyError:
            raise KeyError(
                f"no profile for character {character!r} in story {story_id!r}"
            ) from None

    def popularity_ranks(self, story_id: str) -> dict[str, int]:
        """Rank characters by speech-event count, descending; 1 = most popular.

        Ties are broken by character name so the ranking is deterministic.
        """
        story = self.story(story_id)
        counts = {name: 0 for name in story.characters}
        for event in story.events:
            if event.kind == "speech":
                counts[event.speaker] = counts.get(event.speaker, 0) + 1
        ordered = sorted(counts.items(), key=lambda item: (-item[1], item[0]))
        return {name: rank for rank, (name, _) in enumerate(ordered, start=1)}


def _require(record: dict, key: str, line_no: int) -> object:
    if key not in record:
        raise CorpusError(f"line {line_no}: missing field {key!r}")
    return record[key]


def load_corpus(path: str | Path) -> KnowledgeBase:
    """Load and validate a corpus JSONL file.

    Raises CorpusError with the offending line number or event_id; missing
    character profiles are logged as warnings, not errors.
    """
    path = Path(path)
    events_by_story: dict[str, list[KnowledgeEvent]] = {}
    story_meta: dict[str, dict] = {}
    profiles: dict[tuple[str, str], CharacterProfile] = {}
    seen_event_ids: set[str] = set()

    with path.open(encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"line {line_no}: invalid JSON ({exc.msg})") from exc
            if not isinstance(record, dict):
                raise CorpusError(f"line {line_no}: record is not an object")
            kind = record.get("record")
            if kind == "event":
                event = _parse_event(record, line_no)
                if event.event_id in seen_event_ids:
                    raise CorpusError(
                        f"line {line_no}: duplicate event_id {event.event_id!r}"
                    )
                seen_event_ids.add(event.event_id)
                events_by_story.setdefault(event.story_id, []).append(event)
            elif kind == "profile":
                profile = _parse_profile(record, line_no)
                profiles[(profile.story_id, profile.character)] = profile
            elif kind == "story":
                story_id = str(_require(record, "story_id", line_no))
                story_meta[story_id] = {
                    "title": record.get("title", story_id),
                    "scripts": tuple(record.get("scripts", ())),
                }
            else:
                raise CorpusError(f"line {line_no}: unknown record type {kind!r}")

    stories: dict[str, Story] = {}
    for story_id, events in events_by_story.items():
        _check_monotone(story_id, events)
        speakers = {e.speaker for e in events if e.kind == "speech"}
        profiled = {c for (s, c) in profiles if s == story_id}
        meta = story_meta.get(story_id, {"title": story_id, "scripts": ()})
        stories[story_id] = Story(
            story_id=story_id,
            title=meta["title"],
            scripts=meta["scripts"],
            events=tuple(events),
            characters=frozenset(speakers | profiled),
        )
        for name in sorted(speakers - profiled):
            logger.warning(
                "story %s: speaker %s has no character profile", story_id, name
            )

    for (story_id, character) in profiles:
        if story_id not in stories:
            raise CorpusError(
                f"profile ({story_id!r}, {character!r}) references a story with no events"
            )

    for story_id in story_meta:
        if story_id not in stories:
            raise CorpusError(f"story record {story_id!r} has no events")

    return KnowledgeBase(stories=stories, profiles=profiles)


def _parse_event(record: dict, line_no: int) -> KnowledgeEvent:
    try:
        return KnowledgeEvent(
            event_id=str(_require(record, "event_id", line_no)),
            story_id=str(_require(record, "story_id", line_no)),
            scene_index=int(_require(record, "scene_index", line_no)),
            time=int(_require(record, "time", line_no)),
            kind=str(_require(record, "kind", line_no)),
            speaker=record.get("speaker"),
            text=str(_require(record, "text", line_no)),
        )
    except CorpusError as exc:
        raise CorpusError(f"line {line_no}: {exc}") from None


def _parse_profile(record: dict, line_no: int) -> CharacterProfile:
    try:
        return CharacterProfile(
            story_id=str(_require(record, "story_id", line_no)),
            character=str(_require(record, "character", line_no)),
            description=str(_require(record, "description", line_no)),
        )
    except CorpusError as exc:
        raise CorpusError(f"line {line_no}: {exc}") from None


def _check_monotone(story_id: str, events: list[KnowledgeEvent]) -> None:
    for prev, cur in zip(events, events[1:]):
        if cur.time <= prev.time:
            raise CorpusError(
                f"story {story_id}: event {cur.event_id!r} time {cur.time} "
                f"is not greater than preceding event {prev.event_id!r} time {prev.time}"
            )
        if cur.scene_index < prev.scene_index:
            raise CorpusError(
                f"story {story_id}: event {cur.event_id!r} scene_index decreases"
            )


SEGMENT_PROMPT = """\
Split the following script excerpt into knowledge events. Emit one JSON object \
per line, in story order, and nothing else. For a spoken line use \
{{"kind": "speech", "speaker": "NAME", "text": "..."}}. For a stage direction or \
scene description use {{"kind": "non_speech", "text": "..."}}. Mark the start of \
a new scene with {{"kind": "scene_break"}}.

Script:
{script}"""


def segment_script(raw_script: str, backend, story_id: str = "script") -> list[KnowledgeEvent]:
    """Segment raw script text into knowledge events via the LLM backend.

    Times are assigned as a running event index from 0; scene breaks advance
    scene_index. Malformed segmentation output raises SegmentationError.
    """
    from .llm import ChatRequest, GenerationParams, complete

    request = ChatRequest(
        user_prompt=SEGMENT_PROMPT.format(script=raw_script),
        params=GenerationParams(temperature=0.0),
        purpose="judge",
    )
    response = complete(backend, request)

    events: list[KnowledgeEvent] = []
    scene_index = 0
    time = 0
    for raw_line in response.text.splitlines():
        raw_line = raw_line.strip()
        if not raw_line:
            continue
        try:
            item = json.loads(raw_line)
        except json.JSONDecodeError as exc:
            raise SegmentationError(
                f"unparseable segmentation line: {raw_line!r}"
            ) from exc
        kind = item.get("kind")
        if kind == "scene_break":
            if time > 0:
                scene_index += 1
            continue
        if kind not in EVENT_KINDS:
            raise SegmentationError(f"segmentation line has unknown kind: {raw_line!r}")
        try:
            events.append(
                KnowledgeEvent(
                    event_id=f"{story_id}-e{time:04d}",
                    story_id=story_id,
                    scene_index=scene_index,
                    time=time,
                    kind=kind,
                    speaker=item.get("speaker") if kind == "speech" else None,
                    text=str(item.get("text", "")),
                )
            )
        except CorpusError as exc:
            raise SegmentationError(f"invalid segmented event: {exc}") from exc
        time += 1
    return events


def event_to_record(event: KnowledgeEvent) -> dict:
    """JSONL record for an event, matching the corpus schema."""
    record = {
        "record": "event",
        "event_id": event.event_id,
        "story_id": event.story_id,
        "scene_index": event.scene_index,
        "time": event.time,
        "kind": event.kind,
    }
    if event.speaker is not None:
        record["speaker"] = event.speaker
    record["text"] = event.text
    return record
