"""Prompt templates for response generation and atomic fact verification,
plus the parsers for fact lists and support verdicts.

Verification prompts end with a fixed output-format instruction so verdicts
stay machine-readable; unparseable verdicts are treated as unsupported by the
callers (fail closed).
"""

from __future__ import annotations

import re

from .knowledge import KnowledgeEvent
from .retrieval import Document

ANONYMOUS_ROLE = "Character A"
ANONYMOUS_TITLE = "an untitled story"

VERDICT_INSTRUCTION = (
    "Answer with exactly 'Supported' or 'Not Supported' followed by one "
    "sentence of reasoning."
)


def format_event_line(event: KnowledgeEvent) -> str:
    """One evidence line: '[scene k, t=time] SPEAKER: text' (speaker omitted
    for non-speech events)."""
    prefix = f"[scene {event.scene_index}, t={event.time}]"
    if event.kind == "speech":
        return f"{prefix} {event.speaker}: {event.text}"
    return f"{prefix} {event.text}"


def format_evidence(items: list[Document] | list[KnowledgeEvent]) -> str:
    lines = []
    for item in items:
        event = item.event if isinstance(item, Document) else item
        lines.append(format_event_line(event))
    return "\n".join(lines)


def anonymize_text(text: str, role: str, story_title: str) -> str:
    # Title first: role names are often a substring of the title, and the
    # reverse order would leave title fragments behind.
    text = re.sub(re.escape(story_title), ANONYMOUS_TITLE, text, flags=re.IGNORECASE)
    text = re.sub(re.escape(role), ANONYMOUS_ROLE, text, flags=re.IGNORECASE)
    return text


def render_irg_prompt(
    query: str,
    role: str,
    story_title: str,
    profile: str | None,
    evidence: list[Document] | None,
    anonymize: bool = False,
) -> str:
    """Role-play generation prompt.

    profile=None drops the character-description sentence; evidence=None drops
    the relevant-scenes sentence entirely, while an empty list renders
    "(none)". anonymize replaces the role name and story title everywhere,
    including inside evidence speaker labels.
    """
    parts = [
        f"You will role-play as {role} from {story_title}. "
        "Your task is to respond to the following dialogue context. "
        "If the question matches a scene from your storyline, please reuse the "
        f"original lines from the story. You will respond and answer like {role} "
        f"using the tone, manner, and vocabulary {role} would use."
    ]
    if profile is not None:
        parts.append(f"Your character description is: {profile}.")
    if evidence is not None:
        block = format_evidence(evidence) if evidence else "(none)"
        parts.append(f"Relevant scenes for the given context are as follows:\n{block}")
    parts.append(f"Dialogue context: {query}")
    prompt = "\n".join(parts)
    if anonymize:
        prompt = anonymize_text(prompt, role, story_title)
    return prompt


def render_dec_prompt(response_text: str) -> str:
    return (
        "I will give you an utterance from a movie or a play. Your task is to "
        "provide me with a list of atomic facts expressed in the given "
        "utterance. Each atomic fact should be described in a name-only "
        f"third-person format. Utterance: {response_text}"
    )


def render_fcr_prompt(fact: str, evidence: list[Document] | list[KnowledgeEvent]) -> str:
    return (
        "Consider the given statement and the evidence knowledge sources. "
        "Indicate whether the statement is supported by the knowledge sources. "
        "Negation of a false statement should be considered supported. "
        f"Statement: {fact}\n"
        f"Evidence Knowledge:\n{format_evidence(evidence)}\n"
        f"{VERDICT_INSTRUCTION}"
    )


def render_fcs_prompt(fact: str, role: str, story_title: str) -> str:
    return (
        f"Consider the given statement by {role} from {story_title}. "
        f"Indicate whether the statement is supported by the storyline of "
        f"{story_title}. Negation of a false statement should be considered "
        f"supported. Statement: {fact}\n"
        f"{VERDICT_INSTRUCTION}"
    )


def render_sru_prompt(query: str, response_text: str, removed: list[str], role: str, story_title: str) -> str:
    claims = "\n".join(f"{i}. {text}" for i, text in enumerate(removed, start=1))
    return (
        f"Consider the following response generated by an AI role-playing as "
        f"{role} from {story_title}. The response may contain one or more "
        "unsupported claims as a result of hallucination. The unsupported "
        "claims are listed below. Rewrite the response to remove all the "
        "unsupported claims from the response. If the hallucination stems from "
        "a wrong assertion made in the original query, feel free to clarify "
        f"that. Original query: {query}\n"
        f"Response: {response_text}\n"
        f"Unsupported Claims:\n{claims}"
    )


_FACT_LINE_RE = re.compile(r"^\s*(?:\d+[.)]|[-*•])\s+(.*\S)\s*$")

_VERDICT_RE = re.compile(r"\b(?:not\s+supported|supported|yes|no)\b", re.IGNORECASE)


def parse_fact_list(text: str) -> list[str]:
    """Numbered ('1. ...') or bulleted ('- ...') lines; anything else is not a fact."""
    facts = []
    for line in text.splitlines():
        match = _FACT_LINE_RE.match(line)
        if match:
            facts.append(match.group(1).strip())
    return facts


def parse_verdict(text: str) -> bool | None:
    """First whole-word verdict marker wins; None when no marker is found."""
    match = _VERDICT_RE.search(text)
    if match is None:
        return None
    token = match.group(0).lower()
    return token in ("supported", "yes")
