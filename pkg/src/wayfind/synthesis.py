"""Instruction synthesis: frame selection, prompt construction, style validation.

The prompt template wording below is the generation contract and is pinned
byte-for-byte by golden-file tests, including its original phrasing quirks.
Do not edit the constants without regenerating the golden files.
"""

from __future__ import annotations

import logging
import random
import re
import string
from dataclasses import dataclass
from typing import Callable, Sequence

from .backends import Backends, ChatBackend, ChatTurn, GenParams, chat_complete, user_turn
from .env_model import HEADINGS, EnvGraph, Episode, quantize_heading
from .errors import DataError, GenerationError
from .vqa_chat import CaptionRecord, Captioner, Transcript, mark_view_fallback

log = logging.getLogger(__name__)

FRAME_STRATEGIES = ("central", "panoramic")
INSTRUCTION_SOURCES = ("generated", "human")

PROMPT_HEADER = (
    "A robot agent at home sees a sequence of egocentric images with the following "
    "frame descriptions."
)
PROMPT_REQUEST = (
    "Write an concise instruction in the style of the Reference Texts that would get "
    "the robot from Frame 0 to Frame {last}."
)
REFERENCE_GUARD = (
    "Use only the frame descriptions, not the Reference Texts, as the source of "
    "objects and rooms."
)

R2R_CONSTRAINT = (
    "Write directions so a smart robot can find the final frame after starting from "
    "the same starting frame. You do not have to use information in the frames, and "
    "just need to reach the goal location."
)
REVERIE_CONSTRAINT = (
    "The instruction must be a single sentence long, ending with a task related to an "
    "object in the final frame, and must be less than 20 words."
)

PANORAMA_PROMPT = (
    "I see a panoramic view with the following descriptions.\n"
    "North: {north}\n"
    "East: {east}\n"
    "South: {south}\n"
    "West: {west}\n"
    "Summarize these descriptions into a single description using less than 20 words."
)
PANORAMA_RETRY = "Use fewer than 20 words."
PANORAMA_WORD_LIMIT = 20

#: Placeholder caption for directions with no view (continuous chain graphs).
ABSENT_VIEW_CAPTION = "(no view in this direction)"

DEFAULT_REFERENCE_COUNT = 3

_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


def word_count(text: str) -> int:
    """Whitespace tokens after punctuation stripping."""
    return len(text.translate(_PUNCT_TABLE).split())


def sentence_count(text: str) -> int:
    """Number of terminal-punctuation-delimited sentences."""
    segments = re.split(r"[.!?]+", text)
    return sum(1 for seg in segments if seg.strip())


# ---------------------------------------------------------------------------
# Styles
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StyleProfile:
    """A target instruction style: reference examples plus optional limits."""

    name: str
    reference_texts: tuple[str, ...]
    constraint_text: str = ""
    max_words: int | None = None
    max_sentences: int | None = None

    def __post_init__(self) -> None:
        if not self.reference_texts:
            raise DataError(f"style {self.name!r} needs at least one reference text")


_REVERIE_REFERENCES = (
    "Go to the kitchen and wipe down the counter.",
    "Walk to the bathroom on level one and turn on the faucet.",
    "Enter the office and switch off the lamp on the desk.",
    "Go to the living room and straighten the picture above the couch.",
    "Head to the bedroom and close the curtains by the bed.",
    "Go to the laundry room and empty the dryer.",
)

_R2R_REFERENCES = (
    "Walk out of the bedroom and turn left. Continue down the hallway past the"
    " paintings. Stop at the top of the stairs.",
    "Leave the kitchen through the archway. Walk straight across the dining room."
    " Wait next to the round table.",
    "Turn right at the end of the counter. Go through the door ahead of you. Stop"
    " once you reach the rug.",
    "Exit the bathroom and walk past the sinks. Turn left into the hallway. Stop in"
    " front of the second door on the right.",
    "Go down the stairs and turn right. Walk past the couch and stop by the piano.",
    "Walk forward past the fireplace. Turn left at the bookshelf. Stop beside the"
    " window.",
)


def builtin_styles() -> dict[str, StyleProfile]:
    return {
        "reverie": StyleProfile(
            name="reverie",
            reference_texts=_REVERIE_REFERENCES,
            constraint_text=REVERIE_CONSTRAINT,
            max_words=20,
            max_sentences=1,
        ),
        "r2r": StyleProfile(
            name="r2r",
            reference_texts=_R2R_REFERENCES,
            constraint_text=R2R_CONSTRAINT,
        ),
    }


def get_style(name: str) -> StyleProfile:
    styles = builtin_styles()
    if name not in styles:
        raise DataError(f"unknown style {name!r}; built-ins: {sorted(styles)}")
    return styles[name]


def sample_references(style: StyleProfile, seed: int, count: int = DEFAULT_REFERENCE_COUNT) -> StyleProfile:
    """Deterministically draw `count` reference texts from the style's pool."""
    if count < 1:
        raise DataError("reference count must be >= 1")
    if len(style.reference_texts) <= count:
        return style
    rng = random.Random(seed)
    picked = tuple(rng.sample(style.reference_texts, count))
    return StyleProfile(
        name=style.name,
        reference_texts=picked,
        constraint_text=style.constraint_text,
        max_words=style.max_words,
        max_sentences=style.max_sentences,
    )


# ---------------------------------------------------------------------------
# Prompt construction
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PromptBundle:
    """The exact prompt sent for one episode, kept for auditability."""

    frames: tuple[tuple[int, str], ...]
    style: StyleProfile
    rendered: str


@dataclass(frozen=True)
class Instruction:
    text: str
    style: str
    episode_id: str
    frame_strategy: str
    source: str

    def __post_init__(self) -> None:
        if not self.text or self.text != self.text.strip():
            raise DataError("instruction text must be non-empty and trimmed")
        if self.frame_strategy not in FRAME_STRATEGIES:
            raise DataError(f"unknown frame strategy {self.frame_strategy!r}")
        if self.source not in INSTRUCTION_SOURCES:
            raise DataError(f"unknown instruction source {self.source!r}")


def build_prompt(
    captions: Sequence[str],
    style: StyleProfile,
    guard_reference_leak: bool = False,
) -> PromptBundle:
    """Render the generation prompt; deterministic and whitespace-exact."""
    if not captions:
        raise DataError("build_prompt requires at least one caption")
    lines = [PROMPT_HEADER]
    for i, caption in enumerate(captions):
        lines.append(f"Frame {i}: {caption}")
    refs = ", ".join(f"'{ref}'" for ref in style.reference_texts)
    lines.append(f"Reference Texts: [{refs}]")
    lines.append(PROMPT_REQUEST.format(last=len(captions) - 1))
    if style.constraint_text:
        lines.append(style.constraint_text)
    if guard_reference_leak:
        lines.append(REFERENCE_GUARD)
    return PromptBundle(
        frames=tuple(enumerate(captions)),
        style=style,
        rendered="\n".join(lines),
    )


def render_panorama_prompt(captions: Sequence[str]) -> str:
    if len(captions) != 4:
        raise DataError(f"panorama summary needs exactly 4 captions, got {len(captions)}")
    north, east, south, west = captions
    return PANORAMA_PROMPT.format(north=north, east=east, south=south, west=west)


def summarize_panorama(captions: Sequence[str], chat: ChatBackend, params: GenParams) -> str:
    """Summarize the four directional captions (ordered N, E, S, W) into one line.

    An over-length summary is retried once with an explicit length reminder and
    then accepted with a logged warning.
    """
    prompt = render_panorama_prompt(captions)
    turns = [user_turn(prompt)]
    summary = chat_complete(chat, turns, params).strip()
    if not summary:
        raise GenerationError("panorama summary was empty")
    if word_count(summary) > PANORAMA_WORD_LIMIT:
        retry_turns = turns + [
            # One retry with the previous answer in context, then accept.
            ChatTurn(role="assistant", content=summary),
            user_turn(PANORAMA_RETRY),
        ]
        summary = chat_complete(chat, retry_turns, params).strip()
        if not summary:
            raise GenerationError("panorama summary retry was empty")
        if word_count(summary) > PANORAMA_WORD_LIMIT:
            log.warning("panorama summary still over %d words after retry", PANORAMA_WORD_LIMIT)
    return summary


# ---------------------------------------------------------------------------
# Frame selection
# ---------------------------------------------------------------------------

def _central_headings(env: EnvGraph, episode: Episode) -> list[int]:
    # Each node faces its successor; the final node reuses the incoming heading.
    headings = [
        quantize_heading(env.bearing(a, b)) for a, b in zip(episode.path, episode.path[1:])
    ]
    headings.append(headings[-1])
    return headings


def _nearest_present_heading(views, target: int) -> int | None:
    candidates = [
        (abs((h - target + 180) % 360 - 180), h) for h in HEADINGS if views[h] is not None
    ]
    if not candidates:
        return None
    return min(candidates)[1]


def select_frames(
    env: EnvGraph,
    episode: Episode,
    strategy: str,
    captioner: Captioner,
) -> list[CaptionRecord]:
    """Produce one caption per path node, in path order.

    central:   caption the view facing the next path node (the final node
               reuses the previous heading). When the facing view is absent,
               which happens on continuous chain graphs, the nearest present
               view is captioned instead and the record is flagged.
    panoramic: caption all four views per node and replace them with a single
               chat-generated summary.
    """
    if strategy not in FRAME_STRATEGIES:
        raise DataError(f"unknown frame strategy {strategy!r}")
    if len(episode.path) < 2:
        raise DataError("episodes must span at least 2 nodes")

    records: list[CaptionRecord] = []
    if strategy == "central":
        for index, (node_id, heading) in enumerate(
            zip(episode.path, _central_headings(env, episode))
        ):
            views = env.node(node_id).views
            ref = views[heading]
            fallback = False
            if ref is None:
                nearest = _nearest_present_heading(views, heading)
                if nearest is None:
                    raise DataError(f"node {node_id!r} has no views to caption")
                ref = views[nearest]
                fallback = True
            record = captioner.describe(ref, frame_index=index)
            records.append(mark_view_fallback(record) if fallback else record)
        return records

    for index, node_id in enumerate(episode.path):
        views = env.node(node_id).views
        directional: list[str] = []
        for heading in HEADINGS:
            ref = views[heading]
            if ref is None:
                directional.append(ABSENT_VIEW_CAPTION)
            else:
                directional.append(captioner.describe(ref, frame_index=index).caption)
        summary = summarize_panorama(directional, captioner.chat, captioner.chat_params)
        observation = f"pano:{node_id}"
        records.append(
            CaptionRecord(
                frame_index=index,
                observation=observation,
                caption=summary,
                transcript=Transcript(observation=observation, initial_caption=summary),
            )
        )
    return records


# ---------------------------------------------------------------------------
# Generation and validation
# ---------------------------------------------------------------------------

def synthesize_instruction(
    env: EnvGraph,
    episode: Episode,
    style: StyleProfile,
    strategy: str,
    backends: Backends,
    captioner: Captioner | None = None,
    seed: int = 0,
    reference_count: int = DEFAULT_REFERENCE_COUNT,
    guard_reference_leak: bool = False,
    on_prompt: Callable[[PromptBundle], None] | None = None,
    frames: Sequence[CaptionRecord] | None = None,
) -> Instruction:
    """Caption the episode frames, build the prompt, and generate an instruction.

    `on_prompt` receives the PromptBundle before generation so callers can
    persist it for audit. `frames` short-circuits captioning with records a
    previous stage already produced.
    """
    if captioner is None:
        captioner = Captioner.from_backends(backends)
    materialized = sample_references(style, seed=seed, count=reference_count)
    records = list(frames) if frames is not None else select_frames(env, episode, strategy, captioner)
    if len(records) != len(episode.path):
        raise DataError(
            f"expected {len(episode.path)} captions for episode {episode.episode_id!r}, "
            f"got {len(records)}"
        )
    bundle = build_prompt(
        [record.caption for record in records],
        materialized,
        guard_reference_leak=guard_reference_leak,
    )
    if on_prompt is not None:
        on_prompt(bundle)
    text = chat_complete(backends.chat, [user_turn(bundle.rendered)], backends.chat_params).strip()
    if not text:
        raise GenerationError(f"empty generation for episode {episode.episode_id!r}")
    return Instruction(
        text=text,
        style=style.name,
        episode_id=episode.episode_id,
        frame_strategy=strategy,
        source="generated",
    )


def validate_style(instruction: Instruction | str, style: StyleProfile) -> list[str]:
    """Check an instruction against the style limits; returns violation strings.

    Violations are advisory: generation is never rejected or mutated based on
    them.
    """
    text = instruction if isinstance(instruction, str) else instruction.text
    violations: list[str] = []
    if not text.strip():
        violations.append("empty")
        return violations
    if style.max_words is not None:
        words = word_count(text)
        if words > style.max_words:
            violations.append(f"word_count={words} > {style.max_words}")
    if style.max_sentences is not None:
        sentences = sentence_count(text)
        if sentences > style.max_sentences:
            violations.append(f"sentence_count={sentences} > {style.max_sentences}")
    return violations
