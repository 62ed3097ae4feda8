"""Conversation-driven frame captioning.

A chat model interrogates the VQA backend about one frame: it reads the
initial caption, asks follow-up questions one at a time, and finally rewrites
the caption so that it reflects every answer (dropping objects the answers
contradict). Prompt wording ships as versioned assets under `prompts/`.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from importlib import resources

from .backends import Backends, ChatBackend, GenParams, VqaBackend, chat_complete, user_turn, vqa_answer
from .errors import DataError, GenerationError

INITIAL_QUESTION = "Describe the image in detail."

#: Chat output that ends the question loop.
STOP_WORD = "DONE"

DEFAULT_ROUNDS = 5


def load_prompt(name: str) -> str:
    return (resources.files("wayfind") / "prompts" / name).read_text(encoding="utf-8")


_QUESTION_TEMPLATE = load_prompt("question_v1.txt")
_REFINE_TEMPLATE = load_prompt("refine_v1.txt")


@dataclass
class Transcript:
    """The question/answer exchange that produced one caption."""

    observation: str
    initial_caption: str
    qa_pairs: list[tuple[str, str]] = field(default_factory=list)

    def questions(self) -> list[str]:
        return [q for q, _ in self.qa_pairs]

    def to_dict(self) -> dict:
        return {
            "observation": self.observation,
            "initial_caption": self.initial_caption,
            "qa_pairs": [[q, a] for q, a in self.qa_pairs],
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "Transcript":
        return cls(
            observation=str(raw["observation"]),
            initial_caption=str(raw["initial_caption"]),
            qa_pairs=[(str(q), str(a)) for q, a in raw.get("qa_pairs", [])],
        )


@dataclass(frozen=True)
class CaptionRecord:
    """A refined, declarative caption for one frame plus its transcript."""

    frame_index: int
    observation: str
    caption: str
    transcript: Transcript
    view_fallback: bool = False

    def __post_init__(self) -> None:
        if self.frame_index < 0:
            raise DataError("frame_index must be >= 0")
        if not self.caption:
            raise DataError("caption must be non-empty")
        if "?" in self.caption:
            raise DataError("caption must be declarative (no question marks)")

    def to_dict(self) -> dict:
        return {
            "frame_index": self.frame_index,
            "observation": self.observation,
            "caption": self.caption,
            "transcript": self.transcript.to_dict(),
            "view_fallback": self.view_fallback,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "CaptionRecord":
        return cls(
            frame_index=int(raw["frame_index"]),
            observation=str(raw["observation"]),
            caption=str(raw["caption"]),
            transcript=Transcript.from_dict(raw["transcript"]),
            view_fallback=bool(raw.get("view_fallback", False)),
        )


def _qa_block(transcript: Transcript) -> str:
    if not transcript.qa_pairs:
        return "(none yet)"
    return "\n".join(f"Q: {q}\nA: {a}" for q, a in transcript.qa_pairs)


def next_question(transcript: Transcript, chat: ChatBackend, params: GenParams) -> str | None:
    """Ask the chat model for the next question; None signals the loop should stop.

    The loop stops when the model replies DONE or repeats an earlier question
    verbatim.
    """
    prompt = _QUESTION_TEMPLATE.format(
        initial_caption=transcript.initial_caption, qa_block=_qa_block(transcript)
    )
    output = chat_complete(chat, [user_turn(prompt)], params)
    line = next((ln.strip() for ln in output.splitlines() if ln.strip()), "")
    if not line or line.rstrip(".") == STOP_WORD:
        return None
    if line in transcript.questions():
        return None
    return line


def refine_caption(transcript: Transcript, chat: ChatBackend, params: GenParams) -> str:
    """Rewrite the initial caption so it incorporates every answer.

    With an empty exchange the initial caption is returned unchanged and no
    backend call is made.
    """
    if not transcript.initial_caption:
        raise DataError("refine_caption requires an initial caption")
    if not transcript.qa_pairs:
        return transcript.initial_caption
    prompt = _REFINE_TEMPLATE.format(
        initial_caption=transcript.initial_caption, qa_block=_qa_block(transcript)
    )
    output = chat_complete(chat, [user_turn(prompt)], params).strip()
    if not output:
        raise GenerationError("caption refinement returned empty output")
    return output


def _declarative(text: str) -> str:
    # Captions feed prompt templates downstream and must not read as questions.
    return text.replace("?", ".").strip()


def describe_frame(
    observation: str,
    rounds: int,
    chat: ChatBackend,
    vqa: VqaBackend,
    params: GenParams,
    frame_index: int = 0,
) -> CaptionRecord:
    """Run the captioning conversation for one frame.

    Issues exactly 1 + k VQA calls where k <= rounds; rounds=0 skips the chat
    model entirely and returns the initial caption.
    """
    if rounds < 0:
        raise DataError(f"rounds must be >= 0, got {rounds}")
    initial = vqa_answer(vqa, observation, INITIAL_QUESTION).strip()
    if not initial:
        raise GenerationError(f"empty initial caption for observation {observation!r}")
    transcript = Transcript(observation=observation, initial_caption=initial)

    for _ in range(rounds):
        question = next_question(transcript, chat, params)
        if question is None:
            break
        answer = vqa_answer(vqa, observation, question)
        transcript.qa_pairs.append((question, answer))

    caption = _declarative(refine_caption(transcript, chat, params))
    if not caption:
        raise GenerationError(f"empty refined caption for observation {observation!r}")
    return CaptionRecord(
        frame_index=frame_index,
        observation=observation,
        caption=caption,
        transcript=transcript,
    )


@dataclass
class Captioner:
    """Bundles the backends and round budget used to caption frames."""

    chat: ChatBackend
    vqa: VqaBackend
    chat_params: GenParams
    rounds: int = DEFAULT_ROUNDS

    @classmethod
    def from_backends(cls, backends: Backends, rounds: int = DEFAULT_ROUNDS) -> "Captioner":
        return cls(chat=backends.chat, vqa=backends.vqa, chat_params=backends.chat_params,
                   rounds=rounds)

    def describe(self, observation: str, frame_index: int = 0) -> CaptionRecord:
        return describe_frame(
            observation, self.rounds, self.chat, self.vqa, self.chat_params, frame_index
        )


def mark_view_fallback(record: CaptionRecord) -> CaptionRecord:
    return dataclasses.replace(record, view_fallback=True)
