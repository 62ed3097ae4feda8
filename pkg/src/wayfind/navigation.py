"""Zero-shot navigation policies over environment graphs.

An instruction is split into a navigation component and an activity component
at the last " and ", the navigation component is chunked into noun phrases,
and the agent then grounds one phrase at a time against the four directional
views of its current node:

* score >= advance_threshold: the phrase is considered reached; move on to
  the next phrase without leaving the node. Advancing past the last phrase
  stops the run.
* otherwise: hop to the neighbor nearest the best-scoring heading. If no
  neighbor lies within 45 degrees, the second-best heading is tried once,
  then the run stops with no_move.

The backtracking variants additionally watch for stalled grounding scores:
when the per-step best has not exceeded (running max - margin) for `patience`
consecutive steps, the agent jumps back to the visited node that scored
highest for the current phrase. To avoid immediately re-taking the branch
that stalled, the heading previously taken from that node is masked for one
grounding step. The mechanism is disabled for plain clip_nav.

GLIP-style policies differ only in which grounding backend the caller wires;
the policy loop is identical to the backtracking variant.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

from .backends import Backends, ChatBackend, GenParams, GroundingBackend, chat_complete, ground_score, user_turn
from .env_model import HEADINGS, EnvGraph, Episode
from .errors import DataError
from .vqa_chat import load_prompt

POLICIES = ("clip_nav", "seq_clip_nav", "glip_nav")
BACKTRACKING_POLICIES = ("seq_clip_nav", "glip_nav")

STOP_REASONS = ("phrases_exhausted", "budget", "no_move")
ACTIONS = ("move", "advance_phrase", "backtrack", "stop")

_NC_AC_SEPARATOR = " and "

_PHRASES_TEMPLATE = load_prompt("phrases_v1.txt")


# ---------------------------------------------------------------------------
# Instruction decomposition
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Decomposition:
    navigation_phrases: tuple[str, ...]
    activity: str = ""

    def __post_init__(self) -> None:
        if not self.navigation_phrases:
            raise DataError("decomposition requires at least one navigation phrase")


_DETERMINERS = frozenset(
    "the a an this that these those your its".split()
)
_CONNECTORS = frozenset("with of".split())
_ADJECTIVES = frozenset(
    """red white gray grey blue green brown black yellow orange purple pink
    wooden metal glass leather fabric small large big little tall short round
    square long narrow wide dark light bright colorful living dining final
    first second third nearest bottommost topmost gold silver""".split()
)
_NOUNS = frozenset(
    """room rooms kitchen bathroom bedroom hallway hall corridor stairs stair
    staircase stairway landing couch sofa chair chairs armchair table tables
    desk television tv screen monitor computer laptop plant plants lamp light
    door doors doorway window windows wall walls floor rug carpet mat counter
    countertop sink faucet bed beds curtain curtains shelf shelves bookshelf
    painting paintings picture pictures frame fireplace piano dryer washer
    machine mug cup blanket pillow cushion oven stove fridge refrigerator
    microwave cabinet cabinets closet wardrobe office garage balcony porch
    furniture object objects item items goal location target area level
    entrance exit archway mirror toilet shower bathtub tub vase bench stool
    dresser nightstand sideboard television""".split()
)


def split_components(instruction: str) -> tuple[str, str]:
    """Split into (navigation, activity) at the last " and "; activity may be empty."""
    idx = instruction.rfind(_NC_AC_SEPARATOR)
    if idx == -1:
        return instruction.strip(), ""
    return instruction[:idx].strip(), instruction[idx + len(_NC_AC_SEPARATOR):].strip()


def rule_based_phrases(text: str) -> list[str]:
    """Deterministic noun-phrase chunker over a bundled lexicon.

    A phrase is a maximal run of determiner/adjective/noun tokens, optionally
    continued across a connector ("with"/"of") when another such run follows.
    Trailing punctuation on a token ends the run; runs without a noun are
    dropped.
    """
    phrases: list[str] = []
    current: list[str] = []
    pending_connector: str | None = None

    def close() -> None:
        nonlocal current, pending_connector
        run = list(current)
        while run and run[-1].lower() not in _NOUNS:
            run.pop()
        if run and any(tok.lower() in _NOUNS for tok in run):
            phrases.append(" ".join(run))
        current = []
        pending_connector = None

    for raw in text.split():
        token = raw.strip(".,;:!?\"'()")
        lower = token.lower()
        boundary_after = raw != token and raw.endswith((".", ",", ";", ":", "!", "?"))
        if lower in _DETERMINERS or lower in _ADJECTIVES or lower in _NOUNS:
            if pending_connector is not None:
                current.append(pending_connector)
                pending_connector = None
            current.append(token)
            if boundary_after:
                close()
        elif lower in _CONNECTORS and current and not boundary_after:
            pending_connector = token
        else:
            close()
    close()
    return phrases


def chat_phrase_extractor(chat: ChatBackend, params: GenParams) -> Callable[[str], list[str]]:
    """Phrase extractor backed by the chat model (one phrase per output line)."""

    def extract(text: str) -> list[str]:
        output = chat_complete(chat, [user_turn(_PHRASES_TEMPLATE.format(text=text))], params)
        lines = [line.strip().lstrip("-*0123456789. ").strip() for line in output.splitlines()]
        return [line for line in lines if line]

    return extract


def decompose_instruction(
    instruction: str,
    extractor: Callable[[str], list[str]] = rule_based_phrases,
) -> Decomposition:
    """Split the instruction and extract navigation phrases.

    When the extractor finds nothing, the whole navigation component is used
    as a single phrase.
    """
    if not instruction or not instruction.strip():
        raise DataError("decompose_instruction requires a non-empty instruction")
    navigation, activity = split_components(instruction)
    phrases = extractor(navigation)
    if not phrases:
        phrases = [navigation]
    return Decomposition(navigation_phrases=tuple(phrases), activity=activity)


# ---------------------------------------------------------------------------
# Policy configuration and traces
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PolicyConfig:
    policy: str = "clip_nav"
    advance_threshold: float = 0.6
    backtrack_patience: int = 3
    backtrack_margin: float = 0.1
    step_budget: int = 20
    success_radius: float = 3.0

    def __post_init__(self) -> None:
        if self.policy not in POLICIES:
            raise DataError(f"unknown policy {self.policy!r}; expected one of {POLICIES}")
        if not 0.0 <= self.advance_threshold <= 1.0:
            raise DataError("advance_threshold must lie in [0, 1]")
        if self.backtrack_patience < 1:
            raise DataError("backtrack_patience must be >= 1")
        if self.backtrack_margin < 0.0:
            raise DataError("backtrack_margin must be >= 0")
        if self.step_budget < 1:
            raise DataError("step_budget must be >= 1")
        if self.success_radius < 0.0:
            raise DataError("success_radius must be >= 0")

    def to_dict(self) -> dict:
        return {
            "policy": self.policy,
            "advance_threshold": self.advance_threshold,
            "backtrack_patience": self.backtrack_patience,
            "backtrack_margin": self.backtrack_margin,
            "step_budget": self.step_budget,
            "success_radius": self.success_radius,
        }

    @classmethod
    def from_dict(cls, raw: Mapping) -> "PolicyConfig":
        known = {f: raw[f] for f in cls.__dataclass_fields__ if f in raw}
        return cls(**known)


@dataclass(frozen=True)
class NavStep:
    node: str
    phrase_index: int
    scores: tuple[float, float, float, float]
    chosen_heading: int
    action: str

    def to_dict(self) -> dict:
        return {
            "node": self.node,
            "phrase_index": self.phrase_index,
            "scores": list(self.scores),
            "chosen_heading": self.chosen_heading,
            "action": self.action,
        }

    @classmethod
    def from_dict(cls, raw: Mapping) -> "NavStep":
        return cls(
            node=str(raw["node"]),
            phrase_index=int(raw["phrase_index"]),
            scores=tuple(float(s) for s in raw["scores"]),
            chosen_heading=int(raw["chosen_heading"]),
            action=str(raw["action"]),
        )


@dataclass(frozen=True)
class NavTrace:
    episode_id: str
    policy: str
    visited: tuple[str, ...]
    steps: tuple[NavStep, ...]
    stop_node: str
    stop_reason: str
    phrases: tuple[str, ...] = ()
    activity: str = ""

    def backtrack_count(self) -> int:
        return sum(1 for step in self.steps if step.action == "backtrack")

    def to_dict(self) -> dict:
        return {
            "episode_id": self.episode_id,
            "policy": self.policy,
            "visited": list(self.visited),
            "steps": [step.to_dict() for step in self.steps],
            "stop_node": self.stop_node,
            "stop_reason": self.stop_reason,
            "phrases": list(self.phrases),
            "activity": self.activity,
        }

    @classmethod
    def from_dict(cls, raw: Mapping) -> "NavTrace":
        return cls(
            episode_id=str(raw["episode_id"]),
            policy=str(raw["policy"]),
            visited=tuple(str(n) for n in raw["visited"]),
            steps=tuple(NavStep.from_dict(s) for s in raw["steps"]),
            stop_node=str(raw["stop_node"]),
            stop_reason=str(raw["stop_reason"]),
            phrases=tuple(str(p) for p in raw.get("phrases", [])),
            activity=str(raw.get("activity", "")),
        )


# ---------------------------------------------------------------------------
# Grounding and movement primitives
# ---------------------------------------------------------------------------

def ground_step(
    grounder: GroundingBackend,
    phrase: str,
    views: Mapping[int, str | None],
) -> tuple[list[float], int]:
    """Score the phrase against the four directional views of one node.

    Absent views score 0.0 without a backend call; the backend is called at
    most once per step. Returns (scores by heading order, argmax heading);
    score ties resolve to the smaller heading angle.
    """
    present = [(heading, views[heading]) for heading in HEADINGS if views[heading] is not None]
    scores = {heading: 0.0 for heading in HEADINGS}
    if present:
        returned = ground_score(grounder, phrase, [ref for _, ref in present])
        for (heading, _), value in zip(present, returned):
            scores[heading] = value
    ordered = [scores[heading] for heading in HEADINGS]
    best_heading = max(HEADINGS, key=lambda h: (scores[h], -h))
    return ordered, best_heading


def _second_heading(scores: Sequence[float], best_heading: int) -> int:
    remaining = [h for h in HEADINGS if h != best_heading]
    return max(remaining, key=lambda h: (scores[HEADINGS.index(h)], -h))


def move_target(env: EnvGraph, at: str, heading: int) -> str | None:
    """Neighbor whose bearing is nearest the heading and within 45 degrees.

    Ties go to the lexicographically smaller node id; None when no neighbor
    qualifies.
    """
    candidates = []
    for neighbor, _ in env.neighbors(at):
        diff = abs((env.bearing(at, neighbor) - heading + 180.0) % 360.0 - 180.0)
        if diff <= 45.0 + 1e-9:
            candidates.append((diff, neighbor))
    if not candidates:
        return None
    return min(candidates)[1]


# ---------------------------------------------------------------------------
# Backtracking state
# ---------------------------------------------------------------------------

@dataclass
class BacktrackState:
    """Per-phrase grounding progress used to decide when to fall back."""

    policy: str
    patience: int
    margin: float
    running_max: float = float("-inf")
    stale_steps: int = 0
    node_best: dict[str, float] = field(default_factory=dict)

    def observe(self, node: str, best_score: float) -> None:
        exceeded = best_score > self.running_max - self.margin
        if exceeded:
            self.stale_steps = 0
        else:
            self.stale_steps += 1
        self.running_max = max(self.running_max, best_score)
        if node not in self.node_best or best_score > self.node_best[node]:
            self.node_best[node] = best_score

    def reset_after_backtrack(self) -> None:
        self.stale_steps = 0


def should_backtrack(state: BacktrackState) -> str | None:
    """Target node to fall back to, or None when the trigger is unmet.

    Triggers once the best score has stayed at or below (running max - margin)
    for `patience` consecutive steps; the target is the visited node with the
    highest recorded score for the current phrase (earliest visit on ties).
    Always None for non-backtracking policies.
    """
    if state.policy not in BACKTRACKING_POLICIES:
        return None
    if state.stale_steps < state.patience:
        return None
    target = None
    best = float("-inf")
    for node, score in state.node_best.items():  # insertion order = visit order
        if score > best:
            target, best = node, score
    return target


# ---------------------------------------------------------------------------
# Episode runner
# ---------------------------------------------------------------------------

def run_episode(
    env: EnvGraph,
    episode: Episode,
    instruction: str,
    config: PolicyConfig,
    backends: Backends,
    extractor: Callable[[str], list[str]] = rule_based_phrases,
) -> NavTrace:
    """Run one policy episode; deterministic given deterministic backends."""
    decomposition = decompose_instruction(instruction, extractor)
    phrases = decomposition.navigation_phrases

    node = episode.start
    visited: list[str] = [node]
    steps: list[NavStep] = []
    phrase_index = 0
    moves_used = 0
    state = BacktrackState(
        policy=config.policy, patience=config.backtrack_patience, margin=config.backtrack_margin
    )
    masked: tuple[str, int] | None = None
    last_move_heading: dict[str, int] = {}

    def record(action: str, scores: Sequence[float], heading: int) -> None:
        steps.append(
            NavStep(
                node=node,
                phrase_index=phrase_index,
                scores=tuple(scores),
                chosen_heading=heading,
                action=action,
            )
        )

    while True:
        phrase = phrases[phrase_index]
        scores, best_heading = ground_step(backends.grounder, phrase, env.node(node).views)
        if masked is not None and masked[0] == node:
            # One-shot mask after a backtrack: suppress the heading that was
            # taken from this node before, then re-pick.
            scores[HEADINGS.index(masked[1])] = 0.0
            best_heading = max(HEADINGS, key=lambda h: (scores[HEADINGS.index(h)], -h))
            masked = None
        best_score = scores[HEADINGS.index(best_heading)]

        if best_score >= config.advance_threshold:
            record("advance_phrase", scores, best_heading)
            phrase_index += 1
            if phrase_index >= len(phrases):
                return NavTrace(
                    episode_id=episode.episode_id,
                    policy=config.policy,
                    visited=tuple(visited),
                    steps=tuple(steps),
                    stop_node=node,
                    stop_reason="phrases_exhausted",
                    phrases=phrases,
                    activity=decomposition.activity,
                )
            state = BacktrackState(
                policy=config.policy,
                patience=config.backtrack_patience,
                margin=config.backtrack_margin,
            )
            continue

        state.observe(node, best_score)
        target = should_backtrack(state)
        if target is not None:
            record("backtrack", scores, best_heading)
            if target in last_move_heading:
                masked = (target, last_move_heading[target])
            visited.append(target)
            node = target
            state.reset_after_backtrack()
            continue

        move_to = move_target(env, node, best_heading)
        used_heading = best_heading
        if move_to is None:
            second = _second_heading(scores, best_heading)
            move_to = move_target(env, node, second)
            used_heading = second
        if move_to is None:
            record("stop", scores, best_heading)
            return NavTrace(
                episode_id=episode.episode_id,
                policy=config.policy,
                visited=tuple(visited),
                steps=tuple(steps),
                stop_node=node,
                stop_reason="no_move",
                phrases=phrases,
                activity=decomposition.activity,
            )
        record("move", scores, used_heading)
        last_move_heading[node] = used_heading
        visited.append(move_to)
        node = move_to
        moves_used += 1
        if moves_used >= config.step_budget:
            return NavTrace(
                episode_id=episode.episode_id,
                policy=config.policy,
                visited=tuple(visited),
                steps=tuple(steps),
                stop_node=node,
                stop_reason="budget",
                phrases=phrases,
                activity=decomposition.activity,
            )


def validate_trace(env: EnvGraph, trace: NavTrace, config: PolicyConfig) -> None:
    """Check trace structure against the graph; raises DataError on violations."""
    if not trace.visited:
        raise DataError("trace has no visited nodes")
    if trace.stop_reason not in STOP_REASONS:
        raise DataError(f"unknown stop reason {trace.stop_reason!r}")
    if trace.stop_node != trace.visited[-1]:
        raise DataError("stop_node must equal the last visited node")

    transitions = [step for step in trace.steps if step.action in ("move", "backtrack")]
    if len(transitions) != len(trace.visited) - 1:
        raise DataError(
            f"{len(transitions)} transition steps for {len(trace.visited)} visited nodes"
        )
    moves = 0
    backtracks = 0
    for i, step in enumerate(transitions):
        origin = trace.visited[i]
        target = trace.visited[i + 1]
        if step.node != origin:
            raise DataError(f"step {i} recorded at {step.node!r}, expected {origin!r}")
        if step.action == "move":
            moves += 1
            if not env.are_adjacent(origin, target):
                raise DataError(f"move between non-adjacent nodes {origin!r} -> {target!r}")
        else:
            backtracks += 1
            if target not in trace.visited[: i + 1]:
                raise DataError(f"backtrack to never-visited node {target!r}")
    if moves > config.step_budget:
        raise DataError(f"{moves} moves exceed step budget {config.step_budget}")
    if trace.policy == "clip_nav" and backtracks:
        raise DataError("clip_nav trace contains backtrack actions")
