"""Navigation success metrics and report aggregation.

SR is the fraction of episodes whose stop node lies within the success radius
of the goal. OSR additionally counts episodes that passed within the radius
at any visited node. SPL weights success by path efficiency:

    SPL = (1/N) * sum_i S_i * l_i / max(p_i, l_i)

with S_i the success indicator, l_i the geodesic start-to-goal length and p_i
the length actually traveled, including the walk back on backtrack steps.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

from .backends import EmbeddingBackend, embed_text
from .env_model import EnvGraph, euclidean, shortest_path
from .errors import DataError
from .navigation import NavTrace

_EPS = 1e-12


@dataclass(frozen=True)
class EpisodeOutcome:
    episode_id: str
    success: bool
    oracle_success: bool
    taken_length: float
    geodesic_length: float

    def __post_init__(self) -> None:
        if self.success and not self.oracle_success:
            raise DataError("success implies oracle_success")
        if self.taken_length < 0.0:
            raise DataError("taken_length must be >= 0")
        if not self.geodesic_length > 0.0:
            raise DataError("geodesic_length must be > 0")


@dataclass(frozen=True)
class MetricSummary:
    n_episodes: int
    sr: float
    osr: float
    spl: float


@dataclass(frozen=True)
class EvalReport:
    n_episodes: int
    sr: float
    osr: float
    spl: float
    by_policy: Mapping[str, MetricSummary]
    by_strategy: Mapping[str, MetricSummary]
    mean_pairwise_cosine: float | None = None

    def __post_init__(self) -> None:
        if self.spl > self.sr + _EPS or self.sr > self.osr + _EPS:
            raise DataError("report must satisfy SPL <= SR <= OSR")


def percent(value: float) -> str:
    """Fraction rendered as a fixed two-decimal percentage string."""
    return f"{value * 100.0:.2f}"


def judge_episode(env: EnvGraph, trace: NavTrace, goal: str, radius: float) -> EpisodeOutcome:
    """Score one trace against its goal node.

    The traveled length counts every move edge plus, for each backtrack, the
    shortest graph path from the node where the backtrack fired to its target.
    """
    goal_pos = env.node(goal).position

    def within(node_id: str) -> bool:
        return euclidean(env.node(node_id).position, goal_pos) <= radius

    success = within(trace.stop_node)
    oracle = any(within(node) for node in trace.visited)

    taken = 0.0
    transition_index = 0
    for step in trace.steps:
        if step.action == "move":
            taken += env.edge_length(
                trace.visited[transition_index], trace.visited[transition_index + 1]
            )
            transition_index += 1
        elif step.action == "backtrack":
            _, back_len = shortest_path(
                env, trace.visited[transition_index], trace.visited[transition_index + 1]
            )
            taken += back_len
            transition_index += 1

    _, geodesic = shortest_path(env, trace.visited[0], goal)
    return EpisodeOutcome(
        episode_id=trace.episode_id,
        success=success,
        oracle_success=oracle,
        taken_length=taken,
        geodesic_length=geodesic,
    )


def spl(outcomes: Sequence[EpisodeOutcome]) -> float:
    """Success weighted by path length over an outcome set."""
    if not outcomes:
        raise DataError("spl requires at least one outcome")
    total = 0.0
    for outcome in outcomes:
        if not outcome.success:
            continue
        denominator = max(outcome.taken_length, outcome.geodesic_length)
        total += 1.0 if denominator <= 0.0 else outcome.geodesic_length / denominator
    return total / len(outcomes)


def summarize_outcomes(outcomes: Sequence[EpisodeOutcome]) -> MetricSummary:
    if not outcomes:
        raise DataError("cannot summarize an empty outcome set")
    n = len(outcomes)
    return MetricSummary(
        n_episodes=n,
        sr=sum(1 for o in outcomes if o.success) / n,
        osr=sum(1 for o in outcomes if o.oracle_success) / n,
        spl=spl(outcomes),
    )


def evaluate(
    outcomes: Sequence[EpisodeOutcome],
    tags: Mapping[str, Mapping[str, str]] | None = None,
    mean_pairwise_cosine: float | None = None,
) -> EvalReport:
    """Aggregate outcomes into a report.

    `tags` optionally maps episode_id to {"policy": ..., "strategy": ...} and
    drives the per-policy / per-strategy breakdowns.
    """
    if not outcomes:
        raise DataError("evaluate requires at least one outcome")
    top = summarize_outcomes(outcomes)

    def group_by(key: str) -> dict[str, MetricSummary]:
        groups: dict[str, list[EpisodeOutcome]] = {}
        for outcome in outcomes:
            label = (tags or {}).get(outcome.episode_id, {}).get(key)
            if label is not None:
                groups.setdefault(label, []).append(outcome)
        return {label: summarize_outcomes(members) for label, members in sorted(groups.items())}

    return EvalReport(
        n_episodes=top.n_episodes,
        sr=top.sr,
        osr=top.osr,
        spl=top.spl,
        by_policy=group_by("policy"),
        by_strategy=group_by("strategy"),
        mean_pairwise_cosine=mean_pairwise_cosine,
    )


def mean_pairwise_cosine(
    generated: Sequence[str],
    references: Sequence[str],
    embedder: EmbeddingBackend,
) -> float:
    """Average cosine similarity between per-episode (generated, reference) pairs.

    Embeddings are unit-normalized, so each cosine is a plain dot product.
    """
    if len(generated) != len(references):
        raise DataError(
            f"paired lists must match: {len(generated)} generated vs {len(references)} references"
        )
    if not generated:
        raise DataError("mean_pairwise_cosine requires at least one pair")
    total = 0.0
    for gen_text, ref_text in zip(generated, references):
        g = embed_text(embedder, gen_text)
        r = embed_text(embedder, ref_text)
        if len(g) != len(r):
            raise DataError("embedding dimensions differ between pair members")
        total += max(-1.0, min(1.0, sum(a * b for a, b in zip(g, r))))
    return total / len(generated)


def render_results_table(
    cells: Mapping[tuple[str, str], MetricSummary],
    policies: Sequence[str],
    columns: Sequence[tuple[str, str]],
) -> str:
    """Aligned text table: one row per policy, (SR, OSR, SPL) per column group.

    `cells` maps (policy, column label) to a summary; `columns` pairs each
    column label with its display title.
    """
    headers = ["Approach"]
    for _, title in columns:
        headers.extend([f"{title} SR", f"{title} OSR", f"{title} SPL"])
    rows = [headers]
    for policy in policies:
        row = [policy]
        for label, _ in columns:
            summary = cells.get((policy, label))
            if summary is None:
                row.extend(["-", "-", "-"])
            else:
                row.extend([percent(summary.sr), percent(summary.osr), f"{summary.spl:.2f}"])
        rows.append(row)

    widths = [max(len(row[i]) for row in rows) for i in range(len(headers))]
    lines = []
    for idx, row in enumerate(rows):
        lines.append("  ".join(cell.ljust(width) for cell, width in zip(row, widths)).rstrip())
        if idx == 0:
            lines.append("  ".join("-" * width for width in widths))
    return "\n".join(lines) + "\n"
