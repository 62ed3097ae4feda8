"""Shared fixtures: the G6 graph, oracle backends, and enumeration helpers."""

from __future__ import annotations

import math
import random

import pytest

from wayfind.backends import Backends, GenParams, HashEmbedder, ScriptedChat, ScriptedGrounder, ScriptedVqa
from wayfind.env_model import EnvGraph, Node, quantize_heading, shortest_path

G6_POSITIONS = {
    "A": (0.0, 0.0, 0.0),
    "B": (5.0, 0.0, 0.0),
    "C": (10.0, 0.0, 0.0),
    "D": (10.0, 5.0, 0.0),
    "E": (5.0, 6.0, 0.0),
}
G6_EDGES = [("A", "B"), ("B", "C"), ("C", "D"), ("D", "E"), ("B", "E")]


def make_node(node_id: str, position, absent=()) -> Node:
    views = {
        h: (None if h in absent else f"{node_id}/{h}") for h in (0, 90, 180, 270)
    }
    return Node(id=node_id, position=tuple(float(x) for x in position), views=views)


def build_env(env_id, positions, edges, kind="discrete_graph", absent=None) -> EnvGraph:
    absent = absent or {}
    nodes = tuple(
        make_node(nid, pos, absent=absent.get(nid, ())) for nid, pos in sorted(positions.items())
    )
    edge_list = tuple(
        (a, b, math.dist(positions[a], positions[b])) for a, b in edges
    )
    return EnvGraph(env_id=env_id, simulator_kind=kind, nodes=nodes, edges=edge_list)


@pytest.fixture
def g6() -> EnvGraph:
    return build_env("g6", G6_POSITIONS, G6_EDGES)


def enumerate_simple_paths(env: EnvGraph, start: str, goal: str):
    """All simple paths with their total lengths, via exhaustive DFS."""
    results = []

    def dfs(node, path, length):
        if node == goal:
            results.append((list(path), length))
            return
        for neighbor, weight in env.neighbors(node):
            if neighbor not in path:
                path.append(neighbor)
                dfs(neighbor, path, length + weight)
                path.pop()

    dfs(start, [start], 0.0)
    return results


def brute_force_shortest(env: EnvGraph, start: str, goal: str):
    """Independent oracle: min length over enumeration, lexicographic tie order."""
    if start == goal:
        return [start], 0.0
    candidates = enumerate_simple_paths(env, start, goal)
    assert candidates, f"no path between {start} and {goal}"
    best_length = min(length for _, length in candidates)
    tied = [path for path, length in candidates if length <= best_length + 1e-9]
    return min(tied), best_length


def random_connected_env(rng: random.Random, max_nodes: int = 12) -> EnvGraph:
    """Random connected graph: spanning tree plus a few extra edges."""
    n = rng.randint(2, max_nodes)
    names = [f"n{i:02d}" for i in range(n)]
    grid_like = rng.random() < 0.4
    positions = {}
    for i, name in enumerate(names):
        if grid_like:
            positions[name] = (float(i % 4), float(i // 4), 0.0)
        else:
            positions[name] = (rng.uniform(0, 10), rng.uniform(0, 10), 0.0)
    edges = set()
    for i in range(1, n):
        j = rng.randrange(i)
        edges.add((names[j], names[i]))
    for _ in range(rng.randint(0, 4)):
        a, b = rng.sample(names, 2)
        if a > b:
            a, b = b, a
        if (a, b) not in edges and positions[a] != positions[b]:
            edges.add((a, b))
    # Grid layouts can place two nodes at the same point; nudge duplicates.
    seen = {}
    for name in names:
        while positions[name] in seen and seen[positions[name]] != name:
            x, y, z = positions[name]
            positions[name] = (x + 0.25, y + 0.125, z)
        seen[positions[name]] = name
    return build_env(f"rand-{rng.random():.6f}", positions, sorted(edges))


def oracle_grounder(env: EnvGraph, goal: str, direction_score: float = 0.8) -> ScriptedGrounder:
    """Grounder that signals the next shortest-path hop and arrival at the goal.

    Views toward the next node on the shortest path to the goal score
    `direction_score` (kept below typical advance thresholds so the agent
    keeps moving); every view at the goal scores 1.0 so the final phrase
    advances there.
    """
    ref_owner = {}
    for node in env.nodes:
        for heading, ref in node.views.items():
            if ref is not None:
                ref_owner[ref] = (node.id, heading)

    def score(phrase: str, ref: str) -> float:
        node_id, heading = ref_owner[ref]
        if node_id == goal:
            return 1.0
        next_node = shortest_path(env, node_id, goal)[0][1]
        desired = quantize_heading(env.bearing(node_id, next_node))
        return direction_score if heading == desired else 0.0

    return ScriptedGrounder(scorer=score)


def scripted_backends(
    chat: ScriptedChat | None = None,
    vqa: ScriptedVqa | None = None,
    grounder: ScriptedGrounder | None = None,
    embedder: HashEmbedder | None = None,
    model: str = "test-chat",
) -> Backends:
    return Backends(
        chat=chat if chat is not None else ScriptedChat(default="ok"),
        vqa=vqa if vqa is not None else ScriptedVqa(default="unknown"),
        grounder=grounder if grounder is not None else ScriptedGrounder(default=0.0),
        embedder=embedder if embedder is not None else HashEmbedder(),
        chat_params=GenParams(model=model, temperature=0.0),
    )
