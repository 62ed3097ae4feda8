"""Navigation-graph environment model.

Environments are undirected graphs whose nodes carry a 3D position and four
directional observation references (headings 0/90/180/270, north-referenced,
east = 90). Continuous environments are imported as chain graphs produced by
`discretize_path`; this module never talks to a live simulator.

All types are immutable after construction and safe to share across workers.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from heapq import heappop, heappush
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import DataError

HEADINGS: tuple[int, int, int, int] = (0, 90, 180, 270)

SIMULATOR_KINDS = ("discrete_graph", "continuous")

#: Attempts made by sample_episode before giving up on sparse graphs.
SAMPLE_ATTEMPT_CAP = 10_000

_LENGTH_EPS = 1e-9

Vec3 = tuple[float, float, float]


def _as_vec3(value: Sequence[float], context: str) -> Vec3:
    if len(value) != 3:
        raise DataError(f"{context}: position must have 3 components, got {len(value)}")
    return (float(value[0]), float(value[1]), float(value[2]))


def euclidean(a: Vec3, b: Vec3) -> float:
    return math.dist(a, b)


def bearing_deg(origin: Vec3, target: Vec3) -> float:
    """Compass bearing from origin to target in the horizontal plane.

    0 = north (+y), 90 = east (+x). The vertical component is ignored.
    """
    dx = target[0] - origin[0]
    dy = target[1] - origin[1]
    return math.degrees(math.atan2(dx, dy)) % 360.0


def quantize_heading(bearing: float) -> int:
    """Nearest cardinal heading for a bearing; exact ties go to the smaller angle."""
    best = HEADINGS[0]
    best_dist = None
    for heading in HEADINGS:
        diff = abs((bearing - heading + 180.0) % 360.0 - 180.0)
        if best_dist is None or diff < best_dist - _LENGTH_EPS:
            best, best_dist = heading, diff
    return best


@dataclass(frozen=True)
class Node:
    """One navigable location with its four directional observation refs.

    `views` maps each heading in HEADINGS to an observation reference (a
    relative media path or an opaque id) or None when that direction has no
    observation. Absent views are legal only in continuous environments.
    """

    id: str
    position: Vec3
    views: Mapping[int, str | None]


@dataclass(frozen=True)
class PathSpec:
    """Sampling bounds for random episode generation."""

    min_hops: int
    max_hops: int
    seed: int

    def __post_init__(self) -> None:
        if self.min_hops < 2:
            raise DataError(f"PathSpec.min_hops must be >= 2, got {self.min_hops}")
        if self.max_hops < self.min_hops:
            raise DataError(
                f"PathSpec requires min_hops <= max_hops, got {self.min_hops} > {self.max_hops}"
            )
        if not 0 <= self.seed < 2**64:
            raise DataError("PathSpec.seed must fit in an unsigned 64-bit integer")


@dataclass(frozen=True)
class Episode:
    """A start-to-goal navigation task over one environment graph."""

    episode_id: str
    env_id: str
    path: tuple[str, ...]
    geodesic_length: float
    reference_instructions: tuple[str, ...] = ()

    @property
    def start(self) -> str:
        return self.path[0]

    @property
    def goal(self) -> str:
        return self.path[-1]


@dataclass(frozen=True)
class EnvGraph:
    """Validated, connected navigation graph. Immutable after load."""

    env_id: str
    simulator_kind: str
    nodes: tuple[Node, ...]
    edges: tuple[tuple[str, str, float], ...]
    _by_id: dict[str, Node] = field(init=False, repr=False, compare=False)
    _adjacency: dict[str, tuple[tuple[str, float], ...]] = field(
        init=False, repr=False, compare=False
    )

    def __post_init__(self) -> None:
        if self.simulator_kind not in SIMULATOR_KINDS:
            raise DataError(
                f"unknown simulator_kind {self.simulator_kind!r}; expected one of {SIMULATOR_KINDS}"
            )
        by_id: dict[str, Node] = {}
        for node in self.nodes:
            if node.id in by_id:
                raise DataError(f"duplicate node id: {node.id!r}")
            _validate_views(node, self.simulator_kind)
            by_id[node.id] = node
        if not by_id:
            raise DataError("environment has no nodes")

        adjacency: dict[str, list[tuple[str, float]]] = {nid: [] for nid in by_id}
        seen_pairs: set[tuple[str, str]] = set()
        for a, b, length in self.edges:
            for end in (a, b):
                if end not in by_id:
                    raise DataError(f"dangling edge: [{a!r}, {b!r}] references unknown node {end!r}")
            if a == b:
                raise DataError(f"self-loop edge on node {a!r}")
            pair = (a, b) if a < b else (b, a)
            if pair in seen_pairs:
                raise DataError(f"duplicate edge between {pair[0]!r} and {pair[1]!r}")
            seen_pairs.add(pair)
            if not length > 0.0:
                raise DataError(f"edge [{a!r}, {b!r}] has non-positive length {length}")
            adjacency[a].append((b, length))
            adjacency[b].append((a, length))

        # Neighbor lists are kept id-sorted so traversals are deterministic.
        frozen = {nid: tuple(sorted(nbrs)) for nid, nbrs in adjacency.items()}
        object.__setattr__(self, "_by_id", by_id)
        object.__setattr__(self, "_adjacency", frozen)
        _check_connected(self)

    def node(self, node_id: str) -> Node:
        try:
            return self._by_id[node_id]
        except KeyError:
            raise DataError(f"unknown node id: {node_id!r}") from None

    def has_node(self, node_id: str) -> bool:
        return node_id in self._by_id

    def node_ids(self) -> tuple[str, ...]:
        return tuple(sorted(self._by_id))

    def neighbors(self, node_id: str) -> tuple[tuple[str, float], ...]:
        self.node(node_id)
        return self._adjacency[node_id]

    def edge_length(self, a: str, b: str) -> float:
        for nbr, length in self.neighbors(a):
            if nbr == b:
                return length
        raise DataError(f"nodes {a!r} and {b!r} are not adjacent")

    def are_adjacent(self, a: str, b: str) -> bool:
        return any(nbr == b for nbr, _ in self.neighbors(a))

    def bearing(self, a: str, b: str) -> float:
        return bearing_deg(self.node(a).position, self.node(b).position)

    def to_dict(self) -> dict:
        return {
            "env_id": self.env_id,
            "simulator_kind": self.simulator_kind,
            "nodes": [
                {
                    "id": node.id,
                    "position": list(node.position),
                    "views": {
                        str(h): node.views[h] for h in HEADINGS if node.views.get(h) is not None
                    },
                }
                for node in self.nodes
            ],
            "edges": [[a, b, length] for a, b, length in self.edges],
        }

    @classmethod
    def from_dict(cls, raw: Mapping, context: str = "env") -> "EnvGraph":
        try:
            env_id = str(raw["env_id"])
            kind = str(raw["simulator_kind"])
            raw_nodes = raw["nodes"]
            raw_edges = raw["edges"]
        except (KeyError, TypeError) as exc:
            raise DataError(f"{context}: missing required field {exc}") from None

        nodes = []
        for entry in raw_nodes:
            node_id = str(entry["id"])
            position = _as_vec3(entry["position"], f"{context}: node {node_id!r}")
            views = _parse_views(entry.get("views", {}), node_id)
            nodes.append(Node(id=node_id, position=position, views=views))
        positions = {node.id: node.position for node in nodes}

        edges = []
        for entry in raw_edges:
            if len(entry) not in (2, 3):
                raise DataError(f"{context}: edge {entry!r} must be [a, b] or [a, b, length]")
            a, b = str(entry[0]), str(entry[1])
            if len(entry) == 3 and entry[2] is not None:
                length = float(entry[2])
            else:
                if a not in positions or b not in positions:
                    raise DataError(
                        f"dangling edge: [{a!r}, {b!r}] references unknown node "
                        f"{(b if a in positions else a)!r}"
                    )
                length = euclidean(positions[a], positions[b])
            edges.append((a, b, length))

        return cls(env_id=env_id, simulator_kind=kind, nodes=tuple(nodes), edges=tuple(edges))


def _parse_views(raw: Mapping, node_id: str) -> dict[int, str | None]:
    views: dict[int, str | None] = {h: None for h in HEADINGS}
    for key, ref in raw.items():
        try:
            heading = int(key)
        except (TypeError, ValueError):
            raise DataError(f"node {node_id!r}: bad view heading {key!r}") from None
        if heading not in HEADINGS:
            raise DataError(f"node {node_id!r}: view heading {heading} not in {HEADINGS}")
        views[heading] = None if ref is None else str(ref)
    return views


def _validate_views(node: Node, simulator_kind: str) -> None:
    keys = set(node.views.keys())
    if keys != set(HEADINGS):
        raise DataError(f"node {node.id!r}: views must cover headings {HEADINGS}, got {sorted(keys)}")
    if simulator_kind == "discrete_graph":
        for heading in HEADINGS:
            if node.views[heading] is None:
                raise DataError(
                    f"node {node.id!r}: view at heading {heading} is absent "
                    "(absent views are allowed only in continuous environments)"
                )


def _check_connected(env: EnvGraph) -> None:
    ids = env.node_ids()
    seen = {ids[0]}
    frontier = [ids[0]]
    while frontier:
        current = frontier.pop()
        for nbr, _ in env.neighbors(current):
            if nbr not in seen:
                seen.add(nbr)
                frontier.append(nbr)
    missing = [nid for nid in ids if nid not in seen]
    if missing:
        raise DataError(
            f"disconnected graph: nodes {missing} are unreachable from {ids[0]!r}"
        )


def load_env(file_path: str | Path) -> EnvGraph:
    """Load and validate an environment from its normalized JSON file."""
    path = Path(file_path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataError(f"cannot read env file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"parse error in {path}: {exc}") from exc
    return EnvGraph.from_dict(raw, context=str(path))


def save_env(env: EnvGraph, file_path: str | Path) -> Path:
    """Serialize an environment back to the normalized JSON format."""
    path = Path(file_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(env.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _dijkstra(env: EnvGraph, source: str) -> dict[str, float]:
    dist = {source: 0.0}
    heap: list[tuple[float, str]] = [(0.0, source)]
    done: set[str] = set()
    while heap:
        d, node = heappop(heap)
        if node in done:
            continue
        done.add(node)
        for nbr, length in env.neighbors(node):
            nd = d + length
            if nbr not in dist or nd < dist[nbr] - _LENGTH_EPS:
                dist[nbr] = nd
                heappush(heap, (nd, nbr))
    return dist


def shortest_path(env: EnvGraph, a: str, b: str) -> tuple[list[str], float]:
    """Minimal-total-length node sequence from a to b.

    Among equal-length shortest paths the lexicographically smallest node-id
    sequence is returned, so results are reproducible across runs.
    """
    env.node(a)
    env.node(b)
    if a == b:
        return [a], 0.0

    dist_a = _dijkstra(env, a)
    dist_b = _dijkstra(env, b)
    total = dist_a.get(b)
    if total is None:
        raise DataError(f"no path between {a!r} and {b!r}")  # unreachable: graph is connected

    # Greedy walk: at each node take the smallest-id neighbor that still lies
    # on some shortest path. dist-to-goal strictly decreases, so this terminates.
    path = [a]
    current = a
    length = 0.0
    while current != b:
        chosen = None
        chosen_len = 0.0
        for nbr, w in env.neighbors(current):
            if abs(dist_a[current] + w + dist_b.get(nbr, math.inf) - total) <= _LENGTH_EPS:
                chosen, chosen_len = nbr, w
                break  # neighbors are id-sorted, first hit is lexicographically smallest
        if chosen is None:
            raise DataError(f"shortest-path reconstruction failed at node {current!r}")
        length += chosen_len
        path.append(chosen)
        current = chosen
    return path, length


def path_length(env: EnvGraph, nodes: Sequence[str]) -> float:
    """Total edge length along a node sequence; 0.0 for a single node."""
    if not nodes:
        raise DataError("path_length requires at least one node")
    total = 0.0
    for prev, nxt in zip(nodes, nodes[1:]):
        total += env.edge_length(prev, nxt)
    return total


def make_episode(
    env: EnvGraph,
    episode_id: str,
    path: Sequence[str],
    reference_instructions: Iterable[str] = (),
) -> Episode:
    """Validate a node path against the graph and build an Episode.

    The geodesic length is always recomputed as the shortest-path length from
    start to goal, regardless of how long the given path is.
    """
    if len(path) < 2:
        raise DataError(f"episode {episode_id!r}: path must contain at least 2 nodes")
    for prev, nxt in zip(path, path[1:]):
        if not env.are_adjacent(prev, nxt):
            raise DataError(
                f"episode {episode_id!r}: consecutive nodes {prev!r} and {nxt!r} are not adjacent"
            )
    _, geodesic = shortest_path(env, path[0], path[-1])
    return Episode(
        episode_id=episode_id,
        env_id=env.env_id,
        path=tuple(path),
        geodesic_length=geodesic,
        reference_instructions=tuple(reference_instructions),
    )


def sample_episode(env: EnvGraph, spec: PathSpec) -> Episode:
    """Sample a random shortest-path episode with a hop count inside the spec bounds.

    Pure function of (env, spec): the same inputs always yield the same episode.
    Node pairs are rejection-sampled up to SAMPLE_ATTEMPT_CAP attempts.
    """
    rng = random.Random(spec.seed)
    ids = env.node_ids()
    if len(ids) < 2:
        raise DataError("sample_episode requires at least 2 nodes")
    for _ in range(SAMPLE_ATTEMPT_CAP):
        a = ids[rng.randrange(len(ids))]
        b = ids[rng.randrange(len(ids))]
        if a == b:
            continue
        path, _ = shortest_path(env, a, b)
        hops = len(path) - 1
        if spec.min_hops <= hops <= spec.max_hops:
            episode_id = f"{env.env_id}-s{spec.seed}-{a}-{b}"
            return make_episode(env, episode_id, path)
    raise DataError(
        f"no qualifying pair: no shortest path with hop count in "
        f"[{spec.min_hops}, {spec.max_hops}] found after {SAMPLE_ATTEMPT_CAP} attempts"
    )


def central_view(env: EnvGraph, at: str, toward: str) -> str:
    """Observation ref at `at` facing the quantized bearing toward `toward`."""
    if at == toward:
        raise DataError("central_view requires two distinct nodes")
    heading = quantize_heading(env.bearing(at, toward))
    ref = env.node(at).views[heading]
    if ref is None:
        raise DataError(f"node {at!r}: view at heading {heading} is absent")
    return ref


def discretize_path(waypoints: Sequence[Sequence[float]], interval: float) -> list[Vec3]:
    """Sample points at arc-length multiples of `interval` along a polyline.

    Points sit at s = 0, interval, 2*interval, ... strictly below the total
    length; the final waypoint is then appended, so both endpoints are always
    included.
    """
    if len(waypoints) < 2:
        raise DataError("discretize_path requires at least 2 waypoints")
    if not interval > 0.0:
        raise DataError(f"interval must be positive, got {interval}")
    points = [_as_vec3(w, "waypoint") for w in waypoints]

    seg_lengths = [euclidean(p, q) for p, q in zip(points, points[1:])]
    total = sum(seg_lengths)
    if total <= _LENGTH_EPS:
        return [points[0], points[-1]]

    targets = []
    s = 0.0
    while s < total - _LENGTH_EPS:
        targets.append(s)
        s += interval
    samples = [_point_at(points, seg_lengths, t) for t in targets]
    samples.append(points[-1])
    return samples


def _point_at(points: list[Vec3], seg_lengths: list[float], s: float) -> Vec3:
    remaining = s
    for (p, q), seg in zip(zip(points, points[1:]), seg_lengths):
        if remaining <= seg + _LENGTH_EPS:
            if seg <= _LENGTH_EPS:
                continue
            t = remaining / seg
            return (
                p[0] + (q[0] - p[0]) * t,
                p[1] + (q[1] - p[1]) * t,
                p[2] + (q[2] - p[2]) * t,
            )
        remaining -= seg
    return points[-1]
