"""Environment model: loading, validation, paths, headings, discretization."""

from __future__ import annotations

import json
import math
import random

import pytest

from conftest import G6_EDGES, G6_POSITIONS, brute_force_shortest, build_env, random_connected_env
from wayfind.env_model import (
    PathSpec,
    bearing_deg,
    central_view,
    discretize_path,
    load_env,
    make_episode,
    path_length,
    quantize_heading,
    sample_episode,
    save_env,
    shortest_path,
)
from wayfind.errors import DataError


def g6_file_payload():
    return {
        "env_id": "g6",
        "simulator_kind": "discrete_graph",
        "nodes": [
            {
                "id": nid,
                "position": list(pos),
                "views": {str(h): f"{nid}/{h}" for h in (0, 90, 180, 270)},
            }
            for nid, pos in sorted(G6_POSITIONS.items())
        ],
        "edges": [[a, b] for a, b in G6_EDGES],
    }


class TestLoadEnv:
    def test_loads_g6_fixture(self, tmp_path):
        path = tmp_path / "g6.json"
        path.write_text(json.dumps(g6_file_payload()))
        env = load_env(path)
        assert len(env.nodes) == 5
        assert len(env.edges) == 5
        assert env.edge_length("A", "B") == pytest.approx(5.0)
        assert env.edge_length("B", "E") == pytest.approx(6.0)

    def test_dangling_edge_reports_missing_node(self, tmp_path):
        payload = g6_file_payload()
        payload["edges"].append(["A", "Z"])
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(payload))
        with pytest.raises(DataError, match="dangling edge.*'Z'"):
            load_env(path)

    def test_disconnected_graph_rejected(self, tmp_path):
        payload = g6_file_payload()
        payload["nodes"].append(
            {"id": "F", "position": [20, 20, 0], "views": {str(h): f"F/{h}" for h in (0, 90, 180, 270)}}
        )
        path = tmp_path / "split.json"
        path.write_text(json.dumps(payload))
        with pytest.raises(DataError, match="disconnected"):
            load_env(path)

    def test_duplicate_node_id_rejected(self, tmp_path):
        payload = g6_file_payload()
        payload["nodes"].append(dict(payload["nodes"][0]))
        path = tmp_path / "dup.json"
        path.write_text(json.dumps(payload))
        with pytest.raises(DataError, match="duplicate node id"):
            load_env(path)

    def test_non_positive_edge_length_rejected(self, tmp_path):
        payload = g6_file_payload()
        payload["edges"][0] = ["A", "B", 0.0]
        path = tmp_path / "zero.json"
        path.write_text(json.dumps(payload))
        with pytest.raises(DataError, match="non-positive length"):
            load_env(path)

    def test_absent_view_rejected_for_discrete(self, tmp_path):
        payload = g6_file_payload()
        del payload["nodes"][0]["views"]["90"]
        path = tmp_path / "missing_view.json"
        path.write_text(json.dumps(payload))
        with pytest.raises(DataError, match="absent"):
            load_env(path)

    def test_parse_error_reported(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        with pytest.raises(DataError, match="parse error"):
            load_env(path)

    def test_round_trip_identity(self, tmp_path):
        first = tmp_path / "one.json"
        first.write_text(json.dumps(g6_file_payload()))
        env_a = load_env(first)
        second = save_env(env_a, tmp_path / "two.json")
        env_b = load_env(second)
        assert env_a.to_dict() == env_b.to_dict()
        assert env_a == env_b


class TestShortestPath:
    def test_a_to_d(self, g6):
        assert shortest_path(g6, "A", "D") == (["A", "B", "C", "D"], pytest.approx(15.0))

    def test_identity(self, g6):
        assert shortest_path(g6, "A", "A") == (["A"], 0.0)

    def test_a_to_e(self, g6):
        assert shortest_path(g6, "A", "E") == (["A", "B", "E"], pytest.approx(11.0))

    def test_unknown_node(self, g6):
        with pytest.raises(DataError, match="unknown node"):
            shortest_path(g6, "A", "Z")

    def test_matches_enumeration_on_g6(self, g6):
        for a in g6.node_ids():
            for b in g6.node_ids():
                expected_path, expected_len = brute_force_shortest(g6, a, b)
                got_path, got_len = shortest_path(g6, a, b)
                assert got_path == expected_path
                assert got_len == pytest.approx(expected_len, abs=1e-9)

    def test_lexicographic_tie_break(self):
        # Square with both two-hop routes equal: via "b" beats via "c".
        env = build_env(
            "square",
            {"a": (0, 0, 0), "b": (1, 0, 0), "c": (0, 1, 0), "d": (1, 1, 0)},
            [("a", "b"), ("a", "c"), ("b", "d"), ("c", "d")],
        )
        path, length = shortest_path(env, "a", "d")
        assert path == ["a", "b", "d"]
        assert length == pytest.approx(2.0)

    def test_random_graphs_match_enumeration(self):
        rng = random.Random(20240810)
        for _ in range(40):
            env = random_connected_env(rng)
            ids = env.node_ids()
            a, b = rng.sample(ids, 2) if len(ids) > 1 else (ids[0], ids[0])
            expected_path, expected_len = brute_force_shortest(env, a, b)
            got_path, got_len = shortest_path(env, a, b)
            assert got_path == expected_path
            assert got_len == pytest.approx(expected_len, abs=1e-9)
            assert path_length(env, got_path) <= expected_len + 1e-9


class TestPathLength:
    def test_two_edges(self, g6):
        assert path_length(g6, ["A", "B", "C"]) == pytest.approx(10.0)

    def test_single_node(self, g6):
        assert path_length(g6, ["A"]) == 0.0

    def test_non_adjacent_pair(self, g6):
        with pytest.raises(DataError, match="not adjacent"):
            path_length(g6, ["A", "C"])


class TestSampleEpisode:
    def test_deterministic(self, g6):
        spec = PathSpec(min_hops=2, max_hops=4, seed=7)
        assert sample_episode(g6, spec) == sample_episode(g6, spec)

    def test_hop_bounds_respected(self, g6):
        # Enumeration of all G6 shortest paths puts the hop diameter at 3 (A-D).
        episode = sample_episode(g6, PathSpec(min_hops=3, max_hops=3, seed=3))
        assert len(episode.path) - 1 == 3
        assert {episode.start, episode.goal} == {"A", "D"}

    def test_no_qualifying_pair(self, g6):
        with pytest.raises(DataError, match="no qualifying pair"):
            sample_episode(g6, PathSpec(min_hops=9, max_hops=9, seed=1))

    def test_bounds_above_hop_diameter_error(self, g6):
        with pytest.raises(DataError, match="no qualifying pair"):
            sample_episode(g6, PathSpec(min_hops=4, max_hops=4, seed=3))

    def test_geodesic_matches_path(self, g6):
        episode = sample_episode(g6, PathSpec(min_hops=2, max_hops=4, seed=11))
        assert episode.geodesic_length == pytest.approx(
            path_length(g6, list(episode.path))
        )

    def test_path_spec_validation(self):
        with pytest.raises(DataError):
            PathSpec(min_hops=1, max_hops=4, seed=0)
        with pytest.raises(DataError):
            PathSpec(min_hops=4, max_hops=2, seed=0)


class TestCentralView:
    def test_eastward_gives_90(self, g6):
        assert central_view(g6, "A", "B") == "A/90"

    def test_northward_gives_0(self, g6):
        assert central_view(g6, "C", "D") == "C/0"

    def test_diagonal_tie_goes_to_smaller_angle(self):
        env = build_env(
            "diag",
            {"p": (0, 0, 0), "q": (1, 1, 0)},
            [("p", "q")],
        )
        # Bearing exactly 45: equidistant from 0 and 90, so 0 wins.
        assert central_view(env, "p", "q") == "p/0"

    def test_same_node_rejected(self, g6):
        with pytest.raises(DataError, match="distinct"):
            central_view(g6, "A", "A")

    def test_absent_view_errors(self):
        env = build_env(
            "chain",
            {"p": (0, 0, 0), "q": (1, 0, 0)},
            [("p", "q")],
            kind="continuous",
            absent={"p": (90,)},
        )
        with pytest.raises(DataError, match="absent"):
            central_view(env, "p", "q")

    def test_quantization_within_45_degrees(self):
        rng = random.Random(99)
        for _ in range(1000):
            bearing = rng.uniform(0, 360)
            heading = quantize_heading(bearing)
            diff = abs((bearing - heading + 180.0) % 360.0 - 180.0)
            assert diff <= 45.0 + 1e-9

    def test_bearing_convention(self):
        assert bearing_deg((0, 0, 0), (0, 1, 0)) == pytest.approx(0.0)
        assert bearing_deg((0, 0, 0), (1, 0, 0)) == pytest.approx(90.0)
        assert bearing_deg((0, 0, 0), (0, -1, 0)) == pytest.approx(180.0)
        assert bearing_deg((0, 0, 0), (-1, 0, 0)) == pytest.approx(270.0)


class TestDiscretizePath:
    def test_straight_segment(self):
        points = discretize_path([(0, 0, 0), (10, 0, 0)], 2.5)
        assert [p[0] for p in points] == pytest.approx([0.0, 2.5, 5.0, 7.5, 10.0])

    def test_interval_longer_than_path(self):
        points = discretize_path([(0, 0, 0), (1, 0, 0)], 5.0)
        assert points == [(0.0, 0.0, 0.0), (1.0, 0.0, 0.0)]

    def test_l_shaped_polyline(self):
        points = discretize_path([(0, 0, 0), (4, 0, 0), (4, 3, 0)], 5.0)
        assert len(points) == 3
        assert points[0] == pytest.approx((0.0, 0.0, 0.0))
        assert points[1] == pytest.approx((4.0, 1.0, 0.0))
        assert points[2] == pytest.approx((4.0, 3.0, 0.0))

    def test_bad_inputs(self):
        with pytest.raises(DataError):
            discretize_path([(0, 0, 0)], 1.0)
        with pytest.raises(DataError):
            discretize_path([(0, 0, 0), (1, 0, 0)], 0.0)

    def test_arc_length_spacing_property(self):
        rng = random.Random(5)
        for _ in range(25):
            waypoints = [
                (rng.uniform(-5, 5), rng.uniform(-5, 5), 0.0) for _ in range(rng.randint(2, 6))
            ]
            total = sum(math.dist(p, q) for p, q in zip(waypoints, waypoints[1:]))
            if total < 1e-6:
                continue
            interval = rng.uniform(0.3, 3.0)
            points = discretize_path(waypoints, interval)
            assert points[0] == pytest.approx(waypoints[0])
            assert points[-1] == pytest.approx(waypoints[-1])
            expected = math.floor((total - 1e-9) / interval) + 2
            assert len(points) == expected


class TestMakeEpisode:
    def test_valid(self, g6):
        episode = make_episode(g6, "ep1", ["A", "B", "E"], ["go to the couch"])
        assert episode.start == "A"
        assert episode.goal == "E"
        assert episode.geodesic_length == pytest.approx(11.0)

    def test_rejects_short_path(self, g6):
        with pytest.raises(DataError, match="at least 2"):
            make_episode(g6, "ep1", ["A"])

    def test_rejects_non_adjacent(self, g6):
        with pytest.raises(DataError, match="not adjacent"):
            make_episode(g6, "ep1", ["A", "C"])

    def test_geodesic_recomputed_for_detours(self, g6):
        episode = make_episode(g6, "ep1", ["A", "B", "E", "D"])
        # The walked path is longer; the geodesic is the true shortest length.
        assert episode.geodesic_length == pytest.approx(15.0)
