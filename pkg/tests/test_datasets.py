"""Dataset import, manifests, and run-directory persistence."""

from __future__ import annotations

import json

import pytest

from conftest import build_env
from wayfind.datasets import (
    EpisodeRecord,
    GenerationManifest,
    ManifestEntry,
    RunPaths,
    import_reverie,
    load_caption,
    load_episodes,
    read_manifest,
    safe_name,
    save_caption,
    save_episodes,
    to_episode,
    write_manifest,
)
from wayfind.errors import DataError
from wayfind.vqa_chat import CaptionRecord, Transcript


def entry(episode="e1", style="reverie", strategy="central", text="Go."):
    return ManifestEntry(
        episode_id=episode,
        style=style,
        strategy=strategy,
        instruction=text,
        prompt_digest="d" * 64,
        chat_model="chat-x",
    )


class TestManifest:
    def test_write_read_round_trip(self, tmp_path):
        manifest = GenerationManifest(
            run_id="run-1", config_digest="c" * 64, entries=(entry(), entry(style="r2r"))
        )
        path = tmp_path / "m.json"
        write_manifest(manifest, path)
        assert read_manifest(path) == manifest

    def test_duplicate_keys_rejected_on_read(self, tmp_path):
        payload = {
            "run_id": "run-1",
            "config_digest": "c" * 64,
            "entries": [entry().to_dict(), entry().to_dict()],
        }
        path = tmp_path / "m.json"
        path.write_text(json.dumps(payload))
        with pytest.raises(DataError, match="duplicate manifest key"):
            read_manifest(path)

    def test_distinct_run_ids_coexist(self, tmp_path):
        a = GenerationManifest(run_id="a", config_digest="x", entries=(entry(),))
        b = GenerationManifest(run_id="b", config_digest="x", entries=(entry(style="r2r"),))
        write_manifest(a, tmp_path / "a.json")
        write_manifest(b, tmp_path / "b.json")
        assert read_manifest(tmp_path / "a.json") == a
        assert read_manifest(tmp_path / "b.json") == b

    def test_atomic_write_leaves_no_temp_files(self, tmp_path):
        write_manifest(
            GenerationManifest(run_id="a", config_digest="x", entries=(entry(),)),
            tmp_path / "m.json",
        )
        assert [p.name for p in tmp_path.iterdir()] == ["m.json"]


class TestImportReverie:
    def make_resolver(self):
        env = build_env(
            "scan1",
            {"A": (0, 0, 0), "B": (5, 0, 0), "C": (10, 0, 0)},
            [("A", "B"), ("B", "C")],
        )
        return env, (lambda scan: env)

    def test_drops_records_with_missing_nodes(self, tmp_path, caplog):
        env, resolver = self.make_resolver()
        upstream = [
            {"id": "r1", "scan": "scan1", "path": ["A", "B"], "instructions": ["go"]},
            {"id": "r2", "scan": "scan1", "path": ["A", "Z"], "instructions": []},
            {"id": "r3", "scan": "scan1", "path": ["B", "C"], "instructions": ["walk"]},
        ]
        path = tmp_path / "reverie.json"
        path.write_text(json.dumps(upstream))
        with caplog.at_level("WARNING"):
            records = import_reverie(path, resolver, split="val_unseen")
        assert [r.episode_id for r in records] == ["r1", "r3"]
        assert records[0].split == "val_unseen"
        assert sum("dropping episode" in m for m in caplog.messages) == 1
        assert any("dropped 1 of 3" in m for m in caplog.messages)

    def test_empty_list_gives_empty_output(self, tmp_path):
        path = tmp_path / "reverie.json"
        path.write_text("[]")
        assert import_reverie(path, lambda scan: None) == []

    def test_unparseable_file(self, tmp_path):
        path = tmp_path / "reverie.json"
        path.write_text("{nope")
        with pytest.raises(DataError, match="parse error"):
            import_reverie(path, lambda scan: None)

    def test_records_validate_as_episodes(self, tmp_path):
        env, resolver = self.make_resolver()
        path = tmp_path / "reverie.json"
        path.write_text(
            json.dumps([{"id": "r1", "scan": "scan1", "path": ["A", "B", "C"],
                         "instructions": ["go to the end"]}])
        )
        records = import_reverie(path, resolver)
        episode = to_episode(records[0], env)
        assert episode.goal == "C"
        assert episode.reference_instructions == ("go to the end",)


class TestEpisodeFiles:
    def test_round_trip(self, tmp_path):
        records = [
            EpisodeRecord(episode_id="e1", env_id="g6", path=("A", "B"), instructions=("x",)),
            EpisodeRecord(episode_id="e2", env_id="g6", path=("B", "C")),
        ]
        path = tmp_path / "eps.json"
        save_episodes(records, path)
        assert load_episodes(path) == records

    def test_duplicate_ids_rejected(self, tmp_path):
        payload = {
            "episodes": [
                {"episode_id": "e1", "env_id": "g", "path": ["A", "B"]},
                {"episode_id": "e1", "env_id": "g", "path": ["B", "C"]},
            ]
        }
        path = tmp_path / "eps.json"
        path.write_text(json.dumps(payload))
        with pytest.raises(DataError, match="duplicate episode id"):
            load_episodes(path)


class TestCaptionStore:
    def test_round_trip_keyed_by_frame(self, tmp_path):
        paths = RunPaths(tmp_path).ensure()
        record = CaptionRecord(
            frame_index=3,
            observation="o/3",
            caption="a hallway",
            transcript=Transcript(observation="o/3", initial_caption="hall"),
        )
        save_caption(paths, "env1", "ep1", "central", record)
        loaded = load_caption(paths, "env1", "ep1", "central", 3)
        assert loaded == record
        assert load_caption(paths, "env1", "ep1", "central", 4) is None
        assert load_caption(paths, "env1", "ep1", "panoramic", 3) is None

    def test_safe_name(self):
        assert safe_name("scan/1:ep 2") == "scan-1-ep-2"
