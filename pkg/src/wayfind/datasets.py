"""Dataset import and run-directory persistence.

All artifacts are JSON files under a run directory:

    envs/          normalized environment graphs
    episodes/      episode files ({"episodes": [...]})
    captions/      one CaptionRecord per (env, episode, strategy, frame)
    manifests/     generation manifests
    traces/        one NavTrace per (episode, instruction) run
    reports/       evaluation output (machine JSON + human table)
    replay_cache/  content-addressed backend responses

Writes go through a temp file plus atomic rename, so concurrent stages only
ever observe complete files. Re-running a stage either resumes (skipping keys
that already exist) or fails fast, controlled by a --resume flag upstream.
"""

from __future__ import annotations

import json
import logging
import os
import re
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

from .env_model import EnvGraph, Episode, make_episode
from .errors import DataError
from .vqa_chat import CaptionRecord

log = logging.getLogger(__name__)


def write_json_atomic(payload, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            json.dump(payload, handle, indent=2, sort_keys=True)
            handle.write("\n")
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
    return path


def read_json(path: str | Path):
    path = Path(path)
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"parse error in {path}: {exc}") from exc


def safe_name(value: str) -> str:
    """File-system-safe token for ids used in artifact file names."""
    return re.sub(r"[^A-Za-z0-9_.-]+", "-", value)


# ---------------------------------------------------------------------------
# Episode records
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EpisodeRecord:
    """An imported episode before graph validation."""

    episode_id: str
    env_id: str
    path: tuple[str, ...]
    instructions: tuple[str, ...] = ()
    split: str = ""

    def __post_init__(self) -> None:
        if not self.path:
            raise DataError(f"episode {self.episode_id!r} has an empty path")

    def to_dict(self) -> dict:
        return {
            "episode_id": self.episode_id,
            "env_id": self.env_id,
            "path": list(self.path),
            "instructions": list(self.instructions),
            "split": self.split,
        }

    @classmethod
    def from_dict(cls, raw: Mapping) -> "EpisodeRecord":
        return cls(
            episode_id=str(raw["episode_id"]),
            env_id=str(raw["env_id"]),
            path=tuple(str(n) for n in raw["path"]),
            instructions=tuple(str(t) for t in raw.get("instructions", [])),
            split=str(raw.get("split", "")),
        )


def to_episode(record: EpisodeRecord, env: EnvGraph) -> Episode:
    """Validate an imported record against its graph."""
    if record.env_id != env.env_id:
        raise DataError(
            f"episode {record.episode_id!r} references env {record.env_id!r}, got {env.env_id!r}"
        )
    return make_episode(env, record.episode_id, record.path, record.instructions)


def save_episodes(records: Sequence[EpisodeRecord], path: str | Path) -> Path:
    return write_json_atomic({"episodes": [r.to_dict() for r in records]}, path)


def load_episodes(path: str | Path) -> list[EpisodeRecord]:
    raw = read_json(path)
    entries = raw.get("episodes") if isinstance(raw, Mapping) else None
    if entries is None:
        raise DataError(f"{path}: expected an object with an 'episodes' list")
    records = [EpisodeRecord.from_dict(entry) for entry in entries]
    seen = set()
    for record in records:
        if record.episode_id in seen:
            raise DataError(f"{path}: duplicate episode id {record.episode_id!r}")
        seen.add(record.episode_id)
    return records


def import_reverie(
    file_path: str | Path,
    env_resolver: Callable[[str], EnvGraph],
    split: str = "",
) -> list[EpisodeRecord]:
    """Normalize upstream records shaped {id, scan, path, instructions}.

    Records whose path references nodes missing from the resolved environment
    are dropped with a warning; the summary count is logged once at the end.
    """
    raw = read_json(file_path)
    if not isinstance(raw, list):
        raise DataError(f"{file_path}: expected a top-level list of records")

    records: list[EpisodeRecord] = []
    dropped = 0
    for entry in raw:
        episode_id = str(entry["id"])
        scan = str(entry["scan"])
        path_nodes = [str(n) for n in entry["path"]]
        env = env_resolver(scan)
        missing = [n for n in path_nodes if not env.has_node(n)]
        if missing:
            dropped += 1
            log.warning(
                "dropping episode %s: nodes %s missing from env %s", episode_id, missing, scan
            )
            continue
        records.append(
            EpisodeRecord(
                episode_id=episode_id,
                env_id=env.env_id,
                path=tuple(path_nodes),
                instructions=tuple(str(t) for t in entry.get("instructions", [])),
                split=str(entry.get("split", split)),
            )
        )
    if dropped:
        log.warning("dropped %d of %d imported episodes", dropped, len(raw))
    return records


# ---------------------------------------------------------------------------
# Generation manifests
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ManifestEntry:
    episode_id: str
    style: str
    strategy: str
    instruction: str
    prompt_digest: str
    chat_model: str = ""

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.episode_id, self.style, self.strategy)

    def to_dict(self) -> dict:
        return {
            "episode_id": self.episode_id,
            "style": self.style,
            "strategy": self.strategy,
            "instruction": self.instruction,
            "prompt_digest": self.prompt_digest,
            "chat_model": self.chat_model,
        }

    @classmethod
    def from_dict(cls, raw: Mapping) -> "ManifestEntry":
        return cls(
            episode_id=str(raw["episode_id"]),
            style=str(raw["style"]),
            strategy=str(raw["strategy"]),
            instruction=str(raw["instruction"]),
            prompt_digest=str(raw["prompt_digest"]),
            chat_model=str(raw.get("chat_model", "")),
        )


@dataclass(frozen=True)
class GenerationManifest:
    run_id: str
    config_digest: str
    entries: tuple[ManifestEntry, ...]

    def __post_init__(self) -> None:
        seen = set()
        for entry in self.entries:
            if entry.key in seen:
                raise DataError(f"duplicate manifest key {entry.key}")
            seen.add(entry.key)

    def keys(self) -> set[tuple[str, str, str]]:
        return {entry.key for entry in self.entries}

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "config_digest": self.config_digest,
            "entries": [entry.to_dict() for entry in self.entries],
        }

    @classmethod
    def from_dict(cls, raw: Mapping) -> "GenerationManifest":
        return cls(
            run_id=str(raw["run_id"]),
            config_digest=str(raw["config_digest"]),
            entries=tuple(ManifestEntry.from_dict(e) for e in raw.get("entries", [])),
        )


def write_manifest(manifest: GenerationManifest, path: str | Path) -> Path:
    return write_json_atomic(manifest.to_dict(), path)


def read_manifest(path: str | Path) -> GenerationManifest:
    return GenerationManifest.from_dict(read_json(path))


# ---------------------------------------------------------------------------
# Run directory layout
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RunPaths:
    root: Path

    @property
    def envs(self) -> Path:
        return self.root / "envs"

    @property
    def episodes(self) -> Path:
        return self.root / "episodes"

    @property
    def captions(self) -> Path:
        return self.root / "captions"

    @property
    def manifests(self) -> Path:
        return self.root / "manifests"

    @property
    def traces(self) -> Path:
        return self.root / "traces"

    @property
    def reports(self) -> Path:
        return self.root / "reports"

    @property
    def replay_cache(self) -> Path:
        return self.root / "replay_cache"

    @property
    def prompts(self) -> Path:
        return self.root / "prompts"

    def ensure(self) -> "RunPaths":
        for path in (self.envs, self.episodes, self.captions, self.manifests,
                     self.traces, self.reports, self.prompts):
            path.mkdir(parents=True, exist_ok=True)
        return self


def caption_path(
    paths: RunPaths, env_id: str, episode_id: str, strategy: str, frame_index: int
) -> Path:
    name = "__".join(
        [safe_name(env_id), safe_name(episode_id), safe_name(strategy), f"{frame_index:04d}"]
    )
    return paths.captions / f"{name}.json"


def save_caption(
    paths: RunPaths, env_id: str, episode_id: str, strategy: str, record: CaptionRecord
) -> Path:
    return write_json_atomic(
        record.to_dict(), caption_path(paths, env_id, episode_id, strategy, record.frame_index)
    )


def load_caption(
    paths: RunPaths, env_id: str, episode_id: str, strategy: str, frame_index: int
) -> CaptionRecord | None:
    path = caption_path(paths, env_id, episode_id, strategy, frame_index)
    if not path.is_file():
        return None
    return CaptionRecord.from_dict(read_json(path))


def trace_path(paths: RunPaths, episode_id: str, label: str, policy: str) -> Path:
    name = "__".join([safe_name(episode_id), safe_name(label), safe_name(policy)])
    return paths.traces / f"{name}.json"


def save_trace_file(payload: Mapping, path: str | Path) -> Path:
    return write_json_atomic(dict(payload), path)


def load_trace_files(paths: RunPaths) -> list[dict]:
    return [read_json(p) for p in sorted(paths.traces.glob("*.json"))]
