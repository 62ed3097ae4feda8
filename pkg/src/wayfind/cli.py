"""Batch command-line front end.

Stages read one JSON config file and write artifacts into a run directory;
every output embeds the config digest for provenance. Relative paths inside
the config resolve against the config file's directory, while --run-dir
resolves against the working directory.

Subcommands:
    sample-paths   sample random shortest-path episodes from the envs
    caption        pre-compute frame captions into the caption store
    generate       captions + instruction synthesis -> generation manifest
    navigate       run a policy per (episode, instruction) -> traces
    report         aggregate traces into machine + human reports
    cache ls|verify   inspect the replay cache

Exit codes: 0 success, 1 usage/config error, 2 backend failure, 3 data error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Sequence

from . import datasets
from .backends import (
    BackendConfig,
    Backends,
    ReplayCache,
    build_backends,
    canonical_json_bytes,
)
from .datasets import (
    EpisodeRecord,
    GenerationManifest,
    ManifestEntry,
    RunPaths,
    load_episodes,
    read_manifest,
    safe_name,
    save_episodes,
    write_manifest,
)
from .env_model import EnvGraph, Episode, PathSpec, load_env, sample_episode
from .errors import BackendError, ConfigError, DataError, WayfindError
from .metrics import (
    MetricSummary,
    evaluate,
    judge_episode,
    mean_pairwise_cosine,
    percent,
    render_results_table,
    summarize_outcomes,
)
from .navigation import POLICIES, PolicyConfig, run_episode
from .synthesis import (
    FRAME_STRATEGIES,
    get_style,
    select_frames,
    synthesize_instruction,
    validate_style,
)
from .vqa_chat import CaptionRecord, Captioner

log = logging.getLogger("wayfind")

MODES = ("live", "record", "replay")


# ---------------------------------------------------------------------------
# Run configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RunConfig:
    run_id: str
    mode: str
    seed: int
    styles: tuple[str, ...]
    strategy: str
    caption_rounds: int
    env_files: tuple[Path, ...]
    episode_file: Path
    run_dir: Path
    replay_cache_dir: Path
    backend_config: BackendConfig
    policy: PolicyConfig
    guard_reference_leak: bool
    reference_count: int
    with_cosine: bool
    jobs: int
    config_digest: str


def load_run_config(
    config_path: str | Path,
    run_dir: str | Path | None = None,
    jobs: int | None = None,
    policy: str | None = None,
) -> RunConfig:
    path = Path(config_path)
    raw = datasets.read_json(path)
    if not isinstance(raw, Mapping):
        raise ConfigError(f"{path}: config must be a JSON object")
    digest = hashlib.sha256(canonical_json_bytes(raw)).hexdigest()
    base = path.parent

    mode = str(raw.get("mode", ""))
    if mode not in MODES:
        raise ConfigError(f"{path}: mode must be one of {MODES}, got {mode!r}")

    styles_raw = raw.get("styles", raw.get("style", []))
    if isinstance(styles_raw, str):
        styles_raw = [styles_raw]
    styles = tuple(str(s) for s in styles_raw)
    if not styles:
        raise ConfigError(f"{path}: at least one style is required")

    strategy = str(raw.get("strategy", "central"))
    if strategy not in FRAME_STRATEGIES:
        raise ConfigError(f"{path}: strategy must be one of {FRAME_STRATEGIES}")

    env_entries = raw.get("envs", [])
    if not env_entries:
        raise ConfigError(f"{path}: 'envs' must list at least one environment file")
    env_files = tuple((base / str(e)).resolve() for e in env_entries)
    episode_entry = raw.get("episodes")
    if not episode_entry:
        raise ConfigError(f"{path}: 'episodes' file is required")
    episode_file = (base / str(episode_entry)).resolve()

    resolved_run_dir = (
        Path(run_dir).resolve() if run_dir is not None
        else (base / str(raw.get("run_dir", "."))).resolve()
    )
    cache_entry = raw.get("replay_cache")
    cache_dir = (
        (base / str(cache_entry)).resolve() if cache_entry
        else resolved_run_dir / "replay_cache"
    )
    if mode == "replay" and not cache_dir.is_dir():
        raise ConfigError(f"replay mode requires an existing replay cache at {cache_dir}")

    policy_raw = dict(raw.get("policy", {}))
    if policy is not None:
        policy_raw["policy"] = policy
    try:
        policy_config = PolicyConfig.from_dict(policy_raw)
    except DataError as exc:
        raise ConfigError(f"{path}: invalid policy block: {exc}") from exc

    return RunConfig(
        run_id=str(raw.get("run_id", "run")),
        mode=mode,
        seed=int(raw.get("seed", 0)),
        styles=styles,
        strategy=strategy,
        caption_rounds=int(raw.get("caption_rounds", 5)),
        env_files=env_files,
        episode_file=episode_file,
        run_dir=resolved_run_dir,
        replay_cache_dir=cache_dir,
        backend_config=BackendConfig.from_dict(raw.get("backends", {})),
        policy=policy_config,
        guard_reference_leak=bool(raw.get("guard_reference_leak", False)),
        reference_count=int(raw.get("reference_count", 3)),
        with_cosine=bool(raw.get("with_cosine", False)),
        jobs=int(jobs if jobs is not None else raw.get("jobs", 1)),
        config_digest=digest,
    )


def backends_for(config: RunConfig, inner: Backends | None = None) -> Backends:
    return build_backends(
        config.backend_config, config.mode, cache_dir=config.replay_cache_dir, inner=inner
    )


def _load_envs(config: RunConfig) -> dict[str, EnvGraph]:
    envs = {}
    for env_file in config.env_files:
        env = load_env(env_file)
        if env.env_id in envs:
            raise DataError(f"duplicate env_id {env.env_id!r} across env files")
        envs[env.env_id] = env
    return envs


def _load_episode_pairs(config: RunConfig, envs: Mapping[str, EnvGraph]) -> list[tuple[EnvGraph, Episode, EpisodeRecord]]:
    pairs = []
    for record in load_episodes(config.episode_file):
        env = envs.get(record.env_id)
        if env is None:
            raise DataError(
                f"episode {record.episode_id!r} references unknown env {record.env_id!r}"
            )
        pairs.append((env, datasets.to_episode(record, env), record))
    return pairs


# ---------------------------------------------------------------------------
# Captioning stage
# ---------------------------------------------------------------------------

def frames_for_episode(
    config: RunConfig,
    paths: RunPaths,
    env: EnvGraph,
    episode: Episode,
    captioner: Captioner,
) -> list[CaptionRecord]:
    """Caption-store read-through: reuse stored records when all frames exist."""
    stored = [
        datasets.load_caption(paths, env.env_id, episode.episode_id, config.strategy, index)
        for index in range(len(episode.path))
    ]
    if all(record is not None for record in stored):
        return stored  # type: ignore[return-value]
    records = select_frames(env, episode, config.strategy, captioner)
    for record in records:
        datasets.save_caption(paths, env.env_id, episode.episode_id, config.strategy, record)
    return records


def run_caption(config: RunConfig, backends: Backends) -> tuple[int, list[tuple[str, Exception]]]:
    paths = RunPaths(config.run_dir).ensure()
    envs = _load_envs(config)
    captioner = Captioner.from_backends(backends, rounds=config.caption_rounds)
    done = 0
    errors: list[tuple[str, Exception]] = []

    def work(item):
        env, episode, _ = item
        return frames_for_episode(config, paths, env, episode, captioner)

    pairs = sorted(_load_episode_pairs(config, envs), key=lambda p: p[1].episode_id)
    for episode_id, outcome in _run_jobs(config.jobs, [(p[1].episode_id, p) for p in pairs], work):
        if isinstance(outcome, Exception):
            errors.append((episode_id, outcome))
        else:
            done += 1
    return done, errors


def _run_jobs(jobs: int, items: Sequence[tuple[str, object]], work):
    """Run `work` over labeled items, preserving input order in the results."""
    if jobs <= 1:
        results = []
        for label, item in items:
            try:
                results.append((label, work(item)))
            except WayfindError as exc:
                results.append((label, exc))
        return results
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        futures = [(label, pool.submit(work, item)) for label, item in items]
        results = []
        for label, future in futures:
            try:
                results.append((label, future.result()))
            except WayfindError as exc:
                results.append((label, exc))
        return results


# ---------------------------------------------------------------------------
# Generation stage
# ---------------------------------------------------------------------------

def manifest_path_for(config: RunConfig) -> Path:
    return RunPaths(config.run_dir).manifests / f"{safe_name(config.run_id)}.json"


def run_generate(
    config: RunConfig, backends: Backends, resume: bool = False
) -> tuple[Path, list[tuple[str, Exception]]]:
    paths = RunPaths(config.run_dir).ensure()
    manifest_file = manifest_path_for(config)
    existing: list[ManifestEntry] = []
    if manifest_file.exists():
        if not resume:
            raise ConfigError(
                f"manifest {manifest_file} already exists; pass --resume to skip existing keys"
            )
        existing = list(read_manifest(manifest_file).entries)
    existing_keys = {entry.key for entry in existing}

    envs = _load_envs(config)
    pairs = sorted(_load_episode_pairs(config, envs), key=lambda p: p[1].episode_id)
    captioner = Captioner.from_backends(backends, rounds=config.caption_rounds)

    jobs = []
    for env, episode, _ in pairs:
        for style_name in config.styles:
            key = (episode.episode_id, style_name, config.strategy)
            if key in existing_keys:
                continue
            jobs.append((f"{episode.episode_id}/{style_name}", (env, episode, style_name)))

    def work(item):
        env, episode, style_name = item
        style = get_style(style_name)
        frames = frames_for_episode(config, paths, env, episode, captioner)
        captured: dict = {}

        def on_prompt(bundle) -> None:
            digest = hashlib.sha256(bundle.rendered.encode("utf-8")).hexdigest()
            captured["digest"] = digest
            name = "__".join(
                [safe_name(episode.episode_id), safe_name(style_name), safe_name(config.strategy)]
            )
            prompt_file = paths.prompts / f"{name}.txt"
            prompt_file.write_text(bundle.rendered + "\n", encoding="utf-8")

        instruction = synthesize_instruction(
            env,
            episode,
            style,
            config.strategy,
            backends,
            captioner=captioner,
            seed=config.seed,
            reference_count=config.reference_count,
            guard_reference_leak=config.guard_reference_leak,
            on_prompt=on_prompt,
            frames=frames,
        )
        violations = validate_style(instruction, style)
        if violations:
            log.warning(
                "style violations for %s/%s: %s", episode.episode_id, style_name, violations
            )
        return ManifestEntry(
            episode_id=episode.episode_id,
            style=style_name,
            strategy=config.strategy,
            instruction=instruction.text,
            prompt_digest=captured.get("digest", ""),
            chat_model=config.backend_config.chat_model,
        )

    entries = list(existing)
    errors: list[tuple[str, Exception]] = []
    for label, outcome in _run_jobs(config.jobs, jobs, work):
        if isinstance(outcome, Exception):
            errors.append((label, outcome))
        else:
            entries.append(outcome)

    entries.sort(key=lambda e: e.key)
    manifest = GenerationManifest(
        run_id=config.run_id, config_digest=config.config_digest, entries=tuple(entries)
    )
    write_manifest(manifest, manifest_file)
    return manifest_file, errors


# ---------------------------------------------------------------------------
# Navigation stage
# ---------------------------------------------------------------------------

def run_navigate(
    config: RunConfig,
    backends: Backends,
    source: str = "generated",
    resume: bool = False,
) -> tuple[Path, list[tuple[str, Exception]]]:
    if source not in ("generated", "human"):
        raise ConfigError(f"navigation source must be 'generated' or 'human', got {source!r}")
    paths = RunPaths(config.run_dir).ensure()
    envs = _load_envs(config)
    pairs = {
        episode.episode_id: (env, episode)
        for env, episode, _ in _load_episode_pairs(config, envs)
    }

    tasks: list[tuple[str, tuple]] = []
    if source == "generated":
        manifest_file = manifest_path_for(config)
        if not manifest_file.exists():
            raise ConfigError(f"no generation manifest at {manifest_file}; run generate first")
        for entry in read_manifest(manifest_file).entries:
            if entry.episode_id not in pairs:
                raise DataError(f"manifest references unknown episode {entry.episode_id!r}")
            env, episode = pairs[entry.episode_id]
            label = f"{entry.style}__{entry.strategy}"
            tasks.append(
                (
                    f"{entry.episode_id}/{label}",
                    (env, episode, entry.instruction, label, entry.style, entry.strategy),
                )
            )
    else:
        for episode_id, (env, episode) in sorted(pairs.items()):
            if not episode.reference_instructions:
                log.warning("episode %s has no human instructions; skipping", episode_id)
                continue
            tasks.append(
                (
                    f"{episode_id}/human",
                    (env, episode, episode.reference_instructions[0], "human", "human",
                     config.strategy),
                )
            )

    def work(item):
        env, episode, instruction, label, style, strategy = item
        trace_file = datasets.trace_path(paths, episode.episode_id, label, config.policy.policy)
        if resume and trace_file.exists():
            return trace_file
        trace = run_episode(env, episode, instruction, config.policy, backends)
        payload = {
            "episode_id": episode.episode_id,
            "env_id": env.env_id,
            "goal": episode.goal,
            "source": "human" if label == "human" else "generated",
            "style": style,
            "strategy": strategy,
            "instruction": instruction,
            "policy": config.policy.policy,
            "policy_config": config.policy.to_dict(),
            "config_digest": config.config_digest,
            "trace": trace.to_dict(),
        }
        datasets.save_trace_file(payload, trace_file)
        return trace_file

    errors: list[tuple[str, Exception]] = []
    for label, outcome in _run_jobs(config.jobs, tasks, work):
        if isinstance(outcome, Exception):
            errors.append((label, outcome))
    return paths.traces, errors


# ---------------------------------------------------------------------------
# Report stage
# ---------------------------------------------------------------------------

def run_report(config: RunConfig, backends: Backends | None = None) -> tuple[Path, Path]:
    paths = RunPaths(config.run_dir).ensure()
    payloads = datasets.load_trace_files(paths)
    if not payloads:
        raise DataError(f"nothing to report: no traces under {paths.traces}")

    envs = _load_envs(config)
    episode_refs = {
        record.episode_id: record.instructions
        for record in load_episodes(config.episode_file)
    }

    from .navigation import NavTrace

    outcomes = []
    tags: dict[str, dict[str, str]] = {}
    rows: list[dict] = []
    for payload in payloads:
        env = envs.get(payload["env_id"])
        if env is None:
            raise DataError(f"trace references unknown env {payload['env_id']!r}")
        trace = NavTrace.from_dict(payload["trace"])
        radius = float(payload["policy_config"]["success_radius"])
        outcome = judge_episode(env, trace, payload["goal"], radius)
        row_id = f"{payload['episode_id']}::{payload['style']}::{payload['policy']}"
        outcome = replace(outcome, episode_id=row_id)
        outcomes.append(outcome)
        group = (
            "human"
            if payload["source"] == "human"
            else f"generated:{payload['strategy']}"
        )
        tags[row_id] = {
            "policy": payload["policy"],
            "strategy": payload["strategy"],
            "group": group,
        }
        rows.append({"payload": payload, "outcome": outcome, "group": group})

    cosine = None
    if config.with_cosine and backends is not None:
        generated, references = [], []
        for row in rows:
            payload = row["payload"]
            refs = episode_refs.get(payload["episode_id"], ())
            if payload["source"] == "generated" and refs:
                generated.append(payload["instruction"])
                references.append(refs[0])
        if generated:
            cosine = mean_pairwise_cosine(generated, references, backends.embedder)

    report = evaluate(outcomes, tags=tags, mean_pairwise_cosine=cosine)

    # Per (policy, group) cells for the human-readable table.
    cell_members: dict[tuple[str, str], list] = {}
    for row in rows:
        key = (row["payload"]["policy"], row["group"])
        cell_members.setdefault(key, []).append(row["outcome"])
    cells = {
        key: evaluate_summary(members) for key, members in cell_members.items()
    }
    policies = sorted({key[0] for key in cells})
    column_order = [
        ("human", "Original"),
        ("generated:central", "Generated (Central)"),
        ("generated:panoramic", "Generated (Panoramic)"),
    ]
    columns = [col for col in column_order if any(key[1] == col[0] for key in cells)]

    machine = {
        "run_id": config.run_id,
        "config_digest": config.config_digest,
        "success_radius": config.policy.success_radius,
        "n_traces": len(rows),
        "overall": {
            "n_episodes": report.n_episodes,
            "sr": report.sr,
            "sr_percent": percent(report.sr),
            "osr": report.osr,
            "osr_percent": percent(report.osr),
            "spl": report.spl,
        },
        "by_policy": _summaries_dict(report.by_policy),
        "by_strategy": _summaries_dict(report.by_strategy),
        "by_group": {
            f"{policy}|{group}": _summary_dict(summary)
            for (policy, group), summary in sorted(cells.items())
        },
        "mean_pairwise_cosine": cosine,
    }
    report_json = paths.reports / "report.json"
    datasets.write_json_atomic(machine, report_json)

    table = render_results_table(cells, policies, columns)
    lines = [
        f"run: {config.run_id}",
        f"config digest: {config.config_digest}",
        f"success radius: {config.policy.success_radius}",
        "",
        table,
    ]
    if cosine is not None:
        lines.append(f"mean pairwise cosine (generated vs human): {cosine:.4f}")
    report_txt = paths.reports / "report.txt"
    report_txt.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return report_json, report_txt


def evaluate_summary(outcomes) -> MetricSummary:
    return summarize_outcomes(outcomes)


def _summary_dict(summary: MetricSummary) -> dict:
    return {
        "n_episodes": summary.n_episodes,
        "sr": summary.sr,
        "sr_percent": percent(summary.sr),
        "osr": summary.osr,
        "osr_percent": percent(summary.osr),
        "spl": summary.spl,
    }


def _summaries_dict(groups: Mapping[str, MetricSummary]) -> dict:
    return {label: _summary_dict(summary) for label, summary in sorted(groups.items())}


# ---------------------------------------------------------------------------
# Path sampling stage
# ---------------------------------------------------------------------------

def run_sample_paths(
    config: RunConfig, count: int, min_hops: int, max_hops: int, out: Path | None = None
) -> Path:
    if count < 1:
        raise ConfigError("--count must be >= 1")
    records = []
    seen = set()
    for env_file in config.env_files:
        env = load_env(env_file)
        for index in range(count):
            spec = PathSpec(min_hops=min_hops, max_hops=max_hops, seed=config.seed + index)
            episode = sample_episode(env, spec)
            if episode.episode_id in seen:
                continue
            seen.add(episode.episode_id)
            records.append(
                EpisodeRecord(
                    episode_id=episode.episode_id,
                    env_id=episode.env_id,
                    path=episode.path,
                )
            )
    target = out if out is not None else config.episode_file
    return save_episodes(records, target)


# ---------------------------------------------------------------------------
# Command-line plumbing
# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); the contract is exit 1
        raise ConfigError(message)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="path to the run config JSON")
    parser.add_argument("--run-dir", default=None, help="override the run directory")
    parser.add_argument("--jobs", type=int, default=None, help="worker pool size")


def build_parser() -> _Parser:
    parser = _Parser(prog="wayfind", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample-paths", help="sample random episodes from the envs")
    _add_common(p)
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--min-hops", type=int, default=2)
    p.add_argument("--max-hops", type=int, default=6)
    p.add_argument("--out", default=None, help="episode file to write (default: config value)")

    p = sub.add_parser("caption", help="pre-compute frame captions")
    _add_common(p)

    p = sub.add_parser("generate", help="synthesize instructions into a manifest")
    _add_common(p)
    p.add_argument("--resume", action="store_true", help="skip keys already in the manifest")

    p = sub.add_parser("navigate", help="run the navigation policy over instructions")
    _add_common(p)
    p.add_argument("--source", choices=("generated", "human"), default="generated")
    p.add_argument("--policy", choices=[pol.replace("_", "-") for pol in POLICIES], default=None)
    p.add_argument("--resume", action="store_true", help="keep existing trace files")

    p = sub.add_parser("report", help="aggregate traces into reports")
    _add_common(p)

    p = sub.add_parser("cache", help="replay cache utilities")
    p.add_argument("action", choices=("ls", "verify"))
    p.add_argument("--dir", required=True, help="replay cache directory")
    return parser


def _summarize_errors(stage: str, errors: Sequence[tuple[str, Exception]]) -> int:
    for label, exc in errors:
        log.error("%s failed for %s: %s", stage, label, exc)
    log.error("%s: %d item(s) failed", stage, len(errors))
    if any(isinstance(exc, BackendError) for _, exc in errors):
        return 2
    return 3


def main(argv: Sequence[str] | None = None) -> int:
    if not logging.getLogger().handlers:
        logging.basicConfig(
            stream=sys.stderr, level=logging.INFO, format="%(levelname)s %(name)s: %(message)s"
        )
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except ConfigError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1

    try:
        if args.command == "cache":
            cache = ReplayCache(args.dir)
            if args.action == "ls":
                for key in cache.keys():
                    entry = cache.load(key)
                    print(f"{key}  {entry.kind}  {len(entry.response)}B")
                return 0
            bad = cache.verify()
            for key in bad:
                log.error("cache entry %s fails verification", key)
            return 3 if bad else 0

        config = load_run_config(
            args.config,
            run_dir=args.run_dir,
            jobs=args.jobs,
            policy=getattr(args, "policy", None) and args.policy.replace("-", "_"),
        )

        if args.command == "sample-paths":
            out = Path(args.out) if args.out else None
            target = run_sample_paths(config, args.count, args.min_hops, args.max_hops, out)
            log.info("wrote episodes to %s", target)
            return 0

        if args.command == "caption":
            done, errors = run_caption(config, backends_for(config))
            log.info("captioned %d episode(s)", done)
            return _summarize_errors("caption", errors) if errors else 0

        if args.command == "generate":
            manifest_file, errors = run_generate(
                config, backends_for(config), resume=args.resume
            )
            log.info("manifest written to %s", manifest_file)
            return _summarize_errors("generate", errors) if errors else 0

        if args.command == "navigate":
            traces_dir, errors = run_navigate(
                config, backends_for(config), source=args.source, resume=args.resume
            )
            log.info("traces written to %s", traces_dir)
            return _summarize_errors("navigate", errors) if errors else 0

        if args.command == "report":
            backends = backends_for(config) if config.with_cosine else None
            report_json, report_txt = run_report(config, backends)
            log.info("reports written to %s and %s", report_json, report_txt)
            return 0

        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        log.error("%s", exc)
        return 1
    except BackendError as exc:
        log.error("%s", exc)
        return 2
    except DataError as exc:
        log.error("%s", exc)
        return 3


if __name__ == "__main__":
    sys.exit(main())
