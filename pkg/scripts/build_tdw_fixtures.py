#!/usr/bin/env python3
"""Build the bundled TDW-style replay fixtures under tests/fixtures/tdw/.

Runs the full pipeline once in record mode against scripted backends, which
captures every backend response into the content-addressed replay cache. The
committed fixture set (env, episodes, config, cache) then replays the whole
pipeline offline and byte-identically.

Idempotent: wipes and regenerates the fixture directory on every run.
"""

from __future__ import annotations

import hashlib
import json
import shutil
import sys
import tempfile
from pathlib import Path

REPO_ROOT = Path(__file__).resolve().parent.parent
FIXTURE_DIR = REPO_ROOT / "tests" / "fixtures" / "tdw"

sys.path.insert(0, str(REPO_ROOT / "src"))

from wayfind.backends import Backends, GenParams, HashEmbedder, ScriptedChat, ScriptedGrounder, ScriptedVqa, build_backends
from wayfind.cli import load_run_config, run_caption, run_generate, run_navigate, run_report
from wayfind.datasets import EpisodeRecord, read_manifest, save_episodes
from wayfind.env_model import EnvGraph, Node, save_env

NODE_SPACING = 2.0
FRAME_REF = "frames/ep0/{index}_90.png".format

INITIAL_CAPTIONS = {
    FRAME_REF(index=0): "a computer screen in a room",
    FRAME_REF(index=1): "a small chair",
    FRAME_REF(index=2): "a living room",
    FRAME_REF(index=3): "a room with a couch",
    FRAME_REF(index=4): "a computer screen on a table",
}

QUESTIONS = {
    "a computer screen in a room": "What is shown on the screen?",
    "a small chair": "What is the chair made of?",
    "a living room": "Are there people in the living room?",
    "a room with a couch": "Is there anything mounted on the wall?",
    "a computer screen on a table": "What else is on the table?",
}

ANSWERS = {
    "What is shown on the screen?": (
        "a colorful video of a man, shown on a television, with a chair beside it"
    ),
    "What is the chair made of?": "fabric in red, white and gray, next to an unclear object",
    "Are there people in the living room?": (
        "no, the brown furniture is empty and the walls have no decorations"
    ),
    "Is there anything mounted on the wall?": "yes, a small television above the gray couch",
    "What else is on the table?": "a plant, next to the computer displaying a website",
}

REFINED_CAPTIONS = {
    "a computer screen in a room": (
        "The image depicts a computer screen showing a colorful video of a man that is "
        "being displayed on a television. There is also a chair visible in the image "
        "besides the television."
    ),
    "a small chair": (
        "The image contains a small chair made of fabric, in colors of red, white and "
        "gray. There is another object present in the image, but it is not clear what "
        "it is."
    ),
    "a living room": (
        "The image is of a living room with brown furniture and no decorations on the "
        "walls. There are no people present in the living room."
    ),
    "a room with a couch": (
        "The image depicts a room with a gray couch located against a wall. There is a "
        "small television mounted on the wall."
    ),
    "a computer screen on a table": (
        "The image features a computer screen displaying a website, with a couch "
        "visible in the background. A plant is placed on a table next to the computer. "
        "No other objects are visible on the table."
    ),
}

REVERIE_OUTPUT = (
    "Go to the living room, then move to the room with the gray couch and turn off "
    "the television mounted on the wall."
)
R2R_OUTPUT = (
    "Go from the computer screen to the chair, then past the object in the background "
    "and into the living room. Walk past the blue furniture and turn right towards "
    "the gray couch. Finally, stop in front of the table with the plant and view the "
    "website on the computer screen."
)

HUMAN_INSTRUCTION = (
    "Go to the room with the couch and switch off the television on the wall."
)

# Steering scores for the generated coarse instruction: the first phrase peaks
# at node 2, the second at node 4 (the goal). Everything else falls back to a
# hash in [0, 0.55), below the 0.6 advance threshold.
GROUND_OVERRIDES = {
    ("the living room", FRAME_REF(index=0)): 0.2,
    ("the living room", FRAME_REF(index=1)): 0.3,
    ("the living room", FRAME_REF(index=2)): 0.85,
    ("the room with the gray couch", FRAME_REF(index=2)): 0.3,
    ("the room with the gray couch", FRAME_REF(index=3)): 0.4,
    ("the room with the gray couch", FRAME_REF(index=4)): 0.9,
    ("the room with the couch", FRAME_REF(index=0)): 0.25,
    ("the room with the couch", FRAME_REF(index=1)): 0.35,
    ("the room with the couch", FRAME_REF(index=2)): 0.45,
    ("the room with the couch", FRAME_REF(index=3)): 0.95,
}

CONFIG = {
    "run_id": "tdw-demo",
    "mode": "replay",
    "seed": 7,
    "styles": ["reverie", "r2r"],
    "strategy": "central",
    "caption_rounds": 1,
    "envs": ["envs/tdw_apartment.json"],
    "episodes": "episodes/episodes.json",
    "replay_cache": "replay_cache",
    "reference_count": 3,
    "with_cosine": True,
    "backends": {
        "chat": {"model": "chat-fixture"},
        "vqa": {"model": "vqa-fixture"},
        "ground": {"model": "ground-fixture", "kind": "similarity"},
        "embed": {"model": "embed-fixture"},
    },
    "policy": {
        "policy": "clip_nav",
        "advance_threshold": 0.6,
        "backtrack_patience": 3,
        "backtrack_margin": 0.1,
        "step_budget": 20,
        "success_radius": 3.0,
    },
}


def build_env_file(path: Path) -> None:
    nodes = []
    for index in range(5):
        views = {0: None, 90: FRAME_REF(index=index), 180: None, 270: None}
        nodes.append(
            Node(id=f"p{index}", position=(index * NODE_SPACING, 0.0, 0.0), views=views)
        )
    edges = tuple(
        (f"p{i}", f"p{i + 1}", NODE_SPACING) for i in range(4)
    )
    env = EnvGraph(
        env_id="tdw_apartment",
        simulator_kind="continuous",
        nodes=tuple(nodes),
        edges=edges,
    )
    save_env(env, path)


def build_episode_file(path: Path) -> None:
    record = EpisodeRecord(
        episode_id="tdw-ep0",
        env_id="tdw_apartment",
        path=tuple(f"p{i}" for i in range(5)),
        instructions=(HUMAN_INSTRUCTION,),
        split="demo",
    )
    save_episodes([record], path)


def chat_responder(turns):
    prompt = turns[-1].content
    if prompt.startswith("You are gathering facts"):
        for initial, question in QUESTIONS.items():
            if f"Current description: {initial}\n" in prompt:
                return question
        raise AssertionError(f"no scripted question for prompt: {prompt[:80]}...")
    if prompt.startswith("Rewrite the image description"):
        for initial, refined in REFINED_CAPTIONS.items():
            if f"Description: {initial}\n" in prompt:
                return refined
        raise AssertionError(f"no scripted refinement for prompt: {prompt[:80]}...")
    if prompt.startswith("A robot agent at home sees"):
        if "must be less than 20 words." in prompt:
            return REVERIE_OUTPUT
        return R2R_OUTPUT
    raise AssertionError(f"unexpected chat prompt: {prompt[:80]}...")


def vqa_responder(observation, question):
    if question == "Describe the image in detail.":
        return INITIAL_CAPTIONS[observation]
    return ANSWERS[question]


def ground_scorer(phrase, ref):
    if (phrase, ref) in GROUND_OVERRIDES:
        return GROUND_OVERRIDES[(phrase, ref)]
    digest = hashlib.sha256(f"{phrase}|{ref}".encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "big") / 0xFFFFFFFF * 0.55


def scripted_bundle() -> Backends:
    return Backends(
        chat=ScriptedChat(responder=chat_responder),
        vqa=ScriptedVqa(responder=vqa_responder),
        grounder=ScriptedGrounder(scorer=ground_scorer),
        embedder=HashEmbedder(dim=16),
        chat_params=GenParams(model="chat-fixture", temperature=0.0),
    )


def main() -> int:
    if FIXTURE_DIR.exists():
        shutil.rmtree(FIXTURE_DIR)
    (FIXTURE_DIR / "replay_cache").mkdir(parents=True)
    build_env_file(FIXTURE_DIR / "envs" / "tdw_apartment.json")
    build_episode_file(FIXTURE_DIR / "episodes" / "episodes.json")
    config_path = FIXTURE_DIR / "config.json"
    config_path.write_text(json.dumps(CONFIG, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    with tempfile.TemporaryDirectory() as workdir:
        config = load_run_config(config_path, run_dir=workdir)
        recorder = build_backends(
            config.backend_config, "record", cache_dir=config.replay_cache_dir,
            inner=scripted_bundle(),
        )
        done, errors = run_caption(config, recorder)
        assert not errors, errors
        manifest_file, errors = run_generate(config, recorder)
        assert not errors, errors
        _, errors = run_navigate(config, recorder, source="generated")
        assert not errors, errors
        _, errors = run_navigate(config, recorder, source="human")
        assert not errors, errors
        run_report(config, recorder)

        manifest = read_manifest(manifest_file)
        by_style = {entry.style: entry.instruction for entry in manifest.entries}
        assert by_style["reverie"] == REVERIE_OUTPUT, by_style["reverie"]
        assert by_style["r2r"] == R2R_OUTPUT, by_style["r2r"]

    # Replay the whole pipeline from the recorded cache to prove completeness.
    with tempfile.TemporaryDirectory() as workdir:
        config = load_run_config(config_path, run_dir=workdir)
        replayer = build_backends(
            config.backend_config, "replay", cache_dir=config.replay_cache_dir
        )
        run_caption(config, replayer)
        manifest_file, errors = run_generate(config, replayer)
        assert not errors, errors
        _, errors = run_navigate(config, replayer, source="generated")
        assert not errors, errors
        _, errors = run_navigate(config, replayer, source="human")
        assert not errors, errors
        run_report(config, replayer)

    entries = len(list((FIXTURE_DIR / "replay_cache").glob("*.json")))
    print(f"fixtures written to {FIXTURE_DIR} ({entries} cache entries)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
