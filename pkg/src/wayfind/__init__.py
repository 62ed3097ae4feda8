"""Wayfinding-instruction synthesis and zero-shot navigation evaluation."""

from .env_model import (
    EnvGraph,
    Episode,
    Node,
    PathSpec,
    central_view,
    discretize_path,
    load_env,
    make_episode,
    path_length,
    sample_episode,
    save_env,
    shortest_path,
)
from .backends import BackendConfig, Backends, ChatTurn, GenParams, build_backends, cache_key
from .vqa_chat import CaptionRecord, Captioner, Transcript, describe_frame
from .synthesis import (
    Instruction,
    PromptBundle,
    StyleProfile,
    build_prompt,
    builtin_styles,
    select_frames,
    summarize_panorama,
    synthesize_instruction,
    validate_style,
)
from .navigation import (
    Decomposition,
    NavTrace,
    PolicyConfig,
    decompose_instruction,
    run_episode,
)
from .metrics import EpisodeOutcome, EvalReport, evaluate, judge_episode, mean_pairwise_cosine, spl

__version__ = "0.1.0"
