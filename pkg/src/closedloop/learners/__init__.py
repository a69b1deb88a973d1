"""Experience collection, replay and the learner variants."""

from .actors import (
    ActorConfig,
    ActorMode,
    Episode,
    EpisodeFailed,
    EpisodeMetrics,
    collect_episode,
    run_policy_episode,
)
from .experience import (
    BufferTooSmall,
    CorruptDataset,
    ExperienceTuple,
    ReplayBuffer,
    read_dataset,
    write_dataset,
)
from .loop import LoopConfig, LoopResult, SnapshotChannel, run_closed_loop
from .updates import Learner, LearnerConfig, open_ssl_pipeline, rl_update, ssl_step, ssl_update

__all__ = [
    "ActorConfig", "ActorMode", "BufferTooSmall", "CorruptDataset", "Episode", "EpisodeFailed",
    "EpisodeMetrics", "ExperienceTuple", "Learner", "LearnerConfig", "LoopConfig", "LoopResult",
    "ReplayBuffer", "SnapshotChannel", "collect_episode", "open_ssl_pipeline", "read_dataset",
    "rl_update", "run_closed_loop", "run_policy_episode", "ssl_step", "ssl_update", "write_dataset",
]
