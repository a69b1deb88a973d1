"""The closed actor-learner loop, single-threaded or with concurrent actors."""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field
from typing import Callable

from ..heuristics import HeuristicProvider, UniformProvider
from ..scenarios import mix64
from .actors import ActorConfig, EpisodeMetrics, collect_episode
from .experience import ReplayBuffer
from .updates import Learner, rl_update, ssl_update


class SnapshotChannel:
    """Holds the latest published provider; readers never see a half-written one."""

    def __init__(self, provider: HeuristicProvider):
        self._lock = threading.Lock()
        self._current = provider

    def publish(self, provider: HeuristicProvider) -> None:
        with self._lock:
            if provider.version < self._current.version:
                raise ValueError("snapshot versions must not decrease")
            self._current = provider

    def get(self) -> HeuristicProvider:
        with self._lock:
            return self._current


@dataclass
class LoopConfig:
    variant: str = "ssl"
    budget: int = 10_000
    updates_per_tuple: int = 1
    snapshot_every: int = 50
    eval_every: int = 0
    guided: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.variant not in ("ssl", "rl"):
            raise ValueError(f"variant must be ssl or rl, got {self.variant!r}")
        if self.budget < 0 or self.updates_per_tuple < 0 or self.snapshot_every < 1:
            raise ValueError("budget and update counts must be nonnegative, snapshot_every positive")


@dataclass
class LoopResult:
    learner: Learner
    buffer: ReplayBuffer
    episodes: list[EpisodeMetrics] = field(default_factory=list)
    versions_seen: dict = field(default_factory=dict)
    learner_steps: int = 0


def _learn(learner: Learner, buffer: ReplayBuffer, variant: str) -> bool:
    if len(buffer) < learner.config.batch_size:
        return False
    if variant == "ssl":
        ssl_update(buffer, learner)
    else:
        rl_update(buffer, learner)
    return True


def run_closed_loop(domain, learner: Learner, actors: list[ActorConfig], config: LoopConfig,
                    buffer: ReplayBuffer | None = None, single_thread: bool = True,
                    on_eval: Callable[[int, Learner], None] | None = None) -> LoopResult:
    """Collect experience with planner actors while the learner trains on it.

    Search starts unguided (version 0) and switches to learner snapshots as
    they are published every ``snapshot_every`` learner steps. Collection
    stops once exactly ``config.budget`` tuples have been inserted.
    ``on_eval`` is called with the inserted count every ``eval_every`` tuples.
    """
    if not actors:
        raise ValueError("need at least one actor")
    buffer = buffer if buffer is not None else ReplayBuffer(seed=config.seed)
    channel = SnapshotChannel(UniformProvider(learner.action_count, version=0))
    result = LoopResult(learner, buffer)

    def maybe_publish():
        if config.guided and learner.steps % config.snapshot_every == 0:
            channel.publish(learner.provider(version=learner.steps))

    def maybe_eval(inserted):
        if on_eval is not None and config.eval_every and inserted % config.eval_every == 0:
            on_eval(inserted, learner)

    def reader(actor_index):
        seen = result.versions_seen.setdefault(actor_index, [])

        def get():
            p = channel.get()
            seen.append(p.version)
            return p

        return get

    if single_thread:
        readers = [reader(i) for i in range(len(actors))]

        def sink(t):
            buffer.insert(t)
            for _ in range(config.updates_per_tuple):
                if _learn(learner, buffer, config.variant):
                    maybe_publish()
            maybe_eval(buffer.inserted)
            return buffer.inserted < config.budget

        episode = 0
        while buffer.inserted < config.budget:
            i = episode % len(actors)
            ep = collect_episode(domain, actors[i], readers[i], episode, mix64(config.seed * 1_000_003 + episode),
                                 sink)
            result.episodes.append(ep.metrics)
            episode += 1
        result.learner_steps = learner.steps
        return result

    # Concurrent mode: one thread per actor plus the learner on this thread.
    budget_lock = threading.Lock()
    reserved = [0]
    next_episode = [0]
    finished = threading.Event()
    errors: list[BaseException] = []
    learn_lock = threading.Lock()

    def threaded_sink(t):
        with budget_lock:
            if reserved[0] >= config.budget:
                return False
            reserved[0] += 1
            buffer.insert(t)
            n = buffer.inserted
        maybe_eval_threaded(n)
        return n < config.budget

    def maybe_eval_threaded(n):
        if on_eval is not None and config.eval_every and n % config.eval_every == 0:
            with learn_lock:
                on_eval(n, learner)

    def actor_loop(i):
        get = reader(i)
        try:
            while True:
                with budget_lock:
                    if reserved[0] >= config.budget:
                        return
                    episode = next_episode[0]
                    next_episode[0] += 1
                ep = collect_episode(domain, actors[i], get, episode, mix64(config.seed * 1_000_003 + episode),
                                     threaded_sink)
                with budget_lock:
                    result.episodes.append(ep.metrics)
        except BaseException as exc:  # surfaced on the main thread
            errors.append(exc)

    threads = [threading.Thread(target=actor_loop, args=(i,), daemon=True) for i in range(len(actors))]
    for th in threads:
        th.start()

    def watcher():
        for th in threads:
            th.join()
        finished.set()

    threading.Thread(target=watcher, daemon=True).start()
    while not finished.is_set():
        with learn_lock:
            learned = _learn(learner, buffer, config.variant)
            if learned:
                maybe_publish()
        if not learned:
            time.sleep(0.001)
    if errors:
        raise errors[0]
    result.episodes.sort(key=lambda m: m.episode)
    result.learner_steps = learner.steps
    return result


__all__ = ["SnapshotChannel", "LoopConfig", "LoopResult", "run_closed_loop"]
