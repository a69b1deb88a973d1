"""Planner-driven actors that turn environment episodes into experience."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from ..heuristics import HeuristicProvider
from ..scenarios import mix64
from ..tree import SearchConfig, run_search
from .experience import ExperienceTuple

FRAME_COUNT = 4


class ActorMode(str, enum.Enum):
    EXPLOIT = "exploit"
    EXPLORE = "explore"
    ON_POLICY = "on_policy"


@dataclass(frozen=True)
class ActorConfig:
    mode: ActorMode = ActorMode.EXPLOIT
    search: SearchConfig = field(default_factory=SearchConfig)
    temperature: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "mode", ActorMode(self.mode))
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")


@dataclass
class EpisodeMetrics:
    episode: int
    reward: float
    near_miss_rate: float
    avg_speed: float
    length: int
    mean_tree_size: float
    mean_depth: float
    mean_trials: float
    collided: bool = False
    reached: bool = False
    partial: bool = False


@dataclass
class Episode:
    tuples: list
    metrics: EpisodeMetrics


class EpisodeFailed(RuntimeError):
    """The environment raised mid-episode; ``episode`` holds what was recorded."""

    def __init__(self, message: str, episode: Episode):
        super().__init__(message)
        self.episode = episode


def softmax_sample(values, temperature: float, rng: np.random.Generator) -> int:
    z = np.asarray(values, float) / temperature
    p = np.exp(z - z.max())
    return int(rng.choice(len(p), p=p / p.sum()))


def _current(provider) -> HeuristicProvider:
    return provider() if callable(provider) and not isinstance(provider, HeuristicProvider) else provider


def collect_episode(domain, config: ActorConfig, provider, episode_id: int, seed: int,
                    sink: Callable[[ExperienceTuple], bool] | None = None) -> Episode:
    """Run one episode with the planner in the loop.

    ``provider`` is a HeuristicProvider or a zero-argument callable
    returning the latest published one; it is re-read before each search.
    ``sink`` receives every tuple as it is recorded and may return False
    to end the episode early (it is then flagged partial).
    """
    model = domain.model
    tracker = domain.tracker
    env = domain.make_env(mix64(seed))
    rng = np.random.default_rng(mix64(seed + 2))
    obs = env.reset()
    history = [] if obs is None else [obs]
    belief = tracker.initial(obs, mix64(seed + 3))
    tuples = []
    total = 0.0
    near = 0
    speed = 0.0
    tree_sizes, depths, trials = [], [], []
    partial = False
    step = 0
    x = model.encode_history(belief.states, history[-FRAME_COUNT:])
    while True:
        heur = _current(provider)
        search = replace(config.search, seed=mix64(seed ^ (0x9E37 + step)))
        result = run_search(belief, search, heur, model, history=history[-FRAME_COUNT:])
        a_star = result.action
        if config.mode is ActorMode.EXPLOIT or not result.action_values:
            action = a_star
        elif config.mode is ActorMode.EXPLORE:
            action = softmax_sample(result.action_values, config.temperature, rng)
        else:
            p = np.asarray(heur.policy_prior(x), float)
            action = int(rng.choice(len(p), p=p / p.sum()))
        try:
            out = env.step(action)
        except Exception as exc:
            ep = Episode(tuples, _metrics(episode_id, total, near, speed, step, tree_sizes, depths, trials,
                                          env, True))
            raise EpisodeFailed(f"environment failed at step {step}: {exc}", ep) from exc
        history.append(out.observation)
        if not out.done:
            belief = tracker.update(belief, action, out.observation, mix64(seed + 1000 + step))
        x_next = model.encode_history(belief.states, history[-FRAME_COUNT:])
        t = ExperienceTuple(episode_id, step, x, action, out.reward, out.smooth_reward, a_star, result.value,
                            out.done, x_next)
        tuples.append(t)
        total += out.reward.total
        near += bool(out.near_miss)
        speed += float(getattr(env, "speed", 0.0))
        tree_sizes.append(result.nodes_expanded)
        depths.append(result.max_depth)
        trials.append(result.trials)
        step += 1
        x = x_next
        if sink is not None and sink(t) is False:
            partial = not out.done
            break
        if out.done:
            break
    return Episode(tuples, _metrics(episode_id, total, near, speed, step, tree_sizes, depths, trials, env, partial))


def run_policy_episode(domain, provider: HeuristicProvider, episode_id: int, seed: int) -> EpisodeMetrics:
    """Act greedily on the learned policy alone, without search."""
    model = domain.model
    env = domain.make_env(mix64(seed))
    obs = env.reset()
    history = [] if obs is None else [obs]
    belief = domain.tracker.initial(obs, mix64(seed + 3))
    total, near, speed, step = 0.0, 0, 0.0, 0
    while True:
        x = model.encode_history(belief.states, history[-FRAME_COUNT:])
        action = int(np.argmax(provider.policy_prior(x)))
        out = env.step(action)
        history.append(out.observation)
        total += out.reward.total
        near += bool(out.near_miss)
        speed += float(getattr(env, "speed", 0.0))
        step += 1
        if out.done:
            break
        belief = domain.tracker.update(belief, action, out.observation, mix64(seed + 1000 + step))
    return _metrics(episode_id, total, near, speed, step, [0], [0], [0], env, False)


def _metrics(episode_id, total, near, speed, steps, sizes, depths, trials, env, partial) -> EpisodeMetrics:
    n = max(steps, 1)
    return EpisodeMetrics(
        episode=episode_id,
        reward=total,
        near_miss_rate=near / n,
        avg_speed=speed / n,
        length=steps,
        mean_tree_size=float(np.mean(sizes)) if sizes else 0.0,
        mean_depth=float(np.mean(depths)) if depths else 0.0,
        mean_trials=float(np.mean(trials)) if trials else 0.0,
        collided=bool(getattr(env, "collided", False)),
        reached=bool(getattr(env, "reached", False)),
        partial=partial,
    )


__all__ = [
    "ActorMode", "ActorConfig", "Episode", "EpisodeFailed", "EpisodeMetrics", "collect_episode",
    "run_policy_episode", "softmax_sample",
]
