"""Learner state and the three update rules (Closed-SSL, Closed-RL, Open-SSL)."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..heuristics import NetworkProvider
from ..nn import (
    Adam,
    EntropyController,
    annealed_target,
    loss_sac_policy,
    loss_sac_q,
    loss_ssl_policy,
    loss_ssl_value,
    policy_network,
    polyak_update,
    q_network,
    value_network,
)
from ..nn.checkpoint import dumps, loads
from .experience import BufferTooSmall, ExperienceTuple, ReplayBuffer, read_dataset


@dataclass
class LearnerConfig:
    hidden: tuple = (128, 128)
    head_hidden: int = 128
    batch_size: int = 64
    learning_rate: float = 3e-4
    alpha: float = 0.01
    alpha_learning_rate: float = 1e-3
    learn_alpha: bool = True
    anneal_steps: int = 10_000
    value_scale: float = 100.0
    gamma: float = 0.95
    polyak: float = 0.005
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")


class Learner:
    """Networks, optimizers and the entropy controller of one learner.

    ``rl`` adds twin Q-networks and their Polyak-averaged targets. The
    value network is trained with the self-supervised value loss in both
    variants; it is what the planner consumes.
    """

    def __init__(self, feature_size: int, action_count: int, config: LearnerConfig | None = None,
                 rl: bool = False):
        cfg = config or LearnerConfig()
        self.config = cfg
        self.feature_size = feature_size
        self.action_count = action_count
        self.rl = rl
        self.policy = policy_network(feature_size, action_count, cfg.hidden, cfg.head_hidden, seed=cfg.seed)
        self.value = value_network(feature_size, cfg.hidden, seed=cfg.seed + 1)
        self.policy_opt = Adam(self.policy, cfg.learning_rate)
        self.value_opt = Adam(self.value, cfg.learning_rate)
        self.controller = EntropyController(math.log(cfg.alpha), annealed_target(0, 2 * cfg.anneal_steps,
                                                                                 action_count),
                                            cfg.alpha_learning_rate)
        self.steps = 0
        self.q_nets = []
        self.q_targets = []
        self.q_opts = []
        if rl:
            for i in range(2):
                q = q_network(feature_size, action_count, cfg.hidden, cfg.head_hidden, seed=cfg.seed + 2 + i)
                self.q_nets.append(q)
                self.q_targets.append(q.copy())
                self.q_opts.append(Adam(q, cfg.learning_rate))

    @property
    def alpha(self) -> float:
        return self.controller.alpha

    def provider(self, version: int = 0) -> NetworkProvider:
        return NetworkProvider(self.policy, self.value, self.action_count, self.config.value_scale, version)

    def _advance_alpha(self, entropy: float):
        target = annealed_target(self.steps, 2 * self.config.anneal_steps, self.action_count)
        c = self.controller.with_target(target)
        if self.config.learn_alpha:
            c = c.update(entropy)
        self.controller = c

    def networks(self) -> dict:
        nets = {"policy": self.policy, "value": self.value}
        for i, (q, t) in enumerate(zip(self.q_nets, self.q_targets)):
            nets[f"q{i}"] = q
            nets[f"q{i}_target"] = t
        return nets

    def checkpoint_text(self) -> str:
        return dumps(self.networks(), {"log_alpha": self.controller.log_alpha, "steps": float(self.steps),
                                       "value_scale": self.config.value_scale})

    def load_checkpoint_text(self, text: str) -> None:
        nets, scalars = loads(text)
        for name, net in self.networks().items():
            if name not in nets:
                raise ValueError(f"checkpoint lacks network {name!r}")
            net.load_from(nets[name])
        self.controller = EntropyController(scalars.get("log_alpha", self.controller.log_alpha),
                                            self.controller.target_entropy, self.controller.alpha_learning_rate)
        self.steps = int(scalars.get("steps", 0))


def _stack_x(batch: list[ExperienceTuple]) -> np.ndarray:
    return np.stack([t.x for t in batch])


def ssl_step(learner: Learner, policy_batch: list[ExperienceTuple], value_batch: list[ExperienceTuple]) -> dict:
    """One self-supervised step on the given batches."""
    scale = learner.config.value_scale
    x = _stack_x(policy_batch)
    a_star = [t.a_star for t in policy_batch]
    lp, gp, info = loss_ssl_policy(learner.policy, x, a_star, learner.alpha)
    learner.policy_opt.step(learner.policy, gp)
    xv = _stack_x(value_batch)
    vs = np.array([t.v_star.safe for t in value_batch]) / scale
    vc = np.array([t.v_star.collision for t in value_batch]) / scale
    lv, gv, vinfo = loss_ssl_value(learner.value, xv, vs, vc)
    learner.value_opt.step(learner.value, gv)
    learner.steps += 1
    learner._advance_alpha(info["entropy"])
    return {"policy_loss": lp, "value_loss": lv, "entropy": info["entropy"], "alpha": learner.alpha}


def ssl_update(buffer: ReplayBuffer, learner: Learner, batch_size: int | None = None) -> dict:
    """Fit the policy to a* and the value net to v* on two independent uniform batches."""
    n = batch_size or learner.config.batch_size
    if len(buffer) < n:
        raise BufferTooSmall(f"need {n} tuples, have {len(buffer)}")
    return ssl_step(learner, buffer.sample(n), buffer.sample(n))


def _x_next(t: ExperienceTuple) -> np.ndarray:
    return t.x_next if t.x_next is not None else np.zeros_like(t.x)


def rl_update(buffer: ReplayBuffer, learner: Learner, batch_size: int | None = None,
              train_value: bool = True) -> dict:
    """Discrete soft actor-critic step on the smooth reward channel.

    Twin critics regress to the soft target, the policy follows the
    critics' minimum, alpha tracks the entropy target and the targets move
    by Polyak averaging. The value network keeps its self-supervised loss.
    """
    if not learner.rl:
        raise ValueError("learner has no critics")
    cfg = learner.config
    n = batch_size or cfg.batch_size
    if len(buffer) < n:
        raise BufferTooSmall(f"need {n} tuples, have {len(buffer)}")
    batch = buffer.sample(n)
    x = _stack_x(batch)
    a = np.array([t.action for t in batch])
    r = np.array([t.smooth_reward for t in batch])
    x_next = np.stack([_x_next(t) for t in batch])
    done = np.array([t.done for t in batch], float)
    alpha = learner.alpha
    lq, gq, _ = loss_sac_q(learner.q_nets, learner.q_targets, learner.policy, x, a, r, x_next, done, alpha,
                           cfg.gamma)
    for q, opt, g in zip(learner.q_nets, learner.q_opts, gq):
        opt.step(q, g)
    lp, gp, info = loss_sac_policy(learner.policy, learner.q_nets, x, alpha)
    learner.policy_opt.step(learner.policy, gp)
    out = {"q_loss": lq, "policy_loss": lp, "entropy": info["entropy"]}
    if train_value:
        vb = buffer.sample(n)
        scale = cfg.value_scale
        lv, gv, _ = loss_ssl_value(learner.value, _stack_x(vb), np.array([t.v_star.safe for t in vb]) / scale,
                                   np.array([t.v_star.collision for t in vb]) / scale)
        learner.value_opt.step(learner.value, gv)
        out["value_loss"] = lv
    learner.steps += 1
    learner._advance_alpha(info["entropy"])
    for q, t in zip(learner.q_nets, learner.q_targets):
        polyak_update(t, q, cfg.polyak)
    out["alpha"] = learner.alpha
    return out


def open_ssl_pipeline(dataset: str | Path | list[ExperienceTuple], epochs: int, learner: Learner,
                      batch_size: int | None = None, seed: int = 0) -> list[dict]:
    """Epochs of self-supervised steps over a frozen dataset.

    Each epoch visits every tuple once in a seeded shuffled order. Returns
    the mean losses of each epoch.
    """
    data = read_dataset(dataset) if isinstance(dataset, (str, Path)) else list(dataset)
    if epochs < 0:
        raise ValueError("epochs must be >= 0")
    n = min(batch_size or learner.config.batch_size, len(data))
    if epochs and n < 1:
        raise BufferTooSmall("empty dataset")
    rng = np.random.default_rng(seed)
    history = []
    for _ in range(epochs):
        order = rng.permutation(len(data))
        policy_losses, value_losses = [], []
        for start in range(0, len(order) - n + 1, n):
            batch = [data[i] for i in order[start:start + n]]
            info = ssl_step(learner, batch, batch)
            policy_losses.append(info["policy_loss"])
            value_losses.append(info["value_loss"])
        history.append({"policy_loss": float(np.mean(policy_losses)), "value_loss": float(np.mean(value_losses)),
                        "alpha": learner.alpha})
    return history


__all__ = ["Learner", "LearnerConfig", "ssl_update", "ssl_step", "rl_update", "open_ssl_pipeline"]
