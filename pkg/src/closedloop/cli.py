"""Command-line entry point: planning, training, evaluation and the oracle check."""

from __future__ import annotations

import argparse
import csv
import math
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .config import MODES, ConfigError, RunConfig, load_config
from .domains import make_domain
from .heuristics import UniformProvider
from .learners import (
    ActorConfig,
    EpisodeMetrics,
    Learner,
    LearnerConfig,
    LoopConfig,
    ReplayBuffer,
    collect_episode,
    open_ssl_pipeline,
    read_dataset,
    run_closed_loop,
    run_policy_episode,
    write_dataset,
)
from .nn.checkpoint import CheckpointError
from .scenarios import mix64
from .tree import SearchConfig

METRICS_COLUMNS = ("evaluator", "seed", "episode", "reward", "near_miss_rate", "avg_speed", "length",
                   "mean_tree_size", "mean_depth", "mean_trials", "collided", "reached", "partial")
CURVE_COLUMNS = ("tuples", "learner_steps", "evaluator", "episodes", "mean_reward", "stderr_reward",
                 "near_miss_rate", "avg_speed")
EVAL_NAMESPACE = 0xE7A1_0000


# ---------------------------------------------------------------- builders


def build_domain(cfg: RunConfig):
    opts = {"max_steps": cfg.max_steps}
    if cfg.domain == "driving":
        opts.update(exo_count=cfg.exo_count, particle_count=cfg.particle_count, map_path=cfg.map_path or None)
    return make_domain(cfg.domain, **opts)


def search_config(cfg: RunConfig, clipping: bool | None = None) -> SearchConfig:
    return SearchConfig(
        scenario_count=cfg.scenario_count,
        max_depth=cfg.max_depth,
        horizon=cfg.horizon,
        gamma=cfg.gamma,
        exploration=cfg.exploration,
        gap_tolerance=cfg.gap_tolerance,
        max_trials=cfg.max_trials or None,
        time_budget=cfg.time_budget or None,
        optimistic_trial_period=cfg.optimistic_trial_period,
        value_clipping=cfg.value_clipping if clipping is None else clipping,
        workers=cfg.search_workers,
        seed=cfg.seed,
    )


def learner_config(cfg: RunConfig) -> LearnerConfig:
    return LearnerConfig(
        hidden=cfg.hidden,
        head_hidden=cfg.head_hidden,
        batch_size=cfg.batch_size,
        learning_rate=cfg.learning_rate,
        alpha=cfg.alpha,
        alpha_learning_rate=cfg.alpha_learning_rate,
        learn_alpha=cfg.learn_alpha,
        anneal_steps=max(cfg.budget * cfg.updates_per_tuple // 2, 1),
        value_scale=cfg.value_scale,
        gamma=cfg.rl_gamma,
        polyak=cfg.polyak,
        seed=cfg.seed,
    )


def make_learner(cfg: RunConfig, domain, rl: bool = False) -> Learner:
    return Learner(domain.model.feature_size, domain.model.action_count, learner_config(cfg), rl=rl)


def load_learner(path: str | Path, cfg: RunConfig, domain) -> Learner:
    text = Path(path).read_text()
    rl = "network q0 " in text
    learner = make_learner(cfg, domain, rl=rl)
    try:
        learner.load_checkpoint_text(text)
    except (ValueError, CheckpointError) as exc:
        raise ConfigError(f"checkpoint {path}: {exc}") from None
    return learner


# ---------------------------------------------------------------- evaluation


@dataclass
class EvaluatorSummary:
    episodes: int = 0
    mean_reward: float = 0.0
    stderr_reward: float = 0.0
    near_miss_rate: float = 0.0
    avg_speed: float = 0.0
    collision_rate: float = 0.0
    rewards: list = field(default_factory=list)

    def interval(self, z: float = 1.96) -> tuple[float, float]:
        return self.mean_reward - z * self.stderr_reward, self.mean_reward + z * self.stderr_reward


def summarize(records: list[EpisodeMetrics]) -> EvaluatorSummary:
    if not records:
        return EvaluatorSummary()
    r = np.array([m.reward for m in records])
    se = float(r.std(ddof=1) / math.sqrt(len(r))) if len(r) > 1 else 0.0
    return EvaluatorSummary(
        episodes=len(r),
        mean_reward=float(r.mean()),
        stderr_reward=se,
        near_miss_rate=float(np.mean([m.near_miss_rate for m in records])),
        avg_speed=float(np.mean([m.avg_speed for m in records])),
        collision_rate=float(np.mean([m.collided for m in records])),
        rewards=r.tolist(),
    )


def eval_seed(seed: int, episode: int) -> int:
    return mix64(EVAL_NAMESPACE + (seed << 20) + episode)


def evaluate(learner: Learner | None, cfg: RunConfig, domain=None, episodes: int | None = None, seeds=None,
             evaluators=("planner", "policy"), rows: list | None = None) -> dict[str, EvaluatorSummary]:
    """Evaluate the planner guided by ``learner`` and the learner's policy alone.

    ``learner=None`` evaluates the unguided planner. Every evaluator sees
    the same episodes: episode ``j`` under seed ``s`` always builds the same
    scene. Per-episode rows are appended to ``rows`` when given.
    """
    domain = domain if domain is not None else build_domain(cfg)
    episodes = cfg.episodes if episodes is None else episodes
    seeds = cfg.eval_seeds if seeds is None else seeds
    provider = learner.provider(version=learner.steps) if learner is not None else UniformProvider(
        domain.model.action_count)
    actor = ActorConfig("exploit", search_config(cfg))
    out = {}
    for name in evaluators:
        if name == "policy" and learner is None:
            continue
        records = []
        for s in seeds:
            for j in range(episodes):
                es = eval_seed(s, j)
                if name == "planner":
                    m = collect_episode(domain, actor, provider, j, es).metrics
                elif name == "policy":
                    m = run_policy_episode(domain, provider, j, es)
                else:
                    raise ValueError(f"unknown evaluator {name!r}")
                records.append(m)
                if rows is not None:
                    rows.append((name, s, m))
        out[name] = summarize(records)
    return out


# ---------------------------------------------------------------- output


def _cell(v):
    if isinstance(v, bool):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def write_metrics(path: Path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRICS_COLUMNS)
        for evaluator, seed, m in rows:
            w.writerow([evaluator, seed, m.episode] + [_cell(getattr(m, c)) for c in METRICS_COLUMNS[3:]])


def write_curves(path: Path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CURVE_COLUMNS)
        for row in rows:
            w.writerow([_cell(v) for v in row])


def write_manifest(path: Path, cfg: RunConfig, status: str, extra: dict | None = None) -> None:
    lines = [f"status = {status}"]
    lines += [f"{k} = {v}" for k, v in cfg.items()]
    for k, v in (extra or {}).items():
        lines.append(f"{k} = {v}")
    path.write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------- modes


class Run:
    def __init__(self, cfg: RunConfig, out: Path, single_thread: bool):
        self.cfg = cfg
        self.out = out
        self.single_thread = single_thread
        self.metrics: list = []
        self.curves: list = []
        self.extra: dict = {}
        self.domain = build_domain(cfg)

    def checkpoint(self, learner: Learner, step: int) -> None:
        d = self.out / "checkpoints"
        d.mkdir(parents=True, exist_ok=True)
        (d / f"step-{step}.ckpt").write_text(learner.checkpoint_text())

    def curve_point(self, tuples: int, learner: Learner) -> None:
        cfg = self.cfg
        summary = evaluate(learner, cfg, self.domain, cfg.eval_episodes, (cfg.seed,))
        for name, s in summary.items():
            self.curves.append((tuples, learner.steps, name, s.episodes, s.mean_reward, s.stderr_reward,
                                s.near_miss_rate, s.avg_speed))
        self.checkpoint(learner, tuples)

    def plan(self) -> int:
        cfg = self.cfg
        learner = load_learner(cfg.checkpoint, cfg, self.domain) if cfg.checkpoint else None
        provider = learner.provider(learner.steps) if learner else UniformProvider(self.domain.model.action_count)
        actor = ActorConfig("exploit", search_config(cfg))
        for j in range(cfg.episodes):
            m = collect_episode(self.domain, actor, provider, j, mix64(cfg.seed * 1_000_003 + j)).metrics
            self.metrics.append(("planner", cfg.seed, m))
        return 0

    def closed_loop(self, variant: str) -> int:
        cfg = self.cfg
        learner = make_learner(cfg, self.domain, rl=variant == "rl")
        actors = [ActorConfig(mode, search_config(cfg), cfg.temperature) for mode in cfg.actor_modes()]
        loop = LoopConfig(variant, cfg.budget, cfg.updates_per_tuple, cfg.snapshot_every, cfg.eval_every,
                          True, cfg.seed)
        buffer = ReplayBuffer(cfg.buffer_capacity, seed=cfg.seed)
        result = run_closed_loop(self.domain, learner, actors, loop, buffer, self.single_thread,
                                 self.curve_point if cfg.eval_every else None)
        for m in result.episodes:
            self.metrics.append(("train", cfg.seed, m))
        self.checkpoint(learner, buffer.inserted)
        self.extra.update(tuples=buffer.inserted, learner_steps=learner.steps)
        return 0

    def open_loop(self) -> int:
        cfg = self.cfg
        if cfg.dataset:
            data = read_dataset(cfg.dataset)
        else:
            # Phase one: unguided planner actors fill a frozen dataset.
            collector = make_learner(cfg, self.domain)
            actors = [ActorConfig(mode, search_config(cfg), cfg.temperature) for mode in cfg.actor_modes()]
            loop = LoopConfig("ssl", cfg.budget, 0, cfg.snapshot_every, 0, False, cfg.seed)
            buffer = ReplayBuffer(max(cfg.budget, 1), seed=cfg.seed)
            result = run_closed_loop(self.domain, collector, actors, loop, buffer, self.single_thread)
            for m in result.episodes:
                self.metrics.append(("collect", cfg.seed, m))
            data = buffer.entries()
            write_dataset(self.out / "dataset.txt", data, self.domain.model.feature_size)
        learner = make_learner(cfg, self.domain)
        for epoch in range(cfg.epochs):
            open_ssl_pipeline(data, 1, learner, seed=mix64(cfg.seed + epoch))
            if cfg.eval_every:
                self.curve_point(len(data) * (epoch + 1), learner)
        self.checkpoint(learner, learner.steps)
        self.extra.update(tuples=len(data), learner_steps=learner.steps)
        return 0

    def eval(self) -> int:
        cfg = self.cfg
        learner = load_learner(cfg.checkpoint, cfg, self.domain)
        summary = evaluate(learner, cfg, self.domain, rows=self.metrics)
        summary["unguided"] = evaluate(None, cfg, self.domain, evaluators=("planner",),
                                       rows=None)["planner"]
        for name, s in summary.items():
            self.curves.append((0, learner.steps, name, s.episodes, s.mean_reward, s.stderr_reward,
                                s.near_miss_rate, s.avg_speed))
            print(f"{name}: {s.mean_reward:.3f} +- {s.stderr_reward:.3f} over {s.episodes} episodes")
        return 0

    def oracle_check(self) -> int:
        from .oracle import compare_with_planner
        from .toy import TigerModel

        cfg = self.cfg
        model = TigerModel()
        rows = []
        bad = 0
        for prior in ("uniform", "random"):
            for k in cfg.oracle_scenarios:
                for d in cfg.oracle_depths:
                    for s in range(cfg.oracle_seeds):
                        c = compare_with_planner(model, mix64(cfg.seed * 7919 + s), k, d, prior)
                        rows.append(c)
                        bad += not c.agrees
        with open(self.out / "oracle.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            names = list(asdict(rows[0]).keys()) + ["agrees"] if rows else ["agrees"]
            w.writerow(names)
            for c in rows:
                w.writerow([_cell(v) for v in asdict(c).values()] + [int(c.agrees)])
        self.extra.update(oracle_cases=len(rows), oracle_mismatches=bad)
        print(f"oracle check: {len(rows) - bad}/{len(rows)} agree")
        return 0 if bad == 0 else 1

    def execute(self) -> int:
        mode = self.cfg.mode
        if mode == "plan":
            return self.plan()
        if mode == "train-ssl":
            return self.closed_loop("ssl")
        if mode == "train-rl":
            return self.closed_loop("rl")
        if mode == "train-open-ssl":
            return self.open_loop()
        if mode == "eval":
            return self.eval()
        return self.oracle_check()


def run(cfg: RunConfig, out: str | Path, single_thread: bool = False) -> int:
    """Validate ``cfg``, run its mode and write the artifacts into ``out``."""
    cfg.validate()
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    r = Run(cfg, out, single_thread)
    try:
        status = r.execute()
    except BaseException:
        write_metrics(out / "metrics.csv", r.metrics)
        write_manifest(out / "manifest.txt", cfg, "partial", r.extra)
        raise
    write_metrics(out / "metrics.csv", r.metrics)
    if r.curves:
        write_curves(out / "curves.csv", r.curves)
    write_manifest(out / "manifest.txt", cfg, "complete" if status == 0 else "failed",
                   dict(r.extra, single_thread=str(single_thread).lower()))
    return status


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="closedloop", description=__doc__)
    p.add_argument("mode", choices=MODES)
    p.add_argument("--config", help="flat key = value file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one key (repeatable)")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--out", default="runs/latest", help="output directory")
    p.add_argument("--single-thread", action="store_true", help="interleave actors and learner on one thread")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.set)
        cfg.mode = args.mode
        if args.seed is not None:
            cfg.seed = args.seed
        cfg.validate()
    except ConfigError as exc:
        print(f"closedloop: error: {exc}", file=sys.stderr)
        return 2
    return run(cfg, args.out, args.single_thread)


if __name__ == "__main__":
    sys.exit(main())
