"""Driving episodes: scene generation, the true-world simulator, belief tracking and logs."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..pomdp import Belief, FactoredReward, StepOutcome, particle_bayes_update
from ..scenarios import mix64
from .geometry import overlaps
from .model import (
    CAR, EGO_COLLIDED, EGO_FIELDS, EGO_REACHED, EGO_V, EXO_FIELDS, EXO_KIND, EXO_ROUTE, PED,
    DrivingModel, DrivingState,
)

# (kind, route start lanes, arc-length range, speed range); arc lengths of
# the lead car are relative to the ego.
TEMPLATES = (
    (CAR, ("E2",), (12.0, 20.0), (1.5, 2.5)),
    (CAR, ("N_in",), (30.0, 46.0), (3.0, 5.0)),
    (PED, ("X_north",), (0.0, 5.0), (0.8, 1.4)),
    (CAR, ("S_in",), (30.0, 46.0), (3.0, 5.0)),
    (CAR, ("W1",), (45.0, 65.0), (3.0, 5.0)),
    (PED, ("X_south",), (0.0, 5.0), (0.8, 1.4)),
    (CAR, ("E1",), (40.0, 60.0), (3.0, 5.0)),
    (PED, ("X_north",), (8.0, 14.0), (0.8, 1.4)),
)
EGO_START_SPEED = 4.0


def generate_scene(model: DrivingModel, seed: int, exo_count: int | None = None) -> DrivingState:
    """Random start state with ``exo_count`` agents drawn from the slot templates.

    Routes starting at a branching lane pick one continuation uniformly;
    attention is Bernoulli(p_attentive). Overlapping draws are redrawn.
    """
    g = model.graph
    n = model.config.exo_count if exo_count is None else exo_count
    rng = np.random.default_rng(seed)
    lane_idx = g.ego_lanes.index(g.ego_start[0])
    s0 = g.ego_start[1]
    (p,), (t,) = g.ego_table.locate(np.array([lane_idx]), np.array([s0]))
    ego = np.array([p[0], p[1], EGO_START_SPEED, math.atan2(t[1], t[0]), lane_idx, 0.0, 0.0, 0.0])
    for _ in range(1000):
        rows = []
        for k in range(n):
            kind, start, s_range, v_range = TEMPLATES[k % len(TEMPLATES)]
            options = [i for i, r in enumerate(g.routes) if r.lanes[0] == start[0]]
            r = options[int(rng.integers(len(options)))]
            s = rng.uniform(*s_range) + (s0 if k % len(TEMPLATES) == 0 else 0.0)
            s = min(s, g.routes[r].line.length)
            (q,), (tan,) = g.route_table.locate(np.array([r]), np.array([s]))
            rows.append([q[0], q[1], rng.uniform(*v_range), math.atan2(tan[1], tan[0]), s, kind, r,
                         float(rng.random() < model.config.p_attentive)])
        state = DrivingState(np.concatenate([ego, np.array(rows).ravel()]))
        if _clear(model, state):
            return state
    raise RuntimeError("could not place agents without overlap")


def _clear(model, state):
    data = state.data[None]
    pos, heading, _, half = model._agents(data)
    m = pos.shape[1]
    for i in range(m):
        for j in range(i + 1, m):
            grown = half[0, i] + 1.0
            if overlaps(pos[0, i], heading[0, i], grown, pos[0, j], heading[0, j], half[0, j]):
                return False
    return True


@dataclass
class DrivingEnvironment:
    """The simulated world. Its stochasticity comes from a private seeded stream."""

    model: DrivingModel
    seed: int = 0
    max_steps: int = 60
    exo_count: int | None = None
    state: DrivingState | None = None
    steps: int = 0
    log: list = field(default_factory=list)

    def reset(self) -> tuple:
        self.state = generate_scene(self.model, self.seed, self.exo_count)
        self.steps = 0
        self.log = []
        self._stream = mix64(self.seed ^ 0x5DEECE66D)
        return self.model.observe(self.state)

    def step(self, action: int) -> StepOutcome:
        m = self.model
        prev = self.state
        self._stream = mix64(self._stream + 1)
        out, obs, safe, col, invalid = m.step_batch(prev.data[None], [action], [self._stream])
        self.state = DrivingState(out[0])
        self.steps += 1
        reward = FactoredReward(float(safe[0]), float(col[0]))
        ttc = m.ttc(self.state)
        near = ttc < m.config.near_miss_ttc
        done = m.is_terminal(self.state) or self.steps >= self.max_steps
        smooth = m.smooth_reward(prev, action, self.state)
        e = self.state.data
        self.log.append((self.steps, e[0], e[1], e[2], e[3], action, reward.safe, reward.collision, smooth,
                         ttc, int(near)))
        return StepOutcome(tuple(obs[0].tolist()), reward, smooth, done, ttc, near, bool(invalid[0]))

    @property
    def collided(self) -> bool:
        return bool(self.state.data[EGO_COLLIDED] > 0.5)

    @property
    def reached(self) -> bool:
        return bool(self.state.data[EGO_REACHED] > 0.5)

    @property
    def speed(self) -> float:
        return float(self.state.data[EGO_V])


TRAJECTORY_COLUMNS = ("step", "x", "y", "speed", "heading", "action", "reward_safe", "reward_collision",
                      "smooth_reward", "ttc", "near_miss")


def write_trajectory(path: str | Path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRAJECTORY_COLUMNS)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


class DrivingBeliefTracker:
    """Particle belief over exo intentions and attentions.

    Physical fields are registered on each observation; hidden fields are
    sampled from the route prior at start and again after depletion.
    """

    def __init__(self, model: DrivingModel, particle_count: int = 100):
        self.model = model
        self.particle_count = particle_count
        self.depletions = 0
        self.unroutable = 0

    def _template(self, obs) -> DrivingState:
        m = self.model
        ego, exo, kinds = m.decode(obs)
        q = np.asarray(obs)
        head = np.array([ego[0], ego[1], ego[2], ego[3], q[4], q[5], q[6], 0.0])
        rows = np.zeros((len(exo), EXO_FIELDS))
        rows[:, :4] = exo
        rows[:, EXO_KIND] = kinds
        return DrivingState(np.concatenate([head, rows.ravel()]))

    def _sample(self, template, seed) -> list:
        out = []
        for i in range(self.particle_count):
            s, flagged = self.model.sample_hidden(template, mix64(seed + i + 1))
            self.unroutable += flagged
            out.append(s)
        return out

    def initial(self, obs, seed: int) -> Belief:
        return Belief.uniform(self._sample(self._template(obs), seed))

    def update(self, belief: Belief, action: int, obs, seed: int) -> Belief:
        b = particle_bayes_update(belief, action, obs, self.model, self.particle_count, seed)
        if b.depleted:
            self.depletions += 1
            return Belief(tuple(self._sample(self._template(obs), seed)), b.weights, depleted=True)
        return b


def route_marginals(belief: Belief, exo: int) -> dict:
    """Posterior probability of each route index for one exo-agent."""
    out: dict = {}
    for s, w in zip(belief.states, belief.weights):
        r = int(s.data[EGO_FIELDS + exo * EXO_FIELDS + EXO_ROUTE])
        out[r] = out.get(r, 0.0) + float(w)
    return out


__all__ = [
    "DrivingEnvironment", "DrivingBeliefTracker", "generate_scene", "write_trajectory",
    "route_marginals", "TRAJECTORY_COLUMNS",
]
