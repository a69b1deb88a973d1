"""Desk-scale crowd-driving POMDP.

A state is one flat float vector: eight ego fields followed by eight
fields per exo-agent (see ``EGO_*`` and ``EXO_*``). Keeping it flat lets a
whole batch of scenarios advance with a handful of numpy operations; the
batched step is elementwise across rows, so stepping a batch equals
stepping each row alone bit for bit.

Actions are ``3 * lane + accel`` with lane in (Left, Keep, Right) and
accel in (Acc, Maintain, Dec).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..pomdp import DomainModel, FactoredReward
from ..scenarios import normal_array, uniforms
from .geometry import first_contact, overlaps, pairwise_contact
from .lanes import LaneGraph, load_map

EGO_X, EGO_Y, EGO_V, EGO_H, EGO_LANE, EGO_COLLIDED, EGO_REACHED, EGO_STEP = range(8)
EGO_FIELDS = 8
EXO_X, EXO_Y, EXO_V, EXO_H, EXO_S, EXO_KIND, EXO_ROUTE, EXO_ATTENTIVE = range(8)
EXO_FIELDS = 8
CAR, PED = 0, 1

LEFT, KEEP, RIGHT = 0, 1, 2
ACC, MAINTAIN, DEC = 0, 1, 2
ACTION_COUNT = 9
ACTION_NAMES = tuple(f"{l}-{a}" for l in ("Left", "Keep", "Right") for a in ("Acc", "Maintain", "Dec"))


def action_index(lane: int, accel: int) -> int:
    return 3 * lane + accel


def wrap_angle(a):
    return (a + np.pi) % (2.0 * np.pi) - np.pi


@dataclass(frozen=True)
class DrivingConfig:
    dt: float = 1.0 / 3.0
    noise_sigma: float = 0.05
    ego_accel: float = 3.0
    ego_max_speed: float = 6.0
    car_cruise: float = 5.0
    ped_cruise: float = 1.3
    car_max_speed: float = 6.0
    ped_max_speed: float = 2.0
    car_brake: float = 3.0
    ped_brake: float = 1.5
    car_speedup: float = 1.5
    ped_speedup: float = 1.0
    avoid_horizon: float = 3.0
    wheelbase: float = 2.7
    max_steer: float = 0.6
    lookahead_min: float = 4.0
    lookahead_time: float = 1.0
    car_half: tuple = (2.25, 0.9)
    ped_half: tuple = (0.3, 0.3)
    collision_scale: float = 1000.0
    lane_change_penalty: float = 4.0
    decel_penalty: float = 0.1
    near_miss_ttc: float = 0.33
    min_ttc: float = 0.1
    pos_res: float = 0.5
    speed_res: float = 0.25
    heading_res: float = 0.1
    p_attentive: float = 0.5
    kernel_sigma: float = 0.3
    exo_count: int = 6
    feature_exos: int = 8
    sensing_radius: float = 50.0
    rollout_brake_ttc: float = 1.5
    rollout_hold_ttc: float = 3.0


class DrivingState:
    """Immutable flat state vector; equality is exact array equality."""

    __slots__ = ("data",)

    def __init__(self, data):
        data = np.array(data, dtype=float)
        data.setflags(write=False)
        self.data = data

    @property
    def exo_count(self) -> int:
        return (len(self.data) - EGO_FIELDS) // EXO_FIELDS

    @property
    def ego(self) -> np.ndarray:
        return self.data[:EGO_FIELDS]

    @property
    def exos(self) -> np.ndarray:
        return self.data[EGO_FIELDS:].reshape(-1, EXO_FIELDS)

    def __eq__(self, other):
        return isinstance(other, DrivingState) and np.array_equal(self.data, other.data)

    def __hash__(self):
        return hash(self.data.tobytes())

    def __repr__(self):
        e = self.ego
        return f"DrivingState(ego=({e[0]:.2f}, {e[1]:.2f}, v={e[2]:.2f}), exos={self.exo_count})"


def make_state(ego, exos) -> DrivingState:
    ego = np.asarray(ego, float)
    exos = np.asarray(exos, float).reshape(-1, EXO_FIELDS)
    return DrivingState(np.concatenate([ego, exos.ravel()]))


class DrivingModel(DomainModel):
    action_count = ACTION_COUNT

    def __init__(self, graph: LaneGraph | None = None, config: DrivingConfig | None = None):
        self.graph = graph if graph is not None else load_map()
        self.config = config if config is not None else DrivingConfig()
        c = self.config
        self.halves = np.array([c.car_half, c.ped_half])
        self.cruise = np.array([c.car_cruise, c.ped_cruise])
        self.max_speed = np.array([c.car_max_speed, c.ped_max_speed])
        self.brake = np.array([c.car_brake, c.ped_brake])
        self.speedup = np.array([c.car_speedup, c.ped_speedup])
        self.accels = np.array([c.ego_accel, 0.0, -c.ego_accel])
        self.max_curvature = math.tan(c.max_steer) / c.wheelbase
        self.exo_width = 6 * 4 + 2
        self.feature_size = c.feature_exos * self.exo_width + 4 + 4

    # ------------------------------------------------------------ helpers

    def _agents(self, data):
        """Positions, headings, velocities and half extents of ego + exos, shape (B, N, ...)."""
        b = data.shape[0]
        ego = data[:, :EGO_FIELDS]
        exo = data[:, EGO_FIELDS:].reshape(b, -1, EXO_FIELDS)
        pos = np.concatenate([ego[:, None, EGO_X:EGO_Y + 1], exo[:, :, EXO_X:EXO_Y + 1]], axis=1)
        heading = np.concatenate([ego[:, None, EGO_H], exo[:, :, EXO_H]], axis=1)
        speed = np.concatenate([ego[:, None, EGO_V], exo[:, :, EXO_V]], axis=1)
        vel = speed[..., None] * np.stack([np.cos(heading), np.sin(heading)], -1)
        kinds = np.concatenate([np.zeros((b, 1), int), exo[:, :, EXO_KIND].astype(int)], axis=1)
        return pos, heading, vel, self.halves[kinds]

    def ego_ttc_batch(self, data: np.ndarray) -> np.ndarray:
        """Constant-velocity first-contact time between the ego and the nearest exo, per row."""
        pos, heading, vel, half = self._agents(data)
        if pos.shape[1] == 1:
            return np.full(data.shape[0], np.inf)
        t = first_contact(pos[:, :1], heading[:, :1], vel[:, :1], half[:, :1],
                          pos[:, 1:], heading[:, 1:], vel[:, 1:], half[:, 1:])
        return t.min(axis=1)

    def ttc(self, state: DrivingState) -> float:
        return float(self.ego_ttc_batch(state.data[None])[0])

    def near_miss(self, state: DrivingState) -> bool:
        return self.ttc(state) < self.config.near_miss_ttc

    def ego_progress(self, data: np.ndarray) -> np.ndarray:
        lane = data[:, EGO_LANE].astype(int)
        s, _ = self.graph.ego_table.project(lane, data[:, EGO_X:EGO_Y + 1])
        return s

    # ------------------------------------------------------------ dynamics

    def step_batch(self, data: np.ndarray, actions, seeds):
        """Advance ``B`` states. Returns ``(next_data, obs_ints, safe, collision, invalid_lane)``.

        ``actions=None`` applies the default rollout policy, reusing the
        contact times the exo reactions already need.
        """
        c = self.config
        g = self.graph
        data = np.asarray(data, float)
        b = data.shape[0]
        n = (data.shape[1] - EGO_FIELDS) // EXO_FIELDS
        out = data.copy()
        ego = data[:, :EGO_FIELDS]
        exo = data[:, EGO_FIELDS:].reshape(b, n, EXO_FIELDS)
        new_exo = out[:, EGO_FIELDS:].reshape(b, n, EXO_FIELDS)

        noise = normal_array(np.asarray(seeds, dtype=np.uint64), 2 * (n + 1)).reshape(b, n + 1, 2) * c.noise_sigma
        norm = np.linalg.norm(noise, axis=-1, keepdims=True)
        cap = 3.0 * c.noise_sigma
        noise = np.where(norm > cap, noise * (cap / np.maximum(norm, 1e-300)), noise)

        # Exo reactions use the pre-step scene.
        pos, heading, vel, half = self._agents(data)
        if n:
            full = pairwise_contact(pos, heading, vel, half)
            contact = full[:, 1:, :]  # (B, n, N)
            fwd = np.stack([np.cos(heading[:, 1:]), np.sin(heading[:, 1:])], -1)
            rel = pos[:, None, :, :] - pos[:, 1:, None, :]
            ahead = (rel * fwd[:, :, None, :]).sum(-1) > 0.0
            t_min = np.where(ahead, contact, np.inf).min(axis=2)
            kind = exo[:, :, EXO_KIND].astype(int)
            v = exo[:, :, EXO_V]
            cruise = self.cruise[kind]
            braking = np.maximum(v - self.brake[kind] * (1.0 - t_min / c.avoid_horizon) * c.dt, 0.0)
            cruising = np.where(v < cruise, np.minimum(v + self.speedup[kind] * c.dt, cruise), v)
            v_att = np.where(t_min < c.avoid_horizon, braking, cruising)
            v_new = np.where(exo[:, :, EXO_ATTENTIVE] > 0.5, v_att, v)
            v_new = np.minimum(v_new, self.max_speed[kind])
            route = exo[:, :, EXO_ROUTE].astype(int)
            length = g.route_table.lengths[route]
            s = exo[:, :, EXO_S]
            v_new = np.where(s >= length, 0.0, v_new)
            step = v_new * c.dt
            s_new = np.minimum(s + step, length)
            target, tangent = g.route_table.locate(route, s_new)
            d = target - exo[:, :, EXO_X:EXO_Y + 1]
            dist = np.linalg.norm(d, axis=-1)
            scale = np.where(dist > step, step / np.maximum(dist, 1e-300), 1.0)
            new_exo[:, :, EXO_X:EXO_Y + 1] = exo[:, :, EXO_X:EXO_Y + 1] + d * scale[..., None] + noise[:, 1:]
            new_exo[:, :, EXO_V] = v_new
            new_exo[:, :, EXO_S] = s_new
            new_exo[:, :, EXO_H] = np.arctan2(tangent[..., 1], tangent[..., 0])

        if actions is None:
            ttc = full[:, 0, 1:].min(axis=1) if n else np.full(b, np.inf)
            actions = self._policy_from_ttc(ttc)
        actions = np.asarray(actions, int)

        # Ego: commanded speed, then pure pursuit toward the target lane.
        lane_cmd = actions // 3
        acc_cmd = actions % 3
        lane = ego[:, EGO_LANE].astype(int)
        target_lane = np.where(lane_cmd == LEFT, g.ego_left[lane], np.where(lane_cmd == RIGHT, g.ego_right[lane], lane))
        invalid = target_lane < 0
        target_lane = np.where(invalid, lane, target_lane)
        v2 = np.clip(ego[:, EGO_V] + self.accels[acc_cmd] * c.dt, 0.0, c.ego_max_speed)
        p = ego[:, EGO_X:EGO_Y + 1]
        s_e, _ = g.ego_table.project(target_lane, p)
        look_dist = np.maximum(c.lookahead_min, c.lookahead_time * v2)
        look, _ = g.ego_table.locate(target_lane, s_e + look_dist)
        to = look - p
        alpha = wrap_angle(np.arctan2(to[:, 1], to[:, 0]) - ego[:, EGO_H])
        kappa = np.clip(2.0 * np.sin(alpha) / np.linalg.norm(to, axis=1), -self.max_curvature, self.max_curvature)
        h2 = wrap_angle(ego[:, EGO_H] + v2 * kappa * c.dt)
        out[:, EGO_X] = p[:, 0] + v2 * c.dt * np.cos(h2) + noise[:, 0, 0]
        out[:, EGO_Y] = p[:, 1] + v2 * c.dt * np.sin(h2) + noise[:, 0, 1]
        out[:, EGO_V] = v2
        out[:, EGO_H] = h2
        out[:, EGO_LANE] = target_lane
        out[:, EGO_STEP] = ego[:, EGO_STEP] + 1.0

        collided = np.zeros(b, bool)
        if n:
            new_kind = new_exo[:, :, EXO_KIND].astype(int)
            hit = overlaps(out[:, None, EGO_X:EGO_Y + 1], out[:, None, EGO_H], self.halves[0],
                           new_exo[:, :, EXO_X:EXO_Y + 1], new_exo[:, :, EXO_H], self.halves[new_kind])
            collided = hit.any(axis=1)
        was = ego[:, EGO_COLLIDED] > 0.5
        out[:, EGO_COLLIDED] = collided | was
        out[:, EGO_REACHED] = (self.ego_progress(out) >= g.goal) | (ego[:, EGO_REACHED] > 0.5)

        safe = (4.0 * (v2 - c.ego_max_speed) / c.ego_max_speed
                - c.decel_penalty * (acc_cmd == DEC) - c.lane_change_penalty * (lane_cmd != KEEP))
        collision = np.where(collided & ~was, -c.collision_scale * (v2**2 + 0.5), 0.0)
        return out, self.quantize(out), safe, collision, invalid

    def quantize(self, data: np.ndarray) -> np.ndarray:
        c = self.config
        b = data.shape[0]
        ego = data[:, :EGO_FIELDS]
        exo = data[:, EGO_FIELDS:].reshape(b, -1, EXO_FIELDS)
        head = np.stack([
            np.rint(ego[:, EGO_X] / c.pos_res), np.rint(ego[:, EGO_Y] / c.pos_res),
            np.rint(ego[:, EGO_V] / c.speed_res), np.rint(wrap_angle(ego[:, EGO_H]) / c.heading_res),
            ego[:, EGO_LANE], ego[:, EGO_COLLIDED], ego[:, EGO_REACHED],
        ], axis=1)
        tail = np.stack([
            np.rint(exo[:, :, EXO_X] / c.pos_res), np.rint(exo[:, :, EXO_Y] / c.pos_res),
            np.rint(exo[:, :, EXO_V] / c.speed_res), np.rint(wrap_angle(exo[:, :, EXO_H]) / c.heading_res),
            exo[:, :, EXO_KIND],
        ], axis=2).reshape(b, -1)
        return np.concatenate([head, tail], axis=1).astype(np.int64)

    def observe(self, state: DrivingState) -> tuple:
        return tuple(self.quantize(state.data[None])[0].tolist())

    def decode(self, obs) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Observation -> (ego (x, y, v, h), exo (n, 4) with the same fields, exo kinds)."""
        c = self.config
        q = np.asarray(obs, float)
        res = np.array([c.pos_res, c.pos_res, c.speed_res, c.heading_res])
        ego = q[:4] * res
        tail = q[7:].reshape(-1, 5)
        return ego, tail[:, :4] * res, tail[:, 4].astype(int)

    def step_many(self, states, actions, seeds):
        if not states:
            return []
        data = np.stack([s.data for s in states])
        out, obs, safe, col, _ = self.step_batch(data, actions, seeds)
        obs_list = obs.tolist()
        return [
            (DrivingState(out[i]), tuple(obs_list[i]), FactoredReward(float(safe[i]), float(col[i])))
            for i in range(len(states))
        ]

    def generative_step(self, state, action, seed):
        return self.step_many([state], [action], [seed])[0]

    def is_terminal(self, state) -> bool:
        e = state.data
        return bool(e[EGO_COLLIDED] > 0.5 or e[EGO_REACHED] > 0.5)

    # ------------------------------------------------------------ rewards

    def reward(self, state, action, next_state) -> FactoredReward:
        """Factored reward of a realized transition (speed taken after the step)."""
        c = self.config
        v = next_state.data[EGO_V]
        lane_cmd, acc_cmd = divmod(int(action), 3)
        safe = 4.0 * (v - c.ego_max_speed) / c.ego_max_speed - c.decel_penalty * (acc_cmd == DEC) \
            - c.lane_change_penalty * (lane_cmd != KEEP)
        collided = next_state.data[EGO_COLLIDED] > 0.5 and not state.data[EGO_COLLIDED] > 0.5
        collision = -c.collision_scale * (v**2 + 0.5) if collided else 0.0
        return FactoredReward(float(safe), float(collision))

    def smooth_reward(self, state, action, next_state) -> float:
        """Shaped reward for the RL learner: speed bonus, lane-change cost, proximity penalty."""
        c = self.config
        v = float(next_state.data[EGO_V])
        t_c = max(self.ttc(next_state), c.min_ttc)
        lane_cmd = int(action) // 3
        return 0.05 * v / c.ego_max_speed - 0.025 * (lane_cmd != KEEP) - 1.0 / (9.0 * t_c**2)

    def default_rollout_policy(self, state) -> int:
        return self.rollout_actions([state])[0]

    def rollout_actions(self, states) -> list[int]:
        """Keep lane; brake, hold or accelerate by time-to-collision."""
        return self._policy_from_ttc(self.ego_ttc_batch(np.stack([s.data for s in states]))).tolist()

    def _policy_from_ttc(self, t):
        c = self.config
        acc = np.where(t < c.rollout_brake_ttc, DEC, np.where(t < c.rollout_hold_ttc, MAINTAIN, ACC))
        return 3 * KEEP + acc

    def rollout_batch(self, states, seed_rows, gamma: float):
        """Array form of the default-policy rollout used by the search.

        ``seed_rows[i][k]`` seeds step ``k`` of rollout ``i``. Returns the
        per-rollout discounted ``(safe, collision, total)`` with the same
        arithmetic as stepping the states one at a time.
        """
        n = len(states)
        if n == 0:
            return []
        data = np.stack([s.data for s in states])
        steps = len(seed_rows[0]) if n else 0
        seeds = np.array(seed_rows, dtype=np.uint64).reshape(n, steps)
        safe = np.zeros(n)
        col = np.zeros(n)
        tot = np.zeros(n)
        active = ~((data[:, EGO_COLLIDED] > 0.5) | (data[:, EGO_REACHED] > 0.5))
        disc = 1.0
        for k in range(steps):
            idx = np.flatnonzero(active)
            if not len(idx):
                break
            out, _, rs, rc, _ = self.step_batch(data[idx], None, seeds[idx, k])
            safe[idx] += disc * rs
            col[idx] += disc * rc
            tot[idx] += disc * (rs + rc)
            data[idx] = out
            active[idx] = ~((out[:, EGO_COLLIDED] > 0.5) | (out[:, EGO_REACHED] > 0.5))
            disc *= gamma
        return list(zip(safe.tolist(), col.tolist(), tot.tolist()))

    def upper_bound_heuristic(self, state) -> float:
        return 0.0

    # ------------------------------------------------------------ belief hooks

    def observation_likelihood(self, next_state, action, predicted, observation) -> float:
        """Gaussian kernel on decoded exo positions and speeds.

        A 0/1 match on the full quantized scene almost never survives a
        step with a few agents, so particles are weighted by closeness.
        """
        sig = self.config.kernel_sigma
        _, pa, _ = self.decode(predicted)
        _, pb, _ = self.decode(observation)
        d2 = ((pa[:, :3] - pb[:, :3]) ** 2).sum()
        return math.exp(-0.5 * d2 / sig**2)

    def condition(self, state, observation):
        """Replace the physical fields by the decoded observation, keep the hidden ones."""
        ego, exo, _ = self.decode(observation)
        data = state.data.copy()
        data[EGO_X:EGO_H + 1] = ego
        e = data[EGO_FIELDS:].reshape(-1, EXO_FIELDS)
        e[:, EXO_X:EXO_H + 1] = exo
        return DrivingState(data)

    def sample_hidden(self, state: DrivingState, seed: int) -> tuple[DrivingState, bool]:
        """Draw route and attention for every exo given its pose.

        Routes are uniform over those consistent with the pose; attention is
        Bernoulli(p_attentive). When no route fits, the nearest route of the
        right kind is used and the second return value is True.
        """
        g = self.graph
        data = state.data.copy()
        exo = data[EGO_FIELDS:].reshape(-1, EXO_FIELDS)
        u = uniforms(seed, 2 * len(exo))
        flagged = False
        for i, row in enumerate(exo):
            kind = "walk" if int(row[EXO_KIND]) == PED else "road"
            options = g.feasible_routes(row[EXO_X:EXO_Y + 1], float(row[EXO_H]), kind)
            if not options:
                flagged = True
                options = [self._nearest_route(row[EXO_X:EXO_Y + 1], kind)]
            r, s = options[min(int(u[2 * i] * len(options)), len(options) - 1)]
            row[EXO_ROUTE] = r
            row[EXO_S] = s
            row[EXO_ATTENTIVE] = 1.0 if u[2 * i + 1] < self.config.p_attentive else 0.0
        return DrivingState(data), flagged

    def _nearest_route(self, pos, kind):
        best = None
        for i, r in enumerate(self.graph.routes):
            if r.kind != kind:
                continue
            s, lat = self.graph.route_table.project(np.array(i), np.asarray(pos, float))
            if best is None or abs(float(lat)) < best[0]:
                best = (abs(float(lat)), i, min(max(float(s), 0.0), r.line.length))
        return best[1], best[2]

    # ------------------------------------------------------------ features

    def encode_history(self, states: Sequence, frames: Sequence) -> np.ndarray:
        frames = list(frames)[-4:]
        if not frames:
            frames = [self.observe(states[0])]
        snaps = [self.decode(f) for f in frames]
        lane = int(states[0].data[EGO_LANE])
        return self.scene_features([(e, x) for e, x, _ in snaps], snaps[-1][2], lane)

    def scene_features(self, snapshots, kinds, lane: int) -> np.ndarray:
        """Ego-centric features from up to four ``(ego, exos)`` snapshots, oldest first.

        ``ego`` is ``(x, y, v, h)`` and ``exos`` is ``(n, 4)`` with the same
        fields. Everything is expressed in the latest ego frame, so a rigid
        motion of scene and map leaves the features unchanged.
        """
        c = self.config
        snaps = list(snapshots)[-4:]
        while len(snaps) < 4:
            snaps.insert(0, snaps[0])
        ego_now, exo_now = snaps[-1]
        ex, ey, _, eh = ego_now
        ch, sh = math.cos(eh), math.sin(eh)
        rot = np.array([[ch, sh], [-sh, ch]])  # world -> ego frame

        x = np.zeros(self.feature_size)
        n = len(exo_now)
        if n:
            d = np.hypot(exo_now[:, 0] - ex, exo_now[:, 1] - ey)
            order = np.argsort(d, kind="stable")
            order = order[d[order] <= c.sensing_radius][: c.feature_exos]
            k = len(order)
            hist = np.stack([exo[order] for _, exo in snaps])  # (4, k, 4)
            rel = (hist[..., :2] - np.array([ex, ey])) @ rot.T
            v, h = hist[..., 2], hist[..., 3]
            vel = np.stack([v * np.cos(h), v * np.sin(h)], -1) @ rot.T
            dh = h - eh
            per = np.stack([rel[..., 0] / 20.0, rel[..., 1] / 20.0, vel[..., 0] / 6.0, vel[..., 1] / 6.0,
                            np.cos(dh), np.sin(dh)], -1)  # (4, k, 6)
            block = x[: c.feature_exos * self.exo_width].reshape(c.feature_exos, self.exo_width)
            block[:k, :24] = per.transpose(1, 0, 2).reshape(k, 24)
            block[:k, 24] = 1.0
            block[:k, 25] = (np.asarray(kinds)[order] == PED)
        tail = c.feature_exos * self.exo_width
        for f, (ego, _) in enumerate(snaps):
            x[tail + f] = ego[2] / c.ego_max_speed
        g = self.graph
        s, lat = g.ego_table.project(np.array(lane), np.array([ex, ey], float))
        x[tail + 4] = float(lat) / g.lane_width
        x[tail + 5] = float(g.ego_left[lane] >= 0)
        x[tail + 6] = float(g.ego_right[lane] >= 0)
        x[tail + 7] = (g.goal - float(s)) / 100.0
        return x
