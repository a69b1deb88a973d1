"""Enumerable verification domains: Tiger and a two-state MDP."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .pomdp import EnumerableModel, FactoredReward
from .scenarios import uniforms

LISTEN, OPEN_LEFT, OPEN_RIGHT = 0, 1, 2
TIGER_LEFT, TIGER_RIGHT = 0, 1
HEAR_LEFT, HEAR_RIGHT = 0, 1


class TigerModel(EnumerableModel):
    """Classic Tiger problem with factored rewards.

    Listening and the correct door are booked to the safe factor, the wrong
    door to the collision factor. Opening a door resets the tiger uniformly
    and returns an uninformative observation.
    """

    action_count = 3
    feature_size = 12
    frame_count = 4

    def __init__(self, accuracy: float = 0.85, listen_reward: float = -1.0, treasure: float = 10.0,
                 penalty: float = -100.0, gamma: float = 0.95):
        self.accuracy = accuracy
        self.listen_reward = listen_reward
        self.treasure = treasure
        self.penalty = penalty
        self.gamma = gamma

    def states(self):
        return (TIGER_LEFT, TIGER_RIGHT)

    def observations(self):
        return (HEAR_LEFT, HEAR_RIGHT)

    def transition_prob(self, s, a, s_next):
        if a == LISTEN:
            return 1.0 if s_next == s else 0.0
        return 0.5

    def observation_prob(self, s_next, a, z):
        if a == LISTEN:
            return self.accuracy if z == s_next else 1.0 - self.accuracy
        return 0.5

    def reward(self, s, a):
        if a == LISTEN:
            return FactoredReward(self.listen_reward, 0.0)
        opened_tiger = (a == OPEN_LEFT) == (s == TIGER_LEFT)
        return FactoredReward(0.0, self.penalty) if opened_tiger else FactoredReward(self.treasure, 0.0)

    def generative_step(self, state, action, seed):
        u0, u1 = uniforms(seed, 2)
        r = self.reward(state, action)
        if action == LISTEN:
            z = state if u0 < self.accuracy else 1 - state
            return state, z, r
        s_next = TIGER_LEFT if u0 < 0.5 else TIGER_RIGHT
        z = HEAR_LEFT if u1 < 0.5 else HEAR_RIGHT
        return s_next, z, r

    def is_terminal(self, state):
        return False

    def default_rollout_policy(self, state):
        return LISTEN

    def upper_bound_heuristic(self, state):
        return self.treasure / (1.0 - self.gamma)

    def encode_history(self, states: Sequence, frames: Sequence) -> np.ndarray:
        """One-hot of the last four observations over {none, left, right}."""
        x = np.zeros(self.feature_size)
        recent = list(frames)[-self.frame_count:]
        pad = self.frame_count - len(recent)
        for i in range(self.frame_count):
            slot = 0 if i < pad else 1 + recent[i - pad]
            x[3 * i + slot] = 1.0
        return x


class TwoStateMDP(EnumerableModel):
    """Fully observed two-state, two-action MDP.

    Action 0 tends to stay, action 1 tends to switch; state 1 pays more.
    """

    action_count = 2
    feature_size = 2

    def __init__(self, stay: float = 0.9, switch: float = 0.8, gamma: float = 0.9):
        self.stay = stay
        self.switch = switch
        self.gamma = gamma
        self.rewards = np.array([[0.0, -0.5], [1.0, 0.5]])

    def states(self):
        return (0, 1)

    def observations(self):
        return (0, 1)

    def transition_prob(self, s, a, s_next):
        p_same = self.stay if a == 0 else 1.0 - self.switch
        return p_same if s_next == s else 1.0 - p_same

    def observation_prob(self, s_next, a, z):
        return 1.0 if z == s_next else 0.0

    def reward(self, s, a):
        return FactoredReward(float(self.rewards[s, a]), 0.0)

    def generative_step(self, state, action, seed):
        (u,) = uniforms(seed, 1)
        p_same = self.transition_prob(state, action, state)
        s_next = state if u < p_same else 1 - state
        return s_next, s_next, self.reward(state, action)

    def is_terminal(self, state):
        return False

    def default_rollout_policy(self, state):
        return 0

    def upper_bound_heuristic(self, state):
        return float(self.rewards.max()) / (1.0 - self.gamma)

    def encode_history(self, states, frames):
        x = np.zeros(2)
        for s in states:
            x[s] += 1.0
        return x / max(len(states), 1)

    def features(self, s: int) -> np.ndarray:
        return np.eye(2)[s]


def tabular(model: EnumerableModel) -> tuple[np.ndarray, np.ndarray]:
    """Arrays ``T[s, a, s']`` and ``R[s, a]`` (total reward) of an enumerable model."""
    S = list(model.states())
    A = model.action_count
    T = np.array([[[model.transition_prob(s, a, t) for t in S] for a in range(A)] for s in S])
    R = np.array([[model.reward(s, a).total for a in range(A)] for s in S])
    return T, R
