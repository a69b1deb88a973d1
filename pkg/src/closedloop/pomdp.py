"""Domain-agnostic POMDP pieces: model interface, beliefs, Bayes filters."""

from __future__ import annotations

import abc
from dataclasses import dataclass, field
from typing import Any, Hashable, Sequence

import numpy as np

State = Any
Observation = Hashable

# Below this the normalizer is treated as zero.
ETA_FLOOR = 1e-300


class ZeroLikelihood(ValueError):
    """The received observation is impossible under the belief."""


class EmptyBelief(ValueError):
    pass


@dataclass(frozen=True)
class FactoredReward:
    """Reward split into a smooth safe-driving part and a collision part."""

    safe: float = 0.0
    collision: float = 0.0

    @property
    def total(self) -> float:
        return self.safe + self.collision

    def __add__(self, other: FactoredReward) -> FactoredReward:
        return FactoredReward(self.safe + other.safe, self.collision + other.collision)

    def scaled(self, k: float) -> FactoredReward:
        return FactoredReward(k * self.safe, k * self.collision)


@dataclass
class StepOutcome:
    """What an environment reports after executing one action."""

    observation: Observation
    reward: FactoredReward
    smooth_reward: float
    done: bool
    ttc: float = float("inf")
    near_miss: bool = False
    invalid_lane: bool = False


@dataclass(frozen=True)
class DiscountSpec:
    gamma: float = 0.95
    max_horizon: int = 10
    search_depth: int = 3

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        if self.search_depth < 1:
            raise ValueError("search_depth must be >= 1")
        if self.search_depth > self.max_horizon:
            raise ValueError("search_depth must not exceed max_horizon")


class DomainModel(abc.ABC):
    """Generative POMDP model.

    ``generative_step`` must be a pure function of ``(state, action, seed)``:
    equal arguments give bit-identical outputs. ``seed`` is one unsigned
    64-bit integer; domains expand it into as many variates as they need
    (see :func:`closedloop.scenarios.uniforms`).
    """

    action_count: int
    feature_size: int

    @abc.abstractmethod
    def generative_step(
        self, state: State, action: int, seed: int
    ) -> tuple[State, Observation, FactoredReward]:
        ...

    @abc.abstractmethod
    def is_terminal(self, state: State) -> bool:
        ...

    @abc.abstractmethod
    def default_rollout_policy(self, state: State) -> int:
        ...

    @abc.abstractmethod
    def upper_bound_heuristic(self, state: State) -> float:
        ...

    @abc.abstractmethod
    def encode_history(self, states: Sequence[State], frames: Sequence[Observation]) -> np.ndarray:
        """Features for a belief given its recent observation frames (oldest first)."""

    # Batched variants. Domains with vectorized dynamics override these; the
    # results must equal the one-at-a-time calls bit for bit.
    def step_many(self, states, actions, seeds):
        return [self.generative_step(s, a, z) for s, a, z in zip(states, actions, seeds)]

    def rollout_actions(self, states) -> list[int]:
        return [self.default_rollout_policy(s) for s in states]

    def observation_likelihood(
        self, next_state: State, action: int, predicted: Observation, observation: Observation
    ) -> float:
        """Particle reweighting kernel: 1 when the simulated observation matches."""
        return 1.0 if predicted == observation else 0.0

    def condition(self, state: State, observation: Observation) -> State:
        """Hook to register a particle on the received observation (identity by default)."""
        return state

    def immediate_reward(self, state: State, action: int, seed: int = 0) -> FactoredReward:
        return self.generative_step(state, action, seed)[2]


class EnumerableModel(DomainModel):
    """Toy domains that expose full S, Z, T, O and R."""

    @abc.abstractmethod
    def states(self) -> Sequence[State]:
        ...

    @abc.abstractmethod
    def observations(self) -> Sequence[Observation]:
        ...

    @abc.abstractmethod
    def transition_prob(self, s: State, a: int, s_next: State) -> float:
        ...

    @abc.abstractmethod
    def observation_prob(self, s_next: State, a: int, z: Observation) -> float:
        ...

    @abc.abstractmethod
    def reward(self, s: State, a: int) -> FactoredReward:
        ...

    def immediate_reward(self, state, action, seed=0):
        return self.reward(state, action)


@dataclass(frozen=True)
class Belief:
    """Weighted particle list. Exact beliefs carry one particle per state."""

    states: tuple
    weights: np.ndarray
    depleted: bool = field(default=False, compare=False)

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        if len(self.states) != len(w):
            raise ValueError("states and weights differ in length")
        if len(w) and (np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12):
            raise ValueError("belief weights must be nonnegative and sum to 1")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "states", tuple(self.states))

    @classmethod
    def from_weights(cls, states: Sequence[State], weights, depleted: bool = False) -> Belief:
        w = np.asarray(weights, dtype=float)
        total = w.sum()
        if not total > ETA_FLOOR:
            raise ZeroLikelihood("weights sum to zero")
        return cls(tuple(states), w / total, depleted)

    @classmethod
    def uniform(cls, states: Sequence[State]) -> Belief:
        n = len(states)
        if n == 0:
            raise EmptyBelief("no states")
        return cls(tuple(states), np.full(n, 1.0 / n))

    def __len__(self):
        return len(self.states)

    def marginal(self) -> dict:
        """Collapse duplicate (hashable) states into one probability each."""
        out: dict = {}
        for s, w in zip(self.states, self.weights):
            out[s] = out.get(s, 0.0) + float(w)
        return out

    def mode(self) -> State:
        return self.states[int(np.argmax(self.weights))]


def exact_bayes_update(belief: Belief, action: int, observation, model: EnumerableModel) -> Belief:
    """b'(s') = eta * O(s', a, z) * sum_s T(s, a, s') b(s) over the full state space."""
    support = list(model.states())
    posterior = np.zeros(len(support))
    for j, s_next in enumerate(support):
        o = model.observation_prob(s_next, action, observation)
        if o == 0.0:
            continue
        pred = 0.0
        for s, w in zip(belief.states, belief.weights):
            if w:
                pred += model.transition_prob(s, action, s_next) * w
        posterior[j] = o * pred
    total = posterior.sum()
    if not total > ETA_FLOOR:
        raise ZeroLikelihood(f"observation {observation!r} has zero probability after action {action}")
    return Belief(tuple(support), posterior / total)


def particle_bayes_update(
    belief: Belief,
    action: int,
    observation,
    model: DomainModel,
    particle_count: int,
    seed: int,
) -> Belief:
    """Sampled Bayes filter: propagate, reweight by the model kernel, resample.

    When every particle gets zero weight the propagated set is kept with
    uniform weights and the result is flagged ``depleted``.
    """
    if len(belief) == 0:
        raise EmptyBelief("cannot update an empty belief")
    rng = np.random.default_rng(seed)
    ancestors = rng.choice(len(belief), size=particle_count, p=belief.weights)
    step_seeds = rng.integers(0, 2**63, size=particle_count, dtype=np.uint64)
    parents = [belief.states[i] for i in ancestors]
    live = [i for i, s in enumerate(parents) if not model.is_terminal(s)]
    outcomes = model.step_many(
        [parents[i] for i in live], [action] * len(live), [int(step_seeds[i]) for i in live]
    )
    propagated = list(parents)
    weights = np.zeros(particle_count)
    for i, (s_next, z, _) in zip(live, outcomes):
        propagated[i] = s_next
        weights[i] = model.observation_likelihood(s_next, action, z, observation)
    depleted = not weights.sum() > ETA_FLOOR
    if depleted:
        weights = np.ones(particle_count)
    weights = weights / weights.sum()
    picks = rng.choice(particle_count, size=particle_count, p=weights)
    states = tuple(model.condition(propagated[i], observation) for i in picks)
    return Belief(states, np.full(particle_count, 1.0 / particle_count), depleted)


def expected_immediate_reward(belief: Belief, action: int, model: DomainModel, seed: int = 0) -> FactoredReward:
    """rho(b, a): belief-weighted average of the factored reward, factor by factor."""
    safe = 0.0
    collision = 0.0
    for s, w in zip(belief.states, belief.weights):
        if w == 0.0:
            continue
        r = model.immediate_reward(s, action, seed)
        safe += w * r.safe
        collision += w * r.collision
    return FactoredReward(safe, collision)
