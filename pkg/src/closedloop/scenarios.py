"""Determinized scenarios: start states plus counter-based random streams.

The stream value for depth ``i`` is ``mix64(stream_seed + i * GOLDEN)``, so
any depth can be read without replaying earlier ones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .pomdp import Belief, DomainModel, State

MASK64 = 0xFFFFFFFFFFFFFFFF
GOLDEN = 0x9E3779B97F4A7C15
_INV53 = 1.0 / (1 << 53)


class TerminalState(ValueError):
    pass


def mix64(z: int) -> int:
    """SplitMix64 finalizer."""
    z = int(z) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def stream_value(stream_seed: int, depth: int) -> int:
    return mix64(stream_seed + depth * GOLDEN)


def uniforms(seed: int, n: int) -> list[float]:
    """``n`` uniform variates in [0, 1) derived from one 64-bit value."""
    return [(mix64(seed + (k + 1) * GOLDEN) >> 11) * _INV53 for k in range(n)]


def uniform_array(seeds: np.ndarray, n: int) -> np.ndarray:
    """Vectorized :func:`uniforms`: shape ``(len(seeds), n)``, same values."""
    seeds = np.asarray(seeds, dtype=np.uint64)
    k = np.arange(1, n + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = seeds[:, None] + k[None, :] * np.uint64(GOLDEN)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        z = z ^ (z >> np.uint64(31))
    return (z >> np.uint64(11)).astype(np.float64) * _INV53


def normal_array(seeds: np.ndarray, n: int) -> np.ndarray:
    """Standard normals via Box-Muller; ``n`` must be even."""
    u = uniform_array(seeds, n)
    u1 = 1.0 - u[:, 0::2]  # in (0, 1]
    u2 = u[:, 1::2]
    r = np.sqrt(-2.0 * np.log(u1))
    out = np.empty_like(u)
    out[:, 0::2] = r * np.cos(2.0 * math.pi * u2)
    out[:, 1::2] = r * np.sin(2.0 * math.pi * u2)
    return out


@dataclass(frozen=True)
class Scenario:
    id: int
    initial_state: State
    stream_seed: int

    def phi(self, depth: int) -> int:
        return stream_value(self.stream_seed, depth)


@dataclass(frozen=True)
class ScenarioSet:
    scenarios: tuple

    def __post_init__(self):
        if not self.scenarios:
            raise ValueError("a scenario set needs K >= 1")
        ids = [sc.id for sc in self.scenarios]
        if len(set(ids)) != len(ids):
            raise ValueError("scenario ids must be distinct")

    @property
    def count(self) -> int:
        return len(self.scenarios)

    def __len__(self):
        return len(self.scenarios)

    def __getitem__(self, i) -> Scenario:
        return self.scenarios[i]

    def __iter__(self):
        return iter(self.scenarios)


def sample_scenarios(belief: Belief, k: int, master_seed: int) -> ScenarioSet:
    if k < 1:
        raise ValueError("K must be >= 1")
    rng = np.random.default_rng(master_seed)
    picks = rng.choice(len(belief), size=k, p=belief.weights)
    base = mix64(master_seed)
    return ScenarioSet(
        tuple(
            Scenario(i, belief.states[int(j)], mix64(base + (i + 1) * GOLDEN))
            for i, j in enumerate(picks)
        )
    )


def step_scenario(scenario: Scenario, depth: int, state: State, action: int, model: DomainModel):
    """One determinized simulation step; ``depth`` is the depth being entered (>= 1)."""
    if depth < 1:
        raise ValueError("depth must be >= 1")
    if model.is_terminal(state):
        raise TerminalState("cannot step a terminal state")
    return model.generative_step(state, action, scenario.phi(depth))


def step_scenarios(
    scenarios: Sequence[Scenario], depth: int, states: Sequence[State], actions: Sequence[int], model: DomainModel
):
    """Batched :func:`step_scenario` over non-terminal states."""
    seeds = [sc.phi(depth) for sc in scenarios]
    return model.step_many(list(states), list(actions), seeds)
