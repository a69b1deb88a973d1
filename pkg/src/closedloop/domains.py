"""Environment, model and belief-tracker bundles for each runnable domain."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

from .pomdp import Belief, DomainModel, StepOutcome, exact_bayes_update
from .scenarios import mix64, uniforms
from .toy import TigerModel


class TigerEnvironment:
    """Tiger world with a fixed episode length and no initial observation."""

    speed = 0.0

    def __init__(self, model: TigerModel, seed: int = 0, max_steps: int = 20):
        self.model = model
        self.seed = seed
        self.max_steps = max_steps

    def reset(self):
        self._stream = mix64(self.seed ^ 0x7193)
        (u,) = uniforms(self._stream, 1)
        self.state = 0 if u < 0.5 else 1
        self.steps = 0
        return None

    def step(self, action: int) -> StepOutcome:
        self._stream = mix64(self._stream + 1)
        self.state, z, r = self.model.generative_step(self.state, action, self._stream)
        self.steps += 1
        return StepOutcome(z, r, r.total, self.steps >= self.max_steps)


class ExactTracker:
    """Exact Bayes filter for enumerable models."""

    def __init__(self, model):
        self.model = model
        self.depletions = 0

    def initial(self, obs, seed: int) -> Belief:
        return Belief.uniform(list(self.model.states()))

    def update(self, belief: Belief, action: int, obs, seed: int) -> Belief:
        return exact_bayes_update(belief, action, obs, self.model)


@dataclass
class Domain:
    name: str
    model: DomainModel
    make_env: Callable[[int], Any]
    tracker: Any
    options: dict = field(default_factory=dict)


def make_domain(name: str, **options) -> Domain:
    """Build a domain by name: ``tiger`` or ``driving``.

    Driving options: ``exo_count``, ``particle_count``, ``max_steps``,
    ``map_path``. Tiger options: ``max_steps``.
    """
    if name == "tiger":
        model = TigerModel()
        steps = int(options.get("max_steps", 20))
        return Domain(name, model, lambda seed: TigerEnvironment(model, seed, steps), ExactTracker(model), options)
    if name == "driving":
        from .driving import DrivingBeliefTracker, DrivingConfig, DrivingEnvironment, DrivingModel, load_map

        exo = int(options.get("exo_count", 6))
        graph = load_map(options.get("map_path"))
        model = DrivingModel(graph, DrivingConfig(exo_count=exo))
        steps = int(options.get("max_steps", 60))
        tracker = DrivingBeliefTracker(model, int(options.get("particle_count", 100)))
        return Domain(name, model, lambda seed: DrivingEnvironment(model, seed, steps, exo), tracker, options)
    raise ValueError(f"unknown domain {name!r}")


__all__ = ["Domain", "ExactTracker", "TigerEnvironment", "make_domain"]
