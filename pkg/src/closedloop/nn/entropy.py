"""Online temperature tuning toward a target policy entropy."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace


@dataclass(frozen=True)
class EntropyController:
    log_alpha: float = math.log(0.1)
    target_entropy: float = 0.0
    alpha_learning_rate: float = 1e-3

    @property
    def alpha(self) -> float:
        return math.exp(self.log_alpha)

    def update(self, batch_entropy: float) -> EntropyController:
        """Gradient step on log_alpha * (H_batch - H_target): alpha grows when entropy is too low."""
        if batch_entropy < 0:
            raise ValueError("entropy must be nonnegative")
        grad = batch_entropy - self.target_entropy
        return replace(self, log_alpha=self.log_alpha - self.alpha_learning_rate * grad)

    def with_target(self, target: float) -> EntropyController:
        return replace(self, target_entropy=target)


def update_alpha(controller: EntropyController, batch_entropy: float) -> EntropyController:
    return controller.update(batch_entropy)


def annealed_target(step: int, total_steps: int, action_count: int, start=0.98, end=0.65) -> float:
    """Linear anneal of the target from start*log|A| to end*log|A| over the first half of training."""
    h = math.log(action_count)
    half = max(total_steps / 2.0, 1.0)
    frac = min(max(step / half, 0.0), 1.0)
    return (start + (end - start) * frac) * h
