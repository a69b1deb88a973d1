"""Adam with deterministic state; non-finite gradients skip the step."""

from __future__ import annotations

import numpy as np

from .network import Network


class Adam:
    def __init__(self, net: Network, lr: float = 3e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(a) for name, a in net.named_arrays()}
        self.v = {name: np.zeros_like(a) for name, a in net.named_arrays()}
        self.skipped = 0

    def step(self, net: Network, grads: dict[str, np.ndarray]) -> bool:
        """Update ``net`` in place. Returns False (and counts a skip) on NaN/inf gradients."""
        if not all(np.all(np.isfinite(g)) for g in grads.values()):
            self.skipped += 1
            return False
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for name, param in net.named_arrays():
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            param -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return True


def optimizer_step(net: Network, grads, state: Adam) -> tuple[Network, bool]:
    """Functional form: returns an updated copy and whether the step was applied."""
    out = net.copy()
    applied = state.step(out, grads)
    return out, applied


def polyak_update(target: Network, online: Network, rate: float = 0.005):
    for (_, t), (_, o) in zip(target.named_arrays(), online.named_arrays()):
        t *= 1.0 - rate
        t += rate * o
