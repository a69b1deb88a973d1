"""Policy and value priors handed to the tree search."""

from __future__ import annotations

import numpy as np

from .nn.network import Network, forward_policy, forward_value
from .values import FactoredValue, recover_value


class HeuristicProvider:
    """Read-only prior source. ``value_prior`` returning None is the sentinel
    that makes the search initialize a node at the midpoint of its bounds."""

    action_count: int
    version: int = 0
    needs_features = True

    def policy_prior(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def value_prior(self, x: np.ndarray) -> FactoredValue | None:
        raise NotImplementedError

    def value_priors(self, xs: list[np.ndarray]) -> list[FactoredValue | None]:
        return [self.value_prior(x) for x in xs]


class UniformProvider(HeuristicProvider):
    needs_features = False

    def __init__(self, action_count: int, version: int = 0):
        if action_count < 1:
            raise ValueError("action_count must be >= 1")
        self.action_count = action_count
        self.version = version
        self._prior = np.full(action_count, 1.0 / action_count)
        self._prior.setflags(write=False)

    def policy_prior(self, x):
        return self._prior

    def value_prior(self, x):
        return None

    def value_priors(self, xs):
        return [None] * len(xs)


def uniform_provider(action_count: int) -> UniformProvider:
    return UniformProvider(action_count)


class NetworkProvider(HeuristicProvider):
    """Wraps frozen copies of the policy and value networks.

    Value outputs live on a normalized scale and are multiplied by
    ``value_scale`` on the way out. Non-finite outputs fall back to the
    uniform prior / midpoint sentinel and are counted in ``fallbacks``.
    """

    def __init__(self, policy: Network | None, value: Network | None, action_count: int,
                 value_scale: float = 100.0, version: int = 0):
        self.policy = policy.frozen() if policy is not None else None
        self.value = value.frozen() if value is not None else None
        self.action_count = action_count
        self.value_scale = value_scale
        self.version = version
        self.fallbacks = 0
        self._uniform = np.full(action_count, 1.0 / action_count)

    def policy_prior(self, x):
        if self.policy is None:
            return self._uniform
        p = forward_policy(self.policy, x)
        if not np.all(np.isfinite(p)):
            self.fallbacks += 1
            return self._uniform
        return p

    def _combine(self, m_s, m_c, v_s, v_c):
        if not all(np.isfinite(t) for t in (m_s, m_c, v_s, v_c)):
            self.fallbacks += 1
            return None
        v = recover_value(m_s, m_c, v_s * self.value_scale, v_c * self.value_scale)
        return v

    def value_prior(self, x):
        if self.value is None:
            return None
        return self._combine(*(float(t) for t in forward_value(self.value, x)))

    def value_priors(self, xs):
        if self.value is None or not xs:
            return [None] * len(xs)
        m_s, m_c, v_s, v_c = forward_value(self.value, np.stack(xs))
        return [self._combine(float(a), float(b), float(c), float(d)) for a, b, c, d in zip(m_s, m_c, v_s, v_c)]


def network_provider(policy: Network | None, value: Network | None, action_count: int,
                     value_scale: float = 100.0, version: int = 0) -> NetworkProvider:
    for net in (policy, value):
        if net is not None and not net.is_finite():
            raise ValueError("network parameters must be finite")
    return NetworkProvider(policy, value, action_count, value_scale, version)


class FixedPolicyProvider(UniformProvider):
    """Same policy prior at every node, no value prior."""

    def __init__(self, prior, version: int = 0):
        p = np.asarray(prior, float)
        if p.ndim != 1 or np.any(p < 0) or not np.isclose(p.sum(), 1.0):
            raise ValueError("prior must be a probability vector")
        super().__init__(len(p), version)
        self._prior = p.copy()
        self._prior.setflags(write=False)
