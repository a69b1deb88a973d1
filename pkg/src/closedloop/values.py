"""Factored value estimates and the mask/value decomposition."""

from __future__ import annotations

from dataclasses import dataclass

MASK_THRESHOLD = 0.5


@dataclass(frozen=True)
class FactoredValue:
    """Value split into safe-driving and collision factors.

    ``total`` is carried explicitly. Backups compute it with the same
    arithmetic as the search bounds, so it can differ from
    ``safe + collision`` by rounding.
    """

    safe: float = 0.0
    collision: float = 0.0
    total: float = 0.0

    @classmethod
    def of(cls, safe: float, collision: float) -> FactoredValue:
        return cls(safe, collision, safe + collision)

    def clipped(self, lo: float, hi: float) -> FactoredValue:
        """Clip the total into [lo, hi]; any shift goes to the safe factor."""
        t = min(max(self.total, lo), hi)
        if t == self.total:
            return self
        return FactoredValue(self.safe + (t - self.total), self.collision, t)

    def with_total(self, t: float) -> FactoredValue:
        return FactoredValue(self.safe + (t - self.total), self.collision, t)


ZERO = FactoredValue(0.0, 0.0, 0.0)


def recover_value(m_s: float, m_c: float, v_s: float, v_c: float) -> FactoredValue:
    """Gate each value factor by its binarized mask."""
    safe = v_s if m_s >= MASK_THRESHOLD else 0.0
    collision = v_c if m_c >= MASK_THRESHOLD else 0.0
    return FactoredValue.of(safe, collision)
