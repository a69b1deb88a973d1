"""Experience tuples, the replay buffer and the offline dataset format.

Dataset files hold one tuple per line after a header::

    # closedloop-experience 1 <feature-size>
    episode step action a_star done r_safe r_collision r_smooth v_safe v_collision v_total | x ... | x_next ...

Floats are written with ``repr``; ``x_next`` may be empty for terminal steps.
"""

from __future__ import annotations

import threading
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..pomdp import FactoredReward
from ..values import FactoredValue

HEADER = "# closedloop-experience 1"


class BufferTooSmall(ValueError):
    pass


class CorruptDataset(ValueError):
    pass


@dataclass(frozen=True)
class ExperienceTuple:
    episode: int
    step: int
    x: np.ndarray
    action: int
    reward: FactoredReward
    smooth_reward: float
    a_star: int
    v_star: FactoredValue
    done: bool
    x_next: np.ndarray | None = None


def _fmt(values) -> str:
    return " ".join(repr(float(v)) for v in values)


def format_tuple(t: ExperienceTuple) -> str:
    head = (f"{t.episode} {t.step} {t.action} {t.a_star} {int(t.done)} "
            + _fmt([t.reward.safe, t.reward.collision, t.smooth_reward, t.v_star.safe, t.v_star.collision,
                    t.v_star.total]))
    nxt = "" if t.x_next is None else _fmt(t.x_next)
    return f"{head} | {_fmt(t.x)} | {nxt}".rstrip()


def parse_tuple(line: str, feature_size: int | None = None) -> ExperienceTuple:
    parts = line.split("|")
    if len(parts) != 3:
        raise CorruptDataset("expected three '|'-separated sections")
    head = parts[0].split()
    if len(head) != 11:
        raise CorruptDataset(f"expected 11 header fields, got {len(head)}")
    try:
        ep, step, a, a_star, done = (int(v) for v in head[:5])
        rs, rc, smooth, vs, vc, vt = (float(v) for v in head[5:])
        x = np.array([float(v) for v in parts[1].split()])
        nxt = parts[2].split()
        x_next = np.array([float(v) for v in nxt]) if nxt else None
    except ValueError as exc:
        raise CorruptDataset(str(exc)) from None
    if feature_size is not None and (len(x) != feature_size or (x_next is not None and len(x_next) != feature_size)):
        raise CorruptDataset("feature length does not match the header")
    return ExperienceTuple(ep, step, x, a, FactoredReward(rs, rc), smooth, a_star, FactoredValue(vs, vc, vt),
                           bool(done), x_next)


def write_dataset(path: str | Path, tuples, feature_size: int) -> None:
    with open(path, "w") as fh:
        fh.write(f"{HEADER} {feature_size}\n")
        for t in tuples:
            fh.write(format_tuple(t) + "\n")


def read_dataset(path: str | Path) -> list[ExperienceTuple]:
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines or not lines[0].startswith(HEADER):
        raise CorruptDataset(f"{path}:1: missing header")
    try:
        size = int(lines[0][len(HEADER):].split()[0])
    except (ValueError, IndexError):
        raise CorruptDataset(f"{path}:1: missing feature size") from None
    out = []
    for no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            out.append(parse_tuple(line, size))
        except CorruptDataset as exc:
            raise CorruptDataset(f"{path}:{no}: {exc}") from None
    return out


class ReplayBuffer:
    """Fixed-capacity FIFO of experience tuples with uniform batch sampling.

    Insertions and sampling hold one lock, so several actor threads may feed
    a learner thread.
    """

    def __init__(self, capacity: int = 100_000, seed: int = 0):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._items: deque = deque(maxlen=capacity)
        self._lock = threading.Lock()
        self.rng = np.random.default_rng(seed)
        self.inserted = 0

    def __len__(self):
        return len(self._items)

    def insert(self, t: ExperienceTuple) -> None:
        with self._lock:
            self._items.append(t)
            self.inserted += 1

    def extend(self, tuples) -> None:
        for t in tuples:
            self.insert(t)

    def sample_indices(self, batch_size: int) -> np.ndarray:
        with self._lock:
            return self._indices(batch_size)

    def _indices(self, batch_size):
        if batch_size < 1 or len(self._items) < batch_size:
            raise BufferTooSmall(f"need {batch_size} tuples, have {len(self._items)}")
        return self.rng.choice(len(self._items), size=batch_size, replace=False)

    def sample(self, batch_size: int) -> list[ExperienceTuple]:
        with self._lock:
            idx = self._indices(batch_size)
            return [self._items[i] for i in idx]

    def entries(self) -> list[ExperienceTuple]:
        with self._lock:
            return list(self._items)

    def dump(self, path, feature_size: int) -> None:
        write_dataset(path, self.entries(), feature_size)
