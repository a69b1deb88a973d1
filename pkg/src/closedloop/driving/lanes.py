"""Lane graph and the plain-text map format.

Map files are line oriented::

    closedloop-map 1
    lane_width 3.5
    lane NAME KIND x,y x,y ...     # KIND is road or walk, points in driving order
    adjacent LEFT RIGHT            # LEFT lies to the left of RIGHT
    successor FROM TO
    ego_lanes NAME NAME ...        # lanes the ego may use, left to right
    ego_start LANE ARC_LENGTH
    goal ARC_LENGTH                # along the ego lanes

Blank lines and ``#`` comments are ignored. Routes are every successor
chain from a lane without predecessors to a lane without successors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

HEADER = "closedloop-map 1"


class MapFormatError(ValueError):
    pass


class InvalidLane(ValueError):
    """A lane change toward a side that has no adjacent lane."""


@dataclass
class Polyline:
    points: np.ndarray  # (M, 2) vertices in driving order
    starts: np.ndarray  # (M-1,) arc length at each segment start
    length: float

    @classmethod
    def of(cls, vertices) -> Polyline:
        vertices = np.asarray(vertices, float)
        if vertices.ndim != 2 or len(vertices) < 2:
            raise MapFormatError("polyline needs at least two points")
        seg = np.linalg.norm(np.diff(vertices, axis=0), axis=1)
        if np.any(seg <= 0):
            raise MapFormatError("polyline has repeated consecutive points")
        cum = np.concatenate([[0.0], np.cumsum(seg)])
        return cls(vertices, cum[:-1], float(cum[-1]))


@dataclass
class Lane:
    name: str
    kind: str
    line: Polyline
    left: str | None = None
    right: str | None = None
    successors: list = field(default_factory=list)


@dataclass
class Route:
    lanes: tuple
    kind: str
    line: Polyline


class PathTable:
    """Padded segment arrays over several polylines for vectorized lookups.

    Shorter paths are padded with invalid segments that lookups skip, so
    any mix of path indices can share one batch.
    """

    def __init__(self, lines: list[Polyline]):
        m = max(len(l.points) - 1 for l in lines)
        r = len(lines)
        self.origin = np.zeros((r, m, 2))
        self.direction = np.zeros((r, m, 2))
        self.seg_length = np.zeros((r, m))
        self.seg_start = np.full((r, m), np.inf)
        self.valid = np.zeros((r, m), bool)
        self.lengths = np.array([l.length for l in lines])
        for i, l in enumerate(lines):
            k = len(l.points) - 1
            d = np.diff(l.points, axis=0)
            n = np.linalg.norm(d, axis=1)
            self.origin[i, :k] = l.points[:-1]
            self.direction[i, :k] = d / n[:, None]
            self.seg_length[i, :k] = n
            self.seg_start[i, :k] = l.starts
            self.valid[i, :k] = True
            self.origin[i, k:] = l.points[-2]
            self.direction[i, k:] = self.direction[i, k - 1]
        self.counts = self.valid.sum(axis=1)

    def _flat(self, idx, lead_shape):
        idx = np.asarray(idx, int)
        if idx.shape == tuple(lead_shape):
            return idx.ravel(), idx.shape
        shape = np.broadcast_shapes(idx.shape, lead_shape)
        return np.broadcast_to(idx, shape).ravel(), shape

    def locate(self, idx, s):
        """Point and unit tangent at arc length ``s`` (clamped to the path) on path ``idx``."""
        idx, shape = self._flat(idx, np.shape(s))
        s = np.asarray(s, float)
        s = np.clip(s.ravel() if s.shape == shape else np.broadcast_to(s, shape).ravel(), 0.0, self.lengths[idx])
        j = (s[:, None] >= self.seg_start[idx]).sum(-1) - 1
        j = np.clip(j, 0, self.counts[idx] - 1)
        o = self.origin[idx, j]
        t = self.direction[idx, j]
        p = o + (s - self.seg_start[idx, j])[:, None] * t
        return p.reshape(shape + (2,)), t.reshape(shape + (2,))

    def project(self, idx, pos):
        """Arc length and signed lateral offset (left positive) of ``pos`` on path ``idx``.

        Offsets beyond either end are measured along the end segments.
        """
        pos = np.asarray(pos, float)
        idx, shape = self._flat(idx, pos.shape[:-1])
        pos = (pos if pos.shape[:-1] == shape else np.broadcast_to(pos, shape + (2,))).reshape(-1, 2)
        o = self.origin[idx]
        t = self.direction[idx]
        rel = pos[:, None, :] - o
        along = (rel * t).sum(-1)
        cols = np.arange(o.shape[1])
        lo = np.where(cols == 0, -np.inf, 0.0)
        hi = np.where(cols == self.counts[idx][:, None] - 1, np.inf, self.seg_length[idx])
        a = np.clip(along, lo, hi)
        foot = o + a[..., None] * t
        d2 = np.where(self.valid[idx], ((pos[:, None, :] - foot) ** 2).sum(-1), np.inf)
        j = np.argmin(d2, axis=-1)
        rows = np.arange(len(idx))
        r = rel[rows, j]
        tt = t[rows, j]
        lateral = tt[:, 0] * r[:, 1] - tt[:, 1] * r[:, 0]
        s = self.seg_start[idx, j] + a[rows, j]
        return s.reshape(shape), lateral.reshape(shape)


class LaneGraph:
    def __init__(self, lanes: dict[str, Lane], lane_width: float, ego_lanes: list[str],
                 ego_start: tuple[str, float], goal: float):
        self.lanes = lanes
        self.lane_width = lane_width
        self.ego_lanes = list(ego_lanes)
        self.ego_start = ego_start
        self.goal = goal
        self._check()
        self.routes = self._enumerate_routes()
        self.route_table = PathTable([r.line for r in self.routes])
        self.ego_table = PathTable([lanes[n].line for n in self.ego_lanes])
        # Ego lane-change targets: index of the left/right neighbour or -1.
        pos = {n: i for i, n in enumerate(self.ego_lanes)}
        self.ego_left = np.array([pos.get(lanes[n].left, -1) for n in self.ego_lanes])
        self.ego_right = np.array([pos.get(lanes[n].right, -1) for n in self.ego_lanes])

    def _check(self):
        for lane in self.lanes.values():
            if lane.left is not None and self.lanes[lane.left].right != lane.name:
                raise MapFormatError(f"adjacency of {lane.name} and {lane.left} is not symmetric")
            if lane.right is not None and self.lanes[lane.right].left != lane.name:
                raise MapFormatError(f"adjacency of {lane.name} and {lane.right} is not symmetric")
        if not self.ego_lanes:
            raise MapFormatError("ego_lanes missing")
        for n in self.ego_lanes + [self.ego_start[0]]:
            if n not in self.lanes:
                raise MapFormatError(f"unknown ego lane {n}")

    def _enumerate_routes(self) -> list[Route]:
        has_pred = {s for lane in self.lanes.values() for s in lane.successors}
        routes = []

        def walk(chain):
            last = self.lanes[chain[-1]]
            if not last.successors:
                verts = [self.lanes[chain[0]].line.points]
                for name in chain[1:]:
                    v = self.lanes[name].line.points
                    verts.append(v[1:] if np.allclose(v[0], verts[-1][-1]) else v)
                line = Polyline.of(np.concatenate(verts))
                routes.append(Route(tuple(chain), self.lanes[chain[0]].kind, line))
                return
            for nxt in last.successors:
                walk(chain + [nxt])

        for name in self.lanes:
            if name not in has_pred:
                walk([name])
        return routes

    def route_index(self, lanes: tuple) -> int:
        for i, r in enumerate(self.routes):
            if r.lanes == tuple(lanes):
                return i
        raise KeyError(lanes)

    def feasible_routes(self, pos, heading: float, kind: str, tol: float = 1.0) -> list[tuple[int, float]]:
        """Routes of ``kind`` passing within ``tol`` of ``pos`` in the direction of ``heading``.

        Returns ``(route index, arc length)`` pairs.
        """
        out = []
        h = np.array([math.cos(heading), math.sin(heading)])
        for i, r in enumerate(self.routes):
            if r.kind != kind:
                continue
            s, lat = self.route_table.project(np.array(i), np.asarray(pos, float))
            s = float(s)
            if abs(float(lat)) > tol or s < -tol or s > r.line.length + tol:
                continue
            _, t = self.route_table.locate(np.array(i), np.array(s))
            if kind == "walk" or float(t @ h) >= 0.7:
                out.append((i, min(max(s, 0.0), r.line.length)))
        return out

    def transformed(self, theta: float, offset) -> LaneGraph:
        """Rigidly moved copy (rotation about the origin, then translation)."""
        c, s = math.cos(theta), math.sin(theta)
        rot = np.array([[c, -s], [s, c]])
        off = np.asarray(offset, float)
        lanes = {}
        for n, lane in self.lanes.items():
            lanes[n] = Lane(n, lane.kind, Polyline.of(lane.line.points @ rot.T + off), lane.left, lane.right,
                            list(lane.successors))
        return LaneGraph(lanes, self.lane_width, self.ego_lanes, self.ego_start, self.goal)


def parse_map(text: str, source: str = "<map>") -> LaneGraph:
    lines = text.splitlines()
    if not lines or lines[0].strip() != HEADER:
        raise MapFormatError(f"{source}:1: expected header {HEADER!r}")
    width = 3.5
    raw: dict[str, tuple[str, np.ndarray]] = {}
    adjacent, successors = [], []
    ego_lanes, ego_start, goal = [], None, None
    for no, line in enumerate(lines[1:], start=2):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, *args = line.split()
        try:
            if key == "lane_width":
                width = float(args[0])
            elif key == "lane":
                name, kind, *pts = args
                if kind not in ("road", "walk"):
                    raise ValueError(f"unknown lane kind {kind!r}")
                raw[name] = (kind, Polyline.of([[float(t) for t in p.split(",")] for p in pts]))
            elif key == "adjacent":
                adjacent.append((args[0], args[1]))
            elif key == "successor":
                successors.append((args[0], args[1]))
            elif key == "ego_lanes":
                ego_lanes = list(args)
            elif key == "ego_start":
                ego_start = (args[0], float(args[1]))
            elif key == "goal":
                goal = float(args[0])
            else:
                raise ValueError(f"unknown key {key!r}")
        except (ValueError, IndexError) as exc:
            raise MapFormatError(f"{source}:{no}: {exc}") from None
    if ego_start is None or goal is None:
        raise MapFormatError(f"{source}: ego_start and goal are required")
    lanes = {}
    for name, (kind, line) in raw.items():
        lanes[name] = Lane(name, kind, line)
    for left, right in adjacent:
        if left not in lanes or right not in lanes:
            raise MapFormatError(f"{source}: adjacency names unknown lane")
        lanes[left].right = right
        lanes[right].left = left
    for a, b in successors:
        if a not in lanes or b not in lanes:
            raise MapFormatError(f"{source}: successor names unknown lane")
        lanes[a].successors.append(b)
    return LaneGraph(lanes, width, ego_lanes, ego_start, goal)


def load_map(path: str | Path | None = None) -> LaneGraph:
    """Load a map file; ``None`` loads the bundled intersection."""
    if path is None:
        text = resources.files("closedloop.driving").joinpath("maps/intersection.map").read_text()
        return parse_map(text, "intersection.map")
    path = Path(path)
    return parse_map(path.read_text(), str(path))
