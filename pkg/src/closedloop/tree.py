"""Anytime guided search over a determinized sparse belief tree.

Each node holds the subset of scenarios that reach it together with their
current states. Nodes and action edges carry an upper bound ``u``, a lower
bound ``l`` and a factored learned-value estimate ``v``. Bounds and value
are stored together in one immutable :class:`Estimate` so concurrent
readers always see a consistent triple.

Observation probabilities are scenario-count fractions; nothing inside the
search evaluates the model's O or T densities.
"""

from __future__ import annotations

import math
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .heuristics import HeuristicProvider
from .pomdp import Belief, DomainModel, EmptyBelief, FactoredReward
from .scenarios import Scenario, ScenarioSet, sample_scenarios
from .values import ZERO, FactoredValue


class BoundInversion(RuntimeError):
    """Upper-bound heuristic fell below the rollout lower bound."""


class DepthLimit(ValueError):
    """Expansion requested at or beyond the maximum depth."""


class _TerminalKey:
    """Observation key grouping scenarios that were already terminal."""

    def __repr__(self):
        return "TERMINAL"


TERMINAL = _TerminalKey()


def _obs_order(key):
    return (0,) if key is TERMINAL else (1, key)


@dataclass(frozen=True)
class SearchConfig:
    scenario_count: int = 100
    max_depth: int = 3
    horizon: int = 10  # rollouts run until this absolute depth
    gamma: float = 0.95
    exploration: float = 1.0
    gap_tolerance: float = 1e-3
    max_trials: int | None = None
    time_budget: float | None = None
    optimistic_trial_period: int = 10
    value_clipping: bool = True
    workers: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.scenario_count < 1:
            raise ValueError("scenario_count must be >= 1")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.horizon < self.max_depth:
            raise ValueError("horizon must be >= max_depth")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if self.exploration < 0 or self.gap_tolerance < 0:
            raise ValueError("exploration and gap_tolerance must be nonnegative")
        if self.optimistic_trial_period < 1:
            raise ValueError("optimistic_trial_period must be >= 1")
        if self.max_trials is not None and self.max_trials < 0:
            raise ValueError("max_trials must be >= 0")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


class Estimate(NamedTuple):
    u: float
    l: float
    v: FactoredValue


class ActionEdge:
    __slots__ = ("action", "rho", "children", "est", "count")

    def __init__(self, action: int, rho: FactoredReward, children: list[BeliefNode]):
        self.action = action
        self.rho = rho
        self.children = children  # sorted by observation key
        self.est: Estimate | None = None
        self.count = 0

    u = property(lambda self: self.est.u)
    l = property(lambda self: self.est.l)
    v = property(lambda self: self.est.v)


class BeliefNode:
    __slots__ = (
        "depth", "ids", "states", "weight", "observation", "frames", "parent", "action",
        "est", "count", "children", "terminal", "frozen", "features", "prior", "lock",
    )

    def __init__(self, depth, ids, states, weight, observation, frames, parent=None, action=None):
        self.depth = depth
        self.ids = tuple(ids)
        self.states = tuple(states)
        self.weight = weight
        self.observation = observation
        self.frames = frames
        self.parent = parent
        self.action = action
        self.est: Estimate | None = None
        self.count = 0
        self.children: list[ActionEdge] | None = None
        self.terminal = False
        self.frozen = False
        self.features = None
        self.prior = None
        self.lock = threading.RLock()

    u = property(lambda self: self.est.u)
    l = property(lambda self: self.est.l)
    v = property(lambda self: self.est.v)

    @property
    def gap(self) -> float:
        est = self.est
        return est.u - est.l

    @property
    def is_leaf(self) -> bool:
        return self.children is None


@dataclass
class SearchResult:
    action: int
    value: FactoredValue
    gap: float
    trials: int
    nodes_expanded: int
    max_depth: int
    action_values: tuple
    gap_history: list = field(default_factory=list)
    flags: tuple = ()
    root: BeliefNode | None = field(default=None, repr=False)


class _Context:
    """Everything a trial needs, plus counters."""

    def __init__(self, model, config, heuristics, scenarios):
        self.model = model
        self.config = config
        self.heuristics = heuristics
        self.scenarios = {sc.id: sc for sc in scenarios}
        self.k = len(scenarios)
        self.use_features = getattr(heuristics, "needs_features", True)
        self.nodes_expanded = 0
        self.max_depth = 0
        self.stats_lock = threading.Lock()


# ---------------------------------------------------------------- rollouts


def rollout_returns(model: DomainModel, scenarios: Sequence[Scenario], states: Sequence, depth: int,
                    horizon: int, gamma: float) -> list[tuple[float, float, float]]:
    """Discounted (safe, collision, total) returns of the default policy.

    Scenario ``i`` starts from ``states[i]`` at tree depth ``depth`` and is
    stepped with its own stream values for depths ``depth+1 .. horizon``.
    Shared by the planner's bound initialization and the exhaustive oracle.
    """
    if hasattr(model, "rollout_batch") and depth < horizon:
        rows = [[sc.phi(t) for t in range(depth + 1, horizon + 1)] for sc in scenarios[:len(states)]]
        return model.rollout_batch(states, rows, gamma)
    return stepwise_rollout_returns(model, scenarios, states, depth, horizon, gamma)


def stepwise_rollout_returns(model, scenarios, states, depth, horizon, gamma):
    """Reference rollout through ``rollout_actions`` and ``step_many``."""
    n = len(states)
    safe = [0.0] * n
    col = [0.0] * n
    tot = [0.0] * n
    cur = list(states)
    active = [i for i in range(n) if not model.is_terminal(cur[i])]
    disc = 1.0
    for t in range(depth + 1, horizon + 1):
        if not active:
            break
        acts = model.rollout_actions([cur[i] for i in active])
        outs = model.step_many([cur[i] for i in active], acts, [scenarios[i].phi(t) for i in active])
        still = []
        for i, (s_next, _z, r) in zip(active, outs):
            safe[i] += disc * r.safe
            col[i] += disc * r.collision
            tot[i] += disc * r.total
            cur[i] = s_next
            if not model.is_terminal(s_next):
                still.append(i)
        active = still
        disc *= gamma
    return list(zip(safe, col, tot))


def average_returns(returns) -> FactoredValue:
    n = len(returns)
    s = c = t = 0.0
    for rs, rc, rt in returns:
        s += rs
        c += rc
        t += rt
    return FactoredValue(s / n, c / n, t / n)


def rollout_value(model, scenarios, states, depth, horizon, gamma) -> FactoredValue:
    return average_returns(rollout_returns(model, scenarios, states, depth, horizon, gamma))


# ---------------------------------------------------------------- initialization


def _initialize(nodes: list[BeliefNode], ctx: _Context):
    cfg = ctx.config
    model = ctx.model
    for node in nodes:
        node.terminal = all(model.is_terminal(s) for s in node.states)
    live = [n for n in nodes if not n.terminal]
    # One batched rollout over every (node, scenario) pair; per-pair results
    # do not depend on the batching.
    flat_sc, flat_st, spans = [], [], []
    for node in live:
        start = len(flat_st)
        flat_sc.extend(ctx.scenarios[i] for i in node.ids)
        flat_st.extend(node.states)
        spans.append((start, len(flat_st)))
    depth = nodes[0].depth if nodes else 0
    rets = rollout_returns(model, flat_sc, flat_st, depth, cfg.horizon, cfg.gamma) if live else []
    need_prior = []
    for node, (a, b) in zip(live, spans):
        l0 = average_returns(rets[a:b])
        if node.depth >= cfg.max_depth:
            node.frozen = True
            node.est = Estimate(l0.total, l0.total, l0)
            continue
        ub = 0.0
        for s in node.states:
            if not model.is_terminal(s):
                ub += model.upper_bound_heuristic(s)
        u0 = ub / len(node.states)
        if u0 < l0.total:
            raise BoundInversion(f"upper bound {u0} below rollout lower bound {l0.total} at depth {node.depth}")
        node.est = Estimate(u0, l0.total, l0)
        need_prior.append(node)
    for node in nodes:
        if node.terminal:
            node.frozen = True
            node.est = Estimate(0.0, 0.0, ZERO)
    if need_prior:
        if ctx.use_features:
            xs = [_features(n, ctx) for n in need_prior]
            priors = ctx.heuristics.value_priors(xs)
        else:
            priors = [None] * len(need_prior)
        for node, prior in zip(need_prior, priors):
            u0, l0, rollout = node.est
            if prior is None:
                v0 = rollout.with_total(0.5 * (l0 + u0)).clipped(l0, u0)
            elif cfg.value_clipping:
                v0 = prior.clipped(l0, u0)
            else:
                v0 = prior
            node.est = Estimate(u0, l0, v0)


def init_bounds(node: BeliefNode, heuristics: HeuristicProvider, model: DomainModel, config: SearchConfig,
                scenarios: ScenarioSet):
    """Rollout lower bound, heuristic upper bound and clipped value prior for a new node."""
    ctx = _Context(model, config, heuristics, scenarios)
    _initialize([node], ctx)


def _features(node: BeliefNode, ctx: _Context):
    if node.features is None:
        node.features = ctx.model.encode_history(node.states, node.frames)
    return node.features


# ---------------------------------------------------------------- expansion


def _expand(node: BeliefNode, ctx: _Context):
    model = ctx.model
    n = len(node.ids)
    depth = node.depth + 1
    live = [(sid, s) for sid, s in zip(node.ids, node.states) if not model.is_terminal(s)]
    dead = [(sid, s) for sid, s in zip(node.ids, node.states) if model.is_terminal(s)]
    actions = range(model.action_count)
    states = [s for _ in actions for _, s in live]
    acts = [a for a in actions for _ in live]
    seeds = [ctx.scenarios[sid].phi(depth) for _ in actions for sid, _ in live]
    outs = model.step_many(states, acts, seeds) if live else []
    edges = []
    new_nodes = []
    m = len(live)
    for a in actions:
        groups: dict = {}
        rs = rc = 0.0
        for (sid, _), (s_next, z, r) in zip(live, outs[a * m:(a + 1) * m]):
            groups.setdefault(z, ([], []))
            groups[z][0].append(sid)
            groups[z][1].append(s_next)
            rs += r.safe
            rc += r.collision
        if dead:
            groups[TERMINAL] = ([sid for sid, _ in dead], [s for _, s in dead])
        children = []
        for z in sorted(groups, key=_obs_order):
            ids, sts = groups[z]
            frames = node.frames if z is TERMINAL else (node.frames + (z,))[-4:]
            child = BeliefNode(depth, ids, sts, len(ids) / ctx.k, z, frames, node, a)
            children.append(child)
        new_nodes.extend(children)
        edges.append(ActionEdge(a, FactoredReward(rs / n, rc / n), children))
    _initialize(new_nodes, ctx)
    for e in edges:
        _refresh_edge(e, n, ctx.config.gamma)
    node.children = edges
    with ctx.stats_lock:
        ctx.nodes_expanded += 1
        ctx.max_depth = max(ctx.max_depth, depth)


def expand_leaf(node: BeliefNode, model: DomainModel, scenarios: ScenarioSet, heuristics: HeuristicProvider,
                config: SearchConfig):
    """Branch on every action and on the observations the node's scenarios produce."""
    if node.depth >= config.max_depth:
        raise DepthLimit("node is at the maximum depth")
    _expand(node, _Context(model, config, heuristics, scenarios))


# ---------------------------------------------------------------- backup


def _refresh_edge(edge: ActionEdge, n: int, gamma: float):
    su = sl = vs = vc = vt = 0.0
    for child in edge.children:
        f = len(child.ids) / n
        est = child.est
        su += f * est.u
        sl += f * est.l
        vs += f * est.v.safe
        vc += f * est.v.collision
        vt += f * est.v.total
    rho = edge.rho
    rt = rho.total
    edge.est = Estimate(rt + gamma * su, rt + gamma * sl,
                        FactoredValue(rho.safe + gamma * vs, rho.collision + gamma * vc, rt + gamma * vt))


def best_edge(node: BeliefNode) -> ActionEdge:
    """Edge with the highest learned value; ties go to the lowest action."""
    best = None
    for e in node.children:
        if best is None or e.est.v.total > best.est.v.total:
            best = e
    return best


def _refresh_node(node: BeliefNode, clipping: bool):
    edges = node.children
    mu = max(e.est.u for e in edges)
    ml = max(e.est.l for e in edges)
    old = node.est
    # Bounds only tighten; this keeps the gap monotone even when the
    # heuristics are not perfectly consistent.
    u = min(old.u, mu)
    l = min(u, max(old.l, ml))
    v = best_edge(node).est.v
    if clipping:
        v = v.clipped(l, u)
    node.est = Estimate(u, l, v)


def backup_path(path: Sequence[BeliefNode], gamma: float, clipping: bool = True):
    """Bellman backup from the end of ``path`` to its first node, counting visits."""
    for i in range(len(path) - 1, -1, -1):
        node = path[i]
        with node.lock:
            node.count += 1
            if i + 1 < len(path):
                child = path[i + 1]
                edge = node.children[child.action]
                edge.count += 1
                _refresh_edge(edge, len(node.ids), gamma)
                _refresh_node(node, clipping)


# ---------------------------------------------------------------- selection


def select_action_optimistic(node: BeliefNode) -> int:
    best, best_u = 0, -math.inf
    for e in node.children:
        if e.est.u > best_u:
            best, best_u = e.action, e.est.u
    return best


def select_action_guided(node: BeliefNode, prior, c: float) -> int:
    """argmax_a u(b,a) + c * prior(a) * sqrt(N(b) / (N(b,a) + 1))."""
    nb = node.count
    best, best_s = 0, -math.inf
    for e in node.children:
        s = e.est.u + c * prior[e.action] * math.sqrt(nb / (e.count + 1))
        if s > best_s:
            best, best_s = e.action, s
    return best


def select_observation(edge: ActionEdge) -> BeliefNode:
    """Child with the largest weighted gap; ties go to the lowest observation key."""
    best, best_g = None, -math.inf
    for child in edge.children:
        est = child.est
        g = child.weight * (est.u - est.l)
        if g > best_g:
            best, best_g = child, g
    return best


def trial_should_terminate(node: BeliefNode, depth: int, config: SearchConfig) -> bool:
    if depth >= config.max_depth or node.terminal or node.frozen:
        return True
    return node.weight * node.gap <= config.gap_tolerance * config.gamma**depth


# ---------------------------------------------------------------- search


def _prior(node: BeliefNode, ctx: _Context):
    if node.prior is None:
        if ctx.use_features:
            node.prior = ctx.heuristics.policy_prior(_features(node, ctx))
        else:
            node.prior = ctx.heuristics.policy_prior(None)
    return node.prior


def _trial(root: BeliefNode, ctx: _Context, optimistic: bool):
    cfg = ctx.config
    node = root
    path = [root]
    while not trial_should_terminate(node, node.depth, cfg):
        if node.children is None:
            with node.lock:
                if node.children is None:
                    _expand(node, ctx)
        if optimistic:
            a = select_action_optimistic(node)
        else:
            a = select_action_guided(node, _prior(node, ctx), cfg.exploration)
        node = select_observation(node.children[a])
        path.append(node)
    backup_path(path, cfg.gamma, cfg.value_clipping)


def iter_nodes(root: BeliefNode):
    stack = [root]
    while stack:
        node = stack.pop()
        yield node
        if node.children is not None:
            for e in node.children:
                stack.extend(e.children)


def iter_edges(root: BeliefNode):
    for node in iter_nodes(root):
        if node.children is not None:
            yield from node.children


def run_search(
    belief: Belief,
    config: SearchConfig,
    heuristics: HeuristicProvider,
    model: DomainModel,
    scenarios: ScenarioSet | None = None,
    history: Sequence = (),
    on_trial: Callable[[BeliefNode, int], None] | None = None,
) -> SearchResult:
    """Run trials until the budget is spent or the root gap is within tolerance.

    Every ``optimistic_trial_period``-th trial selects actions by upper bound
    alone; the others add the policy-prior bonus. The reported action has
    the best learned value at the root.
    """
    if len(belief) == 0:
        raise EmptyBelief("cannot search from an empty belief")
    if config.time_budget is not None and config.time_budget <= 0 and not config.max_trials:
        return SearchResult(model.default_rollout_policy(belief.mode()), ZERO, math.inf, 0, 0, 0,
                            (), [], ("budget_zero",))
    if scenarios is None:
        scenarios = sample_scenarios(belief, config.scenario_count, config.seed)
    ctx = _Context(model, config, heuristics, scenarios)
    frames = tuple(history)[-4:]
    root = BeliefNode(0, [sc.id for sc in scenarios], [sc.initial_state for sc in scenarios],
                      len(scenarios) / ctx.k, None, frames)
    _initialize([root], ctx)
    gaps = [root.gap]
    deadline = None if config.time_budget is None else time.perf_counter() + config.time_budget
    trials = 0
    flags = []

    def budget_left():
        if config.max_trials is not None and trials >= config.max_trials:
            return False
        if deadline is not None and time.perf_counter() >= deadline:
            return False
        return not root.terminal and root.gap > config.gap_tolerance

    if config.workers == 1:
        while budget_left():
            trials += 1
            _trial(root, ctx, trials % config.optimistic_trial_period == 0)
            gaps.append(root.gap)
            if on_trial is not None:
                on_trial(root, trials)
    else:
        counter = threading.Lock()

        def worker():
            nonlocal trials
            while True:
                with counter:
                    if not budget_left():
                        return
                    trials += 1
                    k = trials
                _trial(root, ctx, k % config.optimistic_trial_period == 0)
                with counter:
                    gaps.append(root.gap)
                if on_trial is not None:
                    on_trial(root, k)

        with ThreadPoolExecutor(config.workers) as pool:
            for f in [pool.submit(worker) for _ in range(config.workers)]:
                f.result()

    if trials == 0:
        flags.append("no_trials")
    if root.terminal:
        return SearchResult(model.default_rollout_policy(belief.mode()), root.v, 0.0, trials, 0, 0,
                            (), gaps, tuple(flags) + ("terminal_root",), root)
    if root.children is None:
        _expand(root, ctx)
    chosen = best_edge(root)
    return SearchResult(
        action=chosen.action,
        value=root.v if trials else chosen.v,
        gap=root.gap,
        trials=trials,
        nodes_expanded=ctx.nodes_expanded,
        max_depth=ctx.max_depth,
        action_values=tuple(e.v.total for e in root.children),
        gap_history=gaps,
        flags=tuple(flags),
        root=root,
    )
