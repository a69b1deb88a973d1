"""Brute-force references for the planner and the learners."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .pomdp import DomainModel, FactoredReward
from .scenarios import ScenarioSet
from .toy import tabular
from .tree import TERMINAL, _obs_order, rollout_value

SIZE_LIMIT = 10**7


class SizeGuard(ValueError):
    """The exhaustive tree would be too large to enumerate."""


@dataclass(frozen=True)
class OracleResult:
    action: int
    value: float
    action_values: tuple


def exhaustive_despot_value(scenarios: ScenarioSet, model: DomainModel, depth: int, gamma: float,
                            horizon: int | None = None) -> OracleResult:
    """Full expansion of the determinized sparse tree with exact backups.

    Leaves at ``depth`` take the default-policy rollout value to ``horizon``
    (same code path as the planner). Observation branches are weighted by
    scenario fractions.
    """
    horizon = depth if horizon is None else horizon
    if horizon < depth:
        raise ValueError("horizon must be >= depth")
    if model.action_count**depth * len(scenarios) > SIZE_LIMIT:
        raise SizeGuard(f"|A|^D * K = {model.action_count**depth * len(scenarios)} exceeds {SIZE_LIMIT}")
    by_id = {sc.id: sc for sc in scenarios}

    def node_value(d, ids, states):
        if all(model.is_terminal(s) for s in states):
            return 0.0
        if d >= depth:
            return rollout_value(model, [by_id[i] for i in ids], states, d, horizon, gamma).total
        return max(edge_values(d, ids, states))

    def edge_values(d, ids, states):
        n = len(ids)
        out = []
        for a in range(model.action_count):
            groups: dict = {}
            rs = rc = 0.0
            for sid, s in zip(ids, states):
                if model.is_terminal(s):
                    groups.setdefault(TERMINAL, ([], []))
                    groups[TERMINAL][0].append(sid)
                    groups[TERMINAL][1].append(s)
                    continue
                s_next, z, r = model.generative_step(s, a, by_id[sid].phi(d + 1))
                groups.setdefault(z, ([], []))
                groups[z][0].append(sid)
                groups[z][1].append(s_next)
                rs += r.safe
                rc += r.collision
            acc = 0.0
            for z in sorted(groups, key=_obs_order):
                cids, cstates = groups[z]
                acc += len(cids) / n * node_value(d + 1, cids, cstates)
            out.append(FactoredReward(rs / n, rc / n).total + gamma * acc)
        return out

    ids = [sc.id for sc in scenarios]
    values = edge_values(0, ids, [sc.initial_state for sc in scenarios])
    best = int(np.argmax(values))
    return OracleResult(best, values[best], tuple(values))


def exact_value_iteration(model, gamma: float, tol: float = 1e-12, max_iter: int = 100_000) -> np.ndarray:
    """Optimal state values of the fully observed MDP underlying ``model``.

    Starts from the pessimistic bound min R / (1 - gamma), so the iterates
    increase monotonically.
    """
    T, R = tabular(model)
    v = np.full(len(R), R.min() / (1.0 - gamma))
    for _ in range(max_iter):
        v_new = (R + gamma * T @ v).max(axis=1)
        if np.max(np.abs(v_new - v)) <= tol:
            return v_new
        v = v_new
    return v


def soft_value_iteration(model, gamma: float, alpha: float, tol: float = 1e-12,
                         max_iter: int = 100_000) -> np.ndarray:
    """Soft-optimal ``Q[s, a]`` with entropy weight ``alpha``.

    V(s) = alpha * log sum_a exp(Q(s, a) / alpha), the value of the
    Boltzmann policy softmax(Q / alpha).
    """
    T, R = tabular(model)
    q = np.zeros_like(R)
    for _ in range(max_iter):
        m = q.max(axis=1)
        v = m + alpha * np.log(np.exp((q - m[:, None]) / alpha).sum(axis=1))
        q_new = R + gamma * T @ v
        if np.max(np.abs(q_new - q)) <= tol:
            return q_new
        q = q_new
    return q


def soft_policy(q: np.ndarray, alpha: float) -> np.ndarray:
    z = q / alpha
    z = z - z.max(axis=1, keepdims=True)
    p = np.exp(z)
    return p / p.sum(axis=1, keepdims=True)


@dataclass(frozen=True)
class OracleComparison:
    seed: int
    scenario_count: int
    depth: int
    prior: str
    planner_action: int
    oracle_action: int
    planner_value: float
    oracle_value: float
    trials: int

    @property
    def agrees(self) -> bool:
        return self.planner_action == self.oracle_action and abs(self.planner_value - self.oracle_value) <= 1e-9


def compare_with_planner(model, seed: int, scenario_count: int, depth: int, prior: str = "uniform",
                         extra_horizon: int = 3, max_trials: int = 100_000) -> OracleComparison:
    """Run the planner to convergence and the exhaustive oracle on the same scenarios.

    The belief weights and (for ``prior="random"``) the policy prior are
    drawn from ``seed``.
    """
    from .heuristics import FixedPolicyProvider, UniformProvider
    from .pomdp import Belief
    from .scenarios import sample_scenarios
    from .tree import SearchConfig, run_search

    rng = np.random.default_rng(seed)
    states = list(model.states())
    belief = Belief.from_weights(states, rng.dirichlet(np.ones(len(states))))
    if prior == "uniform":
        heur = UniformProvider(model.action_count)
    elif prior == "random":
        heur = FixedPolicyProvider(rng.dirichlet(np.ones(model.action_count)))
    else:
        raise ValueError(f"prior must be uniform or random, got {prior!r}")
    horizon = depth + extra_horizon
    scenarios = sample_scenarios(belief, scenario_count, seed)
    cfg = SearchConfig(scenario_count=scenario_count, max_depth=depth, horizon=horizon, gamma=model.gamma,
                       gap_tolerance=0.0, max_trials=max_trials, seed=seed)
    res = run_search(belief, cfg, heur, model, scenarios)
    ref = exhaustive_despot_value(scenarios, model, depth, model.gamma, horizon)
    return OracleComparison(seed, scenario_count, depth, prior, res.action, ref.action, res.value.total, ref.value,
                            res.trials)
