"""Acceptance checks 1-10. Each test records a one-line PASS/FAIL summary."""

import math
from pathlib import Path

import numpy as np
import pytest

from closedloop.cli import evaluate, load_learner, run
from closedloop.config import RunConfig
from closedloop.domains import make_domain
from closedloop.driving import DrivingBeliefTracker, DrivingModel, generate_scene
from closedloop.heuristics import FixedPolicyProvider, UniformProvider, network_provider
from closedloop.learners import ExperienceTuple, Learner, LearnerConfig, ReplayBuffer, rl_update
from closedloop.nn.entropy import EntropyController, update_alpha
from closedloop.nn.losses import loss_sac_policy, loss_sac_q, loss_ssl_policy, loss_ssl_value
from closedloop.nn.network import forward_policy, forward_q, policy_network, q_network, value_network
from closedloop.nn.optim import Adam
from closedloop.oracle import compare_with_planner, soft_value_iteration
from closedloop.pomdp import Belief, exact_bayes_update, particle_bayes_update
from closedloop.scenarios import mix64
from closedloop.toy import HEAR_LEFT, LISTEN, TigerModel, TwoStateMDP, tabular
from closedloop.tree import SearchConfig, run_search
from closedloop.values import ZERO
from helpers import max_relative_error


class SandwichChecker:
    """Checks l <= v.total <= u and factor additivity on every node a trial touched.

    Backups bump the visit count of each node on the trial path, so the
    walk only descends into nodes whose count changed and checks their
    children, which covers all nodes created by the expansion.
    """

    def __init__(self):
        self.seen = {}
        self.checked = 0
        self.violations = 0
        self.additivity = 0.0

    def __call__(self, root, trial):
        stack = [root]
        while stack:
            n = stack.pop()
            self.checked += 1
            v = n.v
            if not n.l <= v.total <= n.u:
                self.violations += 1
            self.additivity = max(self.additivity, abs(v.safe + v.collision - v.total))
            if self.seen.get(id(n)) != n.count:
                self.seen[id(n)] = n.count
                if n.children is not None:
                    for e in n.children:
                        stack.extend(e.children)


def _monotone(gaps):
    return all(b <= a for a, b in zip(gaps, gaps[1:]))


# ---------------------------------------------------------------- 1


def test_c1_oracle_equivalence(report):
    model = TigerModel()
    cases = bad = 0
    for prior in ("uniform", "random"):
        for k in (5, 20):
            for d in (2, 3):
                for seed in range(50):
                    c = compare_with_planner(model, mix64(seed), k, d, prior)
                    cases += 1
                    bad += not c.agrees
    report(1, bad == 0, f"{cases - bad}/{cases} searches match the exhaustive oracle")
    assert bad == 0


# ---------------------------------------------------------------- 2 and 3


def test_c2_c3_sandwich_and_gap(report):
    rng = np.random.default_rng(2)
    tiger = TigerModel()
    trials = {"tiger": 0, "driving": 0}
    checker_stats = []
    gaps_ok = True
    while trials["tiger"] < 5000:
        seed = int(rng.integers(1 << 30))
        prior = FixedPolicyProvider(rng.dirichlet(np.ones(3)))
        belief = Belief.from_weights([0, 1], rng.dirichlet(np.ones(2)))
        cfg = SearchConfig(scenario_count=int(rng.integers(3, 25)), max_depth=int(rng.integers(2, 5)),
                           horizon=6, gamma=0.95, gap_tolerance=0.0, max_trials=400, seed=seed)
        chk = SandwichChecker()
        res = run_search(belief, cfg, prior, tiger, on_trial=chk)
        trials["tiger"] += res.trials
        gaps_ok &= _monotone(res.gap_history)
        checker_stats.append(chk)

    model = DrivingModel()
    tracker = DrivingBeliefTracker(model, 30)
    i = 0
    while trials["driving"] < 5000:
        scene = generate_scene(model, 100 + i)
        belief = tracker.initial(model.observe(scene), i)
        prov = network_provider(policy_network(model.feature_size, 9, (16,), 16, seed=i),
                                value_network(model.feature_size, (16,), seed=i), 9)
        cfg = SearchConfig(scenario_count=4, max_depth=5, horizon=6, gamma=0.95, gap_tolerance=0.0,
                           max_trials=250, seed=i)
        chk = SandwichChecker()
        res = run_search(belief, cfg, prov, model, on_trial=chk)
        trials["driving"] += res.trials
        gaps_ok &= _monotone(res.gap_history)
        checker_stats.append(chk)
        i += 1
    violations = sum(c.violations for c in checker_stats)
    additivity = max(c.additivity for c in checker_stats)
    checked = sum(c.checked for c in checker_stats)
    ok2 = violations == 0 and additivity <= 1e-9
    report(2, ok2, f"{trials['tiger']} tiger + {trials['driving']} driving trials, {checked} node checks, "
                   f"{violations} bound violations, max |safe+collision-total| {additivity:.1e}")

    # Convergence on Tiger within the 1e5-trial guard.
    worst = 0
    converged = True
    for seed in range(10):
        cfg = SearchConfig(scenario_count=20, max_depth=3, horizon=6, gamma=0.95, gap_tolerance=0.0,
                           max_trials=100_000, seed=seed)
        res = run_search(Belief.uniform([0, 1]), cfg, UniformProvider(3), tiger)
        converged &= res.gap <= 1e-9
        gaps_ok &= _monotone(res.gap_history)
        worst = max(worst, res.trials)
    report(3, gaps_ok and converged, f"gap monotone in every search; tiger converged to <= 1e-9 "
                                     f"within {worst} trials (guard 100000)")
    assert ok2
    assert gaps_ok and converged


# ---------------------------------------------------------------- 4


def _grad_instances(kind, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(6, 3))
    if kind == "policy":
        net = policy_network(3, 4, hidden=(5,), head_hidden=4, seed=seed)
        a, alpha = rng.integers(0, 4, 6), rng.uniform(0, 1)
        _, g, _ = loss_ssl_policy(net, x, a, alpha)
        return [(lambda: loss_ssl_policy(net, x, a, alpha)[0], net, g, "")]
    if kind in ("mask", "value"):
        net = value_network(3, hidden=(5,), seed=seed)
        vs = np.where(rng.random(6) < 0.5, 0.0, rng.normal(size=6))
        vc = np.where(rng.random(6) < 0.5, 0.0, rng.normal(size=6))
        _, g, _ = loss_ssl_value(net, x, vs, vc)
        return [(lambda: loss_ssl_value(net, x, vs, vc)[0], net, g, kind + ".")]
    pol = policy_network(3, 4, hidden=(5,), head_hidden=4, seed=seed)
    qs = [q_network(3, 4, hidden=(5,), head_hidden=4, seed=seed + 1000 * k) for k in (1, 2)]
    if kind == "sac_policy":
        alpha = rng.uniform(0.01, 1)
        _, g, _ = loss_sac_policy(pol, qs, x, alpha)
        return [(lambda: loss_sac_policy(pol, qs, x, alpha)[0], pol, g, "")]
    tq = [q_network(3, 4, hidden=(5,), head_hidden=4, seed=seed + 1000 * k) for k in (3, 4)]
    xn, a, r, d = rng.normal(size=(6, 3)), rng.integers(0, 4, 6), rng.normal(size=6), rng.random(6) < 0.3
    alpha, gamma = rng.uniform(0.01, 1), 0.9
    _, gs, _ = loss_sac_q(qs, tq, pol, x, a, r, xn, d, alpha, gamma)
    fn = lambda: loss_sac_q(qs, tq, pol, x, a, r, xn, d, alpha, gamma)[0]
    return [(fn, q, g, "") for q, g in zip(qs, gs)]


def test_c4_gradient_suite(report):
    worst = {}
    for kind in ("policy", "mask", "value", "sac_policy", "soft_q"):
        w = 0.0
        for seed in range(100):
            for fn, net, g, prefix in _grad_instances(kind, seed):
                w = max(w, max_relative_error(fn, net, g, prefix=prefix))
        worst[kind] = w
    ok = all(w < 1e-4 for w in worst.values())
    report(4, ok, "max relative error " + ", ".join(f"{k} {v:.1e}" for k, v in worst.items()))
    assert ok


# ---------------------------------------------------------------- 5


def test_c5_sac_fixed_point(report):
    model = TwoStateMDP()
    gamma, alpha = 0.9, 0.2
    q_ref = soft_value_iteration(model, gamma, alpha)
    T, R = tabular(model)
    buf = ReplayBuffer(seed=0)
    # Ten tuples per state-action pair in exact transition proportions.
    for s in (0, 1):
        for a in (0, 1):
            n_same = int(round(10 * T[s, a, s]))
            for k in range(10):
                s2 = s if k < n_same else 1 - s
                buf.insert(ExperienceTuple(0, k, model.features(s), a, model.reward(s, a), float(R[s, a]), a,
                                           ZERO, False, model.features(s2)))
    cfg = LearnerConfig(hidden=(16,), head_hidden=16, batch_size=40, learning_rate=3e-4, alpha=alpha,
                        learn_alpha=False, gamma=gamma, seed=0)
    learner = Learner(2, 2, cfg, rl=True)
    x = np.eye(2)
    err = math.inf
    updates = 0
    while updates < 50_000:
        for _ in range(1000):
            rl_update(buf, learner, train_value=False)
        updates += 1000
        err = max(np.abs(forward_q(q, x) - q_ref).max() for q in learner.q_nets)
        if err < 1e-3:
            break
    report(5, err < 1e-3, f"max |Q - soft VI Q| = {err:.1e} after {updates} updates")
    assert err < 1e-3


# ---------------------------------------------------------------- 6


def test_c6_entropy_control(report):
    labels = np.array([0.6, 0.2, 0.1, 0.04, 0.02, 0.01, 0.01, 0.01, 0.01])
    x = np.ones((128, 4))
    results = []
    for frac in (0.98, 0.65):
        target = frac * math.log(9)
        net = policy_network(4, 9, hidden=(16,), head_hidden=16, seed=0)
        opt = Adam(net, lr=1e-2)
        ctl = EntropyController(log_alpha=math.log(0.01), target_entropy=target, alpha_learning_rate=0.05)
        rng = np.random.default_rng(0)
        for _ in range(6000):
            a = rng.choice(9, size=128, p=labels)
            _, g, info = loss_ssl_policy(net, x, a, ctl.alpha)
            opt.step(net, g)
            ctl = update_alpha(ctl, info["entropy"])
        p = forward_policy(net, x[0])
        h = float(-(p * np.log(p)).sum())
        results.append((target, h, abs(h - target) / target))
    ok = all(rel <= 0.05 for _, _, rel in results)
    report(6, ok, "; ".join(f"target {t:.4f} measured {h:.4f} ({100 * r:.2f}%)" for t, h, r in results))
    assert ok


# ---------------------------------------------------------------- 7


def test_c7_reward_and_bayes(report):
    tiger = TigerModel()
    rng = np.random.default_rng(7)
    bad_sum = 0
    for seed in rng.integers(0, 2**62, size=100_000):
        _, _, r = tiger.generative_step(int(seed) & 1, int(seed) % 3, int(seed))
        bad_sum += r.safe + r.collision != r.total
    model = DrivingModel()
    for i in range(200):
        s = generate_scene(model, i)
        for nxt, _, r in model.step_many([s] * 9, list(range(9)), [mix64(i * 9 + a) for a in range(9)]):
            bad_sum += r.safe + r.collision != r.total
    norm = 0.0
    for _ in range(1000):
        b = Belief.from_weights([0, 1], rng.dirichlet([1, 1]))
        for z in rng.integers(0, 2, size=5):
            b = exact_bayes_update(b, LISTEN, int(z), tiger)
            norm = max(norm, abs(b.weights.sum() - 1.0))
    b0 = Belief.from_weights([0, 1], [0.6, 0.4])
    exact = exact_bayes_update(b0, LISTEN, HEAR_LEFT, tiger)
    approx = particle_bayes_update(b0, LISTEN, HEAR_LEFT, tiger, 10_000, seed=7).marginal()
    l1 = sum(abs(approx.get(s, 0.0) - w) for s, w in zip(exact.states, exact.weights))
    ok = bad_sum == 0 and norm <= 1e-12 and l1 < 0.05
    report(7, ok, f"{bad_sum} additivity failures over 101800 transitions, normalization error {norm:.1e}, "
                  f"particle L1 {l1:.4f}")
    assert ok


# ---------------------------------------------------------------- 8

C8_CONFIG = dict(domain="driving", exo_count=6, scenario_count=8, max_depth=3, horizon=7, max_trials=10,
                 budget=10_000, eval_every=0, seed=0)


@pytest.mark.slow
def test_c8_guided_beats_unguided(report, tmp_path):
    cfg = RunConfig(mode="train-ssl", **C8_CONFIG)
    assert run(cfg, tmp_path / "train", single_thread=True) == 0
    domain = make_domain("driving", exo_count=6)
    learner = load_learner(tmp_path / "train" / "checkpoints" / "step-10000.ckpt", cfg, domain)
    guided = evaluate(learner, cfg, domain, 100, (0,), evaluators=("planner",))["planner"]
    unguided = evaluate(None, cfg, domain, 100, (0,), evaluators=("planner",))["planner"]
    g_lo, g_hi = guided.interval()
    u_lo, u_hi = unguided.interval()
    ok = guided.mean_reward > unguided.mean_reward and g_lo > u_hi
    report(8, ok, f"guided {guided.mean_reward:.1f} [{g_lo:.1f}, {g_hi:.1f}] vs unguided "
                  f"{unguided.mean_reward:.1f} [{u_lo:.1f}, {u_hi:.1f}] over 100 episodes")
    assert ok


# ---------------------------------------------------------------- 9


C9_CONFIG = dict(domain="tiger", max_steps=10, scenario_count=10, max_depth=3, horizon=6, max_trials=10,
                 hidden=(32,), head_hidden=32, batch_size=32, budget=1000, snapshot_every=20, eval_episodes=20)


def test_c9_value_clipping(report, tmp_path):
    rewards = {True: [], False: []}
    violations = 0
    for seed in range(5):
        for clip in (True, False):
            cfg = RunConfig(mode="train-ssl", seed=seed, value_clipping=clip, eval_every=C9_CONFIG["budget"],
                            **C9_CONFIG)
            out = tmp_path / f"s{seed}-{int(clip)}"
            assert run(cfg, out, single_thread=True) == 0
            rows = (out / "curves.csv").read_text().splitlines()[1:]
            final = [r.split(",") for r in rows if r.split(",")[2] == "planner"][-1]
            rewards[clip].append(float(final[4]))
            if clip:
                domain = make_domain("tiger", max_steps=10)
                learner = load_learner(out / "checkpoints" / f"step-{cfg.budget}.ckpt", cfg, domain)
                chk = SandwichChecker()
                scfg = SearchConfig(scenario_count=10, max_depth=3, horizon=6, gap_tolerance=0.0, max_trials=200,
                                    seed=seed)
                run_search(Belief.uniform([0, 1]), scfg, learner.provider(1), domain.model, on_trial=chk)
                violations += chk.violations
    clipped, unclipped = np.mean(rewards[True]), np.mean(rewards[False])
    soft_ok = clipped >= unclipped
    report(9, soft_ok and violations == 0,
           f"clipped {clipped:.2f} vs unclipped {unclipped:.2f} mean final reward over 5 seeds; "
           f"{violations} bound violations with clipping (soft criterion, reported only)")
    assert violations == 0


# ---------------------------------------------------------------- 10


def test_c10_determinism(report, tmp_path):
    texts = []
    for name in ("a", "b"):
        cfg = RunConfig(mode="train-ssl", domain="driving", exo_count=6, max_steps=15, scenario_count=4,
                        max_depth=2, horizon=4, max_trials=4, hidden=(16,), head_hidden=16, batch_size=8,
                        budget=40, snapshot_every=5, eval_every=20, eval_episodes=1, seed=3)
        assert run(cfg, tmp_path / name, single_thread=True) == 0
        texts.append(((tmp_path / name / "metrics.csv").read_bytes(),
                      (tmp_path / name / "curves.csv").read_bytes()))
    ok = texts[0] == texts[1]
    report(10, ok, "two single-thread runs produced byte-identical metrics.csv and curves.csv")
    assert ok
