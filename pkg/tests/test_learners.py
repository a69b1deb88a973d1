import numpy as np
import pytest

from closedloop.domains import make_domain
from closedloop.heuristics import UniformProvider
from closedloop.learners import (
    ActorConfig,
    ActorMode,
    BufferTooSmall,
    ExperienceTuple,
    Learner,
    LearnerConfig,
    LoopConfig,
    ReplayBuffer,
    SnapshotChannel,
    collect_episode,
    open_ssl_pipeline,
    rl_update,
    run_closed_loop,
    ssl_update,
)
from closedloop.learners.experience import CorruptDataset, format_tuple, parse_tuple, read_dataset, write_dataset
from closedloop.nn.network import forward_policy
from closedloop.pomdp import FactoredReward
from closedloop.tree import SearchConfig
from closedloop.values import FactoredValue

SMALL = LearnerConfig(hidden=(8,), head_hidden=8, batch_size=8, learning_rate=1e-2, seed=0)


def _tuple(i, rng, size=4, done=False, action=None):
    return ExperienceTuple(
        episode=i // 10, step=i % 10, x=rng.normal(size=size), action=int(action if action is not None else i % 3),
        reward=FactoredReward(-0.1 * i, 0.0), smooth_reward=-0.01 * i, a_star=int(i % 3),
        v_star=FactoredValue.of(-1.0 * i, -50.0 if i % 4 == 0 else 0.0), done=done,
        x_next=None if done else rng.normal(size=size),
    )


def test_tuple_text_round_trip():
    rng = np.random.default_rng(0)
    for t in [_tuple(3, rng), _tuple(4, rng, done=True)]:
        back = parse_tuple(format_tuple(t), 4)
        assert format_tuple(back) == format_tuple(t)
        assert np.array_equal(back.x, t.x)


def test_dataset_round_trip_and_errors(tmp_path):
    rng = np.random.default_rng(1)
    data = [_tuple(i, rng) for i in range(12)]
    path = tmp_path / "d.txt"
    write_dataset(path, data, 4)
    back = read_dataset(path)
    assert [format_tuple(t) for t in back] == [format_tuple(t) for t in data]
    lines = path.read_text().splitlines()
    lines[3] = "1 2 3"
    path.write_text("\n".join(lines))
    with pytest.raises(CorruptDataset, match=":4:"):
        read_dataset(path)
    path.write_text("garbage\n")
    with pytest.raises(CorruptDataset):
        read_dataset(path)


def test_buffer_fifo_and_sampling():
    rng = np.random.default_rng(2)
    buf = ReplayBuffer(capacity=5, seed=0)
    with pytest.raises(BufferTooSmall):
        buf.sample(1)
    for i in range(8):
        buf.insert(_tuple(i, rng))
    assert len(buf) == 5 and buf.inserted == 8
    assert [t.step for t in buf.entries()] == [3, 4, 5, 6, 7]
    batch = buf.sample(5)
    assert sorted(t.step for t in batch) == [3, 4, 5, 6, 7]
    with pytest.raises(BufferTooSmall):
        buf.sample(6)


def test_ssl_update_learns_single_class():
    rng = np.random.default_rng(3)
    cfg = LearnerConfig(hidden=(8,), head_hidden=8, batch_size=8, learning_rate=1e-2, alpha=1e-6,
                        learn_alpha=False)
    learner = Learner(4, 3, cfg)
    buf = ReplayBuffer(seed=0)
    for i in range(32):
        buf.insert(ExperienceTuple(0, i, rng.normal(size=4), 2, FactoredReward(), 0.0, 2,
                                   FactoredValue.of(-5.0, 0.0), False, None))
    first = ssl_update(buf, learner)
    for _ in range(300):
        last = ssl_update(buf, learner)
    assert last["policy_loss"] < first["policy_loss"]
    assert forward_policy(learner.policy, rng.normal(size=4))[2] > 0.95
    assert learner.steps == 301


def test_open_loop_zero_epochs_unchanged_and_loss_drops():
    rng = np.random.default_rng(4)
    data = [_tuple(i, rng) for i in range(64)]
    learner = Learner(4, 3, SMALL)
    before = learner.checkpoint_text()
    assert open_ssl_pipeline(data, 0, learner) == []
    assert learner.checkpoint_text() == before
    hist = open_ssl_pipeline(data, 30, learner)
    assert hist[-1]["value_loss"] < hist[0]["value_loss"]


def test_rl_update_requires_critics_and_runs():
    rng = np.random.default_rng(5)
    buf = ReplayBuffer(seed=0)
    buf.extend(_tuple(i, rng, done=(i % 7 == 0)) for i in range(20))
    with pytest.raises(ValueError):
        rl_update(buf, Learner(4, 3, SMALL))
    learner = Learner(4, 3, SMALL, rl=True)
    out = rl_update(buf, learner)
    assert np.isfinite(out["q_loss"]) and learner.steps == 1
    with pytest.raises(BufferTooSmall):
        rl_update(ReplayBuffer(), learner)


def test_checkpoint_text_round_trip():
    rng = np.random.default_rng(6)
    buf = ReplayBuffer(seed=0)
    buf.extend(_tuple(i, rng) for i in range(20))
    a = Learner(4, 3, SMALL, rl=True)
    for _ in range(5):
        rl_update(buf, a)
    b = Learner(4, 3, SMALL, rl=True)
    b.load_checkpoint_text(a.checkpoint_text())
    assert b.checkpoint_text() == a.checkpoint_text()
    assert b.steps == 5 and b.alpha == a.alpha


def test_snapshot_channel_versions():
    ch = SnapshotChannel(UniformProvider(3, version=0))
    ch.publish(UniformProvider(3, version=4))
    assert ch.get().version == 4
    with pytest.raises(ValueError):
        ch.publish(UniformProvider(3, version=2))


def _tiger_search():
    return SearchConfig(scenario_count=8, max_depth=2, horizon=4, gamma=0.95, max_trials=10)


def test_collect_episode_tiger():
    dom = make_domain("tiger", max_steps=6)
    ep = collect_episode(dom, ActorConfig(ActorMode.EXPLOIT, _tiger_search()), UniformProvider(3), 0, 11)
    assert len(ep.tuples) == 6 and ep.tuples[-1].done
    assert ep.metrics.length == 6 and not ep.metrics.partial
    assert ep.metrics.reward == pytest.approx(sum(t.reward.total for t in ep.tuples))
    again = collect_episode(dom, ActorConfig(ActorMode.EXPLOIT, _tiger_search()), UniformProvider(3), 0, 11)
    assert [format_tuple(t) for t in again.tuples] == [format_tuple(t) for t in ep.tuples]


def test_sink_stop_marks_partial():
    dom = make_domain("tiger", max_steps=6)
    seen = []
    ep = collect_episode(dom, ActorConfig("explore", _tiger_search()), UniformProvider(3), 0, 3,
                         lambda t: seen.append(t) or len(seen) < 2)
    assert len(ep.tuples) == 2 and ep.metrics.partial


@pytest.mark.parametrize("variant,single", [("ssl", True), ("rl", True), ("ssl", False)])
def test_closed_loop_budget_and_versions(variant, single):
    dom = make_domain("tiger", max_steps=8)
    learner = Learner(12, 3, SMALL, rl=variant == "rl")
    modes = ["exploit", "explore", "on_policy"] if variant == "rl" else ["exploit"]
    actors = [ActorConfig(m, _tiger_search()) for m in modes]
    evals = []
    cfg = LoopConfig(variant=variant, budget=30, snapshot_every=4, eval_every=10)
    res = run_closed_loop(dom, learner, actors, cfg, single_thread=single, on_eval=lambda n, l: evals.append(n))
    assert res.buffer.inserted == 30
    assert evals == [10, 20, 30]
    assert res.versions_seen[0][0] == 0
    for versions in res.versions_seen.values():
        assert all(a <= b for a, b in zip(versions, versions[1:]))
    assert any(v > 0 for vs in res.versions_seen.values() for v in vs)
    if single:
        assert res.learner_steps == 30 - SMALL.batch_size + 1


def test_closed_loop_single_thread_deterministic():
    def run():
        dom = make_domain("tiger", max_steps=8)
        learner = Learner(12, 3, SMALL)
        res = run_closed_loop(dom, learner, [ActorConfig("exploit", _tiger_search())],
                              LoopConfig(budget=25, snapshot_every=3))
        return learner.checkpoint_text(), [m.reward for m in res.episodes]

    assert run() == run()


def test_loop_config_validation():
    with pytest.raises(ValueError):
        LoopConfig(variant="bogus")
    with pytest.raises(ValueError):
        LoopConfig(snapshot_every=0)
    with pytest.raises(ValueError):
        ActorConfig(temperature=0.0)
