import math

import numpy as np
import pytest

from closedloop.driving import (
    DrivingBeliefTracker,
    DrivingConfig,
    DrivingEnvironment,
    DrivingModel,
    InvalidLane,
    MapFormatError,
    action_index,
    generate_scene,
    load_map,
    parse_map,
    write_trajectory,
)
from closedloop.driving.env import route_marginals
from closedloop.driving.geometry import first_contact, overlaps, pairwise_contact
from closedloop.driving.model import CAR, DEC, KEEP, LEFT, MAINTAIN, PED, make_state, wrap_angle
from closedloop.pomdp import Belief
from closedloop.scenarios import mix64
from closedloop.tree import rollout_returns, stepwise_rollout_returns
from closedloop.scenarios import sample_scenarios

CAR_HALF = (2.25, 0.9)


@pytest.fixture(scope="module")
def graph():
    return load_map()


@pytest.fixture(scope="module")
def quiet(graph):
    return DrivingModel(graph, DrivingConfig(noise_sigma=0.0))


def _ego(x=0.0, v=6.0, lane=1, y=None):
    y = (-5.25 if lane == 1 else -1.75) if y is None else y
    return [x, y, v, 0.0, lane, 0.0, 0.0, 0.0]


def _exo(graph, x, y, v, h, kind, lanes, attentive=0.0):
    r = graph.route_index(lanes)
    s, _ = graph.route_table.project(np.array(r), np.array([x, y]))
    return [x, y, v, h, float(s), kind, r, attentive]


# ---------------------------------------------------------------- geometry


def test_head_on_ttc():
    t = first_contact([0.0, 0.0], 0.0, [3.0, 0.0], CAR_HALF, [10.5, 0.0], math.pi, [-3.0, 0.0], CAR_HALF)
    assert float(t) == pytest.approx(1.0, abs=1e-12)


def test_parallel_and_overlap_ttc():
    t = first_contact([0.0, 0.0], 0.0, [5.0, 0.0], CAR_HALF, [0.0, 3.5], 0.0, [5.0, 0.0], CAR_HALF)
    assert t == np.inf
    t = first_contact([0.0, 0.0], 0.0, [0.0, 0.0], CAR_HALF, [1.0, 0.5], 1.0, [1.0, 0.0], CAR_HALF)
    assert t == 0.0
    assert overlaps([0.0, 0.0], 0.0, CAR_HALF, [4.5, 0.0], 0.0, CAR_HALF)
    assert not overlaps([0.0, 0.0], 0.0, CAR_HALF, [4.6, 0.0], 0.0, CAR_HALF)


def test_rotated_box_contact_against_sampling():
    # Crossing paths: a moving east, b moving north, rotated 90 degrees.
    t = float(first_contact([0.0, 0.0], 0.0, [4.0, 0.0], CAR_HALF, [10.0, -10.0], math.pi / 2, [0.0, 4.0], CAR_HALF))
    grid = np.arange(0.0, 5.0, 1e-4)
    zeros = np.zeros_like(grid)
    hit = overlaps(np.stack([4.0 * grid, zeros], -1), 0.0, CAR_HALF,
                   np.stack([zeros + 10.0, -10.0 + 4.0 * grid], -1), math.pi / 2, CAR_HALF)
    assert t == pytest.approx(grid[np.argmax(hit)], abs=2e-4)


def test_pairwise_diagonal_inf():
    pos = np.array([[0.0, 0.0], [10.5, 0.0]])
    t = pairwise_contact(pos, np.array([0.0, math.pi]), np.array([[3.0, 0.0], [-3.0, 0.0]]),
                         np.array([CAR_HALF, CAR_HALF]))
    assert t[0, 0] == np.inf and t[0, 1] == pytest.approx(1.0)


def test_wrap_angle():
    assert wrap_angle(3 * math.pi / 2) == pytest.approx(-math.pi / 2)
    assert wrap_angle(0.25) == 0.25


# ---------------------------------------------------------------- map


def test_bundled_map_routes(graph):
    kinds = [r.kind for r in graph.routes]
    assert kinds.count("walk") == 2
    assert graph.route_index(("N_in", "N_right", "E2_out")) >= 0
    assert list(graph.ego_left) == [-1, 0] and list(graph.ego_right) == [1, -1]


def test_map_errors():
    with pytest.raises(MapFormatError, match=":1:"):
        parse_map("nope\n")
    with pytest.raises(MapFormatError, match=":2:"):
        parse_map("closedloop-map 1\nlane A bogus 0,0 1,0\n")
    with pytest.raises(MapFormatError):
        parse_map("closedloop-map 1\nlane A road 0,0 1,0\nego_lanes A\n")
    with pytest.raises(MapFormatError):
        parse_map("closedloop-map 1\nlane A road 0,0 0,0\nego_lanes A\nego_start A 0\ngoal 1\n")


def test_path_lookup(graph):
    i = graph.route_index(("E1",))
    p, t = graph.route_table.locate(np.array(i), np.array(60.0))
    np.testing.assert_allclose(p, [0.0, -1.75])
    np.testing.assert_allclose(t, [1.0, 0.0])
    s, lat = graph.route_table.project(np.array(i), np.array([5.0, -1.0]))
    assert float(s) == pytest.approx(65.0) and float(lat) == pytest.approx(0.75)


# ---------------------------------------------------------------- dynamics and rewards


def test_maintain_at_top_speed_advances_two_metres(quiet):
    s = make_state(_ego(v=6.0), np.zeros((0, 8)))
    nxt, _, r = quiet.generative_step(s, action_index(KEEP, MAINTAIN), 1)
    assert nxt.data[0] == pytest.approx(2.0, abs=1e-12)
    assert nxt.data[1] == pytest.approx(-5.25, abs=1e-12)
    assert r.safe == pytest.approx(0.0) and r.collision == 0.0


def test_stopped_decel_reward(quiet):
    s = make_state(_ego(v=0.0), np.zeros((0, 8)))
    _, _, r = quiet.generative_step(s, action_index(KEEP, DEC), 1)
    assert r.safe == pytest.approx(-4.1) and r.total == pytest.approx(-4.1)


def test_collision_at_top_speed(quiet, graph):
    exo = _exo(graph, 4.0, -5.25, 0.0, 0.0, CAR, ("E2",))
    s = make_state(_ego(v=6.0), [exo])
    nxt, _, r = quiet.generative_step(s, action_index(KEEP, MAINTAIN), 1)
    assert r.collision == -36500.0
    assert quiet.is_terminal(nxt)


def test_lane_change_toward_missing_lane(quiet):
    s = make_state(_ego(lane=0), np.zeros((0, 8)))
    out, _, _, _, invalid = quiet.step_batch(s.data[None], [action_index(LEFT, MAINTAIN)], [1])
    assert invalid[0] and out[0, 4] == 0
    assert issubclass(InvalidLane, ValueError)


def test_smooth_reward_values(quiet, graph):
    free = make_state(_ego(v=6.0), np.zeros((0, 8)))
    assert quiet.smooth_reward(free, action_index(KEEP, MAINTAIN), free) == pytest.approx(0.05)
    assert quiet.smooth_reward(free, action_index(LEFT, MAINTAIN), free) == pytest.approx(0.025)
    exo = _exo(graph, 10.5, -5.25, 6.0, math.pi, CAR, ("E2",))
    close = make_state(_ego(v=0.0), [exo])
    assert quiet.ttc(close) == pytest.approx(1.0)
    assert quiet.smooth_reward(close, action_index(KEEP, MAINTAIN), close) == pytest.approx(-1 / 9)


def test_reward_additivity_random_transitions():
    model = DrivingModel()
    for seed in range(20):
        s = generate_scene(model, seed)
        acts = np.arange(9)
        out = model.step_many([s] * 9, acts.tolist(), [mix64(seed * 9 + a) for a in acts])
        for a, (nxt, _, r) in zip(acts, out):
            assert r.safe + r.collision == r.total
            assert r == model.reward(s, int(a), nxt)


def test_step_is_pure(quiet):
    model = DrivingModel()
    s = generate_scene(model, 3)
    assert model.generative_step(s, 4, 77) == model.generative_step(s, 4, 77)


def test_fused_rollout_matches_stepwise():
    model = DrivingModel()
    scen = sample_scenarios(Belief.uniform([generate_scene(model, i) for i in range(6)]), 12, 5)
    st = [sc.initial_state for sc in scen]
    assert rollout_returns(model, scen, st, 1, 8, 0.95) == stepwise_rollout_returns(model, scen, st, 1, 8, 0.95)


def test_upper_bound_not_below_rollout():
    model = DrivingModel()
    scen = sample_scenarios(Belief.uniform([generate_scene(model, i) for i in range(4)]), 8, 1)
    for safe, col, tot in rollout_returns(model, scen, [sc.initial_state for sc in scen], 0, 6, 0.95):
        assert tot <= 0.0 == model.upper_bound_heuristic(scen[0].initial_state)


# ---------------------------------------------------------------- hidden variables and belief


def test_single_lane_agent_has_one_route(graph):
    model = DrivingModel(graph)
    s = make_state(_ego(), [_exo(graph, 0.0, -1.75, 4.0, 0.0, CAR, ("E1",))])
    routes = {int(model.sample_hidden(s, k)[0].exos[0, 6]) for k in range(50)}
    assert routes == {graph.route_index(("E1",))}


def test_crosswalk_routes_split_evenly(graph):
    model = DrivingModel(graph)
    s = make_state(_ego(), [_exo(graph, 12.0, 0.0, 1.0, math.pi / 2, PED, ("X_north",))])
    north = graph.route_index(("X_north",))
    n = 10_000
    hits = sum(int(model.sample_hidden(s, mix64(k))[0].exos[0, 6]) == north for k in range(n))
    assert abs(hits / n - 0.5) <= 3 * math.sqrt(0.25 / n)
    assert model.sample_hidden(s, 9) == model.sample_hidden(s, 9)


def test_unroutable_agent_flagged(graph):
    model = DrivingModel(graph)
    s = make_state(_ego(), [[30.0, 30.0, 1.0, 0.0, 0.0, CAR, 0, 0]])
    _, flagged = model.sample_hidden(s, 1)
    assert flagged


def test_tracker_keeps_particles_consistent():
    model = DrivingModel()
    env = DrivingEnvironment(model, seed=4, max_steps=5)
    tracker = DrivingBeliefTracker(model, 50)
    obs = env.reset()
    belief = tracker.initial(obs, 1)
    assert len(belief) == 50
    for k in range(3):
        out = env.step(action_index(KEEP, MAINTAIN))
        belief = tracker.update(belief, 4, out.observation, k)
        assert len(belief) == 50 and abs(belief.weights.sum() - 1.0) <= 1e-12
        for st in belief.states:
            assert model.observe(st)[:7] == out.observation[:7]
        m = route_marginals(belief, 0)
        assert abs(sum(m.values()) - 1.0) <= 1e-9


# ---------------------------------------------------------------- environment and features


def test_environment_episode_and_trajectory(tmp_path):
    model = DrivingModel()
    env = DrivingEnvironment(model, seed=1, max_steps=4)
    obs = env.reset()
    assert obs == model.observe(env.state)
    steps = 0
    while True:
        out = env.step(action_index(KEEP, MAINTAIN))
        steps += 1
        if out.done:
            break
    assert steps <= 4 and len(env.log) == steps
    path = tmp_path / "traj.csv"
    write_trajectory(path, env.log)
    assert path.read_text().splitlines()[0].startswith("step,x,y")


def test_scene_generation_deterministic():
    model = DrivingModel()
    assert generate_scene(model, 5) == generate_scene(model, 5)
    assert generate_scene(model, 5).exo_count == 6


def test_features_invariant_to_rigid_motion(graph):
    theta, off = 0.7, np.array([13.0, -4.0])
    moved = graph.transformed(theta, off)
    a_model, b_model = DrivingModel(graph), DrivingModel(moved)
    rng = np.random.default_rng(0)
    c, s = math.cos(theta), math.sin(theta)
    rot = np.array([[c, -s], [s, c]])
    snaps, moved_snaps = [], []
    for _ in range(4):
        ego = np.array([rng.uniform(-20, 20), -5.25 + rng.normal(0, 0.2), rng.uniform(0, 6), rng.normal(0, 0.1)])
        exo = np.column_stack([rng.uniform(-30, 30, 5), rng.uniform(-30, 30, 5), rng.uniform(0, 5, 5),
                               rng.uniform(-3, 3, 5)])
        snaps.append((ego, exo))
        me = ego.copy()
        me[:2] = rot @ ego[:2] + off
        me[3] += theta
        mx = exo.copy()
        mx[:, :2] = exo[:, :2] @ rot.T + off
        mx[:, 3] += theta
        moved_snaps.append((me, mx))
    kinds = np.array([CAR, PED, CAR, CAR, PED])
    fa = a_model.scene_features(snaps, kinds, 1)
    fb = b_model.scene_features(moved_snaps, kinds, 1)
    assert fa.shape == (a_model.feature_size,)
    np.testing.assert_allclose(fa, fb, atol=1e-9)
