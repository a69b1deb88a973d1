import numpy as np
import pytest

from closedloop.pomdp import Belief
from closedloop.scenarios import (
    TerminalState,
    mix64,
    normal_array,
    sample_scenarios,
    step_scenario,
    stream_value,
    uniform_array,
    uniforms,
)
from closedloop.toy import LISTEN, TigerModel, TwoStateMDP


def test_point_mass_shares_start():
    sc = sample_scenarios(Belief([1], np.array([1.0])), 25, 3)
    assert len(sc) == 25
    assert {s.initial_state for s in sc} == {1}
    assert len({s.id for s in sc}) == 25


def test_start_shares_binomial():
    k = 10_000
    sc = sample_scenarios(Belief.uniform([0, 1]), k, 42)
    ones = sum(s.initial_state for s in sc)
    sigma = np.sqrt(k * 0.25)
    assert abs(ones - k / 2) <= 3 * sigma


def test_sampling_deterministic():
    b = Belief([0, 1], np.array([0.3, 0.7]))
    a = sample_scenarios(b, 30, 9)
    c = sample_scenarios(b, 30, 9)
    assert [(s.id, s.initial_state, s.stream_seed) for s in a] == [(s.id, s.initial_state, s.stream_seed) for s in c]


def test_zero_scenarios_rejected():
    with pytest.raises(ValueError):
        sample_scenarios(Belief.uniform([0, 1]), 0, 1)


def test_stream_is_pure_function_of_seed_and_depth():
    assert stream_value(123, 4) == stream_value(123, 4)
    assert stream_value(123, 4) != stream_value(123, 5)
    assert stream_value(123, 4) != stream_value(124, 4)


def test_step_is_repeatable():
    m = TigerModel()
    sc = sample_scenarios(Belief.uniform([0, 1]), 5, 0)[2]
    assert step_scenario(sc, 1, 0, LISTEN, m) == step_scenario(sc, 1, 0, LISTEN, m)


def test_deterministic_domain_ignores_stream():
    class Frozen(TwoStateMDP):
        def generative_step(self, state, action, seed):
            return state, state, self.reward(state, action)

    m = Frozen()
    for sc in sample_scenarios(Belief.uniform([0, 1]), 10, 1):
        assert step_scenario(sc, 1, 0, 0, m) == step_scenario(sc, 3, 0, 0, m)


def test_depths_differ_on_stochastic_domain():
    m = TwoStateMDP()
    scs = sample_scenarios(Belief.uniform([0, 1]), 100, 2)
    differ = 0
    for sc in scs:
        outs = [step_scenario(sc, d, 0, 1, m)[0] for d in range(1, 9)]
        differ += len(set(outs)) > 1
    # P(all 8 draws agree) = 0.8^8 + 0.2^8 ~ 0.17 per scenario.
    assert differ >= 70


def test_terminal_state_rejected():
    class Done(TigerModel):
        def is_terminal(self, state):
            return True

    sc = sample_scenarios(Belief.uniform([0, 1]), 1, 0)[0]
    with pytest.raises(TerminalState):
        step_scenario(sc, 1, 0, LISTEN, Done())
    with pytest.raises(ValueError):
        step_scenario(sc, 0, 0, LISTEN, TigerModel())


def test_serial_correlation_small():
    u = np.array([uniforms(stream_value(77, d), 1)[0] for d in range(1, 100_001)])
    r = np.corrcoef(u[:-1], u[1:])[0, 1]
    assert abs(r) < 0.05
    assert 0.0 <= u.min() and u.max() < 1.0


def test_array_variates_match_scalar():
    seeds = np.array([mix64(i) for i in range(20)], dtype=np.uint64)
    arr = uniform_array(seeds, 3)
    for i, s in enumerate(seeds):
        assert arr[i].tolist() == uniforms(int(s), 3)
    z = normal_array(seeds, 4)
    assert z.shape == (20, 4) and np.all(np.isfinite(z))
