import math
import random

import numpy as np
import pytest
from conftest import default_config
from hypothesis import given, settings
from hypothesis import strategies as st
from toys import ConstantModel, FirstOrder, PassThrough, ToyModel, random_graph

from vacmdt import ExplorationConfig, assemble, explore, parse_graph, replay
from vacmdt.errors import BudgetExceeded, ConsistencyError, NotSettled, UnstableOutcome
from vacmdt.explorer import StateRecord, check_discovery, detect_stable, match_state, settle_times
from vacmdt.pneumo import Signal, SignalKind

CONT = Signal("vacuum", SignalKind.CONTINUOUS, "mbar,rel")
DISC = Signal("H2", SignalKind.DISCRETE, "V")
TABLE2 = {
    (0, (0.0, 0.0), 1), (1, (24.0, 0.0), 2), (1, (0.0, 24.0), 3), (1, (24.0, 24.0), 3),
    (2, (0.0, 24.0), 3), (2, (24.0, 24.0), 3), (3, (0.0, 0.0), 1), (3, (24.0, 0.0), 2),
}


def test_detect_stable_examples():
    t = np.arange(3001) * 1e-3
    assert detect_stable(np.full(3001, 7.0), 1e-3, 0.5, 1.0) == (7.0,)
    assert detect_stable(5.0 * t, 1e-3, 0.5, 1.0) is None
    # tau = 0.1 s: 25 e-foldings separate the window start from t = 0, so the tail is flat
    decay = 750 * (1 - np.exp(-t / 0.1))
    value = detect_stable(decay, 1e-3, 0.5, 1.0)
    assert value is not None and abs(value[0] - 750) < 1.0
    flicker = np.zeros(3001)
    flicker[-3] = 1
    assert detect_stable(flicker, 1e-3, 0.5, 5.0, [DISC]) is None


def test_match_state():
    known = [StateRecord(1, (0.0, 0.0), ()), StateRecord(2, (750.0, 24.0), ())]
    assert match_state((750.0, 24.0), known, (1.0, 0.0), (CONT, DISC)) == 2
    assert match_state((750.4, 24.0), known, (1.0, 0.0), (CONT, DISC)) == 2
    assert match_state((750.4, 0.0), known, (1.0, 0.0), (CONT, DISC)) is None
    assert match_state((1.0, 0.0), [], (1.0, 0.0), (CONT, DISC)) is None
    with pytest.raises(ConsistencyError):
        match_state((375.0, 0.0), [StateRecord(1, (0.0, 0.0), ()), StateRecord(2, (750.0, 0.0), ())],
                    (1000.0, 0.0), (CONT, DISC))


def test_settle_time_examples():
    assert settle_times(np.full(100, 3.0), (3.0,), (1.0,), (CONT,), 1e-3) == (0.0,)
    step = np.where(np.arange(3000) < 199, 0.0, 24.0)
    assert settle_times(step, (24.0,), (0.0,), (DISC,), 1e-3) == (199.0,)
    with pytest.raises(NotSettled):
        settle_times(np.arange(10.0), (20.0,), (0.5,), (CONT,), 1e-3)


@pytest.mark.parametrize("tau", [0.05, 0.1, 0.237])
def test_settle_time_of_saturating_exponential(tau):
    t = np.arange(3001) * 1e-3
    y = 750 * (1 - np.exp(-t / tau))
    crossing = tau * math.log(750.0)  # |y - 750| = 1
    expected = math.ceil(crossing / 1e-3) * 1e-3 * 1000
    assert settle_times(y, (750.0,), (1.0,), (CONT,), 1e-3)[0] == pytest.approx(expected, abs=1e-9)


def test_constant_model_single_state():
    m = ConstantModel()
    cfg = default_config(m)
    d = explore(m, cfg)
    assert len(d.states) == 1
    assert [(t.start_state, t.target_state) for t in d.transitions] == [(0, 1)]
    assert m.steps == len(cfg.combinations(m.inputs)) * cfg.steps_per_hold


def test_pass_through_model():
    d = explore(PassThrough(), default_config(PassThrough()))
    assert [s.stable_outputs for s in d.states] == [(0.0,), (24.0,)]
    assert [(t.start_state, t.inputs, t.target_state) for t in d.transitions] == [
        (0, (0.0,), 1), (1, (24.0,), 2), (2, (0.0,), 1)]
    t12 = d.transition(1, (24.0,))
    assert t12.settle_ms == (1.0,) and t12.trajectories == ((24.0,),)
    assert d.state(2).reach_sequence == ((0.0,), (24.0,))


def test_first_order_settle_time_and_trajectory():
    tau = 0.1
    d = explore(FirstOrder(tau), default_config(FirstOrder(tau)))
    t = d.transition(1, (24.0,))
    expected = math.ceil(tau * math.log(24.0) / 1e-3) * 1.0
    assert t.settle_ms == (expected,)
    k = np.arange(1, len(t.trajectories[0]) + 1)
    np.testing.assert_allclose(t.trajectories[0], 24 * (1 - np.exp(-k * 1e-3 / tau)), rtol=1e-12)


class Ramp(ToyModel):
    def rule(self, state, u, dt):
        return state + u[0] * dt


def test_unstable_outcome_names_state_and_inputs():
    with pytest.raises(UnstableOutcome) as info:
        explore(Ramp(), default_config(Ramp()))
    assert info.value.state == 1 and info.value.inputs == (24.0,)
    assert "settle_time" in str(info.value)


def test_budget_exceeded_carries_partial_result():
    with pytest.raises(BudgetExceeded) as info:
        explore(PassThrough(), ExplorationConfig({"u": (0, 24)}, max_states=1))
    assert len(info.value.partial.states) == 1


def test_config_validation():
    with pytest.raises(ValueError):
        ExplorationConfig({"u": (0,)}, settle_time=0.5, stability_window=0.5)
    with pytest.raises(ValueError):
        ExplorationConfig({"u": ()})
    with pytest.raises(ValueError):
        ExplorationConfig({"u": (0,)}, sample_cycle=0)
    cfg = ExplorationConfig({"a": (0, 1), "b": (0, 2)})
    a, b = Signal("a", SignalKind.DISCRETE), Signal("b", SignalKind.DISCRETE)
    assert cfg.combinations((a, b)) == [(0, 0), (1, 0), (0, 2), (1, 2)]
    assert ExplorationConfig.from_dict(cfg.to_dict()) == cfg


def test_single_valued_input_is_irrelevant(uc1_model):
    cfg = ExplorationConfig({"suction": (0, 24), "blow_off": (0,)}, settle_time=1.5)
    d = explore(uc1_model, cfg)
    assert d.relevant_inputs == ("suction",)
    assert all(t.inputs[1] == 0.0 for t in d.transitions)


def test_use_case_1_structure(uc1_discovery):
    d = uc1_discovery
    assert len(d.states) == 3
    assert {(t.start_state, t.inputs, t.target_state) for t in d.transitions} == TABLE2
    assert d.state(2).reach_sequence == ((0.0, 0.0), (24.0, 0.0))
    assert d.state(3).reach_sequence == ((0.0, 0.0), (0.0, 24.0))
    assert d.state(2).stable_outputs[1] == 24.0
    assert d.state(2).stable_outputs[0] == pytest.approx(750.0, abs=1.0)
    assert d.state(3).stable_outputs[0] == pytest.approx(-12.0, abs=1.0)
    assert check_discovery(d) == []


def test_use_case_1_absorption_and_trajectories(uc1_discovery):
    d = uc1_discovery
    keys = {(t.start_state, t.inputs) for t in d.transitions}
    for t in d.transitions:
        assert (t.target_state, t.inputs) not in keys
        final = d.state(t.target_state).stable_outputs
        for j, traj in enumerate(t.trajectories):
            assert len(traj) == math.ceil(t.settle_ms[j] - 1e-9)
            if traj:
                assert abs(traj[-1] - final[j]) <= d.tolerances[j]


def test_replay_reproduces_states(uc1_model, uc1_discovery):
    d = uc1_discovery
    cfg = d.config
    model, rows = replay(uc1_model, (), cfg)
    assert rows.shape == (1, 2) and rows[0, 0] == 0.0
    for s in d.states:
        _, rows = replay(uc1_model, s.reach_sequence, cfg)
        stable = detect_stable(rows, cfg.sample_cycle, cfg.stability_window, d.tolerances, d.outputs)
        assert stable is not None
        assert np.allclose(stable, s.stable_outputs, atol=1.0)


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_snapshot_replay_and_parallel_agree(seed):
    m = assemble(parse_graph(random_graph(random.Random(seed))))
    cfg = default_config(m, settle_time=1.0, stability_window=0.2)
    a = explore(m, cfg)
    b = explore(m, cfg, use_snapshots=False)
    c = explore(m, cfg, workers=2)
    assert a == b == c


def test_exploration_is_deterministic():
    assert explore(FirstOrder(), default_config(FirstOrder())) == explore(FirstOrder(), default_config(FirstOrder()))


@settings(max_examples=15, deadline=None)
# values at least 3 apart: closer levels fall inside one tolerance band and are ambiguous by design
@given(st.lists(st.integers(0, 20).map(lambda k: 3 * k), min_size=1, max_size=4, unique=True))
def test_enlarging_the_alphabet_keeps_states(extra):
    small = explore(FirstOrder(), ExplorationConfig({"u": (0.0, 24.0)}, settle_time=1.5))
    big = explore(FirstOrder(), ExplorationConfig({"u": tuple(dict.fromkeys([0.0, 24.0, *map(float, extra)]))},
                                                  settle_time=1.5))
    found = [s.stable_outputs[0] for s in big.states]
    for s in small.states:
        assert any(abs(s.stable_outputs[0] - v) <= 1.0 for v in found)
