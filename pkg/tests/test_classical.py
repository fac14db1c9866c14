import math

import numpy as np
import pytest

from qclosest.classical import (
    ClassicalModel,
    CommWeight,
    TieRule,
    classical_integrate,
    classical_rhs,
    instability_gap,
    loglog_slope,
    neighbor_set,
)
from qclosest.dynamics import PhaseState
from qclosest.scenario import example1_state


def test_example_neighbor_set_under_both_rules():
    s = example1_state(0.0)
    for rule in ("lowest_index", "inclusive"):
        np.testing.assert_array_equal(neighbor_set(s, 0, 2, rule), [1, 3])


def test_q_equals_n_minus_one_takes_everyone():
    rng = np.random.default_rng(0)
    s = PhaseState(rng.normal(size=(6, 2)), np.zeros((6, 2)))
    np.testing.assert_array_equal(neighbor_set(s, 2, 5), [0, 1, 3, 4, 5])


def test_equidistant_tie_rules():
    s = PhaseState([[-1.0], [0.0], [1.0]], np.zeros((3, 1)))
    np.testing.assert_array_equal(neighbor_set(s, 1, 1, "lowest_index"), [0])
    np.testing.assert_array_equal(neighbor_set(s, 1, 1, "inclusive"), [0, 2])


def test_self_rank_slot():
    s = example1_state(0.0)
    # self occupies one of the q slots: one neighbor left, tie broken by index
    np.testing.assert_array_equal(neighbor_set(s, 0, 2, rank_self=True), [1])
    with pytest.raises(ValueError):
        neighbor_set(s, 0, 5)
    with pytest.raises(ValueError):
        neighbor_set(s, 0, 1, rank_self=True)


def test_cardinality_invariants_on_random_states():
    rng = np.random.default_rng(1)
    for _ in range(50):
        n = int(rng.integers(3, 12))
        # lattice points make ties common
        s = PhaseState(rng.integers(0, 3, (n, 2)).astype(float), np.zeros((n, 2)))
        q = int(rng.integers(1, n))
        for i in range(n):
            assert neighbor_set(s, i, q, "lowest_index").shape[0] == q
            assert q <= neighbor_set(s, i, q, "inclusive").shape[0] <= n - 1


def test_rhs_hand_evaluations():
    s = example1_state(0.0)
    f = classical_rhs(s, 2, "lowest_index")
    assert f[0, 1] == 0.0
    two = PhaseState([[0.0], [1.0]], [[2.0], [-1.0]])
    f = classical_rhs(two, 1)
    np.testing.assert_allclose(f, [[-3.0], [3.0]])
    same = PhaseState(np.random.default_rng(2).normal(size=(5, 2)), np.ones((5, 2)))
    np.testing.assert_array_equal(classical_rhs(same, 2), np.zeros((5, 2)))


def test_inclusive_rule_divides_by_set_size():
    s = PhaseState([[-1.0], [0.0], [1.0]], [[1.0], [0.0], [3.0]])
    f = classical_rhs(s, 1, "inclusive")
    assert f[1, 0] == pytest.approx(0.5 * (1.0 + 3.0))


def test_communication_weights():
    assert CommWeight.parse("constant_one")(np.array([0.0, 5.0])).tolist() == [1.0, 1.0]
    cs = CommWeight.parse("cs:2")
    assert cs(1.0) == pytest.approx(0.5)
    ex = CommWeight.parse("exp:0.5")
    assert ex(1.0) == pytest.approx(math.exp(-2.0))
    s = np.linspace(0, 10, 50)
    assert np.all(np.diff(cs(s)) <= 0) and np.all(cs(s) <= 1)
    with pytest.raises(ValueError):
        CommWeight.parse("cs:-1")
    with pytest.raises(ValueError):
        TieRule("random")
    two = PhaseState([[0.0], [1.0]], [[1.0], [0.0]])
    np.testing.assert_allclose(classical_rhs(two, 1, weight=ex), [[-math.exp(-2.0)], [math.exp(-2.0)]])


def test_isolated_cluster_moves_rigidly_without_switches():
    rng = np.random.default_rng(3)
    x = rng.uniform(0, 1, (6, 2))
    s = PhaseState(x, np.tile([0.5, 0.2], (6, 1)))
    rec = classical_integrate(ClassicalModel(2), s, 0.01, 1.0)
    assert not [e for e in rec.events if e.kind == "switch"]
    np.testing.assert_allclose(rec.final_state().positions, x + [0.5, 0.2], atol=1e-12)


def test_exact_example_logs_tie_arbitration_and_depends_on_rule():
    s = example1_state(0.0)
    low = classical_integrate(ClassicalModel(2, "lowest_index", rank_self=True), s, 1e-3, 1.0)
    inc = classical_integrate(ClassicalModel(2, "inclusive", rank_self=True), s, 1e-3, 1.0)
    assert low.events and low.events[0].kind == "tie"
    assert low.events[0].old == (1, 3) and low.events[0].new == (1,)
    assert np.abs(low.final_state().positions[0] - inc.final_state().positions[0]).max() > 0.1
    # the lowest-index selection follows the upper pair: v0_y = 1 - exp(-t/2)
    assert low.final_state().velocities[0, 1] == pytest.approx(1 - math.exp(-0.5), abs=1e-3)


def test_rules_agree_without_ties():
    rng = np.random.default_rng(4)
    s = PhaseState(rng.uniform(0, 1, (7, 2)), rng.uniform(-1, 1, (7, 2)))
    a = classical_integrate(ClassicalModel(3, "lowest_index"), s, 1e-3, 0.5)
    b = classical_integrate(ClassicalModel(3, "inclusive"), s, 1e-3, 0.5)
    assert not [e for e in a.events if e.kind == "tie"]
    np.testing.assert_allclose(a.positions, b.positions, atol=1e-9)


def test_switch_log_is_complete():
    rng = np.random.default_rng(5)
    s = PhaseState(rng.uniform(0, 1, (8, 2)), rng.uniform(-1, 1, (8, 2)))
    m = ClassicalModel(2)
    rec = classical_integrate(m, s, 0.01, 2.0, stride=1)
    logged = {(round(e.time, 9), e.particle) for e in rec.events if e.kind == "switch"}
    prev = None
    for k, t in enumerate(rec.times):
        sets, _ = m.neighbors(rec.positions[k])
        if prev is not None:
            for i in range(8):
                if not np.array_equal(prev[i], sets[i]):
                    assert (round(t, 9), i) in logged
        prev = sets


@pytest.mark.parametrize("scheme", ["classical_euler", "rk4"])
def test_max_speed_does_not_grow(scheme):
    rng = np.random.default_rng(6)
    s = PhaseState(rng.uniform(0, 1, (10, 2)), rng.uniform(-1, 1, (10, 2)))
    rec = classical_integrate(ClassicalModel(3), s, 0.01, 3.0, scheme)
    dg = rec.diagnostics
    assert np.all(dg["max_speed"] <= dg["max_speed"][0] + 1e-6)
    assert np.all(dg["hull_violation"] <= 1e-6)


def test_gap_is_zero_at_zero_perturbation_and_bounded_away_otherwise():
    m = ClassicalModel(2, rank_self=True)

    def run(state, t):
        return classical_integrate(m, state, 1e-3, t, stride=1000)

    tab = instability_gap(run, example1_state, [0.0, 1e-3], 1.0)
    assert tab.gaps[0] == 0.0
    assert tab.gaps[1] > 0.1


def test_loglog_slope():
    x = np.array([1e-1, 1e-2, 1e-3])
    assert loglog_slope(x, 3 * x**2) == pytest.approx(2.0)
    assert math.isnan(loglog_slope(x, np.zeros(3)))
