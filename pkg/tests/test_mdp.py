from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from compvi.mdp import (
    DmScheduler, Mdp, MdpError, NumericMode, TargetWeight, bellman_apply, chain_values,
    greedy_scheduler, mc_reachability, ovi_solve, parse_probability, policy_iteration_exact,
    value_iterate, verify_upper,
)

import oracles


def small():
    # s0 picks between a safe 1/2 and a gamble with a loop back
    return Mdp.build(
        ["s0", "s1", "goal", "fail"],
        [
            ("s0", "safe", [("goal", "1/2"), ("fail", "1/2")]),
            ("s0", "risk", [("s1", "1")]),
            ("s1", "go", [("goal", "3/5"), ("s0", "1/5"), ("fail", "1/5")]),
        ],
        NumericMode.EXACT,
    )


def test_parse_probability_forms():
    assert parse_probability("3/10") == Fraction(3, 10)
    assert parse_probability("0.25") == Fraction(1, 4)
    assert parse_probability(1) == 1
    with pytest.raises(MdpError):
        parse_probability("abc")


def test_build_rejects_bad_distribution():
    with pytest.raises(MdpError):
        Mdp.build(["a", "b"], [("a", "x", [("b", "1/2")])], NumericMode.EXACT)
    with pytest.raises(MdpError):
        Mdp.build(["a"], [("a", "x", [("zz", "1")])], NumericMode.EXACT)
    with pytest.raises(MdpError):
        Mdp.build(["a", "a"], [], NumericMode.EXACT)


def test_exact_probabilities_are_kept():
    m = small()
    assert Fraction(3, 5) in m.table
    assert m.n_states == 4 and m.n_rows == 3
    assert m.is_sink(m.state("goal"))


def test_empty_max_is_zero():
    m = small()
    tw = TargetWeight.of(m, {"goal": 1})
    f = np.full(4, 0.7)
    out = bellman_apply(m, tw, f)
    assert out[m.state("fail")] == 0.0
    assert out[m.state("goal")] == 1.0


def test_exact_and_float_bellman_agree():
    m = small()
    tw = TargetWeight.of(m, {"goal": Fraction(1)})
    f = [Fraction(1, 3), Fraction(2, 3), Fraction(1), Fraction(0)]
    ex = bellman_apply(m, tw, f)
    fl = bellman_apply(m, tw, np.array([float(x) for x in f]))
    assert np.allclose([float(x) for x in ex], fl)


def test_value_iteration_is_monotone_from_bottom():
    m = small()
    tw = TargetWeight.of(m, {"goal": 1})
    prev = np.zeros(4)
    for k in range(1, 20):
        cur = value_iterate(m, tw, np.zeros(4), k)
        assert np.all(cur >= prev - 1e-15)
        prev = cur


def test_policy_iteration_matches_closed_form():
    # risk: x = 3/5 + 1/5 x → x = 3/4 beats the safe 1/2
    m = small()
    tw = TargetWeight.of(m, {"goal": 1})
    vals, sched = policy_iteration_exact(m, tw, exact=True)
    assert vals[m.state("s0")] == Fraction(3, 4)
    assert m.action_label(sched.rows[m.state("s0")]) == "risk"


def test_ovi_brackets_the_value():
    m = small()
    tw = TargetWeight.of(m, {"goal": 1})
    res = ovi_solve(m, tw, 1e-6)
    assert res.converged
    s0 = m.state("s0")
    assert res.lower[s0] <= 0.75 <= res.upper[s0]
    assert res.upper[s0] - res.lower[s0] <= 1e-6
    assert verify_upper(m, tw, res.upper)


def test_ovi_converges_on_end_components():
    # a and b can cycle forever; leaving pays 1/2
    m = Mdp.build(
        ["a", "b", "t", "z"],
        [
            ("a", "loop", [("b", "1")]),
            ("b", "loop", [("a", "1")]),
            ("b", "leave", [("t", "1/2"), ("z", "1/2")]),
            ("a", "slow", [("a", "9/10"), ("t", "1/20"), ("z", "1/20")]),
        ],
        NumericMode.EXACT,
    )
    tw = TargetWeight.of(m, {"t": 1})
    res = ovi_solve(m, tw, 1e-6)
    assert res.converged
    assert abs(res.lower[0] - 0.5) < 1e-6 and res.upper[0] >= 0.5
    order, starts = m.mec_groups
    assert sorted(order.tolist()) == [0, 1] and len(starts) == 1


def test_chain_values_several_columns():
    m = small()
    sched = DmScheduler.from_choice(m, {"s0": "risk", "s1": "go"})
    cols = chain_values(m, sched, [m.state("goal"), m.state("fail")],
                        [[1, 0], [0, 1]], exact=True)
    assert cols[0] == [Fraction(3, 4), Fraction(1, 4)]
    reach = mc_reachability(m, sched, [m.state("goal")], [0], exact=True)
    assert reach[0][0] == Fraction(3, 4)


def test_greedy_scheduler_avoids_zero_loops():
    m = Mdp.build(
        ["s", "t"],
        [("s", "stay", [("s", "1")]), ("s", "go", [("t", "1")])],
        NumericMode.EXACT,
    )
    tw = TargetWeight.of(m, {"t": 1})
    sched = greedy_scheduler(m, tw, np.array([1.0, 1.0]))
    assert m.action_label(sched.rows[0]) == "go"


@st.composite
def random_mdp(draw):
    n = draw(st.integers(2, 5))
    names = [f"s{i}" for i in range(n)] + ["t", "z"]
    trans = []
    for i in range(n):
        for a in range(draw(st.integers(0, 2))):
            dests = draw(st.lists(st.sampled_from(names), min_size=1, max_size=3))
            cuts = sorted(draw(st.lists(st.integers(1, 9), min_size=len(dests) - 1,
                                        max_size=len(dests) - 1)))
            parts = [b - a_ for a_, b in zip([0] + cuts, cuts + [10])]
            dist = {}
            for d, p in zip(dests, parts):
                dist[d] = dist.get(d, Fraction(0)) + Fraction(p, 10)
            trans.append((f"s{i}", f"a{a}", [(d, p) for d, p in dist.items() if p]))
    w = draw(st.sampled_from([Fraction(1), Fraction(1, 2), Fraction(3, 10)]))
    return Mdp.build(names, trans, NumericMode.EXACT), w


@settings(max_examples=60, deadline=None)
@given(random_mdp())
def test_policy_iteration_against_brute_force(case):
    m, w = case
    tw = TargetWeight.of(m, {"t": w, "z": 0})
    vals, _ = policy_iteration_exact(m, tw, exact=True)
    ref = oracles.brute_force_max(oracles.explicit(m), {m.state("t"): w, m.state("z"): 0},
                                  list(range(m.n_states)))
    assert vals == ref


@settings(max_examples=60, deadline=None)
@given(random_mdp())
def test_ovi_is_sound_on_random_models(case):
    m, w = case
    tw = TargetWeight.of(m, {"t": float(w), "z": 0.0})
    vals, _ = policy_iteration_exact(m, TargetWeight.of(m, {"t": w, "z": 0}), exact=True)
    res = ovi_solve(m, tw, 1e-6)
    assert res.converged
    for lo, up, v in zip(res.lower, res.upper, vals):
        assert lo <= float(v) + 1e-12
        assert float(v) <= up + 1e-12
