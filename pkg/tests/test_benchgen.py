from fractions import Fraction

import pytest

from compvi.benchgen import (
    PRESETS, BenchSpec, BenchSpecError, band, dice_profiles, gen_diagram, gen_dice_leaf,
    gen_room_leaf, random_diagram,
)
from compvi.diagram import validate_arities
from compvi.engine import exact_values
from compvi.model_io import dump_model


def test_spec_parsing():
    s = BenchSpec.parse("rooms:3:rms-unsafe-windy")
    assert (s.family, s.n, s.leaf, s.unsafe, s.windy) == ("rooms", 3, "rms", True, True)
    s = BenchSpec.parse("chains:10:dice4-r50")
    assert (s.leaf, s.k, s.rounds) == ("dice", 4, 50)
    for bad in ("rooms:3", "cubes:3:rms", "rooms:x:rms", "rooms:3:dice2", "chains:3:dice3",
                "rooms:3:rms-foggy", "rooms:0:rms"):
        with pytest.raises(BenchSpecError):
            BenchSpec.parse(bad)


def test_presets_parse():
    for text in PRESETS.values():
        BenchSpec.parse(text)


def test_generation_is_deterministic():
    a = dump_model(gen_diagram(BenchSpec.parse("rooms:2:rms-unsafe", seed=4)))
    b = dump_model(gen_diagram(BenchSpec.parse("rooms:2:rms-unsafe", seed=4)))
    assert a == b
    assert dice_profiles(1) == dice_profiles(1)
    assert random_diagram(5)[1] == random_diagram(5)[1]


def test_room_leaf_shape():
    calm = gen_room_leaf(7)
    assert calm.arity == ((2, 0), (2, 0))
    assert calm.n_states == 49 + 4
    bi = gen_room_leaf(7, mode="bi")
    assert bi.arity == ((2, 2), (2, 2))


def test_windy_rooms_move_less_reliably():
    m = gen_room_leaf(7, windy=True).mdp
    s = m.state("c3_3")
    r = next(r for r in m.rows(s) if m.action_label(r) == "N")
    assert max(p for _, p in m.successors(r)) == Fraction(7, 10)


def test_dice_bands():
    assert [band(s, 2) for s in (0, 49, 50, 100)] == [0, 0, 1, 1]
    assert [band(s, 4) for s in (0, 24, 25, 75, 100)] == [0, 0, 1, 3, 3]
    leaf = gen_dice_leaf(k=2, rounds=3)
    assert leaf.mdp.names[leaf.entrances[0]] == "r0_s50"
    assert [leaf.mdp.names[x] for x in leaf.exits] == ["band0", "band1"]


def test_dice_exit_probabilities_sum_to_one():
    leaf = gen_dice_leaf(k=4, rounds=4)
    for w in ([1, 1, 1, 1],):
        from compvi.mdp import TargetWeight, policy_iteration_exact
        tw = TargetWeight(tuple(leaf.exits), tuple(Fraction(x) for x in w))
        vals, _ = policy_iteration_exact(leaf.mdp, tw, exact=True)
        assert vals[leaf.entrances[0]] == 1


@pytest.mark.parametrize("text", ["rooms:3:rms", "birooms:2:rms", "chains:4:dice2",
                                  "chainsloop:4:dice4-r5", "chainsloop:3:rms"])
def test_generated_diagrams_are_well_formed(text):
    m = gen_diagram(BenchSpec.parse(text))
    assert validate_arities(m.diagram) == []
    ix = m.diagram.index
    w = m.query.resolve_weights(ix.global_exit_names())
    assert m.query.entrance in ix.global_entrance_names()
    assert sum(w) == 1


def test_rooms_counts_closed_form():
    for n in (1, 2, 5):
        c = gen_diagram(BenchSpec.parse(f"rooms:{n}:rms")).metadata["counts"]
        assert c["model_occurrences"] == n * n and c["model_leaves"] == 1


def test_random_diagrams_respect_limits():
    for seed in range(30):
        d, w = random_diagram(seed)
        ix = d.index
        assert len(ix.components) <= 4
        for c in ix.components:
            leaf = ix.leaf_of(c.id)
            assert leaf.n_states <= 20 and len(leaf.exits) <= 2
        assert len(w) == len(ix.global_exits)
        assert all(0 <= x <= 1 for x in exact_values(d, w))
