"""The shortcut MDP: a summary of a diagram at the level of its open ends.

Its states are the local entrances, the global exits and a sink ★. An action
at a local entrance is a reachability vector of the component (one entry per
leaf exit); the missing mass goes to ★. A wired exit is identified with its
partner entrance.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .diagram import ComponentIndex, OpenMdp
from .mdp import DmScheduler, Mdp, NumericMode, TargetWeight, mc_reachability, policy_iteration_exact

STAR = "★"


@dataclass
class ShortcutMdp:
    mdp: Mdp
    entrance_state: dict
    global_entrance_states: list
    global_exit_states: list


def build_shortcut(ix: ComponentIndex, actions) -> ShortcutMdp:
    """``actions(c, k)`` lists the vectors available at local entrance (c, k)."""
    entrances = ix.local_entrances
    names = [ix.entrance_name(e) for e in entrances]
    entrance_state = {e: j for j, e in enumerate(entrances)}
    gx = ix.global_exits
    exit_state = {}
    for o in gx:
        exit_state[o] = len(names)
        names.append(ix.exit_name(o))
    star = len(names)
    names.append(STAR)

    def dest(c, j):
        o = (c, j)
        if o in ix.wiring:
            return entrance_state[ix.wiring[o]]
        return exit_state[o]

    trans = []
    for (c, k) in entrances:
        s = entrance_state[(c, k)]
        for a, p in enumerate(actions(c, k)):
            dist = [(dest(c, j), Fraction(x)) for j, x in enumerate(p) if x != 0]
            deficit = 1 - sum((x for _, x in dist), Fraction(0))
            if deficit < 0:
                raise ValueError(f"vector {p} at {names[s]} has mass above 1")
            if deficit:
                dist.append((star, deficit))
            trans.append((s, f"p{a}", dist))
    mdp = Mdp.build(names, trans, NumericMode.EXACT)
    return ShortcutMdp(mdp, entrance_state,
                       [entrance_state[e] for e in ix.global_entrances],
                       [exit_state[o] for o in gx])


def solve_shortcut(sc: ShortcutMdp, w) -> list:
    """Exact optimal weighted values at the global entrances."""
    tw = TargetWeight(tuple(sc.global_exit_states), tuple(Fraction(x) for x in w))
    vals, _ = policy_iteration_exact(sc.mdp, tw, exact=True)
    return [vals[s] for s in sc.global_entrance_states]


def dm_schedulers(mdp: Mdp):
    """Every DM scheduler of a (small) MDP."""
    live = [s for s in range(mdp.n_states) if not mdp.is_sink(s)]
    options = [list(mdp.rows(s)) for s in live]
    for combo in itertools.product(*options):
        rows = np.full(mdp.n_states, -1, dtype=np.int64)
        rows[live] = combo
        yield DmScheduler(rows)


def dm_points(leaf: OpenMdp, k: int) -> list:
    """Exact reachability vectors over the exits, one per DM scheduler, from entrance k."""
    pts = set()
    for sched in dm_schedulers(leaf.mdp):
        row = mc_reachability(leaf.mdp, sched, leaf.exits, [leaf.entrances[k]], exact=True)[0]
        pts.add(tuple(row))
    return sorted(pts)


def explicit_shortcut(ix: ComponentIndex) -> ShortcutMdp:
    """Shortcut MDP with one action per DM scheduler point of each component."""
    memo = {}

    def actions(c, k):
        key = (ix.components[c].leaf, k)
        if key not in memo:
            memo[key] = dm_points(ix.leaf_of(c), k)
        return memo[key]

    return build_shortcut(ix, actions)
