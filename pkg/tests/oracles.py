"""Reference solvers written independently of the package internals.

Everything here works on plain Python dicts and Fractions: brute-force
enumeration of deterministic memoryless schedulers and a dense Gauss-Jordan
solve per scheduler. Only suitable for tiny models.
"""

from __future__ import annotations

import itertools
from fractions import Fraction


def explicit(mdp):
    """{state: [[(dst, prob), ...] per action]} read off an Mdp."""
    out = {}
    for s in range(mdp.n_states):
        acts = []
        for r in mdp.rows(s):
            a, b = int(mdp.indptr[r]), int(mdp.indptr[r + 1])
            acts.append([(int(d), mdp.table[int(c)])
                         for d, c in zip(mdp.indices[a:b], mdp.codes[a:b])])
        out[s] = acts
    return out


def solve_linear(a, b):
    """Gauss-Jordan over Fractions; ``a`` is square and non-singular."""
    n = len(a)
    m = [row[:] + [b[i]] for i, row in enumerate(a)]
    for col in range(n):
        piv = next(r for r in range(col, n) if m[r][col] != 0)
        m[col], m[piv] = m[piv], m[col]
        p = m[col][col]
        m[col] = [x / p for x in m[col]]
        for r in range(n):
            if r != col and m[r][col] != 0:
                f = m[r][col]
                m[r] = [x - f * y for x, y in zip(m[r], m[col])]
    return [m[i][n] for i in range(n)]


def chain_value(model, choice, weights):
    """Weighted reachability under a fixed choice; ``weights`` maps target → weight."""
    states = list(model)
    good = {t for t, w in weights.items() if w > 0}
    # states with a positive path to a positively weighted target
    live = set(good)
    changed = True
    while changed:
        changed = False
        for s in states:
            if s in live or s in weights or choice.get(s) is None:
                continue
            if any(d in live for d, _ in model[s][choice[s]]):
                live.add(s)
                changed = True
    unknown = [s for s in states if s in live and s not in weights]
    pos = {s: i for i, s in enumerate(unknown)}
    a = [[Fraction(0)] * len(unknown) for _ in unknown]
    b = [Fraction(0)] * len(unknown)
    for s in unknown:
        i = pos[s]
        a[i][i] += 1
        for d, p in model[s][choice[s]]:
            if d in weights:
                b[i] += p * weights[d]
            elif d in pos:
                a[i][pos[d]] -= p
    x = solve_linear(a, b) if unknown else []
    val = {s: Fraction(0) for s in states}
    for t, w in weights.items():
        val[t] = Fraction(w)
    for s, i in pos.items():
        val[s] = x[i]
    return val


def choices(model, targets=()):
    movers = [s for s in model if model[s] and s not in targets]
    for combo in itertools.product(*(range(len(model[s])) for s in movers)):
        yield dict(zip(movers, combo))


def brute_force_max(model, weights, sources):
    """max over DM schedulers of the weighted value, per source state."""
    best = [None] * len(sources)
    for ch in choices(model, weights):
        v = chain_value(model, ch, weights)
        for i, s in enumerate(sources):
            if best[i] is None or v[s] > best[i]:
                best[i] = v[s]
    return best


def scheduler_count(mdp) -> int:
    n = 1
    for s in range(mdp.n_states):
        n *= max(1, len(list(mdp.rows(s))))
    return n


def leaf_vectors(leaf, entrance: int):
    """Exit reachability vector from one entrance, for every DM scheduler of a leaf."""
    model = explicit(leaf.mdp)
    exits = list(leaf.exits)
    src = leaf.entrances[entrance]
    out = []
    for ch in choices(model, exits):
        row = []
        for t in exits:
            row.append(chain_value(model, ch, {x: Fraction(int(x == t)) for x in exits})[src])
        out.append((ch, tuple(row)))
    return out


def leaf_values(leaf, exit_weights):
    """Per DM scheduler, the weighted value at every entrance of a leaf."""
    model = explicit(leaf.mdp)
    weights = dict(zip(leaf.exits, exit_weights))
    out = []
    for ch in choices(model, weights):
        v = chain_value(model, ch, weights)
        out.append(tuple(v[e] for e in leaf.entrances))
    return out


def loop_closed_form() -> Fraction:
    """The A⨟B loop by hand.

    y (at B's entrance) = 7/10 + 3/10 · z and z (A's left entrance) = 7/10 · y;
    from A's right entrance the value is 1/2 · y under action a and 0 under b.
    """
    y = Fraction(7, 10) / (1 - Fraction(3, 10) * Fraction(7, 10))
    return max(Fraction(1, 2) * y, Fraction(0))
