"""Benchmark families: grids of rooms, chains of dice or rooms, and random diagrams.

Only the structure of these families is fixed; the numeric dynamics (slip
probabilities, hole counts, dice biases) are configuration and are recorded
in the metadata of every generated model.
"""

from __future__ import annotations

import random
import re
from dataclasses import asdict, dataclass
from fractions import Fraction

from .diagram import Leaf, OpenMdp, Seq, StringDiagram, Sum, dsum, seq
from .mdp import Mdp, NumericMode
from .model_io import Model, Query

FAMILIES = ("rooms", "birooms", "chains", "chainsloop")
CALM, WINDY = Fraction(9, 10), Fraction(7, 10)
SAFE_HOLES, UNSAFE_HOLES = 2, 6
FACES = tuple(range(-2, 4))
START_SCORE = 50
DESK_ROUNDS = 20
DIRS = {"N": (0, 1), "E": (1, 0), "S": (0, -1), "W": (-1, 0)}
LATERAL = {"N": ("E", "W"), "S": ("E", "W"), "E": ("N", "S"), "W": ("N", "S")}


class BenchSpecError(ValueError):
    pass


@dataclass(frozen=True)
class BenchSpec:
    family: str
    n: int
    leaf: str = "rms"
    unsafe: bool = False
    windy: bool = False
    k: int = 2
    rounds: int = DESK_ROUNDS
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise BenchSpecError(f"unknown family {self.family!r}")
        if self.n < 1:
            raise BenchSpecError("size must be at least 1")
        if self.leaf not in ("rms", "rmb", "dice"):
            raise BenchSpecError(f"unknown leaf {self.leaf!r}")
        if self.leaf == "dice":
            if self.k not in (2, 4):
                raise BenchSpecError("dice exit count must be 2 or 4")
            if self.family in ("rooms", "birooms"):
                raise BenchSpecError("grid families need a room leaf")
        if self.rounds < 1:
            raise BenchSpecError("rounds must be at least 1")

    @classmethod
    def parse(cls, text: str, seed: int = 0) -> "BenchSpec":
        """Parse ``family:N:leaf`` such as ``rooms:3:rms-unsafe-windy`` or ``chains:10:dice4-r100``."""
        parts = text.strip().lower().split(":")
        if len(parts) != 3:
            raise BenchSpecError(f"expected family:N:leaf, got {text!r}")
        fam, n, leaf = parts
        try:
            n = int(n)
        except ValueError:
            raise BenchSpecError(f"bad size {n!r}") from None
        tokens = leaf.split("-")
        kw = {}
        m = re.fullmatch(r"(rms|rmb|dice)([24]?)", tokens[0])
        if not m:
            raise BenchSpecError(f"unknown leaf {tokens[0]!r}")
        kw["leaf"] = m.group(1)
        if m.group(2):
            if kw["leaf"] != "dice":
                raise BenchSpecError("exit count applies to dice only")
            kw["k"] = int(m.group(2))
        for t in tokens[1:]:
            if t in ("safe", "unsafe"):
                kw["unsafe"] = t == "unsafe"
            elif t in ("calm", "windy"):
                kw["windy"] = t == "windy"
            elif re.fullmatch(r"r\d+", t):
                kw["rounds"] = int(t[1:])
            else:
                raise BenchSpecError(f"unknown leaf option {t!r}")
        return cls(fam, n, seed=seed, **kw)


PRESETS = {
    "rooms3": "rooms:3:rms",
    "chains10": "chains:10:dice2",
    "chainsloop10": "chainsloop:10:dice2",
}


# --- rooms --------------------------------------------------------------------


def gen_room_leaf(size: int = 7, windy: bool = False, unsafe: bool = False, seed: int = 0,
                  mode: str = "uni") -> OpenMdp:
    """A grid room with edge-centre doors.

    ``mode`` selects the open ends: ``uni`` (enter W/S, leave N/E), ``bi``
    (doors both ways on all four sides), ``chain`` (enter W, leave E, with N
    merged into a pass-through lane) and ``loop`` (``chain`` plus a W exit
    that restarts the chain, with a pass-through for restarts from the right).
    """
    p = WINDY if windy else CALM
    slip = (1 - p) / 2
    c = size // 2
    door_cell = {"N": (c, size - 1), "S": (c, 0), "E": (size - 1, c), "W": (0, c)}
    rng = random.Random(seed)
    doors = set(door_cell.values())
    free = [(x, y) for x in range(size) for y in range(size) if (x, y) not in doors]
    holes = set(rng.sample(free, min(len(free), UNSAFE_HOLES if unsafe else SAFE_HOLES)))

    if mode == "uni":
        ins, outs = ["W", "S"], ["N", "E"]
    elif mode == "bi":
        ins, outs = ["W", "S", "N", "E"], ["N", "E", "W", "S"]
    elif mode == "chain":
        ins, outs = ["W"], ["E", "N"]
    elif mode == "loop":
        ins, outs = ["W"], ["E", "N", "W"]
    else:
        raise BenchSpecError(f"unknown room mode {mode!r}")

    def cell(x, y):
        return f"c{x}_{y}"

    states = [cell(x, y) for y in range(size) for x in range(size)]
    states += [f"in_{d}" for d in ins] + [f"out_{d}" for d in outs]
    trans = []
    for d in ins:
        trans.append((f"in_{d}", "enter", [(cell(*door_cell[d]), 1)]))
    for y in range(size):
        for x in range(size):
            s = cell(x, y)
            if (x, y) in holes:
                for a in DIRS:
                    trans.append((s, a, [(s, 1)]))
                continue
            for a in DIRS:
                dist = {}
                for d, q in ((a, p), (LATERAL[a][0], slip), (LATERAL[a][1], slip)):
                    dx, dy = DIRS[d]
                    nx, ny = x + dx, y + dy
                    if 0 <= nx < size and 0 <= ny < size:
                        tgt = cell(nx, ny)
                    elif (x, y) == door_cell[d] and d in outs:
                        tgt = f"out_{d}"
                    else:
                        tgt = s
                    dist[tgt] = dist.get(tgt, 0) + q
                trans.append((s, a, list(dist.items())))
    if mode in ("chain", "loop"):
        states.append("lane_in")
        trans.append(("lane_in", "pass", [("out_N", 1)]))
    if mode == "loop":
        states.append("back_in")
        trans.append(("back_in", "pass", [("out_W", 1)]))
    mdp = Mdp.build(states, trans, NumericMode.EXACT)
    if mode == "uni":
        return OpenMdp(mdp, ["in_W", "in_S"], [], ["out_N", "out_E"], [])
    if mode == "bi":
        return OpenMdp(mdp, ["in_W", "in_S"], ["in_N", "in_E"], ["out_N", "out_E"],
                       ["out_W", "out_S"])
    if mode == "chain":
        return OpenMdp(mdp, ["in_W", "lane_in"], [], ["out_E", "out_N"], [])
    return OpenMdp(mdp, ["in_W", "lane_in"], ["back_in"], ["out_E", "out_N"], ["out_W"])


# --- dice -----------------------------------------------------------------------


def dice_profiles(seed: int = 0, count: int = 3) -> list:
    """Seeded biased dice over the faces -2..+3 with rational probabilities."""
    rng = random.Random(seed)
    dice = []
    for _ in range(count):
        w = [rng.randint(1, 10) for _ in FACES]
        tot = sum(w)
        dice.append({f: Fraction(x, tot) for f, x in zip(FACES, w)})
    return dice


def band(score: int, k: int) -> int:
    """Band index of a final score: k equal slices of 0..100, top slice closed."""
    width = 100 // k if k == 4 else 50
    return min(score // width, k - 1)


def gen_dice_leaf(k: int = 2, rounds: int = DESK_ROUNDS, seed: int = 0, dice=None,
                  mode: str = "plain", start: int = START_SCORE) -> OpenMdp:
    """A dice game: each round pick one of three dice and add its face to the score.

    The score is clamped to 0..100; after the last round the game leaves
    through the exit of the band the score lies in. ``mode`` is ``plain``
    (one entrance, k exits), ``chain`` (top band continues, lower bands join
    pass-through lanes) or ``loop`` (as ``chain`` but the lowest band is a
    restart exit to the left with its own pass-through).
    """
    if k not in (2, 4):
        raise BenchSpecError("dice exit count must be 2 or 4")
    dice = dice if dice is not None else dice_profiles(seed)
    bands = [f"band{j}" for j in range(k)]
    layer = {start}
    states = []
    trans = []
    for r in range(rounds):
        nxt = set()
        for s in sorted(layer):
            name = f"r{r}_s{s}"
            states.append(name)
            for a, die in enumerate(dice):
                dist = {}
                for f, q in die.items():
                    if q == 0:
                        continue
                    t = max(0, min(100, s + f))
                    nxt.add(t)
                    dist[t] = dist.get(t, 0) + q
                trans.append((name, f"die{a}", [(f"r{r + 1}_s{t}", q) for t, q in dist.items()]))
        layer = nxt
    for s in sorted(layer):
        name = f"r{rounds}_s{s}"
        states.append(name)
        trans.append((name, "stop", [(bands[band(s, k)], 1)]))
    states += bands
    entry = f"r0_s{start}"
    if mode == "plain":
        mdp = Mdp.build(states, trans, NumericMode.EXACT)
        return OpenMdp(mdp, [entry], [], bands, [])
    main = bands[-1]
    if mode == "chain":
        fails = bands[:-1]
        restart = None
    elif mode == "loop":
        fails = bands[1:-1]
        restart = bands[0]
    else:
        raise BenchSpecError(f"unknown dice mode {mode!r}")
    lanes = [f"lane{j}" for j in range(len(fails))]
    for ln, f in zip(lanes, fails):
        states.append(ln)
        trans.append((ln, "pass", [(f, 1)]))
    if restart is not None:
        states.append("back_in")
        trans.append(("back_in", "pass", [(restart, 1)]))
    mdp = Mdp.build(states, trans, NumericMode.EXACT)
    if restart is None:
        return OpenMdp(mdp, [entry] + lanes, [], [main] + fails, [])
    return OpenMdp(mdp, [entry] + lanes, ["back_in"], [main] + fails, [restart])


# --- plumbing ---------------------------------------------------------------------


def _source(bi: bool) -> OpenMdp:
    """Supplies a wire nobody feeds: a lone right exit (and a dead-end left entrance)."""
    if not bi:
        return OpenMdp(Mdp.build(["out"], [], NumericMode.EXACT), [], [], ["out"], [])
    mdp = Mdp.build(["out", "back"], [("back", "stay", [("back", 1)])], NumericMode.EXACT)
    return OpenMdp(mdp, [], ["back"], ["out"], [])


def _drain(bi: bool) -> OpenMdp:
    """Swallows a wire that leads nowhere."""
    if not bi:
        mdp = Mdp.build(["in"], [("in", "stay", [("in", 1)])], NumericMode.EXACT)
        return OpenMdp(mdp, ["in"], [], [], [])
    mdp = Mdp.build(["in", "ret"], [("in", "stay", [("in", 1)])], NumericMode.EXACT)
    return OpenMdp(mdp, ["in"], [], [], ["ret"])


def _junction(width: int) -> OpenMdp:
    """Front of a looping chain: both the start and restarts lead to the first cell."""
    lanes = [f"lane{j}" for j in range(width - 1)]
    states = ["begin", "back", "start"] + lanes
    trans = [("begin", "go", [("start", 1)]), ("back", "go", [("start", 1)])]
    mdp = Mdp.build(states, trans, NumericMode.EXACT)
    return OpenMdp(mdp, ["begin"], ["back"], ["start"] + lanes, [])


# --- diagrams ------------------------------------------------------------------------


def _grid(spec: BenchSpec):
    n, bi = spec.n, spec.family == "birooms"
    size = 101 if spec.leaf == "rmb" else 7
    room = gen_room_leaf(size, spec.windy, spec.unsafe, spec.seed, "bi" if bi else "uni")
    leaves = {"room": room}
    plumbing = 0
    terms = []
    for d in range(2 * n - 1):
        parts = []
        rooms = [x for x in range(max(0, d - n + 1), min(d, n - 1) + 1)]
        for x in rooms:
            parts.append((x, 1, Leaf("room")))
        if d + 1 <= 2 * n - 2:
            nxt = [x for x in range(max(0, d + 2 - n), min(d + 1, n - 1) + 1)]
            produced = set()
            for x in rooms:
                produced.update((2 * x, 2 * x + 1))
            consumed = set()
            for x in nxt:
                consumed.update((2 * x - 1, 2 * x))
            for pos in sorted(consumed - produced):
                parts.append((pos / 2, 0, Leaf("src")))
                plumbing += 1
        if d > 0:
            prev = [x for x in range(max(0, d - 1 - n + 1), min(d - 1, n - 1) + 1)]
            produced = set()
            for x in prev:
                produced.update((2 * x, 2 * x + 1))
            consumed = set()
            for x in rooms:
                consumed.update((2 * x - 1, 2 * x))
            for pos in sorted(produced - consumed):
                parts.append((pos / 2, 2, Leaf("drain")))
                plumbing += 1
        parts.sort(key=lambda t: (t[0], t[1]))
        terms.append(dsum(*[t[2] for t in parts]))
    if plumbing:
        leaves["src"] = _source(bi)
        leaves["drain"] = _drain(bi)
    root = seq(*terms)
    last = n * n
    query = Query(entrance="room#1/in_W", goal=f"room#{last}/out_E")
    counts = {"model_occurrences": n * n, "model_leaves": 1, "plumbing_occurrences": plumbing}
    return StringDiagram(root, leaves), query, counts


def _chain(spec: BenchSpec):
    n, loop = spec.n, spec.family == "chainsloop"
    mode = "loop" if loop else "chain"
    if spec.leaf == "dice":
        cell = gen_dice_leaf(spec.k, spec.rounds, spec.seed, mode=mode)
        entry, goal = "r0_s%d" % START_SCORE, f"band{spec.k - 1}"
    else:
        size = 101 if spec.leaf == "rmb" else 7
        cell = gen_room_leaf(size, spec.windy, spec.unsafe, spec.seed, mode)
        entry, goal = "in_W", "out_E"
    leaves = {"cell": cell}
    parts = [Leaf("cell")] * n
    plumbing = 0
    if loop:
        leaves["junction"] = _junction(len(cell.right_entrances))
        parts = [Leaf("junction")] + parts
        plumbing = 1
        query = Query(entrance="junction#1/begin", goal=f"cell#{n}/{goal}")
    else:
        query = Query(entrance=f"cell#1/{entry}", goal=f"cell#{n}/{goal}")
    counts = {"model_occurrences": n, "model_leaves": 1, "plumbing_occurrences": plumbing}
    return StringDiagram(seq(*parts), leaves), query, counts


def gen_diagram(spec: BenchSpec) -> Model:
    """Diagram, goal query and metadata for a benchmark instance."""
    if spec.family in ("rooms", "birooms"):
        d, query, counts = _grid(spec)
    else:
        d, query, counts = _chain(spec)
    ix = d.index
    sizes = sum(ix.leaf_of(c.id).n_states for c in ix.components)
    counts = dict(counts, components=len(ix.components), wiring=len(ix.wiring),
                  flat_states=sizes - len(ix.wiring))
    dynamics = {
        "intended_move": str(WINDY if spec.windy else CALM),
        "holes": UNSAFE_HOLES if spec.unsafe else SAFE_HOLES,
        "faces": list(FACES),
        "start_score": START_SCORE,
    }
    meta = {"spec": asdict(spec), "seed": spec.seed, "counts": counts, "dynamics": dynamics}
    return Model(d, query, meta, NumericMode.EXACT)


# --- random small diagrams for testing ----------------------------------------------


def random_leaf(rng: random.Random, arity, max_states: int = 20, max_actions: int = 2,
                max_internal: int | None = None, absorbing: bool = True) -> OpenMdp:
    """A random open MDP of the given arity with probabilities in tenths."""
    (ri, lx), (rx, li) = arity
    n_ends = ri + lx + rx + li
    hi = max(1, max_states - n_ends)
    if max_internal is not None:
        hi = min(hi, max_internal)
    internal = rng.randint(1, hi)
    names = ([f"ri{j}" for j in range(ri)] + [f"li{j}" for j in range(li)]
             + [f"s{j}" for j in range(internal)]
             + [f"ro{j}" for j in range(rx)] + [f"lo{j}" for j in range(lx)])
    exits = set(names[ri + li + internal:])
    movers = names[:ri + li + internal]
    trans = []
    for s in movers:
        if absorbing and s.startswith("s") and rng.random() < 0.1:
            continue
        for a in range(rng.randint(1, max_actions)):
            m = rng.randint(1, 3)
            dests = [rng.choice(names) for _ in range(m)]
            cuts = sorted(rng.sample(range(1, 10), m - 1)) if m > 1 else []
            tenths = [b - a_ for a_, b in zip([0] + cuts, cuts + [10])]
            dist = {}
            for dst, t in zip(dests, tenths):
                dist[dst] = dist.get(dst, 0) + Fraction(t, 10)
            trans.append((s, f"a{a}", list(dist.items())))
    mdp = Mdp.build(names, trans, NumericMode.EXACT)
    return OpenMdp(mdp, [f"ri{j}" for j in range(ri)], [f"li{j}" for j in range(li)],
                   [f"ro{j}" for j in range(rx)], [f"lo{j}" for j in range(lx)])


def random_diagram(seed: int, max_components: int = 4, max_states: int = 20,
                   max_exits: int = 2, max_actions: int = 2, bidirectional: bool = True,
                   max_internal: int | None = None, reuse: float = 0.5):
    """A seeded random diagram mixing ⨟ and ⊕ with at most ``max_components`` leaves.

    Returns (diagram, weights aligned with the global exits).
    """
    rng = random.Random(seed)
    leaves = {}
    by_arity = {}

    def make_leaf(arity):
        pool = by_arity.get(arity, [])
        if pool and rng.random() < reuse:
            return Leaf(rng.choice(pool))
        name = f"L{len(leaves)}"
        leaves[name] = random_leaf(rng, arity, max_states, max_actions, max_internal)
        by_arity.setdefault(arity, []).append(name)
        return Leaf(name)

    def build(arity, budget):
        (a, b), (c, d) = arity
        if budget == 1 or rng.random() < 0.25:
            return make_leaf(arity)
        left_budget = rng.randint(1, budget - 1)
        if rng.random() < 0.6:
            # middle wires: right-going m1 and left-going m2, keeping exits per side ≤ max_exits
            m1 = rng.randint(0, max_exits - b) if max_exits > b else 0
            m2 = rng.randint(0, max_exits - c) if bidirectional and max_exits > c else 0
            if m1 + m2 == 0:
                m1 = 1 if b < max_exits else 0
            if m1 + m2 == 0:
                return make_leaf(arity)
            return Seq((build(((a, b), (m1, m2)), left_budget),
                        build(((m1, m2), (c, d)), budget - left_budget)))
        a1, b1 = rng.randint(0, a), rng.randint(0, b)
        c1, d1 = rng.randint(0, c), rng.randint(0, d)
        return Sum((build(((a1, b1), (c1, d1)), left_budget),
                    build(((a - a1, b - b1), (c - c1, d - d1)), budget - left_budget)))

    while True:
        a = rng.randint(1, 2)
        b = rng.randint(0, 1) if bidirectional else 0
        c = rng.randint(1, max_exits - b)
        d = rng.randint(0, 1) if bidirectional else 0
        root = build(((a, b), (c, d)), rng.randint(1, max_components))
        diagram = StringDiagram(root, dict(leaves))
        used = {c_.leaf for c_ in diagram.index.components}
        diagram = StringDiagram(root, {k: v for k, v in leaves.items() if k in used})
        exits = diagram.index.global_exits
        if exits:
            break
        leaves.clear()
        by_arity.clear()
    weights = [Fraction(rng.randint(0, 10), 10) for _ in exits]
    if not any(weights):
        weights[0] = Fraction(1)
    return diagram, weights
