"""Open MDPs, string diagrams over them, and their flat semantics."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, Union

import numpy as np

from .mdp import Mdp, MdpError, NumericMode


class CompositionError(ValueError):
    """Arity mismatch or unresolved leaf."""


@dataclass(frozen=True, eq=False)
class OpenMdp:
    """An MDP with ordered right/left entrances and exits (state indices)."""

    mdp: Mdp
    right_entrances: tuple = ()
    left_entrances: tuple = ()
    right_exits: tuple = ()
    left_exits: tuple = ()

    def __post_init__(self):
        for attr in ("right_entrances", "left_entrances", "right_exits", "left_exits"):
            object.__setattr__(self, attr, tuple(self.mdp.state(s) for s in getattr(self, attr)))
        ends = self.entrances + self.exits
        if len(set(ends)) != len(ends):
            raise MdpError("open ends must be pairwise distinct")
        for o in self.exits:
            if not self.mdp.is_sink(o):
                raise MdpError(f"exit {self.mdp.names[o]!r} is not a sink")

    @property
    def entrances(self) -> tuple:
        """Right entrances followed by left entrances."""
        return self.right_entrances + self.left_entrances

    @property
    def exits(self) -> tuple:
        """Right exits followed by left exits."""
        return self.right_exits + self.left_exits

    @property
    def arity(self):
        return ((len(self.right_entrances), len(self.left_exits)),
                (len(self.right_exits), len(self.left_entrances)))

    @property
    def n_states(self) -> int:
        return self.mdp.n_states

    def entrance_names(self):
        return [self.mdp.names[i] for i in self.entrances]

    def exit_names(self):
        return [self.mdp.names[o] for o in self.exits]


# --- syntax ------------------------------------------------------------------


@dataclass(frozen=True)
class Leaf:
    name: str


@dataclass(frozen=True)
class Seq:
    """Sequential composition, read as a left fold over ``parts``."""

    parts: tuple


@dataclass(frozen=True)
class Sum:
    """Sum, read as a left fold over ``parts``."""

    parts: tuple


Term = Union[Leaf, Seq, Sum]


def seq(*parts) -> Term:
    parts = tuple(Leaf(p) if isinstance(p, str) else p for p in parts)
    return parts[0] if len(parts) == 1 else Seq(parts)


def dsum(*parts) -> Term:
    parts = tuple(Leaf(p) if isinstance(p, str) else p for p in parts)
    return parts[0] if len(parts) == 1 else Sum(parts)


@dataclass(frozen=True)
class ArityError:
    path: str
    left: tuple
    right: tuple

    def __str__(self):
        return (f"{self.path}: arity mismatch {_fmt(self.left)} ⨟ {_fmt(self.right)}")


def _fmt(ar):
    (a, b), (c, d) = ar
    return f"({a},{b})→({c},{d})"


@dataclass(eq=False)
class StringDiagram:
    """A term together with the table its leaf names resolve against."""

    root: Term
    leaves: Mapping[str, OpenMdp]

    def validate(self) -> list:
        return validate_arities(self)

    @cached_property
    def index(self) -> "ComponentIndex":
        return index(self)


def _leaf_names(term):
    stack = [term]
    while stack:
        t = stack.pop()
        if isinstance(t, Leaf):
            yield t.name
        else:
            stack.extend(reversed(t.parts))


def validate_arities(d: StringDiagram) -> list:
    """Every arity mismatch (and unknown leaf) in the term, with its path."""
    errors = []

    def arity(t, path):
        if isinstance(t, Leaf):
            leaf = d.leaves.get(t.name)
            if leaf is None:
                errors.append(f"{path}: unknown leaf {t.name!r}")
                return None
            return leaf.arity
        kind = "seq" if isinstance(t, Seq) else "sum"
        ars = [arity(p, f"{path}.{kind}[{k}]") for k, p in enumerate(t.parts)]
        acc = ars[0]
        for k in range(1, len(ars)):
            nxt = ars[k]
            if acc is None or nxt is None:
                acc = None
                continue
            if isinstance(t, Seq):
                if acc[1] != nxt[0]:
                    sub = path if len(ars) == 2 else f"{path}.seq[{k - 1}:{k + 1}]"
                    errors.append(ArityError(sub, acc, nxt))
                    acc = None
                    continue
                acc = (acc[0], nxt[1])
            else:
                acc = ((acc[0][0] + nxt[0][0], acc[0][1] + nxt[0][1]),
                       (acc[1][0] + nxt[1][0], acc[1][1] + nxt[1][1]))
        return acc

    arity(d.root, "root")
    return errors


def diagram_arity(d: StringDiagram):
    errs = validate_arities(d)
    if errs:
        raise CompositionError("; ".join(str(e) for e in errs))
    ix = d.index
    return ((len(ix.right_entrances), len(ix.left_exits)),
            (len(ix.right_exits), len(ix.left_entrances)))


# --- indexing ----------------------------------------------------------------


@dataclass(frozen=True)
class Component:
    """One occurrence of a leaf in the term."""

    id: int
    leaf: str
    occurrence: int

    @property
    def label(self) -> str:
        return f"{self.leaf}#{self.occurrence}"


@dataclass(eq=False)
class ComponentIndex:
    """Components, local and global open ends, and the wiring between them.

    Local entrances are pairs ``(component id, k)`` where ``k`` indexes the
    leaf's ``entrances``; local exits likewise index the leaf's ``exits``.
    """

    components: list
    leaves: dict
    right_entrances: list
    left_entrances: list
    right_exits: list
    left_exits: list
    wiring: dict
    topo_order: list
    partner_of: dict = field(default_factory=dict)

    @property
    def global_entrances(self) -> list:
        return self.right_entrances + self.left_entrances

    @property
    def global_exits(self) -> list:
        return self.right_exits + self.left_exits

    @property
    def local_entrances(self) -> list:
        return [(c.id, k) for c in self.components
                for k in range(len(self.leaves[c.leaf].entrances))]

    @property
    def local_exits(self) -> list:
        return [(c.id, k) for c in self.components
                for k in range(len(self.leaves[c.leaf].exits))]

    def leaf_of(self, c: int) -> OpenMdp:
        return self.leaves[self.components[c].leaf]

    def entrance_name(self, end) -> str:
        c, k = end
        leaf = self.leaf_of(c)
        return f"{self.components[c].label}/{leaf.mdp.names[leaf.entrances[k]]}"

    def exit_name(self, end) -> str:
        c, k = end
        leaf = self.leaf_of(c)
        return f"{self.components[c].label}/{leaf.mdp.names[leaf.exits[k]]}"

    def global_entrance_names(self) -> list:
        return [self.entrance_name(e) for e in self.global_entrances]

    def global_exit_names(self) -> list:
        return [self.exit_name(e) for e in self.global_exits]


def index(d: StringDiagram) -> ComponentIndex:
    """Enumerate occurrences left to right and wire their open ends."""
    errs = validate_arities(d)
    if errs:
        raise CompositionError("; ".join(str(e) for e in errs))
    components = []
    counts = {}
    wiring = {}

    def walk(t):
        if isinstance(t, Leaf):
            counts[t.name] = counts.get(t.name, 0) + 1
            c = len(components)
            components.append(Component(c, t.name, counts[t.name]))
            leaf = d.leaves[t.name]
            nri, nli = len(leaf.right_entrances), len(leaf.left_entrances)
            nrx, nlx = len(leaf.right_exits), len(leaf.left_exits)
            return ([(c, j) for j in range(nri)], [(c, nri + j) for j in range(nli)],
                    [(c, j) for j in range(nrx)], [(c, nrx + j) for j in range(nlx)])
        acc = walk(t.parts[0])
        for p in t.parts[1:]:
            nxt = walk(p)
            if isinstance(t, Seq):
                ri, li, rx, lx = acc
                ri2, li2, rx2, lx2 = nxt
                for o, i in zip(rx, ri2):
                    wiring[o] = i
                for o, i in zip(lx2, li):
                    wiring[o] = i
                acc = (ri, li2, rx2, lx)
            else:
                acc = tuple(a + b for a, b in zip(acc, nxt))
        return acc

    # the walk recurses only along nesting depth, which n-ary nodes keep small
    ri, li, rx, lx = walk(d.root)
    partner_of = {i: o for o, i in wiring.items()}
    used = {c.leaf: d.leaves[c.leaf] for c in components}
    topo = [c.id for c in reversed(components)]
    return ComponentIndex(components, used, ri, li, rx, lx, wiring, topo, partner_of)


# --- flattening -----------------------------------------------------------------


def flatten(d: StringDiagram, names: str = "path") -> OpenMdp:
    """The flat open MDP denoted by the diagram.

    State names are ``"<leaf>#<occurrence>/<state>"``.
    """
    ix = d.index
    return _flatten_index(ix, names)


def _flatten_index(ix: ComponentIndex, names: str = "path") -> OpenMdp:
    comps = ix.components
    leaves = [ix.leaf_of(c.id) for c in comps]
    removed = [np.zeros(l.n_states, dtype=bool) for l in leaves]
    for (c, k) in ix.wiring:
        removed[c][leaves[c].exits[k]] = True
    gid = []
    offset = 0
    for c, leaf in enumerate(leaves):
        keep = ~removed[c]
        m = np.full(leaf.n_states, -1, dtype=np.int64)
        m[keep] = offset + np.arange(int(keep.sum()))
        offset += int(keep.sum())
        gid.append(m)
    for (c, k), (c2, k2) in ix.wiring.items():
        gid[c][leaves[c].exits[k]] = gid[c2][leaves[c2].entrances[k2]]

    all_names = []
    table = []
    table_pos = {}
    atable = []
    apos = {}
    row_counts = []
    indptr_parts = []
    indices = []
    codes = []
    acodes = []
    row_base = 0
    entry_base = 0
    exact = all(l.mdp.numeric_mode is NumericMode.EXACT for l in leaves)
    for c, leaf in enumerate(leaves):
        mdp = leaf.mdp
        keep = ~removed[c]
        label = comps[c].label
        all_names.extend(f"{label}/{mdp.names[s]}" for s in np.flatnonzero(keep))
        counts = np.diff(mdp.row_start)
        row_counts.append(counts[keep])
        # removed exits are sinks, so every row of the leaf survives
        tmap = np.empty(len(mdp.table), dtype=np.int64)
        for j, p in enumerate(mdp.table):
            if p not in table_pos:
                table_pos[p] = len(table)
                table.append(p)
            tmap[j] = table_pos[p]
        amap = np.empty(len(mdp.action_table), dtype=np.int64)
        for j, a in enumerate(mdp.action_table):
            if a not in apos:
                apos[a] = len(atable)
                atable.append(a)
            amap[j] = apos[a]
        indptr_parts.append(mdp.indptr[1:] + entry_base)
        entry_base += len(mdp.indices)
        indices.append(gid[c][mdp.indices])
        codes.append(tmap[mdp.codes])
        acodes.append(amap[mdp.action_codes])
        row_base += mdp.n_rows
    row_start = np.zeros(len(all_names) + 1, dtype=np.int64)
    if row_counts:
        np.cumsum(np.concatenate(row_counts), out=row_start[1:])
    indptr = np.concatenate([[0]] + indptr_parts) if indptr_parts else np.zeros(1)
    cat = (lambda xs: np.concatenate(xs) if xs else np.zeros(0, dtype=np.int64))
    flat = Mdp(all_names, row_start, indptr, cat(indices), cat(codes), table,
               cat(acodes), atable, NumericMode.EXACT if exact else NumericMode.FLOAT64)

    def ends(lst, entr):
        return tuple(int(gid[c][leaves[c].entrances[k] if entr else leaves[c].exits[k]])
                     for c, k in lst)

    return OpenMdp(flat, ends(ix.right_entrances, True), ends(ix.left_entrances, True),
                   ends(ix.right_exits, False), ends(ix.left_exits, False))


def _rename(om: OpenMdp, names) -> OpenMdp:
    m = om.mdp
    mdp = Mdp(names, m.row_start, m.indptr, m.indices, m.codes, m.table,
              m.action_codes, m.action_table, m.numeric_mode)
    return OpenMdp(mdp, om.right_entrances, om.left_entrances, om.right_exits, om.left_exits)


def _binary(a: OpenMdp, b: OpenMdp, term) -> OpenMdp:
    d = StringDiagram(term, {"a": a, "b": b})
    errs = validate_arities(d)
    if errs:
        raise CompositionError(str(errs[0]))
    flat = flatten(d)
    plain = [n.split("/", 1)[1] for n in flat.mdp.names]
    if len(set(plain)) == len(plain):
        return _rename(flat, plain)
    return _rename(flat, [("0/" if n.startswith("a#") else "1/") + p
                          for n, p in zip(flat.mdp.names, plain)])


def seq_compose(a: OpenMdp, b: OpenMdp) -> OpenMdp:
    """a ⨟ b: a's right exits feed b's right entrances, b's left exits feed a's left entrances."""
    return _binary(a, b, Seq((Leaf("a"), Leaf("b"))))


def sum_compose(a: OpenMdp, b: OpenMdp) -> OpenMdp:
    """a ⊕ b: disjoint union with open ends concatenated."""
    return _binary(a, b, Sum((Leaf("a"), Leaf("b"))))
