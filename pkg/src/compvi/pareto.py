"""Sound approximations of achievable reachability vectors and the Pareto cache.

All geometry is exact: points, weights and bounds are ``Fraction``. Floats
coming from the numeric solvers are converted from their binary value, so
nothing is rounded on the way in.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy.optimize import linprog

from .mdp import to_fraction

VERTEX_DIM_LIMIT = 3
POINT_TOL = Fraction(1, 10**9)


class SoundnessFault(RuntimeError):
    """An achievable point lies outside a supposedly sound over-approximation."""


class Unsupported(RuntimeError):
    """Bottom-up composition needs vertex form, i.e. at most three exits."""


def _vec(xs) -> tuple:
    return tuple(to_fraction(x) for x in xs)


def _dot(a, b) -> Fraction:
    return sum((x * y for x, y in zip(a, b)), Fraction(0))


def floor_float(q: Fraction) -> float:
    """Largest float not above ``q``."""
    f = float(q)
    if Fraction(f) > q:
        f = math.nextafter(f, -math.inf)
    return f


def ceil_float(q: Fraction) -> float:
    """Smallest float not below ``q``."""
    f = float(q)
    if Fraction(f) < q:
        f = math.nextafter(f, math.inf)
    return f


class ParetoUnder:
    """Downward convex closure of finitely many achievable points."""

    def __init__(self, dim: int):
        self.dim = dim
        self.generators = []

    def add(self, point) -> bool:
        """Insert a point; returns False if an existing generator dominates it."""
        p = _vec(point)
        if len(p) != self.dim:
            raise ValueError(f"point of dimension {len(p)}, expected {self.dim}")
        if any(x < 0 or x > 1 for x in p) or sum(p) > 1 + POINT_TOL:
            raise ValueError(f"not a reachability vector: {p}")
        for g in self.generators:
            if all(a <= b for a, b in zip(p, g)):
                return False
        self.generators = [g for g in self.generators
                           if not all(a <= b for a, b in zip(g, p))]
        self.generators.append(p)
        return True

    def read(self, w) -> Fraction:
        """max over generators of w·p, and 0 when there are none."""
        w = _vec(w)
        return max((_dot(w, g) for g in self.generators), default=Fraction(0))


def _rank(vectors) -> int:
    rows = [list(v) for v in vectors]
    rank = 0
    ncols = len(rows[0]) if rows else 0
    for c in range(ncols):
        piv = next((r for r in range(rank, len(rows)) if rows[r][c] != 0), None)
        if piv is None:
            continue
        rows[rank], rows[piv] = rows[piv], rows[rank]
        pr = rows[rank]
        for r in range(rank + 1, len(rows)):
            if rows[r][c] != 0:
                f = rows[r][c] / pr[c]
                rows[r] = [a - f * b for a, b in zip(rows[r], pr)]
        rank += 1
    return rank


class ParetoOver:
    """Unit box intersected with halfspaces ``w·p ≤ b``.

    For up to three dimensions the vertex set is kept up to date by cutting
    the polytope with every new halfspace; above that, reads go through an
    LP whose dual solution is turned into an exact upper bound.
    """

    def __init__(self, dim: int, track_vertices: bool | None = None):
        self.dim = dim
        self.track = dim <= VERTEX_DIM_LIMIT if track_vertices is None else track_vertices
        self.halfspaces = []
        # active constraints by id; box faces first
        self._cons = {}
        for o in range(dim):
            e = tuple(Fraction(int(j == o)) for j in range(dim))
            self._cons[o] = (tuple(-x for x in e), Fraction(0))
            self._cons[dim + o] = (e, Fraction(1))
        self._next = 2 * dim
        self.vertices = None
        self._vtight = None
        if self.track:
            self.vertices = []
            self._vtight = []
            for mask in range(1 << dim):
                v = tuple(Fraction((mask >> o) & 1) for o in range(dim))
                self.vertices.append(v)
                self._vtight.append(frozenset(
                    o if v[o] == 0 else dim + o for o in range(dim)))
        self._simplex = None

    def copy(self) -> "ParetoOver":
        c = ParetoOver.__new__(ParetoOver)
        c.dim, c.track = self.dim, self.track
        c.halfspaces = list(self.halfspaces)
        c._cons = dict(self._cons)
        c._next = self._next
        c.vertices = None if self.vertices is None else list(self.vertices)
        c._vtight = None if self._vtight is None else list(self._vtight)
        c._simplex = self._simplex
        return c

    def contains(self, p, tol: Fraction = Fraction(0)) -> bool:
        p = _vec(p)
        if any(x < -tol or x > 1 + tol for x in p):
            return False
        return all(_dot(a, p) <= b + tol for a, b in self.halfspaces)

    def _tight(self, v) -> frozenset:
        return frozenset(j for j, (a, b) in self._cons.items() if _dot(a, v) == b)

    def _rank_of(self, ids) -> int:
        return _rank([self._cons[j][0] for j in ids])

    def add(self, w, bound) -> bool:
        """Intersect with ``{p | w·p ≤ bound}``; returns whether anything was cut."""
        w = _vec(w)
        b = to_fraction(bound)
        if len(w) != self.dim:
            raise ValueError("weight dimension mismatch")
        if all(x == 0 for x in w):
            return False
        if not self.track:
            self.halfspaces.append((w, b))
            return True
        vals = [_dot(w, v) for v in self.vertices]
        if all(x <= b for x in vals):
            return False
        self.halfspaces.append((w, b))
        cid = self._next
        self._next += 1
        self._cons[cid] = (w, b)
        d = self.dim
        inside = [k for k, x in enumerate(vals) if x <= b]
        outside = [k for k, x in enumerate(vals) if x > b]
        pts = {}
        for i in inside:
            t = self._vtight[i]
            pts[self.vertices[i]] = t | {cid} if vals[i] == b else t
        for i in inside:
            ti = self._vtight[i]
            for o in outside:
                shared = ti & self._vtight[o]
                if len(shared) < d - 1:
                    continue
                if d > 1 and self._rank_of(shared) < d - 1:
                    continue
                vi, vo = self.vertices[i], self.vertices[o]
                lam = (b - vals[i]) / (vals[o] - vals[i])
                p = tuple(x + lam * (y - x) for x, y in zip(vi, vo))
                if p not in pts:
                    pts[p] = self._tight(p)
        verts, tights = [], []
        for p in sorted(pts):
            t = pts[p]
            if d == 0 or self._rank_of(t) == d:
                verts.append(p)
                tights.append(t)
        self.vertices, self._vtight = verts, tights
        # constraints tight at no vertex are implied by the others
        used = frozenset().union(*tights) if tights else frozenset()
        self._cons = {j: c for j, c in self._cons.items() if j in used}
        self._simplex = None
        return True

    def read(self, w) -> Fraction:
        """max over the polytope of w·p (exact, or a certified bound above it)."""
        w = _vec(w)
        if self.vertices is not None:
            return max((_dot(w, v) for v in self.vertices), default=Fraction(0))
        return self._lp_read(w)

    def _lp_read(self, w) -> Fraction:
        total = sum(w, Fraction(0))
        if not self.halfspaces:
            return total
        A = np.array([[float(x) for x in a] for a, _ in self.halfspaces])
        bvec = np.array([float(b) for _, b in self.halfspaces])
        try:
            res = linprog(-np.array([float(x) for x in w]), A_ub=A, b_ub=bvec,
                          bounds=[(0, 1)] * self.dim, method="highs")
        except ValueError:
            return total
        if res.status != 0 or res.ineqlin is None:
            return total
        # weak duality with the box: for y ≥ 0 and r = w − Aᵀy,
        # w·p ≤ y·b + Σ max(r_o, 0) for every feasible p
        y = [max(Fraction(0), Fraction(float(-m))) for m in res.ineqlin.marginals]
        r = list(w)
        for yj, (a, _) in zip(y, self.halfspaces):
            if yj:
                r = [ri - yj * aj for ri, aj in zip(r, a)]
        bound = sum((yj * b for yj, (_, b) in zip(y, self.halfspaces)), Fraction(0))
        bound += sum((max(ri, Fraction(0)) for ri in r), Fraction(0))
        return max(Fraction(0), min(bound, total))

    def simplex_vertices(self) -> list:
        """Vertices of this polytope cut by Σp ≤ 1 (only in vertex form)."""
        if self.vertices is None:
            raise Unsupported(f"no vertex form for {self.dim} exits")
        if self._simplex is None:
            c = self.copy()
            c.add([1] * self.dim, 1)
            self._simplex = c.vertices
        return self._simplex


def under_read(L: ParetoUnder, w) -> Fraction:
    return L.read(w)


def over_read(U: ParetoOver, w) -> Fraction:
    return U.read(w)


@dataclass
class CacheStats:
    queries: int = 0
    hits: int = 0
    t_insert: float = 0.0
    t_retrieve: float = 0.0

    def as_dict(self) -> dict:
        return {"Q": self.queries, "H": self.hits,
                "t_i": self.t_insert, "t_r": self.t_retrieve}


@dataclass
class LeafEntry:
    under: list
    over: list


class ParetoCache:
    """Per nominal leaf and entrance, a pair (under, over) of sound approximations."""

    def __init__(self):
        self.entries = {}
        self.stats = CacheStats()

    def ensure(self, leaf: str, n_entrances: int, n_exits: int) -> LeafEntry:
        e = self.entries.get(leaf)
        if e is None:
            e = LeafEntry([ParetoUnder(n_exits) for _ in range(n_entrances)],
                          [ParetoOver(n_exits) for _ in range(n_entrances)])
            self.entries[leaf] = e
        return e

    def query(self, leaf: str, w, eta, n_entrances=None, n_exits=None):
        """Lower values per entrance on a hit, None on a miss."""
        t0 = time.perf_counter()
        self.stats.queries += 1
        e = self.entries.get(leaf)
        if e is None:
            if n_entrances is None:
                self.stats.t_retrieve += time.perf_counter() - t0
                return None
            e = self.ensure(leaf, n_entrances, n_exits)
        w = _vec(w)
        eta = to_fraction(eta)
        lows = []
        hit = True
        for L, U in zip(e.under, e.over):
            lo = L.read(w)
            if U.read(w) - lo > eta:
                hit = False
                break
            lows.append(lo)
        if hit:
            self.stats.hits += 1
        self.stats.t_retrieve += time.perf_counter() - t0
        return lows if hit else None

    def update(self, leaf: str, w, uppers, points):
        """Add one halfspace and one achievable point per entrance.

        ``uppers[i]`` must bound the optimal weighted value from entrance i
        (None skips the halfspace); ``points[i]`` must be realised by a
        scheduler.
        """
        t0 = time.perf_counter()
        w = _vec(w)
        e = self.ensure(leaf, len(points), len(w))
        for i, (L, U) in enumerate(zip(e.under, e.over)):
            p = _vec(points[i])
            if not U.contains(p, POINT_TOL):
                raise SoundnessFault(f"{leaf} entrance {i}: point {p} outside over-approximation")
            L.add(p)
            if uppers is not None and uppers[i] is not None:
                U.add(w, max(to_fraction(uppers[i]), _dot(w, p)))
        self.stats.t_insert += time.perf_counter() - t0

    def vertices(self, leaf: str, entrance: int) -> list:
        return self.entries[leaf].over[entrance].simplex_vertices()

    # --- persistence ---------------------------------------------------------

    def to_doc(self) -> dict:
        def q(x):
            return f"{x.numerator}/{x.denominator}"
        out = {}
        for leaf, e in self.entries.items():
            out[leaf] = [
                {"dim": L.dim,
                 "points": [[q(x) for x in g] for g in L.generators],
                 "halfspaces": [[[q(x) for x in a], q(b)] for a, b in U.halfspaces]}
                for L, U in zip(e.under, e.over)]
        return {"version": 1, "leaves": out}

    @classmethod
    def from_doc(cls, doc) -> "ParetoCache":
        cache = cls()
        for leaf, ents in doc["leaves"].items():
            unders, overs = [], []
            for ent in ents:
                L = ParetoUnder(ent["dim"])
                U = ParetoOver(ent["dim"])
                for a, b in ent["halfspaces"]:
                    U.add([Fraction(x) for x in a], Fraction(b))
                for p in ent["points"]:
                    L.add([Fraction(x) for x in p])
                unders.append(L)
                overs.append(U)
            cache.entries[leaf] = LeafEntry(unders, overs)
        return cache

    def dump(self, path):
        Path(path).write_text(json.dumps(self.to_doc()))

    @classmethod
    def load(cls, path) -> "ParetoCache":
        return cls.from_doc(json.loads(Path(path).read_text()))


def cache_query(cache: ParetoCache, leaf: str, w, eta, n_entrances=None, n_exits=None):
    return cache.query(leaf, w, eta, n_entrances, n_exits)


def cache_update(cache: ParetoCache, leaf: str, w, uppers, points):
    cache.update(leaf, w, uppers, points)


def compose_over(d, cache: ParetoCache, w) -> list:
    """Upper bounds at the global entrances from the cached over-approximations.

    Builds the shortcut MDP whose actions at a local entrance are the vertices
    of that entrance's over-approximation (cut by the probability simplex) and
    solves it exactly.
    """
    from .shortcut import build_shortcut, solve_shortcut

    ix = d.index
    for c in ix.components:
        leaf = ix.leaves[c.leaf]
        if len(leaf.exits) > VERTEX_DIM_LIMIT:
            raise Unsupported(f"leaf {c.leaf!r} has {len(leaf.exits)} exits")

    def actions(c, k):
        comp = ix.components[c]
        leaf = ix.leaves[comp.leaf]
        e = cache.ensure(comp.leaf, len(leaf.entrances), len(leaf.exits))
        return e.over[k].simplex_vertices()

    sc = build_shortcut(ix, actions)
    return solve_shortcut(sc, [to_fraction(x) for x in w])
