"""Compositional value iteration with caching and global stopping criteria."""

from __future__ import annotations

import enum
import logging
import math
import time
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from gmpy2 import mpq

from .diagram import ComponentIndex, OpenMdp, StringDiagram, flatten
from .mdp import (DmScheduler, OviResult, TargetWeight, _exact_row_max, _improve_exact, _improve_float,
                  chain_values, evaluate, mc_reachability, ovi_solve, policy_iteration_exact,
                  to_fraction)
from .pareto import ParetoCache, Unsupported, ceil_float, compose_over, floor_float

log = logging.getLogger(__name__)

# leaves above this size are checked with a Park certificate instead of an exact solve
EXACT_STATE_LIMIT = 4000
# cache points of larger leaves come from a float solve, shaved by POINT_SLACK
EXACT_POINT_LIMIT = 500
POINT_SLACK = 1e-12
REFINE_PASSES = 4
# float sweeps can overshoot an exact value by a few ulps
LOWER_GUARD = 1e-12
UPPER_SLACK = Fraction(1, 10**10)


class GscKind(enum.Enum):
    OPTIMISTIC = "optimistic"
    BOTTOM_UP = "bottom-up"


class CacheKind(enum.Enum):
    NONE = "none"
    EXACT = "exact"
    PARETO = "pareto"


@dataclass
class CviConfig:
    epsilon: float = 1e-4
    eta: float = 1e-5
    gsc: GscKind = GscKind.OPTIMISTIC
    cache: CacheKind = CacheKind.NONE
    check_period: int = 10
    cache_cutoff: int = 200
    iteration_cap: int = 100_000
    time_cap: float | None = None
    use_gsc: bool = True
    threads: int = 1

    def __post_init__(self):
        self.gsc = GscKind(self.gsc)
        self.cache = CacheKind(self.cache)
        if not 0 < self.eta <= self.epsilon <= 1:
            raise ValueError("need 0 < eta <= epsilon <= 1")
        if self.check_period < 1:
            raise ValueError("check_period must be at least 1")


@dataclass
class CviStats:
    local_solves: int = 0
    queries: int = 0
    hits: int = 0
    t_insert: float = 0.0
    t_retrieve: float = 0.0
    gsc_checks: int = 0
    t_gsc: float = 0.0

    def as_dict(self) -> dict:
        return {"local_solves": self.local_solves, "Q": self.queries, "H": self.hits,
                "t_i": self.t_insert, "t_r": self.t_retrieve,
                "gsc_checks": self.gsc_checks, "t_gsc": self.t_gsc}


@dataclass
class CviResult:
    entrances: list
    lower: list
    upper: list | None
    iterations: int
    converged: bool
    accepted_by: str | None = None
    wall_time: float = 0.0
    stats: CviStats = field(default_factory=CviStats)

    def lower_of(self, name: str) -> float:
        return self.lower[self.entrances.index(name)]

    def as_dict(self) -> dict:
        return {
            "entrances": {n: {"lower": lo, "upper": (None if self.upper is None else up)}
                          for n, lo, up in zip(self.entrances, self.lower,
                                               self.upper or [None] * len(self.lower))},
            "iterations": self.iterations,
            "converged": self.converged,
            "accepted_by": self.accepted_by,
            "wall_time": self.wall_time,
            "stats": self.stats.as_dict(),
        }


def guard_lower(x) -> float:
    """A float lower bound pulled down past the rounding error of float sweeps."""
    return max(0.0, float(x) - LOWER_GUARD)


def global_weights(ix: ComponentIndex, w) -> list:
    """Weights aligned with ``ix.global_exits`` from a list or a name map."""
    names = ix.global_exit_names()
    if hasattr(w, "items"):
        missing = [n for n in names if n not in w]
        if missing:
            raise ValueError(f"missing weight for global exit {missing[0]!r}")
        w = [w[n] for n in names]
    w = list(w)
    if len(w) != len(names):
        raise ValueError(f"{len(w)} weights for {len(names)} global exits")
    out = [to_fraction(x) for x in w]
    if any(not 0 <= x <= 1 for x in out):
        raise ValueError("weights must lie in [0,1]")
    return out


def achievable_points(leaf: OpenMdp, sched: DmScheduler) -> list:
    """Exit reachability vectors of ``sched`` from every entrance.

    Small leaves get exact vectors. For larger ones the float solution is
    lowered by POINT_SLACK per coordinate so that it stays dominated by the
    exact vector.
    """
    ent = list(leaf.entrances)
    if leaf.n_states <= EXACT_POINT_LIMIT:
        return mc_reachability(leaf.mdp, sched, leaf.exits, ent, exact=True)
    pts = mc_reachability(leaf.mdp, sched, leaf.exits, ent)
    return [[max(0.0, float(x) - POINT_SLACK) for x in row] for row in pts]


def cache_refine(cache: ParetoCache, name: str, leaf: OpenMdp, weights, res: OviResult,
                 points_memo: dict | None = None):
    """Feed one local OVI result into the Pareto cache.

    The achievable points come from the scheduler OVI returned; the bounds
    are its certified uppers plus a small slack for the float Park check,
    and are left out when OVI did not converge.
    """
    key = (name, res.sched.key)
    pts = None if points_memo is None else points_memo.get(key)
    if pts is None:
        pts = achievable_points(leaf, res.sched)
        if points_memo is not None:
            points_memo[key] = pts
    uppers = None
    if res.converged:
        uppers = [to_fraction(res.upper[i]) + UPPER_SLACK for i in leaf.entrances]
    cache.update(name, weights, uppers, pts)
    return pts


def propagate(ix: ComponentIndex, g, w) -> list:
    """Exit values: w on global exits, the partner entrance's g on wired ones."""
    h = [np.zeros(len(ix.leaf_of(c.id).exits)) for c in ix.components]
    for (c, j), wo in zip(ix.global_exits, w):
        h[c][j] = floor_float(to_fraction(wo))
    for (c, j), (c2, k) in ix.wiring.items():
        h[c][j] = g[c2][k]
    return h


# --- exact local solves ---------------------------------------------------------


class LeafOracle:
    """Exact optimal values of one leaf for varying exit weights.

    Reachability matrices of the schedulers met so far are memoised, so a
    repeated scheduler costs one matrix-vector product.
    """

    def __init__(self, leaf: OpenMdp, memo_size: int = 64):
        self.leaf = leaf
        self.memo = OrderedDict()
        self.memo_size = memo_size
        self.sched = None

    def _reach(self, sched: DmScheduler):
        key = sched.key
        hit = self.memo.get(key)
        if hit is not None:
            self.memo.move_to_end(key)
            return hit
        k = len(self.leaf.exits)
        ident = [[Fraction(int(i == j)) for j in range(k)] for i in range(k)]
        rows = chain_values(self.leaf.mdp, sched, self.leaf.exits, ident, exact=True)
        mat = [[mpq(x.numerator, x.denominator) for x in r] for r in rows]
        self.memo[key] = mat
        if len(self.memo) > self.memo_size:
            self.memo.popitem(last=False)
        return mat

    def values(self, wq) -> list:
        """Exact optimal values on all states for exit weights ``wq``."""
        mdp = self.leaf.mdp
        tw = TargetWeight(self.leaf.exits, tuple(wq))
        sched = self.sched
        if sched is None:
            _, sched = policy_iteration_exact(mdp, tw, exact=False)
        else:
            for _ in range(1000):
                v = evaluate(mdp, tw, sched)
                nxt = _improve_float(mdp, tw, sched, v)
                if nxt is None:
                    break
                sched = nxt
        wm = [mpq(x.numerator, x.denominator) for x in wq]
        while True:
            R = self._reach(sched)
            v = [sum((a * b for a, b in zip(row, wm)), mpq(0)) for row in R]
            vf = [Fraction(int(x.numerator), int(x.denominator)) for x in v]
            nxt = _improve_exact(mdp, tw, sched, vf)
            if nxt is None:
                self.sched = sched
                return vf
            sched = nxt

    @property
    def exact_ok(self) -> bool:
        return self.leaf.n_states <= EXACT_STATE_LIMIT

    def entrance_values(self, wq) -> list:
        v = self.values(wq)
        return [v[i] for i in self.leaf.entrances]

    def bounded_by(self, wq, bound) -> bool:
        """Is the optimal value at every entrance at most ``bound`` (exact)?"""
        if self.exact_ok:
            return all(a <= b for a, b in zip(self.entrance_values(wq), bound))
        return self._park_certificate(wq, bound)

    def _park_certificate(self, wq, bound) -> bool:
        # a float OVI upper that passes an exact Park check bounds the values
        mdp = self.leaf.mdp
        tw = TargetWeight(self.leaf.exits, tuple(ceil_float(x) for x in wq))
        slack = min((float(b) for b in bound), default=1.0)
        res = ovi_solve(mdp, tw, max(1e-9, min(1e-6, slack * 1e-3)))
        if not res.converged:
            return False
        z = [mpq(float(x)) for x in res.upper]
        for t, x in zip(self.leaf.exits, wq):
            z[t] = mpq(x.numerator, x.denominator)
        phi = _exact_row_max(mdp, z)
        for t in self.leaf.exits:
            phi[t] = z[t]
        if any(a > b for a, b in zip(phi, z)):
            return False
        return all(z[i] <= mpq(b.numerator, b.denominator)
                   for i, b in zip(self.leaf.entrances, bound))


class OracleBank:
    def __init__(self, ix: ComponentIndex):
        self.by_leaf = {name: LeafOracle(leaf) for name, leaf in ix.leaves.items()}

    def __getitem__(self, leaf: str) -> LeafOracle:
        return self.by_leaf[leaf]


def _component_weights(ix: ComponentIndex, c: int, values, wq) -> list:
    """Exit weights of component c: partner entrance values or global weights."""
    gpos = {o: j for j, o in enumerate(ix.global_exits)}
    out = []
    for j in range(len(ix.leaf_of(c).exits)):
        o = (c, j)
        if o in ix.wiring:
            c2, k = ix.wiring[o]
            out.append(values[c2][k])
        else:
            out.append(wq[gpos[o]])
    return out


def shortcut_bellman_apply(d: StringDiagram, candidate, w, oracles: OracleBank | None = None):
    """One step of the shortcut Bellman operator at every local entrance.

    ``candidate[c][k]`` is a value at local entrance (c, k). The result at
    (c, k) is the exact optimal value of component c from that entrance when
    its exits are weighted by the candidate values they are wired to (or by
    ``w`` for global exits).
    """
    ix = d.index
    oracles = oracles or OracleBank(ix)
    wq = [to_fraction(x) for x in w]
    cand = [[to_fraction(x) for x in row] for row in candidate]
    out = []
    for comp in ix.components:
        weights = _component_weights(ix, comp.id, cand, wq)
        out.append(oracles[comp.leaf].entrance_values(weights))
    return out


def _grid_candidate(g, eps: Fraction, offset: Fraction) -> list:
    # values equal up to float noise land on the same grid point, which lets
    # loops that keep their mass pass the Park check
    step = eps / 4
    out = []
    for row in g:
        r = []
        for x in row:
            k = math.ceil(to_fraction(x) / step - offset)
            r.append(min(Fraction(1), (k + offset) * step + eps / 2))
        out.append(r)
    return out


def opt_gsc_check(d: StringDiagram, g, w, epsilon: float, oracles: OracleBank | None = None,
                  threads: int = 1):
    """Optimistic stopping check; certified uppers per local entrance or None.

    The candidate is g rounded up to a grid of width ε/4 plus ε/2, so it
    stays below g + ε. It is first tightened by a few Gauss-Seidel passes of
    the exact shortcut operator, taking the pointwise minimum with the
    candidate; without this, a component whose exits are reached almost
    surely fails the Park check by float noise. A second grid, shifted by
    half a step, is tried if the first candidate fails.
    """
    ix = d.index
    oracles = oracles or OracleBank(ix)
    eps = to_fraction(epsilon)
    wq = [to_fraction(x) for x in w]
    solved = {}

    def exact_values(leaf, weights):
        key = (leaf, weights)
        if key not in solved:
            solved[key] = oracles[leaf].entrance_values(list(weights))
        return solved[key]

    for offset in (Fraction(0), Fraction(1, 2)):
        u = _grid_candidate(g, eps, offset)
        if _opt_gsc_try(ix, u, wq, oracles, exact_values, threads):
            return u
    return None


def _opt_gsc_try(ix: ComponentIndex, u, wq, oracles, exact_values, threads) -> bool:
    evaluated = {}
    for _ in range(REFINE_PASSES):
        changed = False
        for c in ix.topo_order:
            comp = ix.components[c]
            if not u[c] or not oracles[comp.leaf].exact_ok:
                continue
            weights = tuple(_component_weights(ix, c, u, wq))
            v = exact_values(comp.leaf, weights)
            if all(a <= b for a, b in zip(v, u[c])):
                evaluated[c] = weights
            new = [min(a, b) for a, b in zip(u[c], v)]
            changed |= new != u[c]
            u[c] = new
        if not changed:
            break

    pending = []
    for c in ix.topo_order:
        comp = ix.components[c]
        if not u[c]:
            continue
        weights = tuple(_component_weights(ix, c, u, wq))
        if evaluated.get(c) == weights:
            continue
        pending.append((comp.leaf, weights, c))

    def check(item):
        leaf, weights, c = item
        orc = oracles[leaf]
        if orc.exact_ok:
            return all(a <= b for a, b in zip(exact_values(leaf, weights), u[c]))
        return orc.bounded_by(list(weights), u[c])

    if threads > 1 and len(pending) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return all(pool.map(check, pending))
    return all(check(it) for it in pending)


def bu_gsc_check(d: StringDiagram, cache: ParetoCache, w, g_global, epsilon: float):
    """Bottom-up stopping check; certified uppers per global entrance or None.

    Raises Unsupported when a leaf has more than three exits.
    """
    up = compose_over(d, cache, w)
    eps = to_fraction(epsilon)
    if all(u - to_fraction(lo) <= eps for u, lo in zip(up, g_global)):
        return up
    return None


# --- the main loop --------------------------------------------------------------------


class _Run:
    def __init__(self, d: StringDiagram, w, cfg: CviConfig, cache=None, on_iteration=None):
        self.d = d
        self.ix = ix = d.index
        self.cfg = cfg
        self.wq = global_weights(ix, w)
        self.leaves = [ix.leaf_of(c.id) for c in ix.components]
        self.g = [np.zeros(len(l.entrances)) for l in self.leaves]
        self.h = propagate(ix, self.g, self.wq)
        self.warm = [None] * len(self.leaves)
        self.stats = CviStats()
        self.on_iteration = on_iteration
        self.oracles = OracleBank(ix)
        self.exact_memo = {}
        self.points = {}
        self.pareto = cache if cache is not None else (
            ParetoCache() if cfg.cache is CacheKind.PARETO else None)
        self.gsc = cfg.gsc
        self.bypass = False

    def _ovi(self, c, weights):
        leaf = self.leaves[c]
        tw = TargetWeight(leaf.exits, tuple(weights.tolist()))
        res = ovi_solve(leaf.mdp, tw, self.cfg.eta, start=self.warm[c], min_sweeps=1)
        self.stats.local_solves += 1
        self.warm[c] = res.lower
        return res

    def local_solve(self, c: int, it: int) -> np.ndarray:
        leaf = self.leaves[c]
        weights = self.h[c]
        if not weights.any():
            return np.zeros(len(leaf.entrances))
        ent = list(leaf.entrances)
        mode = self.cfg.cache
        if mode is CacheKind.NONE or self.bypass:
            return self._ovi(c, weights).lower[ent]
        name = self.ix.components[c].leaf
        if mode is CacheKind.EXACT:
            key = (name, weights.tobytes())
            t0 = time.perf_counter()
            self.stats.queries += 1
            hit = self.exact_memo.get(key)
            self.stats.t_retrieve += time.perf_counter() - t0
            if hit is not None:
                self.stats.hits += 1
                return hit
            res = self._ovi(c, weights)
            t0 = time.perf_counter()
            vals = res.lower[ent]
            self.exact_memo[key] = vals
            self.stats.t_insert += time.perf_counter() - t0
            return vals
        cache = self.pareto
        lows = cache.query(name, weights.tolist(), self.cfg.eta, len(ent), len(leaf.exits))
        if lows is not None:
            return np.array([floor_float(x) for x in lows])
        res = self._ovi(c, weights)
        cache_refine(cache, name, leaf, weights.tolist(), res, self.points)
        return res.lower[ent]

    def sweep(self, it: int) -> float:
        ix = self.ix
        delta = 0.0
        for c in ix.topo_order:
            vals = self.local_solve(c, it)
            new = np.maximum(self.g[c], vals)
            delta = max(delta, float(np.max(new - self.g[c])) if new.size else 0.0)
            self.g[c] = new
            for k in range(new.size):
                o = ix.partner_of.get((c, k))
                if o is not None:
                    self.h[o[0]][o[1]] = new[k]
        return delta

    def global_lower(self) -> list:
        return [float(self.g[c][k]) for c, k in self.ix.global_entrances]

    def reported_lower(self) -> list:
        return [guard_lower(x) for x in self.global_lower()]

    def check(self, stalled: bool = False):
        t0 = time.perf_counter()
        self.stats.gsc_checks += 1
        try:
            if self.gsc is GscKind.BOTTOM_UP and self.pareto is not None:
                try:
                    up = bu_gsc_check(self.d, self.pareto, self.wq, self.global_lower(),
                                      self.cfg.epsilon)
                    if up is not None:
                        return [ceil_float(x) for x in up], "bu-gsc"
                    # lower values no longer move, so only a sharper check can help
                    if not stalled:
                        return None, "bu-gsc"
                except Unsupported as e:
                    log.info("bottom-up check unsupported (%s); using the optimistic check", e)
                    self.gsc = GscKind.OPTIMISTIC
            u = opt_gsc_check(self.d, self.g, self.wq, self.cfg.epsilon, self.oracles,
                              self.cfg.threads)
            if u is None:
                return None, "opt-gsc"
            return [float(u[c][k]) for c, k in self.ix.global_entrances], "opt-gsc"
        finally:
            self.stats.t_gsc += time.perf_counter() - t0

    def run(self) -> CviResult:
        cfg = self.cfg
        t0 = time.perf_counter()
        it = 0
        upper, by, converged = None, None, False
        while it < cfg.iteration_cap:
            it += 1
            if cfg.cache is not CacheKind.NONE and it > cfg.cache_cutoff:
                self.bypass = True
            delta = self.sweep(it)
            if self.on_iteration is not None:
                self.on_iteration(it, [row.copy() for row in self.g])
            stalled = delta == 0.0
            if cfg.use_gsc and (it % cfg.check_period == 0 or stalled):
                up, kind = self.check(stalled)
                if up is not None:
                    upper, by, converged = up, kind, True
                    break
            if stalled:
                if cfg.cache is not CacheKind.NONE and not self.bypass:
                    self.bypass = True
                    continue
                break
            if cfg.time_cap is not None and time.perf_counter() - t0 > cfg.time_cap:
                break
        if self.pareto is not None:
            s = self.pareto.stats
            self.stats.queries, self.stats.hits = s.queries, s.hits
            self.stats.t_insert, self.stats.t_retrieve = s.t_insert, s.t_retrieve
        return CviResult(self.ix.global_entrance_names(), self.reported_lower(), upper, it,
                         converged, by, time.perf_counter() - t0, self.stats)


def cvi_run(d: StringDiagram, w, cfg: CviConfig | None = None, cache: ParetoCache | None = None,
            on_iteration=None) -> CviResult:
    """Compositional value iteration.

    ``w`` gives one weight per global exit (list in index order, or a map
    from exit names). ``on_iteration(it, g)`` is called after every sweep.
    """
    run = _Run(d, w, cfg or CviConfig(), cache, on_iteration)
    return run.run()


def mono_run(d: StringDiagram, w, cfg: CviConfig | None = None) -> CviResult:
    """Baseline: flatten the diagram and run optimistic value iteration once."""
    cfg = cfg or CviConfig()
    t0 = time.perf_counter()
    ix = d.index
    wq = global_weights(ix, w)
    flat = flatten(d)
    tw = TargetWeight(flat.exits, tuple(floor_float(x) for x in wq))
    res = ovi_solve(flat.mdp, tw, cfg.epsilon)
    ent = list(flat.entrances)
    stats = CviStats(local_solves=1)
    return CviResult(ix.global_entrance_names(), [guard_lower(x) for x in res.lower[ent]],
                     [float(x) for x in res.upper[ent]] if res.converged else None,
                     res.applications, res.converged, "ovi" if res.converged else None,
                     time.perf_counter() - t0, stats)


def exact_values(d: StringDiagram, w) -> list:
    """Exact optimal values at the global entrances of the flattened diagram."""
    ix = d.index
    wq = global_weights(ix, w)
    flat = flatten(d)
    tw = TargetWeight(flat.exits, tuple(wq))
    vals, _ = policy_iteration_exact(flat.mdp, tw, exact=True)
    return [vals[i] for i in flat.entrances]
