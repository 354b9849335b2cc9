"""Flat MDPs, the weighted Bellman operator and the solvers built on it.

Value vectors come in two flavours. A float vector is a 1-d numpy array; an
exact vector is a list of ``Fraction``. Every solver dispatches on the kind
of vector it receives (or on the model's numeric mode when it creates one).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
from typing import NamedTuple, Sequence

import numpy as np
import scipy.sparse as sp
from gmpy2 import mpq
from scipy.sparse.linalg import splu

from .graph import backward_reachable, maximal_end_components, strongly_connected_components

PARK_TOL = 1e-12
SUM_TOL = 1e-12
DEFAULT_BUDGET = 10**7
OVI_ROUNDS = 40


class NumericMode(enum.Enum):
    FLOAT64 = "float64"
    EXACT = "exact"


class MdpError(ValueError):
    """Malformed model or mismatched vector."""


def parse_probability(value) -> Fraction:
    """Read a probability from a Fraction, int, float, "num/den" or decimal string."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise MdpError(f"not a probability: {value!r}")
    if isinstance(value, (int, float)):
        return Fraction(value)
    if isinstance(value, str):
        try:
            return Fraction(value.strip())
        except (ValueError, ZeroDivisionError):
            raise MdpError(f"not a probability: {value!r}") from None
    if hasattr(value, "numerator") and hasattr(value, "denominator"):
        return Fraction(int(value.numerator), int(value.denominator))
    raise MdpError(f"not a probability: {value!r}")


def to_fraction(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, (float, int, np.floating, np.integer)):
        return Fraction(float(x)) if isinstance(x, (float, np.floating)) else Fraction(int(x))
    return Fraction(int(x.numerator), int(x.denominator))


def _frac(q) -> Fraction:
    return Fraction(int(q.numerator), int(q.denominator))


class Mdp:
    """An MDP stored as a row-compressed transition table.

    Rows are (state, action) pairs grouped by state: the rows of state ``s``
    are ``row_start[s]:row_start[s+1]``. Row ``r`` has successors
    ``indices[indptr[r]:indptr[r+1]]``. Probabilities are held exactly as
    codes into ``table`` (a tuple of Fractions), so models built from
    rational strings keep their exact values even when solved in floats.
    """

    def __init__(self, names, row_start, indptr, indices, codes, table,
                 action_codes, action_table, numeric_mode=NumericMode.FLOAT64):
        self.names = tuple(names)
        self.row_start = np.asarray(row_start, dtype=np.int64)
        self.indptr = np.asarray(indptr, dtype=np.int64)
        self.indices = np.asarray(indices, dtype=np.int64)
        self.codes = np.asarray(codes, dtype=np.int64)
        self.table = tuple(table)
        self.action_codes = np.asarray(action_codes, dtype=np.int64)
        self.action_table = tuple(action_table)
        self.numeric_mode = NumericMode(numeric_mode)

    @classmethod
    def build(cls, states: Sequence[str], transitions, numeric_mode=NumericMode.FLOAT64,
              check: bool = True) -> "Mdp":
        """Build from ``(src, action, [(dst, prob), ...])`` triples.

        States may be referenced by name or by index.
        """
        numeric_mode = NumericMode(numeric_mode)
        names = [str(s) for s in states]
        pos = {name: i for i, name in enumerate(names)}
        if len(pos) != len(names):
            raise MdpError("duplicate state names")
        n = len(names)

        def resolve(x):
            if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
                if not 0 <= x < n:
                    raise MdpError(f"state index out of range: {x}")
                return int(x)
            try:
                return pos[x]
            except KeyError:
                raise MdpError(f"unknown state {x!r}") from None

        per_state = [[] for _ in range(n)]
        for src, action, dist in transitions:
            s = resolve(src)
            merged = {}
            for dst, prob in dist:
                p = parse_probability(prob)
                if p < 0 or p > 1:
                    raise MdpError(f"probability {p} out of [0,1] at {names[s]}/{action}")
                if p == 0:
                    continue
                d = resolve(dst)
                merged[d] = merged.get(d, Fraction(0)) + p
            total = sum(merged.values(), Fraction(0))
            if check:
                if numeric_mode is NumericMode.EXACT:
                    if total != 1:
                        raise MdpError(f"distribution at {names[s]}/{action} sums to {total}")
                elif abs(float(total - 1)) > SUM_TOL:
                    raise MdpError(f"distribution at {names[s]}/{action} sums to {float(total)}")
            per_state[s].append((str(action), merged))

        table_pos = {}
        table = []
        action_pos = {}
        action_table = []
        row_start = [0]
        indptr = [0]
        indices = []
        codes = []
        action_codes = []
        for s in range(n):
            seen = set()
            for action, merged in per_state[s]:
                if action in seen:
                    raise MdpError(f"duplicate action {action!r} at state {names[s]!r}")
                seen.add(action)
                if action not in action_pos:
                    action_pos[action] = len(action_table)
                    action_table.append(action)
                action_codes.append(action_pos[action])
                for d in sorted(merged):
                    p = merged[d]
                    if p not in table_pos:
                        table_pos[p] = len(table)
                        table.append(p)
                    indices.append(d)
                    codes.append(table_pos[p])
                indptr.append(len(indices))
            row_start.append(len(action_codes))
        return cls(names, row_start, indptr, indices, codes, table,
                   action_codes, action_table, numeric_mode)

    # --- shape -----------------------------------------------------------

    @property
    def n_states(self) -> int:
        return len(self.names)

    @property
    def n_rows(self) -> int:
        return len(self.action_codes)

    def __len__(self):
        return self.n_states

    def __repr__(self):
        return f"Mdp({self.n_states} states, {self.n_rows} rows, {self.numeric_mode.value})"

    @cached_property
    def index(self) -> dict:
        return {name: i for i, name in enumerate(self.names)}

    def state(self, name_or_index) -> int:
        if isinstance(name_or_index, (int, np.integer)):
            return int(name_or_index)
        try:
            return self.index[name_or_index]
        except KeyError:
            raise MdpError(f"unknown state {name_or_index!r}") from None

    def rows(self, s: int) -> range:
        return range(int(self.row_start[s]), int(self.row_start[s + 1]))

    def actions(self, s) -> list:
        s = self.state(s)
        return [self.action_table[self.action_codes[r]] for r in self.rows(s)]

    def action_label(self, r: int) -> str:
        return self.action_table[self.action_codes[r]]

    def successors(self, r: int):
        """Exact distribution of row ``r`` as a list of (dst, Fraction)."""
        a, b = self.indptr[r], self.indptr[r + 1]
        return [(int(d), self.table[c]) for d, c in zip(self.indices[a:b], self.codes[a:b])]

    def is_sink(self, s: int) -> bool:
        return self.row_start[s] == self.row_start[s + 1]

    @cached_property
    def sinks(self) -> np.ndarray:
        return np.diff(self.row_start) == 0

    @cached_property
    def mec_groups(self):
        """States inside end components, sorted by component, with group starts."""
        labels = maximal_end_components(self.n_states, self.row_start, self.indptr, self.indices)
        members = np.flatnonzero(labels >= 0)
        order = members[np.argsort(labels[members], kind="stable")]
        starts = np.flatnonzero(np.r_[True, np.diff(labels[order]) != 0]) if order.size else order
        return order, starts

    def level_mecs(self, f: np.ndarray) -> np.ndarray:
        """Raise every state of an end component to the component's maximum, in place.

        All states of an end component share one optimal value, so this keeps
        lower bounds sound and makes shifted candidates pass the Park check.
        """
        order, starts = self.mec_groups
        if order.size:
            top = np.maximum.reduceat(f[order], starts)
            f[order] = np.repeat(top, np.diff(np.r_[starts, order.size]))
        return f

    @cached_property
    def state_of_row(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_states), np.diff(self.row_start))

    @cached_property
    def probs(self) -> np.ndarray:
        ftab = np.array([float(p) for p in self.table], dtype=float)
        return ftab[self.codes] if len(self.codes) else np.zeros(0)

    @cached_property
    def mpq_table(self) -> tuple:
        return tuple(mpq(p.numerator, p.denominator) for p in self.table)

    @cached_property
    def matrix(self) -> sp.csr_matrix:
        return sp.csr_matrix((self.probs, self.indices, self.indptr),
                             shape=(self.n_rows, self.n_states))

    @cached_property
    def _nonempty(self) -> np.ndarray:
        return np.flatnonzero(~self.sinks)

    @cached_property
    def _group_starts(self) -> np.ndarray:
        return self.row_start[self._nonempty]

    def row_max(self, q: np.ndarray) -> np.ndarray:
        """Per-state max of a per-row vector; 0 at sinks."""
        out = np.zeros(self.n_states)
        if self._nonempty.size:
            out[self._nonempty] = np.maximum.reduceat(q, self._group_starts)
        return out

    def row_argmax(self, q: np.ndarray) -> np.ndarray:
        """First maximising row of each state; -1 at sinks."""
        best = self.row_max(q)
        hit = q >= best[self.state_of_row]
        rows = np.flatnonzero(hit)
        out = np.full(self.n_states, -1, dtype=np.int64)
        st, first = np.unique(self.state_of_row[rows], return_index=True)
        out[st] = rows[first]
        return out

    def chain(self, rows: np.ndarray):
        """Transition matrix of the chain induced by choosing ``rows[s]`` at each state.

        Returns (csr matrix n×n, positions into the entry arrays).
        """
        n = self.n_states
        rows = np.asarray(rows, dtype=np.int64)
        live = rows >= 0
        starts = np.zeros(n, dtype=np.int64)
        lens = np.zeros(n, dtype=np.int64)
        starts[live] = self.indptr[rows[live]]
        lens[live] = self.indptr[rows[live] + 1] - starts[live]
        ptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(lens, out=ptr[1:])
        total = int(ptr[-1])
        pos = np.repeat(starts - ptr[:-1], lens) + np.arange(total)
        mat = sp.csr_matrix((self.probs[pos], self.indices[pos], ptr), shape=(n, n))
        return mat, pos


@dataclass(frozen=True)
class TargetWeight:
    """Targets (state indices, all sinks) and one weight per target."""

    targets: tuple
    weights: tuple

    def __post_init__(self):
        if len(self.targets) != len(self.weights):
            raise MdpError("targets and weights differ in length")
        if len(set(self.targets)) != len(self.targets):
            raise MdpError("duplicate target")
        for w in self.weights:
            if not 0 <= w <= 1:
                raise MdpError(f"weight {w} out of [0,1]")

    @classmethod
    def of(cls, mdp: Mdp, weights) -> "TargetWeight":
        """From a mapping state → weight, checking every target is a sink."""
        items = list(weights.items()) if hasattr(weights, "items") else list(weights)
        targets = tuple(mdp.state(t) for t, _ in items)
        tw = cls(targets, tuple(w for _, w in items))
        tw.check(mdp)
        return tw

    def check(self, mdp: Mdp):
        for t in self.targets:
            if not 0 <= t < mdp.n_states:
                raise MdpError(f"target index {t} out of range")
            if not mdp.is_sink(t):
                raise MdpError(f"target {mdp.names[t]!r} is not a sink")

    @cached_property
    def idx(self) -> np.ndarray:
        return np.asarray(self.targets, dtype=np.int64)

    @cached_property
    def wf(self) -> np.ndarray:
        return np.asarray([float(w) for w in self.weights], dtype=float)

    @cached_property
    def wq(self) -> list:
        return [to_fraction(w) for w in self.weights]


class DmScheduler:
    """A deterministic memoryless scheduler, stored as one chosen row per state."""

    __slots__ = ("rows",)

    def __init__(self, rows):
        self.rows = np.asarray(rows, dtype=np.int64)

    def choice(self, mdp: Mdp) -> dict:
        return {mdp.names[s]: mdp.action_label(int(r))
                for s, r in enumerate(self.rows) if r >= 0}

    @classmethod
    def from_choice(cls, mdp: Mdp, choice: dict) -> "DmScheduler":
        rows = np.full(mdp.n_states, -1, dtype=np.int64)
        for s in range(mdp.n_states):
            if mdp.is_sink(s):
                continue
            label = choice.get(mdp.names[s])
            options = mdp.rows(s)
            if label is None:
                rows[s] = options.start
                continue
            for r in options:
                if mdp.action_label(r) == label:
                    rows[s] = r
                    break
            else:
                raise MdpError(f"action {label!r} not enabled at {mdp.names[s]!r}")
        return cls(rows)

    @property
    def key(self) -> bytes:
        return self.rows.tobytes()

    def __eq__(self, other):
        return isinstance(other, DmScheduler) and np.array_equal(self.rows, other.rows)

    def __hash__(self):
        return hash(self.key)

    def __repr__(self):
        return f"DmScheduler({self.rows.tolist()})"


def _is_exact(f) -> bool:
    return not isinstance(f, np.ndarray)


def bottom(mdp: Mdp, tw: TargetWeight | None = None, exact: bool = False):
    if exact:
        return [Fraction(0)] * mdp.n_states
    return np.zeros(mdp.n_states)


# --- Bellman operator ------------------------------------------------------


def bellman_apply(mdp: Mdp, tw: TargetWeight, f):
    """One application of the weighted Bellman operator."""
    if len(f) != mdp.n_states:
        raise MdpError(f"vector of length {len(f)} for {mdp.n_states} states")
    if not _is_exact(f):
        out = mdp.row_max(mdp.matrix @ f)
        out[tw.idx] = tw.wf
        return out
    fq = [mpq(x.numerator, x.denominator) if isinstance(x, Fraction) else mpq(x) for x in f]
    out = _exact_row_max(mdp, fq)
    for t, w in zip(tw.targets, tw.wq):
        out[t] = mpq(w.numerator, w.denominator)
    return [_frac(x) for x in out]


def _exact_q(mdp: Mdp, fq, r):
    tab = mdp.mpq_table
    a, b = mdp.indptr[r], mdp.indptr[r + 1]
    acc = mpq(0)
    for d, c in zip(mdp.indices[a:b].tolist(), mdp.codes[a:b].tolist()):
        acc += tab[c] * fq[d]
    return acc


def _exact_row_max(mdp: Mdp, fq):
    out = []
    for s in range(mdp.n_states):
        best = mpq(0)
        for r in mdp.rows(s):
            q = _exact_q(mdp, fq, r)
            if q > best:
                best = q
        out.append(best)
    return out


def value_iterate(mdp: Mdp, tw: TargetWeight, start, sweeps: int):
    """Apply the Bellman operator ``sweeps`` times to ``start``."""
    f = start.copy() if not _is_exact(start) else list(start)
    for _ in range(sweeps):
        f = bellman_apply(mdp, tw, f)
    return f


def verify_upper(mdp: Mdp, tw: TargetWeight, u) -> bool:
    """Park check: is Φ(u) ≤ u pointwise?"""
    pu = bellman_apply(mdp, tw, u)
    if _is_exact(u):
        return all(a <= b for a, b in zip(pu, u))
    return bool(np.all(pu <= u + PARK_TOL))


# --- schedulers --------------------------------------------------------------


def greedy_scheduler(mdp: Mdp, tw: TargetWeight, values, tol: float = 1e-12) -> DmScheduler:
    """A DM scheduler picking actions that are optimal for ``values``.

    Among optimal actions the choice prefers ones that make progress towards a
    positively weighted target (a backward attractor), so that end components
    with value zero are not chosen where an equally good exit exists.
    """
    n = mdp.n_states
    if _is_exact(values):
        vq = [mpq(x.numerator, x.denominator) for x in values]
        q = np.array([_exact_q(mdp, vq, r) for r in range(mdp.n_rows)], dtype=object)
        best = np.array([max((q[r] for r in mdp.rows(s)), default=mpq(0))
                         for s in range(n)], dtype=object)
        optimal = np.array([q[r] >= best[mdp.state_of_row[r]] for r in range(mdp.n_rows)],
                           dtype=bool)
        qf = np.array([float(x) for x in q], dtype=float)
    else:
        qf = mdp.matrix @ values
        best = mdp.row_max(qf)
        optimal = qf >= best[mdp.state_of_row] - tol
    choice = np.full(n, -1, dtype=np.int64)
    done = np.zeros(n, dtype=bool)
    seeds = [t for t, w in zip(tw.targets, tw.weights) if w > 0]
    done[np.asarray(seeds, dtype=np.int64)] = True
    done[mdp.sinks] = True
    reached = np.zeros(n, dtype=bool)
    reached[np.asarray(seeds, dtype=np.int64)] = True
    struct = sp.csr_matrix((np.ones(len(mdp.indices)), mdp.indices, mdp.indptr),
                           shape=(mdp.n_rows, n))
    sor = mdp.state_of_row
    while True:
        hits = struct @ reached.astype(float) > 0
        cand = np.flatnonzero(optimal & hits & ~done[sor])
        if cand.size == 0:
            break
        # best q among progressing optimal rows, first on ties
        order = np.lexsort((cand, -qf[cand], sor[cand]))
        cand = cand[order]
        st, first = np.unique(sor[cand], return_index=True)
        choice[st] = cand[first]
        done[st] = True
        reached[st] = True
    rest = np.flatnonzero(~done)
    if rest.size:
        masked = np.where(optimal, qf, -np.inf)
        am = mdp.row_argmax(masked)
        choice[rest] = am[rest]
    return DmScheduler(choice)


# --- Markov chain solves -----------------------------------------------------


def _relevant(mdp: Mdp, chain: sp.csr_matrix, seeds) -> np.ndarray:
    struct = chain.copy()
    struct.data = np.ones_like(struct.data)
    return backward_reachable(struct, seeds)


def chain_values(mdp: Mdp, sched: DmScheduler, targets, weights, exact: bool = False):
    """Values under a fixed scheduler for several weight columns at once.

    ``weights`` has one row per target and k columns. Returns an n×k array
    (float) or a list of n rows of k Fractions (exact). States that cannot
    reach a target with a nonzero weight are set to 0 before solving, which
    keeps the linear systems nonsingular.
    """
    n = mdp.n_states
    targets = [int(t) for t in targets]
    chain, pos = mdp.chain(sched.rows)
    if not exact:
        W = np.asarray(weights, dtype=float)
        if W.ndim < 2:
            W = W.reshape(len(targets), -1) if targets else W.reshape(0, 1)
        k = W.shape[1]
        vals = np.zeros((n, k))
        if not targets:
            return vals
        tidx = np.asarray(targets, dtype=np.int64)
        vals[tidx] = W
        seeds = tidx[np.any(W != 0, axis=1)]
        rel = _relevant(mdp, chain, seeds)
        is_t = np.zeros(n, dtype=bool)
        is_t[tidx] = True
        X = np.flatnonzero(rel & ~is_t & ~mdp.sinks)
        if X.size:
            sub = chain[X]
            A = sp.identity(X.size, format="csc") - sub[:, X].tocsc()
            b = (sub[:, tidx] @ W)
            x = splu(A.tocsc()).solve(np.asarray(b, dtype=float))
            vals[X] = x.reshape(X.size, k)
        np.clip(vals, 0.0, 1.0, out=vals)
        return vals

    Wq = [[mpq(to_fraction(x).numerator, to_fraction(x).denominator) for x in row]
          for row in weights]
    k = len(Wq[0]) if Wq else 0
    zero = [mpq(0)] * k
    vals = [None] * n
    for t, row in zip(targets, Wq):
        vals[t] = row
    if not targets:
        return [[Fraction(0)] * k for _ in range(n)]
    seeds = [t for t, row in zip(targets, Wq) if any(x != 0 for x in row)]
    rel = _relevant(mdp, chain, seeds)
    is_t = np.zeros(n, dtype=bool)
    is_t[targets] = True
    X = np.flatnonzero(rel & ~is_t & ~mdp.sinks)
    tab = mdp.mpq_table
    ptr, ind = chain.indptr, chain.indices
    codes = mdp.codes[pos]
    inX = np.zeros(n, dtype=bool)
    inX[X] = True
    for comp in strongly_connected_components(ptr, ind, X):
        if len(comp) == 1:
            s = comp[0]
            self_p = mpq(0)
            acc = list(zero)
            for e in range(ptr[s], ptr[s + 1]):
                d = int(ind[e])
                p = tab[codes[e]]
                if d == s:
                    self_p += p
                    continue
                v = vals[d]
                if v is not None:
                    acc = [a + p * x for a, x in zip(acc, v)]
            denom = 1 - self_p
            vals[s] = [a / denom for a in acc]
            continue
        local = {s: j for j, s in enumerate(comp)}
        rows = []
        rhs = []
        for s in comp:
            row = {local[s]: mpq(1)}
            acc = list(zero)
            for e in range(ptr[s], ptr[s + 1]):
                d = int(ind[e])
                p = tab[codes[e]]
                j = local.get(d)
                if j is not None:
                    row[j] = row.get(j, mpq(0)) - p
                    if row[j] == 0:
                        del row[j]
                else:
                    v = vals[d]
                    if v is not None:
                        acc = [a + p * x for a, x in zip(acc, v)]
            rows.append(row)
            rhs.append(acc)
        sol = _sparse_solve(rows, rhs)
        for s, j in local.items():
            vals[s] = sol[j]
    return [[_frac(x) for x in (v if v is not None else zero)] for v in vals]


def _sparse_solve(rows, rhs):
    """Gaussian elimination without pivoting on dict rows (nonsingular M-matrix)."""
    m = len(rows)
    col_rows = {}
    for r, row in enumerate(rows):
        for c in row:
            col_rows.setdefault(c, set()).add(r)
    for i in range(m):
        prow = rows[i]
        piv = prow[i]
        below = [r for r in col_rows.get(i, ()) if r > i]
        for r in below:
            row = rows[r]
            f = row.pop(i) / piv
            col_rows[i].discard(r)
            for c, v in prow.items():
                if c == i:
                    continue
                nv = row.get(c, 0) - f * v
                if nv == 0:
                    if c in row:
                        del row[c]
                        col_rows[c].discard(r)
                else:
                    if c not in row:
                        col_rows.setdefault(c, set()).add(r)
                    row[c] = nv
            rhs[r] = [a - f * b for a, b in zip(rhs[r], rhs[i])]
    x = [None] * m
    for i in range(m - 1, -1, -1):
        row = rows[i]
        acc = list(rhs[i])
        for c, v in row.items():
            if c != i:
                acc = [a - v * b for a, b in zip(acc, x[c])]
        x[i] = [a / row[i] for a in acc]
    return x


def mc_reachability(mdp: Mdp, sched: DmScheduler, targets, sources=None, exact: bool = False):
    """Per-target reachability probabilities under ``sched``.

    Returns one row per source (all states if ``sources`` is None) and one
    column per target.
    """
    targets = [mdp.state(t) for t in targets]
    k = len(targets)
    if exact:
        ident = [[Fraction(int(i == j)) for j in range(k)] for i in range(k)]
    else:
        ident = np.eye(k)
    vals = chain_values(mdp, sched, targets, ident, exact=exact)
    if sources is None:
        return vals
    src = [mdp.state(s) for s in sources]
    if exact:
        return [vals[s] for s in src]
    return vals[src]


def evaluate(mdp: Mdp, tw: TargetWeight, sched: DmScheduler, exact: bool = False):
    """Weighted value vector of a fixed scheduler."""
    if exact:
        W = [[w] for w in tw.wq]
        return [row[0] for row in chain_values(mdp, sched, tw.targets, W, exact=True)]
    return chain_values(mdp, sched, tw.targets, tw.wf.reshape(-1, 1))[:, 0]


# --- policy iteration ----------------------------------------------------------


def _initial_scheduler(mdp: Mdp, tw: TargetWeight) -> DmScheduler:
    f = value_iterate(mdp, tw, bottom(mdp), min(50, mdp.n_states + 1))
    return greedy_scheduler(mdp, tw, f)


def _improve_float(mdp: Mdp, tw: TargetWeight, sched: DmScheduler, v):
    q = mdp.matrix @ v
    best = mdp.row_max(q)
    better = best > v + 1e-12
    better[mdp.sinks] = False
    better[tw.idx] = False
    if not better.any():
        return None
    am = mdp.row_argmax(q)
    rows = sched.rows.copy()
    rows[better] = am[better]
    return DmScheduler(rows)


def _improve_exact(mdp: Mdp, tw: TargetWeight, sched: DmScheduler, v):
    vq = [mpq(x.numerator, x.denominator) for x in v]
    is_t = set(tw.targets)
    rows = sched.rows.copy()
    changed = False
    for s in range(mdp.n_states):
        if s in is_t:
            continue
        best, arg = vq[s], -1
        for r in mdp.rows(s):
            q = _exact_q(mdp, vq, r)
            if q > best:
                best, arg = q, r
        if arg >= 0:
            rows[s] = arg
            changed = True
    return DmScheduler(rows) if changed else None


def policy_iteration_exact(mdp: Mdp, tw: TargetWeight, init: DmScheduler | None = None,
                           exact: bool | None = None, max_iter: int = 10_000):
    """Optimal weighted values by policy iteration.

    In exact mode the result is the least fixed point in rationals. A float
    policy iteration runs first to provide a good starting scheduler; the
    exact phase then only switches actions on strict exact improvement.
    """
    if exact is None:
        exact = mdp.numeric_mode is NumericMode.EXACT
    sched = init if init is not None else _initial_scheduler(mdp, tw)
    for _ in range(max_iter):
        v = evaluate(mdp, tw, sched)
        nxt = _improve_float(mdp, tw, sched, v)
        if nxt is None:
            break
        sched = nxt
    if not exact:
        return v, sched
    for _ in range(max_iter):
        v = evaluate(mdp, tw, sched, exact=True)
        nxt = _improve_exact(mdp, tw, sched, v)
        if nxt is None:
            return v, sched
        sched = nxt
    raise RuntimeError("policy iteration did not stabilise")


# --- optimistic value iteration ------------------------------------------------


class OviResult(NamedTuple):
    lower: np.ndarray
    upper: np.ndarray
    sched: DmScheduler
    converged: bool
    applications: int


def ovi_solve(mdp: Mdp, tw: TargetWeight, eta: float, start=None,
              budget: int = DEFAULT_BUDGET, rounds: int = OVI_ROUNDS,
              min_sweeps: int = 0) -> OviResult:
    """Optimistic value iteration.

    Iterates from ``start`` (⊥ by default; any vector below the least fixed
    point is allowed) until successive iterates differ by at most a shrinking
    tolerance, then proposes ``min(1, l + eta)``. The candidate is pushed down
    with ``u ← min(u, Φ(u))`` while ``l`` keeps improving, and is accepted as
    soon as it passes the Park check. If the two cross, or the verification
    phase runs as long as the phase before it, the tolerance is halved and
    the next round starts.
    """
    if eta <= 0:
        raise MdpError("eta must be positive")
    n = mdp.n_states
    l = np.zeros(n) if start is None else np.array(start, dtype=float)
    l[tw.idx] = tw.wf
    zero_sinks = mdp.sinks.copy()
    zero_sinks[tw.idx] = False
    l[zero_sinks] = 0.0
    # leveling is only valid when targets are absorbing
    level = bool(np.all(mdp.sinks[tw.idx]))

    def step(f):
        nf = np.maximum(bellman_apply(mdp, tw, f), f)
        return mdp.level_mecs(nf) if level else nf

    if level:
        mdp.level_mecs(l)
    apps = 0
    tol = eta / 2
    sweeps = 0
    for _ in range(rounds):
        phase = 0
        while apps < budget:
            nl = step(l)
            apps += 1
            sweeps += 1
            phase += 1
            diff = float(np.max(nl - l)) if n else 0.0
            l = nl
            if diff <= tol and sweeps >= min_sweeps:
                break
        u = np.minimum(1.0, l + eta)
        u[tw.idx] = tw.wf
        u[zero_sinks] = 0.0
        for _ in range(max(phase, 1)):
            if apps >= budget:
                break
            pu = bellman_apply(mdp, tw, u)
            apps += 1
            if bool(np.all(pu <= u + PARK_TOL)):
                return OviResult(l, u, greedy_scheduler(mdp, tw, l), True, apps)
            u = np.minimum(u, pu)
            l = step(l)
            apps += 1
            if np.any(u < l):
                break
        if apps >= budget:
            break
        tol /= 2
    return OviResult(l, np.ones(n), greedy_scheduler(mdp, tw, l), False, apps)
