"""Small graph helpers over CSR adjacency arrays."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import breadth_first_order


def strongly_connected_components(indptr, indices, nodes):
    """Tarjan's algorithm without recursion.

    Only edges between members of ``nodes`` are followed. Components are
    yielded in reverse topological order: a component comes after every
    component it can reach.
    """
    member = set(int(v) for v in nodes)
    index = {}
    low = {}
    on_stack = set()
    stack = []
    out = []
    counter = 0
    for root in nodes:
        root = int(root)
        if root in index:
            continue
        work = [(root, int(indptr[root]))]
        index[root] = low[root] = counter
        counter += 1
        stack.append(root)
        on_stack.add(root)
        while work:
            v, pos = work[-1]
            end = int(indptr[v + 1])
            advanced = False
            while pos < end:
                u = int(indices[pos])
                pos += 1
                if u not in member:
                    continue
                if u not in index:
                    work[-1] = (v, pos)
                    index[u] = low[u] = counter
                    counter += 1
                    stack.append(u)
                    on_stack.add(u)
                    work.append((u, int(indptr[u])))
                    advanced = True
                    break
                if u in on_stack and index[u] < low[v]:
                    low[v] = index[u]
            if advanced:
                continue
            work.pop()
            if work:
                parent = work[-1][0]
                if low[v] < low[parent]:
                    low[parent] = low[v]
            if low[v] == index[v]:
                comp = []
                while True:
                    u = stack.pop()
                    on_stack.discard(u)
                    comp.append(u)
                    if u == v:
                        break
                out.append(comp)
    return out


def backward_reachable(adj: sp.csr_matrix, seeds) -> np.ndarray:
    """Boolean mask of nodes that can reach some seed along ``adj`` edges."""
    n = adj.shape[0]
    seeds = np.asarray(seeds, dtype=np.int64)
    mask = np.zeros(n, dtype=bool)
    if seeds.size == 0:
        return mask
    rev = adj.T.tocsr()
    # a virtual root pointing at every seed lets one BFS cover them all
    extra = sp.csr_matrix(
        (np.ones(seeds.size), (np.full(seeds.size, n), seeds)), shape=(n + 1, n + 1)
    )
    rev = sp.vstack([sp.hstack([rev, sp.csr_matrix((n, 1))]), sp.csr_matrix((1, n + 1))])
    order = breadth_first_order((rev + extra).tocsr(), n, directed=True,
                                return_predecessors=False)
    order = order[order < n]
    mask[order] = True
    return mask


def has_cycle(adj: sp.csr_matrix) -> bool:
    """True if the directed graph contains a cycle (self-loops count)."""
    if adj.diagonal().any():
        return True
    n = adj.shape[0]
    comps = strongly_connected_components(adj.indptr, adj.indices, range(n))
    return any(len(c) > 1 for c in comps)


def maximal_end_components(n_states, row_start, indptr, indices) -> np.ndarray:
    """Label every state with its maximal end component, or -1 if it is in none.

    Repeatedly splits the state graph into SCCs and drops actions that can
    leave their SCC; what is left once nothing changes are the MECs.
    """
    from scipy.sparse.csgraph import connected_components

    n_rows = len(row_start) and int(row_start[-1])
    sor = np.repeat(np.arange(n_states), np.diff(row_start))
    row_of_nnz = np.repeat(np.arange(n_rows), np.diff(indptr))
    nonempty = np.diff(indptr) > 0
    allowed = nonempty.copy()
    while True:
        keep = allowed[row_of_nnz]
        g = sp.csr_matrix((np.ones(int(keep.sum())), (sor[row_of_nnz[keep]], indices[keep])),
                          shape=(n_states, n_states))
        _, labels = connected_components(g, directed=True, connection="strong")
        inside = labels[indices] == labels[sor[row_of_nnz]]
        row_inside = np.ones(n_rows, dtype=bool)
        if row_of_nnz.size:
            row_inside[nonempty] = np.minimum.reduceat(inside, indptr[:-1][nonempty])
        new = allowed & row_inside
        if np.array_equal(new, allowed):
            break
        allowed = new
    has_row = np.zeros(n_states, dtype=bool)
    has_row[sor[allowed]] = True
    out = np.full(n_states, -1, dtype=np.int64)
    _, dense = np.unique(labels[has_row], return_inverse=True)
    out[has_row] = dense
    return out
