"""Optimal nonbipartite pairing: minimum-weight perfect matching with
forbidden pairs, sentinel-based infeasibility detection, and a bipartite
fast path when the allowed graph is two-colorable with equal sides."""

from __future__ import annotations

import numpy as np
from scipy.optimize import linear_sum_assignment

from ..data_model import DataError
from ..distance import DistanceMatrix, InfeasibleError
from ._blossom import max_weight_matching
from .types import Pairing, scale_costs

_LEX_CAP = 16  # exact lexicographic tie-breaking up to this size

_INFEASIBLE = object()


def _multipartite_labels(forbidden: np.ndarray):
    """Group labels when the forbidden relation is exactly "same group"
    (complete multipartite allowed graph), else None."""
    n = forbidden.shape[0]
    labels = np.full(n, -1, np.int64)
    g = 0
    for i in range(n):
        if labels[i] >= 0:
            continue
        members = forbidden[i].copy()
        members[i] = True
        labels[members] = g
        g += 1
    # the verification below is complete: it passes only when forbidden
    # is exactly the same-group relation, however labels were built
    same = labels[:, None] == labels[None, :]
    np.fill_diagonal(same, True)
    check = forbidden.copy()
    np.fill_diagonal(check, True)
    if not np.array_equal(same, check):
        return None
    return labels


def _equal_cost_fast_path(costs: np.ndarray, forbidden: np.ndarray):
    """When every allowed edge has the same cost and the allowed graph is
    complete multipartite, any feasible perfect matching is optimal.
    Pair nodes from the two largest groups first (the classic greedy is
    feasible iff no group exceeds n/2 and n is even).  Returns
    (total, pairs), _INFEASIBLE, or None when the fast path is off."""
    import heapq

    n = costs.shape[0]
    off = ~forbidden & ~np.eye(n, dtype=bool)
    vals = costs[off]
    if vals.size == 0 or vals.min() != vals.max():
        return None
    labels = _multipartite_labels(forbidden)
    if labels is None:
        return None
    if n % 2:
        return _INFEASIBLE
    groups = [sorted(np.flatnonzero(labels == g))
              for g in range(labels.max() + 1)]
    heap = [(-len(g), g[0], g) for g in groups if g]
    heapq.heapify(heap)
    pairs = []
    while heap:
        if len(heap) == 1:
            return _INFEASIBLE  # one group left, all mutually forbidden
        na, _, ga = heapq.heappop(heap)
        nb, _, gb = heapq.heappop(heap)
        a, b = ga.pop(0), gb.pop(0)
        pairs.append((a, b) if a < b else (b, a))
        if ga:
            heapq.heappush(heap, (na + 1, ga[0], ga))
        if gb:
            heapq.heappush(heap, (nb + 1, gb[0], gb))
    total = int(vals[0]) * (n // 2)
    return total, pairs


def _bipartition(forbidden: np.ndarray):
    """Two-color the allowed graph by BFS; None if it is not connected
    bipartite with equal sides."""
    n = forbidden.shape[0]
    color = np.full(n, -1, np.int8)
    color[0] = 0
    stack = [0]
    while stack:
        v = stack.pop()
        for w in np.flatnonzero(~forbidden[v]):
            if w == v:
                continue
            if color[w] == -1:
                color[w] = 1 - color[v]
                stack.append(w)
            elif color[w] == color[v]:
                return None
    if (color == -1).any():
        return None
    left = np.flatnonzero(color == 0)
    right = np.flatnonzero(color == 1)
    if len(left) != len(right):
        return None
    return left, right


def _blossom_min_cost(costs: np.ndarray, usable: np.ndarray):
    """Minimum-cost perfect matching over usable edges (integer costs)."""
    n = costs.shape[0]
    iu, ju = np.triu_indices(n, 1)
    keep = usable[iu, ju]
    ei, ej = iu[keep], ju[keep]
    c = costs[ei, ej]
    wmax = c.max() if len(c) else 0
    mate = max_weight_matching(n, ei, ej, wmax + 1 - c, maxcardinality=True)
    return mate


def _solve_scaled(costs: np.ndarray, forbidden: np.ndarray):
    """Optimal perfect matching cost/pairs on scaled integer costs, or
    None when no forbidden-free perfect matching exists."""
    n = costs.shape[0]
    finite = costs[~forbidden & ~np.eye(n, dtype=bool)]
    maxfin = int(finite.max()) if finite.size else 0
    sentinel = n * maxfin + 1
    work = np.where(forbidden, sentinel, costs)
    np.fill_diagonal(work, 0)

    fast = _equal_cost_fast_path(work, forbidden)
    if fast is _INFEASIBLE:
        return None
    if fast is not None:
        return fast

    bip = _bipartition(forbidden)
    if bip is not None:
        left, right = bip
        sub = work[np.ix_(left, right)]
        rows, cols = linear_sum_assignment(sub)
        mate = np.full(n, -1, np.int64)
        mate[left[rows]] = right[cols]
        mate[right[cols]] = left[rows]
    else:
        mate = _blossom_min_cost(work, np.ones((n, n), bool))
        if np.any(mate < 0):
            return None
    pairs = [(v, int(mate[v])) for v in range(n) if mate[v] > v]
    if any(forbidden[a, b] for a, b in pairs):
        return None
    total = sum(int(work[a, b]) for a, b in pairs)
    return total, pairs


def _lexicographic(costs: np.ndarray, forbidden: np.ndarray, opt: int):
    """Smallest pair listing among optimal matchings (small n only)."""
    n = costs.shape[0]
    remaining = list(range(n))
    chosen = []
    budget = opt
    while remaining:
        i = remaining[0]
        for j in remaining[1:]:
            if forbidden[i, j]:
                continue
            rest = [u for u in remaining if u not in (i, j)]
            if rest:
                idx = np.array(rest)
                sub = _solve_scaled(costs[np.ix_(idx, idx)],
                                    forbidden[np.ix_(idx, idx)])
                rest_cost = None if sub is None else sub[0]
            else:
                rest_cost = 0
            if rest_cost is not None \
                    and int(costs[i, j]) + rest_cost == budget:
                chosen.append((i, j))
                budget -= int(costs[i, j])
                remaining = [u for u in remaining if u not in (i, j)]
                break
        else:
            raise AssertionError("optimal matching lost during tie-break")
    return chosen


def optimal_nonbipartite_match(dist: DistanceMatrix) -> Pairing:
    """Perfect matching of all units minimizing total distance with no
    forbidden pair used.  Odd n gets an internal phantom unit at distance
    0 to everyone; its partner is reported unmatched."""
    n = dist.n
    if n < 2:
        raise DataError("need at least 2 units to pair")
    costs = scale_costs(dist.entries)
    forbidden = dist.forbidden.copy()
    phantom = None
    if n % 2:
        phantom = n
        costs = np.pad(costs, ((0, 1), (0, 1)))
        forbidden = np.pad(forbidden, ((0, 1), (0, 1)))
        n += 1
    sol = _solve_scaled(costs, forbidden)
    if sol is None:
        raise InfeasibleError("forbidden structure admits no pairing")
    total, pairs = sol
    if n <= _LEX_CAP:
        pairs = _lexicographic(costs, forbidden, total)
    unmatched = ()
    if phantom is not None:
        for a, b in pairs:
            if phantom in (a, b):
                unmatched = (a if b == phantom else b,)
        pairs = [(a, b) for a, b in pairs if phantom not in (a, b)]
    pairs = tuple(sorted(tuple(sorted(p)) for p in pairs))
    total_dist = float(sum(dist.entries[a, b] for a, b in pairs))
    return Pairing(pairs=pairs, total_distance=total_dist,
                   unmatched=unmatched)
