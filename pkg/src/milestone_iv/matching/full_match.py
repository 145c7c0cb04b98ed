"""Optimal full matching via minimum-cost network flow.

The relaxation "at least m controls used" is a pure network flow, so its
LP has an integral optimal vertex (solved with HiGHS).  Whenever that
optimum uses exactly m controls it is provably the optimum of the
exactly-m problem (the feasible set only shrinks).  The rare case where
the relaxed optimum uses more than m controls falls back to an exact MILP
on the same bipartite edge variables.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import LinearConstraint, linprog, milp
from scipy.optimize import Bounds

from ..data_model import DataError
from ..distance import DistanceMatrix, InfeasibleError
from .types import FullMatching, MatchedSet, scale_costs

_MILP_CAP = 20000  # max nt*nc for the exact fallback


def _check_feasible(nt: int, nc: int, max_ratio: int, m: int) -> None:
    if max_ratio < 1:
        raise DataError("max_ratio must be >= 1")
    if not 1 <= m <= nc:
        raise DataError("n_controls_to_use must be in [1, n_controls]")
    if max_ratio * nt < m:
        raise InfeasibleError(
            f"infeasible: {nt} treated cannot absorb {m} controls at "
            f"ratio {max_ratio}")
    if max_ratio * m < nt:
        raise InfeasibleError(
            f"infeasible: {m} controls cannot cover {nt} treated at "
            f"ratio {max_ratio}")


def _flow_lp(cost: np.ndarray, r: int, m: int):
    """Min-cost flow LP for the >=m-controls-used relaxation.

    Nodes: source S, treated t_i, control c_j, USE, collector K.  Arcs:
    S->t_i [1,r], t_i->c_j [0,1] cost d_ij, c_j->USE [0,1],
    c_j->K [0,r-1], USE->K [m,m], K->S [nt, r*nt].  Returns the integral
    edge matrix or None if HiGHS fails.
    """
    nt, nc = cost.shape
    n_edge = nt * nc
    # variable order: f_ij (nt*nc), a_i = S->t_i (nt), u_j = c_j->USE (nc),
    # k_j = c_j->K (nc), g = USE->K, h = K->S
    nvar = n_edge + nt + nc + nc + 2
    c_obj = np.zeros(nvar)
    c_obj[:n_edge] = cost.ravel()
    lb = np.zeros(nvar)
    ub = np.ones(nvar)
    lb[n_edge:n_edge + nt] = 1.0
    ub[n_edge:n_edge + nt] = r
    ub[n_edge + nt + nc:n_edge + nt + 2 * nc] = r - 1
    lb[-2] = ub[-2] = m
    lb[-1] = nt
    ub[-1] = r * nt
    n_node = nt + nc + 3
    rows, cols, vals = [], [], []

    def arc(var, tail, head):
        rows.extend((tail, head))
        cols.extend((var, var))
        vals.extend((1.0, -1.0))

    S, USE, K = nt + nc, nt + nc + 1, nt + nc + 2
    for i in range(nt):
        for j in range(nc):
            arc(i * nc + j, i, nt + j)
        arc(n_edge + i, S, i)
    for j in range(nc):
        arc(n_edge + nt + j, nt + j, USE)
        arc(n_edge + nt + nc + j, nt + j, K)
    arc(nvar - 2, USE, K)
    arc(nvar - 1, K, S)
    from scipy.sparse import csr_matrix

    A = csr_matrix((vals, (rows, cols)), shape=(n_node, nvar))
    res = linprog(c_obj, A_eq=A, b_eq=np.zeros(n_node),
                  bounds=np.column_stack([lb, ub]), method="highs-ds")
    if not res.success:
        return None
    f = res.x[:n_edge].reshape(nt, nc)
    fint = np.rint(f)
    if np.abs(f - fint).max() > 1e-6:
        return None  # non-vertex solution; let the caller fall back
    return fint.astype(np.int64)


def _milp_exact(cost: np.ndarray, r: int, m: int):
    """Exact MILP: binary edges f_ij, binary control-use u_j."""
    nt, nc = cost.shape
    if nt * nc > _MILP_CAP:
        raise InfeasibleError(
            "control-count optimum requires the exact solver beyond its "
            "supported size; choose n_controls_to_use achievable by the "
            "flow relaxation or reduce the instance")
    n_edge = nt * nc
    nvar = n_edge + nc
    c_obj = np.zeros(nvar)
    c_obj[:n_edge] = cost.ravel()
    cons = []
    from scipy.sparse import lil_matrix

    # treated degrees in [1, r]
    At = lil_matrix((nt, nvar))
    for i in range(nt):
        At[i, i * nc:(i + 1) * nc] = 1.0
    cons.append(LinearConstraint(At.tocsr(), 1, r))
    # control degree bounds: u_j <= deg_j <= r*u_j
    Alo = lil_matrix((nc, nvar))
    Ahi = lil_matrix((nc, nvar))
    for j in range(nc):
        Alo[j, j::nc] = 1.0
        Alo[j, n_edge + j] = -1.0
        Ahi[j, j::nc] = 1.0
        Ahi[j, n_edge + j] = -float(r)
    cons.append(LinearConstraint(Alo.tocsr(), 0, np.inf))
    cons.append(LinearConstraint(Ahi.tocsr(), -np.inf, 0))
    Au = lil_matrix((1, nvar))
    Au[0, n_edge:] = 1.0
    cons.append(LinearConstraint(Au.tocsr(), m, m))
    res = milp(c_obj, constraints=cons,
               integrality=np.ones(nvar),
               bounds=Bounds(np.zeros(nvar), np.ones(nvar)))
    if not res.success:
        raise InfeasibleError("no feasible full matching found")
    return np.rint(res.x[:n_edge]).reshape(nt, nc).astype(np.int64)


def _prune_to_stars(edges: np.ndarray, cost: np.ndarray) -> np.ndarray:
    """Remove edges joining two degree->=2 endpoints (only zero-cost edges
    can occur at an optimum); the result is a star forest."""
    e = edges.copy()
    while True:
        degt = e.sum(axis=1)
        degc = e.sum(axis=0)
        ii, jj = np.nonzero(e)
        mask = (degt[ii] >= 2) & (degc[jj] >= 2)
        if not mask.any():
            return e
        i, j = ii[np.argmax(mask)], jj[np.argmax(mask)]
        e[i, j] = 0


def _equal_cost_match(sub, treated, controls, m) -> FullMatching:
    """Direct construction when all cross distances coincide: stars of
    near-equal size over the first m controls.  Any matching needs at
    least max(nt, m) treated-control edges, and equal costs make the
    edge count the whole objective, so this is optimal (feasibility of
    the chunk sizes follows from the max_ratio precheck)."""
    nt = len(treated)
    c = float(sub.flat[0])
    sets = []
    if m >= nt:
        base, extra = divmod(m, nt)
        pos = 0
        for i in range(nt):
            k = base + (1 if i < extra else 0)
            sets.append(MatchedSet(
                treated=(treated[i],),
                controls=tuple(controls[pos:pos + k])))
            pos += k
        edges = m
    else:
        base, extra = divmod(nt, m)
        pos = 0
        for j in range(m):
            k = base + (1 if j < extra else 0)
            sets.append(MatchedSet(
                treated=tuple(treated[pos:pos + k]),
                controls=(controls[j],)))
            pos += k
        edges = nt
    return FullMatching(sets=tuple(sorted(
        sets, key=lambda s: (s.treated, s.controls))),
        total_distance=c * edges)


def optimal_full_match(dist: DistanceMatrix, treated, controls,
                       max_ratio: int = 2,
                       n_controls_to_use: int | None = None) -> FullMatching:
    """Full matching using all treated and exactly n_controls_to_use
    controls, minimizing total within-set treated-control distance with
    set sizes bounded by max_ratio + 1."""
    treated = list(treated)
    controls = list(controls)
    if set(treated) & set(controls):
        raise DataError("treated and control sets overlap")
    nt, nc = len(treated), len(controls)
    if nt == 0 or nc == 0:
        raise DataError("both sides must be nonempty")
    m = nc if n_controls_to_use is None else int(n_controls_to_use)
    _check_feasible(nt, nc, max_ratio, m)
    sub = dist.entries[np.ix_(treated, controls)]
    if dist.forbidden[np.ix_(treated, controls)].any():
        raise DataError("treated-control pair marked forbidden; full "
                        "matching requires all cross distances usable")
    cost = scale_costs(sub).astype(float)

    if cost.min() == cost.max():
        # every treated-control distance is equal: the cheapest full
        # matching uses the fewest edges, i.e. max(nt, m) stars
        return _equal_cost_match(sub, treated, controls, m)

    edges = _flow_lp(cost, max_ratio, m)
    if edges is None:
        edges = _milp_exact(cost, max_ratio, m)
    else:
        used = int((edges.sum(axis=0) > 0).sum())
        if used != m:
            edges = _milp_exact(cost, max_ratio, m)
    edges = _prune_to_stars(edges, cost)

    sets = []
    total = 0.0
    degt = edges.sum(axis=1)
    degc = edges.sum(axis=0)
    if (degt < 1).any():
        raise InfeasibleError("solver left a treated unit unmatched")
    if int((degc > 0).sum()) != m:
        raise InfeasibleError("solver could not hit the requested "
                              "control count")
    claimed_t = np.zeros(nt, bool)
    claimed_c = np.zeros(nc, bool)
    for i in range(nt):
        if claimed_t[i]:
            continue
        js = np.flatnonzero(edges[i])
        if degt[i] > 1 or (len(js) == 1 and degc[js[0]] == 1):
            # treated-centered star
            sets.append(MatchedSet(
                treated=(treated[i],),
                controls=tuple(controls[j] for j in js)))
            claimed_t[i] = True
            claimed_c[js] = True
            total += float(sub[i, js].sum())
    for j in range(nc):
        if claimed_c[j] or degc[j] == 0:
            continue
        its = np.flatnonzero((edges[:, j] > 0) & ~claimed_t)
        sets.append(MatchedSet(
            treated=tuple(treated[i] for i in its),
            controls=(controls[j],)))
        claimed_t[its] = True
        claimed_c[j] = True
        total += float(sub[its, j].sum())
    if not claimed_t.all():
        raise InfeasibleError("internal error: star decomposition "
                              "incomplete")
    sets.sort(key=lambda s: (s.treated, s.controls))
    return FullMatching(sets=tuple(sets), total_distance=total)
