"""Exhaustive-enumeration oracles for the two matching engines."""

from __future__ import annotations

from itertools import combinations

import numpy as np

from ..data_model import DataError
from ..distance import DistanceMatrix, InfeasibleError
from .types import FullMatching, MatchedSet, Pairing

_PAIRING_CAP = 12
_FULL_CAP = 10


def brute_force_pairing(dist: DistanceMatrix) -> Pairing:
    """Minimum-distance perfect matching by enumeration (n <= 12, even).

    Among equal-cost optima the lexicographically smallest pair list wins
    (enumeration order guarantees it with strict improvement)."""
    n = dist.n
    if n > _PAIRING_CAP:
        raise DataError(f"brute-force pairing capped at n={_PAIRING_CAP}")
    if n % 2:
        raise DataError("brute-force pairing needs even n")
    entries = dist.entries
    forbidden = dist.forbidden
    best_cost = None
    best_pairs = None

    def rec(remaining, acc, pairs):
        nonlocal best_cost, best_pairs
        if not remaining:
            if best_cost is None or acc < best_cost:
                best_cost = acc
                best_pairs = list(pairs)
            return
        i = remaining[0]
        for j in remaining[1:]:
            if forbidden[i, j]:
                continue
            pairs.append((i, j))
            rec([u for u in remaining[1:] if u != j],
                acc + entries[i, j], pairs)
            pairs.pop()

    rec(list(range(n)), 0.0, [])
    if best_pairs is None:
        raise InfeasibleError("forbidden structure admits no pairing")
    return Pairing(pairs=tuple(best_pairs), total_distance=float(best_cost))


def _star_cost(entries, tset, cset):
    return float(sum(entries[t, c] for t in tset for c in cset))


def brute_force_full_match(dist: DistanceMatrix, treated, controls,
                           max_ratio: int = 2,
                           n_controls_to_use: int | None = None,
                           ) -> FullMatching:
    """Exact full matching by enumerating all star forests
    (|treated| + |controls| <= 10)."""
    treated = list(treated)
    controls = list(controls)
    nt, nc = len(treated), len(controls)
    if nt + nc > _FULL_CAP:
        raise DataError(f"brute-force full match capped at "
                        f"{_FULL_CAP} units")
    m = nc if n_controls_to_use is None else int(n_controls_to_use)
    if not 1 <= m <= nc:
        raise DataError("n_controls_to_use out of range")
    entries = dist.entries[np.ix_(treated, controls)]
    best = None  # (cost, canonical set listing)

    def rec(t_left, c_left, used_c, acc, sets):
        nonlocal best
        if not t_left:
            if used_c != m:
                return
            key = tuple(sorted(sets))
            cand = (acc, key)
            if best is None or cand < best:
                best = cand
            return
        if used_c + len(t_left) * max_ratio < m:
            return  # cannot use enough controls any more
        t = t_left[0]
        rest_t = t_left[1:]
        # treated-centered star: t with 1..max_ratio controls
        for k in range(1, max_ratio + 1):
            for cs in combinations(c_left, k):
                rec(rest_t, [c for c in c_left if c not in cs],
                    used_c + k,
                    acc + _star_cost(entries, (t,), cs),
                    sets + [((t,), cs)])
        # control-centered star: t with 1..max_ratio-1 other treated
        # sharing one control
        for k in range(1, max_ratio):
            for ts in combinations(rest_t, k):
                group = (t,) + ts
                for c in c_left:
                    rec([u for u in rest_t if u not in ts],
                        [u for u in c_left if u != c],
                        used_c + 1,
                        acc + _star_cost(entries, group, (c,)),
                        sets + [(group, (c,))])

    rec(list(range(nt)), list(range(nc)), 0, 0.0, [])
    if best is None:
        raise InfeasibleError("no feasible full matching")
    cost, key = best
    sets = tuple(MatchedSet(treated=tuple(treated[i] for i in ts),
                            controls=tuple(controls[j] for j in cs))
                 for ts, cs in key)
    return FullMatching(sets=sets, total_distance=float(cost))
