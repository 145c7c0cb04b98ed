"""Rank-based Mahalanobis distances on covariates with missing-data
indicator augmentation, plus forbidden-pair constraint marking."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .data_model import DataError, RegionLabel


class InfeasibleError(RuntimeError):
    pass


@dataclass
class DistanceMatrix:
    """Symmetric pairwise distances; forbidden marks disallowed pairs."""

    entries: np.ndarray
    forbidden: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.entries = np.asarray(self.entries, float)
        n = self.entries.shape[0]
        if self.entries.shape != (n, n):
            raise DataError("distance matrix must be square")
        if self.forbidden is None:
            self.forbidden = np.zeros((n, n), bool)
        self.forbidden = np.asarray(self.forbidden, bool)
        if self.forbidden.shape != (n, n):
            raise DataError("forbidden mask shape mismatch")
        if not np.array_equal(self.entries, self.entries.T) \
                and not np.allclose(self.entries, self.entries.T):
            raise DataError("distance matrix must be symmetric")
        if np.any(np.diag(self.entries) != 0):
            raise DataError("distance diagonal must be zero")
        if np.any(self.entries < 0):
            raise DataError("distances must be nonnegative")
        if np.any(self.forbidden != self.forbidden.T) \
                or np.any(np.diag(self.forbidden)):
            raise DataError("forbidden mask must be symmetric with a "
                            "false diagonal")

    @property
    def n(self) -> int:
        return self.entries.shape[0]


def rank_transform(columns, missing=None, names: Sequence[str] | None = None,
                   ) -> np.ndarray:
    """Column-wise average ranks; missingness spawns 0/1 indicator columns.

    Missing cells are replaced by the column median of observed values
    before ranking.  Indicator columns are rank-transformed like everything
    else (a 0/1 column just yields two tied rank groups), so the final
    distances do not depend on the placeholder value.
    """
    X = np.asarray(columns, float)
    if X.ndim != 2:
        X = X.reshape(len(X), -1)
    n, k = X.shape
    if n < 2:
        raise DataError("rank_transform needs at least 2 units")
    if missing is None:
        miss = np.isnan(X)
    else:
        miss = np.asarray(missing, bool).reshape(n, k)
    cols = []
    for j in range(k):
        col = X[:, j].copy()
        mj = miss[:, j]
        if mj.all():
            name = names[j] if names else str(j)
            raise DataError(f"covariate column {name!r} entirely missing")
        if mj.any():
            col[mj] = np.median(col[~mj])
        cols.append(col)
    for j in range(k):
        if miss[:, j].any():
            cols.append(miss[:, j].astype(float))
    R = np.column_stack([rankdata(c, method="average") for c in cols])
    return R


def rank_mahalanobis(ranks) -> DistanceMatrix:
    """Pairwise sqrt((r_i - r_j)' S+ (r_i - r_j)) with S the sample
    covariance of the rank columns and S+ its pseudo-inverse."""
    R = np.asarray(ranks, float)
    if R.ndim != 2:
        R = R.reshape(len(R), -1)
    n = R.shape[0]
    if n < 2:
        raise DataError("need at least 2 units")
    if R.shape[1] == 0:
        return DistanceMatrix(entries=np.zeros((n, n)))
    S = np.cov(R, rowvar=False, ddof=1).reshape(R.shape[1], R.shape[1])
    Sp = np.linalg.pinv(S, hermitian=True)
    M = R @ Sp
    sq = np.einsum("ij,ij->i", M, R)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (M @ R.T)
    d2 = np.maximum(d2, 0.0)
    ent = np.sqrt(d2)
    ent = 0.5 * (ent + ent.T)
    np.fill_diagonal(ent, 0.0)
    return DistanceMatrix(entries=ent)


def apply_constraints(dist: DistanceMatrix,
                      labels: Sequence[RegionLabel],
                      mode: str = "cross_region",
                      coord: int = 0,
                      cut_index: int = 0) -> DistanceMatrix:
    """Mark same-region (or same-side-of-one-cut) pairs forbidden.

    cross_region forbids pairs sharing a region; cross_milestone forbids
    pairs on the same side of cut number cut_index of dose coordinate
    coord.  Entries are untouched.
    """
    n = dist.n
    if len(labels) != n:
        raise DataError("labels length mismatch")
    if mode == "cross_region":
        key = np.array([lb.index for lb in labels])
    elif mode == "cross_milestone":
        key = np.array([1 if lb.sides[coord] > cut_index else 0
                        for lb in labels])
    else:
        raise DataError(f"unknown constraint mode {mode!r}")
    forb = dist.forbidden | (key[:, None] == key[None, :])
    np.fill_diagonal(forb, False)
    off = ~np.eye(n, dtype=bool)
    if n > 1 and forb[off].all():
        raise InfeasibleError("no feasible matching: all pairs forbidden")
    return DistanceMatrix(entries=dist.entries.copy(), forbidden=forb)


def dump_distance_matrix(dist: DistanceMatrix, fh, delimiter=",") -> None:
    """Delimited dump with INF in forbidden cells."""
    n = dist.n
    for i in range(n):
        row = ["INF" if dist.forbidden[i, j] else repr(dist.entries[i, j])
               for j in range(n)]
        fh.write(delimiter.join(row) + "\n")
