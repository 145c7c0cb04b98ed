"""Multiple-milestone inference: region-order z-vectors, multivariate
rank differences, the vector signed-rank statistic with its covariance,
chi-square testing, confidence sets by grid inversion, and the
quadratic-form point estimate."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.stats import rankdata

from .data_model import DataError, Partition, RegionLabel
from .inference_uni import (CIResult, DegenerateStatisticError, PairedSample,
                            ci_invert, hl_estimate)

_EIG_TOL = 1e-10


def region_order_vector(label1: RegionLabel, label2: RegionLabel,
                        partition: Partition) -> np.ndarray:
    """Per-coordinate ordering (+1/-1/0) that region membership imposes on
    the true doses of a pair: +1 when every dose in region 1's interval
    exceeds every dose in region 2's."""
    if label1.sides == label2.sides:
        raise DataError("pair within a single region has no order vector")
    if len(label1.sides) != partition.P:
        raise DataError("label/partition dimension mismatch")
    return np.sign(np.array(label1.sides) - np.array(label2.sides)
                   ).astype(float)


@dataclass(frozen=True)
class MVPairedSample:
    """Pairs for P dose coordinates: dy (I,), dd (I, P), z (I, P).

    Pair i is oriented arbitrarily; z_i records which member sits higher
    per coordinate (0 when the regions do not order that coordinate)."""

    dy: np.ndarray
    dd: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "dy", np.asarray(self.dy, float))
        object.__setattr__(self, "dd", np.asarray(self.dd, float))
        object.__setattr__(self, "z", np.asarray(self.z, float))
        I = len(self.dy)
        if self.dd.shape[0] != I or self.z.shape != self.dd.shape:
            raise DataError("dy/dd/z shape mismatch")
        if np.any(np.all(self.z == 0, axis=1)):
            raise DataError("pair crossing no region boundary")

    @property
    def P(self) -> int:
        return self.dd.shape[1]

    def __len__(self):
        return len(self.dy)


@dataclass(frozen=True)
class MVDiffs:
    v: np.ndarray
    r: np.ndarray  # average ranks of |v| (zeros rank lowest, s=0 mutes)
    s: np.ndarray
    beta0: np.ndarray


def mv_differences(sample: MVPairedSample, beta0) -> MVDiffs:
    """V_i = dy_i - beta0' dd_i with average ranks of |V| and signs.
    Zero differences keep rank slots but carry s=0, so they drop out of
    both the statistic and the covariance."""
    beta0 = np.asarray(beta0, float).reshape(-1)
    if beta0.shape != (sample.P,):
        raise DataError("beta0 dimension mismatch")
    v = sample.dy - sample.dd @ beta0
    if np.all(v == 0):
        raise DegenerateStatisticError(
            "all multivariate differences zero at hypothesized value")
    if np.any(v == 0):
        warnings.warn("zero difference(s) carry sign 0 and drop out of "
                      "the rank statistic")
    r = rankdata(np.abs(v), method="average")
    return MVDiffs(v=v, r=r, s=np.sign(v), beta0=beta0)


def vector_signed_rank(diffs: MVDiffs, z_list) -> np.ndarray:
    z = np.asarray(z_list, float)
    if len(z) != len(diffs.v):
        raise DataError("z_list length mismatch")
    return (diffs.r * diffs.s) @ z


def vector_variance(diffs: MVDiffs, z_list) -> np.ndarray:
    z = np.asarray(z_list, float)
    w = np.abs(diffs.s) * diffs.r**2
    return (z * w[:, None]).T @ z


@dataclass(frozen=True)
class MVTestResult:
    T: np.ndarray
    V: np.ndarray
    chi2: float
    df: int
    p_value: float


def _quadform(T: np.ndarray, V: np.ndarray) -> tuple[float, int]:
    evals, evecs = np.linalg.eigh(V)
    tol = _EIG_TOL * max(evals.max(initial=0.0), 1.0)
    keep = evals > tol
    df = int(keep.sum())
    if df == 0:
        raise DegenerateStatisticError("covariance of rank statistic has "
                                       "rank 0")
    proj = evecs.T @ T
    chi2 = float((proj[keep] ** 2 / evals[keep]).sum())
    return chi2, df


def mv_test(sample: MVPairedSample, z_list, beta0) -> MVTestResult:
    """Chi-square test of beta = beta0 from the vector signed-rank
    statistic and its reflection covariance (pseudo-inverse with
    rank-adjusted degrees of freedom when singular)."""
    diffs = mv_differences(sample, beta0)
    T = vector_signed_rank(diffs, z_list)
    V = vector_variance(diffs, z_list)
    chi2, df = _quadform(T, V)
    return MVTestResult(T=T, V=V, chi2=chi2, df=df,
                        p_value=float(stats.chi2.sf(chi2, df)))


@dataclass(frozen=True)
class GridSpec:
    ranges: tuple[tuple[float, float], ...]
    resolution: int = 201

    def axes(self):
        return [np.linspace(lo, hi, self.resolution)
                for lo, hi in self.ranges]


def _univariate_view(sample: MVPairedSample, p: int) -> PairedSample:
    """Pairs informative about coordinate p, oriented by z_p."""
    mask = sample.z[:, p] != 0
    if mask.sum() < 2:
        raise DataError(f"fewer than 2 pairs order coordinate {p}")
    zp = sample.z[mask, p]
    return PairedSample(dy=sample.dy[mask] * zp,
                        dd=sample.dd[mask, p] * zp)


def default_grid(sample: MVPairedSample, alpha: float = 0.05,
                 resolution: int = 201, inflate: float = 3.0) -> GridSpec:
    """Per-coordinate univariate CI inflated around its center."""
    ranges = []
    for p in range(sample.P):
        view = _univariate_view(sample, p)
        ci = ci_invert(view, alpha)
        if np.isfinite(ci.lower) and np.isfinite(ci.upper):
            mid = 0.5 * (ci.lower + ci.upper)
            half = max(0.5 * (ci.upper - ci.lower), 1e-8) * inflate
        else:
            hl = hl_estimate(view)
            mid = hl.estimate
            half = max(abs(mid), 1.0) * inflate
        ranges.append((mid - half, mid + half))
    return GridSpec(ranges=tuple(ranges), resolution=resolution)


def _chi2_on_grid(sample: MVPairedSample, z_list, points: np.ndarray,
                  chunk: int = 4096):
    """Vectorized chi-square over G candidate slope vectors (G, P)."""
    G = len(points)
    if G > chunk:
        parts = [_chi2_on_grid(sample, z_list, points[i:i + chunk])
                 for i in range(0, G, chunk)]
        return (np.concatenate([p[0] for p in parts]),
                np.concatenate([p[1] for p in parts]))
    z = np.asarray(z_list, float)
    v = sample.dy[None, :] - points @ sample.dd.T  # (G, I)
    r = rankdata(np.abs(v), method="average", axis=1)
    s = np.sign(v)
    rs = r * s
    T = rs @ z  # (G, P)
    w = np.abs(s) * r**2
    zouter = np.einsum("ip,iq->ipq", z, z)
    V = np.einsum("gi,ipq->gpq", w, zouter)
    evals, evecs = np.linalg.eigh(V)
    tol = _EIG_TOL * np.maximum(evals.max(axis=1), 1.0)
    keep = evals > tol[:, None]
    proj = np.einsum("gpk,gp->gk", evecs, T)
    ratio = np.where(keep, proj**2 / np.where(keep, evals, 1.0), 0.0)
    chi2 = ratio.sum(axis=1)
    df = keep.sum(axis=1)
    chi2 = np.where(df == 0, np.inf, chi2)
    return chi2, df


@dataclass(frozen=True)
class MVConfidenceSet:
    accepted: np.ndarray  # (k, P) accepted grid points
    chi2: np.ndarray  # chi-square at the accepted points
    bounding_box: tuple[tuple[float, float], ...]
    projections: tuple[tuple[float, float], ...]
    alpha: float
    grid: GridSpec
    empty: bool = False
    note: str | None = None


def mv_confidence_set(sample: MVPairedSample, z_list, alpha: float = 0.05,
                      grid_spec: GridSpec | None = None) -> MVConfidenceSet:
    """Grid inversion of the chi-square test: accepted slope vectors,
    their bounding box, and per-coordinate projections."""
    if not 0 < alpha < 1:
        raise DataError("alpha must be in (0, 1)")
    if grid_spec is None:
        grid_spec = default_grid(sample, alpha)
    axes = grid_spec.axes()
    mesh = np.meshgrid(*axes, indexing="ij")
    points = np.column_stack([m.ravel() for m in mesh])
    chi2, df = _chi2_on_grid(sample, z_list, points)
    crit = stats.chi2.ppf(1 - alpha, df)
    ok = chi2 <= crit
    if not ok.any():
        return MVConfidenceSet(
            accepted=np.empty((0, sample.P)), chi2=np.empty(0),
            bounding_box=grid_spec.ranges, projections=grid_spec.ranges,
            alpha=alpha, grid=grid_spec, empty=True,
            note="grid too coarse or model misfit")
    acc = points[ok]
    proj = tuple((float(acc[:, p].min()), float(acc[:, p].max()))
                 for p in range(sample.P))
    return MVConfidenceSet(accepted=acc, chi2=chi2[ok],
                           bounding_box=proj, projections=proj,
                           alpha=alpha, grid=grid_spec)


@dataclass(frozen=True)
class MVPointEstimate:
    estimate: np.ndarray
    cell_extent: np.ndarray  # per-coordinate extent of the minimal cell
    objective: float
    candidates: np.ndarray = field(default=None)  # type: ignore
    ambiguous: bool = False


def _min_clusters(points, ok_mask, shape):
    """Connected components of minimal grid cells (grid adjacency)."""
    idx = np.flatnonzero(ok_mask)
    if len(idx) == 0:
        return []
    coords = np.array(np.unravel_index(idx, shape)).T
    coord_set = {tuple(c) for c in coords}
    seen = set()
    clusters = []
    for start in map(tuple, coords):
        if start in seen:
            continue
        stack = [start]
        seen.add(start)
        comp = []
        while stack:
            c = stack.pop()
            comp.append(c)
            for p in range(len(shape)):
                for dlt in (-1, 1):
                    nb = list(c)
                    nb[p] += dlt
                    nb = tuple(nb)
                    if nb in coord_set and nb not in seen:
                        seen.add(nb)
                        stack.append(nb)
        clusters.append(comp)
    return clusters


def mv_point_estimate(sample: MVPairedSample, z_list,
                      grid_spec: GridSpec | None = None) -> MVPointEstimate:
    """Minimizer of the rank quadratic form: coarse grid scan, then
    iterative shrink-and-rescan refinement of the minimal cell (the
    objective is piecewise constant, so the estimate is the centroid of
    the minimal cell with its extent reported)."""
    if grid_spec is None:
        grid_spec = default_grid(sample, resolution=41)
    ranges = [list(r) for r in grid_spec.ranges]
    P = sample.P
    ambiguous = False
    candidates = None
    res = max(grid_spec.resolution, 11)
    for sweep in range(60):
        axes = [np.linspace(lo, hi, res) for lo, hi in ranges]
        mesh = np.meshgrid(*axes, indexing="ij")
        points = np.column_stack([m.ravel() for m in mesh])
        chi2, _ = _chi2_on_grid(sample, z_list, points)
        best = chi2.min()
        ok = chi2 <= best + 1e-12 * max(best, 1.0)
        if sweep == 0:
            clusters = _min_clusters(points, ok,
                                     tuple(len(a) for a in axes))
            if len(clusters) > 1:
                ambiguous = True
                shape = tuple(len(a) for a in axes)
                cands = []
                for comp in clusters:
                    ci = np.ravel_multi_index(np.array(comp).T, shape)
                    cands.append(points[ci].mean(axis=0))
                candidates = np.array(cands)
        acc = points[ok]
        lo = acc.min(axis=0)
        hi = acc.max(axis=0)
        steps = np.array([(r[1] - r[0]) / (res - 1) for r in ranges])
        new = [(float(lo[p] - steps[p]), float(hi[p] + steps[p]))
               for p in range(P)]
        span = np.array([h - lo_ for lo_, h in
                         [(n[0], n[1]) for n in new]])
        old_span = np.array([r[1] - r[0] for r in ranges])
        ranges = [list(n) for n in new]
        scale = np.maximum(np.abs(lo) + np.abs(hi), 1.0)
        if np.all(span < 1e-9 * scale) or np.all(span >= old_span):
            break
        res = 21
    est = acc.mean(axis=0)
    extent = (hi - lo) + 2 * steps
    return MVPointEstimate(estimate=est, cell_extent=extent,
                           objective=float(best),
                           candidates=candidates, ambiguous=ambiguous)
