"""Single-milestone inference: matched-pair differences, exact Wilcoxon
signed-rank testing, Hodges-Lehmann estimation, confidence intervals by
monotone test inversion, the full-matching sign-flip permutation test,
and mean-based comparators (Wald ratio, two-stage least squares, OLS)."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats
from scipy.stats import rankdata

from .data_model import DataError

EXACT_CAP = 30
_REL_TOL = 1e-10
_MAX_DOUBLINGS = 60


class DegenerateStatisticError(RuntimeError):
    pass


@dataclass(frozen=True)
class PairedSample:
    """Milestone-crossing pairs, oriented so the >=kappa member is first:
    dy = Y_hi - Y_lo, dd = D_hi - D_lo > 0."""

    dy: np.ndarray
    dd: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "dy", np.asarray(self.dy, float))
        object.__setattr__(self, "dd", np.asarray(self.dd, float))
        if self.dy.shape != self.dd.shape or self.dy.ndim != 1:
            raise DataError("dy/dd must be matching 1-d arrays")
        if np.any(self.dd <= 0):
            raise DataError("pair with both members on one side of the "
                            "milestone (dose difference must be positive)")

    def __len__(self):
        return len(self.dy)


@dataclass(frozen=True)
class PairDiffs:
    q: np.ndarray
    dy: np.ndarray
    dd: np.ndarray
    beta0: float


def pair_differences(pairs: PairedSample, beta0: float) -> PairDiffs:
    """Q_i(beta0) = dy_i - beta0 * dd_i; strictly decreasing in beta0."""
    q = pairs.dy - beta0 * pairs.dd
    return PairDiffs(q=q, dy=pairs.dy, dd=pairs.dd, beta0=float(beta0))


def exact_signed_rank_distribution(I: int) -> np.ndarray:
    """Exact null pmf of the signed-rank statistic for I untied pairs:
    the sum of independent variables taking value i or 0 with prob 1/2."""
    if not 1 <= I <= EXACT_CAP:
        raise DataError(f"exact distribution supported for 1 <= I <= "
                        f"{EXACT_CAP}")
    tmax = I * (I + 1) // 2
    counts = np.zeros(tmax + 1, dtype=np.int64)
    counts[0] = 1
    for i in range(1, I + 1):
        shifted = np.zeros_like(counts)
        shifted[i:] = counts[:-i] if i else counts
        counts = counts + shifted
    # total is 2**I, a power of two, so this division is exact in floats
    return counts / float(2**I)


@dataclass(frozen=True)
class SignedRankResult:
    T: float
    I: int
    p_lower: float
    p_upper: float
    p_two_sided: float
    method: str
    z: float  # normal-approximation z-score (no continuity correction)
    n_zero_dropped: int = 0


def _ranked(q: np.ndarray):
    nz = q != 0
    dropped = int((~nz).sum())
    if dropped:
        warnings.warn(f"{dropped} zero difference(s) dropped from the "
                      "signed-rank statistic")
    q = q[nz]
    if len(q) == 0:
        raise DegenerateStatisticError(
            "statistic degenerate at hypothesized value: all differences "
            "zero")
    r = rankdata(np.abs(q), method="average")
    return q, r, dropped


def signed_rank_test(diffs: PairDiffs, exact_cap: int = EXACT_CAP,
                     ) -> SignedRankResult:
    """Wilcoxon signed-rank test of the hypothesized slope.

    Zeros are dropped with a warning; exact p-values when the reduced
    count is within the cap and the absolute differences are untied,
    otherwise a normal approximation with tie-corrected variance."""
    q, r, dropped = _ranked(diffs.q)
    I = len(q)
    T = float(r[q > 0].sum())
    mean = r.sum() / 2.0
    var = float((r**2).sum()) / 4.0
    z = (T - mean) / np.sqrt(var)
    ties = len(np.unique(np.abs(q))) < I
    if I <= exact_cap and not ties:
        pmf = exact_signed_rank_distribution(I)
        t_int = int(round(T))
        p_up = float(pmf[t_int:].sum())
        p_lo = float(pmf[:t_int + 1].sum())
        method = "exact"
    else:
        p_up = float(stats.norm.sf(z))
        p_lo = float(stats.norm.cdf(z))
        method = "normal_approx"
    return SignedRankResult(
        T=T, I=I, p_lower=p_lo, p_upper=p_up,
        p_two_sided=min(1.0, 2.0 * min(p_lo, p_up)),
        method=method, z=float(z), n_zero_dropped=dropped)


def _centered_stat(pairs: PairedSample, beta0: float) -> float:
    """T(beta0) minus its null expectation; monotone nonincreasing in
    beta0, zero-crossing at the rank-based estimate."""
    q = pairs.dy - beta0 * pairs.dd
    q_nz = q[q != 0]
    if len(q_nz) == 0:
        return 0.0
    r = rankdata(np.abs(q_nz), method="average")
    return float(r[q_nz > 0].sum() - r.sum() / 2.0)


def _wald_point(pairs: PairedSample) -> float:
    return float(pairs.dy.mean() / pairs.dd.mean())


def _slope_scale(pairs: PairedSample) -> float:
    slopes = pairs.dy / pairs.dd
    s = float(np.std(slopes)) if len(slopes) > 1 else 0.0
    return max(s, 1e-8 * max(1.0, abs(_wald_point(pairs))), 1e-12)


def _bracket(pairs: PairedSample, predicate, lo: float, hi: float,
             want_low_true: bool):
    """Expand [lo, hi] geometrically until predicate flips across it."""
    width = hi - lo
    for _ in range(_MAX_DOUBLINGS):
        if predicate(lo) and not predicate(hi):
            return lo, hi
        lo -= width
        hi += width
        width *= 2.0
    raise RuntimeError("no crossing found within 60 bracket doublings")


def _bisect(predicate, lo: float, hi: float) -> float:
    """Boundary of {beta : predicate(beta)} assuming predicate is True at
    lo and False at hi."""
    scale = max(abs(lo), abs(hi), 1.0)
    while hi - lo > _REL_TOL * scale:
        mid = 0.5 * (lo + hi)
        if predicate(mid):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class HLEstimate:
    estimate: float
    interval: tuple[float, float]  # solution interval of the estimating
    # equation; the estimate is its midpoint


def hl_estimate(pairs: PairedSample) -> HLEstimate:
    """Slope equating the signed-rank statistic to its null expectation;
    midpoint of the solution interval, found by monotone bisection."""
    if len(pairs) < 2:
        raise DataError("need at least 2 pairs")
    center = _wald_point(pairs)
    half = 10.0 * _slope_scale(pairs)
    lo, hi = _bracket(pairs, lambda b: _centered_stat(pairs, b) > 0,
                      center - half, center + half, True)
    a = _bisect(lambda b: _centered_stat(pairs, b) > 0, lo, hi)
    lo2, hi2 = _bracket(pairs, lambda b: _centered_stat(pairs, b) >= 0,
                        center - half, center + half, True)
    b = _bisect(lambda b0: _centered_stat(pairs, b0) >= 0, lo2, hi2)
    if b < a:
        a, b = b, a
    return HLEstimate(estimate=0.5 * (a + b), interval=(a, b))


@dataclass(frozen=True)
class CIResult:
    lower: float
    upper: float
    alpha: float
    method: str
    unbounded: bool = False


def _p_lower_at(pairs: PairedSample, beta0: float, exact_cap: int) -> float:
    try:
        res = signed_rank_test(pair_differences(pairs, beta0),
                               exact_cap=exact_cap)
    except DegenerateStatisticError:
        return 0.5
    return res.p_lower


def _p_upper_at(pairs: PairedSample, beta0: float, exact_cap: int) -> float:
    try:
        res = signed_rank_test(pair_differences(pairs, beta0),
                               exact_cap=exact_cap)
    except DegenerateStatisticError:
        return 0.5
    return res.p_upper


def ci_invert(pairs: PairedSample, alpha: float = 0.05,
              exact_cap: int = EXACT_CAP) -> CIResult:
    """Confidence interval as the slopes not rejected at level alpha by
    the signed-rank test, via bisection on the monotone statistic."""
    if not 0 < alpha < 1:
        raise DataError("alpha must be in (0, 1)")
    I = len(pairs)
    method = "exact" if I <= exact_cap else "normal_approx"
    if method == "exact" and 2.0 ** (-I) >= alpha / 2.0:
        return CIResult(lower=-np.inf, upper=np.inf, alpha=alpha,
                        method=method, unbounded=True)
    hl = hl_estimate(pairs)
    half = 10.0 * _slope_scale(pairs)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        # upper endpoint: largest beta0 with P(T <= t_obs) >= alpha/2
        lo, hi = _bracket(
            pairs, lambda b: _p_lower_at(pairs, b, exact_cap) >= alpha / 2,
            hl.estimate, hl.estimate + half, True)
        upper = _bisect(
            lambda b: _p_lower_at(pairs, b, exact_cap) >= alpha / 2, lo, hi)
        # lower endpoint: smallest beta0 with P(T >= t_obs) >= alpha/2
        lo, hi = _bracket(
            pairs, lambda b: _p_upper_at(pairs, b, exact_cap) < alpha / 2,
            hl.estimate - half, hl.estimate, True)
        lower = _bisect(
            lambda b: _p_upper_at(pairs, b, exact_cap) < alpha / 2, lo, hi)
    return CIResult(lower=lower, upper=upper, alpha=alpha, method=method)


@dataclass(frozen=True)
class PermutationTestResult:
    T: float
    I: int
    p_lower: float
    p_upper: float
    p_two_sided: float
    method: str
    n_flips: int


def fullmatch_permutation_test(set_samples: Sequence[PairedSample],
                               beta0: float,
                               n_draws: int = 10000,
                               seed: int = 0,
                               exhaustive_cap: int = 20,
                               ) -> PermutationTestResult:
    """Sign-flip permutation test over matched sets.

    Each element of set_samples holds the differences of one set, anchored
    at its singleton member.  The statistic is the pooled Wilcoxon
    signed-rank sum; the null distribution flips whole sets' signs,
    exhaustively for <= exhaustive_cap sets, else by Monte Carlo."""
    if not set_samples:
        raise DataError("no matched sets")
    qs = [s.dy - beta0 * s.dd for s in set_samples]
    set_idx = np.concatenate([np.full(len(q), k)
                              for k, q in enumerate(qs)])
    q = np.concatenate(qs)
    nz = q != 0
    if (~nz).any():
        warnings.warn(f"{int((~nz).sum())} zero difference(s) dropped "
                      "from the permutation statistic")
    q, set_idx = q[nz], set_idx[nz]
    if len(q) == 0:
        raise DegenerateStatisticError(
            "statistic degenerate at hypothesized value")
    r = rankdata(np.abs(q), method="average")
    I = len(set_samples)
    A = np.zeros(I)  # per-set statistic with original signs
    B = np.zeros(I)  # per-set statistic with flipped signs
    np.add.at(A, set_idx[q > 0], r[q > 0])
    np.add.at(B, set_idx[q < 0], r[q < 0])
    T = float(A.sum())
    if I <= exhaustive_cap:
        sums = np.zeros(1)
        for k in range(I):
            sums = np.concatenate([sums + A[k], sums + B[k]])
        n_flips = len(sums)
        p_up = float((sums >= T).mean())
        p_lo = float((sums <= T).mean())
        method = "exhaustive"
    else:
        rng = np.random.default_rng(seed)
        flips = rng.integers(0, 2, size=(n_draws, I)).astype(bool)
        sums = B.sum() + flips @ (A - B)
        n_flips = n_draws
        p_up = (1.0 + float((sums >= T).sum())) / (1.0 + n_draws)
        p_lo = (1.0 + float((sums <= T).sum())) / (1.0 + n_draws)
        method = "monte_carlo"
    return PermutationTestResult(
        T=T, I=I, p_lower=p_lo, p_upper=p_up,
        p_two_sided=min(1.0, 2.0 * min(p_lo, p_up)),
        method=method, n_flips=n_flips)


def _fullmatch_centered(set_samples: Sequence[PairedSample],
                        beta0: float) -> float:
    """Pooled statistic minus its flip-distribution expectation."""
    qs = [s.dy - beta0 * s.dd for s in set_samples]
    q = np.concatenate(qs)
    q_nz = q[q != 0]
    if len(q_nz) == 0:
        return 0.0
    r = rankdata(np.abs(q_nz), method="average")
    return float(r[q_nz > 0].sum() - r.sum() / 2.0)


def fullmatch_estimate(set_samples: Sequence[PairedSample],
                       alpha: float = 0.05):
    """Point estimate and interval from the full-matching permutation
    structure: the slope equating the pooled statistic to its sign-flip
    expectation, with an interval from the flip-variance normal
    approximation (the full-matching analog of the paired HL/CI path)."""

    def centered(b):
        return _fullmatch_centered(set_samples, b)

    dy = np.concatenate([s.dy for s in set_samples])
    dd = np.concatenate([s.dd for s in set_samples])
    flat = PairedSample(dy=dy, dd=dd)
    center = _wald_point(flat)
    half = 10.0 * _slope_scale(flat)
    lo, hi = _bracket(flat, lambda b: centered(b) > 0,
                      center - half, center + half, True)
    a = _bisect(lambda b: centered(b) > 0, lo, hi)
    lo2, hi2 = _bracket(flat, lambda b: centered(b) >= 0,
                        center - half, center + half, True)
    b = _bisect(lambda b0: centered(b0) >= 0, lo2, hi2)
    est = 0.5 * (min(a, b) + max(a, b))

    zcrit = stats.norm.ppf(1 - alpha / 2)

    def zstat(beta0):
        qs = [s.dy - beta0 * s.dd for s in set_samples]
        set_idx = np.concatenate([np.full(len(qq), k)
                                  for k, qq in enumerate(qs)])
        q = np.concatenate(qs)
        nzm = q != 0
        q, si = q[nzm], set_idx[nzm]
        if len(q) == 0:
            return 0.0
        r = rankdata(np.abs(q), method="average")
        I = len(set_samples)
        Aa = np.zeros(I)
        Bb = np.zeros(I)
        np.add.at(Aa, si[q > 0], r[q > 0])
        np.add.at(Bb, si[q < 0], r[q < 0])
        var = float(((Aa - Bb) ** 2).sum()) / 4.0
        if var == 0:
            return 0.0
        return float(Aa.sum() - (Aa + Bb).sum() / 2.0) / np.sqrt(var)

    lo, hi = _bracket(flat, lambda b: zstat(b) > -zcrit, est, est + half,
                      True)
    upper = _bisect(lambda b: zstat(b) > -zcrit, lo, hi)
    lo, hi = _bracket(flat, lambda b: zstat(b) >= zcrit, est - half, est,
                      True)
    lower = _bisect(lambda b: zstat(b) >= zcrit, lo, hi)
    return HLEstimate(estimate=est, interval=(min(a, b), max(a, b))), \
        CIResult(lower=lower, upper=upper, alpha=alpha,
                 method="flip_normal")


@dataclass(frozen=True)
class WaldEstimate:
    estimate: float
    se: float
    interval: tuple[float, float]
    alpha: float


def wald_estimate(pairs: PairedSample, alpha: float = 0.05) -> WaldEstimate:
    """Ratio of mean differences with a t-inversion interval on the
    per-pair adjusted differences Q_i(beta0)."""
    est = _wald_point(pairs)
    I = len(pairs)
    if I < 2:
        raise DataError("need at least 2 pairs")
    tcrit = stats.t.ppf(1 - alpha / 2, I - 1)

    def tstat(beta0):
        q = pairs.dy - beta0 * pairs.dd
        s = q.std(ddof=1)
        if s == 0:
            return 0.0
        return float(q.mean() / (s / np.sqrt(I)))

    half = 10.0 * _slope_scale(pairs) + 1e-12
    lo, hi = _bracket(pairs, lambda b: tstat(b) > -tcrit, est, est + half,
                      True)
    upper = _bisect(lambda b: tstat(b) > -tcrit, lo, hi)
    lo, hi = _bracket(pairs, lambda b: tstat(b) >= tcrit, est - half, est,
                      True)
    lower = _bisect(lambda b: tstat(b) >= tcrit, lo, hi)
    se = (upper - lower) / (2.0 * tcrit) if np.isfinite(upper - lower) \
        else np.nan
    return WaldEstimate(estimate=est, se=se, interval=(lower, upper),
                        alpha=alpha)


@dataclass(frozen=True)
class RegressionEstimate:
    slope: np.ndarray  # one per dose coordinate
    se: np.ndarray
    interval: tuple[np.ndarray, np.ndarray]
    alpha: float
    warning: str | None = None


def _as_2d(a):
    a = np.asarray(a, float)
    return a.reshape(len(a), -1)


def ols_estimate(Y, D, X=None, alpha: float = 0.05) -> RegressionEstimate:
    """OLS of Y on doses (and covariates); the naive comparator that is
    attenuated by measurement error."""
    Y = np.asarray(Y, float)
    D = _as_2d(D)
    n, P = D.shape
    cols = [np.ones(n), D]
    if X is not None:
        cols.append(_as_2d(X))
    M = np.column_stack(cols)
    k = M.shape[1]
    warning = None
    rank = np.linalg.matrix_rank(M)
    beta, *_ = np.linalg.lstsq(M, Y, rcond=None)
    if rank < k:
        warning = "rank-deficient design: pseudo-inverse solution"
    resid = Y - M @ beta
    dof = max(n - rank, 1)
    sigma2 = float(resid @ resid) / dof
    cov = sigma2 * np.linalg.pinv(M.T @ M)
    se = np.sqrt(np.diag(cov))[1:1 + P]
    slope = beta[1:1 + P]
    tcrit = stats.t.ppf(1 - alpha / 2, dof)
    return RegressionEstimate(slope=slope, se=se,
                              interval=(slope - tcrit * se,
                                        slope + tcrit * se),
                              alpha=alpha, warning=warning)


def tsls_estimate(Y, D, Z, X=None, alpha: float = 0.05,
                  ) -> RegressionEstimate:
    """Two-stage least squares with milestone side indicators as
    instruments for the fallible doses; covariates enter both stages."""
    Y = np.asarray(Y, float)
    D = _as_2d(D)
    Z = _as_2d(Z)
    n, P = D.shape
    if Z.shape != (n, P):
        raise DataError("need one instrument column per dose coordinate")
    exog = [np.ones(n)]
    if X is not None:
        exog.append(_as_2d(X))
    W = np.column_stack(exog)
    Zfull = np.column_stack([W, Z])
    warning = None
    # first stage: doses on instruments + exogenous columns
    first, *_ = np.linalg.lstsq(Zfull, D, rcond=None)
    inst_coef = first[W.shape[1]:, :]
    if np.any(np.diag(inst_coef) <= 0):
        warning = "weak or inverted instrument (first-stage coefficient " \
                  "<= 0)"
        warnings.warn(warning)
    Dhat = Zfull @ first
    Xhat = np.column_stack([W, Dhat])
    beta, *_ = np.linalg.lstsq(Xhat, Y, rcond=None)
    Xorig = np.column_stack([W, D])
    resid = Y - Xorig @ beta
    dof = max(n - Xhat.shape[1], 1)
    sigma2 = float(resid @ resid) / dof
    cov = sigma2 * np.linalg.pinv(Xhat.T @ Xhat)
    sl = beta[W.shape[1]:]
    se = np.sqrt(np.diag(cov))[W.shape[1]:]
    zcrit = stats.norm.ppf(1 - alpha / 2)
    return RegressionEstimate(slope=sl, se=se,
                              interval=(sl - zcrit * se, sl + zcrit * se),
                              alpha=alpha, warning=warning)
