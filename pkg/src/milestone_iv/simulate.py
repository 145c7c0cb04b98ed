"""Data generators for the linear dose-outcome models with
milestone-respecting measurement error, and experiment runners verifying
attenuation, coverage, multivariate test size, and heteroscedastic
robustness."""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from .data_model import DataError, Partition, Unit, assign_region
from .distance import apply_constraints, rank_mahalanobis, rank_transform
from .inference_uni import (PairedSample, ci_invert, hl_estimate,
                            ols_estimate, pair_differences, signed_rank_test,
                            wald_estimate)
from .inference_mv import MVPairedSample, mv_test, region_order_vector
from .matching import optimal_nonbipartite_match


@dataclass(frozen=True)
class DGPConfig:
    """Generator settings for the linear outcome model with additive,
    milestone-respecting dose error.

    dose_laws: one spec per coordinate, e.g. {"kind": "two_point",
    "low": 14, "high": 18, "p_high": 0.5} or {"kind": "point_uniform",
    "p_mass": 0.5, "mass": 0.0, "lo": 6.0, "hi": 30.0} or
    {"kind": "uniform", "lo": a, "hi": b}.
    error_law: {"kind": "symmetric_beta", "shape": 2.0, "scale": 1.0}
    (support = scale x distance to the nearest cut, symmetric),
    {"kind": "asymmetric_beta", "a": 2.0, "b": 5.0, "scale": 1.0}
    (mean zero, asymmetric), or {"kind": "none"}.  Optional "copula_rho"
    correlates coordinates through a sign-symmetric Gaussian copula.
    outcome_noise: {"kind": "normal", "scale": s} with optional
    "scale_above" applied when coordinate "coord" is above its first cut.
    lam: optional {"coef": [...], "intercept": c} linear covariate effect.
    covariates: optional {"dim": k, "scale": 1.0}.
    balanced=True draws exact per-branch counts for discrete dose laws so
    milestone sides come out equal (keeps pairing feasible).
    """

    beta: tuple[float, ...]
    cuts: tuple[tuple[float, ...], ...]
    dose_laws: tuple[dict, ...]
    error_law: dict = field(default_factory=lambda: {
        "kind": "symmetric_beta", "shape": 2.0, "scale": 1.0})
    outcome_noise: dict = field(default_factory=lambda: {
        "kind": "normal", "scale": 0.4})
    lam: dict | None = None
    covariates: dict | None = None
    n: int = 1000
    seed: int = 0
    balanced: bool = True

    @property
    def P(self) -> int:
        return len(self.beta)

    def partition(self) -> Partition:
        return Partition(self.cuts)


@dataclass
class SimData:
    units: list[Unit]
    d: np.ndarray  # hidden true doses (n, P), for oracle checks only
    config: DGPConfig
    n_on_cut: int = 0


def _balanced_bernoulli(rng, n, p):
    k = int(round(n * p))
    out = np.zeros(n, bool)
    out[:k] = True
    rng.shuffle(out)
    return out


def _draw_doses(rng, law: dict, n: int, balanced: bool) -> np.ndarray:
    kind = law["kind"]
    if kind == "two_point":
        if balanced:
            hi = _balanced_bernoulli(rng, n, law.get("p_high", 0.5))
        else:
            hi = rng.random(n) < law.get("p_high", 0.5)
        return np.where(hi, law["high"], law["low"]).astype(float)
    if kind == "point_uniform":
        if balanced:
            mass = _balanced_bernoulli(rng, n, law.get("p_mass", 0.5))
        else:
            mass = rng.random(n) < law.get("p_mass", 0.5)
        d = rng.uniform(law["lo"], law["hi"], n)
        d[mass] = law.get("mass", 0.0)
        return d
    if kind == "uniform":
        return rng.uniform(law["lo"], law["hi"], n)
    if kind == "normal":
        return rng.normal(law.get("mean", 0.0), law.get("sd", 1.0), n)
    raise DataError(f"unknown dose law {kind!r}")


def _nearest_cut_distance(d: np.ndarray, cuts: Sequence[float]):
    return np.min(np.abs(d[:, None] - np.asarray(cuts)[None, :]), axis=1)


def _error_from_uniform(u: np.ndarray, law: dict, half: np.ndarray):
    """Map U(0,1) draws through the error law scaled to +-half."""
    kind = law["kind"]
    if kind == "none":
        return np.zeros_like(u)
    scale = law.get("scale", 1.0)
    if not 0 <= scale <= 1:
        raise DataError("error scale must lie in [0, 1] to respect the "
                        "milestone support bound")
    if kind == "symmetric_beta":
        a = law.get("shape", 2.0)
        x = stats.beta.ppf(u, a, a)  # median 1/2, symmetric
        return (2.0 * x - 1.0) * half * scale
    if kind == "asymmetric_beta":
        a, b = law.get("a", 2.0), law.get("b", 5.0)
        mean = a / (a + b)
        x = stats.beta.ppf(u, a, b) - mean
        return x / max(mean, 1.0 - mean) * half * scale
    raise DataError(f"unknown error law {law['kind']!r}")


def generate(config: DGPConfig, rng=None) -> SimData:
    """Draw n units from the configured model; true and observed doses
    agree on every region (asserted for the symmetric law)."""
    if rng is None:
        rng = np.random.default_rng(config.seed)
    n, P = config.n, config.P
    part = config.partition()
    d = np.column_stack([
        _draw_doses(rng, config.dose_laws[p], n, config.balanced)
        for p in range(P)])
    # dose errors, optionally copula-correlated across coordinates
    rho = config.error_law.get("copula_rho")
    if rho is not None and P > 1:
        C = np.full((P, P), float(rho))
        np.fill_diagonal(C, 1.0)
        zn = rng.multivariate_normal(np.zeros(P), C, size=n)
        u = stats.norm.cdf(zn)
    else:
        u = rng.random((n, P))
    xi = np.empty((n, P))
    n_on_cut = 0
    for p in range(P):
        half = _nearest_cut_distance(d[:, p], config.cuts[p])
        n_on_cut += int((half == 0).sum())
        xi[:, p] = _error_from_uniform(u[:, p], config.error_law, half)
    D = d + xi
    if config.error_law["kind"] in ("symmetric_beta", "none"):
        for p in range(P):
            for c in config.cuts[p]:
                if np.any((d[:, p] >= c) != (D[:, p] >= c)):
                    raise AssertionError("milestone violated by generated "
                                         "error")
    if config.covariates:
        k = config.covariates.get("dim", 1)
        X = rng.normal(0.0, config.covariates.get("scale", 1.0), (n, k))
    else:
        k = 0
        X = np.zeros((n, 0))
    lam = np.zeros(n)
    if config.lam:
        coef = np.asarray(config.lam.get("coef", [0.0] * k), float)
        lam = X @ coef + config.lam.get("intercept", 0.0)
    noise = config.outcome_noise
    if noise["kind"] != "normal":
        raise DataError(f"unknown outcome noise {noise['kind']!r}")
    scale = np.full(n, float(noise["scale"]))
    if "scale_above" in noise:
        coord = noise.get("coord", 0)
        above = d[:, coord] >= config.cuts[coord][0]
        scale[above] = float(noise["scale_above"])
    eps = rng.normal(0.0, 1.0, n) * scale
    Y = lam + d @ np.asarray(config.beta) + eps
    units = [Unit(id=f"u{i:06d}", x=tuple(X[i]),
                  x_missing=(False,) * k, D=tuple(D[i]), Y=float(Y[i]))
             for i in range(n)]
    _ = part
    return SimData(units=units, d=d, config=config, n_on_cut=n_on_cut)


def match_pairs(units: Sequence[Unit], partition: Partition,
                mode: str = "cross_milestone"):
    """Distance -> constraints -> optimal pairing, end to end.  Returns
    (pairing, labels)."""
    X = np.array([u.x for u in units], float).reshape(len(units), -1)
    miss = np.array([u.x_missing for u in units], bool).reshape(
        len(units), -1)
    if X.shape[1]:
        dist = rank_mahalanobis(rank_transform(X, miss))
    else:
        from .distance import DistanceMatrix

        dist = DistanceMatrix(entries=np.zeros((len(units), len(units))))
    labels = [assign_region(u.D, partition) for u in units]
    dist = apply_constraints(dist, labels, mode=mode)
    return optimal_nonbipartite_match(dist), labels


def paired_sample_uni(units: Sequence[Unit], pairing, labels,
                      cut: float) -> PairedSample:
    """Orient each matched pair with the >=cut member first (P=1)."""
    dy, dd = [], []
    for a, b in pairing.pairs:
        hi, lo = (a, b) if units[a].D[0] >= cut else (b, a)
        dy.append(units[hi].Y - units[lo].Y)
        dd.append(units[hi].D[0] - units[lo].D[0])
    return PairedSample(dy=np.array(dy), dd=np.array(dd))


def paired_sample_mv(units: Sequence[Unit], pairing, labels,
                     partition: Partition) -> MVPairedSample:
    dy, dd, zs = [], [], []
    for a, b in pairing.pairs:
        z = region_order_vector(labels[a], labels[b], partition)
        dy.append(units[a].Y - units[b].Y)
        dd.append(np.array(units[a].D) - np.array(units[b].D))
        zs.append(z)
    return MVPairedSample(dy=np.array(dy), dd=np.array(dd),
                          z=np.array(zs))


@dataclass
class ExperimentReport:
    name: str
    replicates: int
    seed: int
    wall_clock: float
    metrics: dict[str, float]
    notes: list[str] = field(default_factory=list)

    def lines(self) -> list[str]:
        out = [f"experiment = {self.name}",
               f"replicates = {self.replicates}",
               f"seed = {self.seed}",
               f"wall_clock_seconds = {self.wall_clock!r}"]
        out += [f"{k} = {v!r}" for k, v in sorted(self.metrics.items())]
        out += [f"note = {s}" for s in self.notes]
        return out


def _run_replicates(fn: Callable[[int], dict], replicates: int,
                    threads: int = 1) -> list[dict]:
    if threads <= 1:
        return [fn(r) for r in range(replicates)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(replicates)))


def attenuation_config(n: int = 20000, beta: float = 0.04,
                       seed: int = 0) -> DGPConfig:
    """Two-point true dose at kappa +- 2 (variance 4) with symmetric beta
    error of variance 1 on support [-2, 2]: reliability 0.8."""
    return DGPConfig(
        beta=(beta,), cuts=((16.0,),),
        dose_laws=({"kind": "two_point", "low": 14.0, "high": 18.0,
                    "p_high": 0.5},),
        error_law={"kind": "symmetric_beta", "shape": 1.5, "scale": 1.0},
        outcome_noise={"kind": "normal", "scale": 0.4},
        n=n, seed=seed)


def attenuation_experiment(config: DGPConfig, replicates: int = 50,
                           pair_subsample: int = 2000,
                           threads: int = 1) -> ExperimentReport:
    """OLS attenuates toward beta x reliability; the milestone HL and
    Wald estimators stay centered on beta."""
    if config.P != 1:
        raise DataError("attenuation experiment is univariate")
    part = config.partition()
    cut = config.cuts[0][0]
    t0 = time.time()

    def one(rep: int) -> dict:
        rng = np.random.default_rng([config.seed, rep])
        sim = generate(config, rng)
        units = sim.units
        Y = np.array([u.Y for u in units])
        D = np.array([u.D[0] for u in units])
        ols = float(ols_estimate(Y, D).slope[0])
        # stratified subsample keeps the sides equal for pairing
        above = [i for i, u in enumerate(units) if u.D[0] >= cut]
        below = [i for i, u in enumerate(units) if u.D[0] < cut]
        half = min(pair_subsample // 2, len(above), len(below))
        pick = (list(rng.choice(above, half, replace=False))
                + list(rng.choice(below, half, replace=False)))
        sub = [units[i] for i in pick]
        pairing, labels = match_pairs(sub, part)
        pairs = paired_sample_uni(sub, pairing, labels, cut)
        return {"ols": ols,
                "hl": hl_estimate(pairs).estimate,
                "wald": wald_estimate(pairs).estimate}

    rows = _run_replicates(one, replicates, threads)
    sd2 = np.var([14.0, 18.0])  # two-point dose variance
    shape = config.error_law.get("shape", 2.0)
    half_sup = 2.0 * config.error_law.get("scale", 1.0)
    sxi2 = half_sup**2 / (2 * shape + 1)
    reliability = sd2 / (sd2 + sxi2)
    metrics = {
        "beta_true": config.beta[0],
        "reliability": reliability,
        "ols_target": config.beta[0] * reliability,
        "ols_mean": float(np.mean([r["ols"] for r in rows])),
        "ols_sd": float(np.std([r["ols"] for r in rows])),
        "hl_mean": float(np.mean([r["hl"] for r in rows])),
        "hl_sd": float(np.std([r["hl"] for r in rows])),
        "wald_mean": float(np.mean([r["wald"] for r in rows])),
        "wald_sd": float(np.std([r["wald"] for r in rows])),
    }
    return ExperimentReport(name="attenuation", replicates=replicates,
                            seed=config.seed, wall_clock=time.time() - t0,
                            metrics=metrics)


def coverage_config_uni(I: int = 200, beta: float = 0.04,
                        seed: int = 0) -> DGPConfig:
    return DGPConfig(
        beta=(beta,), cuts=((16.0,),),
        dose_laws=({"kind": "two_point", "low": 14.0, "high": 18.0,
                    "p_high": 0.5},),
        error_law={"kind": "symmetric_beta", "shape": 2.0, "scale": 1.0},
        outcome_noise={"kind": "normal", "scale": 0.3},
        n=2 * I, seed=seed)


def coverage_config_mv(I: int = 300, beta=(0.04, 0.01),
                       seed: int = 0) -> DGPConfig:
    """Quadrant design: education cut at 16, service cut at 0.5 with a
    point mass at zero below it."""
    return DGPConfig(
        beta=tuple(beta), cuts=((16.0,), (0.5,)),
        dose_laws=({"kind": "two_point", "low": 14.0, "high": 18.0,
                    "p_high": 0.5},
                   {"kind": "point_uniform", "p_mass": 0.5, "mass": 0.0,
                    "lo": 6.0, "hi": 30.0}),
        error_law={"kind": "symmetric_beta", "shape": 2.0, "scale": 1.0},
        outcome_noise={"kind": "normal", "scale": 0.3},
        n=2 * I, seed=seed)


def coverage_experiment(config: DGPConfig, alpha: float = 0.05,
                        replicates: int = 1000,
                        threads: int = 1) -> ExperimentReport:
    """Empirical CI coverage (P=1) or chi-square acceptance of the true
    slope vector (P>1), plus test size at the truth."""
    part = config.partition()
    beta_true = np.asarray(config.beta)
    t0 = time.time()

    if config.P == 1:
        cut = config.cuts[0][0]

        def one(rep: int) -> dict:
            rng = np.random.default_rng([config.seed, rep])
            sim = generate(config, rng)
            pairing, labels = match_pairs(sim.units, part)
            pairs = paired_sample_uni(sim.units, pairing, labels, cut)
            ci = ci_invert(pairs, alpha)
            res = signed_rank_test(pair_differences(pairs, beta_true[0]))
            return {"cover": float(ci.lower <= beta_true[0] <= ci.upper),
                    "reject": float(res.p_two_sided <= alpha)}
    else:

        def one(rep: int) -> dict:
            rng = np.random.default_rng([config.seed, rep])
            sim = generate(config, rng)
            pairing, labels = match_pairs(sim.units, part,
                                          mode="cross_region")
            sample = paired_sample_mv(sim.units, pairing, labels, part)
            res = mv_test(sample, sample.z, beta_true)
            rej = float(res.p_value <= alpha)
            return {"cover": 1.0 - rej, "reject": rej}

    rows = _run_replicates(one, replicates, threads)
    metrics = {
        "alpha": alpha,
        "coverage": float(np.mean([r["cover"] for r in rows])),
        "rejection_rate": float(np.mean([r["reject"] for r in rows])),
    }
    return ExperimentReport(name="coverage", replicates=replicates,
                            seed=config.seed, wall_clock=time.time() - t0,
                            metrics=metrics)


def heteroscedastic_config(I: int = 300, beta: float = 0.04,
                           ratio: float = 2.0, seed: int = 0) -> DGPConfig:
    return DGPConfig(
        beta=(beta,), cuts=((16.0,),),
        dose_laws=({"kind": "two_point", "low": 14.0, "high": 18.0,
                    "p_high": 0.5},),
        error_law={"kind": "symmetric_beta", "shape": 2.0, "scale": 1.0},
        outcome_noise={"kind": "normal", "scale": 0.3,
                       "scale_above": 0.3 * ratio, "coord": 0},
        n=2 * I, seed=seed)


def heteroscedastic_robustness_experiment(config: DGPConfig,
                                          alpha: float = 0.05,
                                          replicates: int = 2000,
                                          threads: int = 1,
                                          ) -> ExperimentReport:
    """Outcome noise that differs by milestone side: the signed-rank test
    keeps its level (differences stay symmetric about zero under H0); the
    paired t size is reported for contrast, not asserted."""
    if config.P != 1:
        raise DataError("heteroscedastic experiment is univariate")
    part = config.partition()
    cut = config.cuts[0][0]
    beta_true = config.beta[0]
    t0 = time.time()

    def one(rep: int) -> dict:
        rng = np.random.default_rng([config.seed, rep])
        sim = generate(config, rng)
        pairing, labels = match_pairs(sim.units, part)
        pairs = paired_sample_uni(sim.units, pairing, labels, cut)
        q = pairs.dy - beta_true * pairs.dd
        res = signed_rank_test(pair_differences(pairs, beta_true))
        tres = stats.ttest_1samp(q, 0.0)
        return {"sr_reject": float(res.p_two_sided <= alpha),
                "t_reject": float(tres.pvalue <= alpha)}

    rows = _run_replicates(one, replicates, threads)
    metrics = {
        "alpha": alpha,
        "signed_rank_size": float(np.mean([r["sr_reject"] for r in rows])),
        "paired_t_size": float(np.mean([r["t_reject"] for r in rows])),
    }
    return ExperimentReport(name="heteroscedastic_robustness",
                            replicates=replicates, seed=config.seed,
                            wall_clock=time.time() - t0, metrics=metrics)


def wls_like_config(n: int = 2000, seed: int = 1) -> DGPConfig:
    """Synthetic analog of the education/wage setting: log-wage outcome,
    education cut at 16, modest covariate effects."""
    return DGPConfig(
        beta=(0.04,), cuts=((16.0,),),
        dose_laws=({"kind": "two_point", "low": 13.0, "high": 18.0,
                    "p_high": 0.5},),
        error_law={"kind": "symmetric_beta", "shape": 2.0, "scale": 0.9},
        outcome_noise={"kind": "normal", "scale": 0.35},
        lam={"coef": [0.05, -0.02], "intercept": 2.4},
        covariates={"dim": 2, "scale": 1.0},
        n=n, seed=seed)


PROFILES = {
    "attenuation": lambda seed: (attenuation_config(seed=seed),
                                 attenuation_experiment),
    "coverage": lambda seed: (coverage_config_uni(seed=seed),
                              coverage_experiment),
    "coverage-mv": lambda seed: (coverage_config_mv(seed=seed),
                                 coverage_experiment),
    "heteroscedastic": lambda seed: (heteroscedastic_config(seed=seed),
                                     heteroscedastic_robustness_experiment),
}
