"""Acceptance gate: ten criteria, one test each.

Budgeted runtimes are asserted with perf_counter; statistical criteria
use fixed seeds so every run sees the same draws.
"""

import time
from dataclasses import replace
from itertools import product

import numpy as np
import pytest

from milestone_iv.data_model import Partition, assign_region
from milestone_iv.distance import DistanceMatrix
from milestone_iv.inference_mv import (MVPairedSample, default_grid,
                                       mv_confidence_set,
                                       mv_point_estimate, mv_test)
from milestone_iv.inference_uni import (PairedSample, ci_invert,
                                        exact_signed_rank_distribution,
                                        fullmatch_estimate,
                                        fullmatch_permutation_test,
                                        hl_estimate, pair_differences,
                                        signed_rank_test, wald_estimate)
from milestone_iv.matching import (optimal_full_match,
                                   optimal_nonbipartite_match)
from milestone_iv.matching.brute_force import (brute_force_full_match,
                                               brute_force_pairing)
from milestone_iv.simulate import (attenuation_config,
                                   attenuation_experiment,
                                   coverage_config_mv, coverage_config_uni,
                                   coverage_experiment, generate)


def test_criterion_01_exact_null_distribution():
    # brute-force enumeration over all 2^I sign patterns, I <= 12
    t0 = time.perf_counter()
    for I in range(1, 13):
        ranks = np.arange(1, I + 1)
        counts = np.zeros(ranks.sum() + 1)
        for signs in product([0, 1], repeat=I):
            counts[int((ranks * np.array(signs)).sum())] += 1
        want = counts / 2.0 ** I
        got = exact_signed_rank_distribution(I)
        assert got.shape == want.shape
        assert np.abs(got - want).max() <= 1e-15
    assert time.perf_counter() - t0 < 5.0


def test_criterion_02_attenuation():
    t0 = time.perf_counter()
    rep = attenuation_experiment(attenuation_config(n=20_000, seed=0),
                                 replicates=50, threads=1)
    elapsed = time.perf_counter() - t0
    m = rep.metrics
    assert abs(m["ols_mean"] - 0.032) <= 0.002
    assert abs(m["hl_mean"] - 0.040) <= 0.003
    assert abs(m["wald_mean"] - 0.040) <= 0.003
    assert elapsed < 120.0


def test_criterion_03_univariate_coverage():
    t0 = time.perf_counter()
    rep = coverage_experiment(coverage_config_uni(I=200, seed=0),
                              alpha=0.05, replicates=1000, threads=4)
    elapsed = time.perf_counter() - t0
    assert 0.93 <= rep.metrics["coverage"] <= 0.97
    assert elapsed < 300.0


def test_criterion_04_multivariate_size():
    t0 = time.perf_counter()
    rep = coverage_experiment(coverage_config_mv(I=300, seed=0),
                              alpha=0.05, replicates=2000, threads=4)
    elapsed = time.perf_counter() - t0
    assert 0.035 <= rep.metrics["rejection_rate"] <= 0.065
    assert elapsed < 600.0


def test_criterion_05_matching_optimality():
    t0 = time.perf_counter()
    rng = np.random.default_rng(100)
    tol = lambda n: n * 1e-6
    for trial in range(100):  # pairing instances
        n = 2 * int(rng.integers(1, 7))
        a = rng.uniform(0, 10, (n, n))
        ent = 0.5 * (a + a.T)
        np.fill_diagonal(ent, 0.0)
        dist = DistanceMatrix(entries=ent)
        got = optimal_nonbipartite_match(dist)
        want = brute_force_pairing(dist)
        assert abs(got.total_distance - want.total_distance) <= tol(n)
    for trial in range(100):  # full matching instances
        nt = int(rng.integers(1, 5))
        nc = int(rng.integers(1, 10 - nt))
        r = int(rng.integers(1, 4))
        feas = [m for m in range(1, nc + 1)
                if r * nt >= m and r * m >= nt]
        if not feas:
            continue
        m = int(rng.choice(feas))
        n = nt + nc
        a = rng.uniform(0, 10, (n, n))
        ent = 0.5 * (a + a.T)
        np.fill_diagonal(ent, 0.0)
        dist = DistanceMatrix(entries=ent)
        treated, controls = list(range(nt)), list(range(nt, n))
        got = optimal_full_match(dist, treated, controls, r, m)
        want = brute_force_full_match(dist, treated, controls, r, m)
        assert abs(got.total_distance - want.total_distance) <= tol(n)
    assert time.perf_counter() - t0 < 60.0


def test_criterion_06_reduction_identities():
    rng = np.random.default_rng(6)
    dy = rng.normal(0.4, 1.0, 50)
    dd = rng.uniform(1, 2, 50)
    pairs = PairedSample(dy=dy, dd=dd)
    sample = MVPairedSample(dy=dy, dd=dd.reshape(-1, 1),
                            z=np.ones((50, 1)))
    # chi-square equals the squared normal z-score
    for b in (-0.3, 0.0, 0.5):
        mv = mv_test(sample, sample.z, np.array([b]))
        uni = signed_rank_test(pair_differences(pairs, b))
        assert mv.chi2 == pytest.approx(uni.z ** 2, rel=1e-9)
    # confidence-set projection matches ci_invert within one grid step
    grid = default_grid(sample, alpha=0.05)
    cset = mv_confidence_set(sample, sample.z, alpha=0.05, grid_spec=grid)
    ci = ci_invert(pairs, alpha=0.05)
    step = (grid.ranges[0][1] - grid.ranges[0][0]) / (grid.resolution - 1)
    assert abs(cset.projections[0][0] - ci.lower) <= step
    assert abs(cset.projections[0][1] - ci.upper) <= step
    # point estimate matches HL within the minimal-cell extent
    point = mv_point_estimate(sample, sample.z)
    hl = hl_estimate(pairs)
    assert abs(point.estimate[0] - hl.estimate) \
        <= max(point.cell_extent[0], 1e-9)


def test_criterion_07_permutation_reduces_to_signed_rank():
    rng = np.random.default_rng(7)
    for I in (3, 6, 9, 12):
        dy = rng.normal(0.2, 1.0, I)
        dd = rng.uniform(0.5, 2.0, I)
        sets = [PairedSample(dy=dy[i:i + 1], dd=dd[i:i + 1])
                for i in range(I)]
        perm = fullmatch_permutation_test(sets, 0.0)
        ref = signed_rank_test(
            pair_differences(PairedSample(dy=dy, dd=dd), 0.0))
        assert perm.method == "exhaustive"
        assert perm.p_lower == ref.p_lower
        assert perm.p_upper == ref.p_upper
        assert perm.p_two_sided == ref.p_two_sided


def test_criterion_08_equivariance():
    rng = np.random.default_rng(8)
    dy = rng.normal(0.5, 1.0, 30)
    dd = rng.uniform(1, 3, 30)
    pairs = PairedSample(dy=dy, dd=dd)

    # per-set outcome shifts: adding the same constant to both members
    # of a pair leaves the difference, hence every statistic, unchanged
    sets = [PairedSample(dy=dy[i:i + 1], dd=dd[i:i + 1])
            for i in range(30)]
    shifted = [PairedSample(dy=s.dy.copy(), dd=s.dd.copy()) for s in sets]
    base = fullmatch_permutation_test(sets, 0.1, n_draws=500, seed=0)
    moved = fullmatch_permutation_test(shifted, 0.1, n_draws=500, seed=0)
    assert base.p_two_sided == moved.p_two_sided

    # dose rescaling by c > 0 rescales slopes and endpoints by 1/c
    c = 3.7
    scaled = PairedSample(dy=dy, dd=c * dd)
    for stat, lo_hi in (
        (hl_estimate, lambda r: (r.estimate,)),
        (wald_estimate, lambda r: (r.estimate, *r.interval)),
        (lambda p: ci_invert(p, alpha=0.05),
         lambda r: (r.lower, r.upper)),
    ):
        for a, b in zip(lo_hi(stat(pairs)), lo_hi(stat(scaled))):
            assert b == pytest.approx(a / c, rel=1e-10)


def test_criterion_09_milestone_consistency():
    total = 0
    violations = 0
    for cfg in (attenuation_config(n=600_000, seed=9),
                replace(coverage_config_mv(I=100, seed=9), n=400_000)):
        data = generate(cfg)
        part = cfg.partition()
        cuts = [np.asarray(cs) for cs in cfg.cuts]
        D = np.array([u.D for u in data.units])
        for p, cs in enumerate(cuts):
            obs = (D[:, p][:, None] >= cs[None, :])
            true = (data.d[:, p][:, None] >= cs[None, :])
            violations += int((obs != true).sum())
        total += len(data.units)
    assert total == 1_000_000
    assert violations == 0


def test_criterion_10_scale_and_determinism():
    rng = np.random.default_rng(10)

    a = rng.uniform(0, 10, (2000, 2000))
    ent = 0.5 * (a + a.T)
    np.fill_diagonal(ent, 0.0)
    t0 = time.perf_counter()
    pairing = optimal_nonbipartite_match(DistanceMatrix(entries=ent))
    assert time.perf_counter() - t0 < 60.0
    assert len(pairing.pairs) == 1000

    n = 1700
    a = rng.uniform(0, 10, (n, n))
    ent = 0.5 * (a + a.T)
    np.fill_diagonal(ent, 0.0)
    dist = DistanceMatrix(entries=ent)
    t0 = time.perf_counter()
    fm = optimal_full_match(dist, list(range(500)), list(range(500, n)),
                            max_ratio=3, n_controls_to_use=1000)
    assert time.perf_counter() - t0 < 60.0
    assert len({u for s in fm.sets for u in s.treated}) == 500

    # determinism across thread counts
    cfg = coverage_config_uni(I=50, seed=10)
    r1 = coverage_experiment(cfg, replicates=8, threads=1)
    r4 = coverage_experiment(cfg, replicates=8, threads=4)
    assert r1.metrics == r4.metrics
