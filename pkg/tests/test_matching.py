import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from milestone_iv.data_model import DataError
from milestone_iv.distance import DistanceMatrix, InfeasibleError
from milestone_iv.matching import (optimal_full_match,
                                   optimal_nonbipartite_match)
from milestone_iv.matching.brute_force import (brute_force_full_match,
                                               brute_force_pairing)
from milestone_iv.matching.types import (FullMatching, MatchedSet, Pairing,
                                         scale_costs)


def random_dist(rng, n, forbid_frac=0.0):
    a = rng.uniform(0, 10, (n, n))
    ent = 0.5 * (a + a.T)
    np.fill_diagonal(ent, 0.0)
    forb = np.zeros((n, n), bool)
    if forbid_frac:
        mask = rng.random((n, n)) < forbid_frac
        forb = np.triu(mask, 1)
        forb = forb | forb.T
    return DistanceMatrix(entries=ent, forbidden=forb)


class TestScaleCosts:
    def test_rounds_to_nearest(self):
        ent = np.array([[0.0, 1.2345678], [1.2345678, 0.0]])
        out = scale_costs(ent)
        assert out[0, 1] == 1234568
        assert out.dtype.kind == "i"

    def test_overflow_guard(self):
        big = np.array([[0.0, 1e48], [1e48, 0.0]])
        with pytest.raises(OverflowError):
            scale_costs(big)


class TestTypes:
    def test_matched_set_needs_singleton_side(self):
        with pytest.raises(DataError):
            MatchedSet(treated=(1, 2), controls=(3, 4))

    def test_no_duplicate_units(self):
        s1 = MatchedSet(treated=(1,), controls=(2,))
        s2 = MatchedSet(treated=(3,), controls=(2,))
        with pytest.raises(DataError):
            FullMatching(sets=(s1, s2), total_distance=0.0)
        with pytest.raises(DataError):
            Pairing(pairs=((1, 2), (2, 3)), total_distance=0.0)


class TestPairing:
    def test_matches_brute_force(self):
        rng = np.random.default_rng(2)
        for trial in range(30):
            n = 2 * int(rng.integers(1, 5))
            dist = random_dist(rng, n, forbid_frac=0.2)
            try:
                got = optimal_nonbipartite_match(dist)
            except InfeasibleError:
                with pytest.raises(InfeasibleError):
                    brute_force_pairing(dist)
                continue
            want = brute_force_pairing(dist)
            assert got.total_distance == pytest.approx(
                want.total_distance, abs=n * 1e-6)

    def test_lexicographic_tie_break(self):
        # all-equal costs: the smallest pair listing must win
        ent = np.ones((4, 4)) - np.eye(4)
        got = optimal_nonbipartite_match(DistanceMatrix(entries=ent))
        assert got.pairs == ((0, 1), (2, 3))

    def test_odd_n_reports_unmatched(self):
        ent = np.array([[0.0, 1.0, 9.0],
                        [1.0, 0.0, 9.0],
                        [9.0, 9.0, 0.0]])
        got = optimal_nonbipartite_match(DistanceMatrix(entries=ent))
        assert got.pairs == ((0, 1),)
        assert got.unmatched == (2,)
        assert got.total_distance == pytest.approx(1.0)

    def test_forbidden_pair_respected(self):
        ent = np.array([[0.0, 0.1, 5.0, 5.0],
                        [0.1, 0.0, 5.0, 5.0],
                        [5.0, 5.0, 0.0, 0.1],
                        [5.0, 5.0, 0.1, 0.0]])
        forb = np.zeros((4, 4), bool)
        forb[0, 1] = forb[1, 0] = forb[2, 3] = forb[3, 2] = True
        got = optimal_nonbipartite_match(
            DistanceMatrix(entries=ent, forbidden=forb))
        assert got.total_distance == pytest.approx(10.0)
        assert not any(forb[a, b] for a, b in got.pairs)

    def test_infeasible_raises(self):
        ent = np.zeros((2, 2))
        forb = ~np.eye(2, dtype=bool)
        with pytest.raises(InfeasibleError):
            optimal_nonbipartite_match(
                DistanceMatrix(entries=ent, forbidden=forb))

    def test_too_few_units(self):
        with pytest.raises(DataError):
            optimal_nonbipartite_match(DistanceMatrix(
                entries=np.zeros((1, 1))))

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10_000))
    def test_equal_cost_multipartite_agrees(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 6)) * 2
        labels = rng.integers(0, 3, n)
        forb = labels[:, None] == labels[None, :]
        np.fill_diagonal(forb, False)
        ent = np.full((n, n), 2.5)
        np.fill_diagonal(ent, 0.0)
        dist = DistanceMatrix(entries=ent, forbidden=forb)
        try:
            got = optimal_nonbipartite_match(dist)
        except InfeasibleError:
            with pytest.raises(InfeasibleError):
                brute_force_pairing(dist)
            return
        want = brute_force_pairing(dist)
        assert got.total_distance == pytest.approx(want.total_distance)


class TestFullMatch:
    def test_matches_brute_force(self):
        rng = np.random.default_rng(3)
        for trial in range(25):
            nt = int(rng.integers(1, 5))
            nc = int(rng.integers(1, 10 - nt))
            r = int(rng.integers(1, 4))
            m = int(rng.integers(1, nc + 1))
            if r * nt < m or r * m < nt:
                continue
            dist = random_dist(rng, nt + nc)
            treated = list(range(nt))
            controls = list(range(nt, nt + nc))
            got = optimal_full_match(dist, treated, controls, r, m)
            want = brute_force_full_match(dist, treated, controls, r, m)
            assert got.total_distance == pytest.approx(
                want.total_distance, abs=(nt + nc) * 1e-6)

    def test_structure_invariants(self):
        rng = np.random.default_rng(4)
        dist = random_dist(rng, 30)
        treated = list(range(10))
        controls = list(range(10, 30))
        fm = optimal_full_match(dist, treated, controls, max_ratio=3,
                                n_controls_to_use=15)
        used_c = [u for s in fm.sets for u in s.controls]
        used_t = [u for s in fm.sets for u in s.treated]
        assert sorted(used_t) == treated
        assert len(used_c) == len(set(used_c)) == 15
        for s in fm.sets:
            assert max(len(s.treated), len(s.controls)) <= 3
            assert min(len(s.treated), len(s.controls)) == 1

    def test_pair_ratio_one(self):
        # max_ratio=1 with equal sides degenerates to bipartite pairing
        rng = np.random.default_rng(5)
        dist = random_dist(rng, 8)
        fm = optimal_full_match(dist, [0, 1, 2, 3], [4, 5, 6, 7],
                                max_ratio=1)
        assert all(s.size == 2 for s in fm.sets)

    def test_infeasible_parameters(self):
        dist = DistanceMatrix(entries=np.zeros((5, 5)))
        with pytest.raises((DataError, InfeasibleError)):
            # 4 treated cannot attach to 1 control at max_ratio 2
            optimal_full_match(dist, [0, 1, 2, 3], [4], max_ratio=2)

    def test_overlapping_sides_rejected(self):
        dist = DistanceMatrix(entries=np.zeros((4, 4)))
        with pytest.raises(DataError):
            optimal_full_match(dist, [0, 1], [1, 2])

    def test_equal_cost_construction(self):
        dist = DistanceMatrix(entries=np.full((9, 9), 3.0)
                              - 3.0 * np.eye(9))
        fm = optimal_full_match(dist, [0, 1, 2], list(range(3, 9)),
                                max_ratio=2, n_controls_to_use=6)
        # 6 controls over 3 treated: exactly 6 edges is optimal
        assert fm.total_distance == pytest.approx(18.0)
        want = brute_force_full_match(dist, [0, 1, 2], list(range(3, 9)),
                                      2, 6)
        assert want.total_distance == pytest.approx(fm.total_distance)

    def test_control_centered_sets(self):
        # more treated than controls forces multi-treated stars
        rng = np.random.default_rng(6)
        dist = random_dist(rng, 9)
        fm = optimal_full_match(dist, list(range(6)), [6, 7, 8],
                                max_ratio=2, n_controls_to_use=3)
        want = brute_force_full_match(dist, list(range(6)), [6, 7, 8],
                                      2, 3)
        assert fm.total_distance == pytest.approx(
            want.total_distance, abs=9e-6)
        assert all(len(s.controls) == 1 for s in fm.sets)


class TestDeterminism:
    def test_pairing_repeatable(self):
        rng = np.random.default_rng(7)
        dist = random_dist(rng, 40, forbid_frac=0.1)
        a = optimal_nonbipartite_match(dist)
        b = optimal_nonbipartite_match(dist)
        assert a == b

    def test_full_match_repeatable(self):
        rng = np.random.default_rng(8)
        dist = random_dist(rng, 25)
        args = (dist, list(range(8)), list(range(8, 25)), 2, 12)
        assert optimal_full_match(*args) == optimal_full_match(*args)
