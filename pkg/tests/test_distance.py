import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import rankdata

from milestone_iv.data_model import DataError, Partition, assign_region
from milestone_iv.distance import (DistanceMatrix, InfeasibleError,
                                   apply_constraints, dump_distance_matrix,
                                   rank_mahalanobis, rank_transform)


def labels_for(doses, cuts):
    part = Partition(cuts=cuts)
    return [assign_region(d, part) for d in doses]


class TestRankTransform:
    def test_known_ranks(self):
        cols = np.array([[3.0], [1.0], [2.0], [2.0]])
        out = rank_transform(cols)
        # average ranks: 2 and 3 tie at 2.5
        assert np.allclose(out[:, 0], [4.0, 1.0, 2.5, 2.5])

    def test_missing_adds_indicator_column(self):
        cols = np.array([[3.0], [1.0], [9.9]])
        miss = np.array([[False], [False], [True]])
        out = rank_transform(cols, miss)
        assert out.shape == (3, 2)
        # the indicator column is itself rank transformed
        assert np.allclose(sorted(out[:, 1]), [1.5, 1.5, 3.0])

    def test_placeholder_value_irrelevant(self):
        # whatever sat in a missing cell must not change the result
        cols1 = np.array([[3.0], [1.0], [123.0]])
        cols2 = np.array([[3.0], [1.0], [-5.0]])
        miss = np.array([[False], [False], [True]])
        out1 = rank_transform(cols1, miss)
        out2 = rank_transform(cols2, miss)
        assert np.array_equal(out1, out2)


class TestRankMahalanobis:
    def test_axioms(self):
        rng = np.random.default_rng(0)
        cols = rng.normal(size=(12, 3))
        dist = rank_mahalanobis(rank_transform(cols))
        assert np.allclose(dist.entries, dist.entries.T)
        assert np.allclose(np.diag(dist.entries), 0.0)
        assert (dist.entries >= 0).all()

    def test_monotone_invariance(self):
        # rank-based: any strictly increasing column transform is a no-op
        rng = np.random.default_rng(1)
        cols = rng.normal(size=(10, 2))
        d1 = rank_mahalanobis(rank_transform(cols)).entries
        warped = np.column_stack([np.exp(cols[:, 0]), cols[:, 1] ** 3])
        d2 = rank_mahalanobis(rank_transform(warped)).entries
        assert np.allclose(d1, d2)

    def test_identical_rows_at_zero(self):
        cols = np.array([[1.0, 2.0], [1.0, 2.0], [5.0, -1.0]])
        dist = rank_mahalanobis(rank_transform(cols))
        assert dist.entries[0, 1] == pytest.approx(0.0)
        assert dist.entries[0, 2] > 0

    def test_constant_column_handled(self):
        cols = np.ones((4, 1))
        dist = rank_mahalanobis(rank_transform(cols))
        assert np.allclose(dist.entries, 0.0)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 1000))
    def test_triangle_like_scaling(self, seed):
        # doubling a dataset of two distinct rows keeps their distance
        rng = np.random.default_rng(seed)
        a, b = rng.normal(size=(2, 2))
        cols = np.array([a, b, a, b])
        dist = rank_mahalanobis(rank_transform(cols))
        assert dist.entries[0, 1] == pytest.approx(dist.entries[2, 3])


class TestApplyConstraints:
    def test_cross_region_forbids_same_region(self):
        ent = np.zeros((4, 4))
        dist = DistanceMatrix(entries=ent)
        labs = labels_for([[17.0], [15.0], [17.5], [14.0]], ((16.0,),))
        out = apply_constraints(dist, labs, mode="cross_region")
        assert out.forbidden[0, 2] and out.forbidden[1, 3]
        assert not out.forbidden[0, 1]

    def test_cross_milestone_selects_one_cut(self):
        dist = DistanceMatrix(entries=np.zeros((3, 3)))
        labs = labels_for([[1.0], [11.0], [25.0]], ((10.0, 20.0),))
        out = apply_constraints(dist, labs, mode="cross_milestone",
                                coord=0, cut_index=1)
        # cut #1 is 20: units 0 and 1 share the < 20 side
        assert out.forbidden[0, 1]
        assert not out.forbidden[0, 2] and not out.forbidden[1, 2]

    def test_all_forbidden_is_infeasible(self):
        dist = DistanceMatrix(entries=np.zeros((3, 3)))
        labs = labels_for([[17.0], [17.5], [18.0]], ((16.0,),))
        with pytest.raises(InfeasibleError):
            apply_constraints(dist, labs, mode="cross_region")

    def test_unknown_mode(self):
        dist = DistanceMatrix(entries=np.zeros((2, 2)))
        labs = labels_for([[17.0], [15.0]], ((16.0,),))
        with pytest.raises(DataError):
            apply_constraints(dist, labs, mode="nearest")


class TestDistanceMatrix:
    def test_validation(self):
        with pytest.raises(DataError):
            DistanceMatrix(entries=np.array([[0.0, 1.0], [2.0, 0.0]]))
        with pytest.raises(DataError):
            DistanceMatrix(entries=-np.ones((2, 2)))

    def test_dump_marks_forbidden(self):
        ent = np.array([[0.0, 1.5], [1.5, 0.0]])
        forb = np.array([[False, True], [True, False]])
        buf = io.StringIO()
        dump_distance_matrix(DistanceMatrix(entries=ent, forbidden=forb),
                             buf)
        assert "INF" in buf.getvalue()
