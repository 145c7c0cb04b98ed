import io

import numpy as np
import pytest
from hypothesis import given, strategies as st

from milestone_iv.data_model import (DataError, MilestoneEditPolicy,
                                     Partition, TableSchema, Unit,
                                     assign_region, enforce_milestone,
                                     load_units, write_edit_log)


def unit(D, Y=0.0, x=(), miss=None, uid="u"):
    miss = tuple(False for _ in x) if miss is None else miss
    return Unit(id=uid, x=tuple(x), x_missing=miss, D=tuple(D), Y=Y)


class TestPartition:
    def test_region_count(self):
        part = Partition(cuts=((16.0,), (0.5, 12.0)))
        assert part.P == 2
        assert part.n_regions == 2 * 3

    def test_milestones_enumeration(self):
        part = Partition(cuts=((16.0,), (0.5, 12.0)))
        assert part.milestones() == [(0, 16.0), (1, 0.5), (1, 12.0)]

    def test_unsorted_cuts_rejected(self):
        with pytest.raises(DataError):
            Partition(cuts=((12.0, 0.5),))

    def test_duplicate_cuts_rejected(self):
        with pytest.raises(DataError):
            Partition(cuts=((16.0, 16.0),))


class TestAssignRegion:
    def test_boundary_goes_up(self):
        # a dose exactly at the cut sits on the >= side
        part = Partition(cuts=((16.0,),))
        assert assign_region([16.0], part).sides == (1,)
        assert assign_region([15.999], part).sides == (0,)

    def test_quadrants(self):
        part = Partition(cuts=((16.0,), (0.5,)))
        lab = assign_region([17.0, 0.0], part)
        assert lab.sides == (1, 0)
        assert lab.index == part.sides_to_index((1, 0))

    def test_dimension_mismatch(self):
        part = Partition(cuts=((16.0,),))
        with pytest.raises(DataError):
            assign_region([1.0, 2.0], part)

    @given(st.floats(-100, 100), st.floats(-100, 100))
    def test_index_injective_over_sides(self, d1, d2):
        part = Partition(cuts=((0.0, 10.0), (5.0,)))
        lab = assign_region([d1, d2], part)
        assert 1 <= lab.index <= part.n_regions
        assert part.sides_to_index(lab.sides) == lab.index


CSV = """id,y,dose,x1,x2
a,1.5,16,2.0,7
b,2.5,14,NA,8
c,,15,1.0,9
d,3.5,NA,1.0,10
e,4.5,18,,11
"""


class TestLoadUnits:
    def test_roundtrip_and_exclusions(self):
        schema = TableSchema(outcome="y", doses=("dose",),
                             covariates=("x1", "x2"), id="id")
        res = load_units(io.StringIO(CSV), schema)
        assert [u.id for u in res.units] == ["a", "b", "e"]
        # rows c (missing outcome) and d (missing dose) are excluded
        assert sorted(row for row, _ in res.excluded) == [4, 5]
        assert res.units[1].x_missing == (True, False)
        assert res.units[2].x_missing == (True, False)
        assert res.units[0].D == (16.0,)

    def test_malformed_cell_names_row(self):
        bad = "y,dose\n1.0,16\noops,14\n"
        schema = TableSchema(outcome="y", doses=("dose",))
        with pytest.raises(DataError, match="3"):
            load_units(io.StringIO(bad), schema)

    def test_empty_input_rejected(self):
        schema = TableSchema(outcome="y", doses=("dose",))
        with pytest.raises(DataError, match="no usable units"):
            load_units(io.StringIO("y,dose\n"), schema)

    def test_missing_column(self):
        schema = TableSchema(outcome="nope", doses=("dose",))
        with pytest.raises(DataError):
            load_units(io.StringIO(CSV), schema)


class TestEnforceMilestone:
    part = Partition(cuts=((16.0,),))

    def test_consistent_units_untouched(self):
        us = [unit([17.0], uid="a"), unit([15.0], uid="b")]
        kept, log = enforce_milestone(us, [[True], [False]], self.part)
        assert kept == us and log == []

    def test_clamp_up_to_kappa(self):
        us = [unit([15.0], uid="a")]
        kept, log = enforce_milestone(us, [[True]], self.part,
                                      MilestoneEditPolicy("clamp"))
        assert kept[0].D == (16.0,)
        assert log[0].unit_id == "a" and log[0].old_value == 15.0

    def test_clamp_down_uses_epsilon(self):
        us = [unit([16.0], uid="a"), unit([17.0], uid="b")]
        kept, log = enforce_milestone(
            us, [[False], [True]], self.part,
            MilestoneEditPolicy("clamp", epsilon=0.25))
        assert kept[0].D == (15.75,)
        assert len(log) == 1

    def test_default_epsilon_from_gaps(self):
        # smallest positive dose gap is 0.5 -> epsilon 5e-4
        us = [unit([16.0], uid="a"), unit([16.5], uid="b"),
              unit([18.0], uid="c")]
        kept, _ = enforce_milestone(us, [[False], [True], [True]],
                                    self.part)
        assert kept[0].D[0] == pytest.approx(16.0 - 5e-4)

    def test_reject_drops_unit(self):
        us = [unit([15.0], uid="a"), unit([17.0], uid="b")]
        kept, log = enforce_milestone(us, [[True], [True]], self.part,
                                      MilestoneEditPolicy("reject"))
        assert [u.id for u in kept] == ["b"]
        assert log[0].new_value is None

    def test_log_writer(self):
        us = [unit([15.0], uid="a")]
        _, log = enforce_milestone(us, [[True]], self.part)
        buf = io.StringIO()
        write_edit_log(log, buf)
        lines = buf.getvalue().splitlines()
        assert lines[0].startswith("unit_id")
        assert lines[1].startswith("a,0,15.0,16.0")


class TestUnit:
    def test_nonfinite_rejected(self):
        with pytest.raises(DataError):
            unit([np.nan])
        with pytest.raises(DataError):
            unit([1.0], Y=np.inf)

    def test_policy_validation(self):
        with pytest.raises(DataError):
            MilestoneEditPolicy("fixup")
        with pytest.raises(DataError):
            MilestoneEditPolicy("clamp", epsilon=-1.0)
