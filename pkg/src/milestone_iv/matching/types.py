"""Matched-structure result types shared by the engines and oracles."""

from __future__ import annotations

from dataclasses import dataclass, field

from ..data_model import DataError

SCALE = 10**6  # distances are scaled to integers by this factor
MAX_SCALED = 2**52  # guard against losing integrality in float solvers


@dataclass(frozen=True)
class MatchedSet:
    """One full-matching set: a singleton on one side, >=1 on the other."""

    treated: tuple[int, ...]
    controls: tuple[int, ...]

    def __post_init__(self):
        if not self.treated or not self.controls:
            raise DataError("matched set needs units on both sides")
        if len(self.treated) > 1 and len(self.controls) > 1:
            raise DataError("matched set must have a singleton side")

    @property
    def size(self) -> int:
        return len(self.treated) + len(self.controls)


@dataclass(frozen=True)
class FullMatching:
    sets: tuple[MatchedSet, ...]
    total_distance: float

    def __post_init__(self):
        seen = set()
        for s in self.sets:
            for u in (*s.treated, *s.controls):
                if u in seen:
                    raise DataError(f"unit {u} appears in two sets")
                seen.add(u)


@dataclass(frozen=True)
class Pairing:
    pairs: tuple[tuple[int, int], ...]
    total_distance: float
    unmatched: tuple[int, ...] = field(default=())

    def __post_init__(self):
        seen = set()
        for a, b in self.pairs:
            for u in (a, b):
                if u in seen:
                    raise DataError(f"unit {u} appears in two pairs")
                seen.add(u)


def scale_costs(entries):
    """Round distances to integers at SCALE, half to even."""
    import numpy as np

    scaled = np.rint(np.asarray(entries, float) * SCALE)
    if not np.isfinite(scaled).all():
        raise DataError("non-finite distance where a finite one is required")
    if np.abs(scaled).max(initial=0) > MAX_SCALED:
        raise OverflowError("scaled distances exceed the exact integer "
                            "range; rescale the covariates")
    return scaled.astype("int64")
