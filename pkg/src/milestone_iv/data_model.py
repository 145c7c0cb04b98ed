"""Core domain types: units, dose-space partitions, region assignment, and
milestone-consistency editing of observed doses."""

from __future__ import annotations

import csv
import io
import math
from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Iterable, Sequence


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class Unit:
    """One subject: covariates (with missing flags), observed doses, outcome."""

    id: str
    x: tuple[float, ...]
    x_missing: tuple[bool, ...]
    D: tuple[float, ...]
    Y: float

    def __post_init__(self):
        if len(self.x) != len(self.x_missing):
            raise DataError("covariate/missing-flag length mismatch")
        if not all(math.isfinite(v) for v in self.D):
            raise DataError(f"unit {self.id}: non-finite dose")
        if not math.isfinite(self.Y):
            raise DataError(f"unit {self.id}: non-finite outcome")


@dataclass(frozen=True)
class RegionLabel:
    """Region index (1-based) plus per-coordinate interval side codes."""

    index: int
    sides: tuple[int, ...]


class Partition:
    """Per-coordinate cut points defining product regions of dose space.

    Coordinate p with k_p cuts is split into k_p + 1 intervals; boundary
    values belong to the upper side (D_p >= kappa is "above" the cut).
    """

    def __init__(self, cuts: Sequence[Sequence[float]]):
        if not cuts:
            raise DataError("partition needs at least one dose coordinate")
        norm = []
        for p, cs in enumerate(cuts):
            cs = tuple(float(c) for c in cs)
            if not cs:
                raise DataError(f"coordinate {p}: every coordinate needs "
                                "at least one cut")
            if any(not math.isfinite(c) for c in cs):
                raise DataError(f"coordinate {p}: non-finite cut")
            if tuple(sorted(set(cs))) != cs:
                raise DataError(f"coordinate {p}: cuts must be strictly "
                                "increasing")
            norm.append(cs)
        self.cuts: tuple[tuple[float, ...], ...] = tuple(norm)

    @property
    def P(self) -> int:
        return len(self.cuts)

    @property
    def n_regions(self) -> int:
        n = 1
        for cs in self.cuts:
            n *= len(cs) + 1
        return n

    def milestones(self) -> list[tuple[int, float]]:
        """All (coordinate, cut value) pairs in coordinate-major order."""
        return [(p, c) for p, cs in enumerate(self.cuts) for c in cs]

    def sides_to_index(self, sides: Sequence[int]) -> int:
        idx = 0
        for p, cs in enumerate(self.cuts):
            idx = idx * (len(cs) + 1) + sides[p]
        return idx + 1

    def __eq__(self, other):
        return isinstance(other, Partition) and self.cuts == other.cuts

    def __repr__(self):
        return f"Partition(cuts={self.cuts!r})"


def assign_region(D: Sequence[float], partition: Partition) -> RegionLabel:
    """The unique region containing dose vector D (boundary goes up)."""
    if len(D) != partition.P:
        raise DataError(f"dose vector has {len(D)} coordinates, "
                        f"partition has {partition.P}")
    sides = tuple(bisect_right(cs, D[p])
                  for p, cs in enumerate(partition.cuts))
    return RegionLabel(index=partition.sides_to_index(sides), sides=sides)


@dataclass(frozen=True)
class MilestoneEditPolicy:
    """How to repair doses inconsistent with a trusted milestone side.

    epsilon=None derives the clamp offset per dose coordinate as 1e-3 of
    the smallest positive gap between distinct observed values.
    """

    mode: str = "clamp"
    epsilon: float | None = None

    def __post_init__(self):
        if self.mode not in ("reject", "clamp"):
            raise DataError(f"unknown edit mode {self.mode!r}")
        if self.epsilon is not None and not self.epsilon > 0:
            raise DataError("clamp epsilon must be positive")


@dataclass(frozen=True)
class TableSchema:
    """Column mapping for delimited ingestion."""

    outcome: str
    doses: tuple[str, ...]
    covariates: tuple[str, ...] = ()
    id: str | None = None
    delimiter: str = ","


@dataclass
class LoadResult:
    units: list[Unit]
    excluded: list[tuple[int, str]] = field(default_factory=list)


_MISSING = {"", "NA"}


def _parse_cell(raw: str | None) -> float | None:
    if raw is None or raw.strip() in _MISSING:
        return None
    return float(raw)


def load_units(source, schema: TableSchema) -> LoadResult:
    """Read units from a delimited text stream or path.

    Missing covariate cells set the missing flag; rows missing the outcome
    or any dose are excluded and reported.  Malformed numeric cells raise
    with the offending row number.
    """
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        with open(source, newline="") as fh:
            return load_units(fh, schema)
    if isinstance(source, str):  # pragma: no cover - handled above
        source = io.StringIO(source)
    reader = csv.DictReader(source, delimiter=schema.delimiter)
    if reader.fieldnames is None:
        raise DataError("empty input: header row required")
    needed = [schema.outcome, *schema.doses, *schema.covariates]
    if schema.id is not None:
        needed.append(schema.id)
    for col in needed:
        if col not in reader.fieldnames:
            raise DataError(f"missing column {col!r}")

    units: list[Unit] = []
    excluded: list[tuple[int, str]] = []
    for rownum, row in enumerate(reader, start=2):  # 1 = header line
        try:
            y = _parse_cell(row[schema.outcome])
            doses = [_parse_cell(row[c]) for c in schema.doses]
            covs = [_parse_cell(row[c]) for c in schema.covariates]
        except ValueError as exc:
            raise DataError(f"row {rownum}: malformed value ({exc})") from exc
        if y is None:
            excluded.append((rownum, "missing outcome"))
            continue
        if any(d is None for d in doses):
            excluded.append((rownum, "missing dose"))
            continue
        uid = row[schema.id] if schema.id is not None else f"row{rownum}"
        units.append(Unit(
            id=uid,
            x=tuple(0.0 if c is None else c for c in covs),
            x_missing=tuple(c is None for c in covs),
            D=tuple(doses),  # type: ignore[arg-type]
            Y=y,
        ))
    if not units:
        raise DataError("no usable units")
    return LoadResult(units=units, excluded=excluded)


@dataclass(frozen=True)
class EditRecord:
    unit_id: str
    coordinate: int
    old_value: float
    new_value: float | None
    reason: str


def _default_epsilons(units: Sequence[Unit], P: int) -> list[float]:
    eps = []
    for p in range(P):
        vals = sorted({u.D[p] for u in units})
        gaps = [b - a for a, b in zip(vals, vals[1:]) if b > a]
        eps.append(1e-3 * min(gaps) if gaps else 1e-3)
    return eps


def enforce_milestone(units: Sequence[Unit],
                      side_labels: Sequence[Sequence[bool]],
                      partition: Partition,
                      policy: MilestoneEditPolicy = MilestoneEditPolicy(),
                      ) -> tuple[list[Unit], list[EditRecord]]:
    """Reconcile observed doses with trusted milestone indicators.

    side_labels[i][m] is True when unit i is known to sit on the >= kappa
    side of milestone m (ordering as in partition.milestones()).  clamp
    moves an inconsistent coordinate to kappa (trusted above) or
    kappa - epsilon (trusted below); reject drops the unit.
    """
    if len(side_labels) != len(units):
        raise DataError("side_labels length mismatch")
    milestones = partition.milestones()
    eps = None
    kept: list[Unit] = []
    log: list[EditRecord] = []
    for u, trusted in zip(units, side_labels):
        if len(trusted) != len(milestones):
            raise DataError(f"unit {u.id}: expected {len(milestones)} "
                            "milestone labels")
        newD = list(u.D)
        bad = []
        for m, (p, kappa) in enumerate(milestones):
            above = newD[p] >= kappa
            if above == bool(trusted[m]):
                continue
            bad.append((m, p, kappa, bool(trusted[m])))
        if not bad:
            kept.append(u)
            continue
        if policy.mode == "reject":
            for m, p, kappa, _ in bad:
                log.append(EditRecord(u.id, p, u.D[p], None,
                                      f"rejected: inconsistent with "
                                      f"milestone at {kappa}"))
            continue
        for m, p, kappa, trusted_above in bad:
            if trusted_above:
                target = kappa
            else:
                if policy.epsilon is not None:
                    e = policy.epsilon
                else:
                    if eps is None:
                        eps = _default_epsilons(units, partition.P)
                    e = eps[p]
                target = kappa - e
            log.append(EditRecord(u.id, p, newD[p], target,
                                  f"clamped to trusted side of {kappa}"))
            newD[p] = target
        kept.append(Unit(id=u.id, x=u.x, x_missing=u.x_missing,
                         D=tuple(newD), Y=u.Y))
    return kept, log


def write_edit_log(log: Iterable[EditRecord], fh) -> None:
    w = csv.writer(fh)
    w.writerow(["unit_id", "coordinate", "old_value", "new_value", "reason"])
    for rec in log:
        w.writerow([rec.unit_id, rec.coordinate, repr(rec.old_value),
                    "" if rec.new_value is None else repr(rec.new_value),
                    rec.reason])
