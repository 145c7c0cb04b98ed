"""Command-line front end: match / estimate / estimate-mv / simulate.

Config comes from an optional JSON file plus flag overrides (flags win).
Every run writes manifest.json with the fully resolved config so it can
be reproduced exactly.  Exit codes: 0 success, 2 config error, 3
infeasible matching, 4 degenerate statistics.
"""

from __future__ import annotations

import argparse
import json
import sys
from importlib import metadata
from pathlib import Path

import numpy as np

from . import report as rpt
from . import simulate as sim
from .data_model import (DataError, MilestoneEditPolicy, Partition,
                         TableSchema, assign_region, enforce_milestone,
                         load_units, write_edit_log)
from .distance import (DistanceMatrix, InfeasibleError, apply_constraints,
                       rank_mahalanobis, rank_transform)
from .inference_mv import (GridSpec, default_grid, mv_confidence_set,
                           mv_point_estimate, mv_test)
from .inference_uni import (DegenerateStatisticError, PairedSample,
                            ci_invert, fullmatch_estimate,
                            fullmatch_permutation_test, hl_estimate,
                            ols_estimate, pair_differences,
                            signed_rank_test, tsls_estimate, wald_estimate)
from .matching import optimal_full_match, optimal_nonbipartite_match
from .simulate import paired_sample_mv

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_DEGENERATE = 4

_DEFAULTS = {
    "input": None,
    "outcome": None,
    "dose": [],
    "covariate": [],
    "id_column": None,
    "delimiter": ",",
    "cuts": [],           # one comma-separated string per dose column
    "milestone_column": [],  # trusted side indicator columns, in
    # partition.milestones() order; optional
    "edit_mode": "clamp",
    "edit_epsilon": None,
    "constraint": "cross_milestone",
    "coord": 0,
    "cut_index": 0,
    "engine": "pairs",
    "max_ratio": 2,
    "n_controls_to_use": None,
    "alpha": 0.05,
    "exact_cap": 30,
    "grid_resolution": None,
    "permutation_draws": 10000,
    "seed": 0,
    "threads": 1,
    "outdir": "out",
    "figures": True,
    "profile": None,
    "replicates": None,
}


def _version() -> str:
    try:
        return metadata.version("milestone-iv")
    except metadata.PackageNotFoundError:
        return "unknown"


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; flags override it")
    p.add_argument("--outdir")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--no-figures", action="store_true", default=None,
                   help="skip figure rendering")


def _add_data(p: argparse.ArgumentParser) -> None:
    p.add_argument("--input", help="delimited input table")
    p.add_argument("--outcome", help="outcome column")
    p.add_argument("--dose", action="append",
                   help="dose column (repeat for several)")
    p.add_argument("--covariate", action="append",
                   help="covariate column (repeatable)")
    p.add_argument("--id-column")
    p.add_argument("--delimiter")
    p.add_argument("--cuts", action="append",
                   help="comma-separated cut points, one flag per dose "
                        "column, e.g. --cuts 16 --cuts 0.5,12")
    p.add_argument("--milestone-column", action="append",
                   help="column with the trusted 0/1 side of a milestone "
                        "(repeat, in milestone order)")
    p.add_argument("--edit-mode", choices=["reject", "clamp"])
    p.add_argument("--edit-epsilon", type=float)
    p.add_argument("--constraint",
                   choices=["cross_region", "cross_milestone"])
    p.add_argument("--coord", type=int)
    p.add_argument("--cut-index", type=int)
    p.add_argument("--alpha", type=float)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="milestone-iv",
        description="dose-outcome slope estimation with error-free "
                    "milestones as instruments")
    p.add_argument("--version", action="version", version=_version())
    subs = p.add_subparsers(dest="subcommand", required=True)

    m = subs.add_parser("match", help="build the matched structure")
    _add_common(m)
    _add_data(m)
    m.add_argument("--engine", choices=["pairs", "full"])
    m.add_argument("--max-ratio", type=int)
    m.add_argument("--n-controls-to-use", type=int)

    e = subs.add_parser("estimate", help="univariate slope inference")
    _add_common(e)
    _add_data(e)
    e.add_argument("--engine", choices=["pairs", "full"])
    e.add_argument("--max-ratio", type=int)
    e.add_argument("--n-controls-to-use", type=int)
    e.add_argument("--exact-cap", type=int)
    e.add_argument("--permutation-draws", type=int)

    mv = subs.add_parser("estimate-mv",
                         help="multivariate slope inference")
    _add_common(mv)
    _add_data(mv)
    mv.add_argument("--exact-cap", type=int)
    mv.add_argument("--grid-resolution", type=int)

    s = subs.add_parser("simulate", help="run a bundled experiment")
    _add_common(s)
    s.add_argument("--profile", help="one of: " + ", ".join(sim.PROFILES))
    s.add_argument("--replicates", type=int)
    return p


def resolve_config(args: argparse.Namespace) -> dict:
    cfg = dict(_DEFAULTS)
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                file_cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read config file: {exc}")
        unknown = set(file_cfg) - set(cfg)
        if unknown:
            raise DataError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(file_cfg)
    for key in cfg:
        val = getattr(args, key, None)
        if val is not None and val != []:
            cfg[key] = val
    if getattr(args, "no_figures", None):
        cfg["figures"] = False
    cfg["subcommand"] = args.subcommand
    _validate(cfg)
    return cfg


def _validate(cfg: dict) -> None:
    if not 0 < cfg["alpha"] < 1:
        raise DataError("alpha must lie strictly between 0 and 1")
    if cfg["subcommand"] == "simulate":
        if cfg["profile"] not in sim.PROFILES:
            raise DataError("unknown profile %r; available: %s"
                            % (cfg["profile"], ", ".join(sim.PROFILES)))
        return
    if not cfg["input"]:
        raise DataError("missing --input")
    if not cfg["outcome"]:
        raise DataError("missing --outcome")
    if not cfg["dose"]:
        raise DataError("need at least one --dose column")
    if len(cfg["cuts"]) != len(cfg["dose"]):
        raise DataError("need one --cuts list per dose column")
    if cfg["subcommand"] == "estimate-mv" and len(cfg["dose"]) < 2:
        raise DataError("estimate-mv needs at least two dose columns")


def _parse_cuts(cfg: dict) -> Partition:
    cuts = []
    for spec in cfg["cuts"]:
        if isinstance(spec, str):
            vals = tuple(float(v) for v in spec.split(",") if v.strip())
        else:
            vals = tuple(float(v) for v in spec)
        if not vals:
            raise DataError("empty cut list")
        cuts.append(vals)
    return Partition(cuts=tuple(cuts))


def _load(cfg: dict, partition: Partition):
    """Ingest, reconcile milestone sides, and label regions."""
    schema = TableSchema(outcome=cfg["outcome"], doses=tuple(cfg["dose"]),
                         covariates=tuple(cfg["covariate"]),
                         id=cfg["id_column"], delimiter=cfg["delimiter"])
    res = load_units(cfg["input"], schema)
    if not res.units:
        raise DataError("no usable units in input")
    units = res.units
    milestones = partition.milestones()
    if cfg["milestone_column"]:
        if len(cfg["milestone_column"]) != len(milestones):
            raise DataError("need one milestone column per milestone "
                            f"({len(milestones)})")
        sides = _read_side_columns(cfg, schema, res)
    else:
        sides = [[u.D[p] >= k for p, k in milestones] for u in units]
    policy = MilestoneEditPolicy(mode=cfg["edit_mode"],
                                 epsilon=cfg["edit_epsilon"])
    units, log = enforce_milestone(units, sides, partition, policy)
    labels = [assign_region(u.D, partition) for u in units]
    return units, labels, log, res.excluded


def _read_side_columns(cfg, schema, res):
    """Trusted milestone sides from extra 0/1 columns, aligned with the
    rows load_units kept."""
    import csv

    dropped = {row for row, _ in res.excluded}
    sides = []
    with open(cfg["input"], newline="") as fh:
        reader = csv.DictReader(fh, delimiter=schema.delimiter)
        for rownum, rec in enumerate(reader, start=2):
            if rownum in dropped:
                continue
            try:
                sides.append([bool(int(rec[c]))
                              for c in cfg["milestone_column"]])
            except (KeyError, ValueError) as exc:
                raise DataError(f"row {rownum}: bad milestone side "
                                f"({exc})")
    if len(sides) != len(res.units):
        raise DataError("milestone side columns misaligned with input")
    return sides


def _distances(units, labels, cfg: dict) -> DistanceMatrix:
    X = np.array([u.x for u in units], float).reshape(len(units), -1)
    miss = np.array([u.x_missing for u in units], bool).reshape(
        len(units), -1)
    if X.shape[1]:
        dist = rank_mahalanobis(rank_transform(X, miss))
    else:
        dist = DistanceMatrix(entries=np.zeros((len(units), len(units))))
    return apply_constraints(dist, labels, mode=cfg["constraint"],
                             coord=cfg["coord"],
                             cut_index=cfg["cut_index"])


def _treated_mask(labels, cfg: dict) -> np.ndarray:
    return np.array([lb.sides[cfg["coord"]] > cfg["cut_index"]
                     for lb in labels])


def _match_structure(units, labels, cfg: dict):
    """Run the configured engine; returns (kind, structure, sets) where
    sets is a list of (treated_indices, control_indices)."""
    dist = _distances(units, labels, cfg)
    if cfg["engine"] == "pairs":
        pairing = optimal_nonbipartite_match(dist)
        treated = _treated_mask(labels, cfg)
        sets = []
        for a, b in pairing.pairs:
            hi, lo = (a, b) if treated[a] else (b, a)
            sets.append(((hi,), (lo,)))
        return "pairs", pairing, sets
    treated = np.flatnonzero(_treated_mask(labels, cfg))
    controls = np.flatnonzero(~_treated_mask(labels, cfg))
    if not len(treated) or not len(controls):
        raise InfeasibleError("one side of the milestone is empty")
    # same-side distances are forbidden by construction; full matching
    # only consumes the treated x control block
    cross = DistanceMatrix(entries=dist.entries)
    fm = optimal_full_match(cross, treated, controls,
                            max_ratio=cfg["max_ratio"],
                            n_controls_to_use=cfg["n_controls_to_use"])
    sets = [(s.treated, s.controls) for s in fm.sets]
    return "full", fm, sets


def _balance_rows(units, sets, labels, cfg: dict):
    """Per-covariate mean treated-control difference, before matching and
    within matched sets."""
    names = list(cfg["covariate"])
    if not names:
        return names, [], []
    X = np.array([u.x for u in units], float)
    X[np.array([u.x_missing for u in units], bool)] = np.nan
    treated = _treated_mask(labels, cfg)
    with np.errstate(invalid="ignore"):
        before = (np.nanmean(X[treated], axis=0)
                  - np.nanmean(X[~treated], axis=0))
        within = []
        for j in range(len(names)):
            diffs = [np.nanmean(X[list(t), j]) - np.nanmean(X[list(c), j])
                     for t, c in sets]
            within.append(float(np.nanmean(diffs)))
    return names, [float(v) for v in before], within


def _set_samples(units, sets, labels, cfg: dict):
    """One PairedSample per matched set (P=1), milestone side first."""
    out = []
    for t, c in sets:
        dy, dd = [], []
        for a in t:
            for b in c:
                dy.append(units[a].Y - units[b].Y)
                dd.append(units[a].D[0] - units[b].D[0])
        out.append(PairedSample(dy=np.array(dy), dd=np.array(dd)))
    return out


def _write_matching(outdir: Path, units, sets, structure, kind) -> None:
    rows = []
    for sid, (t, c) in enumerate(sets):
        for u in t:
            rows.append([sid, units[u].id, "treated"])
        for u in c:
            rows.append([sid, units[u].id, "control"])
    rpt.write_table(outdir / "matching.csv",
                    ["set_id", "unit_id", "role"], rows)


def _write_common(outdir: Path, cfg, units, labels, sets, structure,
                  kind, log, excluded):
    with open(outdir / "edit_log.csv", "w", newline="") as fh:
        write_edit_log(log, fh)
    _write_matching(outdir, units, sets, structure, kind)
    names, before, within = _balance_rows(units, sets, labels, cfg)
    rpt.write_table(outdir / "balance.csv",
                    ["covariate", "mean_diff_before", "mean_diff_within"],
                    list(zip(names, before, within)))
    if cfg["figures"] and names:
        figdir = outdir / "figures"
        figdir.mkdir(exist_ok=True)
        rpt.balance_figure(figdir / "balance.png", names, before, within)
    items = [("structure", kind),
             ("n_units", len(units)),
             ("n_excluded_rows", len(excluded)),
             ("n_edits", len(log)),
             ("n_sets", len(sets)),
             ("total_distance", structure.total_distance)]
    human = ["matched structure: %s, %d sets, total distance %s"
             % (kind, len(sets), rpt.sig6(structure.total_distance)),
             "%d units (%d rows excluded, %d milestone edits)"
             % (len(units), len(excluded), len(log))]
    if names:
        human.append("")
        human.append("covariate balance (treated - control means):")
        human.append(rpt.human_table(
            ["covariate", "before", "within sets"],
            list(zip(names, before, within))))
    return items, human


def cmd_match(cfg: dict, outdir: Path) -> None:
    partition = _parse_cuts(cfg)
    units, labels, log, excluded = _load(cfg, partition)
    kind, structure, sets = _match_structure(units, labels, cfg)
    items, human = _write_common(outdir, cfg, units, labels, sets,
                                 structure, kind, log, excluded)
    rpt.write_keyvalue(outdir / "report_machine.txt", items)
    (outdir / "report.txt").write_text("\n".join(human) + "\n")


def cmd_estimate(cfg: dict, outdir: Path) -> None:
    partition = _parse_cuts(cfg)
    if partition.P != 1:
        raise DataError("estimate is univariate; use estimate-mv")
    units, labels, log, excluded = _load(cfg, partition)
    kind, structure, sets = _match_structure(units, labels, cfg)
    items, human = _write_common(outdir, cfg, units, labels, sets,
                                 structure, kind, log, excluded)
    alpha = cfg["alpha"]
    Y = np.array([u.Y for u in units])
    D = np.array([u.D[0] for u in units])
    X = np.array([u.x for u in units], float).reshape(len(units), -1)
    Xfill = None
    if X.shape[1]:
        miss = np.array([u.x_missing for u in units], bool).reshape(
            len(units), -1)
        Xfill = np.where(miss, np.nanmedian(
            np.where(miss, np.nan, X), axis=0), X)
    Z = _treated_mask(labels, cfg).astype(float)

    labels_out, ests, ivs = [], [], []
    if kind == "pairs":
        samples = _set_samples(units, sets, labels, cfg)
        pairs = PairedSample(
            dy=np.concatenate([s.dy for s in samples]),
            dd=np.concatenate([s.dd for s in samples]))
        hl = hl_estimate(pairs)
        ci = ci_invert(pairs, alpha=alpha, exact_cap=cfg["exact_cap"])
        test0 = signed_rank_test(pair_differences(pairs, 0.0),
                                 exact_cap=cfg["exact_cap"])
        wald = wald_estimate(pairs, alpha=alpha)
        items += [("hl_estimate", hl.estimate),
                  ("hl_interval_low", hl.interval[0]),
                  ("hl_interval_high", hl.interval[1]),
                  ("ci_lower", ci.lower), ("ci_upper", ci.upper),
                  ("ci_method", ci.method), ("ci_unbounded", ci.unbounded),
                  ("p_two_sided_at_zero", test0.p_two_sided),
                  ("test_method", test0.method),
                  ("wald_estimate", wald.estimate),
                  ("wald_se", wald.se),
                  ("wald_lower", wald.interval[0]),
                  ("wald_upper", wald.interval[1])]
        labels_out += ["milestone HL (signed rank)", "Wald (pair means)"]
        ests += [hl.estimate, wald.estimate]
        ivs += [(ci.lower, ci.upper), wald.interval]
    else:
        samples = _set_samples(units, sets, labels, cfg)
        fm, fmci = fullmatch_estimate(samples, alpha=alpha)
        perm = fullmatch_permutation_test(samples, 0.0,
                                          n_draws=cfg["permutation_draws"],
                                          seed=cfg["seed"])
        items += [("fullmatch_estimate", fm.estimate),
                  ("fullmatch_lower", fmci.lower),
                  ("fullmatch_upper", fmci.upper),
                  ("p_two_sided_at_zero", perm.p_two_sided),
                  ("permutation_method", perm.method)]
        labels_out.append("milestone (full matching)")
        ests.append(fm.estimate)
        ivs.append((fmci.lower, fmci.upper))

    ols = ols_estimate(Y, D, Xfill, alpha=alpha)
    tsls = tsls_estimate(Y, D, Z, Xfill, alpha=alpha)
    for nm, est in (("ols", ols), ("tsls", tsls)):
        items += [(f"{nm}_slope", float(est.slope[0])),
                  (f"{nm}_se", float(est.se[0])),
                  (f"{nm}_lower", float(est.interval[0][0])),
                  (f"{nm}_upper", float(est.interval[1][0]))]
        if est.warning:
            items.append((f"{nm}_warning", est.warning))
        labels_out.append(nm.upper())
        ests.append(float(est.slope[0]))
        ivs.append((float(est.interval[0][0]), float(est.interval[1][0])))

    human.append("")
    human.append(f"slope estimates ({(1 - alpha) * 100:g}% intervals):")
    human.append(rpt.human_table(
        ["method", "estimate", "lower", "upper"],
        [[l, e, lo, hi] for l, e, (lo, hi) in
         zip(labels_out, ests, ivs)]))
    rpt.write_keyvalue(outdir / "report_machine.txt", items)
    (outdir / "report.txt").write_text("\n".join(human) + "\n")
    if cfg["figures"]:
        figdir = outdir / "figures"
        figdir.mkdir(exist_ok=True)
        rpt.estimates_figure(figdir / "estimates.png", labels_out, ests,
                             ivs)


def cmd_estimate_mv(cfg: dict, outdir: Path) -> None:
    partition = _parse_cuts(cfg)
    # mv inference needs cross-region pairs (z-vectors vanish otherwise)
    cfg = dict(cfg, engine="pairs", constraint="cross_region")
    units, labels, log, excluded = _load(cfg, partition)
    kind, structure, sets = _match_structure(units, labels, cfg)
    items, human = _write_common(outdir, cfg, units, labels, sets,
                                 structure, kind, log, excluded)
    alpha = cfg["alpha"]
    pairing = structure
    sample = paired_sample_mv(units, pairing, labels, partition)
    z_list = sample.z
    beta0 = np.zeros(sample.P)
    test0 = mv_test(sample, z_list, beta0)
    grid = default_grid(sample, alpha=alpha)
    if cfg["grid_resolution"]:
        grid = GridSpec(ranges=grid.ranges,
                        resolution=cfg["grid_resolution"])
    cset = mv_confidence_set(sample, z_list, alpha=alpha, grid_spec=grid)
    point = mv_point_estimate(sample, z_list, grid_spec=grid)

    items += [("chi2_at_zero", test0.chi2), ("df", test0.df),
              ("p_value_at_zero", test0.p_value),
              ("confidence_set_empty", cset.empty),
              ("grid_resolution", grid.resolution),
              ("point_ambiguous", point.ambiguous)]
    for p in range(sample.P):
        items += [(f"estimate_{p}", float(point.estimate[p])),
                  (f"cell_extent_{p}", float(point.cell_extent[p])),
                  (f"projection_low_{p}", cset.projections[p][0]),
                  (f"projection_high_{p}", cset.projections[p][1])]
    rpt.write_table(outdir / "confidence_set.csv",
                    [f"beta_{p}" for p in range(sample.P)] + ["chi2"],
                    [list(map(float, row)) + [float(c)]
                     for row, c in zip(cset.accepted, cset.chi2)])
    human.append("")
    human.append("multivariate slope inference "
                 "(projections have simultaneous coverage "
                 f"{(1 - alpha) * 100:g}%):")
    human.append(rpt.human_table(
        ["coordinate", "estimate", "proj lower", "proj upper"],
        [[f"dose {p + 1}", float(point.estimate[p]),
          cset.projections[p][0], cset.projections[p][1]]
         for p in range(sample.P)]))
    human.append("chi-square at zero: %s on %d df (p = %s)"
                 % (rpt.sig6(test0.chi2), test0.df,
                    rpt.sig6(test0.p_value)))
    rpt.write_keyvalue(outdir / "report_machine.txt", items)
    (outdir / "report.txt").write_text("\n".join(human) + "\n")
    if cfg["figures"]:
        figdir = outdir / "figures"
        figdir.mkdir(exist_ok=True)
        rpt.confidence_set_figure(figdir / "confidence_set.png",
                                  cset.accepted, cset.projections,
                                  estimate=point.estimate)


def cmd_simulate(cfg: dict, outdir: Path) -> None:
    config, experiment = sim.PROFILES[cfg["profile"]](cfg["seed"])
    kwargs = {"threads": cfg["threads"]}
    if cfg["replicates"] is not None:
        kwargs["replicates"] = cfg["replicates"]
    report = experiment(config, **kwargs)
    lines = report.lines()
    (outdir / "report_machine.txt").write_text("\n".join(lines) + "\n")
    human = ["experiment %s: %d replicates, seed %d"
             % (report.name, report.replicates, report.seed),
             "wall clock: %s s" % rpt.sig6(report.wall_clock), "",
             rpt.human_table(["metric", "value"],
                             sorted(report.metrics.items()))]
    human += report.notes
    (outdir / "report.txt").write_text("\n".join(human) + "\n")


def _write_manifest(outdir: Path, cfg: dict) -> None:
    manifest = {"version": _version(), "config": cfg}
    with open(outdir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
    except DataError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    outdir = Path(cfg["outdir"])
    outdir.mkdir(parents=True, exist_ok=True)
    _write_manifest(outdir, cfg)
    handler = {"match": cmd_match, "estimate": cmd_estimate,
               "estimate-mv": cmd_estimate_mv,
               "simulate": cmd_simulate}[args.subcommand]
    try:
        handler(cfg, outdir)
    except DataError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except DegenerateStatisticError as exc:
        print(f"degenerate statistic: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
