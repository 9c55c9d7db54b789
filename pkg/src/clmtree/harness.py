"""Batch studies, dataset analysis and report rendering."""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, replace

import numpy as np

from . import dist_tests as dt
from . import indep_tests as it
from .calibrate import CalibrationResult
from .critical_values import load_all_tables
from .outcomes import BitSequence, TestOutcome, ZSample, skipped_outcome
from .qv import estimate_qv, normal_gof_tests, select_increment, time_change_increments
from .series import TickSeries, load_ticks, log_transform
from .simulate import ProcessSpec, simulate_crossings_batch, simulate_fbm_path
from .tree import (
    CrossingTree,
    TreeError,
    build_tree,
    lattice_events,
    level_stats,
    multiple_crossing_shares,
    select_base_scale,
)

Z_TESTS = ("chi2", "twos", "g", "ks_discrete", "klp", "joint", "autocorr",
           "runs", "larsen", "obrien76", "obrien85")
V_TESTS = ("runs_ud", "larsen_ud", "obrien76_ud", "obrien85_ud")
ALL_TESTS = Z_TESTS + V_TESTS

DELTA0_POLICIES = ("zero", "first", "latticed")


@dataclass(frozen=True)
class StudyConfig:
    """Everything a study needs; identical configs reproduce byte-identical
    reports."""

    process: ProcessSpec | None = None
    dataset: str | None = None
    n_paths: int = 1000
    n_crossings: int = 1250
    delta: float | None = None
    delta0_policy: str = "latticed"
    tests: tuple = ALL_TESTS
    seed: int = 0
    cv_dir: str | None = None  # None: tables shipped with the package
    out_dir: str | None = None
    fmt: str = "text"
    log_transform: bool = False
    milstein_step: float = 1e-5
    fbm_grid: float = 1e-5
    qv_n_points: int = 1250
    qv_spacing: float = 1.0 / 250.0
    qv_process: str = "bm"
    qv_drop_last: bool = False
    chi2_splits: int = 0  # stationarity variant; 0 disables
    fbm_horizon: float | None = None  # None: scaling-rule guess with margin

    def __post_init__(self):
        if not self.tests:
            raise ValueError("test roster must be nonempty")
        if self.n_paths < 1:
            raise ValueError("n_paths must be >= 1")
        if self.delta0_policy not in DELTA0_POLICIES:
            raise ValueError(f"delta0 policy must be one of {DELTA0_POLICIES}")
        unknown = set(self.tests) - set(ALL_TESTS)
        if unknown:
            raise ValueError(f"unknown tests: {sorted(unknown)}")


def _tables_for(cfg: StudyConfig) -> dict:
    return load_all_tables(cfg.cv_dir)


def apply_tests_to_tree(
    tree: CrossingTree, roster, tables: dict
) -> dict[int, dict[str, TestOutcome]]:
    """Run the roster at every level of one tree.

    Z-based tests consume the subcrossing counts, their runs-family
    variants the twos-indicator bits, and the UD variants the pooled
    excursion bits of the same level.
    """
    out: dict[int, dict[str, TestOutcome]] = {}
    for level in range(1, tree.max_level + 1):
        z = ZSample(tree.counts[level], level=level)
        zbits = it.indicator_of_twos(z) if len(z) else None
        vbits = BitSequence(tree.excursions[level], origin="excursions")
        row: dict[str, TestOutcome] = {}
        for test_id in roster:
            row[test_id] = _run_one_test(test_id, z, zbits, vbits, tables)
        out[level] = row
    return out


def _run_one_test(test_id, z, zbits, vbits, tables) -> TestOutcome:
    n = len(z)
    try:
        if test_id == "twos":
            return dt.twos_test(z)
        if test_id == "chi2":
            return dt.chi2_geometric_test(z, tables["chi2_geometric"])
        if test_id == "g":
            return dt.g_test(z)
        if test_id == "ks_discrete":
            return dt.ks_discrete_test(z, tables["ks_discrete"])
        if test_id == "klp":
            return dt.klp_nb_test(z)
        if test_id == "joint":
            return it.joint_dist_test(z)
        if test_id == "autocorr":
            return it.lag1_autocorr_test(z, tables["autocorr"])
        bits = vbits if test_id.endswith("_ud") else zbits
        base = test_id[:-3] if test_id.endswith("_ud") else test_id
        if bits is None or len(bits) == 0:
            return skipped_outcome(test_id, 0, "no bits at this level")
        if base == "runs":
            res = it.wald_wolfowitz_runs(bits)
        elif base == "larsen":
            res = it.larsen_test(bits, tables["larsen"])
        elif base == "obrien76":
            res = it.obrien76_test(bits, tables["obrien76"])
        elif base == "obrien85":
            res = it.obrien_dyck85_test(bits)
        else:
            raise ValueError(f"unknown test id {test_id!r}")
        return replace(res, test_id=test_id)
    except ValueError as exc:
        # degenerate samples (e.g. constant counts) skip rather than abort
        return skipped_outcome(test_id, n, f"degenerate: {exc}")


@dataclass
class StudyReport:
    label: str
    config: dict
    n_paths: int
    levels: list
    cells: dict  # (test_id, level) -> [n_rejected, n_tested]
    test_order: tuple

    def cell(self, test_id: str, level: int) -> tuple[int, int]:
        rej, tested = self.cells.get((test_id, level), (0, 0))
        return rej, tested

    def rejection_rate(self, test_id: str, level: int,
                       of_tested: bool = False) -> float | None:
        rej, tested = self.cell(test_id, level)
        if of_tested:
            return rej / tested if tested else None
        return rej / self.n_paths


def _simulate_series(cfg: StudyConfig, path_index: int) -> TickSeries:
    spec = cfg.process
    if spec is None or cfg.delta is None:
        raise ValueError("simulation studies need a process spec and delta")
    extra = 0
    if spec.kind == "fbm":
        # self-similar scaling gives the crossing-duration order of
        # magnitude; the margin absorbs the H-dependent constant
        horizon = cfg.fbm_horizon
        if horizon is None:
            per_crossing = (cfg.delta**2 / spec.sigma2) ** (1.0 / (2 * spec.hurst))
            horizon = 2.2 * (cfg.n_crossings + extra) * per_crossing
        n_steps = int(math.ceil(horizon / cfg.fbm_grid))
        return simulate_fbm_path(spec.hurst, spec.sigma2, n_steps,
                                 cfg.fbm_grid, seed=[cfg.seed, path_index])
    values = simulate_crossings_batch(
        spec, cfg.delta, cfg.n_crossings, 1, [cfg.seed, path_index],
        milstein_step=cfg.milstein_step,
    )[0]
    times = np.arange(values.size, dtype=np.float64)
    return TickSeries(times=times, values=values, meta=f"{spec.kind} chain")


def tree_for_series(cfg: StudyConfig, series: TickSeries,
                    delta: float) -> CrossingTree:
    """Anchor the lattice per the configured policy and build the tree.

    The latticed policy centres the lattice on the series: the median of
    the crossing values of a scratch tree anchored at 0, snapped to the
    nearest multiple of delta.  Snapping keeps every level-0 crossing of
    exact-chain inputs (a fractional offset would merge the chain's
    one-step excursions into single passages), and a location estimate
    tight to within about one crossing size is what preserves the power
    of the coarse levels against mean-reverting alternatives.
    """
    if cfg.delta0_policy == "zero":
        origin, start_after = 0.0, None
    elif cfg.delta0_policy == "first":
        origin, start_after = float(series.values[0]), None
    else:
        origin, start_after = lattice_median_anchor(series, delta), None
    return build_tree(series.path(), delta, origin, start_after)


def lattice_median_anchor(series: TickSeries, delta: float) -> float:
    """Median crossing value of the 0-anchored lattice, snapped onto it."""
    _, hits = lattice_events(series.times, series.values, delta, 0.0)
    if hits.size < 2:
        raise TreeError("no crossings to anchor the lattice on")
    return round(float(np.median(hits[1:]))) * delta


def run_study(cfg: StudyConfig, label: str) -> StudyReport:
    """Simulate n_paths crossing records, build trees, run the roster, and
    tally rejections per test and level."""
    tables = _tables_for(cfg)
    cells: dict = {}
    max_level_seen = 0
    for i in range(cfg.n_paths):
        try:
            series = _simulate_series(cfg, i)
            tree = tree_for_series(cfg, series, cfg.delta)
        except (TreeError, ValueError) as exc:
            raise RuntimeError(f"path {i}: {exc}") from exc
        outcomes = apply_tests_to_tree(tree, cfg.tests, tables)
        max_level_seen = max(max_level_seen, tree.max_level)
        for level, row in outcomes.items():
            for test_id, res in row.items():
                cell = cells.setdefault((test_id, level), [0, 0])
                if res.applied:
                    cell[1] += 1
                    cell[0] += bool(res.reject_at_5pct)
    return StudyReport(
        label=label,
        config=_config_summary(cfg),
        n_paths=cfg.n_paths,
        levels=list(range(1, max_level_seen + 1)),
        cells=cells,
        test_order=cfg.tests,
    )


def run_type1_study(cfg: StudyConfig) -> StudyReport:
    return run_study(cfg, label="type1")


def run_power_study(cfg: StudyConfig) -> StudyReport:
    return run_study(cfg, label="power")


# ---------------------------------------------------------------------------
# dataset analysis
# ---------------------------------------------------------------------------

@dataclass
class LevelReport:
    label: str
    config: dict
    delta: float
    origin: float
    rows: list  # per level: counts, temporal scale, outcomes, diagnostics
    test_order: tuple


def analyze_series(series: TickSeries, cfg: StudyConfig,
                   label: str = "dataset") -> LevelReport:
    if cfg.log_transform:
        series = log_transform(series)
    delta = cfg.delta if cfg.delta is not None else select_base_scale(series)
    tree = tree_for_series(cfg, series, delta)
    tables = _tables_for(cfg)
    outcomes = apply_tests_to_tree(tree, cfg.tests, tables)
    shares = {d["level"]: d for d in multiple_crossing_shares(tree, series)}
    rows = []
    for level in range(tree.max_level + 1):
        stats_ = level_stats(tree, level)
        row = {
            "level": level,
            "n_z": stats_["n_z"],
            "n_v": stats_["n_v"],
            "mean_duration_prev_level": stats_["mean_duration_prev_level"],
            "ge2_pct": shares[level]["ge2_pct"],
            "ge4_pct": shares[level]["ge4_pct"],
            "outcomes": outcomes.get(level, {}),
        }
        if cfg.chi2_splits >= 2 and level >= 1:
            row["chi2_split"] = dt.chi2_stationarity(
                ZSample(tree.counts[level], level=level), cfg.chi2_splits
            )
        rows.append(row)
    return LevelReport(
        label=label,
        config=_config_summary(cfg),
        delta=delta,
        origin=tree.origin,
        rows=rows,
        test_order=cfg.tests,
    )


def analyze_dataset(path: str, cfg: StudyConfig) -> LevelReport:
    series = load_ticks(path)
    return analyze_series(series, cfg, label=os.path.basename(path))


# ---------------------------------------------------------------------------
# quadratic-variation study
# ---------------------------------------------------------------------------

@dataclass
class QvStudyReport:
    label: str
    config: dict
    n_paths: int
    rows: list  # per c: rejection rates and mean tested count


def _qv_paths(cfg: StudyConfig) -> np.ndarray:
    n, h = cfg.qv_n_points, cfg.qv_spacing
    out = np.empty((cfg.n_paths, n + 1))
    for i in range(cfg.n_paths):
        rng = np.random.default_rng([cfg.seed, i])
        bm = np.concatenate([[0.0],
                             np.cumsum(rng.standard_normal(n) * math.sqrt(h))])
        if cfg.qv_process == "bm":
            out[i] = bm
        elif cfg.qv_process == "expbm":
            t = h * np.arange(n + 1)
            out[i] = np.exp(bm - 0.5 * t)
        else:
            raise ValueError(f"unknown qv process {cfg.qv_process!r}")
    return out


def run_qv_study(cfg: StudyConfig, c_values) -> QvStudyReport:
    """Rejection rates of the KS / CvM / SM baseline across the increment
    multiplier sweep; reported per c, never auto-selected."""
    c_values = list(c_values)
    if not c_values:
        raise ValueError("need at least one c value")
    paths = _qv_paths(cfg)
    times = cfg.qv_spacing * np.arange(cfg.qv_n_points + 1)
    series_all = [TickSeries(times=times, values=row, meta="qv-study")
                  for row in paths]
    qv_all = [estimate_qv(s) for s in series_all]
    rows = []
    for c in c_values:
        counts = {"ks": [0, 0], "cvm": [0, 0], "sm": [0, 0]}
        tested_sizes = []
        for s, qv in zip(series_all, qv_all):
            try:
                inc = select_increment(qv, c)
                norm = time_change_increments(s, qv, inc)
            except ValueError:
                continue
            res = normal_gof_tests(norm, drop_last=cfg.qv_drop_last)
            tested_sizes.append(res["sm"].n_used)
            for key, outcome in res.items():
                if outcome.applied:
                    counts[key][1] += 1
                    counts[key][0] += bool(outcome.reject_at_5pct)
        rows.append({
            "c": float(c),
            "mean_n_tested": float(np.mean(tested_sizes)) if tested_sizes else 0.0,
            **{key: tuple(val) for key, val in counts.items()},
        })
    return QvStudyReport(label="qv", config=_config_summary(cfg),
                         n_paths=cfg.n_paths, rows=rows)


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------

def _config_summary(cfg: StudyConfig) -> dict:
    d = {}
    for key, val in vars(cfg).items():
        if isinstance(val, ProcessSpec):
            d[key] = {k: v for k, v in vars(val).items()
                      if v is not None and v != 0.0 or k == "kind"}
        else:
            d[key] = val
    return d


def _fmt_cell(rej: int, tested: int, n_paths: int) -> str:
    if tested == 0:
        return "--"
    pct_all = 100.0 * rej / n_paths
    pct_tested = 100.0 * rej / tested
    return f"{pct_all:5.1f} ({pct_tested:5.1f}; {tested})"


def render_report(report, fmt: str = "text", out_path: str | None = None) -> str:
    """Serialise a study / level / qv report deterministically.

    Text mirrors the percent-of-all (percent-of-tested; number-tested)
    table cells; CSV is long-form and parses back to identical values; JSON
    is sorted and indented.
    """
    if fmt not in ("text", "csv", "json"):
        raise ValueError(f"unknown format {fmt!r}")
    if isinstance(report, StudyReport):
        text = _render_study(report, fmt)
    elif isinstance(report, LevelReport):
        text = _render_levels(report, fmt)
    elif isinstance(report, QvStudyReport):
        text = _render_qv(report, fmt)
    elif isinstance(report, CalibrationResult):
        text = _render_calibration(report, fmt)
    else:
        raise TypeError(f"cannot render {type(report).__name__}")
    if out_path:
        with open(out_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    return text


def _render_study(r: StudyReport, fmt: str) -> str:
    if fmt == "csv":
        lines = ["test,level,rejected,tested,n_paths"]
        for test_id in r.test_order:
            for level in r.levels:
                rej, tested = r.cell(test_id, level)
                lines.append(f"{test_id},{level},{rej},{tested},{r.n_paths}")
        return "\n".join(lines) + "\n"
    if fmt == "json":
        payload = {
            "label": r.label,
            "config": r.config,
            "n_paths": r.n_paths,
            "cells": {
                f"{t}@{l}": list(r.cell(t, l))
                for t in r.test_order for l in r.levels
            },
        }
        return json.dumps(payload, sort_keys=True, indent=1, default=str) + "\n"
    width = max(len(t) for t in r.test_order) + 2
    head = f"{r.label}: % of all (% of tested; # tested), {r.n_paths} paths"
    lines = [head, ""]
    lines.append(" " * width + "".join(f"level {l:<18}" for l in r.levels))
    for test_id in r.test_order:
        cells = "".join(
            f"{_fmt_cell(*r.cell(test_id, l), r.n_paths):<24}" for l in r.levels
        )
        lines.append(f"{test_id:<{width}}{cells}")
    half = 196.0 * math.sqrt(0.05 * 0.95 / r.n_paths)
    lines.append("")
    lines.append(f"binomial 95% half-width at a 5% rate: +-{half:.1f} points")
    return "\n".join(lines) + "\n"


def _fmt_outcome(res: TestOutcome | None) -> str:
    if res is None or not res.applied:
        return "--"
    flag = "*" if res.reject_at_5pct else " "
    if res.p_value is not None:
        return f"{res.p_value:.3f}{flag}"
    return ("<0.05*" if res.reject_at_5pct else ">0.05 ")


def _render_levels(r: LevelReport, fmt: str) -> str:
    levels = [row["level"] for row in r.rows]
    if fmt == "csv":
        lines = ["level,n_subx,n_ud,mean_prev_duration,ge2_pct,ge4_pct,"
                 "test,p_value,statistic,reject,skipped"]
        for row in r.rows:
            base = (f"{row['level']},{row['n_z'] if row['n_z'] is not None else ''},"
                    f"{row['n_v']},"
                    f"{'' if row['mean_duration_prev_level'] is None else repr(row['mean_duration_prev_level'])},"
                    f"{row['ge2_pct']!r},{row['ge4_pct']!r}")
            if not row["outcomes"]:
                lines.append(base + ",,,,,")
            for test_id in r.test_order:
                res = row["outcomes"].get(test_id)
                if res is None:
                    continue
                lines.append(
                    base + f",{test_id},"
                    f"{'' if res.p_value is None else repr(res.p_value)},"
                    f"{'' if res.statistic is None else repr(res.statistic)},"
                    f"{'' if res.reject_at_5pct is None else int(res.reject_at_5pct)},"
                    f"{res.skipped or ''}"
                )
        return "\n".join(lines) + "\n"
    if fmt == "json":
        payload = {
            "label": r.label, "config": r.config, "delta": r.delta,
            "origin": r.origin,
            "levels": [
                {
                    **{k: row[k] for k in ("level", "n_z", "n_v",
                                           "mean_duration_prev_level",
                                           "ge2_pct", "ge4_pct")},
                    "outcomes": {
                        t: vars(res) for t, res in sorted(row["outcomes"].items())
                    },
                }
                for row in r.rows
            ],
        }
        return json.dumps(payload, sort_keys=True, indent=1, default=str) + "\n"
    width = max(len(t) for t in r.test_order) + 2
    lines = [f"{r.label}: delta={r.delta!r} origin={r.origin!r}", ""]
    lines.append(" " * width + "".join(f"level {l:<10}" for l in levels))
    for name, key in (("# SubX", "n_z"), ("# UD pairs", "n_v")):
        vals = "".join(
            f"{'' if row[key] is None else row[key]:<16}" for row in r.rows
        )
        lines.append(f"{name:<{width}}{vals}")
    lines.append(
        f"{'mean xing len':<{width}}"
        + "".join(_fmt_scale(row["mean_duration_prev_level"]) for row in r.rows)
    )
    lines.append(
        f"{'>=2 xings %':<{width}}"
        + "".join(f"{row['ge2_pct']:<16.1f}" for row in r.rows)
    )
    lines.append(
        f"{'>=4 xings %':<{width}}"
        + "".join(f"{row['ge4_pct']:<16.1f}" for row in r.rows)
    )
    for test_id in r.test_order:
        cells = "".join(
            f"{_fmt_outcome(row['outcomes'].get(test_id)):<16}" for row in r.rows
        )
        lines.append(f"{test_id:<{width}}{cells}")
    return "\n".join(lines) + "\n"


def _fmt_scale(val) -> str:
    if val is None:
        return f"{'--':<16}"
    return f"{val:<16.4g}"


def _render_qv(r: QvStudyReport, fmt: str) -> str:
    if fmt == "csv":
        lines = ["c,mean_n_tested,ks_rej,ks_tested,cvm_rej,cvm_tested,"
                 "sm_rej,sm_tested,n_paths"]
        for row in r.rows:
            lines.append(
                f"{row['c']!r},{row['mean_n_tested']!r},"
                f"{row['ks'][0]},{row['ks'][1]},{row['cvm'][0]},{row['cvm'][1]},"
                f"{row['sm'][0]},{row['sm'][1]},{r.n_paths}"
            )
        return "\n".join(lines) + "\n"
    if fmt == "json":
        return json.dumps(
            {"label": r.label, "config": r.config, "n_paths": r.n_paths,
             "rows": r.rows},
            sort_keys=True, indent=1, default=str) + "\n"
    lines = [f"qv study: {r.n_paths} paths", "",
             f"{'c':>8} {'mean N':>8} {'KS %':>8} {'CvM %':>8} {'SM %':>8}"]
    for row in r.rows:
        def pct(key):
            rej, tested = row[key]
            return 100.0 * rej / tested if tested else float("nan")
        lines.append(
            f"{row['c']:>8.4g} {row['mean_n_tested']:>8.1f} "
            f"{pct('ks'):>8.2f} {pct('cvm'):>8.2f} {pct('sm'):>8.2f}"
        )
    return "\n".join(lines) + "\n"


def _render_calibration(r: CalibrationResult, fmt: str) -> str:
    payload = {k: v for k, v in vars(r).items()}
    if fmt == "json":
        return json.dumps(payload, sort_keys=True, indent=1, default=str) + "\n"
    if fmt == "csv":
        keys = sorted(payload)
        return (
            ",".join(keys) + "\n"
            + ",".join(json.dumps(payload[k], default=str) for k in keys) + "\n"
        )
    lines = [f"calibration: {r.kind} {r.params}, "
             f"target {r.n_crossings} crossings in t0={r.t0}"]
    if r.deltas_by_step:
        for m, d in sorted(r.deltas_by_step.items()):
            lines.append(f"  step 1e-{m}: delta = {d!r}")
    if r.fit_slope is not None:
        lines.append(f"  fit: slope={r.fit_slope!r} intercept={r.fit_intercept!r} "
                     f"rms={r.fit_rms!r}")
    lines.append(f"  delta = {r.delta!r}")
    if r.achieved_mean_window is not None:
        lines.append(f"  achieved window {r.achieved_mean_window!r} "
                     f"+- {r.achieved_ci_half!r}")
    for w in r.warnings:
        lines.append(f"  warning: {w}")
    return "\n".join(lines) + "\n"
