"""Replicated runs, summary statistics, and paired policy comparison.

Raw per-run outputs (transplants, discards, final states, final ledger)
are written to disk; every summary statistic is recomputed from those
files alone. Replications derive their seeds from (master seed, run
index), and policy comparisons rely on the shared named RNG streams to
run paired t-tests on per-run differences.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import stats as scipy_stats

from . import __version__
from .config import ConfigError, RunConfig, load_run_config
from .engine import SimulationOutput, initialize
from .ingestion import load_bundle, load_pool
from .rng import RngStreams

TRANSPLANT_COLUMNS = [
    "donor_id", "at", "registration_id", "patient_id", "donor_country",
    "donor_center", "donor_blood_group", "donor_age", "donor_dcd",
    "recipient_country", "recipient_center", "recipient_blood_group", "tier",
    "mechanism", "geography", "rank", "match_meld", "lab_meld",
    "exception_meld", "exception_type", "urgency", "sex", "pediatric", "age",
    "disease_group", "is_retransplant", "synthetic_relisting",
    "via_obligation", "rescue", "forced", "split", "acceptance_p",
    "failure_days", "relist_days", "relist_scheduled",
]
DISCARD_COLUMNS = ["donor_id", "at", "donor_country", "donor_blood_group",
                   "counted_offers", "max_offers", "rescue_triggered", "reason"]
FINAL_STATE_COLUMNS = ["registration_id", "patient_id", "country", "center",
                       "blood_group", "sex", "listed_at", "is_retransplant",
                       "synthetic", "disposition", "exit_at", "urgency",
                       "lab_meld", "match_meld"]
LEDGER_COLUMNS = ["blood_group", "debtor", "creditor", "created_at"]

MELD_BANDS = [("lt6", 0, 5), ("6_10", 6, 10), ("11_20", 11, 20),
              ("21_30", 21, 30), ("31_40", 31, 40), ("gt40", 41, 10_000)]


def _write_csv(path: str, columns: list[str], rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n",
                           extrasaction="ignore")
        w.writeheader()
        for row in rows:
            w.writerow(row)


def write_run_outputs(out: SimulationOutput, run_dir: str, manifest: dict) -> None:
    os.makedirs(run_dir, exist_ok=True)
    _write_csv(os.path.join(run_dir, "transplants.csv"), TRANSPLANT_COLUMNS,
               out.transplants)
    _write_csv(os.path.join(run_dir, "discards.csv"), DISCARD_COLUMNS, out.discards)
    _write_csv(os.path.join(run_dir, "final_states.csv"), FINAL_STATE_COLUMNS,
               out.final_states)
    _write_csv(os.path.join(run_dir, "obligations_final.csv"), LEDGER_COLUMNS,
               out.ledger_rows)
    with open(os.path.join(run_dir, "manifest.json"), "w") as fh:
        json.dump(dict(manifest, counters=out.counters), fh, sort_keys=True, indent=1)
        fh.write("\n")


def read_rows(path: str) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _flag(value) -> bool:
    return str(value) in ("1", "True", "true")


def meld_band(value) -> str:
    if value in ("", None):
        return "unknown"
    v = int(float(value))
    for name, lo, hi in MELD_BANDS:
        if lo <= v <= hi:
            return name
    return "unknown"


def compute_statistics(transplants: list[dict], discards: list[dict],
                       final_states: list[dict]) -> dict[str, float]:
    """Summary statistics of one run, from raw output rows only."""
    s: dict[str, float] = {}

    def bump(key, n=1):
        s[key] = s.get(key, 0) + n

    bump("transplants_total", 0)
    bump("discards_total", 0)
    for row in transplants:
        bump("transplants_total")
        bump(f"transplants_country_{row['recipient_country']}")
        bump(f"transplants_mechanism_{row['mechanism']}")
        bump(f"transplants_geography_{row['geography']}")
        bump(f"transplants_sex_{row['sex']}")
        bump(f"transplants_exception_{row['exception_type']}")
        if _flag(row["pediatric"]):
            bump("transplants_pediatric")
        if row["tier"] in ("HU", "ACO"):
            bump("transplants_matchmeld_hu_aco")
            bump("transplants_labmeld_hu_aco")
        else:
            bump(f"transplants_matchmeld_{meld_band(row['match_meld'])}")
            bump(f"transplants_labmeld_{meld_band(row['lab_meld'])}")
        if _flag(row["split"]):
            bump("split_transplants")
        if _flag(row["synthetic_relisting"]):
            bump("transplants_synthetic_relisting")
    split_donors = {row["donor_id"] for row in transplants
                    if _flag(row["split"])}
    s["livers_split"] = len(split_donors)
    for row in discards:
        bump("discards_total")
    for row in final_states:
        disposition = row["disposition"]
        if disposition == "death":
            bump("deaths_total")
            bump(f"deaths_country_{row['country']}")
            if row["urgency"] in ("HU", "ACO"):
                bump("deaths_hu_aco")
            else:
                bump(f"deaths_labmeld_{meld_band(row['lab_meld'])}")
        elif disposition == "removed":
            bump("removals_total")
        elif disposition == "waiting":
            bump("final_waitlist")
        if _flag(row["synthetic"]):
            bump("synthetic_relistings")
    for key in ("deaths_total", "removals_total", "final_waitlist",
                "split_transplants", "synthetic_relistings"):
        s.setdefault(key, 0)
    return s


def run_statistics(run_dir: str) -> dict[str, float]:
    return compute_statistics(
        read_rows(os.path.join(run_dir, "transplants.csv")),
        read_rows(os.path.join(run_dir, "discards.csv")),
        read_rows(os.path.join(run_dir, "final_states.csv")))


# ---------------------------------------------------------------------------
# Replicated runs


_WORKER: dict = {}


def _init_worker(config_path: str):
    rc = load_run_config(config_path)
    bundle = load_bundle(rc.donors_path, rc.registrations_path, rc.statuses_path,
                         (rc.window_start, rc.window_end), rc.obligations_path)
    pool = None
    if rc.pool_registrations_path:
        pool = load_pool(rc.pool_registrations_path, rc.pool_statuses_path)
    _WORKER["rc"] = rc
    _WORKER["bundle"] = bundle
    _WORKER["pool"] = pool


def _run_one(args) -> tuple[int, dict]:
    run_index, out_root = args
    rc: RunConfig = _WORKER["rc"]
    sim = initialize(_WORKER["bundle"], rc.parameters,
                     RngStreams(rc.master_seed, run_index),
                     force_placement=rc.force_placement,
                     allow_split=rc.allow_split, pool=_WORKER["pool"])
    out = sim.run()
    run_dir = os.path.join(out_root, f"run_{run_index:03d}")
    write_run_outputs(out, run_dir, {
        "config_sha256": rc.config_sha256,
        "master_seed": rc.master_seed,
        "run_index": run_index,
        "elasim_version": __version__,
    })
    return run_index, compute_statistics(out.transplants, out.discards,
                                         out.final_states)


@dataclass
class SummaryTable:
    statistics: dict[str, dict]  # name -> {mean, p2_5, p97_5}
    per_run: list[dict[str, float]]

    def rows(self) -> list[dict]:
        return [{"statistic": k, **v} for k, v in sorted(self.statistics.items())]


def summarize(per_run: list[dict[str, float]]) -> SummaryTable:
    keys = sorted({k for stats in per_run for k in stats})
    table = {}
    for k in keys:
        values = np.array([stats.get(k, 0.0) for stats in per_run], dtype=float)
        table[k] = {
            "mean": round(float(values.mean()), 4),
            "p2_5": round(float(np.percentile(values, 2.5)), 4),
            "p97_5": round(float(np.percentile(values, 97.5)), 4),
        }
    return SummaryTable(table, per_run)


def run_replications(config_path: str, out_root: str | None = None,
                     runs: int | None = None,
                     workers: int | None = None) -> SummaryTable:
    """Simulate `runs` times with seeds derived from (master seed, index)."""
    rc = load_run_config(config_path)
    runs = rc.runs if runs is None else runs
    out_root = rc.output_dir if out_root is None else out_root
    if workers is None:
        workers = rc.workers or min(os.cpu_count() or 1, runs)
    os.makedirs(out_root, exist_ok=True)
    jobs = [(r, out_root) for r in range(runs)]
    results: dict[int, dict] = {}
    if workers > 1 and runs > 1:
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker,
                                 initargs=(config_path,)) as pool:
            for run_index, stats in pool.map(_run_one, jobs):
                results[run_index] = stats
    else:
        _init_worker(config_path)
        for job in jobs:
            run_index, stats = _run_one(job)
            results[run_index] = stats
    per_run = [results[r] for r in range(runs)]
    table = summarize(per_run)
    _write_csv(os.path.join(out_root, "summary.csv"),
               ["statistic", "mean", "p2_5", "p97_5"], table.rows())
    return table


# ---------------------------------------------------------------------------
# Paired policy comparison (common random numbers)


def paired_t(diffs: list[float]) -> tuple[float, float]:
    """Paired t-statistic and two-sided p-value (t distribution, n-1 df)."""
    n = len(diffs)
    mean = sum(diffs) / n
    if n < 2:
        return 0.0, 1.0
    var = sum((d - mean) ** 2 for d in diffs) / (n - 1)
    if var == 0.0:
        return (0.0, 1.0) if mean == 0.0 else (math.inf, 0.0)
    t = mean / math.sqrt(var / n)
    p = 2.0 * float(scipy_stats.t.sf(abs(t), df=n - 1))
    return t, p


def significance_stars(p: float) -> str:
    if p < 0.001:
        return "***"
    if p < 0.01:
        return "**"
    if p < 0.05:
        return "*"
    return ""


def _check_comparable(a: RunConfig, b: RunConfig):
    for attr in ("window_start", "window_end", "runs", "master_seed",
                 "donors_path", "registrations_path", "statuses_path"):
        if getattr(a, attr) != getattr(b, attr):
            raise ConfigError(
                f"policies not comparable: {attr} differs "
                f"({getattr(a, attr)!r} vs {getattr(b, attr)!r})")


def compare_policies(config_a: str, config_b: str, out_root: str,
                     runs: int | None = None,
                     workers: int | None = None) -> list[dict]:
    """Run both policies with common random numbers and pair the runs.

    Returns one row per statistic: means under both policies, the mean
    paired difference, the t-statistic, p-value and significance stars.
    """
    rc_a = load_run_config(config_a)
    rc_b = load_run_config(config_b)
    _check_comparable(rc_a, rc_b)
    table_a = run_replications(config_a, os.path.join(out_root, "policy_a"),
                               runs=runs, workers=workers)
    table_b = run_replications(config_b, os.path.join(out_root, "policy_b"),
                               runs=runs, workers=workers)
    keys = sorted(set(table_a.statistics) | set(table_b.statistics))
    rows = []
    for k in keys:
        a_vals = [stats.get(k, 0.0) for stats in table_a.per_run]
        b_vals = [stats.get(k, 0.0) for stats in table_b.per_run]
        diffs = [b - a for a, b in zip(a_vals, b_vals)]
        t, p = paired_t(diffs)
        rows.append({
            "statistic": k,
            "mean_a": round(sum(a_vals) / len(a_vals), 4),
            "mean_b": round(sum(b_vals) / len(b_vals), 4),
            "mean_diff": round(sum(diffs) / len(diffs), 4),
            "t_stat": round(t, 6) if math.isfinite(t) else t,
            "p_value": round(p, 8),
            "stars": significance_stars(p),
        })
    _write_csv(os.path.join(out_root, "comparison.csv"),
               ["statistic", "mean_a", "mean_b", "mean_diff", "t_stat",
                "p_value", "stars"], rows)
    return rows
