"""Command-line interface: simulate, compare, impute, generate, report."""

from __future__ import annotations

import argparse
import os
import sys

from .core import format_timestamp, parse_timestamp


def _add_simulate(sub):
    p = sub.add_parser("simulate", help="run replicated simulations for one policy")
    p.add_argument("--config", required=True, help="run configuration YAML")
    p.add_argument("--runs", type=int, default=None, help="override number of runs")
    p.add_argument("--out", default=None, help="override output directory")
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=_cmd_simulate)


def _cmd_simulate(args):
    from .reporting import run_replications
    table = run_replications(args.config, out_root=args.out, runs=args.runs,
                             workers=args.workers)
    for row in table.rows():
        print(f"{row['statistic']:42s} {row['mean']:>10} "
              f"[{row['p2_5']}-{row['p97_5']}]")
    return 0


def _add_compare(sub):
    p = sub.add_parser("compare", help="paired comparison of two policies")
    p.add_argument("--config-a", required=True)
    p.add_argument("--config-b", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--runs", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=_cmd_compare)


def _cmd_compare(args):
    from .reporting import compare_policies
    rows = compare_policies(args.config_a, args.config_b, args.out,
                            runs=args.runs, workers=args.workers)
    for row in rows:
        print(f"{row['statistic']:42s} {row['mean_a']:>10} -> {row['mean_b']:>10} "
              f"diff {row['mean_diff']:>9} p={row['p_value']:<10} {row['stars']}")
    return 0


def _add_impute(sub):
    p = sub.add_parser(
        "impute",
        help="complete censored status streams so every registration ends in D/R")
    p.add_argument("--config", required=True, help="run configuration YAML "
                   "(provides the registration/status inputs)")
    p.add_argument("--cases", required=True, help="case file with linear "
                   "predictors and match attributes")
    p.add_argument("--out", required=True)
    p.add_argument("--num-files", type=int, default=1,
                   help="number of completed status files (one per seed)")
    p.add_argument("--master-seed", type=int, default=1)
    p.set_defaults(func=_cmd_impute)


def _cmd_impute(args):
    import csv

    from .config import load_run_config
    from .imputation import complete_stream
    from .ingestion import load_cases, load_registrations, load_statuses
    from .rng import run_seed

    rc = load_run_config(args.config)
    registrations = load_registrations(rc.registrations_path)
    statuses = load_statuses(rc.statuses_path, registrations)
    cases = load_cases(args.cases)
    listed_at = {rid: reg.listed_at for rid, reg in registrations.items()}
    os.makedirs(args.out, exist_ok=True)
    columns = ["registration_id", "at", "kind", "creatinine", "bilirubin", "inr",
               "dialysis", "sodium", "exception_id", "exception_action", "urgency",
               "exit_reason", "max_donor_age", "accept_dcd", "accept_split",
               "accept_rescue", "min_donor_weight", "max_donor_weight"]
    for k in range(args.num_files):
        seed = run_seed(args.master_seed, k)
        completed, report = complete_stream(listed_at, statuses, cases, seed=seed)
        path = os.path.join(args.out, f"statuses_completed_{k:03d}.csv")
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
            w.writeheader()
            for rid in sorted(completed):
                for s in completed[rid]:
                    prof = s.profile
                    w.writerow({
                        "registration_id": rid,
                        "at": format_timestamp(s.at),
                        "kind": s.kind,
                        "creatinine": s.creatinine if s.creatinine is not None else "",
                        "bilirubin": s.bilirubin if s.bilirubin is not None else "",
                        "inr": s.inr if s.inr is not None else "",
                        "dialysis": int(s.dialysis),
                        "sodium": s.sodium if s.sodium is not None else "",
                        "exception_id": s.exception_id or "",
                        "exception_action": s.exception_action or "",
                        "urgency": s.urgency or "",
                        "exit_reason": s.exit_reason or "",
                        "max_donor_age": "" if prof is None or prof.max_donor_age is None
                                         else prof.max_donor_age,
                        "accept_dcd": "" if prof is None else int(prof.accept_dcd),
                        "accept_split": "" if prof is None else int(prof.accept_split),
                        "accept_rescue": "" if prof is None else int(prof.accept_rescue_offer),
                        "min_donor_weight": "" if prof is None or prof.min_donor_weight is None
                                            else prof.min_donor_weight,
                        "max_donor_weight": "" if prof is None or prof.max_donor_weight is None
                                            else prof.max_donor_weight,
                    })
        print(f"{path}: imputed {report.imputed} tails "
              f"({report.chained} chained, {len(report.unmatchable)} unmatchable)")
    return 0


def _add_generate(sub):
    p = sub.add_parser("generate", help="write a synthetic input bundle")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--start", default="2016-01-01")
    p.add_argument("--end", default="2017-12-31")
    p.add_argument("--donor-rate", type=float, default=1.4,
                   help="donor arrivals per day")
    p.add_argument("--candidate-rate", type=float, default=2.2,
                   help="candidate listings per day")
    p.add_argument("--censor-fraction", type=float, default=0.0,
                   help="fraction of streams cut short (imputation cases)")
    p.add_argument("--pool-size", type=int, default=250)
    p.set_defaults(func=_cmd_generate)


def _cmd_generate(args):
    from .generator import GeneratorConfig, generate_bundle
    cfg = GeneratorConfig(
        window_start=args.start, window_end=args.end,
        donor_rate_per_day=args.donor_rate,
        candidate_rate_per_day=args.candidate_rate,
        censor_fraction=args.censor_fraction,
        pool_size=args.pool_size)
    info = generate_bundle(cfg, seed=args.seed, out_dir=args.out)
    print(f"wrote {info['donors']} donors / {info['registrations']} registrations "
          f"to {args.out}")
    return 0


def _add_report(sub):
    p = sub.add_parser("report", help="recompute the summary from raw run outputs")
    p.add_argument("--runs-dir", required=True,
                   help="directory containing run_*/ output folders")
    p.set_defaults(func=_cmd_report)


def _cmd_report(args):
    from .reporting import _write_csv, run_statistics, summarize
    run_dirs = sorted(d for d in os.listdir(args.runs_dir)
                      if d.startswith("run_")
                      and os.path.isdir(os.path.join(args.runs_dir, d)))
    if not run_dirs:
        print(f"no run_*/ directories under {args.runs_dir}", file=sys.stderr)
        return 1
    per_run = [run_statistics(os.path.join(args.runs_dir, d)) for d in run_dirs]
    table = summarize(per_run)
    _write_csv(os.path.join(args.runs_dir, "summary.csv"),
               ["statistic", "mean", "p2_5", "p97_5"], table.rows())
    for row in table.rows():
        print(f"{row['statistic']:42s} {row['mean']:>10} "
              f"[{row['p2_5']}-{row['p97_5']}]")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="elasim",
        description="Discrete-event simulator of Eurotransplant-style liver allocation")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_simulate(sub)
    _add_compare(sub)
    _add_impute(sub)
    _add_generate(sub)
    _add_report(sub)
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
