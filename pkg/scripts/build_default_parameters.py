#!/usr/bin/env python3
"""Regenerate the default parameter files shipped in elasim/data.

Coefficient values here are plausible placeholders with the right structure;
registry-fitted tables drop into the same schemas.
"""

import csv
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

DATA = os.path.join(os.path.dirname(__file__), "..", "src", "elasim", "data")

COUNTRIES = ["AT", "BE", "DE", "HR", "HU", "LU", "NL", "SI", "XX"]

SCORING = """\
formulas:
  unos:
    intercept: 0.643
    scale: 10.0
    coefficients: {creatinine: 0.957, bilirubin: 0.378, inr: 1.120}
    caps:
      creatinine: [1.0, 4.0]
      bilirubin: [1.0, null]
      inr: [1.0, null]
    dialysis_creatinine: 4.0
    clamp: [6, 40]
  remeld_na:
    intercept: 7.85
    scale: 1.0
    coefficients: {creatinine: 9.03, bilirubin: 2.97, inr: 9.52}
    caps:
      creatinine: [1.0, null]
      bilirubin: [1.0, null]
      inr: [1.0, null]
    dialysis_creatinine: null
    sodium:
      reference: 138.6
      revna_max: 13.6
      coefficient: 0.392
      creatinine_interaction: -0.351
    clamp: [1, 36]
curves:
  unos:
    base: 0.98037
    slope: 0.17557
    score_range: [6, 40]
  remeld_na:
    base: 0.9745
    slope: 0.2216
    score_range: [1, 36]
blood_groups:
  elective:
    O: [O]
    A: [A, AB]
    B: [B]
    AB: [AB]
  hu_aco:
    O: [O, A, B, AB]
    A: [A, AB]
    B: [B, AB]
    AB: [AB]
"""


def write_scoring():
    with open(os.path.join(DATA, "scoring.yaml"), "w") as fh:
        fh.write(SCORING)


def write_exceptions():
    rows = []
    for c in COUNTRIES:
        hcc_initial = 0.15 if c == "BE" else 0.10
        rows += [
            (f"SE-HCC-{c}", c, hcc_initial, 0.10, 1.0, "", 0, 1),
            (f"SE-PSC-{c}", c, 0.10, 0.10, 1.0, "", 0, 1),
            (f"SE-PLD-{c}", c, 0.10, 0.05, 1.0, "", 0, 1),
            (f"SE-HAT-{c}", c, 0.15, 0.10, 1.0, "", 0, 1),
            (f"SE-AMYL-{c}", c, 0.10, 0.05, 0.60, "", 1, 1),
            (f"NSE-{c}", c, 0.10, 0.10, 1.0, "", 0, 0),
            (f"PED-{c}", c, 0.15, 0.10, 1.0, 16.0 if c == "DE" else 18.0, 0, 1),
        ]
    with open(os.path.join(DATA, "exceptions.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["exception_id", "country", "initial_equivalent", "increment_90d",
                    "max_equivalent", "max_age", "is_bonus", "auto_recertified"])
        w.writerows(rows)


def write_acceptance():
    rows = []

    def add(stage, tc, ac, cov, level, coef):
        rows.append([stage, tc, ac, cov, level, coef])

    for tc in ("hu_aco", "elective"):
        for ac in ("adult", "pediatric"):
            # Center willingness: donor quality only.
            add("center", tc, ac, "(intercept)", "", 2.2 if tc == "hu_aco" else 1.8)
            add("center", tc, ac, "donor_age", "knot=55", -0.030)
            add("center", tc, ac, "donor_dcd", "1.0", -0.55)
            add("center", tc, ac, "donor_x_malignancy", "1.0", -0.80)
            # Patient-level acceptance.
            base = -0.2 if tc == "hu_aco" else -1.6
            add("patient", tc, ac, "(intercept)", "", base)
            add("patient", tc, ac, "match_meld", "", 0.030)
            add("patient", tc, ac, "donor_age", "knot=50", -0.018)
            add("patient", tc, ac, "donor_dcd", "1.0", -0.45)
            add("patient", tc, ac, "same_country", "1.0", 0.35)
            add("patient", tc, ac, "rank", "", -0.008)
            add("patient", tc, ac, "split_offer", "1.0", -0.60)
            if ac == "pediatric":
                add("patient", tc, ac, "donor_weight", "knot=60", -0.020)
                add("patient", tc, ac, "donor_age", "knot=40", -0.015)
    with open(os.path.join(DATA, "acceptance.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["stage", "tier_class", "age_class", "covariate", "level",
                    "coefficient"])
        w.writerows(rows)


def write_split():
    rows = [
        ["(intercept)", "", -4.1],
        ["pediatric", "1.0", 2.1],
        ["donor_age", "knot=45", -0.12],
        ["donor_weight", "knot=90", 0.02],
    ]
    with open(os.path.join(DATA, "split.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["covariate", "level", "coefficient"])
        w.writerows(rows)


def write_rescue():
    rows = []
    for j in range(1, 81):
        if j < 10:
            h = 0.0
        elif j <= 40:
            h = 0.01 + 0.0015 * (j - 10)
        elif j < 80:
            h = 0.07
        else:
            h = 1.0
        rows.append(["hazard", j, "", round(h, 5)])
    rows.append(["coefficient", "donor_age", "knot=50", 0.012])
    rows.append(["coefficient", "donor_dcd", "1.0", 0.35])
    with open(os.path.join(DATA, "rescue.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["kind", "key", "level", "value"])
        w.writerows(rows)


def write_weibull():
    shapes = {"AT": 1.10, "BE": 1.05, "DE": 0.95, "HR": 1.00, "HU": 1.00,
              "LU": 1.05, "NL": 1.15, "SI": 1.00, "XX": 1.00}
    rows = [["hu", "*", 0.85, "", "", ""]]
    rows.append(["elective", "*", 1.05, "", "", ""])
    for c, k in sorted(shapes.items()):
        rows.append(["elective", c, k, "", "", ""])
    for cov, level, coef in [
        ("(intercept)", "", 3200.0),
        ("lab_meld", "", -25.0),
        ("donor_age", "knot=40", -12.0),
        ("candidate_age", "knot=60", -15.0),
        ("donor_dcd", "1.0", -250.0),
        ("is_retransplant", "1.0", -300.0),
        ("pediatric", "1.0", 300.0),
    ]:
        rows.append(["elective", "", "", cov, level, coef])
    for cov, level, coef in [
        ("(intercept)", "", 1500.0),
        ("lab_meld", "", -10.0),
        ("donor_age", "knot=45", -8.0),
        ("candidate_age", "knot=60", -6.0),
    ]:
        rows.append(["hu", "", "", cov, level, coef])
    with open(os.path.join(DATA, "weibull.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["group", "country", "shape", "covariate", "level", "coefficient"])
        w.writerows(rows)


def write_relisting():
    # Early failures mostly relist; late failures mostly do not.
    buckets = {
        "7": [(0.02, 0.90), (0.08, 0.74), (0.20, 0.55), (0.45, 0.42),
              (0.70, 0.35), (0.92, 0.31)],
        "30": [(0.03, 0.90), (0.10, 0.76), (0.25, 0.62), (0.50, 0.50),
               (0.80, 0.43), (0.95, 0.41)],
        "90": [(0.05, 0.92), (0.15, 0.80), (0.35, 0.68), (0.60, 0.58),
               (0.85, 0.52), (0.96, 0.50)],
        "365": [(0.05, 0.94), (0.20, 0.84), (0.45, 0.74), (0.70, 0.66),
                (0.90, 0.61), (0.97, 0.60)],
        "1825": [(0.08, 0.95), (0.30, 0.87), (0.55, 0.80), (0.80, 0.74),
                 (0.95, 0.70)],
        "inf": [(0.10, 0.96), (0.40, 0.90), (0.70, 0.85), (0.92, 0.81)],
    }
    with open(os.path.join(DATA, "relisting.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bucket", "t", "survival"])
        for bucket, points in buckets.items():
            for t, s in points:
                w.writerow([bucket, t, s])


def write_layer_rules():
    from elasim.matchlist import DEFAULT_LAYER_ROWS
    with open(os.path.join(DATA, "layer_rules.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["donor_country", "rule_order", "field", "comparator", "value",
                    "layer", "center_driven"])
        for r in DEFAULT_LAYER_ROWS:
            w.writerow([r["donor_country"], r["rule_order"], r["field"],
                        r["comparator"], r["value"], r["layer"], r["center_driven"]])


def write_pool():
    import numpy as np
    from elasim.generator import GeneratorConfig, _write_pool
    cfg = GeneratorConfig(pool_size=300)
    rng = np.random.default_rng(np.random.SeedSequence([77, 0xE1A5]))
    _write_pool(cfg, rng, DATA)


if __name__ == "__main__":
    os.makedirs(DATA, exist_ok=True)
    write_scoring()
    write_exceptions()
    write_acceptance()
    write_split()
    write_rescue()
    write_weibull()
    write_relisting()
    write_layer_rules()
    write_pool()
    print("wrote defaults to", DATA)
