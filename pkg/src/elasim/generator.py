"""Synthetic input-stream generator.

Produces schema-valid donor/registration/status files (plus a
re-registration pool, an imputation case file and a ready-to-run
config.yaml) for a configurable country mix, with Poisson arrivals and
lognormal biomarkers. Deterministic per seed. Nothing here resembles real
registry data; it exists so the simulator can be exercised end to end.
"""

from __future__ import annotations

import csv
import math
import os
import shutil
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .core import format_timestamp, is_pediatric, parse_timestamp, survival90, UNOS_CURVE, UNOS_MELD

COUNTRY_WEIGHTS = {
    "DE": 0.45, "BE": 0.13, "NL": 0.10, "AT": 0.09, "HU": 0.07,
    "HR": 0.06, "SI": 0.04, "LU": 0.01, "XX": 0.05,
}

CENTERS = {
    "AT": [("ATVIE", "AT"), ("ATGRA", "AT"), ("ATINN", "AT")],
    "BE": [("BELEU", "BE"), ("BEGEN", "BE"), ("BEBRU", "BE"), ("BELIE", "BE")],
    "HR": [("HRZAG", "HR"), ("HRRIJ", "HR")],
    "DE": [("DEBER", "ne"), ("DEHAM", "no"), ("DEHAN", "no"), ("DEESS", "nw"),
           ("DEKOL", "nw"), ("DEFRA", "mi"), ("DETUE", "sw"), ("DEMUN", "ba"),
           ("DEREG", "ba")],
    "HU": [("HUBUD", "HU")],
    "LU": [("LULUX", "LU")],
    "NL": [("NLGRO", "NL"), ("NLLEI", "NL"), ("NLROT", "NL")],
    "SI": [("SILJU", "SI")],
    "XX": [("XXAAA", "XX"), ("XXBBB", "XX")],
}

DEATH_CAUSES = ["CVA", "trauma", "anoxia", "other"]
DISEASE_GROUPS = ["cirrhosis", "hcc", "cholestatic", "metabolic", "alf", "other"]
DISEASE_P = [0.50, 0.20, 0.12, 0.06, 0.06, 0.06]


@dataclass
class GeneratorConfig:
    window_start: str = "2016-01-01"
    window_end: str = "2017-12-31"
    lead_days: float = 240.0
    donor_rate_per_day: float = 1.4
    candidate_rate_per_day: float = 2.2
    censor_fraction: float = 0.0   # streams cut short (imputation cases)
    pool_size: int = 250
    exception_rate: float = 0.22   # non-HCC candidates granted an SE/NSE
    profile_rate: float = 0.35
    sodium_reporting: dict = field(default_factory=dict)  # center -> prob
    country_weights: dict = field(default_factory=lambda: dict(COUNTRY_WEIGHTS))


def _pick_center(rng, country):
    options = CENTERS[country]
    return options[int(rng.integers(len(options)))]


def _meld_from_biomarkers(crea, bili, inr, dialysis):
    return UNOS_MELD.score(crea, bili, inr, dialysis)


class _StatusWriter:
    COLUMNS = ["registration_id", "at", "kind", "creatinine", "bilirubin", "inr",
               "dialysis", "sodium", "exception_id", "exception_action", "urgency",
               "exit_reason", "max_donor_age", "accept_dcd", "accept_split",
               "accept_rescue", "min_donor_weight", "max_donor_weight"]

    def __init__(self, path):
        self.fh = open(path, "w", newline="")
        self.writer = csv.DictWriter(self.fh, fieldnames=self.COLUMNS)
        self.writer.writeheader()

    def row(self, reg_id, at, kind, **kw):
        base = {c: "" for c in self.COLUMNS}
        base.update(registration_id=reg_id, at=format_timestamp(at), kind=kind, **kw)
        self.writer.writerow(base)

    def close(self):
        self.fh.close()


def _walk_biomarkers(rng, crea, bili, inr):
    crea = max(0.4, crea * math.exp(rng.normal(0.015, 0.16)))
    bili = max(0.3, bili * math.exp(rng.normal(0.03, 0.22)))
    inr = max(0.8, inr * math.exp(rng.normal(0.01, 0.08)))
    return crea, bili, inr


def generate_bundle(cfg: GeneratorConfig, seed: int, out_dir: str) -> dict:
    """Write a complete synthetic bundle into `out_dir`; returns counts."""
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFF, 0xE1A5]))
    start = parse_timestamp(cfg.window_start)
    end = parse_timestamp(cfg.window_end)
    countries = sorted(cfg.country_weights)
    weights = np.array([cfg.country_weights[c] for c in countries], dtype=float)
    weights /= weights.sum()

    sodium_reporting = dict(cfg.sodium_reporting)
    for country in countries:
        for center, _ in CENTERS[country]:
            # Centers either report serum sodium nearly always or never.
            sodium_reporting.setdefault(
                center, 0.9 if rng.random() < 0.5 else 0.0)

    # --- donors -------------------------------------------------------------
    n_donors = 0
    with open(os.path.join(out_dir, "donors.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["donor_id", "reported_at", "country", "center", "hospital",
                    "blood_group", "age", "weight_kg", "height_cm", "death_cause",
                    "dcd", "malignancy"])
        t = start
        while True:
            if cfg.donor_rate_per_day <= 0:
                break
            t += rng.exponential(1.0 / cfg.donor_rate_per_day)
            if t > end:
                break
            n_donors += 1
            country = countries[int(rng.choice(len(countries), p=weights))]
            center, _ = _pick_center(rng, country)
            bg = ["O", "A", "B", "AB"][int(rng.choice(4, p=[0.38, 0.36, 0.18, 0.08]))]
            dcd = rng.random() < (0.30 if country in ("BE", "NL") else 0.05)
            w.writerow([
                f"D{n_donors:05d}", format_timestamp(t), country, center,
                f"H{int(rng.integers(1, 4))}", bg,
                round(float(rng.uniform(12, 80)), 1),
                round(float(rng.uniform(45, 110)), 1),
                round(float(rng.uniform(150, 195)), 1),
                DEATH_CAUSES[int(rng.choice(4, p=[0.45, 0.25, 0.2, 0.1]))],
                int(dcd), int(rng.random() < 0.05),
            ])

    # --- registrations + statuses -------------------------------------------
    statuses = _StatusWriter(os.path.join(out_dir, "statuses.csv"))
    n_regs = 0
    case_rows = []
    with open(os.path.join(out_dir, "registrations.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["patient_id", "registration_id", "listed_at", "country",
                    "center", "blood_group", "age_at_listing", "weight_kg", "sex",
                    "disease_group", "is_retransplant"])
        t = start - cfg.lead_days
        while True:
            if cfg.candidate_rate_per_day <= 0:
                break
            t += rng.exponential(1.0 / cfg.candidate_rate_per_day)
            if t > end:
                break
            n_regs += 1
            rid = f"R{n_regs:05d}"
            pid = f"P{n_regs:05d}"
            country = countries[int(rng.choice(len(countries), p=weights))]
            center, _ = _pick_center(rng, country)
            pediatric = rng.random() < 0.07
            age = float(rng.uniform(0.5, 15.5)) if pediatric else float(rng.uniform(25, 70))
            bg = ["O", "A", "B", "AB"][int(rng.choice(4, p=[0.38, 0.36, 0.18, 0.08]))]
            sex = "F" if rng.random() < 0.36 else "M"
            disease = DISEASE_GROUPS[int(rng.choice(6, p=DISEASE_P))]
            weight = float(rng.uniform(8, 35)) if pediatric else float(rng.uniform(48, 110))
            w.writerow([pid, rid, format_timestamp(t), country, center, bg,
                        round(age, 1), round(weight, 1), sex, disease, 0])
            case_rows.append(_write_stream(
                statuses, rng, cfg, rid, t, country, center, age, disease,
                pediatric, end, sodium_reporting[center]))
    statuses.close()

    with open(os.path.join(out_dir, "cases.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["registration_id", "censor_day", "event", "eta", "ipcw_weight",
                    "is_retransplant", "urgency", "nse_group", "disease_group",
                    "urgency_reason", "dialysis", "country", "pediatric",
                    "lab_meld", "age_at_registration", "exception_meld"])
        for row in case_rows:
            w.writerow(row)

    _write_pool(cfg, rng, out_dir)

    with open(os.path.join(out_dir, "centers.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["center", "country", "region"])
        for country in countries:
            for center, region in CENTERS[country]:
                w.writerow([center, country, region])

    _copy_default_parameters(out_dir)
    _write_config(cfg, out_dir)
    return {"donors": n_donors, "registrations": n_regs}


def _write_stream(statuses, rng, cfg, rid, listed_at, country, center, age,
                  disease, pediatric, window_end, sodium_p):
    """One candidate's status history; returns their imputation-case row."""
    t = listed_at
    crea = float(np.exp(rng.normal(0.1, 0.35)))
    bili = float(np.exp(rng.normal(0.7, 0.8)))
    inr = float(np.exp(rng.normal(0.18, 0.2)))
    dialysis = False
    statuses.row(rid, t, "URGENCY", urgency="T")
    urgency = "T"
    urgency_reason = "none"
    sodium = float(rng.normal(137.0, 4.5)) if rng.random() < sodium_p else None

    def biomarker_row(at):
        statuses.row(rid, at, "BIOMARKER", creatinine=round(crea, 2),
                     bilirubin=round(bili, 2), inr=round(inr, 2),
                     dialysis=int(dialysis),
                     sodium="" if sodium is None else round(sodium, 1))

    biomarker_row(t + 0.01)
    exception_group = "none"
    if disease == "hcc":
        statuses.row(rid, t + 0.02, "EXCEPTION", exception_id=f"SE-HCC-{country}",
                     exception_action="grant")
        exception_group = "hcc"
    elif not pediatric and rng.random() < cfg.exception_rate:
        kind = ["SE-PSC", "SE-PLD", "NSE"][int(rng.choice(3, p=[0.4, 0.3, 0.3]))]
        statuses.row(rid, t + 0.02, "EXCEPTION", exception_id=f"{kind}-{country}",
                     exception_action="grant")
        exception_group = kind.lower()
    if pediatric:
        statuses.row(rid, t + 0.025, "EXCEPTION", exception_id=f"PED-{country}",
                     exception_action="grant")
    if rng.random() < cfg.profile_rate:
        statuses.row(rid, t + 0.03, "PROFILE",
                     max_donor_age=int(rng.choice([55, 65, 75])),
                     accept_dcd=int(rng.random() < 0.6),
                     accept_split=int(rng.random() < 0.8),
                     accept_rescue=int(rng.random() < 0.7))

    censor_at = None
    if rng.random() < cfg.censor_fraction:
        censor_at = t + float(rng.uniform(30.0, 700.0))

    exit_reason = None
    last_meld = _meld_from_biomarkers(crea, bili, inr, dialysis)
    while True:
        gap = float(rng.exponential(26.0)) + 1.0
        t += gap
        if censor_at is not None and t >= censor_at:
            break
        if t > window_end + 30.0:
            break
        crea, bili, inr = _walk_biomarkers(rng, crea, bili, inr)
        if not dialysis and crea > 3.0 and rng.random() < 0.25:
            dialysis = True
        if sodium is not None:
            sodium = float(np.clip(sodium + rng.normal(0, 2.0), 118.0, 150.0))
        last_meld = _meld_from_biomarkers(crea, bili, inr, dialysis)
        mortality = 1.0 - survival90(UNOS_CURVE, last_meld)
        p_death = min(0.85, mortality * gap / 90.0)
        u = rng.random()
        if u < p_death:
            exit_reason = "D"
            statuses.row(rid, t, "EXIT", exit_reason="D")
            break
        if u < p_death + 0.006 * gap / 30.0:
            exit_reason = "R"
            statuses.row(rid, t, "EXIT", exit_reason="R")
            break
        if urgency == "T" and rng.random() < 0.015:
            urgency = "NT"
            urgency_reason = ["too_good", "too_bad", "other"][int(rng.integers(3))]
            statuses.row(rid, t, "URGENCY", urgency="NT")
            continue
        if urgency == "NT" and rng.random() < 0.5:
            urgency = "T"
            urgency_reason = "none"
            statuses.row(rid, t, "URGENCY", urgency="T")
            continue
        if urgency == "T" and disease == "alf" and rng.random() < 0.05:
            urgency = "HU"
            statuses.row(rid, t, "URGENCY", urgency="HU")
            continue
        if urgency == "HU" and rng.random() < 0.6:
            urgency = "T"
            statuses.row(rid, t, "URGENCY", urgency="T")
            continue
        biomarker_row(t)

    censor_day = (censor_at if exit_reason is None and censor_at is not None
                  else t) - listed_at
    eta = 3.5 - 0.05 * last_meld - (0.3 if urgency == "HU" else 0.0) \
        + float(rng.normal(0.0, 0.12))
    return [rid, round(max(censor_day, 0.5), 2),
            int(exit_reason is not None), round(eta, 4),
            round(float(np.exp(rng.normal(0.15, 0.25))), 4),
            0, urgency, exception_group, disease, urgency_reason,
            int(dialysis), country, int(is_pediatric(age, country)),
            last_meld, round(age, 1), 0]


def _write_pool(cfg, rng, out_dir):
    countries = sorted(cfg.country_weights)
    weights = np.array([cfg.country_weights[c] for c in countries])
    weights = weights / weights.sum()
    with open(os.path.join(out_dir, "pool_registrations.csv"), "w", newline="") as rf, \
            open(os.path.join(out_dir, "pool_statuses.csv"), "w", newline="") as sf:
        rw = csv.writer(rf)
        rw.writerow(["patient_id", "registration_id", "listed_at", "country",
                     "center", "blood_group", "age_at_listing", "weight_kg", "sex",
                     "disease_group", "is_retransplant", "relist_days"])
        sw = csv.DictWriter(sf, fieldnames=_StatusWriter.COLUMNS)
        sw.writeheader()

        def srow(reg_id, at, kind, **kw):
            base = {c: "" for c in _StatusWriter.COLUMNS}
            base.update(registration_id=reg_id, at=format_timestamp(at),
                        kind=kind, **kw)
            sw.writerow(base)

        base_t = parse_timestamp("2013-01-01")
        for i in range(cfg.pool_size):
            rid = f"POOL{i:04d}"
            early = rng.random() < 0.3
            relist_days = (float(rng.uniform(1.0, 14.0)) if early
                           else float(rng.uniform(15.0, 900.0)))
            survive_days = float(rng.uniform(5.0, 1200.0))
            country = countries[int(rng.choice(len(countries), p=weights))]
            center, _ = _pick_center(rng, country)
            pediatric = rng.random() < 0.08
            age = float(rng.uniform(1, 16)) if pediatric else float(rng.uniform(25, 72))
            listed = base_t + float(rng.uniform(0, 1000))
            rw.writerow([f"PPOOL{i:04d}", rid, format_timestamp(listed), country,
                         center, ["O", "A", "B", "AB"][int(rng.integers(4))],
                         round(age, 1),
                         round(float(rng.uniform(10 if pediatric else 45, 110)), 1),
                         "F" if rng.random() < 0.4 else "M", "retx", 1,
                         round(relist_days, 2)])
            srow(rid, listed, "URGENCY", urgency="HU" if early and rng.random() < 0.7 else "T")
            crea, bili, inr = (float(np.exp(rng.normal(0.5, 0.3))),
                               float(np.exp(rng.normal(1.2, 0.6))),
                               float(np.exp(rng.normal(0.5, 0.2))))
            srow(rid, listed + 0.01, "BIOMARKER", creatinine=round(crea, 2),
                 bilirubin=round(bili, 2), inr=round(inr, 2), dialysis=0)
            if rng.random() < 0.25:
                srow(rid, listed + 0.02, "EXCEPTION",
                     exception_id=f"SE-HAT-{country}", exception_action="grant")
            if rng.random() < 0.3:
                srow(rid, listed + 0.03, "PROFILE", max_donor_age=60,
                     accept_dcd=0, accept_split=1, accept_rescue=1)
            steps = int(rng.integers(0, 4))
            for k in range(steps):
                at = listed + survive_days * (k + 1) / (steps + 1.5)
                crea, bili, inr = _walk_biomarkers(rng, crea, bili, inr)
                srow(rid, at, "BIOMARKER", creatinine=round(crea, 2),
                     bilirubin=round(bili, 2), inr=round(inr, 2), dialysis=0)
            srow(rid, listed + survive_days, "EXIT",
                 exit_reason="D" if rng.random() < 0.8 else "R")


def default_parameters_dir():
    return resources.files("elasim").joinpath("data")


PARAMETER_FILES = ["scoring.yaml", "exceptions.csv", "acceptance.csv", "split.csv",
                   "rescue.csv", "weibull.csv", "relisting.csv", "layer_rules.csv"]


def _copy_default_parameters(out_dir):
    data = default_parameters_dir()
    os.makedirs(os.path.join(out_dir, "parameters"), exist_ok=True)
    for name in PARAMETER_FILES:
        with resources.as_file(data.joinpath(name)) as src:
            shutil.copy(src, os.path.join(out_dir, "parameters", name))


def _write_config(cfg: GeneratorConfig, out_dir):
    text = f"""window:
  start: {cfg.window_start}
  end: {cfg.window_end}
runs: 1
master_seed: 1
workers: 0
inputs:
  donors: donors.csv
  registrations: registrations.csv
  statuses: statuses.csv
  centers: centers.csv
parameters:
  scoring: parameters/scoring.yaml
  active_lab_formula: unos
  active_exception_curve: unos
  exception_definitions: parameters/exceptions.csv
  exception_variant: null
  acceptance_coefficients: parameters/acceptance.csv
  split_coefficients: parameters/split.csv
  rescue_model: parameters/rescue.csv
  weibull_parameters: parameters/weibull.csv
  relisting_curves: parameters/relisting.csv
  pool_registrations: pool_registrations.csv
  pool_statuses: pool_statuses.csv
  layer_rules: parameters/layer_rules.csv
policy:
  force_placement: false
  allow_split: true
output:
  dir: out
"""
    with open(os.path.join(out_dir, "config.yaml"), "w") as fh:
        fh.write(text)
