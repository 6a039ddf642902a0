"""Run configuration and parameter-file loading.

A run is described by one YAML file; statistical parameters (acceptance
log-odds, Weibull shapes/scales, relisting curves, exception definitions,
rescue hazards, layer rules) live in delimited files referenced from it, so
policies can be changed without touching code. Paths are resolved relative
to the YAML file. Column schemas are documented in docs/file_formats.md.
"""

from __future__ import annotations

import csv
import hashlib
import os
from dataclasses import dataclass, field
from typing import Optional

import yaml

from .core import (
    BLOOD_GROUPS,
    BloodGroupRules,
    ConfigError,
    MeldFormula,
    SurvivalCurve90,
    parse_timestamp,
)
from .exception_scores import ExceptionDefinition, apply_policy_variant
from .matchlist import LayerRuleTable
from .offering import AcceptanceModelSet, LogisticModel, RescueModel, Term
from .post_transplant import RelistingCurves, WeibullModel


def read_rows(path: str) -> list[dict]:
    """CSV rows as dicts; raises with file and row number on trouble."""
    if not os.path.exists(path):
        raise ConfigError(f"missing file: {path}")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ConfigError(f"{path}: empty file")
        rows = []
        for i, row in enumerate(reader, start=2):
            row["_row"] = i
            rows.append(row)
        return rows


def _fail(path: str, row: dict, message: str):
    raise ConfigError(f"{os.path.basename(path)} row {row.get('_row', '?')}: {message}")


def _parse_float(path, row, key, default=None):
    raw = (row.get(key) or "").strip()
    if raw == "":
        if default is not None:
            return default
        _fail(path, row, f"missing {key}")
    try:
        return float(raw)
    except ValueError:
        _fail(path, row, f"bad {key}: {raw!r}")


def _parse_bool(row, key, default=False):
    raw = str(row.get(key) or "").strip().lower()
    if raw == "":
        return default
    return raw in ("1", "true", "yes", "y")


def _parse_optional_float(row, key):
    raw = (row.get(key) or "").strip()
    if raw == "" or raw.lower() in ("inf", "none", "na"):
        return None
    return float(raw)


# ---------------------------------------------------------------------------
# Individual parameter files


def load_exception_definitions(path: str) -> dict[str, ExceptionDefinition]:
    defs = {}
    for row in read_rows(path):
        try:
            d = ExceptionDefinition(
                exception_id=row["exception_id"].strip(),
                country=row["country"].strip(),
                initial_equivalent=_parse_float(path, row, "initial_equivalent"),
                increment_90d=_parse_float(path, row, "increment_90d"),
                max_equivalent=_parse_float(path, row, "max_equivalent"),
                max_age=_parse_optional_float(row, "max_age"),
                is_bonus=_parse_bool(row, "is_bonus"),
                auto_recertified=_parse_bool(row, "auto_recertified", default=True),
            )
        except (KeyError, ConfigError, ValueError) as exc:
            _fail(path, row, str(exc))
        if d.exception_id in defs:
            _fail(path, row, f"duplicate exception_id {d.exception_id}")
        defs[d.exception_id] = d
    if not defs:
        raise ConfigError(f"{path}: no exception definitions")
    return defs


def _term_from_row(path, row) -> Term:
    level = (row.get("level") or "").strip() or None
    return Term(row["covariate"].strip(), level,
                _parse_float(path, row, "coefficient"))


def load_acceptance_models(path: str) -> AcceptanceModelSet:
    grouped: dict[tuple, dict] = {}
    for row in read_rows(path):
        stage = row["stage"].strip()
        tier_class = row["tier_class"].strip()
        age_class = row["age_class"].strip()
        key = (stage, tier_class, age_class)
        spec = grouped.setdefault(key, {"intercept": 0.0, "terms": []})
        cov = row["covariate"].strip()
        if cov == "(intercept)":
            spec["intercept"] = _parse_float(path, row, "coefficient")
        else:
            try:
                spec["terms"].append(_term_from_row(path, row))
            except ConfigError as exc:
                _fail(path, row, str(exc))
    models = {}
    for key, spec in grouped.items():
        try:
            models[key] = LogisticModel(spec["intercept"], tuple(spec["terms"]))
        except ConfigError as exc:
            raise ConfigError(f"{path}: selector {key}: {exc}") from None
    return AcceptanceModelSet(models)


def load_split_model(path: str) -> LogisticModel:
    intercept = 0.0
    terms = []
    for row in read_rows(path):
        cov = row["covariate"].strip()
        if cov == "(intercept)":
            intercept = _parse_float(path, row, "coefficient")
        else:
            terms.append(_term_from_row(path, row))
    return LogisticModel(intercept, tuple(terms))


def load_rescue_model(path: str) -> RescueModel:
    hazards: dict[int, float] = {}
    terms = []
    for row in read_rows(path):
        kind = row["kind"].strip()
        if kind == "hazard":
            hazards[int(row["key"])] = _parse_float(path, row, "value")
        elif kind == "coefficient":
            level = (row.get("level") or "").strip() or None
            terms.append(Term(row["key"].strip(), level,
                              _parse_float(path, row, "value")))
        else:
            _fail(path, row, f"unknown kind {kind!r}")
    if not hazards:
        raise ConfigError(f"{path}: no hazard rows")
    ordered = [hazards[k] for k in sorted(hazards)]
    if sorted(hazards) != list(range(1, len(hazards) + 1)):
        raise ConfigError(f"{path}: hazard indices must be 1..N without gaps")
    return RescueModel(tuple(ordered), tuple(terms))


def load_weibull(path: str) -> WeibullModel:
    shapes: dict[tuple[str, str], float] = {}
    intercepts: dict[str, float] = {}
    terms: dict[str, list[Term]] = {}
    for row in read_rows(path):
        group = row["group"].strip()
        country = (row.get("country") or "").strip() or "*"
        cov = (row.get("covariate") or "").strip()
        if not cov:
            shapes[(group, country)] = _parse_float(path, row, "shape")
        elif cov == "(intercept)":
            intercepts[group] = _parse_float(path, row, "coefficient")
        else:
            level = (row.get("level") or "").strip() or None
            terms.setdefault(group, []).append(
                Term(cov, level, _parse_float(path, row, "coefficient")))
    return WeibullModel(shapes, intercepts,
                        {g: tuple(ts) for g, ts in terms.items()})


def load_relisting_curves(path: str) -> RelistingCurves:
    by_bucket: dict[float, list[tuple[float, float]]] = {}
    for row in read_rows(path):
        raw = row["bucket"].strip().lower()
        bound = float("inf") if raw == "inf" else float(raw)
        by_bucket.setdefault(bound, []).append(
            (_parse_float(path, row, "t"), _parse_float(path, row, "survival")))
    bounds = sorted(by_bucket)
    if not bounds or bounds[-1] != float("inf"):
        raise ConfigError(f"{path}: need a terminal 'inf' bucket")
    curves = [sorted(by_bucket[b]) for b in bounds]
    return RelistingCurves([b for b in bounds if b != float("inf")], curves)


def load_layer_rules(path: str) -> LayerRuleTable:
    return LayerRuleTable(read_rows(path))


def load_regions(path: Optional[str]) -> dict[str, str]:
    if not path:
        return {}
    return {row["center"].strip(): row["region"].strip()
            for row in read_rows(path)}


def _formula_from_mapping(name: str, m: dict) -> MeldFormula:
    sodium = m.get("sodium") or {}
    return MeldFormula(
        name=name,
        intercept=float(m["intercept"]),
        scale=float(m.get("scale", 1.0)),
        coefficients={k: float(v) for k, v in m["coefficients"].items()},
        caps={k: (float(v[0]), None if v[1] is None else float(v[1]))
              for k, v in m["caps"].items()},
        dialysis_creatinine=(None if m.get("dialysis_creatinine") is None
                             else float(m["dialysis_creatinine"])),
        clamp=(int(m["clamp"][0]), int(m["clamp"][1])),
        na_reference=float(sodium.get("reference", 138.6)),
        revna_max=float(sodium.get("revna_max", 13.6)),
        na_coefficient=float(sodium.get("coefficient", 0.0)),
        na_creatinine_interaction=float(sodium.get("creatinine_interaction", 0.0)),
    )


def load_scoring(spec, base_dir: str):
    """Formulas, curves and blood-group tables from a mapping or YAML path."""
    if isinstance(spec, str):
        with open(os.path.join(base_dir, spec)) as fh:
            spec = yaml.safe_load(fh)
    formulas = {name: _formula_from_mapping(name, m)
                for name, m in spec["formulas"].items()}
    curves = {name: SurvivalCurve90(
        name, base=float(c["base"]), slope=float(c["slope"]),
        score_range=(int(c["score_range"][0]), int(c["score_range"][1])))
        for name, c in spec["curves"].items()}
    bg = spec["blood_groups"]

    def table(mapping):
        out = {}
        for donor_bg in BLOOD_GROUPS:
            if donor_bg not in mapping:
                raise ConfigError(f"blood group table missing donor group {donor_bg}")
            out[donor_bg] = frozenset(mapping[donor_bg])
        return out

    rules = BloodGroupRules(elective=table(bg["elective"]), hu_aco=table(bg["hu_aco"]))
    return formulas, curves, rules


# ---------------------------------------------------------------------------
# The assembled parameter set and run configuration


@dataclass
class ModelParameterSet:
    formulas: dict[str, MeldFormula]
    curves: dict[str, SurvivalCurve90]
    bg_rules: BloodGroupRules
    active_lab_formula: str
    active_exception_curve: str
    exception_definitions: dict[str, ExceptionDefinition]
    acceptance: AcceptanceModelSet
    split_model: LogisticModel
    rescue_model: Optional[RescueModel]
    weibull: WeibullModel
    relisting: RelistingCurves
    layer_rules: LayerRuleTable
    regions: dict[str, str] = field(default_factory=dict)

    @property
    def lab_formula(self) -> MeldFormula:
        return self.formulas[self.active_lab_formula]

    @property
    def exception_curve(self) -> SurvivalCurve90:
        return self.curves[self.active_exception_curve]

    @property
    def min_score(self) -> int:
        return self.lab_formula.clamp[0]

    def validate(self):
        if self.active_lab_formula not in self.formulas:
            raise ConfigError(f"unknown lab formula {self.active_lab_formula!r}")
        if self.active_exception_curve not in self.curves:
            raise ConfigError(f"unknown exception curve {self.active_exception_curve!r}")
        return self


@dataclass
class RunConfig:
    window_start: float
    window_end: float
    runs: int
    master_seed: int
    workers: int
    donors_path: str
    registrations_path: str
    statuses_path: str
    obligations_path: Optional[str]
    centers_path: Optional[str]
    pool_registrations_path: Optional[str]
    pool_statuses_path: Optional[str]
    parameters: ModelParameterSet
    force_placement: bool
    allow_split: bool
    output_dir: str
    config_sha256: str
    raw: dict

    def __post_init__(self):
        if self.runs < 1:
            raise ConfigError("runs must be >= 1")
        if self.window_end <= self.window_start:
            raise ConfigError("empty simulation window")


def load_run_config(path: str) -> RunConfig:
    if not os.path.exists(path):
        raise ConfigError(f"missing config file: {path}")
    with open(path, "rb") as fh:
        blob = fh.read()
    raw = yaml.safe_load(blob)
    base = os.path.dirname(os.path.abspath(path))

    def resolve(p):
        return None if p is None else os.path.join(base, p)

    try:
        window = raw["window"]
        inputs = raw["inputs"]
        pspec = raw["parameters"]
    except KeyError as exc:
        raise ConfigError(f"{path}: missing section {exc}") from None

    formulas, curves, bg_rules = load_scoring(pspec["scoring"], base)
    definitions = load_exception_definitions(resolve(pspec["exception_definitions"]))
    definitions = apply_policy_variant(definitions, pspec.get("exception_variant"))
    params = ModelParameterSet(
        formulas=formulas,
        curves=curves,
        bg_rules=bg_rules,
        active_lab_formula=pspec.get("active_lab_formula", "unos"),
        active_exception_curve=pspec.get("active_exception_curve", "unos"),
        exception_definitions=definitions,
        acceptance=load_acceptance_models(resolve(pspec["acceptance_coefficients"])),
        split_model=load_split_model(resolve(pspec["split_coefficients"])),
        rescue_model=(load_rescue_model(resolve(pspec["rescue_model"]))
                      if pspec.get("rescue_model") else None),
        weibull=load_weibull(resolve(pspec["weibull_parameters"])),
        relisting=load_relisting_curves(resolve(pspec["relisting_curves"])),
        layer_rules=load_layer_rules(resolve(pspec["layer_rules"])),
        regions=load_regions(resolve(inputs.get("centers"))),
    ).validate()

    policy = raw.get("policy", {})
    return RunConfig(
        window_start=parse_timestamp(str(window["start"])),
        window_end=parse_timestamp(str(window["end"])),
        runs=int(raw.get("runs", 1)),
        master_seed=int(raw.get("master_seed", 1)),
        workers=int(raw.get("workers", 0)),  # 0 = pick automatically
        donors_path=resolve(inputs["donors"]),
        registrations_path=resolve(inputs["registrations"]),
        statuses_path=resolve(inputs["statuses"]),
        obligations_path=resolve(inputs.get("initial_obligations")),
        centers_path=resolve(inputs.get("centers")),
        pool_registrations_path=resolve(pspec.get("pool_registrations")),
        pool_statuses_path=resolve(pspec.get("pool_statuses")),
        parameters=params,
        force_placement=bool(policy.get("force_placement", False)),
        allow_split=bool(policy.get("allow_split", True)),
        output_dir=resolve(raw.get("output", {}).get("dir", "out")),
        config_sha256=hashlib.sha256(blob).hexdigest(),
        raw=raw,
    )
