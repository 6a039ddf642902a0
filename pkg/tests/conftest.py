"""Shared factories for building states, donors and parameter sets in tests."""

import pytest

from elasim.core import (
    AllocationProfile,
    parse_timestamp,
    CandidateRegistration,
    CandidateState,
    DonorRecord,
    UNOS_CURVE,
)
from elasim.exception_scores import ActiveException, ExceptionDefinition
from elasim.matchlist import update_meld_caches


_COUNTER = {"n": 0}


def _next_id(prefix):
    _COUNTER["n"] += 1
    return f"{prefix}{_COUNTER['n']:04d}"


def make_donor(**kw):
    base = dict(donor_id=_next_id("D"), reported_at=17000.0, country="NL",
                center="NLRO", hospital="H1", blood_group="A", age=45.0,
                weight_kg=80.0, height_cm=178.0, death_cause="CVA", dcd=False,
                covariates={})
    base.update(kw)
    return DonorRecord(**base)


def make_registration(**kw):
    base = dict(patient_id=_next_id("P"), registration_id=_next_id("R"),
                listed_at=16800.0, country="NL", center="NLRO",
                blood_group="A", age_at_listing=52.0, weight_kg=78.0, sex="M",
                disease_group="cirrhosis", is_retransplant=False)
    base.update(kw)
    return CandidateRegistration(**base)


def make_state(lab_meld=15, urgency="T", se_meld=None, ped_meld=None,
               curve=UNOS_CURVE, anchor=None, urgency_since=None,
               profile=None, now=17000.0, **reg_kw):
    """Candidate state with the given lab/exception MELDs under `curve`."""
    from elasim.core import survival90

    reg = make_registration(**reg_kw)
    st = CandidateState(reg)
    st.urgency = urgency
    st.lab_meld = lab_meld
    st.anchor = anchor if anchor is not None else reg.listed_at
    st.urgency_since = urgency_since if urgency_since is not None else reg.listed_at
    st.profile = profile
    if se_meld is not None:
        eq = 1.0 - survival90(curve, se_meld)
        d = ExceptionDefinition(f"SE-T-{reg.country}", reg.country, eq, 0.0, 1.0)
        st.exceptions[d.exception_id] = ActiveException(d, granted_at=reg.listed_at)
    if ped_meld is not None:
        eq = 1.0 - survival90(curve, ped_meld)
        d = ExceptionDefinition(f"PED-{reg.country}", reg.country, eq, 0.0, 1.0)
        st.exceptions[d.exception_id] = ActiveException(d, granted_at=reg.listed_at)
    update_meld_caches(st, curve, min_score=6)
    return st


@pytest.fixture
def donor_factory():
    return make_donor


@pytest.fixture
def state_factory():
    return make_state


@pytest.fixture
def profile_factory():
    return AllocationProfile


# ---------------------------------------------------------------------------
# Parameter-set and bundle helpers for engine-level tests

import math

from elasim.config import (
    load_exception_definitions,
    load_layer_rules,
    load_relisting_curves,
    load_rescue_model,
    load_scoring,
    load_split_model,
    load_weibull,
    ModelParameterSet,
)
from elasim.generator import default_parameters_dir
from elasim.ingestion import InputBundle
from elasim.offering import AcceptanceModelSet, LogisticModel
from elasim.core import StatusUpdate


def constant_models(center_p=1.0, patient_p=1.0):
    def logit(p):
        if p >= 1.0:
            return 50.0
        if p <= 0.0:
            return -50.0
        return math.log(p / (1.0 - p))

    models = {}
    for tc in ("hu_aco", "elective"):
        for ac in ("adult", "pediatric"):
            models[("center", tc, ac)] = LogisticModel(logit(center_p))
            models[("patient", tc, ac)] = LogisticModel(logit(patient_p))
    return AcceptanceModelSet(models)


def default_params(center_p=1.0, patient_p=1.0, split_model=None,
                   rescue_model=None, active_curve="unos",
                   active_formula="unos"):
    d = str(default_parameters_dir()) + "/"
    formulas, curves, bg_rules = load_scoring("scoring.yaml", d)
    return ModelParameterSet(
        formulas=formulas,
        curves=curves,
        bg_rules=bg_rules,
        active_lab_formula=active_formula,
        active_exception_curve=active_curve,
        exception_definitions=load_exception_definitions(d + "exceptions.csv"),
        acceptance=constant_models(center_p, patient_p),
        split_model=split_model,
        rescue_model=rescue_model,
        weibull=load_weibull(d + "weibull.csv"),
        relisting=load_relisting_curves(d + "relisting.csv"),
        layer_rules=load_layer_rules(d + "layer_rules.csv"),
        regions={},
    ).validate()


WINDOW = (parse_timestamp("2016-01-01"), parse_timestamp("2018-01-01"))


def bio_status(rid, at, crea=2.0, bili=3.0, inr=1.5, dialysis=False, sodium=None):
    return StatusUpdate(rid, at, "BIOMARKER", creatinine=crea, bilirubin=bili,
                        inr=inr, dialysis=dialysis, sodium=sodium)


def urgency_status(rid, at, urgency):
    return StatusUpdate(rid, at, "URGENCY", urgency=urgency)


def exit_status(rid, at, reason="D"):
    return StatusUpdate(rid, at, "EXIT", exit_reason=reason)


def exception_status(rid, at, exception_id, action="grant"):
    return StatusUpdate(rid, at, "EXCEPTION", exception_id=exception_id,
                        exception_action=action)


def make_bundle(donors=(), regs_with_statuses=(), window=WINDOW,
                initial_obligations=()):
    registrations = {}
    statuses = {}
    for reg, seq in regs_with_statuses:
        registrations[reg.registration_id] = reg
        statuses[reg.registration_id] = list(seq)
    return InputBundle(
        donors=sorted(donors, key=lambda d: (d.reported_at, d.donor_id)),
        registrations=registrations,
        statuses=statuses,
        initial_obligations=list(initial_obligations),
        window=window,
    )
