"""Core domain types and scoring formulas shared by all simulator modules.

Scores live on the MELD scale; exception priorities live on the 90-day
mortality-equivalent scale and are translated between the two with a
survival curve. All timestamps are float days since 1970-01-01 (no
timezones), converted to ISO-8601 strings only at the file boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from typing import Optional

EPOCH = datetime(1970, 1, 1)

BLOOD_GROUPS = ("O", "A", "B", "AB")

URGENCY_CODES = ("T", "NT", "HU", "ACO")

# Tier ordinals used in match codes: lower sorts first.
TIER_HU = 0
TIER_ACO = 1
TIER_ELECTIVE = 2

TIER_BY_URGENCY = {"HU": TIER_HU, "ACO": TIER_ACO, "T": TIER_ELECTIVE}

# Germany uses a lower pediatric age cutoff than the other member countries.
PEDIATRIC_CUTOFF_DEFAULT = 18.0
PEDIATRIC_CUTOFF = {"DE": 16.0}


class InputError(ValueError):
    """Malformed caller input (bad biomarker, unknown blood group, ...)."""


class ConfigError(ValueError):
    """Invalid configuration or parameter file."""


class ParameterFault(ValueError):
    """A loaded statistical parameter produced an impossible value."""


class EngineFault(RuntimeError):
    """Internal consistency violation detected during a simulation run."""


def parse_timestamp(text: str) -> float:
    """Parse an ISO-8601 date or datetime into float days since epoch."""
    try:
        dt = datetime.fromisoformat(text.strip())
    except ValueError as exc:
        raise InputError(f"bad timestamp {text!r}: {exc}") from None
    return (dt - EPOCH).total_seconds() / 86400.0


def format_timestamp(days: float) -> str:
    """Render float epoch-days as an ISO-8601 string, second resolution."""
    dt = EPOCH + timedelta(seconds=round(days * 86400.0))
    if dt.hour == 0 and dt.minute == 0 and dt.second == 0:
        return dt.date().isoformat()
    return dt.isoformat(sep=" ")


def round_half_up(x: float) -> int:
    return math.floor(x + 0.5)


def is_pediatric(age_years: float, country: str) -> bool:
    return age_years < PEDIATRIC_CUTOFF.get(country, PEDIATRIC_CUTOFF_DEFAULT)


# ---------------------------------------------------------------------------
# MELD formulas


@dataclass(frozen=True)
class MeldFormula:
    """Config-driven MELD-type score.

    raw = scale * (intercept + sum_b coef_b * ln(capped b)
                   + na_coefficient * revna
                   + na_creatinine_interaction * revna * ln(capped crea))
    with revna = clamp(na_reference - sodium, 0, revna_max). The dialysis
    substitution replaces creatinine before capping. The final score is the
    raw value rounded half-up and clamped to `clamp`.
    """

    name: str
    intercept: float
    coefficients: dict[str, float]  # keys: creatinine, bilirubin, inr
    caps: dict[str, tuple[float, Optional[float]]]
    clamp: tuple[int, int]
    scale: float = 1.0
    dialysis_creatinine: Optional[float] = None
    na_reference: float = 138.6
    revna_max: float = 13.6
    na_coefficient: float = 0.0
    na_creatinine_interaction: float = 0.0

    def __post_init__(self):
        lo, hi = self.clamp
        if lo > hi:
            raise ConfigError(f"formula {self.name}: empty clamp range {self.clamp}")
        for biom, (low, high) in self.caps.items():
            if high is not None and low > high:
                raise ConfigError(f"formula {self.name}: caps for {biom} inverted")

    def _capped(self, biomarker: str, value: float) -> float:
        low, high = self.caps.get(biomarker, (None, None))
        if low is not None and value < low:
            value = low
        if high is not None and value > high:
            value = high
        return value

    def raw_score(self, creatinine: float, bilirubin: float, inr: float,
                  dialysis: bool = False, sodium: Optional[float] = None) -> float:
        for label, v in (("creatinine", creatinine), ("bilirubin", bilirubin), ("inr", inr)):
            if not v > 0:
                raise InputError(f"nonpositive {label}: {v}")
        if dialysis and self.dialysis_creatinine is not None:
            creatinine = self.dialysis_creatinine
        crea = self._capped("creatinine", creatinine)
        bili = self._capped("bilirubin", bilirubin)
        inr_c = self._capped("inr", inr)
        total = (self.intercept
                 + self.coefficients.get("creatinine", 0.0) * math.log(crea)
                 + self.coefficients.get("bilirubin", 0.0) * math.log(bili)
                 + self.coefficients.get("inr", 0.0) * math.log(inr_c))
        if self.na_coefficient or self.na_creatinine_interaction:
            na = self.na_reference if sodium is None else sodium
            revna = min(max(self.na_reference - na, 0.0), self.revna_max)
            total += (self.na_coefficient * revna
                      + self.na_creatinine_interaction * revna * math.log(crea))
        return self.scale * total

    def score(self, creatinine: float, bilirubin: float, inr: float,
              dialysis: bool = False, sodium: Optional[float] = None) -> int:
        raw = self.raw_score(creatinine, bilirubin, inr, dialysis, sodium)
        lo, hi = self.clamp
        return min(max(round_half_up(raw), lo), hi)


def compute_meld(formula: MeldFormula, creatinine: float, bilirubin: float,
                 inr: float, dialysis: bool = False,
                 sodium: Optional[float] = None) -> int:
    return formula.score(creatinine, bilirubin, inr, dialysis, sodium)


UNOS_MELD = MeldFormula(
    name="unos",
    intercept=0.643,
    scale=10.0,
    coefficients={"creatinine": 0.957, "bilirubin": 0.378, "inr": 1.120},
    caps={"creatinine": (1.0, 4.0), "bilirubin": (1.0, None), "inr": (1.0, None)},
    dialysis_creatinine=4.0,
    clamp=(6, 40),
)

REMELD_NA = MeldFormula(
    name="remeld_na",
    intercept=7.85,
    scale=1.0,
    coefficients={"creatinine": 9.03, "bilirubin": 2.97, "inr": 9.52},
    caps={"creatinine": (1.0, None), "bilirubin": (1.0, None), "inr": (1.0, None)},
    dialysis_creatinine=None,
    na_coefficient=0.392,
    na_creatinine_interaction=-0.351,
    clamp=(1, 36),
)


def compute_remeld_na(creatinine: float, bilirubin: float, inr: float,
                      sodium: Optional[float] = None,
                      formula: MeldFormula = REMELD_NA) -> int:
    """Sodium-expanded score; missing sodium imputed at the reference level."""
    return formula.score(creatinine, bilirubin, inr, dialysis=False, sodium=sodium)


# ---------------------------------------------------------------------------
# 90-day survival curves


@dataclass(frozen=True)
class SurvivalCurve90:
    """90-day survival as a function of an integer severity score.

    survival90(s) = base ** exp(slope * (s - 10)); `score_range` is the
    clamp range of the score scale the curve is paired with.
    """

    name: str
    base: float
    slope: float
    score_range: tuple[int, int] = (6, 40)

    def __post_init__(self):
        if not 0.0 < self.base < 1.0:
            raise ConfigError(f"curve {self.name}: base must be in (0,1)")
        if not self.slope > 0.0:
            raise ConfigError(f"curve {self.name}: slope must be > 0")


def survival90(curve: SurvivalCurve90, score: float) -> float:
    return curve.base ** math.exp(curve.slope * (score - 10.0))


def equivalent_to_meld(curve: SurvivalCurve90, mortality_equivalent: float) -> int:
    """Translate a 90-day mortality equivalent to the curve's score scale.

    Inverts the curve continuously and rounds half-up, which reproduces the
    published anchor points (10%/15%/25%/50% -> 20/22/25/30 under the
    default curve); the result is clamped to the curve's score range.
    """
    if not 0.0 < mortality_equivalent < 1.0:
        raise InputError(f"mortality equivalent outside (0,1): {mortality_equivalent}")
    ratio = math.log(1.0 - mortality_equivalent) / math.log(curve.base)
    exact = 10.0 + math.log(ratio) / curve.slope
    lo, hi = curve.score_range
    return min(max(round_half_up(exact), lo), hi)


UNOS_CURVE = SurvivalCurve90("unos", base=0.98037, slope=0.17557, score_range=(6, 40))
REMELD_NA_CURVE = SurvivalCurve90("remeld_na", base=0.9745, slope=0.2216, score_range=(1, 36))


# ---------------------------------------------------------------------------
# Blood-group eligibility


@dataclass(frozen=True)
class BloodGroupRules:
    """Donor->candidate eligibility, separate for elective and HU/ACO tiers."""

    elective: dict[str, frozenset[str]]
    hu_aco: dict[str, frozenset[str]]

    def eligible(self, donor_bg: str, candidate_bg: str, tier: int) -> bool:
        if donor_bg not in BLOOD_GROUPS:
            raise InputError(f"unknown donor blood group {donor_bg!r}")
        if candidate_bg not in BLOOD_GROUPS:
            raise InputError(f"unknown candidate blood group {candidate_bg!r}")
        table = self.hu_aco if tier in (TIER_HU, TIER_ACO) else self.elective
        return candidate_bg in table[donor_bg]


def _bg_table(mapping: dict[str, list[str]]) -> dict[str, frozenset[str]]:
    return {bg: frozenset(mapping.get(bg, [bg])) for bg in BLOOD_GROUPS}


# Elective default: identical groups plus A-donor -> AB-candidate.
# HU/ACO default: full ABO compatibility.
DEFAULT_BG_RULES = BloodGroupRules(
    elective=_bg_table({"O": ["O"], "A": ["A", "AB"], "B": ["B"], "AB": ["AB"]}),
    hu_aco=_bg_table({"O": ["O", "A", "B", "AB"], "A": ["A", "AB"],
                      "B": ["B", "AB"], "AB": ["AB"]}),
)


def blood_group_eligible(rules: BloodGroupRules, donor_bg: str,
                         candidate_bg: str, tier: int) -> bool:
    return rules.eligible(donor_bg, candidate_bg, tier)


# ---------------------------------------------------------------------------
# Input-stream records


@dataclass(frozen=True)
class DonorRecord:
    donor_id: str
    reported_at: float
    country: str
    center: str
    hospital: str
    blood_group: str
    age: float
    weight_kg: float
    height_cm: float
    death_cause: str
    dcd: bool
    covariates: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.blood_group not in BLOOD_GROUPS:
            raise InputError(f"donor {self.donor_id}: bad blood group {self.blood_group!r}")
        if self.age < 0:
            raise InputError(f"donor {self.donor_id}: negative age")


@dataclass(frozen=True)
class CandidateRegistration:
    patient_id: str
    registration_id: str
    listed_at: float
    country: str
    center: str
    blood_group: str
    age_at_listing: float
    weight_kg: float
    sex: str
    disease_group: str
    is_retransplant: bool

    def __post_init__(self):
        if self.blood_group not in BLOOD_GROUPS:
            raise InputError(
                f"registration {self.registration_id}: bad blood group {self.blood_group!r}")

    def age_at(self, when: float) -> float:
        return self.age_at_listing + (when - self.listed_at) / 365.25

    def pediatric_at(self, when: float) -> bool:
        return is_pediatric(self.age_at(when), self.country)


@dataclass(frozen=True)
class AllocationProfile:
    """Standing refusal criteria a candidate attaches to incoming offers."""

    max_donor_age: Optional[float] = None
    accept_dcd: bool = True
    accept_split: bool = True
    accept_rescue_offer: bool = True
    min_donor_weight: Optional[float] = None
    max_donor_weight: Optional[float] = None

    def __post_init__(self):
        if (self.min_donor_weight is not None and self.max_donor_weight is not None
                and self.min_donor_weight > self.max_donor_weight):
            raise InputError("profile: min_donor_weight > max_donor_weight")

    def admits(self, donor: DonorRecord) -> bool:
        if self.max_donor_age is not None and donor.age > self.max_donor_age:
            return False
        if donor.dcd and not self.accept_dcd:
            return False
        if self.min_donor_weight is not None and donor.weight_kg < self.min_donor_weight:
            return False
        if self.max_donor_weight is not None and donor.weight_kg > self.max_donor_weight:
            return False
        return True


STATUS_KINDS = ("BIOMARKER", "EXCEPTION", "URGENCY", "PROFILE", "EXIT")


@dataclass(frozen=True)
class StatusUpdate:
    registration_id: str
    at: float
    kind: str
    # BIOMARKER
    creatinine: Optional[float] = None
    bilirubin: Optional[float] = None
    inr: Optional[float] = None
    dialysis: bool = False
    sodium: Optional[float] = None
    # EXCEPTION
    exception_id: Optional[str] = None
    exception_action: Optional[str] = None  # grant | upgrade | expire
    # URGENCY
    urgency: Optional[str] = None
    # PROFILE
    profile: Optional[AllocationProfile] = None
    # EXIT
    exit_reason: Optional[str] = None  # R | D
    synthetic: bool = False


class CandidateState:
    """Mutable waitlist record owned by a single simulation run."""

    __slots__ = (
        "registration", "urgency", "urgency_since", "creatinine", "bilirubin",
        "inr", "dialysis", "sodium", "lab_meld", "exceptions", "anchor",
        "profile", "exited", "exit_reason", "exit_at", "transplanted_at",
        "meld_national", "meld_international", "removed_from_sim",
        "pediatric_until", "region",
    )

    def __init__(self, registration: CandidateRegistration):
        self.registration = registration
        self.urgency = "NT"
        self.urgency_since = registration.listed_at
        self.creatinine = None
        self.bilirubin = None
        self.inr = None
        self.dialysis = False
        self.sodium = None
        self.lab_meld: Optional[int] = None
        self.exceptions: dict[str, object] = {}
        self.anchor = registration.listed_at
        self.profile: Optional[AllocationProfile] = None
        self.exited = False
        self.exit_reason: Optional[str] = None
        self.exit_at: Optional[float] = None
        self.transplanted_at: Optional[float] = None
        # Cached match-MELDs; kept current by the engine's status application.
        self.meld_national = 0
        self.meld_international = 0
        self.removed_from_sim = False
        # Timestamp at which the candidate stops being pediatric.
        cutoff = PEDIATRIC_CUTOFF.get(registration.country, PEDIATRIC_CUTOFF_DEFAULT)
        self.pediatric_until = registration.listed_at + \
            (cutoff - registration.age_at_listing) * 365.25
        self.region = registration.center

    @property
    def active(self) -> bool:
        return not self.exited and not self.removed_from_sim and self.urgency != "NT"

    def waiting_days(self, now: float, tier: int) -> int:
        since = self.urgency_since if tier in (TIER_HU, TIER_ACO) else self.anchor
        return int(now - since) if now > since else 0
