"""Post-transplant outcomes: failure times, relisting, synthetic re-listings.

A transplant gets a Weibull time-to-failure T (inverse transform, scale =
linear predictor of donor/recipient covariates), then a relative relisting
time R/T drawn from bucketed step curves. Recipients relisting inside the
window get a synthetic re-registration: their own static data joined with
the status updates of the closest real re-listing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import CandidateRegistration, ConfigError, ParameterFault, StatusUpdate
from .offering import Term

HU_RELIST_DAYS = 14.0  # relistings within two weeks qualify for HU status


class WeibullModel:
    """Shape/scale tables for the failure-time distribution.

    S(t|x) = exp(-(t / lambda)^k) with lambda the linear predictor of the
    covariates; shapes are per-country for the elective group and pooled
    ('*') for HU, with '*' required as a fallback for both groups.
    """

    def __init__(self, shapes: dict[tuple[str, str], float],
                 intercepts: dict[str, float],
                 terms: dict[str, tuple[Term, ...]]):
        for (group, country), k in shapes.items():
            if not k > 0:
                raise ConfigError(f"weibull shape for ({group},{country}) must be > 0")
        for group in ("hu", "elective"):
            if (group, "*") not in shapes:
                raise ConfigError(f"weibull parameters: missing shape ({group},*)")
            if group not in intercepts:
                raise ConfigError(f"weibull parameters: missing coefficients for {group}")
        self.shapes = shapes
        self.intercepts = intercepts
        self.terms = terms

    def shape(self, group: str, country: str) -> float:
        return self.shapes.get((group, country), self.shapes[(group, "*")])

    def scale(self, group: str, ctx: dict) -> float:
        lam = self.intercepts[group]
        for t in self.terms.get(group, ()):
            lam += t.contribution(ctx)
        return lam


def sample_failure_time(model: WeibullModel, group: str, country: str,
                        ctx: dict, u: float) -> float:
    """Days until post-transplant death/retransplant event; T = lam*(-ln u)^(1/k)."""
    if not 0.0 < u < 1.0:
        raise ParameterFault(f"uniform draw outside (0,1): {u}")
    lam = model.scale(group, ctx)
    if not lam > 0.0:
        raise ParameterFault(
            f"weibull scale {lam} <= 0 for group {group} with context {ctx}")
    k = model.shape(group, country)
    return lam * (-math.log(u)) ** (1.0 / k)


class RelistingCurves:
    """Step functions of P[R/T > t], one per time-to-failure bucket.

    Each curve is a list of (t, survival) jumps with t strictly increasing
    in [0, 1) and survival nonincreasing from 1; the last survival value is
    the never-relist mass.
    """

    def __init__(self, bucket_bounds: list[float],
                 curves: list[list[tuple[float, float]]]):
        if len(curves) != len(bucket_bounds) + 1:
            raise ConfigError("relisting curves: need len(bounds)+1 curves")
        for bi, curve in enumerate(curves):
            prev_t, prev_s = -1.0, 1.0
            if not curve:
                raise ConfigError(f"relisting curve {bi}: empty")
            for t, s in curve:
                if not 0.0 <= t < 1.0:
                    raise ConfigError(f"relisting curve {bi}: t={t} outside [0,1)")
                if t <= prev_t:
                    raise ConfigError(f"relisting curve {bi}: t not increasing")
                if s > prev_s or s < 0.0:
                    raise ConfigError(f"relisting curve {bi}: survival not nonincreasing")
                prev_t, prev_s = t, s
        self.bucket_bounds = list(bucket_bounds)
        self.curves = [list(c) for c in curves]

    def bucket_index(self, failure_days: float) -> int:
        for i, bound in enumerate(self.bucket_bounds):
            if failure_days <= bound:
                return i
        return len(self.bucket_bounds)

    def terminal_mass(self, bucket: int) -> float:
        return self.curves[bucket][-1][1]

    def sample_relative(self, failure_days: float, u: float) -> Optional[float]:
        """Smallest jump t with survival <= u; None means never relists."""
        for t, s in self.curves[self.bucket_index(failure_days)]:
            if s <= u:
                return t
        return None


def sample_relist_time(curves: RelistingCurves, failure_days: float,
                       u: float) -> Optional[float]:
    """Days until re-listing, strictly below the failure time; None = never."""
    t = curves.sample_relative(failure_days, u)
    return None if t is None else t * failure_days


# ---------------------------------------------------------------------------
# Synthetic re-registrations


@dataclass(frozen=True)
class PoolEntry:
    """A real re-listing: static attributes plus day-offset status updates."""

    entry_id: str
    country: str
    age_at_listing: float
    relist_days: float   # R_k: transplant -> re-listing
    event_days: float    # T_k = R_k + days from re-listing to terminal status
    statuses: tuple[StatusUpdate, ...]  # .at holds day offsets from listing

    @property
    def hu_eligible(self) -> bool:
        return self.relist_days <= HU_RELIST_DAYS


class ReregistrationPool:
    def __init__(self, entries: list[PoolEntry]):
        self.entries = list(entries)

    def __len__(self):
        return len(self.entries)


def _mahalanobis_order(filtered: list[PoolEntry], r: float, t: float) -> list[PoolEntry]:
    pts = np.array([[e.relist_days, e.event_days] for e in filtered], dtype=float)
    target = np.array([r, t], dtype=float)
    if len(filtered) >= 3:
        cov = np.cov(pts, rowvar=False)
        det = np.linalg.det(cov)
        if np.isfinite(det) and det > 1e-12:
            inv = np.linalg.inv(cov)
            d = pts - target
            dist = np.einsum("ij,jk,ik->i", d, inv, d)
        else:
            dist = None
    else:
        dist = None
    if dist is None:
        # Degenerate covariance: scaled Euclidean.
        std = pts.std(axis=0)
        std[std == 0.0] = 1.0
        d = (pts - target) / std
        dist = (d * d).sum(axis=1)
    order = sorted(range(len(filtered)), key=lambda i: (dist[i], filtered[i].entry_id))
    return [filtered[i] for i in order]


def match_reregistration(pool: ReregistrationPool, country: str, age: float,
                         relist_days: float, failure_days: float,
                         rng: np.random.Generator,
                         m: int = 5) -> tuple[Optional[PoolEntry], str]:
    """Pick one of the m nearest real re-listings; returns (entry, stage).

    Hard filter: HU-eligibility of the re-listing must agree. Then country,
    |age diff| < 20y, |R diff| < 1y, |T diff| < 1y; if empty, the country
    criterion is dropped, then the age criterion; an empty pool after that
    means the recipient is treated as never relisting.
    """
    hu = relist_days <= HU_RELIST_DAYS

    def base(e: PoolEntry) -> bool:
        return (e.hu_eligible == hu
                and abs(e.relist_days - relist_days) < 365.0
                and abs(e.event_days - failure_days) < 365.0)

    stages = (
        ("full", lambda e: base(e) and e.country == country and abs(e.age_at_listing - age) < 20.0),
        ("no_country", lambda e: base(e) and abs(e.age_at_listing - age) < 20.0),
        ("no_age", base),
    )
    for stage, pred in stages:
        filtered = [e for e in pool.entries if pred(e)]
        if filtered:
            nearest = _mahalanobis_order(filtered, relist_days, failure_days)[:m]
            return nearest[int(rng.integers(len(nearest)))], stage
    return None, "unmatched"


def build_synthetic_reregistration(
    recipient: CandidateRegistration, transplant_at: float, relist_days: float,
    failure_days: float, pool: ReregistrationPool, rng: np.random.Generator,
    sequence: int,
) -> Optional[tuple[CandidateRegistration, list[StatusUpdate]]]:
    """Recipient statics + matched re-listing's statuses, or None.

    Profile updates are considered patient-specific and are not copied;
    exception updates are (some exceptions exist precisely for
    re-transplantations).
    """
    listed_at = transplant_at + relist_days
    entry, stage = match_reregistration(
        pool, recipient.country, recipient.age_at(listed_at), relist_days,
        failure_days, rng)
    if entry is None:
        return None
    registration = CandidateRegistration(
        patient_id=recipient.patient_id,
        registration_id=f"{recipient.registration_id}:R{sequence}",
        listed_at=listed_at,
        country=recipient.country,
        center=recipient.center,
        blood_group=recipient.blood_group,
        age_at_listing=recipient.age_at(listed_at),
        weight_kg=recipient.weight_kg,
        sex=recipient.sex,
        disease_group=recipient.disease_group,
        is_retransplant=True,
    )
    statuses = []
    for s in entry.statuses:
        if s.kind == "PROFILE":
            continue
        statuses.append(StatusUpdate(
            registration_id=registration.registration_id,
            at=listed_at + s.at, kind=s.kind,
            creatinine=s.creatinine, bilirubin=s.bilirubin, inr=s.inr,
            dialysis=s.dialysis, sodium=s.sodium,
            exception_id=s.exception_id, exception_action=s.exception_action,
            urgency=s.urgency, exit_reason=s.exit_reason, synthetic=True))
    return registration, statuses
