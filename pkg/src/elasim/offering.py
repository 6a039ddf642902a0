"""Graft offering: two-stage Bernoulli acceptance, profile skipping,
offer counting and the rescue-allocation approximation.

Patient-driven offers draw center willingness once per (center, donor) from
a donor-characteristics model; only willing centers generate patient-level
draws. Center-driven offers are a single center-level draw whose acceptance
places the center's best member. When the counted number of offers reaches
a sampled maximum, allocation deviates: rescue-excluding profiles drop out
and German regional / Belgian local candidates get absolute priority.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

from .core import CandidateState, ConfigError, DonorRecord, ParameterFault, TIER_ELECTIVE
from .matchlist import MatchRecord
from .rng import RngStreams

STAGES = ("center", "patient")
TIER_CLASSES = ("hu_aco", "elective")
AGE_CLASSES = ("adult", "pediatric")

# Covariates resolvable from the donor/candidate/match context. Anything
# else in a coefficient file is a load-time error; "donor_x_<name>" refers
# to extra columns of the donor file.
CONTEXT_COVARIATES = frozenset({
    "donor_age", "donor_weight", "donor_height", "donor_dcd", "donor_bg",
    "donor_country", "donor_death_cause",
    "candidate_age", "candidate_sex", "candidate_bg", "candidate_country",
    "candidate_weight", "lab_meld", "match_meld", "pediatric",
    "is_retransplant", "disease_group", "urgency", "waiting_days", "rank",
    "same_country", "same_center", "bg_identical", "has_exception",
    "split_offer", "rescue", "weight_difference",
})


def validate_covariate(name: str) -> None:
    if name not in CONTEXT_COVARIATES and not name.startswith("donor_x_"):
        raise ConfigError(f"unresolvable covariate {name!r} in coefficient file")


@dataclass(frozen=True)
class Term:
    covariate: str
    level: Optional[str]  # None -> linear; "knot=K" -> hinge; else indicator
    coefficient: float

    def contribution(self, ctx: dict) -> float:
        v = ctx.get(self.covariate)
        if v is None:
            return 0.0
        if self.level is None:
            return self.coefficient * float(v)
        if self.level.startswith("knot="):
            knot = float(self.level[5:])
            x = float(v) - knot
            return self.coefficient * x if x > 0.0 else 0.0
        return self.coefficient if str(v) == self.level else 0.0


@dataclass(frozen=True)
class LogisticModel:
    intercept: float
    terms: tuple[Term, ...] = ()

    def __post_init__(self):
        for t in self.terms:
            validate_covariate(t.covariate)

    def linear_predictor(self, ctx: dict) -> float:
        lp = self.intercept
        for t in self.terms:
            lp += t.contribution(ctx)
        return lp

    def probability(self, ctx: dict) -> float:
        return 1.0 / (1.0 + math.exp(-self.linear_predictor(ctx)))


def acceptance_probability(model: LogisticModel, ctx: dict) -> float:
    return model.probability(ctx)


class AcceptanceModelSet:
    """The eight acceptance models keyed by (stage, tier class, age class)."""

    def __init__(self, models: dict[tuple[str, str, str], LogisticModel]):
        for stage in STAGES:
            for tc in TIER_CLASSES:
                for ac in AGE_CLASSES:
                    if (stage, tc, ac) not in models:
                        raise ConfigError(
                            f"acceptance coefficients: missing selector ({stage},{tc},{ac})")
        self._models = models

    def select(self, stage: str, tier: int, pediatric: bool) -> LogisticModel:
        tc = "elective" if tier == TIER_ELECTIVE else "hu_aco"
        return self._models[(stage, tc, "pediatric" if pediatric else "adult")]


@dataclass(frozen=True)
class RescueModel:
    """Sampled maximum offer count before rescue allocation triggers.

    Discrete per-offer stopping hazards, shifted proportionally by a donor
    linear predictor; the final hazard must be 1 so the distribution sums
    to one over a bounded support.
    """

    hazards: tuple[float, ...]
    terms: tuple[Term, ...] = ()

    def __post_init__(self):
        if not self.hazards:
            raise ConfigError("rescue model: empty hazard table")
        for h in self.hazards:
            if not 0.0 <= h <= 1.0:
                raise ConfigError("rescue model: hazards must lie in [0,1]")
        if self.hazards[-1] != 1.0:
            raise ConfigError("rescue model: last hazard must be 1.0")
        for t in self.terms:
            validate_covariate(t.covariate)

    def sample_max_offers(self, donor_ctx: dict, u: float) -> int:
        lp = 0.0
        for t in self.terms:
            lp += t.contribution(donor_ctx)
        hr = math.exp(lp)
        survival = 1.0
        for j, h in enumerate(self.hazards, start=1):
            survival *= (1.0 - h) ** hr
            if 1.0 - survival >= u:
                return j
        return len(self.hazards)


def donor_context(donor: DonorRecord) -> dict:
    ctx = {
        "donor_age": donor.age,
        "donor_weight": donor.weight_kg,
        "donor_height": donor.height_cm,
        "donor_dcd": 1.0 if donor.dcd else 0.0,
        "donor_bg": donor.blood_group,
        "donor_country": donor.country,
        "donor_death_cause": donor.death_cause,
    }
    for k, v in donor.covariates.items():
        ctx[f"donor_x_{k}"] = v
    return ctx


def offer_context(donor_ctx: dict, donor: DonorRecord, st: CandidateState,
                  rec: MatchRecord, now: float, split_offer: bool,
                  rescue: bool) -> dict:
    reg = st.registration
    ctx = dict(donor_ctx)
    ctx.update(
        candidate_age=reg.age_at(now),
        candidate_sex=reg.sex,
        candidate_bg=reg.blood_group,
        candidate_country=reg.country,
        candidate_weight=reg.weight_kg,
        lab_meld=st.lab_meld if st.lab_meld is not None else 0,
        match_meld=rec.match_meld,
        pediatric=1.0 if reg.pediatric_at(now) else 0.0,
        is_retransplant=1.0 if reg.is_retransplant else 0.0,
        disease_group=reg.disease_group,
        urgency=st.urgency,
        waiting_days=rec.waiting_days,
        rank=rec.rank,
        same_country=1.0 if reg.country == donor.country else 0.0,
        same_center=1.0 if reg.center == donor.center else 0.0,
        bg_identical=1.0 if reg.blood_group == donor.blood_group else 0.0,
        has_exception=1.0 if st.exceptions else 0.0,
        split_offer=1.0 if split_offer else 0.0,
        rescue=1.0 if rescue else 0.0,
        weight_difference=donor.weight_kg - reg.weight_kg,
    )
    return ctx


class OfferCounter:
    """Appendix-style offer counting toward the rescue trigger.

    A center-level rejection counts once. A candidate-level rejection
    counts only when the offer was profile-compatible and fewer than five
    rejections from the same center have been counted so far.
    """

    __slots__ = ("counted", "_per_center")

    def __init__(self):
        self.counted = 0
        self._per_center: dict[str, int] = {}

    def center_rejection(self, center: str) -> bool:
        self.counted += 1
        return True

    def candidate_rejection(self, center: str, profile_compatible: bool) -> bool:
        if not profile_compatible:
            return False
        prior = self._per_center.get(center, 0)
        if prior >= 5:
            return False
        self._per_center[center] = prior + 1
        self.counted += 1
        return True


def enter_rescue(remainder: list[MatchRecord], donor: DonorRecord) -> list[MatchRecord]:
    """Rescue-mode remainder: drop rescue-excluders, re-prioritize locally.

    German donors put regional candidates first, Belgian donors local
    (same-center) candidates first; order is otherwise stable.
    """
    kept: list[MatchRecord] = []
    for rec in remainder:
        if rec.is_center_offer:
            members = [m for m in rec.members
                       if m.profile is None or m.profile.accept_rescue_offer]
            if not members:
                continue
            rec.members = members
            kept.append(rec)
        else:
            prof = rec.state.profile
            if prof is None or prof.accept_rescue_offer:
                kept.append(rec)
    if donor.country == "DE":
        return ([r for r in kept if r.locality == 0]
                + [r for r in kept if r.locality != 0])
    if donor.country == "BE":
        def local(rec: MatchRecord) -> bool:
            center = rec.center if rec.is_center_offer else rec.state.registration.center
            return center == donor.center
        return [r for r in kept if local(r)] + [r for r in kept if not local(r)]
    return kept


@dataclass
class OfferOutcome:
    acceptor: Optional[MatchRecord] = None
    acceptor_state: Optional[CandidateState] = None
    acceptance_p: float = 0.0
    rescue_triggered: bool = False
    forced: bool = False
    counted_offers: int = 0
    max_offers: int = 0
    trail: list = field(default_factory=list)
    willingness: dict = field(default_factory=dict)


def offer_graft(records: list[MatchRecord], donor: DonorRecord,
                models: AcceptanceModelSet, rescue_model: Optional[RescueModel],
                streams: RngStreams, now: float, *,
                force_placement: bool = False, split_offer: bool = False,
                willingness: Optional[dict] = None,
                exclude: Optional[set] = None) -> OfferOutcome:
    """Walk the match list until a draw accepts; returns the outcome.

    `split_offer` marks the re-offer of a partial graft: candidates must
    accept splits, and rescue counting is not re-armed. `willingness`
    carries center decisions already drawn for this donor.
    """
    out = OfferOutcome(willingness=willingness if willingness is not None else {})
    donor_ctx = donor_context(donor)
    counter = OfferCounter()
    rescue_active = rescue_model is not None and not split_offer
    if rescue_active:
        max_offers = rescue_model.sample_max_offers(
            donor_ctx, streams.uniform("rescue", donor.donor_id))
    else:
        max_offers = 0
    out.max_offers = max_offers
    exclude = exclude or set()

    queue = list(records)
    rescue_mode = False
    i = 0
    while i < len(queue):
        if rescue_active and not rescue_mode and counter.counted >= max_offers:
            queue = enter_rescue(queue[i:], donor)
            i = 0
            rescue_mode = True
            out.rescue_triggered = True
            out.trail.append(("rescue_entered", "", 0.0, 0.0, counter.counted))
            continue
        rec = queue[i]
        i += 1
        if rec.is_center_offer:
            members = [m for m in rec.members
                       if not m.exited and not m.removed_from_sim
                       and m.registration.registration_id not in exclude]
            if split_offer:
                members = [m for m in members
                           if m.profile is None or m.profile.accept_split]
            if not members:
                continue
            st = members[0]
            reg = st.registration
            model = models.select("center", rec.tier, reg.pediatric_at(now))
            ctx = offer_context(donor_ctx, donor, st, rec, now, split_offer, rescue_mode)
            p = model.probability(ctx)
            u = streams.uniform("center_willingness", donor.donor_id)
            if u < p:
                out.acceptor, out.acceptor_state, out.acceptance_p = rec, st, p
                out.trail.append(("center_offer_accept", rec.center, p, u, counter.counted))
                return out
            counter.center_rejection(rec.center)
            out.trail.append(("center_offer_reject", rec.center, p, u, counter.counted))
            continue

        st = rec.state
        reg = st.registration
        if st.exited or st.removed_from_sim or reg.registration_id in exclude:
            continue
        profile_ok = st.profile is None or st.profile.admits(donor)
        if split_offer and st.profile is not None and not st.profile.accept_split:
            profile_ok = False
        if rec.tier == TIER_ELECTIVE and not profile_ok:
            out.trail.append(("skip_profile", reg.registration_id, 0.0, 0.0, counter.counted))
            continue

        center = reg.center
        willing = out.willingness.get(center)
        if willing is None:
            model = models.select("center", rec.tier, reg.pediatric_at(now))
            ctx = offer_context(donor_ctx, donor, st, rec, now, split_offer, rescue_mode)
            p = model.probability(ctx)
            u = streams.uniform("center_willingness", donor.donor_id)
            willing = u < p
            out.willingness[center] = willing
            if not willing:
                counter.center_rejection(center)
                out.trail.append(("center_reject", center, p, u, counter.counted))
            else:
                out.trail.append(("center_accept", center, p, u, counter.counted))
        if not willing:
            out.trail.append(("skip_center_unwilling", reg.registration_id,
                              0.0, 0.0, counter.counted))
            continue

        model = models.select("patient", rec.tier, reg.pediatric_at(now))
        ctx = offer_context(donor_ctx, donor, st, rec, now, split_offer, rescue_mode)
        p = model.probability(ctx)
        u = streams.uniform("patient_acceptance", donor.donor_id)
        if u < p:
            out.acceptor, out.acceptor_state, out.acceptance_p = rec, st, p
            out.trail.append(("patient_accept", reg.registration_id, p, u, counter.counted))
            return out
        counter.candidate_rejection(center, profile_ok)
        out.trail.append(("patient_reject", reg.registration_id, p, u, counter.counted))

    out.counted_offers = counter.counted
    if force_placement and not split_offer:
        best = None
        for rec in records:
            st = rec.best_state()
            if st.exited or st.removed_from_sim:
                continue
            if st.registration.registration_id in exclude:
                continue
            if rec.tier == TIER_ELECTIVE and st.profile is not None and not st.profile.admits(donor):
                continue
            model = models.select("patient", rec.tier, st.registration.pediatric_at(now))
            ctx = offer_context(donor_ctx, donor, st, rec, now, split_offer, False)
            p = model.probability(ctx)
            if best is None or p > best[0]:
                best = (p, rec, st)
        if best is not None:
            out.acceptance_p, out.acceptor, out.acceptor_state = best
            out.forced = True
    out.counted_offers = counter.counted
    return out


def split_decision(model: Optional[LogisticModel], donor: DonorRecord,
                   acceptor: CandidateState, ctx: dict, u: float) -> bool:
    """Whether the accepting center splits the graft; profiles override."""
    if model is None:
        return False
    if acceptor.profile is not None and not acceptor.profile.accept_split:
        return False
    return u < model.probability(ctx)


def sample_split(model: Optional[LogisticModel], donor: DonorRecord,
                 acceptor: CandidateState, rec: MatchRecord, now: float,
                 streams: RngStreams) -> bool:
    ctx = offer_context(donor_context(donor), donor, acceptor, rec, now, False, False)
    u = streams.uniform("split", donor.donor_id)
    return split_decision(model, donor, acceptor, ctx, u)
