"""The discrete-event core: clock, future event set, and the dispatch loop.

Patient events apply one status update and only then schedule the next one
(processing a status can synthesize new ones, e.g. exception
recertifications). Donor events build a match list, run the offering
process, record transplants or a discard, simulate post-transplant
outcomes, and update the obligation ledger. A run is strictly
single-threaded and a pure function of (bundle, parameters, seed).
"""

from __future__ import annotations

import heapq
from bisect import insort
from dataclasses import dataclass, field
from typing import Optional

from .core import (
    BLOOD_GROUPS,
    CandidateState,
    DonorRecord,
    EngineFault,
    InputError,
    StatusUpdate,
    TIER_ACO,
    TIER_ELECTIVE,
    TIER_HU,
    TIER_BY_URGENCY,
    format_timestamp,
)
from .config import ModelParameterSet
from .exception_scores import ActiveException, synthesize_recertifications
from .ingestion import InputBundle
from .matchlist import (
    TIER_LABELS,
    build_match_list,
    update_meld_caches,
)
from .obligations import ObligationLedger, party, party_label
from .offering import donor_context, offer_context, offer_graft, sample_split
from .post_transplant import (
    ReregistrationPool,
    build_synthetic_reregistration,
    sample_failure_time,
    sample_relist_time,
)
from .rng import RngStreams

EVENT_DONOR = 0
EVENT_PATIENT = 1


@dataclass
class SimulationOutput:
    transplants: list[dict] = field(default_factory=list)
    discards: list[dict] = field(default_factory=list)
    final_states: list[dict] = field(default_factory=list)
    ledger_rows: list[dict] = field(default_factory=list)
    counters: dict = field(default_factory=dict)


class Simulation:
    """One simulation run; owns all mutable state."""

    def __init__(self, params: ModelParameterSet, streams: RngStreams,
                 window: tuple[float, float], *, force_placement: bool = False,
                 allow_split: bool = True,
                 pool: Optional[ReregistrationPool] = None):
        self.params = params
        self.streams = streams
        self.window = window
        self.force_placement = force_placement
        self.allow_split = allow_split
        self.pool = pool
        self.states: dict[str, CandidateState] = {}
        self.pending: dict[str, list[StatusUpdate]] = {}
        self.cursor: dict[str, int] = {}
        self.last_applied: dict[str, float] = {}
        self.donors: dict[str, DonorRecord] = {}
        self.by_bg: dict[str, dict[str, CandidateState]] = {bg: {} for bg in BLOOD_GROUPS}
        self.ledger = ObligationLedger()
        self.fes: list[tuple] = []
        self._seq = 0
        self.synthetic_regs: set[str] = set()
        self._relist_seq = 0
        self.out = SimulationOutput()
        self.counters = {
            "dropped_relistings": 0, "patient_events": 0, "donor_events": 0,
            "relists_scheduled": 0, "relists_unmatched": 0,
            "skipped_removed_events": 0,
        }

    # -- setup ---------------------------------------------------------------

    def _push(self, at: float, kind: int, subject: str) -> None:
        self._seq += 1
        heapq.heappush(self.fes, (at, kind, self._seq, subject))

    def add_registration(self, reg, statuses: list[StatusUpdate],
                         synthetic: bool = False) -> CandidateState:
        if reg.registration_id in self.states:
            raise EngineFault(f"duplicate registration {reg.registration_id}")
        st = CandidateState(reg)
        st.region = self.params.regions.get(reg.center, reg.center)
        update_meld_caches(st, self.params.exception_curve, self.params.min_score)
        self.states[reg.registration_id] = st
        self.pending[reg.registration_id] = list(statuses)
        self.cursor[reg.registration_id] = 0
        self.last_applied[reg.registration_id] = float("-inf")
        self.by_bg[reg.blood_group][reg.registration_id] = st
        if synthetic:
            self.synthetic_regs.add(reg.registration_id)
        return st

    def validate_exception_ids(self) -> None:
        known = self.params.exception_definitions
        for rid, seq in self.pending.items():
            for upd in seq:
                if upd.kind == "EXCEPTION" and upd.exception_id not in known:
                    raise InputError(
                        f"registration {rid}: unknown exception id {upd.exception_id!r}")

    # -- status application ----------------------------------------------------

    def apply_status(self, st: CandidateState, upd: StatusUpdate, now: float) -> None:
        rid = st.registration.registration_id
        if st.exited:
            raise EngineFault(f"status update for exited registration {rid}")
        if upd.at < self.last_applied[rid]:
            raise EngineFault(f"status updates out of time order for {rid}")
        self.last_applied[rid] = upd.at
        params = self.params
        meld_before = st.meld_national

        kind = upd.kind
        if kind == "BIOMARKER":
            st.creatinine = upd.creatinine
            st.bilirubin = upd.bilirubin
            st.inr = upd.inr
            st.dialysis = upd.dialysis
            st.sodium = upd.sodium
            st.lab_meld = params.lab_formula.score(
                upd.creatinine, upd.bilirubin, upd.inr, upd.dialysis, upd.sodium)
        elif kind == "EXCEPTION":
            definition = params.exception_definitions.get(upd.exception_id)
            if definition is None:
                raise EngineFault(f"unknown exception id {upd.exception_id!r}")
            action = upd.exception_action
            if action == "expire":
                st.exceptions.pop(upd.exception_id, None)
            else:
                active = st.exceptions.get(upd.exception_id)
                if action == "grant" or active is None:
                    active = ActiveException(definition, granted_at=now)
                    st.exceptions[upd.exception_id] = active
                else:
                    active.upgrade(now)
                self._autocontinue(st, active, rid)
        elif kind == "URGENCY":
            if upd.urgency != st.urgency:
                st.urgency_since = now
            st.urgency = upd.urgency
        elif kind == "PROFILE":
            st.profile = upd.profile
        elif kind == "EXIT":
            st.exited = True
            st.exit_reason = upd.exit_reason
            st.exit_at = now
            self.by_bg[st.registration.blood_group].pop(rid, None)
            return
        else:
            raise EngineFault(f"unknown status kind {kind!r}")

        if kind in ("BIOMARKER", "EXCEPTION"):
            update_meld_caches(st, params.exception_curve, params.min_score)
            # Waiting time counts consecutive days at or above the current
            # match-MELD: any strict increase restarts the clock.
            if st.meld_national > meld_before:
                st.anchor = now

    def _autocontinue(self, st: CandidateState, active: ActiveException, rid: str) -> None:
        tail = self.pending[rid][self.cursor[rid]:]
        synth = synthesize_recertifications(
            active, st.registration, tail, until=self.window[1])
        if synth:
            merged = sorted(tail + synth, key=lambda s: s.at)
            self.pending[rid] = self.pending[rid][:self.cursor[rid]] + merged

    # -- event handlers ---------------------------------------------------------

    def _handle_patient(self, rid: str, now: float) -> None:
        st = self.states[rid]
        if st.removed_from_sim:
            # Recipient of a transplant: remaining events were removed lazily.
            self.counters["skipped_removed_events"] += 1
            return
        self.counters["patient_events"] += 1
        i = self.cursor[rid]
        seq = self.pending[rid]
        if i >= len(seq):
            raise EngineFault(f"patient event without pending status for {rid}")
        upd = seq[i]
        self.cursor[rid] = i + 1
        self.apply_status(st, upd, now)
        if st.exited:
            return
        seq = self.pending[rid]  # may have been extended by synthesis
        if self.cursor[rid] < len(seq):
            self._push(seq[self.cursor[rid]].at, EVENT_PATIENT, rid)

    def _eligible_states(self, donor: DonorRecord):
        rules = self.params.bg_rules
        groups = rules.elective[donor.blood_group] | rules.hu_aco[donor.blood_group]
        for bg in BLOOD_GROUPS:
            if bg in groups:
                yield from self.by_bg[bg].values()

    def _handle_donor(self, donor: DonorRecord, now: float) -> None:
        self.counters["donor_events"] += 1
        params = self.params
        records = build_match_list(
            donor, self._eligible_states(donor), self.ledger, params.layer_rules,
            params.bg_rules, now=now,
            donor_region=params.regions.get(donor.center, donor.center))
        if not records:
            self._record_discard(donor, now, 0, 0, False, "no_candidates")
            return
        out = offer_graft(records, donor, params.acceptance, params.rescue_model,
                          self.streams, now, force_placement=self.force_placement)
        if out.acceptor is None:
            self._record_discard(donor, now, out.counted_offers, out.max_offers,
                                 out.rescue_triggered, "all_rejected")
            return
        row1 = self._transplant(donor, out.acceptor, out.acceptor_state, now, out,
                                split=False)
        if (self.allow_split and params.split_model is not None
                and sample_split(params.split_model, donor, out.acceptor_state,
                                 out.acceptor, now, self.streams)):
            row1["split"] = True
            out2 = offer_graft(
                records, donor, params.acceptance, None, self.streams, now,
                split_offer=True, willingness=out.willingness,
                exclude={out.acceptor_state.registration.registration_id})
            if out2.acceptor is not None:
                self._transplant(donor, out2.acceptor, out2.acceptor_state, now,
                                 out2, split=True)

    def _resolve_creditor(self, donor_party, reg, blood_group: str):
        exact = party(reg.country, reg.center)
        if self.ledger.has_obligation(donor_party, exact, blood_group):
            return exact
        country_level = (reg.country, None)
        if self.ledger.has_obligation(donor_party, country_level, blood_group):
            return country_level
        return None

    def _transplant(self, donor: DonorRecord, rec, st: CandidateState, now: float,
                    out, split: bool) -> dict:
        params = self.params
        reg = st.registration
        tier = rec.tier

        donor_party = party(donor.country, donor.center)
        recipient_party = party(reg.country, reg.center)
        creditor = self._resolve_creditor(donor_party, reg, donor.blood_group) \
            if rec.via_obligation else None
        via_obligation = creditor is not None
        self.ledger.record_transplant(
            donor_party, creditor if via_obligation else recipient_party,
            donor.blood_group, tier, via_obligation, now)

        group = "hu" if tier in (TIER_HU, TIER_ACO) else "elective"
        ctx = offer_context(donor_context(donor), donor, st, rec, now, split, False)
        failure_days = sample_failure_time(
            params.weibull, group, reg.country, ctx,
            self.streams.uniform("posttx_failure", donor.donor_id))
        relist_days = sample_relist_time(
            params.relisting, failure_days,
            self.streams.uniform("posttx_relist", donor.donor_id))

        relist_scheduled = False
        if (relist_days is not None and now + relist_days <= self.window[1]
                and self.pool is not None and len(self.pool)):
            self._relist_seq += 1
            synth = build_synthetic_reregistration(
                reg, now, relist_days, failure_days, self.pool,
                self.streams.stream("posttx_match", donor.donor_id),
                sequence=self._relist_seq)
            if synth is None:
                self.counters["relists_unmatched"] += 1
            else:
                new_reg, new_statuses = synth
                new_st = self.add_registration(new_reg, new_statuses, synthetic=True)
                if new_statuses:
                    self._push(new_statuses[0].at, EVENT_PATIENT,
                               new_reg.registration_id)
                relist_scheduled = True
                self.counters["relists_scheduled"] += 1

        st.removed_from_sim = True
        st.transplanted_at = now
        self.by_bg[reg.blood_group].pop(reg.registration_id, None)

        if tier in (TIER_HU, TIER_ACO):
            mechanism = "hu_aco"
        elif via_obligation:
            mechanism = "obligation"
        elif out.rescue_triggered or out.forced:
            mechanism = "rescue"
        else:
            mechanism = "meld"
        if reg.center == donor.center:
            geography = "local"
        elif (params.regions.get(reg.center, reg.center)
              == params.regions.get(donor.center, donor.center)):
            geography = "regional"
        elif reg.country == donor.country:
            geography = "national"
        else:
            geography = "abroad"

        exception_melds = [e.meld(params.exception_curve, st.lab_meld)
                           for e in st.exceptions.values()]
        ids = st.exceptions.keys()
        if any(i.startswith("SE-HCC") for i in ids):
            exception_type = "hcc"
        elif any(i.startswith("NSE") for i in ids):
            exception_type = "nse"
        elif any(i.startswith("SE") for i in ids):
            exception_type = "other_se"
        elif ids:
            exception_type = "ped"
        else:
            exception_type = "none"
        row = {
            "donor_id": donor.donor_id,
            "at": format_timestamp(now),
            "registration_id": reg.registration_id,
            "patient_id": reg.patient_id,
            "donor_country": donor.country,
            "donor_center": donor.center,
            "donor_blood_group": donor.blood_group,
            "donor_age": donor.age,
            "donor_dcd": int(donor.dcd),
            "recipient_country": reg.country,
            "recipient_center": reg.center,
            "recipient_blood_group": reg.blood_group,
            "tier": TIER_LABELS[tier],
            "mechanism": mechanism,
            "geography": geography,
            "rank": rec.rank,
            "match_meld": rec.match_meld if tier == TIER_ELECTIVE else "",
            "lab_meld": st.lab_meld if st.lab_meld is not None else "",
            "exception_meld": max(exception_melds) if exception_melds else "",
            "exception_type": exception_type,
            "urgency": st.urgency,
            "sex": reg.sex,
            "pediatric": int(reg.pediatric_at(now)),
            "age": round(reg.age_at(now), 2),
            "disease_group": reg.disease_group,
            "is_retransplant": int(reg.is_retransplant),
            "synthetic_relisting": int(reg.registration_id in self.synthetic_regs),
            "via_obligation": int(via_obligation),
            "rescue": int(out.rescue_triggered),
            "forced": int(out.forced),
            "split": split,
            "acceptance_p": round(out.acceptance_p, 6),
            "failure_days": round(failure_days, 2),
            "relist_days": round(relist_days, 2) if relist_days is not None else "",
            "relist_scheduled": int(relist_scheduled),
        }
        self.out.transplants.append(row)
        return row

    def _record_discard(self, donor: DonorRecord, now: float, counted: int,
                        max_offers: int, rescue: bool, reason: str) -> None:
        self.out.discards.append({
            "donor_id": donor.donor_id,
            "at": format_timestamp(now),
            "donor_country": donor.country,
            "donor_blood_group": donor.blood_group,
            "counted_offers": counted,
            "max_offers": max_offers,
            "rescue_triggered": int(rescue),
            "reason": reason,
        })

    # -- main loop -----------------------------------------------------------

    def run(self) -> SimulationOutput:
        end = self.window[1]
        fes = self.fes
        while fes:
            at, kind, _, subject = heapq.heappop(fes)
            if at > end:
                break
            if kind == EVENT_PATIENT:
                self._handle_patient(subject, at)
            else:
                self._handle_donor(self.donors[subject], at)
        self._finalize()
        return self.out

    def _finalize(self) -> None:
        for rid in sorted(self.states):
            st = self.states[rid]
            reg = st.registration
            if st.transplanted_at is not None:
                disposition = "transplanted"
            elif st.exited:
                disposition = "death" if st.exit_reason == "D" else "removed"
            else:
                disposition = "waiting"
            self.out.final_states.append({
                "registration_id": rid,
                "patient_id": reg.patient_id,
                "country": reg.country,
                "center": reg.center,
                "blood_group": reg.blood_group,
                "sex": reg.sex,
                "listed_at": format_timestamp(reg.listed_at),
                "is_retransplant": int(reg.is_retransplant),
                "synthetic": int(rid in self.synthetic_regs),
                "disposition": disposition,
                "exit_at": format_timestamp(st.exit_at) if st.exit_at is not None
                           else (format_timestamp(st.transplanted_at)
                                 if st.transplanted_at is not None else ""),
                "urgency": st.urgency,
                "lab_meld": st.lab_meld if st.lab_meld is not None else "",
                "match_meld": st.meld_national,
            })
        for o in sorted(self.ledger.all_open(),
                        key=lambda o: (o.blood_group, o.created_at, o.obligation_id)):
            self.out.ledger_rows.append({
                "blood_group": o.blood_group,
                "debtor": party_label(o.debtor),
                "creditor": party_label(o.creditor),
                "created_at": format_timestamp(o.created_at),
            })
        self.out.counters = dict(self.counters)


def initialize(bundle: InputBundle, params: ModelParameterSet,
               streams: RngStreams, *, force_placement: bool = False,
               allow_split: bool = True,
               pool: Optional[ReregistrationPool] = None) -> Simulation:
    """Build the initial system state and future event set from a bundle.

    Statuses dated at or before the window start are pre-applied so states
    match their real histories; later re-listings of patients already in
    the bundle are dropped (relisting is simulated instead); each donor and
    each registration with a future status gets exactly one initial event.
    """
    sim = Simulation(params, streams, bundle.window,
                     force_placement=force_placement, allow_split=allow_split,
                     pool=pool)
    start = bundle.window[0]

    primary: dict[str, str] = {}
    for rid, reg in bundle.registrations.items():
        cur = primary.get(reg.patient_id)
        if cur is None:
            primary[reg.patient_id] = rid
        else:
            held = bundle.registrations[cur]
            if (reg.listed_at, rid) < (held.listed_at, cur):
                primary[reg.patient_id] = rid
    kept_ids = set(primary.values())
    sim.counters["dropped_relistings"] = len(bundle.registrations) - len(kept_ids)

    for o in bundle.initial_obligations:
        sim.ledger.seed(
            party(o["debtor_country"], o["debtor_center"]),
            party(o["creditor_country"], o["creditor_center"]),
            o["blood_group"], o["created_at"])

    for rid in bundle.registrations:
        if rid not in kept_ids:
            continue
        reg = bundle.registrations[rid]
        sim.add_registration(reg, bundle.statuses[rid])
    sim.validate_exception_ids()

    for rid in list(sim.states):
        st = sim.states[rid]
        seq = sim.pending[rid]
        while sim.cursor[rid] < len(seq) and seq[sim.cursor[rid]].at <= start:
            upd = seq[sim.cursor[rid]]
            sim.cursor[rid] += 1
            sim.apply_status(st, upd, upd.at)
            seq = sim.pending[rid]
            if st.exited:
                break
        if not st.exited and sim.cursor[rid] < len(seq):
            sim._push(seq[sim.cursor[rid]].at, EVENT_PATIENT, rid)

    for donor in bundle.donors:
        sim.donors[donor.donor_id] = donor
        sim._push(donor.reported_at, EVENT_DONOR, donor.donor_id)

    return sim
