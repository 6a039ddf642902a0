"""Match-list construction: who is offered a graft, in which order.

Offers are ordered lexicographically by a seven-component match code:
tier, layer, obligation rank, match-MELD, locality, waiting time, listing
date. Layers come from a declarative per-donor-country rule table so that
allocation variants are data, not code. Candidates eligible for
center-driven offers collapse into a single center offer whose code equals
its best member's code.
"""

from __future__ import annotations

import operator
from dataclasses import dataclass
from typing import Optional

from .core import (
    BloodGroupRules,
    CandidateState,
    ConfigError,
    DonorRecord,
    SurvivalCurve90,
    TIER_ACO,
    TIER_BY_URGENCY,
    TIER_ELECTIVE,
    TIER_HU,
)
from .obligations import ObligationLedger, party

OBLIGATION_SENTINEL = 1_000_000

TIER_LABELS = {TIER_HU: "HU", TIER_ACO: "ACO", TIER_ELECTIVE: "elective"}

# Context fields available to layer-rule predicates.
_FIELDS = ("candidate_country", "candidate_center", "same_country", "same_center",
           "same_region", "pediatric", "bg_identical", "has_obligation",
           "is_retransplant", "urgency", "tier")
_FIELD_INDEX = {name: i for i, name in enumerate(_FIELDS)}

_OPS = {
    "eq": operator.eq, "ne": operator.ne,
    "ge": operator.ge, "le": operator.le,
    "gt": operator.gt, "lt": operator.lt,
    "in": lambda a, b: a in b, "not_in": lambda a, b: a not in b,
}

# Operators usable on numpy arrays in the vectorized engine path; 'in' and
# 'not_in' need np.isin there and are translated by name.
_SCALAR_ONLY = {"in", "not_in"}


def _parse_value(op: str, raw: str):
    raw = raw.strip()
    if op in ("in", "not_in"):
        return frozenset(v.strip() for v in raw.split("|"))
    low = raw.lower()
    if low in ("true", "false"):
        return low == "true"
    try:
        return float(raw)
    except ValueError:
        return raw


@dataclass(frozen=True)
class LayerRule:
    order: int
    conditions: tuple[tuple[int, object, object], ...]  # (field index, op fn, value)
    layer: int
    center_driven: bool

    def matches(self, ctx: tuple) -> bool:
        for idx, op, value in self.conditions:
            if not op(ctx[idx], value):
                return False
        return True


class LayerRuleTable:
    """Ordered first-match-wins layer rules, grouped by donor country.

    Rows sharing (donor_country, order) are AND-ed into one rule. Every
    group must end in a catch-all (condition-free) rule so the mapping is
    total; '*' rules apply to donors from countries without their own group.
    """

    def __init__(self, rows: list[dict]):
        grouped: dict[str, dict[int, dict]] = {}
        for row in rows:
            dc = row["donor_country"].strip() or "*"
            order = int(row["rule_order"])
            rule = grouped.setdefault(dc, {}).setdefault(
                order, {"conds": [], "layer": int(row["layer"]),
                        "center_driven": str(row.get("center_driven", "")).strip().lower()
                        in ("1", "true", "yes")})
            if int(row["layer"]) != rule["layer"]:
                raise ConfigError(
                    f"layer rules: conflicting layer for {dc} rule {order}")
            f = row.get("field", "").strip()
            if f:
                if f not in _FIELD_INDEX:
                    raise ConfigError(f"layer rules: unknown field {f!r}")
                op = row.get("comparator", "eq").strip() or "eq"
                if op not in _OPS:
                    raise ConfigError(f"layer rules: unknown comparator {op!r}")
                rule["conds"].append((_FIELD_INDEX[f], _OPS[op],
                                      _parse_value(op, str(row.get("value", "")))))
        self._tables: dict[str, list[LayerRule]] = {}
        for dc, by_order in grouped.items():
            rules = [LayerRule(order, tuple(spec["conds"]), spec["layer"], spec["center_driven"])
                     for order, spec in sorted(by_order.items())]
            if not rules or rules[-1].conditions:
                raise ConfigError(
                    f"layer rules for {dc}: last rule must be a catch-all")
            self._tables[dc] = rules
        if "*" not in self._tables:
            raise ConfigError("layer rules: need a '*' default group")

    def rules_for(self, donor_country: str) -> list[LayerRule]:
        return self._tables.get(donor_country, self._tables["*"])


# Default table: obligation-based offers (center-driven) above domestic
# pediatric above domestic above international pediatric above international.
DEFAULT_LAYER_ROWS = [
    {"donor_country": "*", "rule_order": 1, "field": "has_obligation",
     "comparator": "eq", "value": "true", "layer": 0, "center_driven": "true"},
    {"donor_country": "*", "rule_order": 2, "field": "same_country",
     "comparator": "eq", "value": "true", "layer": 1, "center_driven": ""},
    {"donor_country": "*", "rule_order": 2, "field": "pediatric",
     "comparator": "eq", "value": "true", "layer": 1, "center_driven": ""},
    {"donor_country": "*", "rule_order": 3, "field": "same_country",
     "comparator": "eq", "value": "true", "layer": 2, "center_driven": ""},
    {"donor_country": "*", "rule_order": 4, "field": "pediatric",
     "comparator": "eq", "value": "true", "layer": 3, "center_driven": ""},
    {"donor_country": "*", "rule_order": 5, "field": "", "comparator": "",
     "value": "", "layer": 4, "center_driven": ""},
]


@dataclass(frozen=True)
class MatchCode:
    """Seven-component sort key; comparison is lexicographic in this order."""

    tier: int
    layer: int
    obligation_rank: int
    match_meld: int
    locality: int
    waiting_days: int
    listed_at: float

    def sort_key(self) -> tuple:
        return (self.tier, self.layer, self.obligation_rank, -self.match_meld,
                self.locality, -self.waiting_days, self.listed_at)


class MatchRecord:
    """One row of the match list: a patient-driven or center-driven offer."""

    __slots__ = ("code_key", "tier", "layer", "obligation_rank", "match_meld",
                 "locality", "waiting_days", "listed_at", "state", "members",
                 "center", "rank", "via_obligation")

    def __init__(self, code_key, tier, layer, obligation_rank, match_meld,
                 locality, waiting_days, listed_at, state=None, members=None,
                 center=None, via_obligation=False):
        self.code_key = code_key
        self.tier = tier
        self.layer = layer
        self.obligation_rank = obligation_rank
        self.match_meld = match_meld
        self.locality = locality
        self.waiting_days = waiting_days
        self.listed_at = listed_at
        self.state = state          # patient offers
        self.members = members      # center offers: best-first CandidateStates
        self.center = center
        self.rank = 0
        self.via_obligation = via_obligation

    @property
    def is_center_offer(self) -> bool:
        return self.members is not None

    def code(self) -> MatchCode:
        return MatchCode(self.tier, self.layer, self.obligation_rank,
                         self.match_meld, self.locality, self.waiting_days,
                         self.listed_at)

    def best_state(self) -> CandidateState:
        return self.members[0] if self.members is not None else self.state


def update_meld_caches(state: CandidateState, curve: SurvivalCurve90,
                       min_score: int) -> None:
    """Recompute the cached national/international match-MELDs."""
    lab = state.lab_meld if state.lab_meld is not None else min_score
    nat = intl = lab
    for exc in state.exceptions.values():
        s = exc.meld(curve, state.lab_meld)
        if s > nat:
            nat = s
        if exc.definition.is_pediatric and s > intl:
            intl = s
    state.meld_national = nat
    state.meld_international = intl


def match_meld(state: CandidateState, national: bool) -> int:
    """Match-MELD in context: (N)SE scores count nationally/via obligations,
    PED scores count everywhere."""
    return state.meld_national if national else state.meld_international


def obligation_rank(ledger: ObligationLedger, donor_party, candidate_country: str,
                    candidate_center: str, blood_group: str) -> int:
    """1-based rank among the donor party's creditors (oldest first);
    sentinel when the candidate's party holds no obligation."""
    ranks = ledger.creditor_ranks(donor_party, blood_group)
    if not ranks:
        return OBLIGATION_SENTINEL
    p = party(candidate_country, candidate_center)
    r = ranks.get(p)
    if r is None and p[1] is not None:
        r = ranks.get((candidate_country, None))
    return r if r is not None else OBLIGATION_SENTINEL


def build_match_list(donor: DonorRecord, states, ledger: ObligationLedger,
                     rules: LayerRuleTable, bg_rules: BloodGroupRules,
                     regions: Optional[dict[str, str]] = None,
                     now: Optional[float] = None,
                     donor_region: Optional[str] = None) -> list[MatchRecord]:
    """Ordered offers for one donor.

    `states` is an iterable of CandidateState with current meld caches;
    candidates appear iff their status is active (T/HU/ACO) and their blood
    group is eligible for their tier. Profile filtering happens later, at
    offer time. Candidate regions come from the `regions` map when given,
    else from the precomputed `state.region`.
    """
    now = donor.reported_at if now is None else now
    regions = regions or {}
    donor_bg = donor.blood_group
    donor_country = donor.country
    donor_party = party(donor_country, donor.center)
    if donor_region is None:
        donor_region = regions.get(donor.center, donor.center)
    is_german_donor = donor_country == "DE"
    creditor_ranks = ledger.creditor_ranks(donor_party, donor_bg)
    elective_ok = bg_rules.elective[donor_bg]
    hu_ok = bg_rules.hu_aco[donor_bg]
    donor_rules = rules.rules_for(donor_country)

    keyed: list[tuple] = []
    center_groups: dict[tuple, list] = {}
    seq = 0
    use_region_map = bool(regions)
    for st in states:
        if st.exited or st.removed_from_sim:
            continue
        tier = TIER_BY_URGENCY.get(st.urgency)
        if tier is None:
            continue
        reg = st.registration
        bg = reg.blood_group
        if bg not in (hu_ok if tier != TIER_ELECTIVE else elective_ok):
            continue

        if creditor_ranks:
            obl_rank = obligation_rank(ledger, donor_party, reg.country,
                                       reg.center, donor_bg)
        else:
            obl_rank = OBLIGATION_SENTINEL
        has_obl = obl_rank != OBLIGATION_SENTINEL

        if tier == TIER_ELECTIVE:
            same_country = reg.country == donor_country
            mm = st.meld_national if same_country or has_obl else st.meld_international
            region = regions.get(reg.center, reg.center) if use_region_map else st.region
            ctx = (reg.country, reg.center, same_country,
                   reg.center == donor.center, region == donor_region,
                   now < st.pediatric_until, bg == donor_bg, has_obl,
                   reg.is_retransplant, st.urgency, "elective")
            layer = 0
            center_driven = False
            for rule in donor_rules:
                if rule.matches(ctx):
                    layer = rule.layer
                    center_driven = rule.center_driven
                    break
            if is_german_donor:
                if reg.country != "DE":
                    locality = 2
                else:
                    locality = 0 if region == donor_region else 1
            else:
                locality = 0
            since = st.anchor
        else:
            mm = 0
            layer = 0
            locality = 0
            center_driven = False
            since = st.urgency_since

        wd = int(now - since) if now > since else 0
        key = (tier, layer, obl_rank, -mm, locality, -wd, reg.listed_at,
               reg.registration_id)
        if center_driven:
            center_groups.setdefault((reg.center, layer), []).append(
                (key, st, mm, obl_rank, has_obl))
        else:
            keyed.append((key, seq, MatchRecord(
                key, tier, layer, obl_rank, mm, locality, wd, reg.listed_at,
                state=st, via_obligation=has_obl)))
            seq += 1

    for (center, layer), group in center_groups.items():
        group.sort(key=lambda t: t[0])
        best_key, best_state, best_mm, best_rank, best_obl = group[0]
        rec = MatchRecord(
            best_key, best_key[0], layer, best_rank, best_mm, best_key[4],
            -best_key[5], best_key[6], members=[g[1] for g in group],
            center=center, via_obligation=best_obl)
        keyed.append((best_key, seq, rec))
        seq += 1

    keyed.sort(key=lambda t: (t[0], t[1]))
    records = []
    for rank, (_, _, rec) in enumerate(keyed, start=1):
        rec.rank = rank
        records.append(rec)
    return records


def record_row(rec: MatchRecord, curve: SurvivalCurve90) -> dict:
    """Human-readable row (tier/offered-to/MELD breakdown) for one record."""
    st = rec.best_state()
    reg = st.registration
    ped = [e.meld(curve, st.lab_meld) for e in st.exceptions.values()
           if e.definition.is_pediatric]
    nse = [e.meld(curve, st.lab_meld) for e in st.exceptions.values()
           if not e.definition.is_pediatric]
    return {
        "tier": TIER_LABELS[rec.tier],
        "offered_to": f"center ({len(rec.members)} patients)" if rec.is_center_offer else "patient",
        "country": reg.country,
        "rank": rec.rank,
        "match_meld": rec.match_meld if rec.tier == TIER_ELECTIVE else None,
        "lab_meld": st.lab_meld,
        "ped_meld": max(ped) if ped else None,
        "nse_meld": max(nse) if nse else None,
        "blood_group": reg.blood_group,
    }
