"""Counterfactual completion of candidate status streams.

Registrations whose stream ends in a transplant (no terminal D/R status)
get future statuses copied from a similar still-at-risk registration:
members of a matched risk set, sampled by inverse transform from an
IPCW-weighted Kaplan-Meier curve of remaining 90-day survival. Copied
tails may themselves end in a transplant, in which case imputation chains
until every stream terminates. Linear predictors and IPCW weights are
precomputed inputs; fitting them is out of scope here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import EngineFault, InputError, StatusUpdate


def weighted_km(times: Sequence[float], events: Sequence[int],
                weights: Sequence[float]) -> list[tuple[float, float]]:
    """Weighted product-limit estimator; returns (event time, survival) jumps.

    Risk and event sums are weight totals; with unit weights this is the
    textbook Kaplan-Meier curve.
    """
    n = len(times)
    if not (n == len(events) == len(weights)):
        raise InputError("weighted_km: length mismatch")
    for t, w in zip(times, weights):
        if t < 0:
            raise InputError("weighted_km: negative time")
        if not w > 0:
            raise InputError("weighted_km: weights must be positive")
    order = sorted(range(n), key=lambda i: times[i])
    total = float(sum(weights))
    curve: list[tuple[float, float]] = []
    s = 1.0
    i = 0
    at_risk = total
    while i < n:
        t = times[order[i]]
        d = 0.0
        removed = 0.0
        while i < n and times[order[i]] == t:
            idx = order[i]
            removed += weights[idx]
            if events[idx]:
                d += weights[idx]
            i += 1
        if d > 0.0 and at_risk > 0.0:
            s *= max(0.0, 1.0 - d / at_risk)
            curve.append((t, s))
        at_risk -= removed
    return curve


def km_survival_at(curve: list[tuple[float, float]], t: float) -> float:
    s = 1.0
    for jump_t, jump_s in curve:
        if jump_t <= t:
            s = jump_s
        else:
            break
    return s


# ---------------------------------------------------------------------------
# Cases and risk sets


@dataclass(frozen=True)
class ImputationCase:
    """Snapshot of one registration at its censor/event time.

    `censor_day` is days since listing; `event` is true when the stream
    already ends in D/R (such rows only serve as pool members).
    """

    registration_id: str
    censor_day: float
    event: bool
    eta: float
    ipcw_weight: float
    is_retransplant: bool
    urgency: str
    nse_group: str
    disease_group: str
    urgency_reason: str
    dialysis: bool
    country: str
    pediatric: bool
    lab_meld: float
    age: float
    exception_meld: float

    def __post_init__(self):
        if not math.isfinite(self.eta):
            raise InputError(f"case {self.registration_id}: non-finite eta")
        if self.censor_day < 0:
            raise InputError(f"case {self.registration_id}: negative censor day")
        if not self.ipcw_weight > 0:
            raise InputError(f"case {self.registration_id}: nonpositive weight")


# Discrete match criteria in relaxation order (criterion 7 dropped first).
DISCRETE_CRITERIA = (
    "is_retransplant",   # 1
    "urgency",           # 2
    "nse_group",         # 3
    "disease_group",     # 4
    "urgency_reason",    # 5
    "dialysis",          # 6
    "country",           # 7
)


@dataclass(frozen=True)
class ImputationConfig:
    target_hu: int = 35
    target_non_hu: int = 50
    eta_caliper: float = 0.50
    lab_meld_caliper: float = 3.0
    age_caliper: float = 10.0
    exception_meld_caliper: float = 3.0
    widen_factor: float = 1.5
    widen_stages: int = 3
    tau_days: float = 90.0
    max_chain_depth: int = 25


@dataclass
class RiskSet:
    case_id: str
    members: list[ImputationCase]
    stage: str
    chosen: Optional[ImputationCase] = None

    def remaining_time(self, member: ImputationCase, case_censor: float) -> float:
        return member.censor_day - case_censor


def _passes(case: ImputationCase, member: ImputationCase,
            criteria: Sequence[str], widen: float,
            cfg: ImputationConfig) -> bool:
    if member.pediatric != case.pediatric:
        return False
    if abs(member.eta - case.eta) >= cfg.eta_caliper:
        return False
    for name in criteria:
        if getattr(member, name) != getattr(case, name):
            return False
    if abs(member.lab_meld - case.lab_meld) > cfg.lab_meld_caliper * widen:
        return False
    if abs(member.age - case.age) > cfg.age_caliper * widen:
        return False
    if case.urgency != "HU":
        if abs(member.exception_meld - case.exception_meld) > cfg.exception_meld_caliper * widen:
            return False
    return True


def build_risk_set(case: ImputationCase, pool: Sequence[ImputationCase],
                   cfg: ImputationConfig = ImputationConfig()) -> Optional[RiskSet]:
    """Adaptive matching: drop discrete criteria 7->1, then widen calipers.

    Pediatric status and the eta caliper are never relaxed. Returns the
    first stage reaching the target size, the widest non-empty stage
    otherwise, or None when the case is unmatchable.
    """
    target = cfg.target_hu if case.urgency == "HU" else cfg.target_non_hu
    at_risk = [m for m in pool
               if m.registration_id != case.registration_id
               and m.censor_day > case.censor_day]
    stages: list[tuple[str, Sequence[str], float]] = []
    for drop in range(len(DISCRETE_CRITERIA) + 1):
        kept = DISCRETE_CRITERIA[:len(DISCRETE_CRITERIA) - drop]
        stages.append((f"discrete_{len(kept)}", kept, 1.0))
    for w in range(1, cfg.widen_stages + 1):
        stages.append((f"widen_{w}", (), cfg.widen_factor ** w))

    last_nonempty: Optional[RiskSet] = None
    for label, criteria, widen in stages:
        members = [m for m in at_risk if _passes(case, m, criteria, widen, cfg)]
        if len(members) >= target:
            return RiskSet(case.registration_id, members, label)
        if members:
            last_nonempty = RiskSet(case.registration_id, members, label)
    return last_nonempty


def impute_future(case: ImputationCase, risk_set: RiskSet, u: float,
                  rng: np.random.Generator,
                  cfg: ImputationConfig = ImputationConfig()) -> tuple[ImputationCase, str]:
    """Choose the member whose future is copied onto the case.

    Inverse transform on the IPCW-weighted KM curve of remaining time,
    truncated at the 90-day horizon; if the curve never falls to u within
    the horizon, sample among the members still at risk past the horizon
    with probability proportional to their IPCW weight.
    """
    members = risk_set.members
    c = case.censor_day
    times = [m.censor_day - c for m in members]
    events = [1 if m.event else 0 for m in members]
    weights = [m.ipcw_weight for m in members]
    curve = weighted_km(times, events, weights)
    t_star = None
    for t, s in curve:
        if t <= cfg.tau_days and s <= u:
            t_star = t
            break
    if t_star is not None:
        tied = [m for m, t, e in zip(members, times, events) if e and t == t_star]
        w = np.array([m.ipcw_weight for m in tied])
        idx = int(rng.choice(len(tied), p=w / w.sum())) if len(tied) > 1 else 0
        risk_set.chosen = tied[idx]
        return tied[idx], "event"
    survivors = [m for m, t in zip(members, times) if t > cfg.tau_days]
    branch = "horizon"
    if not survivors:
        # Degenerate risk set: everyone censored within the horizon.
        survivors = members
        branch = "fallback"
    w = np.array([m.ipcw_weight for m in survivors])
    idx = int(rng.choice(len(survivors), p=w / w.sum()))
    risk_set.chosen = survivors[idx]
    return survivors[idx], branch


# ---------------------------------------------------------------------------
# Stream completion


@dataclass
class CompletionReport:
    imputed: int = 0
    chained: int = 0
    unmatchable: list[str] = field(default_factory=list)
    branches: dict[str, int] = field(default_factory=dict)


def complete_stream(
    listed_at: dict[str, float],
    statuses: dict[str, list[StatusUpdate]],
    cases: dict[str, ImputationCase],
    seed: int,
    cfg: ImputationConfig = ImputationConfig(),
) -> tuple[dict[str, list[StatusUpdate]], CompletionReport]:
    """Complete every stream so it ends in D or R.

    `cases` holds one row per registration (event rows are pool support).
    Different seeds give different completed streams, which is how the
    repeated-run design gets distinct input files.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFF, 0x1394]))
    report = CompletionReport()
    pool = list(cases.values())
    completed: dict[str, list[StatusUpdate]] = {}

    def ends_terminal(reg_id: str) -> bool:
        st = statuses.get(reg_id, [])
        return bool(st) and st[-1].kind == "EXIT"

    def complete(reg_id: str, depth: int) -> list[StatusUpdate]:
        if reg_id in completed:
            return completed[reg_id]
        own = list(statuses.get(reg_id, []))
        if ends_terminal(reg_id):
            completed[reg_id] = own
            return own
        if depth > cfg.max_chain_depth:
            raise EngineFault(
                f"imputation chain deeper than {cfg.max_chain_depth} at {reg_id}")
        case = cases.get(reg_id)
        if case is None:
            raise InputError(f"registration {reg_id} ends unterminated but has no case row")
        risk_set = build_risk_set(case, pool, cfg)
        if risk_set is None:
            report.unmatchable.append(reg_id)
            completed[reg_id] = own
            return own
        member, branch = impute_future(case, risk_set, float(rng.random()), rng, cfg)
        report.branches[branch] = report.branches.get(branch, 0) + 1
        report.imputed += 1
        if depth > 0:
            report.chained += 1
        member_stream = complete(member.registration_id, depth + 1)
        base = listed_at[reg_id]
        member_base = listed_at[member.registration_id]
        tail = []
        for s in member_stream:
            day = s.at - member_base
            if day > case.censor_day:
                tail.append(StatusUpdate(
                    registration_id=reg_id, at=base + day, kind=s.kind,
                    creatinine=s.creatinine, bilirubin=s.bilirubin, inr=s.inr,
                    dialysis=s.dialysis, sodium=s.sodium,
                    exception_id=s.exception_id,
                    exception_action=s.exception_action,
                    urgency=s.urgency, profile=s.profile,
                    exit_reason=s.exit_reason, synthetic=True))
        completed[reg_id] = own + tail
        return completed[reg_id]

    for reg_id in sorted(statuses):
        complete(reg_id, 0)
    return completed, report
