"""Input-stream parsing and window-scoped bundle assembly.

Three delimited streams drive a simulation: donors, registrations and
status updates. Loading validates schemas row by row (diagnostics carry
file and row number), excludes donors outside the window, keeps only
registrations with an active waitlist status inside it, and leaves
re-listing handling to initialization.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Optional

from .config import ModelParameterSet, read_rows, _parse_bool, _parse_optional_float
from .core import (
    AllocationProfile,
    CandidateRegistration,
    DonorRecord,
    InputError,
    StatusUpdate,
    parse_timestamp,
)
from .imputation import ImputationCase
from .post_transplant import PoolEntry, ReregistrationPool

DONOR_FIXED_COLUMNS = ("donor_id", "reported_at", "country", "center", "hospital",
                       "blood_group", "age", "weight_kg", "height_cm",
                       "death_cause", "dcd")

ACTIVE_URGENCIES = ("T", "HU", "ACO")


def _err(path: str, row: dict, message: str):
    raise InputError(f"{os.path.basename(path)} row {row.get('_row', '?')}: {message}")


@dataclass
class InputBundle:
    donors: list[DonorRecord]
    registrations: dict[str, CandidateRegistration]
    statuses: dict[str, list[StatusUpdate]]
    initial_obligations: list[dict]
    window: tuple[float, float]
    diagnostics: list[str] = field(default_factory=list)
    excluded_donors: int = 0
    excluded_registrations: int = 0


def load_donors(path: str, window: tuple[float, float]) -> tuple[list[DonorRecord], int]:
    donors = []
    excluded = 0
    seen = set()
    for row in read_rows(path):
        try:
            reported = parse_timestamp(row["reported_at"])
            covariates = {k: float(v) for k, v in row.items()
                          if k not in DONOR_FIXED_COLUMNS and k != "_row"
                          and v not in (None, "")}
            d = DonorRecord(
                donor_id=row["donor_id"].strip(),
                reported_at=reported,
                country=row["country"].strip(),
                center=row["center"].strip(),
                hospital=row["hospital"].strip(),
                blood_group=row["blood_group"].strip(),
                age=float(row["age"]),
                weight_kg=float(row["weight_kg"]),
                height_cm=float(row["height_cm"]),
                death_cause=row["death_cause"].strip(),
                dcd=_parse_bool(row, "dcd"),
                covariates=covariates,
            )
        except (KeyError, ValueError, InputError) as exc:
            _err(path, row, str(exc))
        if d.donor_id in seen:
            _err(path, row, f"duplicate donor_id {d.donor_id}")
        seen.add(d.donor_id)
        if window[0] <= d.reported_at <= window[1]:
            donors.append(d)
        else:
            excluded += 1
    donors.sort(key=lambda d: (d.reported_at, d.donor_id))
    return donors, excluded


def load_registrations(path: str) -> dict[str, CandidateRegistration]:
    regs = {}
    for row in read_rows(path):
        try:
            r = CandidateRegistration(
                patient_id=row["patient_id"].strip(),
                registration_id=row["registration_id"].strip(),
                listed_at=parse_timestamp(row["listed_at"]),
                country=row["country"].strip(),
                center=row["center"].strip(),
                blood_group=row["blood_group"].strip(),
                age_at_listing=float(row["age_at_listing"]),
                weight_kg=float(row["weight_kg"]),
                sex=row["sex"].strip(),
                disease_group=row["disease_group"].strip(),
                is_retransplant=_parse_bool(row, "is_retransplant"),
            )
        except (KeyError, ValueError, InputError) as exc:
            _err(path, row, str(exc))
        if r.registration_id in regs:
            _err(path, row, f"duplicate registration_id {r.registration_id}")
        regs[r.registration_id] = r
    return regs


def _status_from_row(path: str, row: dict) -> StatusUpdate:
    kind = row["kind"].strip()
    reg_id = row["registration_id"].strip()
    at = parse_timestamp(row["at"])
    if kind == "BIOMARKER":
        return StatusUpdate(
            reg_id, at, kind,
            creatinine=float(row["creatinine"]),
            bilirubin=float(row["bilirubin"]),
            inr=float(row["inr"]),
            dialysis=_parse_bool(row, "dialysis"),
            sodium=_parse_optional_float(row, "sodium"))
    if kind == "EXCEPTION":
        action = row["exception_action"].strip()
        if action not in ("grant", "upgrade", "expire"):
            _err(path, row, f"bad exception_action {action!r}")
        return StatusUpdate(reg_id, at, kind,
                            exception_id=row["exception_id"].strip(),
                            exception_action=action)
    if kind == "URGENCY":
        urg = row["urgency"].strip()
        if urg not in ("T", "NT", "HU", "ACO"):
            _err(path, row, f"bad urgency {urg!r}")
        return StatusUpdate(reg_id, at, kind, urgency=urg)
    if kind == "PROFILE":
        profile = AllocationProfile(
            max_donor_age=_parse_optional_float(row, "max_donor_age"),
            accept_dcd=_parse_bool(row, "accept_dcd", default=True),
            accept_split=_parse_bool(row, "accept_split", default=True),
            accept_rescue_offer=_parse_bool(row, "accept_rescue", default=True),
            min_donor_weight=_parse_optional_float(row, "min_donor_weight"),
            max_donor_weight=_parse_optional_float(row, "max_donor_weight"))
        return StatusUpdate(reg_id, at, kind, profile=profile)
    if kind == "EXIT":
        reason = row["exit_reason"].strip()
        if reason not in ("R", "D"):
            _err(path, row, f"bad exit_reason {reason!r}")
        return StatusUpdate(reg_id, at, kind, exit_reason=reason)
    _err(path, row, f"unknown status kind {kind!r}")


def load_statuses(path: str, registrations: dict[str, CandidateRegistration]
                  ) -> dict[str, list[StatusUpdate]]:
    statuses: dict[str, list[StatusUpdate]] = {rid: [] for rid in registrations}
    for row in read_rows(path):
        try:
            upd = _status_from_row(path, row)
        except (KeyError, ValueError, InputError) as exc:
            if isinstance(exc, InputError) and str(exc).startswith(os.path.basename(path)):
                raise
            _err(path, row, str(exc))
        if upd.registration_id not in statuses:
            _err(path, row, f"status references unknown registration {upd.registration_id}")
        seq = statuses[upd.registration_id]
        if seq:
            if upd.at <= seq[-1].at:
                _err(path, row, f"statuses out of time order for {upd.registration_id}")
            if seq[-1].kind == "EXIT":
                _err(path, row, f"status after EXIT for {upd.registration_id}")
        seq.append(upd)
    return statuses


def _active_in_window(reg: CandidateRegistration, seq: list[StatusUpdate],
                      window: tuple[float, float]) -> bool:
    """Did this registration hold an active status (T/HU/ACO) in the window?"""
    start, end = window
    if reg.listed_at > end:
        return False
    urgency = "NT"
    for upd in seq:
        if upd.at > end:
            break
        if upd.kind == "EXIT":
            return False if upd.at < start else urgency in ACTIVE_URGENCIES
        if upd.kind == "URGENCY":
            if upd.at >= start and upd.urgency in ACTIVE_URGENCIES:
                return True
            urgency = upd.urgency
    return urgency in ACTIVE_URGENCIES


def load_bundle(donors_path: str, registrations_path: str, statuses_path: str,
                window: tuple[float, float],
                obligations_path: Optional[str] = None) -> InputBundle:
    """Parse, validate and window-filter the three input streams."""
    donors, excluded_donors = load_donors(donors_path, window)
    registrations = load_registrations(registrations_path)
    statuses = load_statuses(statuses_path, registrations)

    for rid, seq in statuses.items():
        if not seq:
            raise InputError(
                f"{os.path.basename(statuses_path)}: registration without statuses: {rid}")

    kept_regs = {}
    kept_statuses = {}
    excluded_regs = 0
    for rid, reg in registrations.items():
        if _active_in_window(reg, statuses[rid], window):
            kept_regs[rid] = reg
            kept_statuses[rid] = statuses[rid]
        else:
            excluded_regs += 1

    initial_obligations = []
    if obligations_path:
        for row in read_rows(obligations_path):
            initial_obligations.append({
                "debtor_country": row["debtor_country"].strip(),
                "debtor_center": (row.get("debtor_center") or "").strip() or None,
                "creditor_country": row["creditor_country"].strip(),
                "creditor_center": (row.get("creditor_center") or "").strip() or None,
                "blood_group": row["blood_group"].strip(),
                "created_at": parse_timestamp(row["created_at"]),
            })

    return InputBundle(
        donors=donors,
        registrations=kept_regs,
        statuses=kept_statuses,
        initial_obligations=initial_obligations,
        window=window,
        excluded_donors=excluded_donors,
        excluded_registrations=excluded_regs,
    )


# ---------------------------------------------------------------------------
# Re-registration pool and imputation case files


def load_pool(registrations_path: str, statuses_path: str) -> ReregistrationPool:
    """Pool of real re-listings; registrations carry a relist_days column."""
    rows = read_rows(registrations_path)
    regs = {}
    relist_days = {}
    for row in rows:
        rid = row["registration_id"].strip()
        regs[rid] = row
        relist_days[rid] = float(row["relist_days"])
    statuses: dict[str, list[StatusUpdate]] = {rid: [] for rid in regs}
    for row in read_rows(statuses_path):
        upd = _status_from_row(statuses_path, row)
        if upd.registration_id not in statuses:
            _err(statuses_path, row,
                 f"pool status references unknown registration {upd.registration_id}")
        statuses[upd.registration_id].append(upd)
    entries = []
    for rid, row in sorted(regs.items()):
        seq = sorted(statuses[rid], key=lambda s: s.at)
        if not seq or seq[-1].kind != "EXIT":
            _err(registrations_path, row, f"pool entry {rid} does not end in an EXIT status")
        listed = parse_timestamp(row["listed_at"])
        offsets = tuple(StatusUpdate(
            registration_id=rid, at=s.at - listed, kind=s.kind,
            creatinine=s.creatinine, bilirubin=s.bilirubin, inr=s.inr,
            dialysis=s.dialysis, sodium=s.sodium, exception_id=s.exception_id,
            exception_action=s.exception_action, urgency=s.urgency,
            profile=s.profile, exit_reason=s.exit_reason) for s in seq)
        r = relist_days[rid]
        entries.append(PoolEntry(
            entry_id=rid,
            country=row["country"].strip(),
            age_at_listing=float(row["age_at_listing"]),
            relist_days=r,
            event_days=r + offsets[-1].at,
            statuses=offsets,
        ))
    return ReregistrationPool(entries)


def load_cases(path: str) -> dict[str, ImputationCase]:
    cases = {}
    for row in read_rows(path):
        try:
            c = ImputationCase(
                registration_id=row["registration_id"].strip(),
                censor_day=float(row["censor_day"]),
                event=_parse_bool(row, "event"),
                eta=float(row["eta"]),
                ipcw_weight=float(row["ipcw_weight"]),
                is_retransplant=_parse_bool(row, "is_retransplant"),
                urgency=row["urgency"].strip(),
                nse_group=row["nse_group"].strip(),
                disease_group=row["disease_group"].strip(),
                urgency_reason=row["urgency_reason"].strip(),
                dialysis=_parse_bool(row, "dialysis"),
                country=row["country"].strip(),
                pediatric=_parse_bool(row, "pediatric"),
                lab_meld=float(row["lab_meld"]),
                age=float(row["age_at_registration"]),
                exception_meld=float(row["exception_meld"]),
            )
        except (KeyError, ValueError, InputError) as exc:
            _err(path, row, str(exc))
        cases[c.registration_id] = c
    return cases
