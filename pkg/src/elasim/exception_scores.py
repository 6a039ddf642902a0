"""Exception-score system: (N)SE and PED-MELD mortality equivalents.

State is kept on the equivalent scale; MELD scores are derived on demand
through a survival curve, so swapping the curve never touches the stored
equivalent trajectory.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, Optional

from .core import (
    CandidateRegistration,
    ConfigError,
    StatusUpdate,
    SurvivalCurve90,
    equivalent_to_meld,
    survival90,
)

# Keeps bonus equivalents strictly below 1 so the curve stays invertible.
EQUIVALENT_EPS = 1e-6

AUTO_RECERT_DAYS = 90.0
MANUAL_RECERT_DAYS = 80.0


@dataclass(frozen=True)
class ExceptionDefinition:
    exception_id: str
    country: str
    initial_equivalent: float
    increment_90d: float
    max_equivalent: float
    max_age: Optional[float] = None  # candidate age beyond which upgrades stop
    is_bonus: bool = False
    auto_recertified: bool = True

    def __post_init__(self):
        if not 0.0 < self.initial_equivalent <= self.max_equivalent <= 1.0:
            raise ConfigError(
                f"exception {self.exception_id}: need 0 < initial <= max <= 1")
        if self.increment_90d < 0.0:
            raise ConfigError(f"exception {self.exception_id}: negative increment")

    @property
    def is_pediatric(self) -> bool:
        return self.exception_id.startswith("PED")

    @property
    def recert_days(self) -> float:
        return AUTO_RECERT_DAYS if self.auto_recertified else MANUAL_RECERT_DAYS


class ActiveException:
    """A granted exception on a candidate's record."""

    __slots__ = ("definition", "granted_at", "current_equivalent",
                 "next_recert_at", "_score", "_score_lab", "_score_curve")

    def __init__(self, definition: ExceptionDefinition, granted_at: float):
        self.definition = definition
        self.granted_at = granted_at
        self.current_equivalent = definition.initial_equivalent
        self.next_recert_at = granted_at + definition.recert_days
        self._score = None
        self._score_lab = None
        self._score_curve = None

    def upgrade(self, at: float) -> None:
        """Recertify: raise the equivalent by one increment, capped at max."""
        d = self.definition
        self.current_equivalent = min(
            self.current_equivalent + d.increment_90d, d.max_equivalent)
        self.next_recert_at = at + d.recert_days
        self._score = None

    def at_max(self) -> bool:
        return self.current_equivalent >= self.definition.max_equivalent

    def meld(self, curve: SurvivalCurve90, lab_meld: Optional[int]) -> int:
        """Exception MELD under `curve`; bonus SEs add to the lab equivalent."""
        if (self._score is not None and self._score_curve is curve
                and (not self.definition.is_bonus or self._score_lab == lab_meld)):
            return self._score
        if self.definition.is_bonus:
            lab = lab_meld if lab_meld is not None else curve.score_range[0]
            eq = (1.0 - survival90(curve, lab)) + self.current_equivalent
        else:
            eq = self.current_equivalent
        eq = min(eq, 1.0 - EQUIVALENT_EPS)
        score = equivalent_to_meld(curve, eq)
        self._score, self._score_lab, self._score_curve = score, lab_meld, curve
        return score


def exception_meld(active: ActiveException, curve: SurvivalCurve90,
                   lab_meld: Optional[int]) -> int:
    return active.meld(curve, lab_meld)


def upgrades_allowed(active: ActiveException, registration: CandidateRegistration,
                     at: float) -> bool:
    max_age = active.definition.max_age
    return max_age is None or registration.age_at(at) <= max_age


def synthesize_recertifications(
    active: ActiveException,
    registration: CandidateRegistration,
    stream_tail: Iterable[StatusUpdate],
    until: float,
) -> list[StatusUpdate]:
    """Upgrade statuses a candidate would file if the stream stays silent.

    Returns an empty list when the pending stream already carries a future
    status for this exception. Otherwise upgrades are synthesized on the
    exception's recertification schedule until the stream's exit, the
    maximal equivalent, the candidate's age limit, or `until`.
    """
    exit_at = math.inf
    for upd in stream_tail:
        if upd.kind == "EXCEPTION" and upd.exception_id == active.definition.exception_id:
            return []
        if upd.kind == "EXIT":
            exit_at = upd.at
    horizon = min(until, exit_at)
    out: list[StatusUpdate] = []
    equivalent = active.current_equivalent
    at = active.next_recert_at
    d = active.definition
    while equivalent < d.max_equivalent and at < horizon:
        if not upgrades_allowed(active, registration, at):
            break
        out.append(StatusUpdate(
            registration_id=registration.registration_id, at=at, kind="EXCEPTION",
            exception_id=d.exception_id, exception_action="upgrade", synthetic=True))
        equivalent = min(equivalent + d.increment_90d, d.max_equivalent)
        at += d.recert_days
    return out


# ---------------------------------------------------------------------------
# Policy variants (exception-system experiments)


def apply_policy_variant(definitions: dict[str, ExceptionDefinition],
                         variant) -> dict[str, ExceptionDefinition]:
    """Return modified definitions under a policy variant.

    `variant` is a mapping {kind, ...} or a list of them applied in order.
    Kinds: current (no-op), capped (param `cap`, fraction), slower (param
    `factor`), lowered (param `initial`, applied to definitions with initial
    below `threshold`, default 20%). An optional `countries` list restricts
    the change; PED-MELD definitions are never modified.
    """
    if variant is None:
        return dict(definitions)
    if isinstance(variant, (list, tuple)):
        out = dict(definitions)
        for v in variant:
            out = apply_policy_variant(out, v)
        return out
    if not isinstance(variant, dict) or "kind" not in variant:
        raise ConfigError(f"malformed exception variant: {variant!r}")
    kind = variant["kind"]
    countries = variant.get("countries")
    out = {}
    for key, d in definitions.items():
        if d.is_pediatric or (countries and d.country not in countries):
            out[key] = d
            continue
        if kind == "current":
            out[key] = d
        elif kind == "capped":
            cap = float(variant["cap"])
            new_max = cap if d.initial_equivalent <= cap else d.initial_equivalent
            out[key] = replace(d, max_equivalent=new_max)
        elif kind == "slower":
            factor = float(variant["factor"])
            out[key] = replace(d, increment_90d=d.increment_90d * factor)
        elif kind == "lowered":
            threshold = float(variant.get("threshold", 0.20))
            new_initial = float(variant["initial"])
            if d.initial_equivalent < threshold:
                out[key] = replace(d, initial_equivalent=new_initial)
            else:
                out[key] = d
        else:
            raise ConfigError(f"unknown exception variant kind {kind!r}")
    return out
