"""Payback ledger for international HU/ACO placements.

Obligations are blood-group-scoped debts between parties. A party is a
country, except for Austria where debts attach to the transplant center.
Within one blood group, chains (X owes Y, Y owes Z) are automatically
replaced by a linked obligation (X owes Z), dated at the earliest
constituent; an X-owes-X result cancels outright.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .core import BLOOD_GROUPS, EngineFault, InputError, TIER_ACO, TIER_HU

CENTER_LEVEL_COUNTRIES = frozenset({"AT"})


def party(country: str, center: Optional[str] = None) -> tuple[str, Optional[str]]:
    """Obligation party for a country/center pair."""
    if country in CENTER_LEVEL_COUNTRIES and center is not None:
        return (country, center)
    return (country, None)


def party_label(p: tuple[str, Optional[str]]) -> str:
    return p[0] if p[1] is None else f"{p[0]}:{p[1]}"


@dataclass(frozen=True)
class Obligation:
    obligation_id: int
    debtor: tuple[str, Optional[str]]
    creditor: tuple[str, Optional[str]]
    blood_group: str
    created_at: float
    lineage: tuple[int, ...] = ()

    def __post_init__(self):
        if self.debtor == self.creditor:
            raise InputError("obligation debtor equals creditor")
        if self.blood_group not in BLOOD_GROUPS:
            raise InputError(f"obligation: bad blood group {self.blood_group!r}")


class ObligationLedger:
    """Open obligations per blood group, with automatic linking."""

    def __init__(self):
        self._open: dict[str, list[Obligation]] = {bg: [] for bg in BLOOD_GROUPS}
        self._next_id = 1

    # -- queries ------------------------------------------------------------

    def all_open(self) -> list[Obligation]:
        return [o for bg in BLOOD_GROUPS for o in self._open[bg]]

    def open_obligations(self, debtor: tuple[str, Optional[str]], blood_group: str,
                         now: float) -> list[tuple[tuple[str, Optional[str]], int]]:
        """Creditors of `debtor` in `blood_group` with ages in whole days.

        Distinct creditors, sorted by descending age of their oldest
        obligation (ties broken by creation order).
        """
        oldest: dict[tuple[str, Optional[str]], Obligation] = {}
        for o in self._open[blood_group]:
            if o.debtor == debtor:
                cur = oldest.get(o.creditor)
                if cur is None or (o.created_at, o.obligation_id) < (cur.created_at, cur.obligation_id):
                    oldest[o.creditor] = o
        ranked = sorted(oldest.values(), key=lambda o: (o.created_at, o.obligation_id))
        return [(o.creditor, int(now - o.created_at)) for o in ranked]

    def creditor_ranks(self, debtor: tuple[str, Optional[str]],
                       blood_group: str) -> dict[tuple[str, Optional[str]], int]:
        """Creditor -> 1-based rank by descending obligation age."""
        oldest: dict[tuple[str, Optional[str]], tuple[float, int]] = {}
        for o in self._open[blood_group]:
            if o.debtor == debtor:
                key = (o.created_at, o.obligation_id)
                if o.creditor not in oldest or key < oldest[o.creditor]:
                    oldest[o.creditor] = key
        ordered = sorted(oldest, key=lambda c: oldest[c])
        return {creditor: i + 1 for i, creditor in enumerate(ordered)}

    def has_obligation(self, debtor, creditor, blood_group: str) -> bool:
        return any(o.debtor == debtor and o.creditor == creditor
                   for o in self._open[blood_group])

    # -- mutations ----------------------------------------------------------

    def seed(self, debtor, creditor, blood_group: str, created_at: float) -> None:
        """Install a pre-existing obligation (initial ledger), then link."""
        self._add(debtor, creditor, blood_group, created_at)
        self._saturate(blood_group)

    def _add(self, debtor, creditor, blood_group: str, created_at: float,
             lineage: tuple[int, ...] = ()) -> Obligation:
        o = Obligation(self._next_id, debtor, creditor, blood_group, created_at, lineage)
        self._next_id += 1
        self._open[blood_group].append(o)
        return o

    def _saturate(self, blood_group: str) -> None:
        """Link chains to a fixpoint, oldest pairs first; X->X cancels."""
        while True:
            obs = self._open[blood_group]
            best = None
            for o1 in obs:
                for o2 in obs:
                    if o1 is o2 or o1.creditor != o2.debtor:
                        continue
                    key = (o1.created_at, o2.created_at, o1.obligation_id, o2.obligation_id)
                    if best is None or key < best[0]:
                        best = (key, o1, o2)
            if best is None:
                return
            _, o1, o2 = best
            obs.remove(o1)
            obs.remove(o2)
            if o1.debtor != o2.creditor:
                self._add(o1.debtor, o2.creditor, blood_group,
                          min(o1.created_at, o2.created_at),
                          lineage=o1.lineage + (o1.obligation_id,) + o2.lineage + (o2.obligation_id,))

    def redeem(self, debtor, creditor, blood_group: str) -> Obligation:
        """Remove the oldest open obligation debtor->creditor; fault if none."""
        candidates = [o for o in self._open[blood_group]
                      if o.debtor == debtor and o.creditor == creditor]
        if not candidates:
            raise EngineFault(
                f"redeeming nonexistent obligation {party_label(debtor)}->"
                f"{party_label(creditor)} ({blood_group})")
        chosen = min(candidates, key=lambda o: (o.created_at, o.obligation_id))
        self._open[blood_group].remove(chosen)
        return chosen

    def record_transplant(self, donor_party, recipient_party, blood_group: str,
                          tier: int, via_obligation: bool, at: float) -> list[str]:
        """Apply the ledger delta for one transplantation.

        International HU/ACO placements create an obligation of the
        recipient's party toward the donor's party; a placement made via an
        obligation redeems it; everything else leaves the ledger unchanged.
        """
        delta: list[str] = []
        if via_obligation:
            o = self.redeem(donor_party, recipient_party, blood_group)
            delta.append(f"redeemed {party_label(o.debtor)}->{party_label(o.creditor)} {blood_group}")
            return delta
        if tier in (TIER_HU, TIER_ACO) and donor_party[0] != recipient_party[0]:
            self._add(recipient_party, donor_party, blood_group, at)
            delta.append(
                f"created {party_label(recipient_party)}->{party_label(donor_party)} {blood_group}")
            self._saturate(blood_group)
        return delta

    # -- invariants (used by the property suite) -----------------------------

    def is_saturated(self, blood_group: str) -> bool:
        obs = self._open[blood_group]
        return not any(o1.creditor == o2.debtor
                       for o1 in obs for o2 in obs if o1 is not o2)

    def is_acyclic(self, blood_group: str) -> bool:
        edges: dict[tuple, set] = {}
        for o in self._open[blood_group]:
            edges.setdefault(o.debtor, set()).add(o.creditor)
        seen: set = set()

        def walk(node, trail):
            if node in trail:
                return False
            if node in seen:
                return True
            seen.add(node)
            return all(walk(n, trail | {node}) for n in edges.get(node, ()))

        return all(walk(n, frozenset()) for n in list(edges))
