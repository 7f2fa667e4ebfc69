"""RFM and PRAC Rowhammer mitigation state plus an activation-disturbance audit.

The controller owns one :class:`RfmState` or :class:`PracState` per channel.
The audit replays a command log independently of the controller: every ACT
disturbs the rows within the blast radius; a victim's tally resets when the
victim itself is activated, refreshed by REF, or refreshed by a mitigation.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable


class RfmState:
    """Rolling activation accumulators (RAA), one per bank."""

    def __init__(self, banks: int, threshold: int):
        self.threshold = threshold
        self.raa = [0] * banks
        self.issued = [0] * banks

    def on_act(self, bank: int) -> bool:
        """Count an ACT; True when the bank now owes an RFM before its next ACT."""
        self.raa[bank] += 1
        return self.raa[bank] >= self.threshold

    def needs_rfm(self, bank: int) -> bool:
        return self.raa[bank] >= self.threshold

    def on_rfm(self, bank: int) -> None:
        self.raa[bank] = 0
        self.issued[bank] += 1


class PracState:
    """Per-row activation counters with a one-deep alert per bank."""

    def __init__(self, banks: int, rows: int, threshold: int, blast_radius: int):
        self.threshold = threshold
        self.blast = blast_radius
        self.rows = rows
        self.counters: list[dict[int, int]] = [defaultdict(int) for _ in range(banks)]
        self.alert: list[int | None] = [None] * banks
        self.mitigations = 0

    def on_precharge(self, bank: int, row: int) -> bool:
        """Count the activation closed by this PRE; True if an alert is now raised."""
        c = self.counters[bank]
        c[row] += 1
        if c[row] >= self.threshold and self.alert[bank] is None:
            self.alert[bank] = row
            return True
        return False

    def neighbours(self, row: int) -> list[int]:
        return [r for d in range(1, self.blast + 1) for r in (row - d, row + d) if 0 <= r < self.rows]

    def mitigate(self, bank: int) -> tuple[int, list[int]]:
        """Service the pending alert; returns (aggressor row, refreshed victims)."""
        row = self.alert[bank]
        assert row is not None
        self.alert[bank] = None
        self.counters[bank].pop(row, None)
        self.mitigations += 1
        # a second row may have crossed the threshold while the alert was pending
        for r, v in self.counters[bank].items():
            if v >= self.threshold:
                self.alert[bank] = r
                break
        return row, self.neighbours(row)

    def on_refresh(self, bank: int, first: int, count: int) -> None:
        """Reset counters of rows whose whole neighbourhood this REF refreshes.

        Resetting a row whose victims lie outside the refreshed range would let
        those victims accumulate more than one threshold of disturbance.
        """
        c = self.counters[bank]
        if not c:
            return
        lo, hi = first + self.blast, first + count - self.blast
        for r in [r for r in c if lo <= r < hi]:
            del c[r]


# --------------------------------------------------------------------------
# audit


@dataclass
class AuditResult:
    max_disturbance: int
    worst_row: tuple[int, int, int, int, int] | None  # (ch, rank, bg, bank, row)
    acts: int
    refreshes: int
    mitigations: int
    rfms: int


def disturbance_audit(log: Iterable[tuple], blast_radius: int = 2, rows: int = 65536,
                      rows_per_ref: int = 8, rfm_rows: int = 2, bankgroups: int = 4,
                      banks: int = 4) -> AuditResult:
    """Maximum neighbour activations any row absorbs between two of its refreshes.

    ``log`` holds ``(cycle, kind, ch, rank, bg, ba, row, col)`` tuples in issue
    order.  REF entries carry the first row of the refreshed range in ``row``;
    PRAC_MITIGATE entries carry the aggressor row.  RFM commands are replayed
    against a vendor model that refreshes the neighbours of the ``rfm_rows``
    most-activated rows since the previous RFM (shadow counters).
    """
    victim: dict[tuple, dict[int, int]] = defaultdict(dict)
    shadow: dict[tuple, dict[int, int]] = defaultdict(dict)
    worst = 0
    worst_at = None
    n_act = n_ref = n_mit = n_rfm = 0
    banks_per_rank = bankgroups * banks

    def refresh_neighbours(v: dict, row: int) -> None:
        for d in range(1, blast_radius + 1):
            v.pop(row - d, None)
            v.pop(row + d, None)

    for cycle, kind, ch, rank, bg, ba, row, col in log:
        if kind == "ACT":
            n_act += 1
            key = (ch, rank, bg, ba)
            v = victim[key]
            v.pop(row, None)  # activation restores the row's own charge
            for d in range(1, blast_radius + 1):
                for r in (row - d, row + d):
                    if 0 <= r < rows:
                        x = v.get(r, 0) + 1
                        v[r] = x
                        if x > worst:
                            worst, worst_at = x, key + (r,)
            s = shadow[key]
            s[row] = s.get(row, 0) + 1
        elif kind == "REF":
            n_ref += 1
            for g in range(bankgroups):
                for b in range(banks):
                    key = (ch, rank, g, b)
                    v = victim.get(key)
                    if v:
                        for r in range(row, row + rows_per_ref):
                            v.pop(r, None)
        elif kind == "PRAC_MITIGATE":
            n_mit += 1
            refresh_neighbours(victim[(ch, rank, bg, ba)], row)
        elif kind == "RFM":
            n_rfm += 1
            key = (ch, rank, bg, ba)
            s = shadow[key]
            hottest = sorted(s.items(), key=lambda kv: (-kv[1], kv[0]))[:rfm_rows]
            for r, _ in hottest:
                refresh_neighbours(victim[key], r)
                del s[r]
    return AuditResult(worst, worst_at, n_act, n_ref, n_mit, n_rfm)


def audit_bound(kind: str, threshold: int, blast_radius: int) -> int:
    """Worst-case neighbour activations a victim can absorb under ``kind``.

    A victim has ``2 * blast_radius`` potential aggressors; each can reach its
    threshold before its own mitigation refreshes the victim.  Single-row
    hammering is bounded by one threshold.
    """
    if kind == "none":
        raise ValueError("no bound without a mitigation")
    return 2 * blast_radius * threshold


def rfm_expected(acts_per_bank: Iterable[int], threshold: int) -> list[int]:
    return [a // threshold for a in acts_per_bank]


def prac_expected(acts_per_row: Iterable[int], threshold: int) -> int:
    return sum(a // threshold for a in acts_per_row)
