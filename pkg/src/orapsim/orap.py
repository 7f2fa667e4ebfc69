"""Row-aware LLC prefetcher: Next-Column engine, hybrid confidence tables and POT.

On an LLC miss the Next-Column engine looks up a confidence for the missing
IP (IPCT) and the missing row (RCT), takes the larger, and prefetches the
lines of the next few column clusters of that same DRAM row.  Confidence
falls by ``confidence_increment`` every ``issue_max`` prefetch fills and rises
by the same step every ``useful_max`` useful hits, so it drifts toward zero
whenever usefulness stays below ``useful_max / issue_max``.
"""

from __future__ import annotations

import random
from fractions import Fraction
from typing import Optional

from .config import OrapConfig

NEXT_COLUMN, HSD_ENGINE = 0, 1
CONF_MAX = 255


def _hash16(key: int) -> int:
    return ((key * 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF) >> 48


# --------------------------------------------------------------------------
# closed forms


def target_usefulness(issue_max: int, useful_max: int) -> Fraction:
    """Usefulness at which confidence neither rises nor falls."""
    if not 1 <= useful_max <= issue_max:
        raise ValueError(f"useful_max {useful_max} must lie in [1, issue_max={issue_max}]")
    return Fraction(useful_max, issue_max)


def max_pending(issue_max: int, increment: int) -> int:
    """Prefetch fills a never-useful entry can cause on its way from 255 to 0."""
    if issue_max < 1 or increment < 1:
        raise ValueError("issue_max and increment must be >= 1")
    return CONF_MAX * issue_max // increment


def depth_from_confidence(c: int, thresholds=OrapConfig().depth_thresholds) -> int:
    """Number of column clusters to prefetch: how many thresholds ``c`` reaches."""
    if not 0 <= c <= CONF_MAX:
        raise ValueError("confidence out of range")
    d = 0
    for th in thresholds:
        if c >= th:
            d += 1
        else:
            break
    return d


def gate_probability(c: int, cfg: OrapConfig = OrapConfig()) -> float:
    """Chance that a trigger at confidence ``c`` issues anything."""
    if c >= cfg.gate_full_confidence:
        return 1.0
    if c == 0:
        return cfg.zero_confidence_floor
    return cfg.gate_slope * c


# --------------------------------------------------------------------------
# tables


class ConfidenceEntry:
    __slots__ = ("tag", "conf", "issue", "useful", "inflight")

    def __init__(self, tag: int, lanes: int, init: int):
        self.tag = tag
        self.conf = [init] * lanes
        self.issue = [0] * lanes
        self.useful = [0] * lanes
        self.inflight = [0] * lanes


class ConfidenceTable:
    """Set-associative, LRU, indexed by a 16-bit hash of the key."""

    def __init__(self, entries: int, ways: int, lanes: int, init: int, cfg: OrapConfig):
        self.sets_n = entries // ways
        self.idx_bits = self.sets_n.bit_length() - 1
        self.ways = ways
        self.lanes = lanes
        self.init = init
        self.cfg = cfg
        self.sets: list[list[ConfidenceEntry]] = [[] for _ in range(self.sets_n)]

    def lookup(self, key: int, allocate: bool = True) -> Optional[ConfidenceEntry]:
        h = _hash16(key)
        s = self.sets[h & (self.sets_n - 1)]
        tag = h >> self.idx_bits
        for e in s:
            if e.tag == tag:
                if s[-1] is not e:
                    s.remove(e)
                    s.append(e)
                return e
        if not allocate:
            return None
        if len(s) >= self.ways:
            s.pop(0)
        e = ConfidenceEntry(tag, self.lanes, self.init)
        s.append(e)
        return e

    def on_fill(self, e: ConfidenceEntry, lane: int) -> None:
        cfg = self.cfg
        e.issue[lane] += 1
        if e.issue[lane] >= cfg.issue_max:
            e.issue[lane] = 0
            e.conf[lane] = max(0, e.conf[lane] - cfg.confidence_increment)

    def on_useful(self, e: ConfidenceEntry, lane: int) -> None:
        cfg = self.cfg
        e.useful[lane] += 1
        if e.useful[lane] >= cfg.useful_max:
            e.useful[lane] = 0
            e.conf[lane] = min(CONF_MAX, e.conf[lane] + cfg.confidence_increment)

    def budget(self, e: ConfidenceEntry, lane: int) -> int:
        """Fills this entry may still cause without any further useful feedback.

        Each fill costs increment/issue_max confidence, so the allowance is
        conf * issue_max // increment minus what is already counted or in flight.
        """
        cfg = self.cfg
        allowed = e.conf[lane] * cfg.issue_max // cfg.confidence_increment
        return allowed - e.issue[lane] - e.inflight[lane]


_LINE_BIT = [1 << i for i in range(64)]


class PageOccupancyTable:
    """Per-4 KiB-page bitmap of lines recently requested or prefetched."""

    def __init__(self, entries: int = 256, ways: int = 8):
        self.sets_n = entries // ways
        self.ways = ways
        self.sets: list[dict[int, int]] = [dict() for _ in range(self.sets_n)]

    def _set(self, page: int) -> dict[int, int]:
        return self.sets[_hash16(page) & (self.sets_n - 1)]

    def contains(self, block: int) -> bool:
        s = self._set(block >> 6)
        return bool(s.get(block >> 6, 0) >> (block & 63) & 1)

    def record(self, block: int) -> None:
        page = block >> 6
        s = self._set(page)
        bits = s.pop(page, None)
        if bits is None:
            bits = 0
            if len(s) >= self.ways:
                del s[next(iter(s))]  # least recently used page
        s[page] = bits | _LINE_BIT[block & 63]

    def filter_and_record(self, block: int) -> str:
        if self.contains(block):
            return "duplicate"
        self.record(block)
        return "fresh"


# --------------------------------------------------------------------------
# engine


class OrapStats:
    FIELDS = ("triggers", "gated", "probes", "candidates", "pot_filtered", "cache_filtered",
              "budget_clipped", "buffer_rejected", "inserted", "hsd_triggers", "hsd_candidates",
              "hsd_inserted", "nc_from_hsd")

    def __init__(self):
        for f in self.FIELDS:
            setattr(self, f, 0)

    def snapshot(self) -> dict:
        return {f: getattr(self, f) for f in self.FIELDS}


class Orap:
    """Per-core prefetcher instance attached to the shared LLC.

    ``blp`` is the shared bank-leveling buffer; ``hsd`` an optional stream
    engine.  Nothing here is shared between cores.
    """

    def __init__(self, cfg: OrapConfig, mapping, llc, blp, cpu: int = 0, seed: int = 1,
                 hsd=None):
        self.cfg = cfg
        self.mapping = mapping
        self.llc = llc
        self.blp = blp
        self.cpu = cpu
        self.rng = random.Random(seed)
        self.hsd = hsd
        self.ipct = ConfidenceTable(cfg.table_entries, cfg.table_ways, 2, cfg.ipct_init_confidence, cfg)
        self.rct = ConfidenceTable(cfg.table_entries, cfg.table_ways, 1, cfg.rct_init_confidence, cfg)
        self.pot = PageOccupancyTable(cfg.pot_entries, cfg.pot_ways)
        self.outstanding: dict[int, tuple] = {}  # block -> (engine, ipct entry, rct entry)
        self.stats = OrapStats()
        self.thresholds = cfg.depth_thresholds
        self.cluster_lines = mapping.cluster_lines
        self._row_shift = mapping.fields["row"][0] if "row" in mapping.fields else 0

    # ---------------------------------------------------------------- helpers

    def row_key(self, block: int) -> int:
        ch, bank, row, _ = self.mapping.locate(block << 6)
        return (row * self.mapping.dram.total_banks) + ch * self.mapping.bank_count + bank

    def confidence(self, ip: int, block: int) -> int:
        return max(self.ipct.lookup(ip).conf[NEXT_COLUMN], self.rct.lookup(self.row_key(block)).conf[0])

    def hsd_confidence(self, ip: int) -> int:
        return self.ipct.lookup(ip).conf[HSD_ENGINE]

    # ------------------------------------------------------------- cache hooks

    def on_access(self, block, ip, hit, t, cpu, is_prefetch) -> None:
        if not hit:
            self.pot.record(block)
        if self.hsd is not None:
            self._hsd_access(block, ip, t)
        if not hit:
            self.next_column(ip, block, t)

    def on_fill(self, m, t) -> None:
        info = self.outstanding.pop(m.block, None)
        if info is not None:
            engine, e_ip, e_row = info
            e_ip.inflight[engine] -= 1
            self.ipct.on_fill(e_ip, engine)
            if e_row is not None:
                e_row.inflight[0] -= 1
                self.rct.on_fill(e_row, 0)
        self.blp.complete(m.block)

    def on_drop(self, block: int) -> None:
        info = self.outstanding.pop(block, None)
        if info is not None:
            engine, e_ip, e_row = info
            e_ip.inflight[engine] -= 1
            if e_row is not None:
                e_row.inflight[0] -= 1

    def on_useful(self, line, ip, t) -> None:
        self._credit(line.engine, line.block, ip)

    def on_late(self, m, ip, t) -> None:
        self._credit(m.engine, m.block, ip)

    def on_evict_unused(self, line, t) -> None:
        pass

    def _credit(self, engine: int, block: int, ip: int) -> None:
        # credit goes to the IP that used the line, not the one that triggered it
        self.ipct.on_useful(self.ipct.lookup(ip), engine)
        if engine == NEXT_COLUMN:
            self.rct.on_useful(self.rct.lookup(self.row_key(block)), 0)

    # ------------------------------------------------------------ Next-Column

    def candidates(self, ip: int, block: int) -> tuple[list[int], ConfidenceEntry, ConfidenceEntry, int]:
        """Lines of the clusters Next-Column would prefetch, before any filtering."""
        e_ip = self.ipct.lookup(ip)
        e_row = self.rct.lookup(self.row_key(block))
        c_ip, c_row = e_ip.conf[NEXT_COLUMN], e_row.conf[0]
        c = c_ip if c_ip >= c_row else c_row
        return self._lines(block, c), e_ip, e_row, c

    def _lines(self, block: int, c: int, line_col: int | None = None) -> list[int]:
        d = depth_from_confidence(c, self.thresholds) if c > 0 else 1
        if d == 0:
            return []
        if line_col is None:
            line_col = self.mapping.locate(block << 6)[3]
        return self.mapping.next_cluster_blocks(block, line_col, d)

    def next_column(self, ip: int, block: int, t: int) -> int:
        """Handle one trigger; returns how many candidates entered the buffer."""
        st = self.stats
        st.triggers += 1
        m = self.mapping
        ch, bank, row, line_col = m.locate(block << 6)
        gbank = ch * m.bank_count + bank
        e_ip = self.ipct.lookup(ip)
        e_row = self.rct.lookup(row * m.dram.total_banks + gbank)
        c_ip, c_row = e_ip.conf[NEXT_COLUMN], e_row.conf[0]
        if c_ip >= c_row:
            c, gov, gov_tab, lane = c_ip, e_ip, self.ipct, NEXT_COLUMN
        else:
            c, gov, gov_tab, lane = c_row, e_row, self.rct, 0
        if c < self.cfg.gate_full_confidence:
            p = gate_probability(c, self.cfg)
            if self.rng.random() >= p:
                st.gated += 1
                return 0
        if c == 0:
            st.probes += 1
            budget = 1 << 30
        else:
            budget = gov_tab.budget(gov, lane)
        lines = self._lines(block, c, line_col)
        st.candidates += len(lines)
        llc_lines, llc_mshr, pot, blp = self.llc.lines, self.llc.mshr, self.pot, self.blp
        entries = blp.entries
        inserted = 0
        cpu = self.cpu
        outstanding = self.outstanding
        for i, b in enumerate(lines):
            if pot.contains(b):
                st.pot_filtered += 1
                continue
            if b in llc_lines or b in llc_mshr or b in entries:
                st.cache_filtered += 1
                continue
            if inserted >= budget:
                st.budget_clipped += 1
                break
            if not blp.insert(b, gbank, cpu, NEXT_COLUMN, ip, t):
                # every candidate shares the trigger's bank, so the rest would bounce too
                st.buffer_rejected += len(lines) - i
                break
            pot.record(b)
            e_ip.inflight[NEXT_COLUMN] += 1
            e_row.inflight[0] += 1
            outstanding[b] = (NEXT_COLUMN, e_ip, e_row)
            inserted += 1
        st.inserted += inserted
        return inserted

    # -------------------------------------------------------------------- HSD

    def _hsd_access(self, block: int, ip: int, t: int) -> None:
        st = self.stats
        st.hsd_triggers += 1
        conf_entry = self.ipct.lookup(ip)
        stream_ip, lines = self.hsd.on_access(ip, block, conf_entry.conf[HSD_ENGINE])
        if not lines:
            return
        e_ip = self.ipct.lookup(stream_ip) if stream_ip != ip else conf_entry
        llc, pot, blp = self.llc, self.pot, self.blp
        for b in lines:
            st.hsd_candidates += 1
            if pot.contains(b) or b in llc.lines or b in llc.mshr or b in blp.entries:
                continue
            if not blp.insert(b, self.mapping.global_bank(b << 6), self.cpu, HSD_ENGINE, stream_ip, t):
                continue
            pot.record(b)
            e_ip.inflight[HSD_ENGINE] += 1
            self.outstanding[b] = (HSD_ENGINE, e_ip, None)
            st.hsd_inserted += 1

    def on_hsd_miss(self, block: int, ip: int, t: int) -> None:
        """An HSD prefetch missed the LLC on its way to DRAM: a Next-Column trigger."""
        self.stats.nc_from_hsd += 1
        self.next_column(ip, block, t)
