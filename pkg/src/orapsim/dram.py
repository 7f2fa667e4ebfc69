"""DDR5 channel/rank/bank timing model with an FR-FCFS scheduler.

Times inside the controller are memory-clock cycles; the simulation event
queue runs on integer ticks and ``ticks_per_cycle`` converts between them.

Scheduling, per channel and per cycle, issues at most one command.  Request
classes (lower wins): demand or promoted read, write while draining, prefetch
read, write otherwise.  Within a class row hits beat misses, then age.  An
open row with pending lower-class hits is protected for ``prefetch_batch_quota``
column commands per activation before a higher-class conflict may close it.
Rows with no pending hits close after a per-bank timeout that doubles on a
premature close and halves on a conflict close.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Optional

from .config import SimConfig
from .addrmap import AddressMapping
from .mitigation import PracState, RfmState

INF = 1 << 62
SEQ_BITS = 44
CLS_SHIFT = SEQ_BITS + 1
HIT_BIT = 1 << SEQ_BITS

# request origins
DEMAND, NEXT_COLUMN, HSD, UPPER_PF, WRITEBACK = range(5)
ORIGINS = ("demand", "next_column", "hsd", "upper_pf", "writeback")

CMD_KINDS = ("ACT", "PRE", "RD", "WR", "REF", "RFM", "PRAC_MITIGATE")


class Request:
    __slots__ = ("block", "ch", "bank", "row", "col", "is_write", "cls", "seq", "cb",
                 "origin", "arrival", "caused_act", "done")

    def __init__(self, block: int, is_write: bool, origin: int, prefetch: bool,
                 cb: Optional[Callable] = None):
        self.block = block
        self.is_write = is_write
        self.origin = origin
        self.cls = 2 if prefetch else 0
        self.cb = cb
        self.caused_act = False
        self.done = False


class Bank:
    __slots__ = ("idx", "rank", "bg", "ba", "open_row", "next_act", "next_pre", "next_rd",
                 "reqs", "dirty", "hit", "miss", "hit_key", "miss_key", "hits_since_act",
                 "act_cycle", "last_col", "timeout", "policy_closed", "alert")

    def __init__(self, idx: int, rank: int, bg: int, ba: int, timeout: int):
        self.idx, self.rank, self.bg, self.ba = idx, rank, bg, ba
        self.open_row = None
        self.next_act = self.next_pre = self.next_rd = 0
        self.reqs: list[Request] = []
        self.dirty = False
        self.hit = self.miss = None
        self.hit_key = self.miss_key = INF
        self.hits_since_act = 0
        self.act_cycle = 0
        self.last_col = 0
        self.timeout = timeout
        self.policy_closed = None
        self.alert = False


class Rank:
    __slots__ = ("idx", "ref_due", "ref_pending", "ref_ptr", "banks")

    def __init__(self, idx: int, first_due: int, banks: list[Bank]):
        self.idx = idx
        self.ref_due = first_due
        self.ref_pending = False
        self.ref_ptr = 0
        self.banks = banks


@dataclass
class Timing:
    """Timing constraints in memory cycles."""

    CL: int
    RCD: int
    RP: int
    RAS: int
    RC: int
    WR: int
    RTP: int
    RFC: int
    BURST: int
    REFI: int
    RFM: int
    PRAC: int

    @classmethod
    def from_config(cls, cfg: SimConfig) -> "Timing":
        d, t, m = cfg.dram, cfg.dram.timings_ns, cfg.mitigation
        refi_ns = d.refresh_period_ms * 1e6 / d.refresh_commands
        return cls(d.cycles(t.nCL), d.cycles(t.nRCD), d.cycles(t.nRP), d.cycles(t.nRAS),
                   d.cycles(t.nRC), d.cycles(t.nWR), d.cycles(t.nRTP), d.cycles(t.nRFC),
                   d.burst_length // 2, int(refi_ns / d.tck_ns), d.cycles(m.rfm_service_time_ns),
                   d.cycles(m.prac_recovery_time_ns))


class Channel:
    def __init__(self, ctrl: "DramController", idx: int):
        d = ctrl.cfg.dram
        self.ctrl = ctrl
        self.idx = idx
        self.banks: list[Bank] = []
        self.ranks: list[Rank] = []
        per_rank = d.bankgroups * d.banks
        stagger = max(1, ctrl.t.REFI // max(1, d.ranks * d.channels))
        for r in range(d.ranks):
            rb = []
            for g in range(d.bankgroups):
                for b in range(d.banks):
                    bank = Bank(len(self.banks), r, g, b, d.row_timeout_init)
                    self.banks.append(bank)
                    rb.append(bank)
            # stagger refreshes so ranks and channels do not all block together
            self.ranks.append(Rank(r, ctrl.t.REFI + (idx * d.ranks + r) * stagger, rb))
        assert len(self.banks) == d.ranks * per_rank
        self.active: set[int] = set()
        self.idle_open: set[int] = set()
        self.alerts: set[int] = set()
        self.refreshing: set[int] = set()
        self.bus_free = 0
        self.next_wake = INF
        self.wq: dict[int, Request] = {}
        self.draining = False
        self.rfm = RfmState(len(self.banks), ctrl.cfg.mitigation.rfm_threshold) \
            if ctrl.kind == "rfm" else None
        self.prac = PracState(len(self.banks), d.rows, ctrl.cfg.mitigation.prac_threshold,
                              ctrl.cfg.mitigation.blast_radius) if ctrl.kind == "prac" else None

    # ------------------------------------------------------------------ wakes

    def want(self, c: int) -> None:
        if c < self.next_wake:
            self.next_wake = c
            self.ctrl.at(c * self.ctrl.tpc, self.on_wake, c)

    def on_wake(self, c: int) -> None:
        if c != self.next_wake:
            return
        self.next_wake = INF
        ctrl = self.ctrl
        tpc = ctrl.tpc
        peek = ctrl.peek
        while True:
            nxt = self.step(c)
            if nxt >= INF:
                return
            # keep going inline while no other event precedes the next cycle
            if peek() > nxt * tpc:
                c = nxt
                continue
            self.want(nxt)
            return

    # ------------------------------------------------------------- candidates

    def _recompute(self, b: Bank) -> None:
        b.dirty = False
        orow = b.open_row
        hk = mk = INF
        hit = miss = None
        wcls = 1 if self.draining else 3
        for r in b.reqs:
            k = ((wcls if r.is_write else r.cls) << CLS_SHIFT) | r.seq
            if r.row == orow:
                if k < hk:
                    hk, hit = k, r
            elif k < mk:
                mk, miss = k, r
        b.hit, b.miss, b.hit_key, b.miss_key = hit, miss, hk, mk

    def step(self, c: int) -> int:
        """Issue at most one command at cycle ``c``; return the next cycle worth checking."""
        ctrl = self.ctrl
        t = ctrl.t
        best_key = INF
        best = None
        earliest = INF
        banks = self.banks
        quota = ctrl.quota
        bus_ready = self.bus_free - t.CL
        # mitigation alerts and refresh drains outrank requests
        if self.alerts:
            for bi in self.alerts:
                b = banks[bi]
                if b.open_row is not None:
                    ready, cmd = b.next_pre, 1
                else:
                    ready, cmd = b.next_act, 6
                if ready <= c:
                    best_key, best = 0, (cmd, b, None)
                    break
                if ready < earliest:
                    earliest = ready
        if self.refreshing and best is None:
            for ri in self.refreshing:
                rk = self.ranks[ri]
                ready_ref = 0
                for b in rk.banks:
                    if b.open_row is not None:
                        if b.next_pre <= c:
                            best_key, best = 1, (1, b, None)
                            break
                        if b.next_pre < earliest:
                            earliest = b.next_pre
                        ready_ref = INF
                    elif b.next_act > ready_ref:
                        ready_ref = b.next_act
                if best is not None:
                    break
                if ready_ref < INF:
                    if ready_ref <= c:
                        best_key, best = 1, (4, rk, None)
                        break
                    if ready_ref < earliest:
                        earliest = ready_ref
        if best is not None:
            earliest = c + 1
        else:
            refreshing = self.refreshing
            rfm = self.rfm
            for bi in self.active:
                b = banks[bi]
                if b.alert or (refreshing and b.rank in refreshing):
                    continue
                if b.dirty:
                    self._recompute(b)
                hit = b.hit
                if hit is not None and (b.miss is None or b.hit_key < b.miss_key
                                        or b.hits_since_act < quota):
                    mk = b.miss_key
                    key = b.hit_key if b.hit_key < mk else ((mk >> CLS_SHIFT) << CLS_SHIFT) | hit.seq
                    ready = b.next_rd if b.next_rd > bus_ready else bus_ready
                    cmd = 3 if hit.is_write else 2
                    req = hit
                else:
                    req = b.miss
                    key = b.miss_key | HIT_BIT
                    if b.open_row is not None:
                        ready, cmd = b.next_pre, 1
                    elif rfm is not None and rfm.raa[bi] >= rfm.threshold:
                        ready, cmd = b.next_act, 5
                    else:
                        ready, cmd = b.next_act, 0
                if ready <= c:
                    if best is not None:
                        earliest = c + 1
                    if key < best_key:
                        best_key, best = key, (cmd, b, req)
                elif ready < earliest:
                    earliest = ready
            if best is None and self.idle_open:
                for bi in self.idle_open:
                    b = banks[bi]
                    ready = b.last_col + b.timeout
                    if b.next_pre > ready:
                        ready = b.next_pre
                    if ready <= c:
                        best = (1, b, None)
                        break
                    if ready < earliest:
                        earliest = ready
        if best is None:
            return earliest
        cmd, target, req = best  # target is a Bank, or a Rank for REF
        if cmd == 2 or cmd == 3:
            self._column(c, target, req, cmd == 3)
        elif cmd == 0:
            self._act(c, target, req)
        elif cmd == 1:
            self._pre(c, target, req is not None)
        elif cmd == 4:
            self._ref(c, target)
        elif cmd == 5:
            self._rfm(c, target)
        else:
            self._mitigate(c, target)
        return c + 1 if earliest > c + 1 else earliest

    # -------------------------------------------------------------- commands

    def _log(self, c, kind, b: Bank, row, col) -> None:
        log = self.ctrl.log
        if log is not None:
            log.append((c, kind, self.idx, b.rank, b.bg, b.ba, row, col))

    def _act(self, c: int, b: Bank, req: Request) -> None:
        ctrl, t = self.ctrl, self.ctrl.t
        row = req.row
        self._log(c, "ACT", b, row, -1)
        b.open_row = row
        b.next_rd = c + t.RCD
        if c + t.RAS > b.next_pre:
            b.next_pre = c + t.RAS
        b.next_act = c + t.RC
        b.hits_since_act = 0
        b.act_cycle = c
        b.dirty = True
        req.caused_act = True
        if b.policy_closed == row:
            b.timeout = min(ctrl.cfg.dram.row_timeout_max, b.timeout * 2)
        b.policy_closed = None
        ctrl.n_act += 1
        ctrl.acts_per_bank[self.idx * ctrl.bpc + b.idx] += 1
        if self.rfm is not None:
            self.rfm.on_act(b.idx)

    def _pre(self, c: int, b: Bank, conflict: bool) -> None:
        ctrl, t = self.ctrl, self.ctrl.t
        row = b.open_row
        self._log(c, "PRE", b, row, -1)
        ctrl.n_pre += 1
        ctrl.standby_cycles += c - b.act_cycle + t.RP
        b.open_row = None
        if c + t.RP > b.next_act:
            b.next_act = c + t.RP
        b.dirty = True
        self.idle_open.discard(b.idx)
        if conflict:
            b.timeout = max(ctrl.cfg.dram.row_timeout_min, b.timeout // 2)
            b.policy_closed = None
        elif not b.alert and b.idx not in self.alerts and not self.refreshing:
            b.policy_closed = row
        if self.prac is not None and self.prac.on_precharge(b.idx, row):
            b.alert = True
            self.alerts.add(b.idx)

    def _column(self, c: int, b: Bank, req: Request, write: bool) -> None:
        ctrl, t = self.ctrl, self.ctrl.t
        self._log(c, "WR" if write else "RD", b, req.row, req.col)
        end = c + t.CL + t.BURST
        self.bus_free = end
        ctrl.bus_busy += t.BURST
        if write:
            rec = end + t.WR
            ctrl.n_wr += 1
            if self.wq.get(req.block) is req:
                del self.wq[req.block]
                if self.draining and len(self.wq) <= ctrl.wq_low:
                    self.draining = False
                    for x in self.active:
                        self.banks[x].dirty = True
        else:
            rec = c + t.RTP
            ctrl.n_rd += 1
        if rec > b.next_pre:
            b.next_pre = rec
        o = req.origin
        if req.caused_act:
            ctrl.rb_miss[o] += 1
        else:
            ctrl.rb_hit[o] += 1
            b.hits_since_act += 1
        b.last_col = c
        b.reqs.remove(req)
        b.dirty = True
        if not b.reqs:
            self.active.discard(b.idx)
            self.idle_open.add(b.idx)
        req.done = True
        if not write:
            ctrl.at(end * ctrl.tpc, ctrl.complete, req)

    def _ref(self, c: int, rk: Rank) -> None:
        ctrl, t = self.ctrl, self.ctrl.t
        rows_per_ref = ctrl.rows_per_ref
        first = rk.ref_ptr
        b0 = rk.banks[0]
        self._log(c, "REF", b0, first, -1)
        ctrl.n_ref += 1
        for b in rk.banks:
            nxt = c + t.RFC
            if nxt > b.next_act:
                b.next_act = nxt
            if self.prac is not None:
                self.prac.on_refresh(b.idx, first, rows_per_ref)
        rk.ref_ptr = (first + rows_per_ref) % ctrl.cfg.dram.rows
        rk.ref_pending = False
        self.refreshing.discard(rk.idx)
        rk.ref_due += t.REFI
        ctrl.at(rk.ref_due * ctrl.tpc, ctrl.refresh_due, (self, rk))

    def _rfm(self, c: int, b: Bank) -> None:
        ctrl = self.ctrl
        self._log(c, "RFM", b, -1, -1)
        ctrl.n_rfm += 1
        self.rfm.on_rfm(b.idx)
        b.next_act = max(b.next_act, c + ctrl.t.RFM)

    def _mitigate(self, c: int, b: Bank) -> None:
        ctrl = self.ctrl
        row, _victims = self.prac.mitigate(b.idx)
        self._log(c, "PRAC_MITIGATE", b, row, -1)
        ctrl.n_mitigate += 1
        b.next_act = max(b.next_act, c + ctrl.t.PRAC)
        if self.prac.alert[b.idx] is None:
            b.alert = False
            self.alerts.discard(b.idx)
        b.dirty = True


class DramController:
    """All channels of one memory system plus global statistics."""

    def __init__(self, cfg: SimConfig, mapping: AddressMapping, at: Callable, peek: Callable,
                 ticks_per_cycle: int, log_commands: bool = False):
        self.cfg = cfg
        self.mapping = mapping
        self.at = at
        self.peek = peek
        self.tpc = ticks_per_cycle
        self.kind = cfg.mitigation.kind
        self.t = Timing.from_config(cfg)
        d = cfg.dram
        self.quota = d.prefetch_batch_quota
        self.wq_high, self.wq_low = d.write_queue_high, d.write_queue_low
        self.rows_per_ref = max(1, d.rows // d.refresh_commands)
        self.bpc = d.banks_per_channel
        self.log: list | None = [] if log_commands else None
        self.seq = 0
        self.n_act = self.n_pre = self.n_rd = self.n_wr = self.n_ref = self.n_rfm = 0
        self.n_mitigate = 0
        self.standby_cycles = 0
        self.bus_busy = 0
        self.rb_hit = [0] * len(ORIGINS)
        self.rb_miss = [0] * len(ORIGINS)
        self.acts_per_bank = [0] * d.total_banks
        self.reads_in = self.reads_out = self.forwarded = self.writes_in = self.writes_merged = 0
        self.channels = [Channel(self, i) for i in range(d.channels)]
        for ch in self.channels:
            for rk in ch.ranks:
                at(rk.ref_due * self.tpc, self.refresh_due, (ch, rk))

    # ---------------------------------------------------------------- inputs

    def refresh_due(self, arg) -> None:
        ch, rk = arg
        rk.ref_pending = True
        ch.refreshing.add(rk.idx)
        ch.want(rk.ref_due)

    def enqueue(self, req: Request, tick: int) -> None:
        c = -(-tick // self.tpc)
        ch_i, bank_i, row, col = self.mapping.locate(req.block << 6)
        ch = self.channels[ch_i]
        req.ch, req.bank, req.row, req.col = ch_i, bank_i, row, col * self.mapping.line_columns
        req.arrival = c
        if req.is_write:
            self.writes_in += 1
            if req.block in ch.wq:
                self.writes_merged += 1
                return
            ch.wq[req.block] = req
            if not ch.draining and len(ch.wq) >= self.wq_high:
                ch.draining = True
                for x in ch.active:
                    ch.banks[x].dirty = True
        else:
            self.reads_in += 1
            if req.block in ch.wq:
                # served from the write queue
                self.forwarded += 1
                req.done = True
                self.at((c + 1) * self.tpc, self.complete, req)
                return
        self.seq += 1
        req.seq = self.seq
        b = ch.banks[bank_i]
        b.reqs.append(req)
        b.dirty = True
        ch.active.add(bank_i)
        ch.idle_open.discard(bank_i)
        ch.want(c)

    def promote(self, req: Request) -> None:
        if req.cls != 0 and not req.done:
            req.cls = 0
            self.channels[req.ch].banks[req.bank].dirty = True

    def complete(self, req: Request) -> None:
        self.reads_out += 1
        if req.cb is not None:
            req.cb(req)

    # --------------------------------------------------------------- results

    def finalize(self, end_tick: int) -> None:
        end = end_tick // self.tpc
        for ch in self.channels:
            for b in ch.banks:
                if b.open_row is not None and end > b.act_cycle:
                    self.standby_cycles += end - b.act_cycle
                    b.act_cycle = end

    def energy_pj(self) -> float:
        e = self.cfg.dram.energy
        return (self.n_act * e.ACT + self.n_pre * e.PRE + self.n_rd * e.RD + self.n_wr * e.WR
                + self.n_ref * e.REF + (self.n_rfm + self.n_mitigate) * e.RFM
                + self.standby_cycles * e.active_standby_pj_per_cycle)

    def pending_reads(self) -> int:
        return sum(1 for ch in self.channels for b in ch.banks for r in b.reqs if not r.is_write)

    def row_timeouts(self) -> list[int]:
        return [b.timeout for ch in self.channels for b in ch.banks]


# ------------------------------------------------------------------------
# command log text format and legality audit


def format_log(log: Iterable[tuple]) -> str:
    return "".join(f"{c} {k} {ch} {ra} {bg} {ba} {row} {col}\n" for c, k, ch, ra, bg, ba, row, col in log)


def parse_log(text: str) -> list[tuple]:
    out = []
    for n, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 8 or parts[1] not in CMD_KINDS:
            raise ValueError(f"line {n}: malformed command {line!r}")
        c, k, *rest = parts
        out.append((int(c), k, *map(int, rest)))
    return out


@dataclass
class Violation:
    cycle: int
    rule: str
    where: tuple


def audit_timing(log: Iterable[tuple], t: Timing, bankgroups: int = 4, banks: int = 4) -> list[Violation]:
    """Replay a command log and report every per-bank timing or state violation."""
    out: list[Violation] = []
    state: dict[tuple, dict] = {}
    last_cmd_cycle: dict[int, int] = {}
    for c, kind, ch, ra, bg, ba, row, col in sorted(log, key=lambda e: e[0]):
        if last_cmd_cycle.get(ch) == c:
            out.append(Violation(c, "two commands in one cycle", (ch,)))
        last_cmd_cycle[ch] = c
        if kind == "REF":
            for g in range(bankgroups):
                for b in range(banks):
                    s = state.setdefault((ch, ra, g, b), {})
                    if s.get("open") is not None:
                        out.append(Violation(c, "REF with open bank", (ch, ra, g, b)))
                    if c < s.get("pre", -INF) + t.RP:
                        out.append(Violation(c, "nRP before REF", (ch, ra, g, b)))
                    s["busy"] = c + t.RFC
            continue
        key = (ch, ra, bg, ba)
        s = state.setdefault(key, {})
        if kind == "ACT":
            if s.get("open") is not None:
                out.append(Violation(c, "ACT to open bank", key))
            if c < s.get("act", -INF) + t.RC:
                out.append(Violation(c, "nRC", key))
            if c < s.get("pre", -INF) + t.RP:
                out.append(Violation(c, "nRP", key))
            if c < s.get("busy", -INF):
                out.append(Violation(c, "ACT during REF/RFM blackout", key))
            s.update(open=row, act=c)
        elif kind == "PRE":
            if s.get("open") is None:
                out.append(Violation(c, "PRE to closed bank", key))
            if c < s.get("act", -INF) + t.RAS:
                out.append(Violation(c, "nRAS", key))
            if c < s.get("rd", -INF) + t.RTP:
                out.append(Violation(c, "nRTP", key))
            if c < s.get("wr", -INF) + t.CL + t.BURST + t.WR:
                out.append(Violation(c, "nWR", key))
            s.update(open=None, pre=c)
        elif kind in ("RD", "WR"):
            if s.get("open") != row:
                out.append(Violation(c, f"{kind} to row not open", key))
            if c < s.get("act", -INF) + t.RCD:
                out.append(Violation(c, "nRCD", key))
            s["rd" if kind == "RD" else "wr"] = c
        elif kind in ("RFM", "PRAC_MITIGATE"):
            if s.get("open") is not None:
                out.append(Violation(c, f"{kind} with open bank", key))
            if c < s.get("pre", -INF) + t.RP:
                out.append(Violation(c, f"nRP before {kind}", key))
            s["busy"] = c + (t.RFM if kind == "RFM" else t.PRAC)
    return out
