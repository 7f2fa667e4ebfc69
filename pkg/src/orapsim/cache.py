"""Set-associative cache levels with MSHRs, prefetch promotion, LRU and SHiP.

Levels are non-inclusive, write-back and write-allocate.  A lookup resolves
synchronously at the time the request reaches the level; only fills travel
through the event queue.  Waiters are ``(fn, arg)`` pairs called as
``fn(arg, tick)`` when the block arrives.

SHiP at the LLC learns only from demand traffic: prefetch fills are inserted
untracked, prefetch hits leave replacement state alone, and a demand hit on a
prefetched line adopts it as if the demand had filled it.
"""

from __future__ import annotations

from collections import deque
from typing import Callable, Optional

from .config import CacheConfig

HIT, PENDING, REJECT = 0, 1, 2

SHCT_BITS = 14
SHCT_MAX = 3
RRPV_MAX = 3


def ship_signature(ip: int) -> int:
    x = (ip * 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    return x >> (64 - SHCT_BITS)


class Line:
    __slots__ = ("block", "way", "dirty", "pf", "engine", "ip", "measured", "stamp",
                 "rrpv", "sig", "tracked", "reused", "cpu")

    def __init__(self, block: int, way: int):
        self.block = block
        self.way = way
        self.dirty = False
        self.pf = False
        self.engine = 0
        self.ip = 0
        self.measured = False
        self.stamp = 0
        self.rrpv = RRPV_MAX
        self.sig = 0
        self.tracked = False
        self.reused = False
        self.cpu = 0


class Mshr:
    __slots__ = ("block", "waiters", "is_prefetch", "own_pf", "promoted", "late", "engine",
                 "ip", "cpu", "t_alloc", "dirty", "dram_req", "demand_ip")

    def __init__(self, block: int, t: int, ip: int, cpu: int, is_prefetch: bool, own_pf: bool,
                 engine: int):
        self.block = block
        self.waiters: list = []
        self.is_prefetch = is_prefetch
        self.own_pf = own_pf
        self.promoted = False
        self.late = False
        self.engine = engine
        self.ip = ip
        self.demand_ip = ip
        self.cpu = cpu
        self.t_alloc = t
        self.dirty = False
        self.dram_req = None


class CacheStats:
    FIELDS = ("accesses", "hits", "misses", "merges", "rejects", "retries", "fills",
              "evictions", "writebacks_out", "writebacks_in", "pf_requested", "pf_hit_dropped",
              "pf_merge_dropped", "pf_mshr_dropped", "useless_evicted", "latency_sum",
              "latency_count")

    def __init__(self, engines: int = 4):
        for f in self.FIELDS:
            setattr(self, f, 0)
        self.pf_issued = [0] * engines
        self.pf_useful = [0] * engines
        self.pf_late = [0] * engines
        self.latency_hist = [0] * 24

    def snapshot(self) -> dict:
        d = {f: getattr(self, f) for f in self.FIELDS}
        d["pf_issued"] = list(self.pf_issued)
        d["pf_useful"] = list(self.pf_useful)
        d["pf_late"] = list(self.pf_late)
        d["latency_hist"] = list(self.latency_hist)
        return d


class Cache:
    """One cache level.  ``lower`` is another Cache or a memory adapter."""

    def __init__(self, cfg: CacheConfig, ticks_per_cycle: int, sim=None, reject_when_full: bool = False):
        self.cfg = cfg
        self.name = cfg.name
        self.sets_n = cfg.sets
        self.set_mask = cfg.sets - 1
        self.ways = cfg.ways
        self.lat = cfg.latency * ticks_per_cycle
        self.tpc = ticks_per_cycle
        self.mshr_cap = cfg.mshr_entries
        self.ship = cfg.replacement == "ship"
        self.sets: list[list[Optional[Line]]] = [[None] * cfg.ways for _ in range(cfg.sets)]
        self.lines: dict[int, Line] = {}
        self.mshr: dict[int, Mshr] = {}
        self.retry: deque = deque()
        self.reject_when_full = reject_when_full
        self.lower = None
        self.sim = sim
        self.pf = None            # prefetcher attached at this level
        self.free_listeners: list[Callable] = []
        self.stats = CacheStats()
        self.clock = 0
        self.shct = [1] * (1 << SHCT_BITS) if self.ship else None

    # ------------------------------------------------------------ replacement

    def probe(self, block: int) -> Optional[Line]:
        return self.lines.get(block)

    def touch(self, line: Line, demand: bool, ip: int) -> None:
        """Replacement update on a hit."""
        if not demand:
            return
        if self.ship:
            if line.tracked:
                if not line.reused:
                    line.reused = True
                    s = line.sig
                    if self.shct[s] < SHCT_MAX:
                        self.shct[s] += 1
            else:
                # first demand touch of a prefetched or written-back line
                line.tracked = True
                line.reused = False
                line.sig = ship_signature(ip)
            line.rrpv = 0
        else:
            self.clock += 1
            line.stamp = self.clock

    def _victim_way(self, ways: list) -> int:
        for w, ln in enumerate(ways):
            if ln is None:
                return w
        if self.ship:
            while True:
                for w, ln in enumerate(ways):
                    if ln.rrpv >= RRPV_MAX:
                        return w
                for ln in ways:
                    ln.rrpv += 1
        best, best_w = None, 0
        for w, ln in enumerate(ways):
            if best is None or ln.stamp < best:
                best, best_w = ln.stamp, w
        return best_w

    def install(self, block: int, t: int, *, dirty: bool = False, pf: bool = False, engine: int = 0,
                ip: int = 0, kind: str = "demand", cpu: int = 0) -> Line:
        """Place ``block`` in its set, evicting a victim if needed.

        ``kind`` is "demand", "prefetch" or "writeback" and selects SHiP insertion.
        """
        ways = self.sets[block & self.set_mask]
        w = self._victim_way(ways)
        old = ways[w]
        if old is not None:
            self._evict(old, t)
        ln = Line(block, w)
        ln.dirty = dirty
        ln.pf = pf
        ln.engine = engine
        ln.ip = ip
        ln.cpu = cpu
        if self.ship:
            if kind == "demand":
                ln.tracked = True
                ln.sig = ship_signature(ip)
                ln.rrpv = RRPV_MAX if self.shct[ln.sig] == 0 else RRPV_MAX - 1
            elif kind == "prefetch":
                ln.rrpv = RRPV_MAX - 1
            else:
                ln.rrpv = RRPV_MAX
        else:
            self.clock += 1
            ln.stamp = self.clock
        ways[w] = ln
        self.lines[block] = ln
        self.stats.fills += 1
        return ln

    def _evict(self, old: Line, t: int) -> None:
        st = self.stats
        st.evictions += 1
        del self.lines[old.block]
        if self.ship and old.tracked and not old.reused:
            s = old.sig
            if self.shct[s] > 0:
                self.shct[s] -= 1
        if old.pf:
            st.useless_evicted += 1
            if self.pf is not None:
                self.pf.on_evict_unused(old, t)
        if old.dirty:
            st.writebacks_out += 1
            if self.lower is not None:
                self.lower.writeback(old.block, t)

    def invalidate_all(self) -> None:
        self.sets = [[None] * self.ways for _ in range(self.sets_n)]
        self.lines.clear()

    # ------------------------------------------------------------- requests

    def access(self, block: int, t: int, ip: int, cpu: int, is_write: bool, is_prefetch: bool,
               waiter) -> tuple[int, int]:
        """Request from the level above (or the core) arriving at tick ``t``.

        Returns (HIT, ready_tick), (PENDING, 0) or (REJECT, 0).  Pending
        requests call ``waiter`` when the block arrives.
        """
        st = self.stats
        st.accesses += 1
        ln = self.lines.get(block)
        if ln is not None:
            st.hits += 1
            if ln.pf:
                self._useful(ln, ip, t)
            self.touch(ln, not is_prefetch, ip)
            if is_write:
                ln.dirty = True
            if self.pf is not None:
                self.pf.on_access(block, ip, True, t, cpu, is_prefetch)
            return HIT, t + self.lat
        m = self.mshr.get(block)
        if m is not None:
            st.merges += 1
            if waiter is not None:
                m.waiters.append(waiter)
            if is_write:
                m.dirty = True
            if m.own_pf and not m.late:
                # a demand caught our prefetch in flight
                m.late = True
                m.demand_ip = ip
                if not is_prefetch:
                    self.promote(block)
                if self.pf is not None:
                    self.pf.on_late(m, ip, t)
            elif not is_prefetch and m.is_prefetch and not m.promoted:
                self.promote(block)
            if self.pf is not None:
                self.pf.on_access(block, ip, False, t, cpu, is_prefetch)
            return PENDING, 0
        if len(self.mshr) >= self.mshr_cap:
            if self.reject_when_full:
                st.rejects += 1
                return REJECT, 0
            st.retries += 1
            self.retry.append((block, ip, cpu, is_write, is_prefetch, waiter))
            return PENDING, 0
        st.misses += 1
        m = Mshr(block, t, ip, cpu, is_prefetch, False, 0)
        if waiter is not None:
            m.waiters.append(waiter)
        m.dirty = is_write
        self.mshr[block] = m
        self._send_down(m, t + self.lat)
        if self.pf is not None:
            self.pf.on_access(block, ip, False, t, cpu, is_prefetch)
        return PENDING, 0

    def prefetch(self, block: int, t: int, ip: int, cpu: int, engine: int = 0) -> str:
        """Prefetch issued by this level's own engine: 'hit', 'merge', 'full' or 'sent'."""
        st = self.stats
        st.pf_requested += 1
        if block in self.lines:
            st.pf_hit_dropped += 1
            return "hit"
        if block in self.mshr:
            st.pf_merge_dropped += 1
            return "merge"
        if len(self.mshr) >= self.mshr_cap:
            st.pf_mshr_dropped += 1
            return "full"
        m = Mshr(block, t, ip, cpu, True, True, engine)
        self.mshr[block] = m
        self._send_down(m, t + self.lat)
        return "sent"

    def _send_down(self, m: Mshr, t: int) -> None:
        status, ready = self.lower.access(m.block, t, m.ip, m.cpu, False, m.is_prefetch,
                                          (self.fill, m.block))
        if status == HIT:
            self.sim.at(ready, self._fill_event, m.block)
        elif status == REJECT:  # lower levels queue instead of rejecting
            raise RuntimeError("lower level rejected a request")

    def _fill_event(self, block: int) -> None:
        self.fill(block, self.sim.now)

    def promote(self, block: int) -> None:
        m = self.mshr.get(block)
        if m is None or m.promoted:
            return
        m.promoted = True
        if self.lower is not None:
            self.lower.promote(block)

    def fill(self, block: int, t: int) -> None:
        m = self.mshr.pop(block)
        st = self.stats
        measuring = self.sim.measuring if self.sim is not None else True
        if m.own_pf:
            e = m.engine
            if measuring:
                st.pf_issued[e] += 1
                if m.late:
                    st.pf_useful[e] += 1
                    st.pf_late[e] += 1
            ln = self.install(block, t, dirty=m.dirty, pf=not m.late, engine=e, ip=m.ip,
                              kind="demand" if m.late else "prefetch", cpu=m.cpu)
            if m.late and self.ship:
                ln.sig = ship_signature(m.demand_ip)
            ln.measured = measuring
            if self.pf is not None:
                self.pf.on_fill(m, t)
        else:
            ln = self.install(block, t, dirty=m.dirty, ip=m.ip, cpu=m.cpu,
                              kind="prefetch" if m.is_prefetch and not m.promoted else "demand")
            if not m.is_prefetch or m.promoted:
                lat = (t - m.t_alloc) // self.tpc
                st.latency_sum += lat
                st.latency_count += 1
                st.latency_hist[min(23, lat.bit_length())] += 1
        for fn, arg in m.waiters:
            fn(arg, t)
        self._drain_retry(t)
        for cb in self.free_listeners:
            cb(t)

    def _drain_retry(self, t: int) -> None:
        retry = self.retry
        while retry and len(self.mshr) < self.mshr_cap:
            block, ip, cpu, is_write, is_prefetch, waiter = retry.popleft()
            status, ready = self.access(block, t, ip, cpu, is_write, is_prefetch, waiter)
            if status == HIT and waiter is not None:
                self.sim.at(ready, _call_waiter, (waiter, ready))

    def _useful(self, ln: Line, ip: int, t: int) -> None:
        ln.pf = False
        if ln.measured:
            self.stats.pf_useful[ln.engine] += 1
        if self.pf is not None:
            self.pf.on_useful(ln, ip, t)

    def writeback(self, block: int, t: int) -> None:
        self.stats.writebacks_in += 1
        ln = self.lines.get(block)
        if ln is not None:
            ln.dirty = True
            return
        m = self.mshr.get(block)
        if m is not None:
            m.dirty = True
            return
        self.install(block, t, dirty=True, kind="writeback")


def _call_waiter(arg) -> None:
    (fn, a), t = arg
    fn(a, t)


class MemoryPort:
    """Adapter between the LLC and the DRAM controller."""

    def __init__(self, dram, sim, origin_of: Callable[[Mshr], int] | None = None):
        from .dram import Request, DEMAND, UPPER_PF, WRITEBACK
        self._Request = Request
        self.dram = dram
        self.sim = sim
        self.llc: Cache | None = None
        self.pending: dict[int, object] = {}
        self.DEMAND, self.UPPER_PF, self.WRITEBACK = DEMAND, UPPER_PF, WRITEBACK

    def access(self, block, t, ip, cpu, is_write, is_prefetch, waiter):
        m = self.llc.mshr[block]
        if m.own_pf:
            origin = 1 + m.engine
        else:
            origin = self.UPPER_PF if is_prefetch else self.DEMAND
        req = self._Request(block, False, origin, is_prefetch, self._done)
        m.dram_req = req
        self.pending[block] = (req, waiter)
        self.dram.enqueue(req, t)
        return PENDING, 0

    def _done(self, req) -> None:
        _, waiter = self.pending.pop(req.block)
        fn, arg = waiter
        fn(arg, self.sim.now)

    def promote(self, block: int) -> None:
        p = self.pending.get(block)
        if p is not None:
            self.dram.promote(p[0])

    def writeback(self, block: int, t: int) -> None:
        self.dram.enqueue(self._Request(block, True, self.WRITEBACK, False, None), t)
