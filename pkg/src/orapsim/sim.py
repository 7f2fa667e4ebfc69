"""Event loop tying cores, caches, prefetchers and the memory controller together.

Time is an integer tick chosen so that both the core and the memory clock are
whole multiples of it (62.5 ps for 4 GHz cores and 3200 MHz DRAM).  Cores run
inline between events; everything else goes through a single heap.
"""

from __future__ import annotations

import heapq
import math
from typing import Sequence

from . import metrics
from .addrmap import AddressMapping
from .baseline_pf import make_prefetcher
from .blp_buffer import BankBuffer
from .cache import Cache, MemoryPort
from .config import SimConfig
from .core import Core, INF
from .dram import DramController
from .hsd import Hsd
from .orap import HSD_ENGINE, Orap
from .trace import Trace


class _PerCpu:
    """Routes LLC prefetcher hooks to the instance owned by the requesting core."""

    def __init__(self, engines: list):
        self.engines = engines

    def on_access(self, block, ip, hit, t, cpu, is_prefetch):
        self.engines[cpu].on_access(block, ip, hit, t, cpu, is_prefetch)

    def on_fill(self, m, t):
        self.engines[m.cpu].on_fill(m, t)

    def on_useful(self, line, ip, t):
        self.engines[line.cpu].on_useful(line, ip, t)

    def on_late(self, m, ip, t):
        self.engines[m.cpu].on_late(m, ip, t)

    def on_evict_unused(self, line, t):
        self.engines[line.cpu].on_evict_unused(line, t)


class Simulator:
    def __init__(self, cfg: SimConfig, traces: Sequence[Trace] | Trace, log_commands: bool = False):
        if isinstance(traces, Trace):
            traces = [traces]
        if len(traces) != cfg.core_count:
            raise ValueError(f"config has {cfg.core_count} cores but {len(traces)} traces were given")
        cfg.validate()
        self.cfg = cfg
        self.heap: list = []
        self.seq = 0
        self.now = 0
        self.measuring = cfg.warmup_records == 0
        self.snap: dict | None = None

        base = math.lcm(int(cfg.core.freq_mhz), int(cfg.dram.clock_mhz))
        self.core_tpc = base // int(cfg.core.freq_mhz)
        self.dram_tpc = base // int(cfg.dram.clock_mhz)

        self.mapping = AddressMapping.from_config(cfg.mapping, cfg.dram)
        self.dram = DramController(cfg, self.mapping, self.at, self.peek, self.dram_tpc,
                                   log_commands=log_commands)
        self.port = MemoryPort(self.dram, self)
        l1c, l2c, llcc = cfg.cache_levels
        self.llc = Cache(llcc, self.core_tpc, self)
        self.llc.lower = self.port
        self.port.llc = self.llc
        self.l1s, self.l2s = [], []
        for cpu in range(cfg.core_count):
            l2 = Cache(l2c, self.core_tpc, self)
            l2.lower = self.llc
            l1 = Cache(l1c, self.core_tpc, self, reject_when_full=True)
            l1.lower = l2
            l1.pf = _attach(make_prefetcher(cfg.prefetcher("l1d"), l1, cpu), cfg.prefetcher("l1d"))
            l2.pf = _attach(make_prefetcher(cfg.prefetcher("l2"), l2, cpu), cfg.prefetcher("l2"))
            self.l1s.append(l1)
            self.l2s.append(l2)

        llc_pf = cfg.prefetcher("llc")
        self.llc_pf_name = llc_pf
        self.blp: BankBuffer | None = None
        self.orap: list[Orap] = []
        self.blp_scheduled = False
        self.blp_paused = False
        self.blp_dropped = [0, 0]
        if llc_pf in ("orap", "orap+hsd"):
            o = cfg.orap
            self.blp = BankBuffer(o.blp_sub_buffers, o.blp_entries, cfg.core_count, o.blp_issue_width)
            self.blp.notify = self._blp_kick
            for cpu in range(cfg.core_count):
                hsd = Hsd(o) if llc_pf == "orap+hsd" else None
                self.orap.append(Orap(o, self.mapping, self.llc, self.blp, cpu,
                                      seed=cfg.rng_seed * 7919 + cpu, hsd=hsd))
            self.llc.pf = self.orap[0] if cfg.core_count == 1 else _PerCpu(self.orap)
            self.llc.free_listeners.append(self._llc_free)
        else:
            self.llc.pf = _attach(make_prefetcher(llc_pf, self.llc, 0), llc_pf)

        self.cores = [Core(cpu, cfg.core, self, self.l1s[cpu], tr, self.core_tpc,
                           warmup=cfg.warmup_records if cpu == 0 else 0, on_warm=self._warm)
                      for cpu, tr in enumerate(traces)]
        self.end_tick = 0

    # ---------------------------------------------------------------- events

    def at(self, tick: int, fn, arg) -> None:
        self.seq += 1
        heapq.heappush(self.heap, (tick, self.seq, fn, arg))

    def peek(self) -> int:
        t = self.heap[0][0] if self.heap else INF
        for c in self.cores:
            r = c.next_tick()
            if r < t:
                t = r
        return t

    def run(self) -> "metrics.SimReport":
        heap = self.heap
        cores = self.cores
        pop = heapq.heappop
        single = cores[0] if len(cores) == 1 else None
        while True:
            te = heap[0][0] if heap else INF
            if single is not None:
                tc = single.next_tick()
                if tc <= te:
                    single.run(te)
                    continue
                if single.finished:
                    break
            else:
                best, tc = None, INF
                for c in cores:
                    r = c.next_tick()
                    if r < tc:
                        best, tc = c, r
                if best is not None and tc <= te:
                    limit = te
                    for c in cores:
                        if c is not best:
                            r = c.next_tick()
                            if r < limit:
                                limit = r
                    best.run(limit)
                    continue
                done = True
                for c in cores:
                    if not c.finished:
                        done = False
                        break
                if done:
                    break
            if not heap:
                raise RuntimeError("simulation deadlocked: cores waiting with no pending events")
            tick, _, fn, arg = pop(heap)
            if tick > self.now:
                self.now = tick
            fn(arg)
        self.end_tick = 0
        for c in cores:
            if c.end_tick() > self.end_tick:
                self.end_tick = c.end_tick()
        self.dram.finalize(self.end_tick)
        if self.snap is None:
            self.snap = metrics.zero_counters(self)
        return metrics.build_report(self, self.snap, metrics.collect_counters(self, self.end_tick))

    # ---------------------------------------------------------------- warmup

    def _warm(self, core: Core) -> None:
        t = core.ready
        self.dram.finalize(t)
        self.snap = metrics.collect_counters(self, t)
        self.measuring = True

    # ----------------------------------------------------------- BLP issuer

    def _blp_kick(self, t: int = 0) -> None:
        if not self.blp_scheduled and not self.blp_paused:
            self.blp_scheduled = True
            tpc = self.core_tpc
            t = max(t, self.now)
            self.at((t // tpc + 1) * tpc, self._blp_issue, None)

    def _llc_free(self, t: int) -> None:
        if self.blp_paused:
            self.blp_paused = False
            if self.blp.ready:
                self._blp_kick(t)

    def _blp_issue(self, _arg) -> None:
        self.blp_scheduled = False
        blp, llc, now = self.blp, self.llc, self.now
        if len(llc.mshr) >= llc.mshr_cap:
            # nothing can be accepted; wait for the LLC to free an MSHR
            self.blp_paused = True
            return
        for e in blp.issue_cycle():
            res = llc.prefetch(e.block, now, e.ip, e.cpu, e.engine)
            if res == "sent":
                if e.engine == HSD_ENGINE:
                    self.orap[e.cpu].on_hsd_miss(e.block, e.ip, now)
            elif res == "full":
                self.blp_paused = True
                blp.release(e.block)
            else:
                blp.drop(e.block)
                self.orap[e.cpu].on_drop(e.block)
                if self.measuring:
                    self.blp_dropped[e.engine] += 1
        if blp.ready and not self.blp_paused:
            self._blp_kick()


def _attach(pf, name: str):
    return None if name == "none" else pf


def simulate(cfg: SimConfig, traces, log_commands: bool = False) -> "metrics.SimReport":
    return Simulator(cfg, traces, log_commands).run()
