"""Trace-driven core front end with a bounded instruction window.

Each record is one memory instruction.  The core charges ``base_cpi_non_mem``
cycles per instruction between records, issues the access to L1D, and keeps
going until the oldest unfinished load falls ``rob_capacity`` instructions
behind the next record.  Loads retire in order once their data arrives;
stores retire as soon as L1D accepts them.
"""

from __future__ import annotations

import math
from collections import deque

from .cache import HIT, REJECT
from .config import CoreConfig

INF = 1 << 62


class Core:
    __slots__ = ("cpu", "cfg", "sim", "l1", "instr", "ip", "addr", "store", "n", "idx",
                 "ready", "window", "pending", "waiting", "blocked", "last_done",
                 "rob", "cost_per_instr", "prev_instr", "loads", "stores", "stall_ticks",
                 "warmup", "on_warm", "finished_tick")

    def __init__(self, cpu: int, cfg: CoreConfig, sim, l1, trace, ticks_per_cycle: int,
                 warmup: int = 0, on_warm=None):
        self.cpu = cpu
        self.cfg = cfg
        self.sim = sim
        self.l1 = l1
        self.instr, self.ip, self.addr, self.store = trace.columns()
        self.n = len(self.instr)
        self.idx = 0
        self.ready = 0
        self.window: deque = deque()   # [instr, done_tick or None] per load, oldest first
        self.pending = 0
        self.waiting = None            # window entry the core is stalled on
        self.blocked = False           # L1 refused the last access
        self.last_done = 0
        self.rob = cfg.rob_capacity
        self.cost_per_instr = cfg.base_cpi_non_mem * ticks_per_cycle
        self.prev_instr = self.instr[0] if self.n else 0
        self.loads = self.stores = 0
        self.stall_ticks = 0
        self.warmup = warmup if 0 < warmup < self.n else -1
        self.on_warm = on_warm
        self.finished_tick = None
        l1.free_listeners.append(self._l1_free)

    # ------------------------------------------------------------- status

    @property
    def issued_all(self) -> bool:
        return self.idx >= self.n

    @property
    def finished(self) -> bool:
        return self.idx >= self.n and self.pending == 0

    def next_tick(self) -> int:
        """Tick at which the core can next do work, or INF while stalled or done."""
        if self.idx >= self.n or self.waiting is not None or self.blocked:
            return INF
        return self.ready

    def end_tick(self) -> int:
        return max(self.ready, self.last_done)

    def retired_instructions(self) -> int:
        return self.instr[-1] + 1 if self.n else 0

    def instructions_before(self, idx: int) -> int:
        return self.instr[idx] if idx < self.n else self.retired_instructions()

    # ---------------------------------------------------------- callbacks

    def _load_done(self, entry, t: int) -> None:
        entry[1] = t
        self.pending -= 1
        if t > self.last_done:
            self.last_done = t
        if self.waiting is entry:
            self.waiting = None
            if t > self.ready:
                self.stall_ticks += t - self.ready
                self.ready = t
        if self.pending == 0 and self.idx >= self.n and self.finished_tick is None:
            self.finished_tick = self.end_tick()

    def _l1_free(self, t: int) -> None:
        if self.blocked:
            self.blocked = False
            if t > self.ready:
                self.stall_ticks += t - self.ready
                self.ready = t

    # --------------------------------------------------------------- issue

    def run(self, limit: int) -> None:
        """Issue records while the core's time stays at or below ``limit``."""
        instr, ips, addrs, stores = self.instr, self.ip, self.addr, self.store
        window = self.window
        l1 = self.l1
        rob = self.rob
        cpu = self.cpu
        n = self.n
        while self.idx < n and self.waiting is None and not self.blocked:
            i = self.idx
            if i == self.warmup:
                self.warmup = -1
                self.on_warm(self)
            I = instr[i]
            gap = I - self.prev_instr
            t = self.ready
            if gap > 0:
                t += math.ceil(gap * self.cost_per_instr)
            # in-order retirement bounds how far ahead of the oldest load we run
            while window and window[0][0] <= I - rob:
                done = window[0][1]
                if done is None:
                    self.waiting = window[0]
                    self.ready = t
                    self.prev_instr = I
                    return
                if done > t:
                    self.stall_ticks += done - t
                    t = done
                window.popleft()
            if t > limit:
                self.ready = t
                self.prev_instr = I
                return
            self.ready = t
            self.prev_instr = I
            block = addrs[i] >> 6
            if stores[i]:
                status, _ = l1.access(block, t, ips[i], cpu, True, False, None)
                if status == REJECT:
                    self.blocked = True
                    return
                self.stores += 1
            else:
                entry = [I, None]
                status, done = l1.access(block, t, ips[i], cpu, False, False,
                                         (self._load_done, entry))
                if status == REJECT:
                    self.blocked = True
                    return
                if status == HIT:
                    entry[1] = done
                    if done > self.last_done:
                        self.last_done = done
                else:
                    self.pending += 1
                window.append(entry)
                self.loads += 1
            self.idx = i + 1
        if self.idx >= n and self.pending == 0 and self.finished_tick is None:
            self.finished_tick = self.end_tick()
