import heapq

from orapsim.addrmap import AddressMapping, DramCoord
from orapsim.dram import DEMAND, DramController, Request


class MiniSim:
    """Bare event heap for driving the memory controller on its own clock."""

    def __init__(self):
        self.heap = []
        self.seq = 0
        self.now = 0

    def at(self, tick, fn, arg):
        self.seq += 1
        heapq.heappush(self.heap, (tick, self.seq, fn, arg))

    def peek(self):
        return self.heap[0][0] if self.heap else 1 << 62

    def run(self, until=None):
        while self.heap and (until is None or self.heap[0][0] <= until):
            t, _, fn, arg = heapq.heappop(self.heap)
            self.now = max(self.now, t)
            fn(arg)


class DramBench:
    """Memory controller plus helpers to inject reads and writes at given cycles."""

    def __init__(self, cfg, log=True):
        self.cfg = cfg
        self.sim = MiniSim()
        self.map = AddressMapping.from_config(cfg.mapping, cfg.dram)
        self.dram = DramController(cfg, self.map, self.sim.at, self.sim.peek, 1, log_commands=log)
        self.done = {}

    def block(self, ch=0, bg=0, ba=0, row=0, line=0):
        c = DramCoord(ch, 0, bg, ba, row, line * self.map.line_columns, line // self.map.cluster_lines)
        return self.map.compose(c) >> 6

    def _cb(self, req):
        self.done[id(req)] = self.sim.now

    def read(self, block, cycle, prefetch=False, origin=DEMAND):
        req = Request(block, False, origin, prefetch, self._cb)
        self.sim.at(cycle, lambda r: self.dram.enqueue(r, self.sim.now), req)
        return req

    def write(self, block, cycle):
        req = Request(block, True, 4, False, None)
        self.sim.at(cycle, lambda r: self.dram.enqueue(r, self.sim.now), req)
        return req

    def run(self, until=None):
        self.sim.run(until)

    def cmds(self, kind=None):
        return [e for e in self.dram.log if kind is None or e[1] == kind]


class InstantMemory:
    """Lower level that answers every request after a fixed delay."""

    def __init__(self, sim, delay=10):
        self.sim = sim
        self.delay = delay
        self.reads = []
        self.writebacks = []
        self.promoted = []

    def access(self, block, t, ip, cpu, is_write, is_prefetch, waiter):
        from orapsim.cache import HIT
        self.reads.append((block, is_prefetch))
        return HIT, t + self.delay

    def promote(self, block):
        self.promoted.append(block)

    def writeback(self, block, t):
        self.writebacks.append(block)


class HeldMemory(InstantMemory):
    """Lower level that keeps requests until ``release`` is called."""

    def __init__(self, sim):
        super().__init__(sim)
        self.waiting = {}

    def access(self, block, t, ip, cpu, is_write, is_prefetch, waiter):
        from orapsim.cache import PENDING
        self.reads.append((block, is_prefetch))
        self.waiting[block] = waiter
        return PENDING, 0

    def release(self, block):
        fn, arg = self.waiting.pop(block)
        fn(arg, self.sim.now)


def make_cache(size, ways, policy="lru", latency=0, mshr=8, reject=False, lower=None, sim=None):
    from orapsim.cache import Cache
    from orapsim.config import CacheConfig
    sim = sim or MiniSim()
    sim.measuring = True
    c = Cache(CacheConfig("llc", size, ways, latency, mshr, policy), 1, sim, reject_when_full=reject)
    c.lower = lower if lower is not None else InstantMemory(sim)
    return c, sim
