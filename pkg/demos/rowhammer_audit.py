"""Hammer one DRAM row and audit how much disturbance its neighbours absorb.

Caches would absorb a plain load loop (real attacks flush between loads), so
this demo talks to the memory controller directly: it alternates reads to an
aggressor row and a distant row of the same bank, so every read activates.
The command log is then replayed by the independent disturbance audit.
"""

import heapq

from orapsim.addrmap import AddressMapping, DramCoord
from orapsim.config import preset, with_mitigation
from orapsim.dram import DEMAND, DramController, Request
from orapsim.mitigation import disturbance_audit


class Clock:
    def __init__(self):
        self.heap, self.seq, self.now = [], 0, 0

    def at(self, tick, fn, arg):
        self.seq += 1
        heapq.heappush(self.heap, (tick, self.seq, fn, arg))

    def peek(self):
        return self.heap[0][0] if self.heap else 1 << 62

    def run(self, until):
        # refresh keeps rescheduling itself, so stop at a fixed time
        while self.heap and self.heap[0][0] <= until:
            self.now, _, fn, arg = heapq.heappop(self.heap)
            fn(arg)


def hammer(kind: str, reads: int = 8000, spacing: int = 1300):
    cfg = with_mitigation(preset("paper-1core"), kind)
    clock = Clock()
    m = AddressMapping.from_config(cfg.mapping, cfg.dram)
    dram = DramController(cfg, m, clock.at, clock.peek, 1, log_commands=True)
    rows = (40100, 52000)
    blocks = [m.compose(DramCoord(0, 0, 0, 0, r, 0, 0)) >> 6 for r in rows]
    for i in range(reads):
        req = Request(blocks[i % 2], False, DEMAND, False, lambda r: None)
        clock.at(i * spacing, lambda r: dram.enqueue(r, clock.now), req)
    clock.run(reads * spacing + 2000)
    d = cfg.dram
    return disturbance_audit(dram.log, cfg.mitigation.blast_radius, d.rows, dram.rows_per_ref,
                             bankgroups=d.bankgroups, banks=d.banks)


if __name__ == "__main__":
    print("aggressor row 40100 hammered 4000 times (threshold 512)")
    for kind in ("none", "rfm", "prac"):
        res = hammer(kind)
        print(f"{kind:>5}: worst victim absorbed {res.max_disturbance:5d} activations "
              f"(row {res.worst_row[-1]}); RFM {res.rfms}, PRAC mitigations {res.mitigations}")
