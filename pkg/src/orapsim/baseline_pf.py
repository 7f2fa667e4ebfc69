"""Reference prefetchers: next-line and per-IP constant stride.

Neither crosses a 2 MiB page boundary.  Both attach to a single cache level
and issue through ``cache.prefetch``.
"""

from __future__ import annotations

from collections import OrderedDict

PAGE_BLOCKS = (2 << 20) >> 6  # 2 MiB page in 64 B blocks

STRIDE_DEGREE = 4
STRIDE_CONFIRMATIONS = 2
STRIDE_TABLE = 256


def same_page(a: int, b: int) -> bool:
    return a // PAGE_BLOCKS == b // PAGE_BLOCKS


class Prefetcher:
    """No-op base; also serves as the "none" prefetcher."""

    name = "none"

    def __init__(self, cache=None, cpu: int = 0):
        self.cache = cache
        self.cpu = cpu
        self.issued = 0

    def candidates(self, block: int, ip: int) -> list[int]:
        return []

    def on_access(self, block, ip, hit, t, cpu, is_prefetch) -> None:
        if is_prefetch:
            return
        for b in self.candidates(block, ip):
            self.issued += 1
            self.cache.prefetch(b, t, ip, cpu, 0)

    def on_fill(self, mshr, t) -> None:
        pass

    def on_useful(self, line, ip, t) -> None:
        pass

    def on_late(self, mshr, ip, t) -> None:
        pass

    def on_evict_unused(self, line, t) -> None:
        pass


class NextLine(Prefetcher):
    name = "next_line"

    def candidates(self, block: int, ip: int) -> list[int]:
        nxt = block + 1
        return [nxt] if same_page(block, nxt) else []


class Stride(Prefetcher):
    """Per-IP stride detector issuing ``STRIDE_DEGREE`` blocks ahead.

    A stride must be observed ``STRIDE_CONFIRMATIONS`` times in a row before
    the entry issues (0, 2, 4 confirms +2); any mismatch retrains on the new
    delta with a count of one.
    """

    name = "stride"

    def __init__(self, cache=None, cpu: int = 0, degree: int = STRIDE_DEGREE,
                 confirmations: int = STRIDE_CONFIRMATIONS, entries: int = STRIDE_TABLE):
        super().__init__(cache, cpu)
        self.degree = degree
        self.need = confirmations
        self.entries = entries
        self.table: OrderedDict[int, list[int]] = OrderedDict()  # ip -> [last, stride, conf]

    def candidates(self, block: int, ip: int) -> list[int]:
        e = self.table.get(ip)
        if e is None:
            if len(self.table) >= self.entries:
                self.table.popitem(last=False)
            self.table[ip] = [block, 0, 0]
            return []
        self.table.move_to_end(ip)
        last, stride, conf = e
        d = block - last
        if d == 0:
            return []
        if d == stride:
            conf = min(conf + 1, self.need)
        else:
            stride, conf = d, 1
        e[0], e[1], e[2] = block, stride, conf
        if conf < self.need:
            return []
        out = []
        for k in range(1, self.degree + 1):
            b = block + k * stride
            if b < 0 or not same_page(block, b):
                break
            out.append(b)
        return out


def make_prefetcher(name: str, cache=None, cpu: int = 0) -> Prefetcher:
    if name == "none":
        return Prefetcher(cache, cpu)
    if name == "next_line":
        return NextLine(cache, cpu)
    if name == "stride":
        return Stride(cache, cpu)
    raise ValueError(f"unknown baseline prefetcher {name!r}")
