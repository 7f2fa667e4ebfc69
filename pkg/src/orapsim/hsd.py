"""Hybrid stream detection: histogram-driven forward prefetching.

Streams are collated by IP or by 4 KiB page.  A stream's depth is the length
of its current constant-stride run inside one page.  Each epoch the training
histogram counts how many streams reached each depth; at the end of the epoch
it becomes the active histogram.  A stream at depth ``d`` prefetches forward
through every depth ``k`` whose continuation ratio ``active[k] / active[d]``
meets the probability requirement, which falls as confidence rises.
"""

from __future__ import annotations

from .config import OrapConfig

PAGE_LINES = 64
STRIDE_MIN, STRIDE_MAX = -4, 3
COUNT_MAX = (1 << 13) - 1

TRAIN, ACTIVE = 0, 1


def p_req(confidence: int, cfg: OrapConfig = OrapConfig()) -> float:
    p = cfg.hsd_p_req_max - (cfg.hsd_p_req_max - cfg.hsd_p_req_min) * confidence / 255
    return min(cfg.hsd_p_req_max, max(cfg.hsd_p_req_min, p))


class Stream:
    __slots__ = ("ip", "page", "last", "depth", "stride", "stamp", "ahead")

    def __init__(self, ip: int, block: int, stamp: int):
        self.ip = ip
        self.page = block >> 6
        self.last = block
        self.depth = 1
        self.stride = 1
        self.stamp = stamp
        self.ahead = 0  # blocks already prefetched beyond ``last``


class Hsd:
    def __init__(self, cfg: OrapConfig = OrapConfig()):
        self.cfg = cfg
        self.max_streams = cfg.hsd_streams
        self.max_depth = cfg.hsd_max_depth
        self.epoch_length = cfg.hsd_epoch_length
        self.streams: list[Stream] = []
        self.active = [0] * (self.max_depth + 1)
        self.training = [0] * (self.max_depth + 1)
        self.epoch_count = 0
        self.epochs = 0
        self.state = TRAIN
        self.clock = 0
        self.evictions = 0

    # --------------------------------------------------------------- streams

    def _find(self, ip: int, page: int) -> Stream | None:
        by_page = None
        for s in self.streams:
            if s.ip == ip:
                return s
            if by_page is None and s.page == page:
                by_page = s
        return by_page

    def _allocate(self, ip: int, block: int) -> Stream:
        s = Stream(ip, block, self.clock)
        if len(self.streams) < self.max_streams:
            self.streams.append(s)
        else:
            # evict the oldest stream; ties go to the lowest index
            victim = min(range(len(self.streams)), key=lambda i: (self.streams[i].stamp, i))
            self.streams[victim] = s
            self.evictions += 1
        self._count(1)
        return s

    def _count(self, depth: int) -> None:
        if self.training[depth] < COUNT_MAX:
            self.training[depth] += 1

    def _tick_epoch(self) -> None:
        self.epoch_count += 1
        if self.epoch_count >= self.epoch_length:
            self.rollover()

    def rollover(self) -> None:
        """End of epoch: the training histogram becomes the active one."""
        self.active = self.training
        self.training = [0] * (self.max_depth + 1)
        self.epoch_count = 0
        self.epochs += 1
        self.state = ACTIVE

    # ---------------------------------------------------------------- access

    def on_access(self, ip: int, block: int, confidence: int) -> tuple[int, list[int]]:
        """Observe one LLC access; returns (stream IP, blocks to prefetch)."""
        self.clock += 1
        self._tick_epoch()
        page = block >> 6
        s = self._find(ip, page)
        if s is None:
            self._allocate(ip, block)
            return ip, []
        s.stamp = self.clock
        delta = block - s.last
        if delta == 0:
            return s.ip, []
        if not STRIDE_MIN <= delta <= STRIDE_MAX:
            s.ip, s.page, s.last, s.depth, s.stride, s.ahead = ip, page, block, 1, 1, 0
            self._count(1)
            return s.ip, []
        if page != s.page:
            # runs are measured per page; carry the stride into the new page
            s.page, s.depth, s.ahead = page, 1, 0
            s.stride = delta
            self._count(1)
        elif delta == s.stride:
            if s.depth < self.max_depth:
                s.depth += 1
                self._count(s.depth)
            s.ahead = max(0, s.ahead - 1)
        else:
            s.stride, s.depth, s.ahead = delta, 1, 0
        s.last = block
        if self.state != ACTIVE:
            return s.ip, []
        reach = self.lookahead(s.depth, p_req(confidence, self.cfg))
        if reach <= s.ahead:
            return s.ip, []
        out = []
        for j in range(s.ahead + 1, reach + 1):
            b = block + j * s.stride
            if b >> 6 != page:
                break
            out.append(b)
        s.ahead = reach
        return s.ip, out

    def lookahead(self, depth: int, p: float) -> int:
        """How many strides past ``depth`` the active histogram supports at probability ``p``."""
        act = self.active
        base = act[depth] if depth < len(act) else 0
        if base == 0:
            return 0
        need = p * base
        n = 0
        for k in range(depth + 1, self.max_depth + 1):
            if act[k] < need:
                break
            n += 1
        return n

    def continuation(self, depth: int, k: int) -> float:
        base = self.active[depth]
        return self.active[k] / base if base else 0.0
