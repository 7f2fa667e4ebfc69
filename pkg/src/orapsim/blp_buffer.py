"""Bank-leveling prefetch buffer.

Candidates are parked in one of 16 sub-buffers chosen by destination bank.
Each cycle at most two entries leave, from two different sub-buffers, and an
entry holds its slot until the prefetch returns or is dropped.  A bank whose
prefetches return slowly therefore fills its sub-buffer and stops accepting
more, while other banks keep flowing.
"""

from __future__ import annotations

from dataclasses import dataclass


class BufferEntry:
    __slots__ = ("block", "sub", "cpu", "engine", "ip", "t", "pending")

    def __init__(self, block: int, sub: int, cpu: int, engine: int, ip: int, t: int):
        self.block = block
        self.sub = sub
        self.cpu = cpu
        self.engine = engine
        self.ip = ip
        self.t = t
        self.pending = False


@dataclass
class BufferStats:
    inserted: int = 0
    rejected_full: int = 0
    rejected_quota: int = 0
    issued: int = 0
    completed: int = 0
    dropped: int = 0
    released: int = 0
    errors: int = 0


class BankBuffer:
    """Shared by every core's prefetcher; capacity scales with core count."""

    def __init__(self, sub_buffers: int = 16, entries_per_core: int = 64, cores: int = 1,
                 issue_width: int = 2):
        if entries_per_core % sub_buffers:
            raise ValueError("entries_per_core must be a multiple of sub_buffers")
        self.n_sub = sub_buffers
        self.capacity = entries_per_core // sub_buffers * cores
        self.quota = entries_per_core
        self.issue_width = issue_width
        self.subs: list[list[BufferEntry]] = [[] for _ in range(sub_buffers)]
        self.entries: dict[int, BufferEntry] = {}
        self.per_cpu = [0] * cores
        self.ready = 0  # entries not yet issued
        self.pointer = 0
        self.stats = BufferStats()
        self.notify = None  # called as notify(t) when an entry becomes issuable

    def __len__(self) -> int:
        return len(self.entries)

    def insert(self, block: int, bank_id: int, cpu: int, engine: int, ip: int, t: int) -> bool:
        st = self.stats
        if block in self.entries:
            st.errors += 1
            return False
        sub = bank_id % self.n_sub
        if len(self.subs[sub]) >= self.capacity:
            st.rejected_full += 1
            return False
        if self.per_cpu[cpu] >= self.quota:
            st.rejected_quota += 1
            return False
        e = BufferEntry(block, sub, cpu, engine, ip, t)
        self.subs[sub].append(e)
        self.entries[block] = e
        self.per_cpu[cpu] += 1
        self.ready += 1
        st.inserted += 1
        if self.notify is not None:
            self.notify(t)
        return True

    def issue_cycle(self) -> list[BufferEntry]:
        """Pick up to ``issue_width`` oldest non-pending entries from distinct sub-buffers."""
        if not self.ready:
            return []
        out = []
        n = self.n_sub
        p = self.pointer
        for i in range(n):
            s = (p + i) % n
            for e in self.subs[s]:
                if not e.pending:
                    e.pending = True
                    out.append(e)
                    break
            else:
                continue
            if len(out) == self.issue_width:
                self.pointer = (s + 1) % n
                break
        else:
            if out:
                self.pointer = (out[-1].sub + 1) % n
        self.ready -= len(out)
        self.stats.issued += len(out)
        return out

    def _remove(self, e: BufferEntry) -> None:
        self.subs[e.sub].remove(e)
        del self.entries[e.block]
        self.per_cpu[e.cpu] -= 1
        if not e.pending:
            self.ready -= 1

    def complete(self, block: int) -> bool:
        """The prefetch for ``block`` returned; frees its slot."""
        e = self.entries.get(block)
        if e is None or not e.pending:
            self.stats.errors += 1
            return False
        self._remove(e)
        self.stats.completed += 1
        return True

    def drop(self, block: int) -> bool:
        """Discard an entry whose prefetch turned out to be redundant."""
        e = self.entries.get(block)
        if e is None:
            self.stats.errors += 1
            return False
        self._remove(e)
        self.stats.dropped += 1
        return True

    def release(self, block: int) -> None:
        """Return an issued entry to the ready state so it is tried again."""
        e = self.entries.get(block)
        if e is not None and e.pending:
            e.pending = False
            self.ready += 1
            self.stats.released += 1
            if self.notify is not None:
                self.notify(e.t)

    def occupancy(self) -> list[int]:
        return [len(s) for s in self.subs]
