"""Physical address to DRAM coordinate mapping.

A layout is an LSB-first list of ``(field, width)`` pairs.  The line column
inside a row is split into a low ``cluster`` part (lines that share a column
cluster) and a high ``column`` part, so consecutive clusters of one row sit
far apart in the physical address space.  Bank and bank-group bits may be
XOR-permuted with row bits.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .config import DramConfig, MappingDescriptor, ConfigError

FIELDS = ("offset", "cluster", "channel", "rank", "bankgroup", "bank", "column", "row")


@dataclass(frozen=True)
class DramCoord:
    channel: int
    rank: int
    bankgroup: int
    bank: int
    row: int
    column: int  # device column of the first beat of the line
    cluster_index: int


def _log2(n: int) -> int:
    return n.bit_length() - 1


def preset_layout(name: str, dram: DramConfig, cluster_lines: int = 2) -> list[tuple[str, int]]:
    widths = {
        "offset": 6,
        "cluster": _log2(cluster_lines),
        "channel": _log2(dram.channels),
        "rank": _log2(dram.ranks),
        "bankgroup": _log2(dram.bankgroups),
        "bank": _log2(dram.banks),
        "column": _log2(dram.lines_per_row) - _log2(cluster_lines),
        "row": _log2(dram.rows),
    }
    if widths["column"] < 0:
        raise ConfigError("mapping.cluster_lines", "cluster larger than a row")
    if name == "zen4":
        order = ["offset", "cluster", "channel", "bank", "bankgroup", "column", "rank", "row"]
    elif name == "hitrate":
        # whole row contiguous: every column bit sits just above the offset
        widths["column"] += widths["cluster"]
        widths["cluster"] = 0
        order = ["offset", "column", "channel", "bank", "bankgroup", "rank", "row"]
    elif name == "blp":
        widths["column"] += widths["cluster"]
        widths["cluster"] = 0
        order = ["offset", "channel", "bank", "bankgroup", "column", "rank", "row"]
    else:
        raise ConfigError("mapping.preset", f"unknown mapping preset {name!r}")
    return [(f, widths[f]) for f in order if widths[f] > 0]


def preset_xor(name: str, dram: DramConfig) -> dict[str, list[list[int]]]:
    """Row bits folded into each bank-index bit (bank bits first, then bank group)."""
    if name != "zen4":
        return {}
    nb, ng, nr = _log2(dram.banks), _log2(dram.bankgroups), _log2(dram.rows)
    k = nb + ng
    masks: dict[str, list[list[int]]] = {"bank": [], "bankgroup": []}
    for j in range(k):
        bits = [b for b in (j, j + k, j + 2 * k) if b < nr]
        (masks["bank"] if j < nb else masks["bankgroup"]).append(bits)
    return masks


class AddressMapping:
    """Bijective mapping between byte addresses and :class:`DramCoord`."""

    def __init__(self, layout: Sequence[tuple[str, int]], dram: DramConfig,
                 xor: dict[str, list[list[int]]] | None = None, name: str = "custom"):
        self.name = name
        self.dram = dram
        self.layout = [(str(f), int(w)) for f, w in layout]
        self.xor = {k: [list(m) for m in v] for k, v in (xor or {}).items()}
        self._check()
        pos = 0
        self.fields: dict[str, tuple[int, int]] = {}
        for f, w in self.layout:
            self.fields[f] = (pos, w)
            pos += w
        self.bits = pos
        self.size = 1 << pos
        self.cluster_lines = 1 << self.width("cluster")
        self.lines_per_row = dram.lines_per_row
        self.clusters_per_row = self.lines_per_row // self.cluster_lines
        self.line_columns = dram.line_columns
        # row-bit masks per bank/bankgroup bit
        self._xor_bank = [sum(1 << b for b in m) for m in self.xor.get("bank", [])]
        self._xor_bg = [sum(1 << b for b in m) for m in self.xor.get("bankgroup", [])]
        self._sh = {f: p for f, (p, _) in self.fields.items()}
        self._mk = {f: (1 << w) - 1 for f, (_, w) in self.fields.items()}
        # line-column index j -> address bits holding it
        cw = self.width("cluster")
        self._col_deposit = [self._put("cluster", j & ((1 << cw) - 1)) | self._put("column", j >> cw)
                             for j in range(self.lines_per_row)]
        self._col_mask = self._field_mask("cluster") | self._field_mask("column")
        self._row_base_mask = (self.size - 1) & ~self._col_mask & ~63
        self.bank_count = dram.banks_per_channel
        rows = range(dram.rows)
        self._xb = [self._fold(r, self._xor_bank) for r in rows]
        self._xg = [self._fold(r, self._xor_bg) for r in rows]
        self._xor_np = None
        get = lambda f: self.fields.get(f, (0, 0))
        self._fast = (get("row")[0], (1 << get("row")[1]) - 1,
                      get("bank")[0], (1 << get("bank")[1]) - 1,
                      get("bankgroup")[0], (1 << get("bankgroup")[1]) - 1,
                      get("rank")[0], (1 << get("rank")[1]) - 1,
                      get("channel")[0], (1 << get("channel")[1]) - 1,
                      get("cluster")[0], (1 << get("cluster")[1]) - 1,
                      get("column")[0], (1 << get("column")[1]) - 1, get("cluster")[1])

    # -- construction helpers

    @classmethod
    def from_config(cls, desc: MappingDescriptor, dram: DramConfig) -> "AddressMapping":
        if desc.preset is not None:
            return cls(preset_layout(desc.preset, dram, desc.cluster_lines), dram,
                       preset_xor(desc.preset, dram) if not desc.xor else dict(
                           (n, [list(m) for m in masks]) for n, masks in desc.xor),
                       name=desc.preset)
        return cls(desc.layout, dram, {n: [list(m) for m in masks] for n, masks in desc.xor})

    @classmethod
    def preset(cls, name: str, dram: DramConfig, cluster_lines: int = 2) -> "AddressMapping":
        return cls(preset_layout(name, dram, cluster_lines), dram, preset_xor(name, dram), name=name)

    def _check(self) -> None:
        names = [f for f, _ in self.layout]
        if len(set(names)) != len(names):
            raise ConfigError("mapping.layout", "fields overlap (a field appears twice)")
        for f in names:
            if f not in FIELDS:
                raise ConfigError("mapping.layout", f"unknown field {f!r}")
        if not self.layout or self.layout[0] != ("offset", 6):
            raise ConfigError("mapping.layout", "block offset must be the low 6 bits")
        d = self.dram
        need = {"channel": d.channels, "rank": d.ranks, "bankgroup": d.bankgroups, "bank": d.banks,
                "row": d.rows}
        w = dict(self.layout)
        for f, count in need.items():
            if (1 << w.get(f, 0)) != count:
                raise ConfigError("mapping.layout", f"field {f} width does not match {count} {f}s")
        if (1 << (w.get("cluster", 0) + w.get("column", 0))) != d.lines_per_row:
            raise ConfigError("mapping.layout", "cluster+column bits must address one row of lines")
        total = sum(w.values())
        if (1 << total) != d.physical_bytes:
            raise ConfigError("mapping.layout", f"layout covers {total} bits, physical size needs "
                              f"{_log2(d.physical_bytes)}")
        for fname in ("bank", "bankgroup"):
            masks = self.xor.get(fname, [])
            if len(masks) > w.get(fname, 0):
                raise ConfigError("mapping.xor", f"more masks than {fname} bits")
            for m in masks:
                if any(b < 0 or b >= w["row"] for b in m):
                    raise ConfigError("mapping.xor", "xor bits must index row bits")

    def width(self, f: str) -> int:
        return self.fields.get(f, (0, 0))[1]

    def _field_mask(self, f: str) -> int:
        p, w = self.fields.get(f, (0, 0))
        return ((1 << w) - 1) << p

    def _put(self, f: str, v: int) -> int:
        p, w = self.fields.get(f, (0, 0))
        if v >> w:
            raise ValueError(f"value {v} does not fit field {f}")
        return v << p

    def _get(self, f: str, addr: int) -> int:
        p, w = self.fields.get(f, (0, 0))
        return (addr >> p) & ((1 << w) - 1)

    @staticmethod
    def _fold(row: int, masks: list[int]) -> int:
        v = 0
        for i, m in enumerate(masks):
            v |= (bin(row & m).count("1") & 1) << i
        return v

    # -- public API

    def decompose(self, addr: int) -> DramCoord:
        if not 0 <= addr < self.size:
            raise ValueError(f"address {addr:#x} outside physical memory of {self.size:#x} bytes")
        row = self._get("row", addr)
        bank = self._get("bank", addr) ^ self._fold(row, self._xor_bank)
        bg = self._get("bankgroup", addr) ^ self._fold(row, self._xor_bg)
        line_col = self._get("cluster", addr) | (self._get("column", addr) << self.width("cluster"))
        return DramCoord(self._get("channel", addr), self._get("rank", addr), bg, bank, row,
                         line_col * self.line_columns, line_col // self.cluster_lines)

    def compose(self, c: DramCoord) -> int:
        line_col = c.column // self.line_columns
        cw = self.width("cluster")
        addr = (self._put("row", c.row) | self._put("channel", c.channel) | self._put("rank", c.rank)
                | self._put("bank", c.bank ^ self._fold(c.row, self._xor_bank))
                | self._put("bankgroup", c.bankgroup ^ self._fold(c.row, self._xor_bg))
                | self._put("cluster", line_col & ((1 << cw) - 1)) | self._put("column", line_col >> cw))
        return addr

    def next_clusters(self, addr: int, n: int) -> list[int]:
        """Base addresses of the next ``n`` clusters in the same row, truncated at row end."""
        if n < 1:
            raise ValueError("n must be >= 1")
        cw = self.width("cluster")
        line_col = self._get("cluster", addr) | (self._get("column", addr) << cw)
        c = line_col // self.cluster_lines
        base = addr & ~self._col_mask & ~63
        last = min(c + n, self.clusters_per_row - 1)
        cl = self.cluster_lines
        dep = self._col_deposit
        return [base | dep[k * cl] for k in range(c + 1, last + 1)]

    def next_cluster_blocks(self, block: int, line_col: int, n: int) -> list[int]:
        """Block numbers of every line in the next ``n`` clusters of ``block``'s row."""
        cl = self.cluster_lines
        first = (line_col // cl + 1) * cl
        last = min(first + n * cl, self.lines_per_row)
        base = (block << 6) & self._row_base_mask
        dep = self._col_deposit
        return [(base | dep[j]) >> 6 for j in range(first, last)]

    def cluster_lines_of(self, cluster_base: int) -> list[int]:
        """All line addresses of the cluster starting at ``cluster_base``."""
        line_col = self.line_column(cluster_base)
        base = cluster_base & ~self._col_mask & ~63
        return [base | self._col_deposit[line_col + i] for i in range(self.cluster_lines)]

    def line_column(self, addr: int) -> int:
        return self._get("cluster", addr) | (self._get("column", addr) << self.width("cluster"))

    def locate(self, addr: int) -> tuple[int, int, int, int]:
        """Fast path: (channel, bank index within channel, row, line column)."""
        rs, rm, bs, bm, gs, gm, ks, km, cs, cm, ls, lm, hs, hm, cw = self._fast
        row = (addr >> rs) & rm
        bank = ((addr >> bs) & bm) ^ self._xb[row]
        bg = ((addr >> gs) & gm) ^ self._xg[row]
        d = self.dram
        flat = (((addr >> ks) & km) * d.bankgroups + bg) * d.banks + bank
        return (addr >> cs) & cm, flat, row, ((addr >> ls) & lm) | (((addr >> hs) & hm) << cw)

    def global_bank(self, addr: int) -> int:
        ch, b, _, _ = self.locate(addr)
        return ch * self.bank_count + b

    def bit_table(self) -> list[tuple[str, int, int, str]]:
        """Rows of (field, high bit, low bit, xor note) from LSB upwards."""
        out = []
        for f, (p, w) in self.fields.items():
            note = ""
            if f in self.xor and self.xor[f]:
                row_lo = self.fields["row"][0]
                note = "; ".join(f"bit{i}^addr" + "^addr".join(str(row_lo + b) for b in m)
                                 for i, m in enumerate(self.xor[f]))
            out.append((f, p + w - 1, p, note))
        return out

    def format_table(self) -> str:
        lines = [f"mapping {self.name}: {self.bits} bits, {self.clusters_per_row} clusters/row "
                 f"of {self.cluster_lines} lines"]
        for f, hi, lo, note in self.bit_table():
            rng = f"[{hi}:{lo}]" if hi != lo else f"[{lo}]"
            lines.append(f"  {f:<10}{rng:<10}{note}")
        return "\n".join(lines)

    # -- vectorized

    def _xor_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        if self._xor_np is None:
            self._xor_np = (np.array(self._xb, dtype=np.int64), np.array(self._xg, dtype=np.int64))
        return self._xor_np

    def decompose_array(self, addrs: np.ndarray) -> dict[str, np.ndarray]:
        a = np.asarray(addrs, dtype=np.uint64)
        out = {}
        for f in ("channel", "rank", "bankgroup", "bank", "row", "cluster", "column"):
            p, w = self.fields.get(f, (0, 0))
            out[f] = ((a >> np.uint64(p)) & np.uint64((1 << w) - 1)).astype(np.int64)
        row = out["row"]
        xb, xg = self._xor_arrays()
        out["bank"] ^= xb[row]
        out["bankgroup"] ^= xg[row]
        line_col = out.pop("cluster") | (out.pop("column") << self.width("cluster"))
        out["column"] = line_col * self.line_columns
        out["cluster_index"] = line_col // self.cluster_lines
        d = self.dram
        out["bank_id"] = ((out["channel"] * d.ranks + out["rank"]) * d.bankgroups
                          + out["bankgroup"]) * d.banks + out["bank"]
        return out

    def compose_array(self, co: dict[str, np.ndarray]) -> np.ndarray:
        row = np.asarray(co["row"], dtype=np.int64)
        fields = {k: np.asarray(co[k], dtype=np.int64).copy()
                  for k in ("channel", "rank", "bankgroup", "bank")}
        xb, xg = self._xor_arrays()
        fields["bank"] ^= xb[row]
        fields["bankgroup"] ^= xg[row]
        line_col = np.asarray(co["column"], dtype=np.int64) // self.line_columns
        cw = self.width("cluster")
        fields["cluster"] = line_col & ((1 << cw) - 1)
        fields["column"] = line_col >> cw
        fields["row"] = row
        addr = np.zeros(row.shape, dtype=np.uint64)
        for f, (p, w) in self.fields.items():
            if f == "offset":
                continue
            addr |= fields[f].astype(np.uint64) << np.uint64(p)
        return addr


@dataclass
class MappingAnalysis:
    est_blp: float
    est_rowbuffer_hits: float
    banks_used: int
    bank_counts: np.ndarray


def analyze_mapping(mapping: AddressMapping, addresses, window: int = 32) -> MappingAnalysis:
    """Bank dispersion and same-row-consecutive fraction of an address stream.

    ``est_blp`` is the mean number of distinct banks in consecutive windows of
    ``window`` accesses; ``est_rowbuffer_hits`` the fraction of accesses that
    target the same bank and row as the access just before them.
    """
    a = np.asarray(addresses, dtype=np.uint64) & ~np.uint64(1 << 63)
    if a.size == 0:
        raise ValueError("empty trace")
    co = mapping.decompose_array(a)
    bank = co["bank_id"]
    key = bank * mapping.dram.rows + co["row"]
    hits = float(np.mean(key[1:] == key[:-1])) if a.size > 1 else 0.0
    n = a.size // window * window
    if n:
        w = np.sort(bank[:n].reshape(-1, window), axis=1)
        blp = float(np.mean(1 + np.count_nonzero(np.diff(w, axis=1), axis=1)))
    else:
        blp = float(len(np.unique(bank)))
    counts = np.bincount(bank, minlength=mapping.dram.total_banks)
    return MappingAnalysis(blp, hits, int(np.count_nonzero(counts)), counts)
