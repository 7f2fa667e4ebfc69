"""Run reports and the derived metrics computed from them.

A report covers the measured region only: every counter is the difference
between the end of the run and the snapshot taken when warmup finished.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field, fields

from .dram import ORIGINS

CSV_SCHEMA_VERSION = 1
LEVELS = ("l1d", "l2", "llc")
_CACHE_FIELDS = ("accesses", "hits", "misses", "merges", "fills", "evictions", "retries",
                 "rejects", "pf_requested", "pf_hit_dropped", "pf_merge_dropped",
                 "pf_mshr_dropped", "latency_sum", "latency_count")


@dataclass
class SimReport:
    label: str = ""
    retired_instructions: int = 0
    cycles: int = 0
    act_count: int = 0
    pre_count: int = 0
    rd_count: int = 0
    wr_count: int = 0
    ref_count: int = 0
    rfm_count: int = 0
    prac_mitigations: int = 0
    rowbuffer_hits: int = 0
    rowbuffer_misses: int = 0
    rowbuffer_hits_by_origin: dict = field(default_factory=dict)
    rowbuffer_misses_by_origin: dict = field(default_factory=dict)
    prefetch_issued: dict = field(default_factory=dict)
    prefetch_useful: dict = field(default_factory=dict)
    prefetch_late: dict = field(default_factory=dict)
    prefetch_dropped: dict = field(default_factory=dict)
    dynamic_energy_pj: float = 0.0
    bus_busy_cycles: int = 0
    standby_cycles: int = 0
    latency_sum: int = 0
    latency_count: int = 0
    latency_hist: list = field(default_factory=list)
    cache: dict = field(default_factory=dict)
    acts_per_bank: list = field(default_factory=list)
    rfm_per_bank: list = field(default_factory=list)
    dram_reads: int = 0
    dram_writes: int = 0
    dram_forwarded: int = 0
    buffer: dict = field(default_factory=dict)
    in_flight_end: int = 0
    conservation_ok: bool = True

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "SimReport":
        data = json.loads(text)
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in known})


# --------------------------------------------------------------------------
# counter collection


def collect_counters(sim, tick: int) -> dict:
    """Cumulative counters of a running simulation at ``tick``."""
    d = sim.dram
    out = {
        "tick": tick,
        "instr": sum(c.instructions_before(c.idx) for c in sim.cores),
        "act": d.n_act, "pre": d.n_pre, "rd": d.n_rd, "wr": d.n_wr, "ref": d.n_ref,
        "rfm": d.n_rfm, "mitigate": d.n_mitigate, "standby": d.standby_cycles,
        "bus": d.bus_busy, "rb_hit": list(d.rb_hit), "rb_miss": list(d.rb_miss),
        "acts_per_bank": list(d.acts_per_bank),
        "rfm_per_bank": _rfm_per_bank(d),
        "reads_in": d.reads_in, "writes_in": d.writes_in, "forwarded": d.forwarded,
        "blp_dropped": list(sim.blp_dropped),
    }
    groups = {"l1d": sim.l1s, "l2": sim.l2s, "llc": [sim.llc]}
    for level, caches in groups.items():
        for f in _CACHE_FIELDS:
            out[f"{level}.{f}"] = sum(getattr(c.stats, f) for c in caches)
        for f in ("pf_issued", "pf_useful", "pf_late"):
            out[f"{level}.{f}"] = [sum(v) for v in zip(*(getattr(c.stats, f) for c in caches))]
    out["latency_hist"] = list(sim.llc.stats.latency_hist)
    if sim.blp is not None:
        for k, v in asdict(sim.blp.stats).items():
            out[f"blp.{k}"] = v
    return out


def _rfm_per_bank(d) -> list:
    out = []
    for ch in d.channels:
        if ch.rfm is None:
            out.extend([0] * len(ch.banks))
        else:
            out.extend(ch.rfm.issued)
    return out


def zero_counters(sim) -> dict:
    return {k: ([0] * len(v) if isinstance(v, list) else 0)
            for k, v in collect_counters(sim, 0).items()}


def _delta(end: dict, start: dict) -> dict:
    out = {}
    for k, v in end.items():
        s = start[k]
        out[k] = [a - b for a, b in zip(v, s)] if isinstance(v, list) else v - s
    return out


def conservation(sim) -> tuple[bool, int]:
    """Checks that every request is either completed, dropped or still in flight."""
    d = sim.dram
    in_flight = len(sim.port.pending)
    ok = d.reads_in == d.reads_out + in_flight
    blp = sim.blp
    if blp is not None:
        st = blp.stats
        ok = ok and st.inserted == st.completed + st.dropped + len(blp.entries)
        ok = ok and st.errors == 0
        ok = ok and sum(len(o.outstanding) for o in sim.orap) == len(blp.entries)
    for c in sim.cores:
        ok = ok and c.pending == sum(1 for e in c.window if e[1] is None)
    return ok, in_flight


def _engines(sim) -> list[tuple[str, str, int]]:
    """(report key, cache level, engine index) for each active prefetch engine."""
    out = []
    cfg = sim.cfg
    for level in ("l1d", "l2"):
        name = cfg.prefetcher(level)
        if name != "none":
            out.append((f"{level}.{name}", level, 0))
    name = cfg.prefetcher("llc")
    if name in ("orap", "orap+hsd"):
        out.append(("llc.next_column", "llc", 0))
        if name == "orap+hsd":
            out.append(("llc.hsd", "llc", 1))
    elif name != "none":
        out.append((f"llc.{name}", "llc", 0))
    return out


def build_report(sim, start: dict, end: dict) -> SimReport:
    x = _delta(end, start)
    cfg = sim.cfg
    e = cfg.dram.energy
    energy = (x["act"] * e.ACT + x["pre"] * e.PRE + x["rd"] * e.RD + x["wr"] * e.WR
              + x["ref"] * e.REF + (x["rfm"] + x["mitigate"]) * e.RFM
              + x["standby"] * e.active_standby_pj_per_cycle)
    r = SimReport(
        label="/".join(f"{lvl}={n}" for lvl, n in sorted(cfg.prefetchers)) + f"/{cfg.mitigation.kind}",
        retired_instructions=x["instr"],
        cycles=-(-x["tick"] // sim.core_tpc),
        act_count=x["act"], pre_count=x["pre"], rd_count=x["rd"], wr_count=x["wr"],
        ref_count=x["ref"], rfm_count=x["rfm"], prac_mitigations=x["mitigate"],
        rowbuffer_hits=sum(x["rb_hit"]), rowbuffer_misses=sum(x["rb_miss"]),
        rowbuffer_hits_by_origin=dict(zip(ORIGINS, x["rb_hit"])),
        rowbuffer_misses_by_origin=dict(zip(ORIGINS, x["rb_miss"])),
        dynamic_energy_pj=round(energy, 3),
        bus_busy_cycles=x["bus"], standby_cycles=x["standby"],
        latency_sum=x["llc.latency_sum"], latency_count=x["llc.latency_count"],
        latency_hist=x["latency_hist"],
        acts_per_bank=x["acts_per_bank"], rfm_per_bank=x["rfm_per_bank"],
        dram_reads=x["reads_in"], dram_writes=x["writes_in"], dram_forwarded=x["forwarded"],
    )
    for key, level, eng in _engines(sim):
        r.prefetch_issued[key] = x[f"{level}.pf_issued"][eng]
        r.prefetch_useful[key] = x[f"{level}.pf_useful"][eng]
        r.prefetch_late[key] = x[f"{level}.pf_late"][eng]
        if key.startswith("llc.") and sim.blp is not None:
            r.prefetch_dropped[key] = x["blp_dropped"][eng]
        else:
            r.prefetch_dropped[key] = (x[f"{level}.pf_hit_dropped"] + x[f"{level}.pf_merge_dropped"]
                                       + x[f"{level}.pf_mshr_dropped"])
    for level in LEVELS:
        r.cache[level] = {f: x[f"{level}.{f}"] for f in ("accesses", "hits", "misses", "merges",
                                                         "fills", "evictions")}
    if sim.blp is not None:
        r.buffer = {k[4:]: v for k, v in x.items() if k.startswith("blp.") and k != "blp_dropped"}
    r.conservation_ok, r.in_flight_end = conservation(sim)
    return r


# --------------------------------------------------------------------------
# derived metrics


def _per_instr(value: float, r: SimReport) -> float:
    if r.retired_instructions <= 0:
        raise ValueError("report has no retired instructions")
    return value / r.retired_instructions


def apki(r: SimReport) -> float:
    """DRAM activations per thousand retired instructions."""
    return 1000.0 * _per_instr(r.act_count, r)


def rpki(r: SimReport) -> float:
    return 1000.0 * _per_instr(r.rd_count, r)


def depi(r: SimReport) -> float:
    """Dynamic DRAM energy per retired instruction, in pJ."""
    return _per_instr(r.dynamic_energy_pj, r)


def usefulness(r: SimReport, engine: str) -> float:
    issued = r.prefetch_issued.get(engine, 0)
    if issued <= 0:
        raise ValueError(f"engine {engine!r} issued no prefetches")
    return r.prefetch_useful.get(engine, 0) / issued


def rowbuffer_hit_rate(r: SimReport, origin: str | None = None) -> float:
    if origin is None:
        h, m = r.rowbuffer_hits, r.rowbuffer_misses
    else:
        h = r.rowbuffer_hits_by_origin.get(origin, 0)
        m = r.rowbuffer_misses_by_origin.get(origin, 0)
    return h / (h + m) if h + m else 0.0


def avg_dram_latency(r: SimReport) -> float:
    """Mean LLC miss latency in core cycles, from MSHR allocation to fill."""
    return r.latency_sum / r.latency_count if r.latency_count else 0.0


def bandwidth_gbps(r: SimReport, core_mhz: float = 4000.0) -> float:
    if r.cycles <= 0:
        return 0.0
    seconds = r.cycles / (core_mhz * 1e6)
    return (r.rd_count + r.wr_count) * 64 / seconds / 1e9


def ipc(r: SimReport) -> float:
    return r.retired_instructions / r.cycles if r.cycles else 0.0


def check_invariants(r: SimReport) -> list[str]:
    problems = []
    if r.rowbuffer_hits + r.rowbuffer_misses != r.rd_count + r.wr_count:
        problems.append("rowbuffer hits + misses != column commands")
    for k, issued in r.prefetch_issued.items():
        if r.prefetch_useful.get(k, 0) > issued:
            problems.append(f"{k}: useful exceeds issued")
    if not r.conservation_ok:
        problems.append("request conservation failed")
    return problems


# --------------------------------------------------------------------------
# comparison and output


def _pct(a: float, b: float) -> float:
    if a == 0:
        return 0.0 if b == 0 else float("inf")
    return 100.0 * (b - a) / a


def compare(a: SimReport, b: SimReport) -> dict[str, float]:
    """Percentage change from ``a`` to ``b`` (usefulness in percentage points)."""
    if a.retired_instructions != b.retired_instructions:
        raise ValueError(f"instruction counts differ: {a.retired_instructions} vs "
                         f"{b.retired_instructions}")
    out = {
        "cycles": _pct(a.cycles, b.cycles),
        "apki": _pct(apki(a), apki(b)),
        "depi": _pct(depi(a), depi(b)),
    }
    for k in sorted(set(a.prefetch_issued) & set(b.prefetch_issued)):
        ua = usefulness(a, k) if a.prefetch_issued[k] else 0.0
        ub = usefulness(b, k) if b.prefetch_issued[k] else 0.0
        out[f"usefulness:{k}"] = 100.0 * (ub - ua)
    return out


def summary_row(r: SimReport) -> dict:
    row = {
        "schema": CSV_SCHEMA_VERSION,
        "label": r.label,
        "instructions": r.retired_instructions,
        "cycles": r.cycles,
        "ipc": round(ipc(r), 6),
        "apki": round(apki(r), 6) if r.retired_instructions else 0.0,
        "rpki": round(rpki(r), 6) if r.retired_instructions else 0.0,
        "depi_pj": round(depi(r), 6) if r.retired_instructions else 0.0,
        "energy_pj": r.dynamic_energy_pj,
        "acts": r.act_count,
        "reads": r.rd_count,
        "writes": r.wr_count,
        "rfm": r.rfm_count,
        "prac_mitigations": r.prac_mitigations,
        "rb_hit_rate": round(rowbuffer_hit_rate(r), 6),
        "nc_rb_hit_rate": round(rowbuffer_hit_rate(r, "next_column"), 6),
        "avg_dram_latency": round(avg_dram_latency(r), 3),
    }
    for k in sorted(r.prefetch_issued):
        row[f"issued:{k}"] = r.prefetch_issued[k]
        row[f"useful:{k}"] = r.prefetch_useful[k]
    return row


def to_csv(rows: list[dict], extra: list[dict] | None = None) -> str:
    """Delimited text; ``extra`` holds per-row leading columns such as grid coordinates."""
    merged = [dict(**(extra[i] if extra else {}), **row) for i, row in enumerate(rows)]
    columns: list[str] = []
    for row in merged:
        for k in row:
            if k not in columns:
                columns.append(k)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, restval="", lineterminator="\n")
    w.writeheader()
    for row in merged:
        w.writerow(row)
    return buf.getvalue()


def format_table(r: SimReport) -> str:
    row = summary_row(r)
    width = max(len(k) for k in row)
    lines = [f"{k:<{width}}  {v}" for k, v in row.items() if k != "schema"]
    for k in sorted(r.prefetch_issued):
        if r.prefetch_issued[k]:
            lines.append(f"{'usefulness:' + k:<{width}}  {usefulness(r, k):.4f}")
    return "\n".join(lines)


def format_compare(delta: dict[str, float]) -> str:
    width = max(len(k) for k in delta)
    return "\n".join(f"{k:<{width}}  {v:+.2f}%" for k, v in delta.items())
