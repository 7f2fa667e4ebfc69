"""Command-line harness: trace generation, single runs, sweeps and audits.

Exit status is 0 only when the run finished and every enabled audit passed
(timing legality of the command log and request conservation).
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import metrics
from .addrmap import AddressMapping, analyze_mapping
from .config import (MITIGATION_KINDS, PREFETCH_SETUPS, ConfigError, SimConfig, load_config,
                     preset, with_mitigation, with_setup)
from .dram import Timing, Violation, audit_timing, format_log
from .mitigation import AuditResult, audit_bound, disturbance_audit
from .sim import Simulator
from .trace import GENERATORS, TraceError, TraceSpec, generate, read_trace, write_trace


@dataclass
class CheckedRun:
    report: metrics.SimReport
    violations: list[Violation] = field(default_factory=list)
    disturbance: AuditResult | None = None
    problems: list[str] = field(default_factory=list)
    log: list | None = None

    @property
    def ok(self) -> bool:
        return not self.violations and not self.problems


def checked_run(cfg: SimConfig, traces, audit: bool = True, keep_log: bool = False) -> CheckedRun:
    """Simulate and run the timing, disturbance and conservation audits."""
    sim = Simulator(cfg, traces, log_commands=audit or keep_log)
    report = sim.run()
    out = CheckedRun(report, problems=metrics.check_invariants(report))
    if audit:
        d = cfg.dram
        out.violations = audit_timing(sim.dram.log, Timing.from_config(cfg), d.bankgroups, d.banks)
        out.disturbance = disturbance_audit(sim.dram.log, cfg.mitigation.blast_radius, d.rows,
                                            sim.dram.rows_per_ref, bankgroups=d.bankgroups,
                                            banks=d.banks)
    if keep_log:
        out.log = sim.dram.log
    return out


# --------------------------------------------------------------------------
# argument helpers


def _config(args) -> SimConfig:
    cfg = load_config(args.config) if args.config else preset(args.preset)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.replace(rng_seed=args.seed)
    if getattr(args, "warmup", None) is not None:
        cfg = cfg.replace(warmup_records=args.warmup)
    if getattr(args, "mitigation", None):
        cfg = with_mitigation(cfg, args.mitigation)
    if getattr(args, "prefetch", None):
        cfg = with_setup(cfg, args.prefetch)
    return cfg


def _traces(paths: list[str], cfg: SimConfig):
    traces = [read_trace(p) for p in paths]
    if len(traces) == 1 and cfg.core_count > 1:
        traces = traces * cfg.core_count
    return traces


def _add_config_args(p: argparse.ArgumentParser, with_setup_flags: bool = True) -> None:
    p.add_argument("--preset", default="paper-1core", help="named configuration (default paper-1core)")
    p.add_argument("--config", help="YAML configuration file; overrides --preset")
    p.add_argument("--seed", type=int, help="override the configuration's RNG seed")
    if with_setup_flags:
        p.add_argument("--prefetch", choices=sorted(PREFETCH_SETUPS),
                       help="prefetcher setup to apply on top of the configuration")
        p.add_argument("--mitigation", choices=MITIGATION_KINDS, help="Rowhammer mitigation")
        p.add_argument("--warmup", type=int, help="records of core 0 to run before measuring")


# --------------------------------------------------------------------------
# subcommands


def cmd_gen_trace(args) -> int:
    spec = TraceSpec(generator=args.generator, footprint_bytes=args.footprint,
                     stride_bytes=args.stride, stream_count=args.streams, ip_count=args.ips,
                     length_records=args.records, seed=args.seed, base=args.base,
                     instr_gap=args.gap, store_fraction=args.store_fraction)
    tr = generate(spec)
    write_trace(args.out, tr)
    print(f"wrote {len(tr)} records ({tr.instructions} instructions) to {args.out}")
    return 0


def cmd_run(args) -> int:
    cfg = _config(args)
    traces = _traces(args.trace, cfg)
    res = checked_run(cfg, traces, audit=not args.no_audit, keep_log=bool(args.log))
    r = res.report
    print(metrics.format_table(r))
    if args.report:
        Path(args.report).write_text(r.to_json())
    if args.csv:
        Path(args.csv).write_text(metrics.to_csv([metrics.summary_row(r)]))
    if args.log:
        Path(args.log).write_text(format_log(res.log))
    return _finish(res)


def _finish(res: CheckedRun) -> int:
    for v in res.violations[:20]:
        print(f"timing violation: {v}", file=sys.stderr)
    for p in res.problems:
        print(f"audit failure: {p}", file=sys.stderr)
    return 0 if res.ok else 1


def cmd_sweep(args) -> int:
    base = _config(args)
    traces = _traces(args.trace, base)
    rows, coords = [], []
    status = 0
    for pf in args.prefetchers.split(","):
        for mit in args.mitigations.split(","):
            cfg = with_mitigation(with_setup(base, pf), mit)
            res = checked_run(cfg, traces, audit=not args.no_audit)
            rows.append(metrics.summary_row(res.report))
            coords.append({"prefetch": pf, "mitigation": mit})
            if not res.ok:
                status = 1
                _finish(res)
            print(f"{pf:>10} {mit:>5}  cycles={res.report.cycles}  "
                  f"apki={metrics.apki(res.report):.3f}", file=sys.stderr)
    text = metrics.to_csv(rows, coords)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return status


def cmd_compare(args) -> int:
    a = metrics.SimReport.from_json(Path(args.a).read_text())
    b = metrics.SimReport.from_json(Path(args.b).read_text())
    try:
        delta = metrics.compare(a, b)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(metrics.format_compare(delta))
    return 0


def cmd_inspect_map(args) -> int:
    cfg = _config(args)
    m = AddressMapping.from_config(cfg.mapping, cfg.dram)
    print(m.format_table())
    for a in args.addr or []:
        print(f"{a}: {m.decompose(int(a, 0))}")
    if args.trace:
        tr = read_trace(args.trace)
        res = analyze_mapping(m, tr.addresses, window=args.window)
        print(f"estimated BLP {res.est_blp:.3f}, rowbuffer hit estimate "
              f"{res.est_rowbuffer_hits:.3f}, banks used {res.banks_used}")
    return 0


def cmd_audit_disturbance(args) -> int:
    cfg = _config(args)
    traces = _traces(args.trace, cfg)
    res = checked_run(cfg, traces, audit=True)
    d = res.disturbance
    m = cfg.mitigation
    if args.limit is not None:
        limit = args.limit
    elif m.kind == "none":
        limit = m.prac_threshold
    else:
        limit = audit_bound(m.kind, m.prac_threshold if m.kind == "prac" else m.rfm_threshold,
                            m.blast_radius)
    print(f"mitigation {m.kind}: max neighbour activations {d.max_disturbance} at {d.worst_row}, "
          f"limit {limit}; ACT {d.acts} REF {d.refreshes} RFM {d.rfms} mitigations {d.mitigations}")
    if d.max_disturbance > limit:
        print("disturbance bound exceeded", file=sys.stderr)
        return 1
    return _finish(res)


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="orapsim", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-trace", help="write a synthetic trace")
    g.add_argument("--generator", choices=GENERATORS, default="stream")
    g.add_argument("--records", type=int, default=100_000)
    g.add_argument("--footprint", type=lambda s: int(s, 0), default=1 << 30, help="bytes")
    g.add_argument("--stride", type=int, default=64, help="bytes between accesses (stride/cyclic)")
    g.add_argument("--streams", type=int, default=1)
    g.add_argument("--ips", type=int, default=1)
    g.add_argument("--base", type=lambda s: int(s, 0), default=0)
    g.add_argument("--gap", type=int, default=4, help="instructions per record")
    g.add_argument("--store-fraction", type=float, default=0.0)
    g.add_argument("--seed", type=int, default=1)
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_gen_trace)

    r = sub.add_parser("run", help="simulate one configuration")
    _add_config_args(r)
    r.add_argument("--trace", nargs="+", required=True, help="one trace per core (or one for all)")
    r.add_argument("--report", help="write the JSON report here")
    r.add_argument("--csv", help="write a one-row CSV summary here")
    r.add_argument("--log", help="write the DRAM command log here")
    r.add_argument("--no-audit", action="store_true", help="skip the command-log audits")
    r.set_defaults(fn=cmd_run)

    s = sub.add_parser("sweep", help="prefetcher x mitigation grid to CSV")
    _add_config_args(s)
    s.add_argument("--trace", nargs="+", required=True)
    s.add_argument("--prefetchers", default="none,next-line,orap,orap+hsd")
    s.add_argument("--mitigations", default="none,rfm,prac")
    s.add_argument("--out", help="CSV path (default stdout)")
    s.add_argument("--no-audit", action="store_true")
    s.set_defaults(fn=cmd_sweep)

    c = sub.add_parser("compare", help="percentage deltas between two JSON reports")
    c.add_argument("a")
    c.add_argument("b")
    c.set_defaults(fn=cmd_compare)

    m = sub.add_parser("inspect-map", help="print the address mapping")
    _add_config_args(m, with_setup_flags=False)
    m.add_argument("--addr", nargs="*", help="addresses to decompose")
    m.add_argument("--trace", help="estimate BLP and rowbuffer locality for a trace")
    m.add_argument("--window", type=int, default=32)
    m.set_defaults(fn=cmd_inspect_map)

    a = sub.add_parser("audit-disturbance", help="run and check per-row disturbance")
    _add_config_args(a)
    a.add_argument("--trace", nargs="+", required=True)
    a.add_argument("--limit", type=int, help="override the allowed neighbour activations")
    a.set_defaults(fn=cmd_audit_disturbance)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, TraceError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
