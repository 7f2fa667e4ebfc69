"""Simulation configuration: dataclasses, validation, YAML I/O and built-in presets.

Every config object is frozen once built.  ``load_config`` and ``dump_config``
round-trip through plain YAML whose keys mirror the dataclass field names.
"""

from __future__ import annotations

import copy
import dataclasses
import math
from dataclasses import dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Any

import yaml


class ConfigError(ValueError):
    """Raised when a configuration fails to parse or violates an invariant."""

    def __init__(self, field_name: str, message: str):
        self.field = field_name
        super().__init__(f"{field_name}: {message}")


@dataclass(frozen=True)
class Timings:
    """DDR timing parameters in nanoseconds."""

    nCL: float = 16.25
    nRCD: float = 16.25
    nRP: float = 16.25
    nRAS: float = 32.5
    nRC: float = 48.0
    nWR: float = 30.0
    nRTP: float = 7.5
    nRFC: float = 295.0

    def validate(self, prefix: str = "dram.timings_ns") -> None:
        for f in fields(self):
            v = getattr(self, f.name)
            if not v > 0:
                raise ConfigError(f"{prefix}.{f.name}", f"must be strictly positive, got {v}")
        if self.nRC < self.nRAS:
            raise ConfigError(f"{prefix}.nRC", f"nRC ({self.nRC}) must be >= nRAS ({self.nRAS})")
        if self.nRAS < self.nRCD:
            raise ConfigError(f"{prefix}.nRAS", f"nRAS ({self.nRAS}) must be >= nRCD ({self.nRCD})")


STANDARD_TIMINGS = Timings()
PRAC_TIMINGS = Timings(nRP=36.25, nRAS=16.25, nRC=52.0, nWR=10.0, nRTP=5.0)


@dataclass(frozen=True)
class EnergyConstants:
    """Per-command energy in pJ and open-bank standby energy per memory cycle.

    Magnitudes follow DDR5 datasheet-style IDD figures for a 32-bit subchannel
    rank; only relative comparisons are meaningful.
    """

    ACT: float = 1060.0
    PRE: float = 620.0
    RD: float = 1450.0
    WR: float = 1530.0
    REF: float = 42000.0
    RFM: float = 5200.0
    active_standby_pj_per_cycle: float = 9.5

    def validate(self) -> None:
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ConfigError(f"dram.energy.{f.name}", "must be nonnegative")


@dataclass(frozen=True)
class DramConfig:
    channels: int = 2
    ranks: int = 1
    bankgroups: int = 4
    banks: int = 4
    rows: int = 65536
    columns: int = 1024
    channel_width_bits: int = 32
    device_width_bits: int = 16
    density_gbit: float = 16.0
    data_rate_mtps: int = 6400
    burst_length: int = 16
    refresh_period_ms: float = 32.0
    refresh_commands: int = 8192
    timings_ns: Timings = STANDARD_TIMINGS
    energy: EnergyConstants = EnergyConstants()
    # controller policy knobs
    write_queue_high: int = 48
    write_queue_low: int = 16
    prefetch_batch_quota: int = 4
    row_timeout_init: int = 128
    row_timeout_min: int = 8
    row_timeout_max: int = 2048

    @property
    def clock_mhz(self) -> float:
        return self.data_rate_mtps / 2

    @property
    def tck_ns(self) -> float:
        return 1000.0 / self.clock_mhz

    @property
    def row_bytes(self) -> int:
        return self.columns * self.channel_width_bits // 8

    @property
    def line_columns(self) -> int:
        """Device columns covered by one 64 B cache line."""
        return 64 * 8 // self.channel_width_bits

    @property
    def lines_per_row(self) -> int:
        return self.row_bytes // 64

    @property
    def banks_per_rank(self) -> int:
        return self.bankgroups * self.banks

    @property
    def banks_per_channel(self) -> int:
        return self.ranks * self.banks_per_rank

    @property
    def total_banks(self) -> int:
        return self.channels * self.banks_per_channel

    @property
    def physical_bytes(self) -> int:
        return self.total_banks * self.rows * self.row_bytes

    def cycles(self, ns: float) -> int:
        """Round a nanosecond duration up to whole memory-controller cycles."""
        return math.ceil(round(ns / self.tck_ns, 9))

    def validate(self) -> None:
        for name in ("channels", "ranks", "bankgroups", "banks", "rows", "columns",
                     "channel_width_bits", "device_width_bits", "data_rate_mtps",
                     "burst_length", "refresh_commands"):
            v = getattr(self, name)
            if not isinstance(v, int) or v <= 0:
                raise ConfigError(f"dram.{name}", f"must be a positive integer, got {v!r}")
            if name not in ("data_rate_mtps", "burst_length", "refresh_commands") and v & (v - 1):
                raise ConfigError(f"dram.{name}", f"must be a power of two, got {v}")
        self.timings_ns.validate()
        self.energy.validate()
        device_bits = self.rows * self.columns * self.device_width_bits * self.banks_per_rank
        if device_bits != int(self.density_gbit * 2**30):
            raise ConfigError(
                "dram.density_gbit",
                f"rows x columns x device width x banks = {device_bits / 2**30:g} Gib, "
                f"not {self.density_gbit:g} Gib")
        if self.channel_width_bits * self.burst_length != 512:
            raise ConfigError("dram.burst_length", "one burst must transfer exactly one 64 B line")
        if self.refresh_period_ms <= 0:
            raise ConfigError("dram.refresh_period_ms", "must be positive")
        if self.rows % self.refresh_commands and self.refresh_commands % self.rows:
            raise ConfigError("dram.refresh_commands", "must divide rows evenly")
        if not 0 <= self.write_queue_low < self.write_queue_high:
            raise ConfigError("dram.write_queue_low", "must be below write_queue_high")
        if self.prefetch_batch_quota < 1:
            raise ConfigError("dram.prefetch_batch_quota", "must be >= 1")
        if not 1 <= self.row_timeout_min <= self.row_timeout_init <= self.row_timeout_max:
            raise ConfigError("dram.row_timeout_init", "need min <= init <= max")


MITIGATION_KINDS = ("none", "rfm", "prac")


@dataclass(frozen=True)
class MitigationConfig:
    kind: str = "none"
    rfm_threshold: int = 16
    rfm_service_time_ns: float = 350.0
    prac_threshold: int = 512
    blast_radius: int = 2
    prac_recovery_time_ns: float = 350.0

    def validate(self) -> None:
        if self.kind not in MITIGATION_KINDS:
            raise ConfigError("mitigation.kind", f"must be one of {MITIGATION_KINDS}, got {self.kind!r}")
        for name in ("rfm_threshold", "prac_threshold", "blast_radius"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ConfigError(f"mitigation.{name}", f"must be an integer >= 1, got {v!r}")
        for name in ("rfm_service_time_ns", "prac_recovery_time_ns"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"mitigation.{name}", "must be positive")


@dataclass(frozen=True)
class CacheConfig:
    name: str
    size_bytes: int
    ways: int
    latency: int
    mshr_entries: int
    replacement: str = "lru"

    @property
    def lines(self) -> int:
        return self.size_bytes // 64

    @property
    def sets(self) -> int:
        return self.lines // self.ways

    def validate(self, idx: int) -> None:
        where = f"cache_levels[{idx}]"
        if self.size_bytes <= 0 or self.size_bytes % 64:
            raise ConfigError(f"{where}.size_bytes", "must be a positive multiple of 64")
        if self.ways <= 0 or self.lines % self.ways:
            raise ConfigError(f"{where}.ways", f"associativity {self.ways} must divide {self.lines} lines")
        if self.sets & (self.sets - 1):
            raise ConfigError(f"{where}.size_bytes", f"set count {self.sets} is not a power of two")
        if self.latency < 0:
            raise ConfigError(f"{where}.latency", "must be nonnegative")
        if self.mshr_entries < 1:
            raise ConfigError(f"{where}.mshr_entries", "must be >= 1")
        if self.replacement not in ("lru", "ship"):
            raise ConfigError(f"{where}.replacement", f"unknown policy {self.replacement!r}")


@dataclass(frozen=True)
class CoreConfig:
    rob_capacity: int = 512
    base_cpi_non_mem: float = 0.25
    freq_mhz: int = 4000

    def validate(self) -> None:
        if self.rob_capacity < 1:
            raise ConfigError("core.rob_capacity", "must be >= 1")
        if self.base_cpi_non_mem < 0:
            raise ConfigError("core.base_cpi_non_mem", "must be nonnegative")
        if self.freq_mhz <= 0:
            raise ConfigError("core.freq_mhz", "must be positive")


@dataclass(frozen=True)
class OrapConfig:
    """Knobs for the LLC prefetcher (Next-Column + HSD) and its tables."""

    issue_max: int = 5
    useful_max: int = 4
    confidence_increment: int = 1
    ipct_init_confidence: int = 32
    rct_init_confidence: int = 0
    # confidence at which each successive column-cluster depth unlocks
    depth_thresholds: tuple[int, ...] = (1, 32, 64, 96, 128, 160, 192, 224)
    gate_full_confidence: int = 100
    gate_slope: float = 0.0095
    zero_confidence_floor: float = 0.005
    table_entries: int = 1024
    table_ways: int = 8
    pot_entries: int = 256
    pot_ways: int = 8
    blp_entries: int = 64
    blp_sub_buffers: int = 16
    blp_issue_width: int = 2
    hsd_streams: int = 32
    hsd_max_depth: int = 64
    hsd_epoch_length: int = 8192
    hsd_p_req_max: float = 0.9
    hsd_p_req_min: float = 0.3

    def validate(self) -> None:
        if not 1 <= self.useful_max <= self.issue_max:
            raise ConfigError("orap.useful_max", "need 1 <= useful_max <= issue_max")
        if self.confidence_increment < 1:
            raise ConfigError("orap.confidence_increment", "must be >= 1")
        for name in ("ipct_init_confidence", "rct_init_confidence"):
            if not 0 <= getattr(self, name) <= 255:
                raise ConfigError(f"orap.{name}", "must lie in [0, 255]")
        th = self.depth_thresholds
        if not th or any(b < a for a, b in zip(th, th[1:])) or th[0] < 1 or th[-1] > 255:
            raise ConfigError("orap.depth_thresholds", "must be nondecreasing values in [1, 255]")
        if not 0 <= self.zero_confidence_floor <= 1:
            raise ConfigError("orap.zero_confidence_floor", "must be a probability")
        for total, ways, name in ((self.table_entries, self.table_ways, "table_entries"),
                                  (self.pot_entries, self.pot_ways, "pot_entries")):
            sets = total // max(ways, 1)
            if ways < 1 or total % ways or sets & (sets - 1):
                raise ConfigError(f"orap.{name}", "entries/ways must be a power of two")
        if self.blp_entries % self.blp_sub_buffers:
            raise ConfigError("orap.blp_entries", "must be a multiple of blp_sub_buffers")
        if not 0 < self.hsd_p_req_min <= self.hsd_p_req_max <= 1:
            raise ConfigError("orap.hsd_p_req_min", "need 0 < min <= max <= 1")
        if not 1 <= self.hsd_max_depth <= 64:
            raise ConfigError("orap.hsd_max_depth", "must lie in [1, 64]")


@dataclass(frozen=True)
class MappingDescriptor:
    """Either a named preset or an explicit LSB-first field layout.

    ``layout`` entries are ``[field, width]`` pairs; field names are
    offset, cluster, channel, rank, bankgroup, bank, column, row.  ``xor``
    maps a bank-index field name to one list of row-bit positions per bit of
    that field.
    """

    preset: str | None = "zen4"
    layout: tuple[tuple[str, int], ...] | None = None
    xor: tuple[tuple[str, tuple[tuple[int, ...], ...]], ...] = ()
    cluster_lines: int = 2

    def validate(self) -> None:
        if (self.preset is None) == (self.layout is None):
            raise ConfigError("mapping", "select exactly one of preset or layout")
        if self.cluster_lines < 1 or self.cluster_lines & (self.cluster_lines - 1):
            raise ConfigError("mapping.cluster_lines", "must be a power of two")


PREFETCHER_NAMES = {
    "l1d": ("none", "next_line", "stride"),
    "l2": ("none", "next_line", "stride"),
    "llc": ("none", "next_line", "stride", "orap", "orap+hsd"),
}


@dataclass(frozen=True)
class SimConfig:
    core_count: int = 1
    cache_levels: tuple[CacheConfig, ...] = ()
    dram: DramConfig = DramConfig()
    mapping: MappingDescriptor = MappingDescriptor()
    mitigation: MitigationConfig = MitigationConfig()
    prefetchers: tuple[tuple[str, str], ...] = (("l1d", "none"), ("l2", "none"), ("llc", "none"))
    core: CoreConfig = CoreConfig()
    orap: OrapConfig = OrapConfig()
    rng_seed: int = 1
    warmup_records: int = 0

    def prefetcher(self, level: str) -> str:
        return dict(self.prefetchers).get(level, "none")

    def with_prefetchers(self, **levels: str) -> "SimConfig":
        merged = dict(self.prefetchers)
        merged.update(levels)
        return validated(dataclasses.replace(self, prefetchers=tuple(sorted(merged.items()))))

    def replace(self, **changes: Any) -> "SimConfig":
        return validated(dataclasses.replace(self, **changes))

    def validate(self) -> None:
        if not isinstance(self.core_count, int) or self.core_count < 1:
            raise ConfigError("core_count", "must be a positive integer")
        if not 0 <= self.rng_seed < 2**64:
            raise ConfigError("rng_seed", "must be a 64-bit unsigned integer")
        if self.warmup_records < 0:
            raise ConfigError("warmup_records", "must be nonnegative")
        names = [c.name for c in self.cache_levels]
        if names != ["l1d", "l2", "llc"]:
            raise ConfigError("cache_levels", f"expected levels l1d, l2, llc in order, got {names}")
        for i, c in enumerate(self.cache_levels):
            c.validate(i)
        self.dram.validate()
        self.mapping.validate()
        self.mitigation.validate()
        self.core.validate()
        self.orap.validate()
        for level, name in self.prefetchers:
            if level not in PREFETCHER_NAMES:
                raise ConfigError("prefetchers", f"unknown cache level {level!r}")
            if name not in PREFETCHER_NAMES[level]:
                raise ConfigError(f"prefetchers.{level}", f"unknown prefetcher {name!r}")
        if self.core.freq_mhz % 1 or self.dram.clock_mhz % 1:
            raise ConfigError("core.freq_mhz", "core and memory clocks must be whole MHz")


def validated(cfg: SimConfig) -> SimConfig:
    cfg.validate()
    return cfg


# --------------------------------------------------------------------------
# presets


def _caches(cores: int) -> tuple[CacheConfig, ...]:
    return (
        CacheConfig("l1d", 48 * 1024, 12, 5, 32, "lru"),
        CacheConfig("l2", 1024 * 1024, 16, 10, 64, "lru"),
        CacheConfig("llc", 8 * 1024 * 1024 * cores, 16, 60, 40 * cores, "ship"),
    )


def _full_1core(kind: str = "none") -> SimConfig:
    timings = PRAC_TIMINGS if kind == "prac" else STANDARD_TIMINGS
    return SimConfig(
        core_count=1,
        cache_levels=_caches(1),
        dram=DramConfig(timings_ns=timings),
        mitigation=MitigationConfig(kind=kind),
    )


def _full_8core(kind: str = "none") -> SimConfig:
    timings = PRAC_TIMINGS if kind == "prac" else STANDARD_TIMINGS
    return SimConfig(
        core_count=8,
        cache_levels=_caches(8),
        dram=DramConfig(channels=4, ranks=2, bankgroups=8, device_width_bits=8, timings_ns=timings),
        mitigation=MitigationConfig(kind=kind),
    )


def _small(kind: str = "none") -> SimConfig:
    # 1 GiB downscaled system: same row geometry, 8192 rows per bank
    timings = PRAC_TIMINGS if kind == "prac" else STANDARD_TIMINGS
    return SimConfig(
        core_count=1,
        cache_levels=(
            CacheConfig("l1d", 4 * 1024, 4, 5, 8, "lru"),
            CacheConfig("l2", 16 * 1024, 8, 10, 16, "lru"),
            CacheConfig("llc", 128 * 1024, 16, 20, 32, "ship"),
        ),
        dram=DramConfig(rows=8192, density_gbit=2.0, timings_ns=timings, refresh_commands=8192),
        mitigation=MitigationConfig(kind=kind),
    )


PRESETS = {
    "paper-1core": lambda: _full_1core("none"),
    "paper-rfm": lambda: _full_1core("rfm"),
    "paper-prac": lambda: _full_1core("prac"),
    "paper-8core": lambda: _full_8core("none"),
    "paper-8core-rfm": lambda: _full_8core("rfm"),
    "paper-8core-prac": lambda: _full_8core("prac"),
    "small": lambda: _small("none"),
    "small-rfm": lambda: _small("rfm"),
    "small-prac": lambda: _small("prac"),
}


def preset(name: str) -> SimConfig:
    try:
        factory = PRESETS[name]
    except KeyError:
        raise ConfigError("preset", f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return validated(factory())


# --------------------------------------------------------------------------
# (de)serialization


def to_dict(obj: Any) -> Any:
    if is_dataclass(obj):
        return {f.name: to_dict(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, tuple):
        return [to_dict(v) for v in obj]
    return obj


def _build(cls: type, data: Any, where: str) -> Any:
    if not isinstance(data, dict):
        raise ConfigError(where, f"expected a mapping, got {type(data).__name__}")
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(where, f"unknown keys {sorted(unknown)}")
    kwargs = {}
    defaults = cls.__dataclass_fields__
    for name, value in data.items():
        key = f"{where}.{name}" if where else name
        kwargs[name] = _convert(cls, name, value, key, defaults[name])
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(where or "config", str(exc)) from None


_NESTED = {
    (SimConfig, "dram"): DramConfig,
    (SimConfig, "mapping"): MappingDescriptor,
    (SimConfig, "mitigation"): MitigationConfig,
    (SimConfig, "core"): CoreConfig,
    (SimConfig, "orap"): OrapConfig,
    (DramConfig, "timings_ns"): Timings,
    (DramConfig, "energy"): EnergyConstants,
}


def _convert(cls: type, name: str, value: Any, key: str, f: dataclasses.Field) -> Any:
    sub = _NESTED.get((cls, name))
    if sub is not None:
        return _build(sub, value, key)
    if cls is SimConfig and name == "cache_levels":
        if not isinstance(value, list):
            raise ConfigError(key, "expected a list of cache levels")
        return tuple(_build(CacheConfig, v, f"{key}[{i}]") for i, v in enumerate(value))
    if cls is SimConfig and name == "prefetchers":
        if isinstance(value, dict):
            return tuple(sorted(value.items()))
        return tuple(tuple(p) for p in value)
    if cls is MappingDescriptor and name == "layout":
        return None if value is None else tuple((str(n), int(w)) for n, w in value)
    if cls is MappingDescriptor and name == "xor":
        items = value.items() if isinstance(value, dict) else value
        return tuple((str(n), tuple(tuple(int(b) for b in bits) for bits in masks)) for n, masks in items)
    if cls is OrapConfig and name == "depth_thresholds":
        return tuple(int(v) for v in value)
    default = f.default
    if isinstance(default, bool) or default is None:
        return value
    if isinstance(default, int) and not isinstance(value, int):
        raise ConfigError(key, f"expected an integer, got {value!r}")
    if isinstance(default, float):
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ConfigError(key, f"expected a number, got {value!r}")
        return float(value)
    return value


def from_dict(data: dict) -> SimConfig:
    data = copy.deepcopy(data)
    base_name = data.pop("preset", None)
    if base_name is not None:
        base = to_dict(preset(base_name))
        data = _merge(base, data)
    return validated(_build(SimConfig, data, ""))


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _yaml_ready(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {k: _yaml_ready(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_yaml_ready(v) for v in obj]
    return obj


def serialize(cfg: SimConfig) -> str:
    d = to_dict(cfg)
    d["prefetchers"] = dict(cfg.prefetchers)
    d["mapping"]["xor"] = {n: [list(m) for m in masks] for n, masks in cfg.mapping.xor}
    return yaml.safe_dump(_yaml_ready(d), sort_keys=False)


def dump_config(cfg: SimConfig, path: str | Path) -> None:
    Path(path).write_text(serialize(cfg))


def loads_config(text: str) -> SimConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("config", f"parse failure: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config", "top level must be a mapping")
    return from_dict(data)


def load_config(path: str | Path) -> SimConfig:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(p)
    return loads_config(p.read_text())


# --------------------------------------------------------------------------
# experiment shorthands

# named prefetcher setups used by the harness: level -> engine
PREFETCH_SETUPS = {
    "none": {"l1d": "none", "l2": "none", "llc": "none"},
    "next-line": {"l1d": "next_line", "l2": "none", "llc": "none"},
    "stride": {"l1d": "none", "l2": "stride", "llc": "none"},
    "orap": {"l1d": "next_line", "l2": "none", "llc": "orap"},
    "orap+hsd": {"l1d": "next_line", "l2": "none", "llc": "orap+hsd"},
}


def with_setup(cfg: SimConfig, name: str) -> SimConfig:
    try:
        levels = PREFETCH_SETUPS[name]
    except KeyError:
        raise ConfigError("prefetchers", f"unknown setup {name!r}; choose from {sorted(PREFETCH_SETUPS)}") from None
    return cfg.with_prefetchers(**levels)


def with_mitigation(cfg: SimConfig, kind: str) -> SimConfig:
    """Switch mitigation; PRAC also switches the DRAM to the PRAC timing set."""
    timings = PRAC_TIMINGS if kind == "prac" else STANDARD_TIMINGS
    return cfg.replace(mitigation=dataclasses.replace(cfg.mitigation, kind=kind),
                       dram=dataclasses.replace(cfg.dram, timings_ns=timings))
