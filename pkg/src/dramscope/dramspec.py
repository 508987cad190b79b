"""DRAM type parameters, derived timings and the spec override file.

The nine builtin types carry the published row hit/miss/minimum-conflict
latencies.  Internal timings are decomposed as::

    tCAS = hit
    tRCD = miss - hit
    tRP  = conflict - miss

Integer clock forms are rounded up cumulatively (CL, CL+RCD and
CL+RCD+RP each rounded up), so every isolated-access latency the
controller produces is within one clock of the published value.
"""
from __future__ import annotations

import configparser
import math
import os
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Optional

from .errors import ConfigError

GIB = 1 << 30
CAPACITY_BYTES = 4 * GIB
LINE_BYTES = 64
SPEC_DIR_ENV = "DRAMSCOPE_SPEC_DIR"


@dataclass(frozen=True)
class DramTypeSpec:
    name: str
    data_rate_mtps: float
    clock_mhz: float
    max_bandwidth_gbps: float
    channels: int
    ranks_per_channel: int
    banks_per_rank: int
    channel_width_bits: int
    row_bytes: int
    hit_ns: float
    miss_ns: float
    conflict_min_ns: float
    bank_groups_per_rank: int = 1
    vaults: int = 0
    queue_depth_read: int = 32
    queue_depth_write: int = 32
    # data bursts per line relative to width-implied beats (LPDDR4: 2)
    burst_multiplier: int = 1
    capacity_bytes: int = CAPACITY_BYTES
    # optional timing overrides (ns); None keeps the default (disabled or derived)
    tRAS_ns: Optional[float] = None
    tRTP_ns: Optional[float] = None
    tCWL_ns: Optional[float] = None
    tRRD_ns: Optional[float] = None
    tFAW_ns: Optional[float] = None
    tWR_ns: Optional[float] = None
    tWTR_ns: Optional[float] = None
    tREFI_ns: Optional[float] = None
    tRFC_ns: Optional[float] = None
    bank_group_ccd_ratio: int = 2

    @property
    def is_hmc(self) -> bool:
        return self.vaults > 0

    @property
    def banks_per_vault(self) -> int:
        return self.banks_per_rank // self.vaults if self.vaults else 0

    @property
    def total_banks(self) -> int:
        return self.channels * self.ranks_per_channel * self.banks_per_rank

    @property
    def total_ranks(self) -> int:
        return self.channels * self.ranks_per_channel

    @property
    def tck_ps(self) -> int:
        return round(1e6 / self.clock_mhz)

    def validate(self):
        if not self.hit_ns < self.miss_ns < self.conflict_min_ns:
            raise ConfigError(f"{self.name}: latencies must satisfy hit < miss < conflict")
        if self.banks_per_rank % self.bank_groups_per_rank:
            raise ConfigError(f"{self.name}: banks not divisible by bank groups")
        if self.vaults and self.banks_per_rank % self.vaults:
            raise ConfigError(f"{self.name}: banks not divisible by vaults")
        for name in ("channels", "ranks_per_channel", "banks_per_rank",
                     "bank_groups_per_rank", "row_bytes"):
            v = getattr(self, name)
            if v <= 0 or v & (v - 1):
                raise ConfigError(f"{self.name}: {name}={v} must be a power of two")
        if self.vaults and self.vaults & (self.vaults - 1):
            raise ConfigError(f"{self.name}: vault count must be a power of two")
        if self.row_bytes < LINE_BYTES:
            raise ConfigError(f"{self.name}: row smaller than a cache line")
        per_bank = self.capacity_bytes // self.total_banks
        if per_bank * self.total_banks != self.capacity_bytes or per_bank % self.row_bytes:
            raise ConfigError(f"{self.name}: capacity does not split evenly into rows")
        rows = per_bank // self.row_bytes
        if rows & (rows - 1):
            raise ConfigError(f"{self.name}: rows per bank must be a power of two")
        return self


def _spec(name, rate, clock, bw, ch, ranks, banks, width, row, hit, miss, conflict, **kw):
    return DramTypeSpec(name, rate, clock, bw, ch, ranks, banks, width, row, hit, miss,
                        conflict, **kw)


_BUILTIN = {
    s.name: s for s in (
        _spec("DDR3", 2133, 1067, 68.3, 4, 1, 8, 64, 8192, 15.0, 26.3, 37.5),
        _spec("DDR4", 3200, 1600, 102.4, 4, 1, 16, 64, 8192, 16.7, 30.0, 43.3,
              bank_groups_per_rank=4),
        _spec("GDDR5", 7000, 1750, 224.0, 4, 1, 16, 64, 8192, 13.1, 25.1, 37.1,
              bank_groups_per_rank=4),
        _spec("HBM", 1000, 500, 128.0, 8, 1, 16, 128, 2048, 18.0, 32.0, 46.0),
        _spec("HMC", 2500, 1250, 320.0, 1, 1, 256, 32, 256, 16.8, 30.4, 44.0, vaults=32),
        _spec("LPDDR3", 2133, 1067, 68.3, 4, 1, 8, 64, 8192, 21.6, 40.3, 59.1),
        # half-width chips: twice the bursts per line on the 64-bit channel
        _spec("LPDDR4", 3200, 1600, 51.2, 4, 1, 16, 64, 4096, 26.9, 45.0, 61.9,
              burst_multiplier=2),
        _spec("WideIO", 266, 266, 17.0, 4, 1, 4, 128, 2048, 30.1, 38.9, 67.7),
        _spec("WideIO2", 1067, 533, 34.1, 4, 2, 8, 64, 4096, 22.5, 41.3, 60.0),
    )
}

BUILTIN_NAMES = tuple(_BUILTIN)


def builtin_spec(name: str) -> DramTypeSpec:
    key = {n.lower(): n for n in _BUILTIN}.get(name.lower().replace(" ", "").replace("/", ""))
    if key is None:
        raise ConfigError(f"unknown DRAM type {name!r}; builtin types: {', '.join(_BUILTIN)}")
    return _BUILTIN[key]


_FIELD_TYPES = {f.name: f.type for f in fields(DramTypeSpec)}


def _coerce(key, raw):
    kind = _FIELD_TYPES[key]
    if kind == "str":
        return raw
    if kind == "int":
        return int(raw, 0)
    if raw.lower() in ("none", ""):
        return None
    return float(raw)


def load_spec_file(path) -> dict[str, DramTypeSpec]:
    """Read a spec override file: one INI section per DRAM type.

    A section may set ``base = <builtin>`` and override individual fields;
    otherwise every required field must be present.
    """
    parser = configparser.ConfigParser()
    parser.optionxform = str
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read DRAM spec file {path}: {exc}") from exc
    specs = {}
    for section in parser.sections():
        values = dict(parser[section])
        base = values.pop("base", None)
        try:
            kw = {k: _coerce(k, v) for k, v in values.items()}
        except KeyError as exc:
            raise ConfigError(f"[{section}] unknown key {exc.args[0]!r}") from None
        except ValueError as exc:
            raise ConfigError(f"[{section}] {exc}") from None
        kw["name"] = section
        try:
            spec = replace(builtin_spec(base), **kw) if base else DramTypeSpec(**kw)
        except TypeError as exc:
            raise ConfigError(f"[{section}] {exc}") from None
        specs[section] = spec.validate()
    return specs


def resolve_spec(name: str, spec_file=None) -> DramTypeSpec:
    if spec_file:
        specs = load_spec_file(spec_file)
        if name in specs:
            return specs[name]
        if name is None and specs:
            return next(iter(specs.values()))
    try:
        return builtin_spec(name)
    except ConfigError:
        spec_dir = os.environ.get(SPEC_DIR_ENV)
        if spec_dir:
            candidate = Path(spec_dir) / f"{name}.ini"
            if candidate.exists():
                specs = load_spec_file(candidate)
                if name in specs:
                    return specs[name]
        raise


def peak_bandwidth(spec: DramTypeSpec) -> float:
    """Peak data bandwidth in GB/s (HMC: the link figure)."""
    if spec.is_hmc:
        return spec.max_bandwidth_gbps
    return (spec.data_rate_mtps * spec.channel_width_bits / 8 * spec.channels
            / spec.burst_multiplier / 1000.0)


@dataclass(frozen=True)
class TimingSet:
    tck_ps: int
    tCAS_ns: float
    tRCD_ns: float
    tRP_ns: float
    tRAS_ns: float
    burst_ns: float
    tCCD_same_group_ns: Optional[float]
    tCCD_other_group_ns: Optional[float]
    # integer DRAM clocks
    CL: int
    RCD: int
    RP: int
    RAS: int
    BL: int
    CWL: int
    RTP: int
    CCD_S: int
    CCD_L: int
    RRD: int = 0
    FAW: int = 0
    WR: int = 0
    WTR: int = 0
    REFI: int = 0
    RFC: int = 0

    def clocks_to_ns(self, clocks) -> float:
        return clocks * self.tck_ps / 1000.0


def _ck(ns, tck_ps):
    return -(-round(ns * 1000) // tck_ps)


def derive_timings(spec: DramTypeSpec) -> TimingSet:
    tck = spec.tck_ps
    tcas = spec.hit_ns
    trcd = round(spec.miss_ns - spec.hit_ns, 6)
    trp = round(spec.conflict_min_ns - spec.miss_ns, 6)

    cl = _ck(spec.hit_ns, tck)
    rcd = _ck(spec.miss_ns, tck) - cl
    rp = _ck(spec.conflict_min_ns, tck) - _ck(spec.miss_ns, tck)

    beats = LINE_BYTES * 8 // spec.channel_width_bits * spec.burst_multiplier
    burst_ns = beats / spec.data_rate_mtps * 1000.0
    pump = max(1, round(spec.data_rate_mtps / spec.clock_mhz))
    bl = -(-beats // pump)

    if spec.bank_groups_per_rank > 1:
        ccd_s, ccd_l = bl, bl * spec.bank_group_ccd_ratio
        ccd_other_ns, ccd_same_ns = burst_ns, burst_ns * spec.bank_group_ccd_ratio
    else:
        ccd_s = ccd_l = bl
        ccd_other_ns = ccd_same_ns = None

    ras = _ck(spec.tRAS_ns, tck) if spec.tRAS_ns is not None else rcd + cl + bl
    tras_ns = spec.tRAS_ns if spec.tRAS_ns is not None else trcd + tcas + burst_ns

    def opt(ns):
        return _ck(ns, tck) if ns else 0

    return TimingSet(
        tck_ps=tck, tCAS_ns=tcas, tRCD_ns=trcd, tRP_ns=trp, tRAS_ns=tras_ns,
        burst_ns=burst_ns, tCCD_same_group_ns=ccd_same_ns, tCCD_other_group_ns=ccd_other_ns,
        CL=cl, RCD=rcd, RP=rp, RAS=ras, BL=bl,
        CWL=_ck(spec.tCWL_ns, tck) if spec.tCWL_ns is not None else cl,
        RTP=_ck(spec.tRTP_ns, tck) if spec.tRTP_ns is not None else bl,
        CCD_S=ccd_s, CCD_L=ccd_l,
        RRD=opt(spec.tRRD_ns), FAW=opt(spec.tFAW_ns), WR=opt(spec.tWR_ns),
        WTR=opt(spec.tWTR_ns), REFI=opt(spec.tREFI_ns), RFC=opt(spec.tRFC_ns),
    )


def bandwidth_matches_table(spec: DramTypeSpec) -> bool:
    """Peak bandwidth agrees with the published figure to 3 significant figures."""
    def sig3(x):
        return float(f"{x:.3g}")
    return sig3(peak_bandwidth(spec)) == sig3(spec.max_bandwidth_gbps)


def is_power_of_two(n) -> bool:
    return n > 0 and not n & (n - 1)


def log2(n) -> int:
    return int(math.log2(n))
