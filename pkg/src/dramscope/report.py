"""SimReport container and its JSON / CSV serialisation."""
from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import asdict, dataclass, field, fields
from typing import Optional


@dataclass
class CoreReport:
    core: int
    workload: str
    instructions: int
    cycles: int
    ipc: float
    llc_misses: int
    mpki: float
    memory_intensive: bool
    passes: int = 1
    alone_ipc: Optional[float] = None


@dataclass
class LocalityReport:
    hits: int
    misses: int
    conflicts: int
    hit_fraction: float
    miss_fraction: float
    conflict_fraction: float


@dataclass
class DramReport:
    requests: int
    bytes: int
    duration_ns: float
    bpu: float
    bpu_per_channel: float
    locality: LocalityReport
    queuing_fraction: float
    avg_latency_ns: float
    avg_queuing_ns: float
    avg_service_ns: float
    avg_link_ns: float
    sustained_bandwidth_gbps: float
    peak_bandwidth_gbps: float
    utilization: float
    commands: dict


@dataclass
class SimReport:
    metadata: dict
    cores: list = field(default_factory=list)
    dram: Optional[DramReport] = None
    weighted_speedup: Optional[float] = None
    parallel_speedup: Optional[dict] = None
    execution_time_ns: Optional[dict] = None
    energy: Optional[dict] = None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SimReport":
        d = dict(d)
        d["cores"] = [CoreReport(**c) for c in d.get("cores", [])]
        if d.get("dram") is not None:
            dram = dict(d["dram"])
            dram["locality"] = LocalityReport(**dram["locality"])
            d["dram"] = DramReport(**dram)
        return cls(**d)


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def to_json(report: SimReport) -> str:
    return json.dumps(report.to_dict(), indent=2) + "\n"


def from_json(text: str) -> SimReport:
    return SimReport.from_dict(json.loads(text))


_CORE_COLS = [f.name for f in fields(CoreReport)]
_AGG_COLS = ["weighted_speedup", "bpu", "bpu_per_channel", "hits", "misses", "conflicts",
             "hit_fraction", "miss_fraction", "conflict_fraction", "queuing_fraction",
             "avg_latency_ns", "sustained_bandwidth_gbps", "peak_bandwidth_gbps",
             "utilization", "energy_total_j"]


def to_csv(report: SimReport) -> str:
    """Flat table: one row per core, then a single aggregate row."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["row"] + _CORE_COLS + _AGG_COLS)
    for c in report.cores:
        w.writerow(["core"] + [getattr(c, k) for k in _CORE_COLS] + [""] * len(_AGG_COLS))
    agg = {"weighted_speedup": report.weighted_speedup}
    if report.dram is not None:
        d = report.dram
        agg.update(bpu=d.bpu, bpu_per_channel=d.bpu_per_channel, queuing_fraction=d.queuing_fraction,
                   avg_latency_ns=d.avg_latency_ns,
                   sustained_bandwidth_gbps=d.sustained_bandwidth_gbps,
                   peak_bandwidth_gbps=d.peak_bandwidth_gbps, utilization=d.utilization)
        agg.update({k: getattr(d.locality, k) for k in
                    ("hits", "misses", "conflicts", "hit_fraction", "miss_fraction",
                     "conflict_fraction")})
    if report.energy is not None:
        agg["energy_total_j"] = report.energy["total_j"]
    if report.cores:
        instr = sum(c.instructions for c in report.cores)
        cyc = max(c.cycles for c in report.cores)
        misses = sum(c.llc_misses for c in report.cores)
        core_part = ["", "all", instr, cyc, "", misses, misses * 1000.0 / instr if instr else "",
                     "", "", ""]
    else:
        core_part = [""] * len(_CORE_COLS)
    w.writerow(["aggregate"] + core_part + ["" if agg.get(k) is None else agg[k]
                                            for k in _AGG_COLS])
    return buf.getvalue()


def emit_report(report: SimReport, fmt: str = "json") -> bytes:
    if fmt == "json":
        return to_json(report).encode()
    if fmt == "csv":
        return to_csv(report).encode()
    raise ValueError(f"unknown report format {fmt!r}")
