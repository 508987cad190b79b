"""Experiment orchestration: single, bundle, network and multithreaded runs."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

from . import __version__
from .controller import INF, ControllerConfig
from .cpu import (CacheHierarchy, CacheLevelConfig, Core, CoreConfig, FramePool,
                  HierarchyConfig, MemoryPort, PageTable)
from .dramspec import LINE_BYTES, peak_bandwidth, resolve_spec
from .energy import builtin_energy_params, energy_from_counts, load_energy_params
from .errors import ConfigError, SimulationError
from .memsys import HmcLinkConfig, MemoryConfig, MemorySystem
from .metrics import is_memory_intensive, parallel_speedup, weighted_speedup
from .report import CoreReport, DramReport, LocalityReport, SimReport, config_hash
from .trace import SyntheticPattern, generate_synthetic, open_trace, synthetic_label

log = logging.getLogger(__name__)

MODES = ("single", "bundle", "network", "multithreaded")


@dataclass
class Workload:
    """A trace file or a synthetic pattern with its instruction count."""
    path: Optional[str] = None
    pattern: Optional[SyntheticPattern] = None
    instructions: int = 1_000_000

    def __post_init__(self):
        if (self.path is None) == (self.pattern is None):
            raise ConfigError("a workload needs exactly one of a trace path or a pattern")
        try:
            if isinstance(self.pattern, dict):
                self.pattern = SyntheticPattern(**self.pattern)
            if self.pattern is not None:
                self.pattern.validate()
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad synthetic pattern: {exc}") from None
        if self.instructions <= 0:
            raise ConfigError("synthetic trace length must be positive")

    @property
    def label(self) -> str:
        return self.path if self.path is not None else synthetic_label(self.pattern)

    def records(self):
        if self.path is not None:
            return open_trace(self.path)
        return generate_synthetic(self.pattern, self.instructions)

    def to_dict(self):
        if self.path is not None:
            return {"path": self.path}
        return {"pattern": asdict(self.pattern), "instructions": self.instructions}


@dataclass
class ExperimentConfig:
    dram: str = "DDR3"
    dram_file: Optional[str] = None
    interleave: Optional[str] = None
    mode: str = "single"
    workloads: list = field(default_factory=list)
    # multithreaded: thread count -> per-thread workloads
    thread_sets: dict = field(default_factory=dict)
    core_ghz: float = 4.0
    window: int = 128
    issue_width: int = 4
    l1_bytes: int = 64 << 10
    l1_ways: int = 4
    l1_latency: int = 4
    l2_bytes: int = 256 << 10
    l2_ways: int = 4
    l2_latency: int = 12
    l3_bytes_per_core: int = 2 << 20
    l3_ways: int = 8
    l3_latency: int = 38
    l3_cores: Optional[int] = None  # L3 sized for this many cores (default: core count)
    page_bytes: int = 4096
    translation_mode: str = "random"
    warmup_instructions: int = 1_000_000
    max_instructions: Optional[int] = None
    max_inflight: Optional[int] = None
    inject_width: int = 4
    packet_lines: int = 1
    seed: int = 0
    read_queue: int = 32
    write_queue: int = 32
    drain_high: int = 28
    drain_low: int = 16
    hmc_row_policy: str = "closed"
    hmc_link_ns: float = 8.0
    hmc_link_fifo: int = 64
    mt_cores: int = 20
    mt_ghz: float = 2.2
    energy_params: Optional[str] = None
    command_log: bool = False
    bulk_skip: bool = True

    def validate(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")
        self.workloads = [w if isinstance(w, Workload) else Workload(**w) for w in self.workloads]
        self.thread_sets = {int(n): [w if isinstance(w, Workload) else Workload(**w) for w in ws]
                            for n, ws in self.thread_sets.items()}
        if self.mode == "multithreaded":
            if not self.thread_sets:
                raise ConfigError("multithreaded mode needs per-thread workloads")
            for n, ws in self.thread_sets.items():
                if len(ws) != n:
                    raise ConfigError(f"thread count {n} has {len(ws)} traces")
        elif not self.workloads:
            raise ConfigError("no trace or synthetic workload given")
        if self.mode == "bundle" and len(self.workloads) < 2:
            raise ConfigError("bundle mode needs at least two traces")
        if self.mode == "network":
            if self.max_inflight is None or self.max_inflight <= 0:
                raise ConfigError("network mode needs a positive max_inflight")
            if self.packet_lines <= 0:
                raise ConfigError("packet_lines must be positive")
        if self.mode == "single" and len(self.workloads) != 1:
            raise ConfigError("single mode takes exactly one trace")
        if self.translation_mode not in ("random", "identity"):
            raise ConfigError(f"unknown translation mode {self.translation_mode!r}")
        return self

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k not in ("workloads", "thread_sets")}
        d["workloads"] = [w.to_dict() for w in self.workloads]
        d["thread_sets"] = {str(n): [w.to_dict() for w in ws]
                            for n, ws in sorted(self.thread_sets.items())}
        return d


# ---------------------------------------------------------------------------

def _memory(cfg: ExperimentConfig, spec):
    ctrl = ControllerConfig(cfg.read_queue, cfg.write_queue, cfg.drain_high, cfg.drain_low)
    link = HmcLinkConfig(latency_ns=cfg.hmc_link_ns, fifo_depth=cfg.hmc_link_fifo)
    return MemorySystem(spec, MemoryConfig(cfg.interleave, ctrl, cfg.hmc_row_policy, link,
                                           cfg.command_log))


class _Run:
    """Cores plus memory on one picosecond timeline."""

    def __init__(self, cfg: ExperimentConfig, spec, workloads, ghz, l3_cores, restart=False,
                 shared_address_space=False):
        self.cfg = cfg
        self.spec = spec
        self.mem = _memory(cfg, spec)
        n = len(workloads)
        hcfg = HierarchyConfig(
            CacheLevelConfig(cfg.l1_bytes, cfg.l1_ways, cfg.l1_latency),
            CacheLevelConfig(cfg.l2_bytes, cfg.l2_ways, cfg.l2_latency),
            cfg.l3_bytes_per_core,
            cfg.l3_ways, cfg.l3_latency)
        self.hier = CacheHierarchy(n, hcfg, l3_cores=l3_cores)
        self.port = MemoryPort(self.mem)
        pool = FramePool(spec.capacity_bytes, cfg.page_bytes, cfg.seed, cfg.translation_mode)
        shared = PageTable(pool) if shared_address_space else None
        core_cfg = CoreConfig(ghz, cfg.window, cfg.issue_width)
        self.warm_pending = n
        self.cores = []
        for i, w in enumerate(workloads):
            self.cores.append(Core(i, w.records, self.hier, self.port,
                                   shared or PageTable(pool), core_cfg,
                                   warmup=cfg.warmup_instructions,
                                   max_instructions=cfg.max_instructions, restart=restart,
                                   bulk_skip=cfg.bulk_skip, on_warm=self._on_warm))
        self.workloads = workloads
        self.now = 0
        self.measure_from_ps = 0
        if cfg.warmup_instructions == 0:
            self.warm_pending = 0

    def _on_warm(self, core):
        self.warm_pending -= 1
        if self.warm_pending == 0:
            self.measure_from_ps = self.now
            self.mem.stats.reset(self.mem.cycle + 1, self.now)

    def run(self):
        mem = self.mem
        cores = self.cores
        restart = any(c.restart for c in cores)
        while True:
            if restart:
                if all(c.finished for c in cores):
                    break
            elif all(c.done for c in cores):
                break
            best, t_core = None, INF
            for c in cores:
                if not c.done:
                    t = c.wake * c.tck
                    if t < t_core:
                        best, t_core = c, t
            t_mem = mem.next_event_ps()
            if t_mem == INF and t_core == INF:
                raise SimulationError("simulation stalled with work outstanding")
            if t_mem <= t_core:
                self.now = t_mem
                mem.process_next()
            else:
                self.now = t_core
                best.tick(best.wake)
        for c in cores:
            c.wake = INF
        self.cores_end_ps = self.now
        while not mem.idle():
            t = mem.next_event_ps()
            if t == INF:
                raise SimulationError("memory stalled while draining")
            self.now = t
            mem.process_next()
        self.end_ps = max(self.now, self.cores_end_ps)
        return self


def _core_reports(run: _Run) -> list[CoreReport]:
    out = []
    for c, w in zip(run.cores, run.workloads):
        s = c.stats
        out.append(CoreReport(c.id, w.label, s.instructions, s.cycles, s.ipc, s.llc_misses,
                              s.mpki, is_memory_intensive(s.mpki), c.passes))
    return out


def _dram_report(mem: MemorySystem, spec, start_ps, end_ps, first_ps=None) -> DramReport:
    st = mem.stats
    loc = st.locality()
    tck = mem.tck
    n = st.counted
    duration_ps = max(end_ps - start_ps, 0)
    t0 = st.first_arrival_ps if first_ps is None else first_ps
    if n and st.last_delivery_ps > (t0 or 0):
        bw = st.bytes / ((st.last_delivery_ps - t0) * 1e-12) / 1e9
    else:
        bw = 0.0
    peak = peak_bandwidth(spec)
    qc, sc = st.queue_cycles, st.service_cycles
    return DramReport(
        requests=n, bytes=st.bytes, duration_ns=duration_ps / 1000.0,
        bpu=st.tracker.bpu(), bpu_per_channel=st.tracker.bpu_per_channel(),
        locality=LocalityReport(loc.hits, loc.misses, loc.conflicts, loc.hit_fraction,
                                loc.miss_fraction, loc.conflict_fraction),
        queuing_fraction=qc / (qc + sc) if qc + sc else 0.0,
        avg_latency_ns=st.latency_ps / n / 1000.0 if n else 0.0,
        avg_queuing_ns=qc * tck / n / 1000.0 if n else 0.0,
        avg_service_ns=sc * tck / n / 1000.0 if n else 0.0,
        avg_link_ns=st.link_ps / n / 1000.0 if n else 0.0,
        sustained_bandwidth_gbps=bw, peak_bandwidth_gbps=peak,
        utilization=bw / peak if peak else 0.0,
        commands={k: st.commands[k] for k in ("ACT", "PRE", "RD", "WR", "REF")})


def _energy(cfg: ExperimentConfig, spec, mem: MemorySystem, start_ps, end_ps):
    params = load_energy_params(cfg.energy_params) if cfg.energy_params else \
        builtin_energy_params(spec.name)
    if params is None:
        return None
    duration_ps = max(end_ps - start_ps, 0)
    cycles = duration_ps // mem.tck
    active = mem.stats.tracker.rank_active_fraction(cycles)
    rep = energy_from_counts(dict(mem.stats.commands), duration_ps * 1e-12, params,
                             spec.total_ranks, active, refresh_enabled=mem.timing.REFI > 0)
    return rep.to_dict()


def _metadata(cfg: ExperimentConfig, spec) -> dict:
    return {"tool": "dramscope", "version": __version__, "dram": spec.name,
            "mode": cfg.mode, "interleave": cfg.interleave or "default", "seed": cfg.seed,
            "config_hash": config_hash(cfg.to_dict()),
            "workloads": [w.label for w in cfg.workloads]}


def _finish(cfg, spec, run: _Run, report: SimReport):
    report.dram = _dram_report(run.mem, spec, run.measure_from_ps, run.end_ps)
    report.energy = _energy(cfg, spec, run.mem, run.measure_from_ps, run.end_ps)
    run.report_commands = run.mem.command_log()
    return report


# ---------------------------------------------------------------------------

def _spec(cfg):
    return resolve_spec(cfg.dram, cfg.dram_file)


def run_single(cfg: ExperimentConfig, _return_run=False):
    cfg.validate()
    spec = _spec(cfg)
    run = _Run(cfg, spec, cfg.workloads, cfg.core_ghz, cfg.l3_cores or 1).run()
    report = _finish(cfg, spec, run, SimReport(_metadata(cfg, spec), _core_reports(run)))
    return (report, run) if _return_run else report


def run_bundle(cfg: ExperimentConfig, solo_runs: bool = True, _return_run=False):
    cfg.validate()
    spec = _spec(cfg)
    n = len(cfg.workloads)
    l3 = cfg.l3_cores or n
    run = _Run(cfg, spec, cfg.workloads, cfg.core_ghz, l3, restart=True).run()
    report = SimReport(_metadata(cfg, spec), _core_reports(run))
    if solo_runs:
        alone = []
        for w in cfg.workloads:
            solo = replace(cfg, mode="single", workloads=[w], l3_cores=l3)
            s = run_single(solo)
            alone.append(s.cores[0].ipc)
        for c, a in zip(report.cores, alone):
            c.alone_ipc = a
        report.weighted_speedup = weighted_speedup([c.ipc for c in report.cores], alone)
    _finish(cfg, spec, run, report)
    return (report, run) if _return_run else report


class _Injector:
    """Network-accelerator front end: requests go straight to memory.

    A record's bubbles are idle injector cycles; its address becomes
    ``packet_lines`` consecutive line requests, injected up to
    ``inject_width`` per cycle while fewer than ``max_inflight`` are out.
    """

    def __init__(self, cfg: ExperimentConfig, mem: MemorySystem, workload: Workload):
        self.mem = mem
        self.cfg = cfg
        self.tck = CoreConfig(cfg.core_ghz).tck_ps
        self.records = iter(workload.records())
        self.queue = []  # pending (paddr, is_write), last element next
        self.idle_left = 0
        self.inflight = 0
        self.injected = 0
        self.first_ps = None
        self.cycle = -1
        self.wake = 0
        self.exhausted = False
        self.capacity = mem.spec.capacity_bytes
        self._load()

    def _load(self):
        while not self.queue and not self.idle_left and not self.exhausted:
            rec = next(self.records, None)
            if rec is None:
                self.exhausted = True
                return
            self.idle_left = rec.bubbles
            batch = []
            for addr, wr in ((rec.read_addr, False), (rec.write_addr, True)):
                if addr is None:
                    continue
                base = (addr // LINE_BYTES) * LINE_BYTES
                for k in range(self.cfg.packet_lines):
                    batch.append(((base + k * LINE_BYTES) % self.capacity, wr))
            self.queue = batch[::-1]

    @property
    def has_work(self) -> bool:
        return bool(self.queue or self.idle_left or not self.exhausted)

    def tick(self, c):
        self.cycle = c
        if self.idle_left:
            self.wake = c + self.idle_left
            self.idle_left = 0
            if not self.queue:
                self._load()
            return
        n = 0
        t_ps = c * self.tck
        cfg = self.cfg
        while self.queue and n < cfg.inject_width and self.inflight < cfg.max_inflight:
            paddr, wr = self.queue.pop()
            req = self.mem.new_request(paddr, wr, 0, t_ps, self._done)
            self.mem.submit(req, t_ps)
            if self.first_ps is None:
                self.first_ps = t_ps
            self.inflight += 1
            self.injected += 1
            n += 1
            if not self.queue:
                self._load()
                if self.idle_left:
                    break
        if not self.has_work or (self.queue and self.inflight >= cfg.max_inflight):
            self.wake = INF  # a completion wakes us if work remains
        else:
            self.wake = c + 1

    def _done(self, req, t_ps):
        self.inflight -= 1
        if self.wake == INF and self.has_work:
            self.wake = max(-(-t_ps // self.tck), self.cycle + 1)


def run_network(cfg: ExperimentConfig, _return_run=False):
    cfg.validate()
    spec = _spec(cfg)
    if len(cfg.workloads) != 1:
        raise ConfigError("network mode takes exactly one trace")
    mem = _memory(cfg, spec)
    inj = _Injector(cfg, mem, cfg.workloads[0])
    now = 0
    while True:
        t_inj = inj.wake * inj.tck
        t_mem = mem.next_event_ps()
        if t_inj == INF and t_mem == INF:
            break
        if t_mem <= t_inj:
            now = t_mem
            mem.process_next()
        else:
            now = t_inj
            inj.tick(inj.wake)
    if not mem.idle() or inj.has_work:
        raise SimulationError("network run stalled with requests outstanding")
    report = SimReport(_metadata(cfg, spec))
    report.metadata["max_inflight"] = cfg.max_inflight
    report.metadata["packet_lines"] = cfg.packet_lines
    report.dram = _dram_report(mem, spec, 0, now, first_ps=inj.first_ps)
    report.energy = _energy(cfg, spec, mem, 0, now)
    return (report, mem) if _return_run else report


def run_multithreaded(cfg: ExperimentConfig, _return_run=False):
    cfg.validate()
    spec = _spec(cfg)
    counts = sorted(cfg.thread_sets)
    if 1 not in counts:
        raise ConfigError("multithreaded mode needs a 1-thread trace set as the baseline")
    times, runs = {}, {}
    for n in counts:
        run = _Run(cfg, spec, cfg.thread_sets[n], cfg.mt_ghz, cfg.l3_cores or cfg.mt_cores,
                   shared_address_space=True).run()
        times[n] = max(c.finish_cycle * c.tck for c in run.cores)
        runs[n] = run
    top = runs[counts[-1]]
    meta = _metadata(cfg, spec)
    meta["workloads"] = {str(n): [w.label for w in cfg.thread_sets[n]] for n in counts}
    report = SimReport(meta, _core_reports(top))
    report.execution_time_ns = {str(n): times[n] / 1000.0 for n in counts}
    report.parallel_speedup = {str(n): parallel_speedup(times[1], times[n]) for n in counts}
    _finish(cfg, spec, top, report)
    return (report, runs) if _return_run else report


def run_experiment(cfg: ExperimentConfig) -> SimReport:
    runner = {"single": run_single, "bundle": run_bundle, "network": run_network,
              "multithreaded": run_multithreaded}.get(cfg.mode)
    if runner is None:
        raise ConfigError(f"unknown mode {cfg.mode!r}")
    return runner(cfg)
