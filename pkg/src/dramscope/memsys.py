"""The DRAM side of the simulation: controllers, the HMC link and statistics.

Time is kept in integer picoseconds; the DRAM runs on its own clock
(``timing.tck_ps``).  ``next_event_ps``/``process_next`` let a driver
interleave the memory with other clocked agents on one timeline.
"""
from __future__ import annotations

import heapq
import itertools
from collections import Counter, deque
from dataclasses import dataclass

from .controller import (INF, ChannelController, Command, ControllerConfig,
                         MemoryRequest)
from .dramspec import LINE_BYTES, DramTypeSpec, derive_timings
from .mapping import default_mode, mapper_for
from .metrics import BankActivityTracker, LocalityBreakdown


@dataclass
class HmcLinkConfig:
    latency_ns: float = 8.0
    fifo_depth: int = 64
    request_header_bytes: int = 16
    bandwidth_gbps: float = 320.0


@dataclass
class MemoryConfig:
    interleave: str | None = None
    controller: ControllerConfig = None
    hmc_row_policy: str = "closed"
    hmc_link: HmcLinkConfig = None
    log_commands: bool = False

    def __post_init__(self):
        if self.controller is None:
            self.controller = ControllerConfig()
        if self.hmc_link is None:
            self.hmc_link = HmcLinkConfig()


class DramStats:
    """Sink for controller events: commands, classification, latencies."""

    def __init__(self, spec: DramTypeSpec, log_commands=False):
        units = spec.vaults if spec.is_hmc else spec.channels
        per_unit = spec.banks_per_vault if spec.is_hmc else (
            spec.ranks_per_channel * spec.banks_per_rank)
        ranks = 1 if spec.is_hmc else spec.ranks_per_channel
        banks = units * per_unit
        bank_channel = [b // per_unit for b in range(banks)]
        bank_rank = [b // (per_unit // ranks) for b in range(banks)]
        self.tracker = BankActivityTracker(banks, bank_channel, bank_rank)
        self.log = [] if log_commands else None
        self.commands = Counter()
        self.classes = Counter()
        self.enqueued = 0
        self.completed = 0
        self.counted = 0
        self.bytes = 0
        self.queue_cycles = 0
        self.service_cycles = 0
        self.latency_ps = 0
        self.link_ps = 0
        self.first_arrival_ps = None
        self.last_delivery_ps = 0
        self.warmup_cycle = 0
        self.since_ps = 0
        self.active = True

    def command(self, ctrl, cmd: Command, gid, start, end):
        if self.log is not None:
            self.log.append(cmd)
        if not self.active:
            return
        self.commands[cmd.kind] += 1
        if gid is not None:
            self.tracker.add(gid, start, end)

    def classified(self, req):
        if self.active and req.counted:
            self.classes[req.locality_class] += 1

    def issued(self, req):
        pass

    def delivered(self, req: MemoryRequest):
        self.completed += 1
        if not (self.active and req.counted) or req.created_ps < self.since_ps:
            return
        self.counted += 1
        self.bytes += LINE_BYTES
        self.queue_cycles += req.first_command_cycle - req.arrival_cycle
        self.service_cycles += req.completion_cycle - req.first_command_cycle
        self.latency_ps += req.delivered_ps - req.created_ps
        self.link_ps += req.link_in_ps + req.link_out_ps
        if self.first_arrival_ps is None or req.created_ps < self.first_arrival_ps:
            self.first_arrival_ps = req.created_ps
        self.last_delivery_ps = max(self.last_delivery_ps, req.delivered_ps)

    def reset(self, cycle: int, since_ps: int = 0):
        """Drop everything gathered so far (end of warmup).

        Latency statistics afterwards only cover requests created at or
        after ``since_ps``.
        """
        self.since_ps = since_ps
        self.tracker.reset(cycle)
        self.commands.clear()
        self.classes.clear()
        self.counted = self.bytes = 0
        self.queue_cycles = self.service_cycles = 0
        self.latency_ps = self.link_ps = 0
        self.first_arrival_ps = None
        self.last_delivery_ps = 0
        self.warmup_cycle = cycle

    def locality(self) -> LocalityBreakdown:
        return LocalityBreakdown(self.classes["hit"], self.classes["miss"],
                                 self.classes["conflict"])

    def queuing_fraction(self) -> float:
        total = self.queue_cycles + self.service_cycles
        return self.queue_cycles / total if total else 0.0


class HmcLink:
    """Serial link between host and cube: FIFO in each direction.

    Each packet occupies its direction for bytes/bandwidth and then flies
    for a fixed latency.  Requests reach their vault queue in FIFO order; a
    full vault queue blocks the head of the request FIFO.
    """

    def __init__(self, cfg: HmcLinkConfig, tck_ps: int):
        self.cfg = cfg
        self.tck = tck_ps
        self.latency_ps = round(cfg.latency_ns * 1000)
        self.ps_per_byte = 1000.0 / cfg.bandwidth_gbps
        self.fifo = deque()        # (arrival_cycle, req) in flight to the cube
        self.host_wait = deque()   # (req, t_ps) waiting for link FIFO space
        self.req_free_ps = 0
        self.resp_free_ps = 0

    def _serialize(self, nbytes):
        return round(nbytes * self.ps_per_byte)

    def request_bytes(self, req):
        return self.cfg.request_header_bytes + (LINE_BYTES if req.is_write else 0)

    def response_bytes(self, req):
        return self.cfg.request_header_bytes + (0 if req.is_write else LINE_BYTES)

    def submit(self, req, t_ps):
        if len(self.fifo) < self.cfg.fifo_depth and not self.host_wait:
            self._send(req, t_ps)
        else:
            self.host_wait.append((req, t_ps))

    def _send(self, req, t_ps):
        depart = max(t_ps, self.req_free_ps) + self._serialize(self.request_bytes(req))
        self.req_free_ps = depart
        arrive = depart + self.latency_ps
        req.link_in_ps = arrive - t_ps
        self.fifo.append((-(-arrive // self.tck), req))

    def deliver(self, cycle, vaults):
        while self.fifo and self.fifo[0][0] <= cycle:
            req = self.fifo[0][1]
            if not vaults[req.unit].enqueue(req, cycle):
                break
            self.fifo.popleft()
            if self.host_wait:
                waiting, t_ps = self.host_wait.popleft()
                self._send(waiting, max(t_ps, cycle * self.tck))

    def next_cycle(self, vaults):
        if not self.fifo:
            return INF
        arrival, req = self.fifo[0]
        if vaults[req.unit].has_space(req.is_write):
            return arrival
        return INF  # resumes once the vault issues a column command

    def respond(self, req, ready_ps):
        depart = max(ready_ps, self.resp_free_ps) + self._serialize(self.response_bytes(req))
        self.resp_free_ps = depart
        done = depart + self.latency_ps
        req.link_out_ps = done - ready_ps
        return done


class MemorySystem:
    def __init__(self, spec: DramTypeSpec, cfg: MemoryConfig | None = None):
        self.spec = spec.validate()
        self.cfg = cfg or MemoryConfig()
        self.mode = self.cfg.interleave or default_mode(spec)
        self.mapper = mapper_for(spec, self.mode)
        self.timing = derive_timings(spec)
        self.tck = self.timing.tck_ps
        self.stats = DramStats(spec, self.cfg.log_commands)
        ctrl_cfg = self.cfg.controller
        if spec.is_hmc:
            ctrl_cfg = ControllerConfig(ctrl_cfg.read_queue, ctrl_cfg.write_queue,
                                        ctrl_cfg.drain_high, ctrl_cfg.drain_low,
                                        self.cfg.hmc_row_policy)
            n, ranks, banks, groups = spec.vaults, 1, spec.banks_per_vault, 1
            self.link = HmcLink(self.cfg.hmc_link, self.tck)
        else:
            n, ranks, banks = spec.channels, spec.ranks_per_channel, spec.banks_per_rank
            groups = spec.bank_groups_per_rank
            self.link = None
        per_unit = ranks * banks
        self.ctrls = [ChannelController(i, self.timing, ranks, banks, groups, ctrl_cfg,
                                        self.stats, bank_offset=i * per_unit)
                      for i in range(n)]
        self.stats.issued = self._on_issue
        self.inbox = []        # (arrival_cycle, seq, req)
        self.overflow = [deque() for _ in range(n)]
        self.backlog = set()
        self.responses = []    # HMC: (data_done_cycle, seq, req)
        self.deliveries = []   # (ps, seq, req)
        self._seq = itertools.count()
        self._ids = itertools.count()
        self.cycle = -1
        self.in_flight = 0

    # -- request entry ----------------------------------------------------
    def new_request(self, paddr, is_write, core_id=0, t_ps=0, on_done=None) -> MemoryRequest:
        unit, rank, group, bank, row, col = self.mapper.locate(paddr)
        return MemoryRequest(id=next(self._ids), core_id=core_id, is_write=is_write,
                             paddr=paddr, unit=unit, rank=rank, group=group, bank=bank,
                             row=row, column=col, created_ps=t_ps, on_done=on_done)

    def submit(self, req: MemoryRequest, t_ps: int):
        req.created_ps = t_ps
        self.in_flight += 1
        self.stats.enqueued += 1
        if self.link is not None:
            self.link.submit(req, t_ps)
        else:
            heapq.heappush(self.inbox, (-(-t_ps // self.tck), next(self._seq), req))

    def enqueue(self, req: MemoryRequest) -> bool:
        """Direct enqueue at the current cycle (no link, no retry)."""
        return self.ctrls[req.unit].enqueue(req, max(self.cycle, 0))

    # -- event loop -----------------------------------------------------------
    def idle(self) -> bool:
        return self.in_flight == 0

    def _next_cycle(self):
        c = INF
        if self.inbox:
            c = self.inbox[0][0]
        if self.link is not None:
            c = min(c, self.link.next_cycle(self.ctrls))
            if self.responses:
                c = min(c, self.responses[0][0])
        for ctrl in self.ctrls:
            if ctrl.wake < c:
                c = ctrl.wake
        return max(c, self.cycle + 1)

    def next_event_ps(self):
        c = self._next_cycle()
        t = c * self.tck if c != INF else INF
        if self.deliveries and self.deliveries[0][0] <= t:
            return self.deliveries[0][0]
        return t

    def process_next(self):
        c = self._next_cycle()
        t = c * self.tck if c != INF else INF
        if self.deliveries and self.deliveries[0][0] <= t:
            t = self.deliveries[0][0]
            while self.deliveries and self.deliveries[0][0] == t:
                self._deliver(heapq.heappop(self.deliveries)[2])
            return
        if c == INF:
            return
        self.step(c)

    def step(self, c: int):
        """Process DRAM clock ``c``: arrivals, then one scheduling decision per unit."""
        self.cycle = c
        ctrls = self.ctrls
        inbox = self.inbox
        while inbox and inbox[0][0] <= c:
            req = heapq.heappop(inbox)[2]
            over = self.overflow[req.unit]
            if over or not ctrls[req.unit].enqueue(req, c):
                over.append(req)
                self.backlog.add(req.unit)
        if self.backlog:
            for unit in sorted(self.backlog):
                over = self.overflow[unit]
                ctrl = ctrls[unit]
                while over and ctrl.has_space(over[0].is_write):
                    ctrl.enqueue(over.popleft(), c)
                if not over:
                    self.backlog.discard(unit)
        if self.link is not None:
            self.link.deliver(c, ctrls)
            while self.responses and self.responses[0][0] <= c:
                req = heapq.heappop(self.responses)[2]
                done = self.link.respond(req, req.data_done_cycle * self.tck)
                heapq.heappush(self.deliveries, (done, next(self._seq), req))
        for ctrl in ctrls:
            if ctrl.wake <= c:
                ctrl.tick(c)

    def _on_issue(self, req: MemoryRequest):
        if self.link is not None:
            heapq.heappush(self.responses, (req.data_done_cycle, next(self._seq), req))
        else:
            heapq.heappush(self.deliveries,
                           (req.data_done_cycle * self.tck, next(self._seq), req))

    def _deliver(self, req: MemoryRequest):
        req.delivered_ps = req.data_done_cycle * self.tck + req.link_out_ps
        self.in_flight -= 1
        self.stats.delivered(req)
        if req.on_done is not None:
            req.on_done(req, req.delivered_ps)

    def drain(self, limit_ps=INF):
        while not self.idle():
            t = self.next_event_ps()
            if t == INF or t > limit_ps:
                break
            self.process_next()

    def run_until(self, t_ps):
        while self.next_event_ps() <= t_ps:
            self.process_next()

    # -- results ---------------------------------------------------------------
    def command_log(self) -> list[Command]:
        return self.stats.log or []

    def total_queued(self) -> int:
        return sum(c.pending for c in self.ctrls) + sum(len(o) for o in self.overflow)


class FixedLatencyMemory:
    """Every request completes a fixed time after submission (no contention)."""

    def __init__(self, latency_ps: int):
        self.latency_ps = latency_ps
        self.deliveries = []
        self._seq = itertools.count()
        self._ids = itertools.count()
        self.in_flight = 0
        self.submitted = []

    def new_request(self, paddr, is_write, core_id=0, t_ps=0, on_done=None) -> MemoryRequest:
        return MemoryRequest(id=next(self._ids), core_id=core_id, is_write=is_write,
                             paddr=paddr, created_ps=t_ps, on_done=on_done)

    def submit(self, req, t_ps):
        req.created_ps = t_ps
        self.in_flight += 1
        self.submitted.append(req)
        heapq.heappush(self.deliveries, (t_ps + self.latency_ps, next(self._seq), req))

    def idle(self):
        return self.in_flight == 0

    def next_event_ps(self):
        return self.deliveries[0][0] if self.deliveries else INF

    def process_next(self):
        t, _, req = heapq.heappop(self.deliveries)
        req.delivered_ps = t
        self.in_flight -= 1
        if req.on_done is not None:
            req.on_done(req, t)
