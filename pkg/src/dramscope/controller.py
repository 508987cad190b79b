"""Per-channel memory controller.

One :class:`ChannelController` owns the read/write queues and bank state of
one channel (or one HMC vault).  ``tick`` issues at most one command per
DRAM clock, chosen FR-FCFS: issuable column commands to open rows first,
then other issuable commands, oldest arrival first within each class.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional

from .dramspec import TimingSet

INF = float("inf")

ACT, PRE, RD, WR, REF = "ACT", "PRE", "RD", "WR", "REF"
COMMAND_KINDS = (ACT, PRE, RD, WR, REF)
HIT, MISS, CONFLICT = "hit", "miss", "conflict"


class Command(NamedTuple):
    cycle: int
    kind: str
    channel: int
    rank: int
    bank_group: int
    bank: int
    row: int
    column: int
    req_id: int


@dataclass(eq=False)
class MemoryRequest:
    id: int
    core_id: int
    is_write: bool
    paddr: int
    coords: object = None
    arrival_cycle: Optional[int] = None
    first_command_cycle: Optional[int] = None
    completion_cycle: Optional[int] = None
    locality_class: Optional[str] = None
    # decoded location inside the controller
    unit: int = 0
    rank: int = 0
    group: int = 0
    bank: int = 0
    row: int = 0
    column: int = 0
    data_done_cycle: Optional[int] = None
    created_ps: int = 0
    delivered_ps: Optional[int] = None
    link_in_ps: int = 0
    link_out_ps: int = 0
    counted: bool = True
    waiters: list = field(default_factory=list)
    on_done: Optional[Callable] = None

    def classify(self, cls: str):
        if self.locality_class is not None:
            raise RuntimeError(f"request {self.id} already classified as {self.locality_class}")
        self.locality_class = cls


@dataclass(slots=True)
class BankState:
    open_row: Optional[int] = None
    next_act: int = 0
    next_pre: int = 0
    next_rd: int = 0
    next_wr: int = 0
    auto_pre: bool = False


@dataclass(slots=True)
class RankState:
    next_act: int = 0
    next_rd: int = 0
    acts: deque = field(default_factory=lambda: deque(maxlen=4))
    next_refresh: int = 0
    refresh_pending: bool = False


def classify(request: MemoryRequest, bank: BankState) -> str:
    if bank.open_row == request.row:
        cls = HIT
    elif bank.open_row is None:
        cls = MISS
    else:
        cls = CONFLICT
    request.classify(cls)
    return cls


@dataclass
class ControllerConfig:
    read_queue: int = 32
    write_queue: int = 32
    drain_high: int = 28
    drain_low: int = 16
    row_policy: str = "open"  # HMC vaults default to "closed", see MemorySystem


class NullSink:
    def command(self, ctrl, cmd, gid, start, end):
        pass

    def classified(self, req):
        pass

    def issued(self, req):
        pass


class ChannelController:
    def __init__(self, index: int, timing: TimingSet, ranks: int, banks_per_rank: int,
                 bank_groups: int, cfg: ControllerConfig = None, sink=None, bank_offset=0):
        self.index = index
        self.t = timing
        self.cfg = cfg or ControllerConfig()
        self.sink = sink or NullSink()
        self.ranks_n = ranks
        self.banks_per_rank = banks_per_rank
        self.groups = bank_groups
        self.bank_offset = bank_offset
        self.banks = [BankState() for _ in range(ranks * banks_per_rank)]
        self.ranks = [RankState(next_refresh=timing.REFI) for _ in range(ranks)]
        self.readq: list[MemoryRequest] = []
        self.writeq: list[MemoryRequest] = []
        self.write_mode = False
        self.closed_page = self.cfg.row_policy == "closed"
        self.next_cas = 0
        self.next_cas_group = [0] * bank_groups
        self.bus_free = 0
        self.last_cmd_cycle = -1
        self.wake = INF

    # -- queues -------------------------------------------------------
    def enqueue(self, req: MemoryRequest, cycle: int) -> bool:
        q, cap = (self.writeq, self.cfg.write_queue) if req.is_write else (
            self.readq, self.cfg.read_queue)
        if len(q) >= cap:
            return False
        req.arrival_cycle = cycle
        q.append(req)
        bank = self.banks[req.bank]
        if bank.auto_pre and bank.open_row == req.row:
            bank.auto_pre = False
        if cycle < self.wake:
            self.wake = cycle
        return True

    def has_space(self, is_write: bool) -> bool:
        if is_write:
            return len(self.writeq) < self.cfg.write_queue
        return len(self.readq) < self.cfg.read_queue

    @property
    def pending(self) -> int:
        return len(self.readq) + len(self.writeq)

    def drain_writes(self) -> bool:
        """Update and return the write-drain mode (hysteresis on queue occupancy)."""
        n = len(self.writeq)
        if not self.write_mode:
            if n >= self.cfg.drain_high:
                self.write_mode = True
        elif n <= self.cfg.drain_low:
            self.write_mode = False
        return self.write_mode

    def candidates(self) -> list[MemoryRequest]:
        if self.drain_writes():
            return self.writeq
        return self.readq if self.readq else self.writeq

    # -- timing -------------------------------------------------------
    def earliest(self, req: MemoryRequest):
        """(earliest legal cycle, command kind) for the request's next command."""
        bank = self.banks[req.bank]
        t = self.t
        if bank.open_row == req.row:
            if req.is_write:
                return max(bank.next_wr, self.next_cas, self.next_cas_group[req.group],
                           self.bus_free - t.CWL), WR
            return max(bank.next_rd, self.next_cas, self.next_cas_group[req.group],
                       self.bus_free - t.CL, self.ranks[req.rank].next_rd), RD
        if bank.open_row is None:
            rank = self.ranks[req.rank]
            if rank.refresh_pending:
                return INF, ACT
            when = max(bank.next_act, rank.next_act)
            if t.FAW and len(rank.acts) == 4:
                when = max(when, rank.acts[0] + t.FAW)
            return when, ACT
        return bank.next_pre, PRE

    # -- scheduling ---------------------------------------------------
    def tick(self, cycle: int) -> Optional[Command]:
        """Issue at most one command at ``cycle``; updates ``self.wake``."""
        if cycle <= self.last_cmd_cycle:
            self.wake = self.last_cmd_cycle + 1
            return None
        wake = INF
        if self.t.REFI:
            cmd, w = self._refresh(cycle)
            if cmd is not None:
                return self._issued(cycle, cmd)
            wake = min(wake, w)

        cands = self.candidates()
        banks = self.banks
        row_pick = None
        for req in cands:
            when, kind = self.earliest(req)
            if when <= cycle:
                if kind is RD or kind is WR:
                    return self._issued(cycle, self._issue(req, kind, cycle))
                if row_pick is None:
                    row_pick = (req, kind)
            elif when < wake:
                wake = when

        if self.closed_page:
            for i, bank in enumerate(banks):
                if bank.auto_pre:
                    if bank.next_pre <= cycle:
                        return self._issued(cycle, self._precharge(i, cycle, -1))
                    wake = min(wake, bank.next_pre)

        if row_pick is not None:
            return self._issued(cycle, self._issue(row_pick[0], row_pick[1], cycle))
        self.wake = wake
        return None

    def _issued(self, cycle, cmd):
        self.last_cmd_cycle = cycle
        self.wake = cycle + 1
        return cmd

    def _command(self, cycle, kind, bank_idx, row, col, req_id):
        rank, bank = divmod(bank_idx, self.banks_per_rank)
        return Command(cycle, kind, self.index, rank, bank % self.groups, bank, row, col, req_id)

    def _occupancy(self, kind):
        t = self.t
        if kind is ACT:
            return t.RCD
        if kind is PRE:
            return t.RP
        if kind is RD:
            return t.CL + t.BL
        return t.CWL + t.BL

    def _precharge(self, bank_idx, cycle, req_id):
        bank = self.banks[bank_idx]
        cmd = self._command(cycle, PRE, bank_idx, bank.open_row, 0, req_id)
        bank.open_row = None
        bank.auto_pre = False
        bank.next_act = max(bank.next_act, cycle + self.t.RP)
        self.sink.command(self, cmd, self.bank_offset + bank_idx, cycle, cycle + self.t.RP)
        return cmd

    def _issue(self, req: MemoryRequest, kind: str, cycle: int) -> Command:
        t = self.t
        bank = self.banks[req.bank]
        if req.first_command_cycle is None:
            req.first_command_cycle = cycle
            classify(req, bank)
            self.sink.classified(req)
        if kind is PRE:
            return self._precharge(req.bank, cycle, req.id)

        cmd = self._command(cycle, kind, req.bank, req.row, req.column, req.id)
        if kind is ACT:
            bank.open_row = req.row
            bank.auto_pre = False
            bank.next_rd = bank.next_wr = cycle + t.RCD
            bank.next_pre = max(bank.next_pre, cycle + t.RAS)
            rank = self.ranks[req.rank]
            rank.next_act = cycle + t.RRD
            rank.acts.append(cycle)
        else:
            self.next_cas = cycle + t.CCD_S
            self.next_cas_group[req.group] = cycle + t.CCD_L
            if kind is RD:
                req.completion_cycle = cycle + t.CL
                req.data_done_cycle = self.bus_free = cycle + t.CL + t.BL
                bank.next_pre = max(bank.next_pre, cycle + t.RTP)
                self.readq.remove(req)
            else:
                data_end = cycle + t.CWL + t.BL
                self.bus_free = data_end
                req.completion_cycle = req.data_done_cycle = cycle + t.BL
                bank.next_pre = max(bank.next_pre, data_end + t.WR)
                if t.WTR:
                    rank = self.ranks[req.rank]
                    rank.next_rd = max(rank.next_rd, data_end + t.WTR)
                self.writeq.remove(req)
            if self.closed_page and not self._row_wanted(req.bank, req.row):
                bank.auto_pre = True
            self.sink.issued(req)
        self.sink.command(self, cmd, self.bank_offset + req.bank, cycle,
                          cycle + self._occupancy(kind))
        return cmd

    def _row_wanted(self, bank_idx, row):
        for q in (self.readq, self.writeq):
            for r in q:
                if r.bank == bank_idx and r.row == row:
                    return True
        return False

    # -- refresh --------------------------------------------------------
    def _refresh(self, cycle):
        """Per-rank all-bank refresh; returns (command or None, wake)."""
        wake = INF
        t = self.t
        for r, rank in enumerate(self.ranks):
            if not rank.refresh_pending:
                if cycle >= rank.next_refresh:
                    rank.refresh_pending = True
                else:
                    wake = min(wake, rank.next_refresh)
                    continue
            lo = r * self.banks_per_rank
            banks = self.banks[lo:lo + self.banks_per_rank]
            ready = cycle
            for i, bank in enumerate(banks):
                if bank.open_row is not None:
                    if bank.next_pre <= cycle:
                        return self._precharge(lo + i, cycle, -1), wake
                    ready = INF
                    wake = min(wake, bank.next_pre)
            if ready == INF:
                continue
            when = max(b.next_act for b in banks)
            if when > cycle:
                wake = min(wake, when)
                continue
            for b in banks:
                b.next_act = cycle + t.RFC
            rank.refresh_pending = False
            rank.next_refresh += t.REFI
            cmd = Command(cycle, REF, self.index, r, 0, 0, 0, 0, -1)
            self.sink.command(self, cmd, None, cycle, cycle)
            return cmd, wake
        return None, wake
