"""Characterisation metrics: BPU, row-buffer locality, MPKI, speedups,
queuing fraction and sustained bandwidth."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

HIGH_INTENSITY_MPKI = 15.0


@dataclass(frozen=True, slots=True)
class BankActivitySample:
    cycle: int
    active_bank_count: int


def bpu(samples: Iterable[BankActivitySample]) -> float:
    """Mean number of active banks over the cycles in which memory is active."""
    total = n = 0
    for s in samples:
        if s.active_bank_count < 1:
            raise ValueError(f"cycle {s.cycle}: sample with no active bank is not a "
                             "memory-active cycle")
        total += s.active_bank_count
        n += 1
    return total / n if n else 0.0


class _Union:
    """Running length of a union of intervals fed in non-decreasing start order."""
    __slots__ = ("start", "end", "total")

    def __init__(self):
        self.start = self.end = 0
        self.total = 0

    def add(self, s, e):
        if s >= self.end:
            self.total += self.end - self.start
            self.start, self.end = s, e
        elif e > self.end:
            self.end = e

    def length(self):
        return self.total + self.end - self.start

    def reset(self, at):
        self.total = 0
        if self.end <= at:
            self.start = self.end = at
        else:
            self.start = max(self.start, at)


class BankActivityTracker:
    """Incremental BPU bookkeeping from command occupancy intervals.

    A bank is active in every cycle covered by one of its commands'
    occupancy intervals; memory is active whenever any bank is.
    """

    def __init__(self, total_banks: int, bank_channel: Sequence[int], bank_rank: Sequence[int]):
        self.total_banks = total_banks
        self.bank_channel = list(bank_channel)
        self.bank_rank = list(bank_rank)
        self.banks = [_Union() for _ in range(total_banks)]
        self.channels = [_Union() for _ in range(max(self.bank_channel) + 1)]
        self.ranks = [_Union() for _ in range(max(self.bank_rank) + 1)]
        self.memory = _Union()

    def add(self, bank: int, start: int, end: int):
        if end <= start:
            return
        self.banks[bank].add(start, end)
        self.channels[self.bank_channel[bank]].add(start, end)
        self.ranks[self.bank_rank[bank]].add(start, end)
        self.memory.add(start, end)

    def reset(self, at: int):
        for u in (*self.banks, *self.channels, *self.ranks, self.memory):
            u.reset(at)

    def busy_bank_cycles(self) -> int:
        return sum(u.length() for u in self.banks)

    def active_cycles(self) -> int:
        return self.memory.length()

    def bpu(self) -> float:
        active = self.active_cycles()
        return self.busy_bank_cycles() / active if active else 0.0

    def bpu_per_channel(self) -> float:
        """Mean over channels of each channel's own BPU (sensitivity mode)."""
        per = [0] * len(self.channels)
        for b, u in enumerate(self.banks):
            per[self.bank_channel[b]] += u.length()
        vals = [per[c] / u.length() for c, u in enumerate(self.channels) if u.length()]
        return sum(vals) / len(vals) if vals else 0.0

    def rank_active_fraction(self, duration_cycles: int) -> float:
        if duration_cycles <= 0:
            return 0.0
        return sum(u.length() for u in self.ranks) / (len(self.ranks) * duration_cycles)


@dataclass(frozen=True)
class LocalityBreakdown:
    hits: int
    misses: int
    conflicts: int

    @property
    def total(self) -> int:
        return self.hits + self.misses + self.conflicts

    def _frac(self, n):
        return n / self.total if self.total else 0.0

    @property
    def hit_fraction(self) -> float:
        return self._frac(self.hits)

    @property
    def miss_fraction(self) -> float:
        return self._frac(self.misses)

    @property
    def conflict_fraction(self) -> float:
        return self._frac(self.conflicts)


def locality_breakdown(classes: Iterable) -> LocalityBreakdown:
    """Count hit/miss/conflict; accepts requests or bare class strings."""
    counts = {"hit": 0, "miss": 0, "conflict": 0}
    for c in classes:
        cls = c if isinstance(c, str) or c is None else c.locality_class
        if cls not in counts:
            raise ValueError(f"unclassified request: {c!r}")
        counts[cls] += 1
    return LocalityBreakdown(counts["hit"], counts["miss"], counts["conflict"])


def mpki(llc_misses: int, instructions: int) -> float:
    if instructions <= 0:
        raise ValueError("MPKI needs a positive instruction count")
    return llc_misses * 1000.0 / instructions


def is_memory_intensive(value: float) -> bool:
    return value > HIGH_INTENSITY_MPKI


def ipc(instructions: int, cycles: int) -> float:
    if cycles <= 0:
        raise ValueError("IPC needs a positive cycle count")
    return instructions / cycles


def weighted_speedup(ipc_shared: Sequence[float], ipc_alone: Sequence[float]) -> float:
    if len(ipc_shared) != len(ipc_alone):
        raise ValueError("shared and alone IPC lists differ in length")
    if any(a <= 0 for a in ipc_alone):
        raise ValueError("alone IPC must be positive")
    return sum(s / a for s, a in zip(ipc_shared, ipc_alone))


def parallel_speedup(t1: float, tn: float) -> float:
    if t1 <= 0 or tn <= 0:
        raise ValueError("execution times must be positive")
    return t1 / tn


def sustained_bandwidth(bytes_transferred: int, wall_seconds: float) -> float:
    """GB/s (10^9 bytes per second)."""
    if wall_seconds <= 0:
        raise ValueError("duration must be positive")
    return bytes_transferred / wall_seconds / 1e9


def queuing_fraction(requests: Iterable) -> float:
    """Share of total latency spent queued before the first DRAM command.

    Accepts completed requests or ``(queuing, service)`` pairs.
    """
    q_sum = s_sum = 0
    n = 0
    for r in requests:
        if isinstance(r, tuple):
            q, s = r
        else:
            if r.completion_cycle is None or r.first_command_cycle is None:
                raise ValueError(f"request {r.id} has not completed")
            q = r.first_command_cycle - r.arrival_cycle
            s = r.completion_cycle - r.first_command_cycle
        q_sum += q
        s_sum += s
        n += 1
    if n == 0:
        raise ValueError("queuing fraction of an empty request set")
    total = q_sum + s_sum
    return q_sum / total if total else 0.0


def latency_decomposition(req, tck_ps: int) -> tuple[float, float]:
    """(queuing_ns, service_ns) of a completed request."""
    if req.completion_cycle is None or req.first_command_cycle is None:
        raise ValueError(f"request {req.id} has not completed")
    q = (req.first_command_cycle - req.arrival_cycle) * tck_ps / 1000.0
    s = (req.completion_cycle - req.first_command_cycle) * tck_ps / 1000.0
    return q, s
