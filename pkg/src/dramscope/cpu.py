"""Trace-driven core model, cache hierarchy and page translation.

Each core replays one trace through a 4-wide, 128-entry in-order-retire
window.  Bubbles are ready as soon as they dispatch, reads wait for their
cache or memory latency, and writes retire immediately (the cache access
still happens and may cause traffic).  Caches are functional: a miss fills
every level on the spot while the timing is carried by the requesting
window entry.
"""
from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .dramspec import LINE_BYTES
from .errors import ConfigError, OutOfPhysicalMemory

log = logging.getLogger(__name__)

INF = float("inf")
PAGE_BYTES = 4096
L1, L2, L3, MISS = "L1", "L2", "L3", "llc_miss"


# ---------------------------------------------------------------------------
# translation

class FramePool:
    """Physical frames handed out in a seeded pseudo-random order.

    ``mode="identity"`` hands frames out in ascending order instead, which
    keeps consecutive first-touched pages physically contiguous.
    """

    def __init__(self, capacity_bytes: int, page_bytes: int = PAGE_BYTES, seed: int = 0,
                 mode: str = "random"):
        if mode not in ("random", "identity"):
            raise ConfigError(f"unknown translation mode {mode!r}")
        self.page_bytes = page_bytes
        self.frames = capacity_bytes // page_bytes
        self.mode = mode
        self.next_free = 0
        if mode == "random":
            self.order = np.random.default_rng(seed).permutation(self.frames)
        else:
            self.order = None

    def allocate(self) -> int:
        if self.next_free >= self.frames:
            raise OutOfPhysicalMemory(f"all {self.frames} physical frames are in use")
        i = self.next_free
        self.next_free += 1
        return int(self.order[i]) if self.order is not None else i


class PageTable:
    """First-touch virtual-to-physical mapping for one address space."""

    def __init__(self, pool: FramePool):
        self.pool = pool
        self.page_bytes = pool.page_bytes
        self.shift = pool.page_bytes.bit_length() - 1
        self.mapping: dict[int, int] = {}

    def translate(self, vaddr: int) -> int:
        page = vaddr >> self.shift
        frame = self.mapping.get(page)
        if frame is None:
            frame = self.mapping[page] = self.pool.allocate()
        return (frame << self.shift) | (vaddr & (self.page_bytes - 1))


def translate(pt: PageTable, vaddr: int) -> int:
    return pt.translate(vaddr)


# ---------------------------------------------------------------------------
# caches

@dataclass
class CacheLevelConfig:
    capacity_bytes: int
    associativity: int
    latency_cycles: int
    line_bytes: int = LINE_BYTES
    shared: bool = False

    def validate(self):
        if self.capacity_bytes % (self.associativity * self.line_bytes):
            raise ConfigError("cache capacity must be a multiple of associativity x line size")
        return self

    @property
    def sets(self) -> int:
        return self.capacity_bytes // (self.associativity * self.line_bytes)


class Cache:
    """Set-associative LRU write-back cache over line numbers."""

    def __init__(self, cfg: CacheLevelConfig, name=""):
        self.cfg = cfg.validate()
        self.name = name
        self.ways = cfg.associativity
        self.nsets = cfg.sets
        self.sets = [dict() for _ in range(self.nsets)]  # line -> dirty, LRU first
        self.hits = self.misses = 0

    def set_index(self, line: int) -> int:
        return line % self.nsets

    def lookup(self, line: int, write: bool) -> bool:
        s = self.sets[line % self.nsets]
        dirty = s.pop(line, None)
        if dirty is None:
            self.misses += 1
            return False
        s[line] = dirty or write
        self.hits += 1
        return True

    def insert(self, line: int, dirty: bool):
        """Install ``line``; returns the evicted (line, dirty) or None."""
        s = self.sets[line % self.nsets]
        if line in s:
            s[line] = s.pop(line) or dirty
            return None
        victim = None
        if len(s) >= self.ways:
            old = next(iter(s))
            victim = (old, s.pop(old))
        s[line] = dirty
        return victim

    def contains(self, line: int) -> bool:
        return line in self.sets[line % self.nsets]


@dataclass
class HierarchyConfig:
    l1: CacheLevelConfig = field(default_factory=lambda: CacheLevelConfig(64 << 10, 4, 4))
    l2: CacheLevelConfig = field(default_factory=lambda: CacheLevelConfig(256 << 10, 4, 12))
    l3_per_core_bytes: int = 2 << 20
    l3_associativity: int = 8
    l3_latency: int = 38


class CacheHierarchy:
    """Private L1/L2 per core, one shared L3.  Non-inclusive."""

    def __init__(self, cores: int, cfg: HierarchyConfig | None = None, l3_cores=None):
        self.cfg = cfg = cfg or HierarchyConfig()
        self.l1 = [Cache(cfg.l1, f"L1.{i}") for i in range(cores)]
        self.l2 = [Cache(cfg.l2, f"L2.{i}") for i in range(cores)]
        l3_bytes = cfg.l3_per_core_bytes * (l3_cores or cores)
        self.l3 = Cache(CacheLevelConfig(l3_bytes, cfg.l3_associativity,
                                         cfg.l3_latency, shared=True), "L3")
        self.latency = {L1: cfg.l1.latency_cycles, L2: cfg.l2.latency_cycles,
                        L3: cfg.l3_latency, MISS: cfg.l3_latency}
        self.accesses = 0

    def access(self, core: int, paddr: int, is_write: bool, writebacks: list | None = None):
        """Returns (level, latency).  Dirty lines leaving L3 go to ``writebacks``."""
        self.accesses += 1
        line = paddr // LINE_BYTES
        wb = writebacks if writebacks is not None else []
        if self.l1[core].lookup(line, is_write):
            return L1, self.latency[L1]
        if self.l2[core].lookup(line, False):
            level = L2
        elif self.l3.lookup(line, False):
            level = L3
            self._fill(self.l2[core], line, False, core, wb)
        else:
            level = MISS
            self._fill_l3(line, wb)
            self._fill(self.l2[core], line, False, core, wb)
        self._fill(self.l1[core], line, is_write, core, wb)
        return level, self.latency[level]

    def _fill(self, cache, line, dirty, core, wb):
        victim = cache.insert(line, dirty)
        if victim is None or not victim[1]:
            return
        if cache is self.l1[core]:
            self._fill(self.l2[core], victim[0], True, core, wb)
        else:
            self._fill_l3(victim[0], wb, dirty=True)

    def _fill_l3(self, line, wb, dirty=False):
        victim = self.l3.insert(line, dirty)
        if victim is not None and victim[1]:
            wb.append(victim[0] * LINE_BYTES)


def cache_access(hierarchy: CacheHierarchy, core_id: int, paddr: int, is_write: bool):
    wb = []
    level, lat = hierarchy.access(core_id, paddr, is_write, wb)
    return level, lat, wb


# ---------------------------------------------------------------------------
# memory port

class MemoryPort:
    """LLC-miss path: merges misses to a line that is already in flight."""

    def __init__(self, memsys):
        self.memsys = memsys
        self.pending: dict[int, object] = {}
        self.fetches = 0
        self.writebacks = 0

    def fetch(self, line: int, core_id: int, t_ps: int, waiter=None):
        req = self.pending.get(line)
        if req is None:
            req = self.memsys.new_request(line * LINE_BYTES, False, core_id, t_ps, self._done)
            self.pending[line] = req
            self.fetches += 1
            self.memsys.submit(req, t_ps)
        if waiter is not None:
            req.waiters.append(waiter)
        return req

    def writeback(self, paddr: int, core_id: int, t_ps: int):
        req = self.memsys.new_request(paddr, True, core_id, t_ps, None)
        self.writebacks += 1
        self.memsys.submit(req, t_ps)

    def _done(self, req, t_ps):
        self.pending.pop(req.paddr // LINE_BYTES, None)
        for core, entry in req.waiters:
            core.data_returned(entry, t_ps)


# ---------------------------------------------------------------------------
# core

@dataclass
class CoreConfig:
    ghz: float = 4.0
    window: int = 128
    width: int = 4

    @property
    def tck_ps(self) -> int:
        return round(1000 / self.ghz)


@dataclass
class CoreStats:
    instructions: int
    cycles: int
    llc_misses: int
    reads: int
    writes: int

    @property
    def ipc(self) -> float:
        return self.instructions / self.cycles if self.cycles else 0.0

    @property
    def mpki(self) -> float:
        return self.llc_misses * 1000.0 / self.instructions if self.instructions else 0.0


class _Cursor:
    """Walks a trace as an instruction stream: bubbles, then read, then write."""
    __slots__ = ("it", "bubbles", "read", "write", "done", "limit")

    def __init__(self, records, limit=None):
        self.it = iter(records)
        self.bubbles = 0
        self.read = self.write = None
        self.done = False
        self.limit = limit  # instructions still allowed, None for no cap
        self._advance()

    def _advance(self):
        while not self.bubbles and self.read is None and self.write is None:
            if self.limit is not None and self.limit <= 0:
                self.done = True
                return
            rec = next(self.it, None)
            if rec is None:
                self.done = True
                return
            self.bubbles = rec.bubbles
            self.read, self.write = rec.read_addr, rec.write_addr
            if self.limit is not None:
                self._clip()

    def _clip(self):
        n = self.limit
        if self.bubbles >= n:
            self.bubbles, self.read, self.write = n, None, None
        elif self.read is not None and self.bubbles + 1 >= n:
            self.write = None

    def take_bubbles(self, k):
        self.bubbles -= k
        if self.limit is not None:
            self.limit -= k
        if not self.bubbles:
            self._advance_if_empty()

    def take_read(self):
        a, self.read = self.read, None
        self._took()
        return a

    def take_write(self):
        a, self.write = self.write, None
        self._took()
        return a

    def _took(self):
        if self.limit is not None:
            self.limit -= 1
        self._advance_if_empty()

    def _advance_if_empty(self):
        if not self.bubbles and self.read is None and self.write is None:
            self._advance()


class Core:
    """One trace-replaying core.

    ``trace_factory`` returns a fresh iterable of TraceRecords (it is called
    again when the core restarts in bundle mode).
    """

    def __init__(self, core_id: int, trace_factory, hierarchy: CacheHierarchy,
                 port: MemoryPort, page_table: PageTable, cfg: CoreConfig | None = None,
                 warmup: int = 0, max_instructions: int | None = None, restart: bool = False,
                 bulk_skip: bool = True, on_warm=None):
        self.id = core_id
        self.cfg = cfg or CoreConfig()
        self.tck = self.cfg.tck_ps
        self.factory = trace_factory
        self.hier = hierarchy
        self.port = port
        self.pt = page_table
        self.warmup = warmup
        self.cap = max_instructions
        self.restart = restart
        self.bulk_skip = bulk_skip
        self.on_warm = on_warm
        self.window: deque = deque()  # entries [count, ready_cycle]
        self.occupancy = 0
        self.retired = 0
        self.llc_misses = 0
        self.reads = self.writes = 0
        self.cycle = 0
        self.wake = 0
        self.finished = False  # first pass complete
        self.stats: CoreStats | None = None
        self.finish_cycle = None
        self.passes = 0
        self.warm = warmup == 0
        self._mark = (0, 0, 0, 0, 0)  # (cycle, retired, misses, reads, writes)
        self._wb: list = []
        self.cursor = _Cursor(trace_factory(), max_instructions)
        if self.cursor.done:
            raise ConfigError(f"core {core_id}: trace is empty")

    # -- helpers ------------------------------------------------------------
    def _push(self, n, ready):
        w = self.window
        if w and w[-1][1] == ready and ready != INF:
            w[-1][0] += n
        else:
            w.append([n, ready])
        self.occupancy += n

    def data_returned(self, entry, t_ps):
        cyc = -(-t_ps // self.tck)
        entry[1] = cyc
        w = max(cyc, self.cycle + 1)
        if w < self.wake:
            self.wake = w

    def _snapshot(self, c):
        return (c, self.retired, self.llc_misses, self.reads, self.writes)

    def _stats_since(self, mark, c) -> CoreStats:
        return CoreStats(self.retired - mark[1], c - mark[0], self.llc_misses - mark[2],
                         self.reads - mark[3], self.writes - mark[4])

    # -- memory instructions -----------------------------------------------
    def _mem(self, vaddr, is_write, c):
        paddr = self.pt.translate(vaddr)
        line = paddr // LINE_BYTES
        t_ps = (c + self.hier.cfg.l3_latency) * self.tck
        port = self.port
        if line in port.pending:
            if is_write:
                self.hier.access(self.id, paddr, True, self._wb)
                return None
            entry = [1, INF]
            port.fetch(line, self.id, t_ps, (self, entry))
            return entry
        level, lat = self.hier.access(self.id, paddr, is_write, self._wb)
        entry = None
        if level == MISS:
            self.llc_misses += 1
            if is_write:
                port.fetch(line, self.id, t_ps)
            else:
                entry = [1, INF]
                port.fetch(line, self.id, t_ps, (self, entry))
        elif not is_write:
            entry = [1, c + lat]
        if self._wb:
            for a in self._wb:
                port.writeback(a, self.id, t_ps)
            self._wb.clear()
        return entry

    # -- one cycle --------------------------------------------------------------
    def tick(self, c: int):
        self.cycle = c
        cur = self.cursor
        cfg = self.cfg
        width, wsize = cfg.width, cfg.window
        if self.bulk_skip and cur.bubbles >= 2 * width and self.occupancy + width <= wsize:
            if self._try_skip(c):
                return
        progress = False
        n = 0
        while n < width and self.occupancy < wsize and not cur.done:
            if cur.bubbles:
                k = min(width - n, wsize - self.occupancy, cur.bubbles)
                cur.take_bubbles(k)
                self._push(k, c)
                n += k
            elif cur.read is not None:
                entry = self._mem(cur.take_read(), False, c)
                self.reads += 1
                self.window.append(entry)
                self.occupancy += 1
                n += 1
            else:
                self._mem(cur.take_write(), True, c)
                self.writes += 1
                self._push(1, c)
                n += 1
        progress = n > 0
        r = 0
        w = self.window
        while r < width and w and w[0][1] <= c:
            head = w[0]
            m = min(head[0], width - r)
            head[0] -= m
            r += m
            if not head[0]:
                w.popleft()
        if r:
            self.occupancy -= r
            self.retired += r
            progress = True
            self._check_warm(c)
        if cur.done and not w:
            self._finish(c + 1)
            return
        if progress:
            self.wake = c + 1
        else:
            self.wake = w[0][1] if w else c + 1

    def _try_skip(self, c):
        """Jump over cycles that only stream bubbles through an all-ready window."""
        w = self.window
        for e in w:
            if e[1] > c:
                return False
        width = self.cfg.width
        k = self.cursor.bubbles // width - 1
        if not self.warm:
            k = min(k, (self.warmup - self.retired) // width)
        if k < 2:
            return False
        self.cursor.take_bubbles(k * width)
        self.retired += k * width
        w.clear()
        if self.occupancy:
            w.append([self.occupancy, c + k - 1])
        self.wake = c + k
        self.cycle = c + k - 1
        self._check_warm(c + k - 1)
        return True

    def _check_warm(self, c):
        if not self.warm and self.retired >= self.warmup:
            self.warm = True
            self._mark = self._snapshot(c + 1)
            if self.on_warm is not None:
                self.on_warm(self)

    def _finish(self, end_cycle):
        if not self.finished:
            self.finished = True
            mark = self._mark
            if not self.warm:
                log.warning("core %d finished inside its warmup window; measuring from start",
                            self.id)
                mark = (0, 0, 0, 0, 0)
                self.warm = True
                if self.on_warm is not None:
                    self.on_warm(self)
            self.stats = self._stats_since(mark, end_cycle)
            self.finish_cycle = end_cycle
        self.passes += 1
        if self.restart:
            self.cursor = _Cursor(self.factory(), self.cap)
            self.wake = end_cycle
        else:
            self.wake = INF

    @property
    def done(self) -> bool:
        return self.finished and not self.restart

    def ipc(self) -> float:
        if self.stats is None:
            raise ValueError(f"core {self.id} has not finished")
        if self.stats.cycles <= 0:
            raise ValueError("IPC of a zero-cycle run")
        return self.stats.ipc
