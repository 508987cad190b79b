"""Trace records, the text/binary trace formats and synthetic trace generation.

Text grammar, one record per line::

    <bubbles> [R:<hex-addr>] [W:<hex-addr>]

``bubbles`` is the number of non-memory instructions that precede the
(optional) read and (optional) write.  Lines starting with ``#`` are
comments.  The binary variant starts with the magic ``DLTR`` and a version
byte, followed by ``{varint bubbles, flags, [u64 read], [u64 write]}``
records (addresses little endian).
"""
from __future__ import annotations

import io
import itertools
import math
import struct
from dataclasses import dataclass
from typing import BinaryIO, Iterable, Iterator, Optional

import numpy as np

from .errors import TraceIOError, TraceParseError

MAGIC = b"DLTR"
BINARY_VERSION = 1
ADDR_LIMIT = 1 << 64

_FLAG_READ = 0x1
_FLAG_WRITE = 0x2
_U64 = struct.Struct("<Q")


@dataclass(frozen=True, slots=True)
class TraceRecord:
    bubbles: int
    read_addr: Optional[int] = None
    write_addr: Optional[int] = None

    def __post_init__(self):
        if self.bubbles < 0:
            raise ValueError(f"negative bubble count {self.bubbles}")
        if self.read_addr is None and self.write_addr is None and self.bubbles == 0:
            raise ValueError("empty trace record")
        for a in (self.read_addr, self.write_addr):
            if a is not None and not 0 <= a < ADDR_LIMIT:
                raise ValueError(f"address {a:#x} is not a 64-bit address")

    @property
    def instructions(self) -> int:
        return self.bubbles + (self.read_addr is not None) + (self.write_addr is not None)


def _parse_addr(token, body, line_no):
    if body[:2] in ("0x", "0X"):
        body = body[2:]
    if not body:
        raise TraceParseError("missing address", line_no, token)
    try:
        value = int(body, 16)
    except ValueError:
        raise TraceParseError("bad hex address", line_no, token) from None
    if value >= ADDR_LIMIT:
        raise TraceParseError("address wider than 64 bits", line_no, token)
    return value


def parse_trace_record(line: str, line_no: Optional[int] = None) -> TraceRecord:
    tokens = line.split()
    if not tokens:
        raise TraceParseError("empty line", line_no)
    head = tokens[0]
    try:
        bubbles = int(head, 10)
    except ValueError:
        raise TraceParseError("expected a decimal bubble count", line_no, head) from None
    if bubbles < 0:
        raise TraceParseError("negative bubble count", line_no, head)

    read = write = None
    for tok in tokens[1:]:
        kind, sep, body = tok.partition(":")
        if not sep:
            raise TraceParseError("expected R:<addr> or W:<addr>", line_no, tok)
        kind = kind.upper()
        if kind == "R" and read is None:
            read = _parse_addr(tok, body, line_no)
        elif kind == "W" and write is None:
            write = _parse_addr(tok, body, line_no)
        else:
            raise TraceParseError("unexpected or repeated field", line_no, tok)

    if bubbles == 0 and read is None and write is None:
        raise TraceParseError("record carries no content", line_no, line.strip())
    return TraceRecord(bubbles, read, write)


def format_trace_record(rec: TraceRecord) -> str:
    parts = [str(rec.bubbles)]
    if rec.read_addr is not None:
        parts.append(f"R:0x{rec.read_addr:X}")
    if rec.write_addr is not None:
        parts.append(f"W:0x{rec.write_addr:X}")
    return " ".join(parts)


def write_text_trace(records: Iterable[TraceRecord], out) -> int:
    n = 0
    for rec in records:
        out.write(format_trace_record(rec))
        out.write("\n")
        n += 1
    return n


def _write_varint(out, value):
    while True:
        byte = value & 0x7F
        value >>= 7
        if value:
            out.write(bytes((byte | 0x80,)))
        else:
            out.write(bytes((byte,)))
            return


def write_binary_trace(records: Iterable[TraceRecord], out: BinaryIO) -> int:
    out.write(MAGIC)
    out.write(bytes((BINARY_VERSION,)))
    n = 0
    for rec in records:
        _write_varint(out, rec.bubbles)
        flags = (_FLAG_READ if rec.read_addr is not None else 0) | (
            _FLAG_WRITE if rec.write_addr is not None else 0)
        out.write(bytes((flags,)))
        if rec.read_addr is not None:
            out.write(_U64.pack(rec.read_addr))
        if rec.write_addr is not None:
            out.write(_U64.pack(rec.write_addr))
        n += 1
    return n


def _read_exact(source, n, rec_no):
    data = source.read(n)
    if len(data) != n:
        raise TraceParseError("truncated binary record", rec_no)
    return data


def _iter_binary(source) -> Iterator[TraceRecord]:
    version = source.read(1)
    if version != bytes((BINARY_VERSION,)):
        raise TraceParseError(f"unsupported binary trace version {version!r}", 0)
    rec_no = 0
    while True:
        first = source.read(1)
        if not first:
            return
        rec_no += 1
        bubbles, shift, byte = 0, 0, first[0]
        while True:
            bubbles |= (byte & 0x7F) << shift
            if not byte & 0x80:
                break
            shift += 7
            byte = _read_exact(source, 1, rec_no)[0]
        flags = _read_exact(source, 1, rec_no)[0]
        if flags & ~(_FLAG_READ | _FLAG_WRITE):
            raise TraceParseError(f"bad flags byte {flags:#x}", rec_no)
        read = write = None
        if flags & _FLAG_READ:
            read = _U64.unpack(_read_exact(source, 8, rec_no))[0]
        if flags & _FLAG_WRITE:
            write = _U64.unpack(_read_exact(source, 8, rec_no))[0]
        if bubbles == 0 and read is None and write is None:
            raise TraceParseError("record carries no content", rec_no)
        yield TraceRecord(bubbles, read, write)


def _iter_text(lines) -> Iterator[TraceRecord]:
    for line_no, raw in enumerate(lines, 1):
        if isinstance(raw, bytes):
            try:
                raw = raw.decode("utf-8")
            except UnicodeDecodeError as exc:
                raise TraceParseError(f"invalid UTF-8 ({exc.reason})", line_no) from None
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        yield parse_trace_record(line, line_no)


def stream_trace(source) -> Iterator[TraceRecord]:
    """Lazily yield the records of a text or binary trace.

    ``source`` is a binary stream; the format is picked from its first four
    bytes.  Text streams are accepted too (text format only).
    """
    try:
        if isinstance(source, io.TextIOBase):
            yield from _iter_text(source)
            return
        head = source.read(4)
        if head == MAGIC:
            yield from _iter_binary(source)
            return
        first = head + source.readline()
        if not first:
            return
        yield from _iter_text(itertools.chain([first], source))
    except OSError as exc:
        raise TraceIOError(f"cannot read trace: {exc}") from exc


def open_trace(path) -> Iterator[TraceRecord]:
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise TraceIOError(f"cannot open trace {path}: {exc}") from exc
    with fh:
        yield from stream_trace(fh)


# --- synthetic traces ---------------------------------------------------

PATTERN_KINDS = ("stream", "random", "pointer-chase", "bursty")


@dataclass(frozen=True)
class SyntheticPattern:
    kind: str
    footprint_bytes: int
    requests_per_kilo_instruction: float
    burst_length: int = 8
    inter_burst_gap: int = 1000
    stride_bytes: int = 64
    seed: int = 0
    base_addr: int = 0
    write_fraction: float = 0.0
    line_bytes: int = 64

    def validate(self):
        if self.kind not in PATTERN_KINDS:
            raise ValueError(f"unknown pattern kind {self.kind!r}")
        if self.footprint_bytes < self.line_bytes:
            raise ValueError("footprint must hold at least one cache line")
        if not 0 < self.requests_per_kilo_instruction <= 1000:
            raise ValueError("requests_per_kilo_instruction must be in (0, 1000]")
        if self.kind == "stream" and not 0 < self.stride_bytes <= self.footprint_bytes:
            raise ValueError("stride must be positive and no larger than the footprint")
        if self.kind == "bursty":
            if self.burst_length <= 0 or self.inter_burst_gap < 0:
                raise ValueError("bad burst shape")
            period = 1000.0 * self.burst_length / self.requests_per_kilo_instruction
            if self.inter_burst_gap > 1.05 * (period - self.burst_length):
                raise ValueError(
                    "inter_burst_gap too large for the requested density "
                    f"(at most {period - self.burst_length:.0f} bubbles per gap)")
        if not 0.0 <= self.write_fraction <= 1.0:
            raise ValueError("write_fraction must be within [0, 1]")


class _Lcg:
    """Full-period walk over range(n) without materialising a permutation."""

    def __init__(self, n, seed):
        self.n = n
        self.m = 1 << max(1, (n - 1).bit_length())
        rng = np.random.default_rng(seed)
        self.a = int(rng.integers(0, self.m // 4)) * 4 + 1
        self.c = int(rng.integers(0, self.m // 2)) * 2 + 1
        self.x = int(rng.integers(0, self.m))

    def __next__(self):
        while True:
            self.x = (self.a * self.x + self.c) % self.m
            if self.x < self.n:
                return self.x


def _address_source(p: SyntheticPattern, rng):
    lines = p.footprint_bytes // p.line_bytes
    if p.kind == "stream":
        k = 0
        while True:
            yield p.base_addr + (k * p.stride_bytes) % p.footprint_bytes
            k += 1
    elif p.kind == "random":
        while True:
            for line in rng.integers(0, lines, size=4096):
                yield p.base_addr + int(line) * p.line_bytes
    elif p.kind == "pointer-chase":
        walk = _Lcg(lines, int(rng.integers(0, 1 << 32)))
        while True:
            yield p.base_addr + next(walk) * p.line_bytes
    else:
        # bursty: each burst fills consecutive lines of a randomly placed buffer
        while True:
            start = int(rng.integers(0, lines))
            for i in range(p.burst_length):
                yield p.base_addr + ((start + i) % lines) * p.line_bytes


def generate_synthetic(pattern: SyntheticPattern, total_instructions: int) -> Iterator[TraceRecord]:
    """Yield a deterministic synthetic trace of exactly ``total_instructions``.

    Memory operations are spaced so the realised density tracks
    ``requests_per_kilo_instruction``; each memory record carries one read
    (or one write, with probability ``write_fraction``).
    """
    pattern.validate()
    if total_instructions <= 0:
        raise ValueError("total_instructions must be positive")
    rng = np.random.default_rng(pattern.seed)
    write_rng = np.random.default_rng([pattern.seed, 1])
    addrs = _address_source(pattern, rng)

    def op(bubbles):
        addr = next(addrs)
        if pattern.write_fraction and write_rng.random() < pattern.write_fraction:
            return TraceRecord(bubbles, None, addr)
        return TraceRecord(bubbles, addr, None)

    emitted = 0
    if pattern.kind == "bursty":
        b = pattern.burst_length
        period = 1000.0 * b / pattern.requests_per_kilo_instruction
        bursts = 0
        gap = 0
        while True:
            for _ in range(b):
                if emitted + gap + 1 > total_instructions:
                    break
                yield op(gap)
                emitted += gap + 1
                gap = 0
            else:
                bursts += 1
                target = round(bursts * period)
                gap = max(pattern.inter_burst_gap, target - emitted)
                continue
            break
    else:
        spacing = 1000.0 / pattern.requests_per_kilo_instruction
        k = 0
        while True:
            target = round((k + 1) * spacing)
            if target > total_instructions:
                break
            yield op(target - emitted - 1)
            emitted = target
            k += 1
    if emitted < total_instructions:
        yield TraceRecord(total_instructions - emitted)


def synthetic_label(pattern: SyntheticPattern) -> str:
    return (f"synthetic:{pattern.kind}:fp={pattern.footprint_bytes}"
            f":rpki={pattern.requests_per_kilo_instruction:g}:seed={pattern.seed}")


def trace_density(records: Iterable[TraceRecord]) -> float:
    """Memory records per kilo-instruction."""
    mem = instr = 0
    for r in records:
        instr += r.instructions
        mem += (r.read_addr is not None) + (r.write_addr is not None)
    if instr == 0:
        return math.nan
    return mem * 1000.0 / instr
