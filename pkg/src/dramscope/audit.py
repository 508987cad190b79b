"""Command log I/O, timing-legality auditor and brute-force metric oracles.

The functions here only look at the saved command log and the timing
parameters; they share no state with the controller, so they serve as an
independent check on it.

Log line format::

    <cycle> <KIND> ch=<unit> ra=<rank> bg=<group> ba=<bank> row=<row> col=<col> req=<id>
"""
from __future__ import annotations

from collections import defaultdict, deque
from dataclasses import dataclass

import numpy as np

from .controller import ACT, PRE, RD, REF, WR, Command
from .dramspec import TimingSet, derive_timings
from .errors import TraceParseError
from .metrics import LocalityBreakdown

_KEYS = ("ch", "ra", "bg", "ba", "row", "col", "req")


@dataclass(frozen=True)
class LogGeometry:
    units: int
    ranks: int
    banks: int  # per rank

    @property
    def total_banks(self):
        return self.units * self.ranks * self.banks

    def bank_id(self, cmd: Command) -> int:
        return (cmd.channel * self.ranks + cmd.rank) * self.banks + cmd.bank


def geometry_for(spec) -> LogGeometry:
    if spec.is_hmc:
        return LogGeometry(spec.vaults, 1, spec.banks_per_vault)
    return LogGeometry(spec.channels, spec.ranks_per_channel, spec.banks_per_rank)


def format_command(cmd: Command) -> str:
    return (f"{cmd.cycle} {cmd.kind} ch={cmd.channel} ra={cmd.rank} bg={cmd.bank_group} "
            f"ba={cmd.bank} row={cmd.row} col={cmd.column} req={cmd.req_id}")


def write_command_log(path_or_fh, commands, header: dict | None = None):
    own = isinstance(path_or_fh, (str, bytes)) or hasattr(path_or_fh, "__fspath__")
    fh = open(path_or_fh, "w") if own else path_or_fh
    try:
        if header:
            fh.write("# " + " ".join(f"{k}={v}" for k, v in header.items()) + "\n")
        for cmd in commands:
            fh.write(format_command(cmd) + "\n")
    finally:
        if own:
            fh.close()


def parse_command(line: str, line_no=None) -> Command:
    parts = line.split()
    if len(parts) != 9:
        raise TraceParseError("command log line needs 9 fields", line_no, line.strip())
    try:
        cycle = int(parts[0])
        vals = []
        for key, tok in zip(_KEYS, parts[2:]):
            k, _, v = tok.partition("=")
            if k != key:
                raise ValueError(tok)
            vals.append(int(v))
    except ValueError as exc:
        raise TraceParseError("bad command log field", line_no, str(exc)) from None
    kind = parts[1]
    if kind not in (ACT, PRE, RD, WR, REF):
        raise TraceParseError("unknown command kind", line_no, kind)
    return Command(cycle, kind, *vals)


def read_command_log(path_or_fh):
    """Returns (header dict, list of Commands)."""
    own = not hasattr(path_or_fh, "read")
    fh = open(path_or_fh) if own else path_or_fh
    header, cmds = {}, []
    try:
        for n, line in enumerate(fh, 1):
            s = line.strip()
            if not s:
                continue
            if s.startswith("#"):
                for tok in s[1:].split():
                    k, sep, v = tok.partition("=")
                    if sep:
                        header[k] = v
                continue
            cmds.append(parse_command(s, n))
    finally:
        if own:
            fh.close()
    return header, cmds


# ---------------------------------------------------------------------------
# timing auditor

def audit_commands(commands, timing: TimingSet, geom: LogGeometry, groups: int = 1) -> list[str]:
    """Replay the log against the timing rules; returns violation messages."""
    t = timing
    errors = []
    open_row = {}
    last = defaultdict(dict)  # bank id -> kind -> cycle
    wr_data_end = {}
    unit_last = {}
    unit_cas = {}
    unit_group_cas = {}
    bus_end = {}
    rank_acts = defaultdict(lambda: deque(maxlen=5))
    rank_wr_end = {}
    rank_ref = {}

    def bad(cmd, msg):
        errors.append(f"cycle {cmd.cycle} {cmd.kind} ch={cmd.channel} ra={cmd.rank} "
                      f"ba={cmd.bank}: {msg}")

    for cmd in sorted(commands, key=lambda c: c.cycle):
        c = cmd.cycle
        u = cmd.channel
        if unit_last.get(u) == c:
            bad(cmd, "second command on the unit in one cycle")
        unit_last[u] = c
        rk = (u, cmd.rank)
        if cmd.kind == REF:
            for b in range(geom.banks):
                gid = (u * geom.ranks + cmd.rank) * geom.banks + b
                if open_row.get(gid) is not None:
                    bad(cmd, f"refresh with bank {b} open")
                p = last[gid].get(PRE)
                if p is not None and c < p + t.RP:
                    bad(cmd, "refresh before tRP")
            rank_ref[rk] = c
            continue
        gid = geom.bank_id(cmd)
        row = open_row.get(gid)
        hist = last[gid]
        if cmd.kind == ACT:
            if row is not None:
                bad(cmd, "activate with a row already open")
            if PRE in hist and c < hist[PRE] + t.RP:
                bad(cmd, "tRP violated")
            if rk in rank_ref and c < rank_ref[rk] + t.RFC:
                bad(cmd, "tRFC violated")
            acts = rank_acts[rk]
            if t.RRD and acts and c < acts[-1] + t.RRD:
                bad(cmd, "tRRD violated")
            if t.FAW and len(acts) >= 4 and c < acts[-4] + t.FAW:
                bad(cmd, "tFAW violated")
            acts.append(c)
            open_row[gid] = cmd.row
            hist[ACT] = c
        elif cmd.kind == PRE:
            if row is None:
                bad(cmd, "precharge of a closed bank")
            if ACT in hist and c < hist[ACT] + t.RAS:
                bad(cmd, "tRAS violated")
            if RD in hist and c < hist[RD] + t.RTP:
                bad(cmd, "tRTP violated")
            if gid in wr_data_end and c < wr_data_end[gid] + t.WR:
                bad(cmd, "write recovery violated")
            open_row[gid] = None
            hist[PRE] = c
        else:
            if row != cmd.row:
                bad(cmd, f"column command to row {cmd.row} while row {row} is open")
            if ACT in hist and c < hist[ACT] + t.RCD:
                bad(cmd, "tRCD violated")
            if u in unit_cas and c < unit_cas[u] + t.CCD_S:
                bad(cmd, "tCCD_S violated")
            gk = (u, cmd.rank, cmd.bank_group)
            if gk in unit_group_cas and c < unit_group_cas[gk] + t.CCD_L:
                bad(cmd, "tCCD_L violated")
            unit_cas[u] = c
            unit_group_cas[gk] = c
            lat = t.CL if cmd.kind == RD else t.CWL
            start, end = c + lat, c + lat + t.BL
            if start < bus_end.get(u, 0):
                bad(cmd, "data bus overlap")
            bus_end[u] = max(end, bus_end.get(u, 0))
            if cmd.kind == RD:
                if t.WTR and rk in rank_wr_end and c < rank_wr_end[rk] + t.WTR:
                    bad(cmd, "tWTR violated")
            else:
                wr_data_end[gid] = end
                rank_wr_end[rk] = max(end, rank_wr_end.get(rk, 0))
            hist[cmd.kind] = c
    return errors


def audit_log(path, spec) -> list[str]:
    _, cmds = read_command_log(path)
    return audit_commands(cmds, derive_timings(spec), geometry_for(spec))


# ---------------------------------------------------------------------------
# brute-force oracles

def occupancy(kind: str, t: TimingSet) -> int:
    return {ACT: t.RCD, PRE: t.RP, RD: t.CL + t.BL, WR: t.CWL + t.BL}.get(kind, 0)


def brute_force_bpu(commands, timing: TimingSet, geom: LogGeometry, since: int = 0) -> float:
    """BPU rebuilt from per-bank, per-cycle busy flags."""
    per_bank = defaultdict(list)
    horizon = 0
    for cmd in commands:
        if cmd.kind == REF or cmd.cycle < since:
            continue
        end = cmd.cycle + occupancy(cmd.kind, timing)
        per_bank[geom.bank_id(cmd)].append((cmd.cycle, end))
        horizon = max(horizon, end)
    if not per_bank:
        return 0.0
    n = horizon - since
    any_busy = np.zeros(n, dtype=bool)
    busy_sum = 0
    for spans in per_bank.values():
        busy = np.zeros(n, dtype=bool)
        for s, e in spans:
            busy[s - since:e - since] = True
        busy_sum += int(busy.sum())
        any_busy |= busy
    active = int(any_busy.sum())
    return busy_sum / active if active else 0.0


def brute_force_locality(commands) -> LocalityBreakdown:
    """Class of each request from the first command issued on its behalf."""
    first = {}
    for cmd in sorted(commands, key=lambda c: c.cycle):
        if cmd.req_id >= 0 and cmd.req_id not in first:
            first[cmd.req_id] = cmd.kind
    hits = sum(k in (RD, WR) for k in first.values())
    misses = sum(k == ACT for k in first.values())
    conflicts = sum(k == PRE for k in first.values())
    return LocalityBreakdown(hits, misses, conflicts)
