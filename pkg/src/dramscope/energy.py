"""DRAM energy accounting: per-command energies plus background power.

Parameter files are plain ``key = value`` text with units in the key
names.  The shipped files are placeholders (see the ``# note`` line in
each); they preserve the relative ordering between types, not absolute
joules.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from importlib import resources
from pathlib import Path

from .errors import ConfigError

CATEGORIES = ("activate_precharge_j", "read_write_j", "standby_j", "refresh_j")


@dataclass(frozen=True)
class EnergyParams:
    e_activate_nj: float
    e_precharge_nj: float
    e_read_per_line_nj: float
    e_write_per_line_nj: float
    p_standby_mw_per_rank: float
    p_active_standby_mw_per_rank: float
    p_refresh_mw: float = 0.0

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ConfigError(f"energy parameter {f.name} must be non-negative")

    def scaled_commands(self, factor: float) -> "EnergyParams":
        return EnergyParams(self.e_activate_nj * factor, self.e_precharge_nj * factor,
                            self.e_read_per_line_nj * factor, self.e_write_per_line_nj * factor,
                            self.p_standby_mw_per_rank, self.p_active_standby_mw_per_rank,
                            self.p_refresh_mw)


def parse_energy_params(text: str, source="<string>") -> EnergyParams:
    known = {f.name for f in fields(EnergyParams)}
    values = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        key = key.strip()
        if not sep or key not in known:
            raise ConfigError(f"{source}:{n}: bad energy parameter line {raw!r}")
        try:
            values[key] = float(val)
        except ValueError:
            raise ConfigError(f"{source}:{n}: {key} is not a number") from None
    missing = known - set(values) - {"p_refresh_mw"}
    if missing:
        raise ConfigError(f"{source}: missing {', '.join(sorted(missing))}")
    return EnergyParams(**values)


def load_energy_params(path) -> EnergyParams:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read energy parameters {path}: {exc}") from exc
    return parse_energy_params(text, str(path))


def builtin_energy_params(dram_name: str) -> EnergyParams | None:
    """Shipped placeholder parameters, or None for types without public figures."""
    res = resources.files("dramscope") / "data" / "energy" / f"{dram_name.upper()}.params"
    if not res.is_file():
        return None
    return parse_energy_params(res.read_text(), res.name)


@dataclass
class EnergyAccumulator:
    activate_precharge_nj: float = 0.0
    read_write_nj: float = 0.0
    acts: int = 0
    pres: int = 0
    reads: int = 0
    writes: int = 0
    refreshes: int = 0


def account_command(kind: str, params: EnergyParams, acc: EnergyAccumulator) -> EnergyAccumulator:
    if kind == "ACT":
        acc.acts += 1
        acc.activate_precharge_nj += params.e_activate_nj
    elif kind == "PRE":
        acc.pres += 1
        acc.activate_precharge_nj += params.e_precharge_nj
    elif kind == "RD":
        acc.reads += 1
        acc.read_write_nj += params.e_read_per_line_nj
    elif kind == "WR":
        acc.writes += 1
        acc.read_write_nj += params.e_write_per_line_nj
    elif kind == "REF":
        acc.refreshes += 1  # covered by the refresh power term
    else:
        raise ValueError(f"unknown DRAM command kind {kind!r}")
    return acc


def background_energy(wall_seconds: float, rank_count: int, params: EnergyParams,
                      active_fraction: float = 0.0) -> float:
    """Standby energy in joules; ``active_fraction`` of rank-time at active-standby power."""
    if wall_seconds < 0:
        raise ValueError("negative duration")
    f = min(max(active_fraction, 0.0), 1.0)
    mw = params.p_standby_mw_per_rank * (1 - f) + params.p_active_standby_mw_per_rank * f
    return mw * 1e-3 * rank_count * wall_seconds


@dataclass
class EnergyReport:
    activate_precharge_j: float
    read_write_j: float
    standby_j: float
    refresh_j: float
    total_j: float
    normalized_total: float | None = None

    @property
    def fractions(self) -> dict:
        if self.total_j == 0:
            return {c: 0.0 for c in CATEGORIES}
        return {c: getattr(self, c) / self.total_j for c in CATEGORIES}

    def normalized(self, baseline: "EnergyReport") -> dict:
        out = {}
        for c in (*CATEGORIES, "total_j"):
            ours, base = getattr(self, c), getattr(baseline, c)
            out[c] = ours / base if base else (1.0 if ours == base else float("inf"))
        return out

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fractions"] = self.fractions
        return d


def energy_report(commands, duration_s: float, params: EnergyParams, rank_count: int,
                  active_fraction: float = 0.0, refresh_enabled: bool = False,
                  baseline: EnergyReport | None = None, normalize: bool = False) -> EnergyReport:
    """Categorised energy for a command stream (kinds or objects with ``.kind``)."""
    if normalize and baseline is None:
        raise ValueError("normalization requested without a baseline report")
    acc = EnergyAccumulator()
    for cmd in commands:
        account_command(cmd if isinstance(cmd, str) else cmd.kind, params, acc)
    return _report(acc, duration_s, params, rank_count, active_fraction, refresh_enabled,
                   baseline)


def energy_from_counts(counts: dict, duration_s, params, rank_count, active_fraction=0.0,
                       refresh_enabled=False) -> EnergyReport:
    """Same as :func:`energy_report` but from per-kind command counts."""
    per = {"ACT": params.e_activate_nj, "PRE": params.e_precharge_nj,
           "RD": params.e_read_per_line_nj, "WR": params.e_write_per_line_nj, "REF": 0.0}
    acc = EnergyAccumulator()
    for kind, n in counts.items():
        if kind not in per:
            raise ValueError(f"unknown DRAM command kind {kind!r}")
        if kind in ("ACT", "PRE"):
            acc.activate_precharge_nj += n * per[kind]
        elif kind in ("RD", "WR"):
            acc.read_write_nj += n * per[kind]
    acc.acts, acc.pres = counts.get("ACT", 0), counts.get("PRE", 0)
    acc.reads, acc.writes = counts.get("RD", 0), counts.get("WR", 0)
    acc.refreshes = counts.get("REF", 0)
    return _report(acc, duration_s, params, rank_count, active_fraction, refresh_enabled, None)


def _report(acc, duration_s, params, rank_count, active_fraction, refresh_enabled, baseline):
    ap = acc.activate_precharge_nj * 1e-9
    rw = acc.read_write_nj * 1e-9
    standby = background_energy(duration_s, rank_count, params, active_fraction)
    refresh = params.p_refresh_mw * 1e-3 * rank_count * duration_s if refresh_enabled else 0.0
    total = ap + rw + standby + refresh
    rep = EnergyReport(ap, rw, standby, refresh, total)
    if baseline is not None:
        rep.normalized_total = total / baseline.total_j if baseline.total_j else None
    return rep
