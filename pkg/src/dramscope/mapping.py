"""Physical address to DRAM coordinate mapping.

Fields are bit slices taken low-to-high above the 6-bit line offset:

* ``cacheline_interleave``: channel, bank, rank, column, row
* ``hmc_default``: vault, bank, column, row
* ``hmc_alt``: vault, column, bank, row

For bank-group types the bank group is the low bits of the bank number,
so consecutive lines of a channel alternate groups.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

from .dramspec import LINE_BYTES, DramTypeSpec, log2
from .errors import ConfigError

MODES = ("cacheline_interleave", "hmc_default", "hmc_alt")

_LAYOUTS = {
    "cacheline_interleave": ("channel", "bank", "rank", "column", "row"),
    "hmc_default": ("vault", "bank", "column", "row"),
    "hmc_alt": ("vault", "column", "bank", "row"),
}


@dataclass(frozen=True, slots=True)
class DramCoordinates:
    channel: int
    rank: int
    bank_group: int
    bank: int
    row: int
    column: int
    vault: int = 0


def default_mode(spec: DramTypeSpec) -> str:
    return "hmc_default" if spec.is_hmc else "cacheline_interleave"


class AddressMapper:
    """Precomputed bit-slice decoder for one (spec, mode) pair."""

    def __init__(self, spec: DramTypeSpec, mode: str):
        if mode not in _LAYOUTS:
            raise ConfigError(f"unknown interleave mode {mode!r}")
        if spec.is_hmc != mode.startswith("hmc"):
            raise ConfigError(f"interleave mode {mode} is not legal for {spec.name}")
        self.spec = spec
        self.mode = mode
        self.capacity = spec.capacity_bytes
        self.groups = spec.bank_groups_per_rank
        cols = spec.row_bytes // LINE_BYTES
        if spec.is_hmc:
            banks = spec.banks_per_vault
            sizes = {"vault": spec.vaults, "bank": banks, "column": cols}
            units = spec.vaults * banks
        else:
            banks = spec.banks_per_rank
            sizes = {"channel": spec.channels, "bank": banks,
                     "rank": spec.ranks_per_channel, "column": cols}
            units = spec.channels * spec.ranks_per_channel * banks
        sizes["row"] = spec.capacity_bytes // (units * spec.row_bytes)
        self.sizes = sizes
        self.slices = []
        shift = log2(LINE_BYTES)
        for name in _LAYOUTS[mode]:
            bits = log2(sizes[name])
            self.slices.append((name, shift, (1 << bits) - 1))
            shift += bits
        if (1 << shift) != spec.capacity_bytes:
            raise ConfigError(f"{spec.name}: address fields do not cover the capacity")
        self.banks_per_unit = banks
        self.ranks = 1 if spec.is_hmc else spec.ranks_per_channel

    def fields(self, paddr: int) -> dict:
        if not 0 <= paddr < self.capacity:
            raise ValueError(f"physical address {paddr:#x} outside {self.capacity:#x} capacity")
        return {name: (paddr >> shift) & mask for name, shift, mask in self.slices}

    def decode(self, paddr: int) -> DramCoordinates:
        f = self.fields(paddr)
        bank = f["bank"]
        return DramCoordinates(
            channel=f.get("channel", 0), rank=f.get("rank", 0),
            bank_group=bank % self.groups, bank=bank,
            row=f["row"], column=f["column"], vault=f.get("vault", 0))

    def encode(self, coords: DramCoordinates, offset: int = 0) -> int:
        values = {"channel": coords.channel, "rank": coords.rank, "bank": coords.bank,
                  "row": coords.row, "column": coords.column, "vault": coords.vault}
        addr = offset
        for name, shift, mask in self.slices:
            v = values[name]
            if not 0 <= v <= mask:
                raise ValueError(f"{name}={v} out of range")
            addr |= v << shift
        return addr

    def locate(self, paddr: int):
        """Controller-level view: (unit, rank, bank_group, bank_index, row, column).

        ``unit`` is the channel (or the vault for HMC) and ``bank_index`` the
        flat bank number inside that unit (rank-major).
        """
        f = self.fields(paddr)
        unit = f["vault"] if self.spec.is_hmc else f["channel"]
        rank = f.get("rank", 0)
        bank = f["bank"]
        return (unit, rank, bank % self.groups, rank * self.banks_per_unit + bank,
                f["row"], f["column"])


@lru_cache(maxsize=None)
def mapper_for(spec: DramTypeSpec, mode: str) -> AddressMapper:
    return AddressMapper(spec, mode)


def map_address(paddr: int, spec: DramTypeSpec, mode: str | None = None) -> DramCoordinates:
    return mapper_for(spec, mode or default_mode(spec)).decode(paddr)


def unmap_address(coords: DramCoordinates, spec: DramTypeSpec, mode: str | None = None) -> int:
    return mapper_for(spec, mode or default_mode(spec)).encode(coords)
