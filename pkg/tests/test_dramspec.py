import math
from dataclasses import replace
from decimal import Decimal

import pytest

from dramscope.dramspec import (BUILTIN_NAMES, DramTypeSpec, bandwidth_matches_table,
                                builtin_spec, derive_timings, load_spec_file,
                                peak_bandwidth, resolve_spec)
from dramscope.errors import ConfigError

# Frozen from the published DRAM type table:
# rate, clock, GB/s, channels, ranks, banks, width, row bytes, hit, miss, conflict
TABLE = {
    "DDR3": (2133, 1067, 68.3, 4, 1, 8, 64, 8192, "15.0", "26.3", "37.5"),
    "DDR4": (3200, 1600, 102.4, 4, 1, 16, 64, 8192, "16.7", "30.0", "43.3"),
    "GDDR5": (7000, 1750, 224.0, 4, 1, 16, 64, 8192, "13.1", "25.1", "37.1"),
    "HBM": (1000, 500, 128.0, 8, 1, 16, 128, 2048, "18.0", "32.0", "46.0"),
    "HMC": (2500, 1250, 320.0, 1, 1, 256, 32, 256, "16.8", "30.4", "44.0"),
    "LPDDR3": (2133, 1067, 68.3, 4, 1, 8, 64, 8192, "21.6", "40.3", "59.1"),
    "LPDDR4": (3200, 1600, 51.2, 4, 1, 16, 64, 4096, "26.9", "45.0", "61.9"),
    "WideIO": (266, 266, 17.0, 4, 1, 4, 128, 2048, "30.1", "38.9", "67.7"),
    "WideIO2": (1067, 533, 34.1, 4, 2, 8, 64, 4096, "22.5", "41.3", "60.0"),
}


@pytest.mark.parametrize("name", list(TABLE))
def test_builtin_matches_table(name):
    s = builtin_spec(name)
    rate, clk, bw, ch, ra, ba, width, row, hit, miss, conf = TABLE[name]
    assert (s.data_rate_mtps, s.clock_mhz, s.max_bandwidth_gbps) == (rate, clk, bw)
    assert (s.channels, s.ranks_per_channel, s.banks_per_rank) == (ch, ra, ba)
    assert (s.channel_width_bits, s.row_bytes) == (width, row)
    assert (s.hit_ns, s.miss_ns, s.conflict_min_ns) == (float(hit), float(miss), float(conf))
    assert s.capacity_bytes == 4 << 30
    assert s.queue_depth_read == s.queue_depth_write == 32


def test_topology_extras():
    assert builtin_spec("DDR4").bank_groups_per_rank == 4
    assert builtin_spec("GDDR5").bank_groups_per_rank == 4
    hmc = builtin_spec("HMC")
    assert hmc.vaults == 32 and hmc.banks_per_vault == 8
    assert builtin_spec("DDR3").bank_groups_per_rank == 1 and builtin_spec("DDR3").vaults == 0


def test_builtin_lookup_errors_and_case():
    assert builtin_spec("wideio2").name == "WideIO2"
    with pytest.raises(ConfigError):
        builtin_spec("DDR9")


@pytest.mark.parametrize("name", list(TABLE))
def test_spec_invariants(name):
    s = builtin_spec(name).validate()
    assert s.hit_ns < s.miss_ns < s.conflict_min_ns
    assert s.banks_per_rank % s.bank_groups_per_rank == 0


def _oracle_ns(name):
    hit, miss, conf = (Decimal(x) for x in TABLE[name][8:])
    return hit, miss - hit, conf - miss


@pytest.mark.parametrize("name", list(TABLE))
def test_derived_ns_and_identity(name):
    t = derive_timings(builtin_spec(name))
    cas, rcd, rp = _oracle_ns(name)
    assert Decimal(str(t.tCAS_ns)) == cas
    assert Decimal(str(t.tRCD_ns)) == rcd
    assert Decimal(str(t.tRP_ns)) == rp
    assert cas + rcd + rp == Decimal(TABLE[name][10])
    assert t.tCAS_ns > 0 and t.tRCD_ns > 0 and t.tRP_ns > 0


def test_ddr3_ddr4_examples():
    d3 = derive_timings(builtin_spec("DDR3"))
    assert d3.tRCD_ns == pytest.approx(11.3) and d3.tRP_ns == pytest.approx(11.2)
    d4 = derive_timings(builtin_spec("DDR4"))
    assert d4.tRCD_ns == pytest.approx(13.3) and d4.tRP_ns == pytest.approx(13.3)


def test_ddr3_burst():
    # 64 B over a 64-bit bus is 8 beats at 2133 MT/s
    assert derive_timings(builtin_spec("DDR3")).burst_ns == pytest.approx(8 / 2133e6 * 1e9)
    assert derive_timings(builtin_spec("DDR3")).burst_ns == pytest.approx(3.75, abs=0.01)


@pytest.mark.parametrize("name", list(TABLE))
def test_clock_forms_within_one_clock(name):
    s = builtin_spec(name)
    t = derive_timings(s)
    tck = 1e3 / s.clock_mhz
    for clocks, ns in ((t.CL, s.hit_ns), (t.CL + t.RCD, s.miss_ns),
                       (t.CL + t.RCD + t.RP, s.conflict_min_ns)):
        got = clocks * t.tck_ps / 1000
        assert ns - 1e-9 <= got < ns + tck
    assert t.CL > 0 and t.RCD > 0 and t.RP > 0


def test_bank_group_ccd():
    t = derive_timings(builtin_spec("DDR4"))
    assert t.CCD_L == 2 * t.CCD_S
    assert t.tCCD_same_group_ns == pytest.approx(2 * t.tCCD_other_group_ns)
    assert t.tCCD_other_group_ns == pytest.approx(t.burst_ns)
    d3 = derive_timings(builtin_spec("DDR3"))
    assert d3.CCD_L == d3.CCD_S and d3.tCCD_same_group_ns is None


def test_default_ras_is_minimal_window():
    t = derive_timings(builtin_spec("DDR3"))
    assert t.RAS == t.RCD + t.CL + t.BL
    assert (t.RRD, t.FAW, t.WR, t.WTR, t.REFI, t.RFC) == (0,) * 6


@pytest.mark.parametrize("name, expected", [("GDDR5", 224.0), ("HBM", 128.0), ("WideIO", 17.0),
                                            ("HMC", 320.0)])
def test_peak_bandwidth_examples(name, expected):
    # table figures carry three significant digits
    assert _sig3(peak_bandwidth(builtin_spec(name))) == expected


def _sig3(x):
    return float(f"{x:.3g}")


@pytest.mark.parametrize("name", [n for n in TABLE if n != "HMC"])
def test_bandwidth_table_reconstruction(name):
    s = builtin_spec(name)
    assert bandwidth_matches_table(s)
    assert _sig3(peak_bandwidth(s)) == _sig3(TABLE[name][2])


def test_lpddr4_uses_double_bursts():
    s = builtin_spec("LPDDR4")
    raw = s.data_rate_mtps * s.channel_width_bits / 8 * s.channels / 1000
    assert raw == pytest.approx(102.4)
    assert s.burst_multiplier == 2
    assert peak_bandwidth(s) == pytest.approx(51.2)


def test_wideio_asymmetry_kept():
    t = derive_timings(builtin_spec("WideIO"))
    assert t.tRP_ns == pytest.approx(28.8) and t.tRCD_ns == pytest.approx(8.8)


def test_validate_rejects_bad_latencies():
    with pytest.raises(ConfigError):
        replace(builtin_spec("DDR3"), miss_ns=10.0).validate()
    with pytest.raises(ConfigError):
        replace(builtin_spec("DDR3"), bank_groups_per_rank=3).validate()


def test_spec_file_override(tmp_path):
    p = tmp_path / "specs.ini"
    p.write_text("[DDR3-fast]\nbase = DDR3\nhit_ns = 12.0\ntRRD_ns = 6.0\n\n"
                 "[Toy]\nname = Toy\ndata_rate_mtps = 1600\nclock_mhz = 800\n"
                 "max_bandwidth_gbps = 12.8\nchannels = 1\nranks_per_channel = 1\n"
                 "banks_per_rank = 8\nchannel_width_bits = 64\nrow_bytes = 8192\n"
                 "hit_ns = 13.75\nmiss_ns = 27.5\nconflict_min_ns = 41.25\n")
    specs = load_spec_file(p)
    fast = specs["DDR3-fast"]
    assert fast.hit_ns == 12.0 and fast.tRRD_ns == 6.0 and fast.channels == 4
    assert derive_timings(fast).RRD == math.ceil(6000 / fast.tck_ps)
    assert resolve_spec("Toy", p).banks_per_rank == 8


def test_spec_file_errors(tmp_path):
    p = tmp_path / "bad.ini"
    p.write_text("[X]\nbase = DDR3\nwarp_factor = 9\n")
    with pytest.raises(ConfigError):
        load_spec_file(p)
    with pytest.raises(ConfigError):
        load_spec_file(tmp_path / "missing.ini")


def test_spec_dir_env(tmp_path, monkeypatch):
    (tmp_path / "Mine.ini").write_text("[Mine]\nbase = DDR4\nhit_ns = 15.0\n")
    monkeypatch.setenv("DRAMSCOPE_SPEC_DIR", str(tmp_path))
    assert resolve_spec("Mine").hit_ns == 15.0
    with pytest.raises(ConfigError):
        resolve_spec("Nope")


def test_all_builtins_present():
    assert set(BUILTIN_NAMES) == set(TABLE)
