"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``CRITERION n PASS|FAIL`` line with the measured
values.  The trend experiments are run once per session (with command
logs) and shared between the criteria that inspect them.
"""
import random
from dataclasses import replace
from decimal import Decimal

import pytest

from conftest import isolated_latency_ns
from dramscope.audit import (audit_commands, brute_force_bpu, brute_force_locality,
                             geometry_for)
from dramscope.controller import RD, ChannelController, MemoryRequest
from dramscope.dramspec import BUILTIN_NAMES, builtin_spec, derive_timings, peak_bandwidth
from dramscope.energy import builtin_energy_params, energy_from_counts
from dramscope.harness import (ExperimentConfig, Workload, run_bundle, run_network,
                               run_single)
from dramscope.report import emit_report
from dramscope.trace import SyntheticPattern

PUBLISHED = {  # hit, miss, minimum conflict (ns); maximum bandwidth (GB/s)
    "DDR3": ("15.0", "26.3", "37.5", 68.3), "DDR4": ("16.7", "30.0", "43.3", 102.4),
    "GDDR5": ("13.1", "25.1", "37.1", 224.0), "HBM": ("18.0", "32.0", "46.0", 128.0),
    "HMC": ("16.8", "30.4", "44.0", 320.0), "LPDDR3": ("21.6", "40.3", "59.1", 68.3),
    "LPDDR4": ("26.9", "45.0", "61.9", 51.2), "WideIO": ("30.1", "38.9", "67.7", 17.0),
    "WideIO2": ("22.5", "41.3", "60.0", 34.1),
}


@pytest.fixture
def verdict(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {n} {'PASS' if ok else 'FAIL'}: {detail}")
        assert ok, detail
    return emit


# -- experiment definitions ----------------------------------------------------------

def locality_cfg(dram):
    w = Workload(pattern=SyntheticPattern("stream", 1 << 20, 5.0), instructions=1_000_000)
    return ExperimentConfig(dram=dram, workloads=[w], warmup_instructions=0,
                            translation_mode="identity", command_log=True)


def intensity_cfg(dram):
    ws = [Workload(pattern=SyntheticPattern("random", 256 << 20, 100.0, seed=s),
                   instructions=100_000) for s in range(4)]
    return ExperimentConfig(dram=dram, mode="bundle", workloads=ws, warmup_instructions=0,
                            command_log=True)


def bursty_cfg(dram):
    w = Workload(pattern=SyntheticPattern("bursty", 256 << 20, 400.0, burst_length=128,
                                          inter_burst_gap=200, write_fraction=1.0),
                 instructions=200_000)
    return ExperimentConfig(dram=dram, mode="network", workloads=[w], max_inflight=50,
                            command_log=True)


def saturation_cfg(dram):
    w = Workload(pattern=SyntheticPattern("stream", 64 << 20, 1000.0), instructions=50_000)
    return ExperimentConfig(dram=dram, mode="network", workloads=[w], max_inflight=128,
                            command_log=True)


def energy_cfg(dram):
    w = Workload(pattern=SyntheticPattern("random", 64 << 20, 2.0), instructions=300_000)
    return ExperimentConfig(dram=dram, workloads=[w], warmup_instructions=0)


def _execute(cfg):
    if cfg.mode == "bundle":
        rep, run = run_bundle(cfg, _return_run=True)
        return rep, run.mem
    if cfg.mode == "network":
        return run_network(cfg, _return_run=True)
    rep, run = run_single(cfg, _return_run=True)
    return rep, run.mem


EXPERIMENTS = {
    **{("locality", d): locality_cfg for d in ("DDR3", "HMC")},
    **{("intensity", d): intensity_cfg for d in ("DDR3", "HMC")},
    **{("bursty", d): bursty_cfg for d in ("DDR3", "HMC")},
    **{("saturation", d): saturation_cfg for d in ("DDR3", "GDDR5")},
    **{("energy", d): energy_cfg for d in ("LPDDR4", "LPDDR3", "DDR3", "DDR4", "GDDR5")},
}


class _Results(dict):
    def __missing__(self, key):
        rep, mem = _execute(EXPERIMENTS[key](key[1]))
        self[key] = (rep, mem)
        return self[key]


@pytest.fixture(scope="session")
def results():
    return _Results()


# -- criteria ------------------------------------------------------------------------------

def test_criterion_1_table_latencies(verdict):
    bad, worst = [], 0.0
    for name in BUILTIN_NAMES:
        tck = builtin_spec(name).tck_ps / 1000
        for kind, target in zip(("hit", "miss", "conflict"), PUBLISHED[name][:3]):
            got = isolated_latency_ns(name, kind)
            err = got - float(target)
            worst = max(worst, err / tck)
            if not 0 <= err + 1e-9 < tck:
                bad.append(f"{name} {kind} {got:.3f} vs {target}")
    verdict(1, not bad, f"27 isolated reads, worst error {worst:.2f} clocks" +
            (f"; off: {bad}" if bad else ""))


def test_criterion_2_peak_and_saturation(results, verdict):
    def sig3(x):
        return float(f"{x:.3g}")
    off = [n for n in BUILTIN_NAMES if n != "HMC"
           and sig3(peak_bandwidth(builtin_spec(n))) != sig3(PUBLISHED[n][3])]
    util = {d: results["saturation", d][0].dram.utilization for d in ("DDR3", "GDDR5")}
    ok = not off and all(u >= 0.85 for u in util.values())
    verdict(2, ok, f"peak mismatches {off}; sustained/peak " +
            ", ".join(f"{d} {u:.3f}" for d, u in util.items()))


def test_criterion_3_timing_identity(verdict):
    bad = []
    for name in BUILTIN_NAMES:
        t = derive_timings(builtin_spec(name))
        total = sum(Decimal(str(x)) for x in (t.tRP_ns, t.tRCD_ns, t.tCAS_ns))
        if total != Decimal(PUBLISHED[name][2]):
            bad.append(name)
    verdict(3, not bad, f"tRP + tRCD + tCAS == conflict for {9 - len(bad)}/9 types")


def _random_network_cfg(i):
    rng = random.Random(1000 + i)
    dram = rng.choice(BUILTIN_NAMES)
    kind = rng.choice(["random", "stream", "bursty", "pointer-chase"])
    rpki = rng.choice([50.0, 200.0, 500.0])
    pattern = SyntheticPattern(kind, rng.choice([1 << 20, 1 << 24, 1 << 28]), rpki,
                               burst_length=16, inter_burst_gap=10, seed=i,
                               write_fraction=rng.choice([0.0, 0.3]),
                               stride_bytes=rng.choice([64, 128, 4096]))
    n = rng.randrange(5_000, 30_000)
    return ExperimentConfig(dram=dram, mode="network", max_inflight=rng.choice([4, 16, 64]),
                            workloads=[Workload(pattern=pattern, instructions=n)],
                            packet_lines=rng.choice([1, 4]), command_log=True, seed=i)


def test_criterion_4_metric_oracles(verdict):
    mismatches, total_req = [], 0
    for i in range(50):
        cfg = _random_network_cfg(i)
        rep, mem = run_network(cfg, _return_run=True)
        spec = mem.spec
        log = mem.command_log()
        total_req += rep.dram.requests
        assert rep.dram.requests <= 100_000
        bpu = brute_force_bpu(log, mem.timing, geometry_for(spec))
        loc = brute_force_locality(log)
        mine = rep.dram.locality
        if bpu != rep.dram.bpu or (loc.hits, loc.misses, loc.conflicts) != (
                mine.hits, mine.misses, mine.conflicts):
            mismatches.append(f"trace {i} ({spec.name})")
    verdict(4, not mismatches, f"50 traces, {total_req} requests, exact BPU and locality "
            f"matches: {50 - len(mismatches)}/50")


def _fr_fcfs_adversarial():
    t = derive_timings(builtin_spec("DDR3"))
    ids = iter(range(100))

    def mk(bank, row, col=0):
        return MemoryRequest(next(ids), 0, False, 0, bank=bank, row=row, column=col)

    def settle(c, start):
        cyc = start
        while c.pending:
            c.tick(cyc)
            cyc += 1
        return cyc + 100

    c = ChannelController(0, t, 1, 8, 1)
    c.enqueue(mk(0, 0), 0)
    now = settle(c, 0)
    old_conflict, young_hit = mk(0, 1), mk(0, 0, 3)
    c.enqueue(old_conflict, now)
    c.enqueue(young_hit, now + 1)
    first = next(x for x in (c.tick(k) for k in range(now + 1, now + 500)) if x)
    hit_first = first.kind == RD and first.req_id == young_hit.id

    c = ChannelController(0, t, 1, 8, 1)
    c.enqueue(mk(0, 0), 0)
    c.enqueue(mk(1, 0), 0)
    now = settle(c, 0)
    older, younger = mk(1, 0, 1), mk(0, 0, 1)
    c.enqueue(older, now)
    c.enqueue(younger, now + 1)
    order = []
    k = now + 1
    while c.pending:
        x = c.tick(k)
        if x:
            order.append(x.req_id)
        k += 1
    return hit_first, order == [older.id, younger.id]


def test_criterion_5_scheduler_properties(results, verdict):
    violations = {}
    for key in [k for k in EXPERIMENTS if k[0] in ("locality", "intensity", "bursty", "saturation")]:
        _, mem = results[key]
        errs = audit_commands(mem.command_log(), mem.timing, geometry_for(mem.spec))
        violations[f"{key[0]}/{key[1]}"] = len(errs)
    hit_first, fcfs = _fr_fcfs_adversarial()
    commands = sum(len(results[k][1].command_log()) for k in results if k[0] != "energy")
    ok = not any(violations.values()) and hit_first and fcfs
    verdict(5, ok, f"{commands} audited commands, violations {sum(violations.values())}; "
            f"hit-first {hit_first}, FCFS tie-break {fcfs}")


def test_criterion_6_locality_favours_ddr3(results, verdict):
    d3, hmc = results["locality", "DDR3"][0], results["locality", "HMC"][0]
    ipc3, ipch = d3.cores[0].ipc, hmc.cores[0].ipc
    gap = (ipc3 - ipch) / ipc3
    h3, hh = d3.dram.locality.hit_fraction, hmc.dram.locality.hit_fraction
    ok = gap >= 0.02 and h3 >= 0.90 and hh <= 0.05
    verdict(6, ok, f"IPC DDR3 {ipc3:.3f} vs HMC {ipch:.3f} (gap {gap:.1%}); "
            f"hit fraction DDR3 {h3:.3f} vs HMC {hh:.3f}")


def test_criterion_7_intensity_favours_hmc(results, verdict):
    d3, hmc = results["intensity", "DDR3"][0], results["intensity", "HMC"][0]
    ratio = hmc.dram.bpu / d3.dram.bpu
    ok = hmc.weighted_speedup > d3.weighted_speedup and ratio >= 1.5
    verdict(7, ok, f"weighted speedup DDR3 {d3.weighted_speedup:.3f} vs HMC "
            f"{hmc.weighted_speedup:.3f}; BPU DDR3 {d3.dram.bpu:.2f} vs HMC "
            f"{hmc.dram.bpu:.2f} (ratio {ratio:.2f})")


def test_criterion_8_bursty_queuing(results, verdict):
    d3, hmc = results["bursty", "DDR3"][0].dram, results["bursty", "HMC"][0].dram
    ok = hmc.queuing_fraction < d3.queuing_fraction and d3.queuing_fraction > 0.5
    verdict(8, ok, f"queuing fraction DDR3 {d3.queuing_fraction:.3f} vs HMC "
            f"{hmc.queuing_fraction:.3f}; sustained GB/s DDR3 "
            f"{d3.sustained_bandwidth_gbps:.1f} vs HMC {hmc.sustained_bandwidth_gbps:.1f}")


def test_criterion_9_energy(results, verdict):
    totals, problems = {}, []
    for name in ("LPDDR4", "LPDDR3", "DDR3", "DDR4", "GDDR5"):
        rep, mem = results["energy", name]
        e = rep.energy
        parts = e["activate_precharge_j"] + e["read_write_j"] + e["standby_j"] + e["refresh_j"]
        if parts != e["total_j"] or abs(sum(e["fractions"].values()) - 1) > 1e-12:
            problems.append(f"{name} conservation")
        counts = dict(mem.stats.commands)
        dur = rep.dram.duration_ns * 1e-9
        params = builtin_energy_params(name)
        spec = mem.spec
        f = mem.stats.tracker.rank_active_fraction(round(dur * 1e12) // mem.tck)
        one = energy_from_counts(counts, dur, params, spec.total_ranks, f)
        two = energy_from_counts(counts, 2 * dur, params, spec.total_ranks, f)
        if two.standby_j != pytest.approx(2 * one.standby_j, rel=1e-12) or \
                two.read_write_j != one.read_write_j:
            problems.append(f"{name} linearity")
        totals[name] = e["total_j"]
    order = ["LPDDR4", "LPDDR3", "DDR3", "GDDR5"]
    ordered = all(totals[a] < totals[b] for a, b in zip(order, order[1:]))
    verdict(9, ordered and not problems,
            "totals (J) " + ", ".join(f"{k} {v:.3g}" for k, v in totals.items()) +
            (f"; problems {problems}" if problems else ""))


def test_criterion_10_determinism(results, verdict):
    differing = []
    for key, make in EXPERIMENTS.items():
        first = emit_report(results[key][0])
        again, _ = _execute(make(key[1]))
        if emit_report(again) != first:
            differing.append(f"{key[0]}/{key[1]}")
    a = run_network(_random_network_cfg(7))
    b = run_network(_random_network_cfg(7))
    if emit_report(a) != emit_report(b):
        differing.append("oracle trace 7")
    n = len(EXPERIMENTS) + 1
    verdict(10, not differing, f"{n - len(differing)}/{n} experiments byte-identical on rerun")
