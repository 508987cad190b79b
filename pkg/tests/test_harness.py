import json

import pytest

from dramscope import harness
from dramscope.errors import ConfigError
from dramscope.harness import (ExperimentConfig, Workload, run_bundle, run_experiment,
                               run_multithreaded, run_network, run_single)
from dramscope.report import SimReport, config_hash, emit_report, from_json
from dramscope.trace import SyntheticPattern, TraceRecord, write_text_trace


def pat(kind="random", rpki=20, seed=0, footprint=1 << 24, **kw):
    return SyntheticPattern(kind, footprint, rpki, seed=seed, **kw)


def wl(n=20000, **kw):
    return Workload(pattern=pat(**kw), instructions=n)


def trace_file(tmp_path, records, name="t.trace"):
    p = tmp_path / name
    with open(p, "w") as fh:
        write_text_trace(records, fh)
    return str(p)


def cfg(**kw):
    kw.setdefault("warmup_instructions", 0)
    return ExperimentConfig(**kw)


# -- single --------------------------------------------------------------------------

def test_bubble_trace_ipc_four(tmp_path):
    rep = run_single(cfg(workloads=[Workload(path=trace_file(tmp_path, [TraceRecord(400)]))]))
    assert rep.cores[0].ipc == 4.0 and rep.cores[0].cycles == 100
    assert rep.dram.requests == 0 and rep.dram.bpu == 0.0


def test_single_read_is_one_row_miss(tmp_path):
    path = trace_file(tmp_path, [TraceRecord(0, read_addr=0x1234)])
    rep = run_single(cfg(workloads=[Workload(path=path)]))
    assert rep.cores[0].llc_misses == 1
    loc = rep.dram.locality
    assert (loc.hits, loc.misses, loc.conflicts) == (0, 1, 0)
    assert 26.3 <= rep.dram.avg_service_ns < 26.3 + 0.9375
    assert rep.dram.avg_queuing_ns == 0.0


def test_single_deterministic():
    c = cfg(workloads=[wl()], seed=5)
    assert emit_report(run_single(c)) == emit_report(run_single(cfg(workloads=[wl()], seed=5)))


def test_seed_changes_translation():
    _, a = run_single(cfg(workloads=[wl()], seed=1), _return_run=True)
    _, b = run_single(cfg(workloads=[wl()], seed=2), _return_run=True)
    ma, mb = a.cores[0].pt.mapping, b.cores[0].pt.mapping
    assert ma.keys() == mb.keys() and ma != mb


def test_warmup_suppresses_early_stats():
    w = Workload(pattern=pat("stream", rpki=50, footprint=1 << 20), instructions=200000)
    cold = run_single(cfg(workloads=[w])).cores[0]
    warm = run_single(cfg(workloads=[w], warmup_instructions=100000)).cores[0]
    # warmup ends on a retire-group boundary
    assert 100000 - 4 < warm.instructions <= 100000
    assert warm.llc_misses < cold.llc_misses


# -- bundle --------------------------------------------------------------------------

def test_identical_bundle_is_symmetric():
    w = wl(10000, rpki=40)
    rep = run_bundle(cfg(mode="bundle", workloads=[w] * 4))
    ipcs = [c.ipc for c in rep.cores]
    assert max(ipcs) / min(ipcs) < 1.25
    assert rep.weighted_speedup <= 4.0
    assert all(c.alone_ipc is not None for c in rep.cores)


def test_short_trace_restarts_and_freezes():
    short, long_ = wl(5000, seed=1, rpki=30), wl(40000, seed=2, rpki=30)
    rep = run_bundle(cfg(mode="bundle", workloads=[short, long_]))
    assert rep.cores[0].passes > 1 and rep.cores[1].passes == 1
    assert rep.cores[0].instructions == 5000 and rep.cores[1].instructions == 40000


def test_frozen_stats_ignore_how_long_others_run():
    short = wl(5000, seed=1, rpki=30)
    a = run_bundle(cfg(mode="bundle", workloads=[short, wl(30000, seed=2, rpki=30)]),
                   solo_runs=False)
    b = run_bundle(cfg(mode="bundle", workloads=[short, wl(60000, seed=2, rpki=30)]),
                   solo_runs=False)
    assert b.cores[0].passes > a.cores[0].passes
    a.cores[0].passes = b.cores[0].passes = 0
    assert a.cores[0] == b.cores[0]


def test_one_program_speedup_is_relative_ipc():
    from dramscope.metrics import weighted_speedup
    w = wl(10000)
    rep = run_bundle(cfg(mode="bundle", workloads=[w, wl(10000, seed=9)]))
    c = rep.cores[0]
    assert weighted_speedup([c.ipc], [c.alone_ipc]) == pytest.approx(c.ipc / c.alone_ipc)


def test_bundle_never_throttles(monkeypatch):
    def boom(*a, **k):
        raise AssertionError("injector used in bundle mode")
    monkeypatch.setattr(harness, "_Injector", boom)
    run_bundle(cfg(mode="bundle", workloads=[wl(3000), wl(3000, seed=3)]), solo_runs=False)


# -- network -------------------------------------------------------------------------

def _net(inflight, dram="DDR3", n=20000):
    w = Workload(pattern=pat("bursty", rpki=200, burst_length=32, inter_burst_gap=100,
                             footprint=1 << 26), instructions=n)
    return cfg(mode="network", dram=dram, max_inflight=inflight, workloads=[w])


def test_network_one_in_flight_has_no_queuing():
    rep = run_network(_net(1))
    assert rep.dram.queuing_fraction == 0.0
    assert rep.dram.requests == 4000


def test_network_more_in_flight_more_bandwidth():
    bw = [run_network(_net(k)).dram.sustained_bandwidth_gbps for k in (5, 50)]
    assert bw[1] >= bw[0]


def test_network_utilisation_bounded():
    d = run_network(_net(64, "GDDR5")).dram
    assert 0 < d.utilization <= 1.0


def test_network_packet_lines():
    c = _net(8)
    c.packet_lines = 4
    assert run_network(c).dram.requests == 4 * 4000


def test_network_bypasses_caches(monkeypatch):
    from dramscope import cpu

    def boom(*a, **k):
        raise AssertionError("cache accessed in network mode")
    monkeypatch.setattr(cpu.CacheHierarchy, "access", boom)
    run_network(_net(4, n=5000))


# -- multithreaded -------------------------------------------------------------------------

def test_multithreaded_independent_bubbles_scale():
    total = 80000
    sets = {n: [Workload(pattern=pat("stream", rpki=1, footprint=1 << 16, seed=i),
                         instructions=total // n) for i in range(n)] for n in (1, 2, 4, 8)}
    rep = run_multithreaded(cfg(mode="multithreaded", thread_sets=sets))
    assert rep.parallel_speedup["1"] == 1.0
    for n in (2, 4, 8):
        s = rep.parallel_speedup[str(n)]
        assert s <= n and s == pytest.approx(n, rel=0.1)


def test_multithreaded_needs_baseline():
    with pytest.raises(ConfigError):
        run_multithreaded(cfg(mode="multithreaded", thread_sets={2: [wl(), wl()]}))
    with pytest.raises(ConfigError):
        cfg(mode="multithreaded", thread_sets={2: [wl()]}).validate()


# -- reports ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def bundle_report():
    return run_bundle(cfg(mode="bundle", workloads=[wl(5000), wl(5000, seed=4)]))


def test_json_round_trip(bundle_report):
    back = from_json(emit_report(bundle_report).decode())
    assert back == bundle_report
    assert isinstance(back, SimReport)


def test_emission_byte_stable(bundle_report):
    assert emit_report(bundle_report) == emit_report(bundle_report)
    assert emit_report(bundle_report, "csv") == emit_report(bundle_report, "csv")
    with pytest.raises(ValueError):
        emit_report(bundle_report, "xml")


def test_csv_one_aggregate_row(bundle_report):
    rows = emit_report(bundle_report, "csv").decode().splitlines()
    kinds = [r.split(",")[0] for r in rows]
    assert kinds == ["row", "core", "core", "aggregate"]


def test_report_carries_config_hash():
    c = cfg(workloads=[wl(3000)])
    rep = run_single(c)
    assert rep.metadata["config_hash"] == config_hash(c.to_dict())
    other = cfg(workloads=[wl(3000)], l3_latency=40)
    assert config_hash(other.validate().to_dict()) != rep.metadata["config_hash"]
    assert {"dram", "seed", "version", "mode"} <= set(rep.metadata)


def test_energy_present_only_with_params():
    assert run_single(cfg(workloads=[wl(3000)])).energy is not None
    assert run_single(cfg(dram="HMC", workloads=[wl(3000)])).energy is None


# -- validation ---------------------------------------------------------------------------

@pytest.mark.parametrize("bad", [
    dict(mode="warp", workloads=[wl()]),
    dict(mode="single", workloads=[]),
    dict(mode="bundle", workloads=[wl()]),
    dict(mode="network", workloads=[wl()]),
    dict(mode="network", workloads=[wl()], max_inflight=0),
    dict(mode="single", workloads=[wl()], translation_mode="odd"),
])
def test_invalid_configs(bad):
    with pytest.raises(ConfigError):
        run_experiment(cfg(**bad))


def test_bad_workloads():
    with pytest.raises(ConfigError):
        Workload()
    with pytest.raises(ConfigError):
        Workload(pattern={"kind": "zigzag", "footprint_bytes": 4096,
                          "requests_per_kilo_instruction": 1})
    with pytest.raises(ConfigError):
        run_single(cfg(dram="DDR7", workloads=[wl()]))


def test_config_round_trips_through_json():
    c = cfg(mode="bundle", workloads=[wl(), wl(seed=3)]).validate()
    d = json.loads(json.dumps(c.to_dict()))
    again = ExperimentConfig(**d).validate()
    assert again.to_dict() == c.to_dict()
