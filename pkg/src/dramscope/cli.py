"""Command line entry point: ``dramscope simulate | gen-trace | audit``."""
from __future__ import annotations

import argparse
import json
import logging
import sys

from .audit import audit_log, geometry_for, write_command_log
from .dramspec import resolve_spec
from .errors import ConfigError, TraceError, TraceIOError
from .harness import ExperimentConfig, Workload, run_experiment
from .report import emit_report
from .trace import SyntheticPattern, generate_synthetic, write_binary_trace, write_text_trace

EXIT_OK, EXIT_CONFIG, EXIT_TRACE = 0, 2, 3


def _pattern(text: str) -> SyntheticPattern:
    """``kind:key=value,...`` e.g. ``random:footprint_bytes=1048576,requests_per_kilo_instruction=20``."""
    kind, _, rest = text.partition(":")
    kw = {}
    try:
        for item in filter(None, rest.split(",")):
            k, _, v = item.partition("=")
            floaty = k in ("requests_per_kilo_instruction", "write_fraction")
            kw[k] = float(v) if floaty else int(v, 0)
        kw.setdefault("footprint_bytes", 1 << 20)
        kw.setdefault("requests_per_kilo_instruction", 10.0)
        pattern = SyntheticPattern(kind, **kw)
        pattern.validate()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad synthetic pattern {text!r}: {exc}") from None
    return pattern


def build_parser():
    p = argparse.ArgumentParser(prog="dramscope", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    s = sub.add_parser("simulate", help="run an experiment and emit a report")
    s.add_argument("--dram", default="DDR3", help="builtin DRAM type or section name")
    s.add_argument("--dram-file", help="DRAM spec override file (INI)")
    s.add_argument("--mode", default="single",
                   choices=("single", "bundle", "network", "multithreaded"))
    s.add_argument("--trace", action="append", default=[], help="trace file, one per core")
    s.add_argument("--synthetic", action="append", default=[],
                   help="synthetic pattern kind:key=value,... (one per core)")
    s.add_argument("--instructions", type=int, default=1_000_000,
                   help="length of each synthetic trace")
    s.add_argument("--threads", action="append", default=[],
                   help="multithreaded: N=trace1,trace2,... (repeat per thread count)")
    s.add_argument("--interleave", choices=("cacheline_interleave", "hmc_default", "hmc_alt"))
    s.add_argument("--max-inflight", type=int)
    s.add_argument("--packet-lines", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--warmup", type=int, default=1_000_000)
    s.add_argument("--max-instructions", type=int)
    s.add_argument("--translation", choices=("random", "identity"), default="random")
    s.add_argument("--config", help="JSON file with ExperimentConfig fields")
    s.add_argument("--out", help="report path (.json or .csv); stdout when omitted")
    s.add_argument("--format", choices=("json", "csv"))
    s.add_argument("--command-log", help="write the DRAM command log here")
    s.add_argument("--energy-params", help="energy parameter file")

    g = sub.add_parser("gen-trace", help="write a synthetic trace")
    g.add_argument("pattern", help="kind:key=value,...")
    g.add_argument("--instructions", type=int, default=1_000_000)
    g.add_argument("--binary", action="store_true")
    g.add_argument("-o", "--out", required=True)

    a = sub.add_parser("audit", help="check a command log for timing violations")
    a.add_argument("log")
    a.add_argument("--dram", default="DDR3")
    a.add_argument("--dram-file")
    return p


def _config(args) -> ExperimentConfig:
    base = {}
    if args.config:
        try:
            with open(args.config) as fh:
                base = json.load(fh)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
    try:
        cfg = ExperimentConfig(**base)
    except TypeError as exc:
        raise ConfigError(f"bad config field: {exc}") from None
    cfg.dram, cfg.dram_file, cfg.mode = args.dram, args.dram_file, args.mode
    if args.trace or args.synthetic:
        cfg.workloads = [Workload(path=t) for t in args.trace] + [
            Workload(pattern=_pattern(s), instructions=args.instructions)
            for s in args.synthetic]
    for item in args.threads:
        n, _, paths = item.partition("=")
        if not n.isdigit():
            raise ConfigError(f"--threads expects N=trace,... (got {item!r})")
        cfg.thread_sets[int(n)] = [Workload(path=x) for x in paths.split(",") if x]
    cfg.interleave = args.interleave or cfg.interleave
    cfg.max_inflight = args.max_inflight or cfg.max_inflight
    cfg.packet_lines = args.packet_lines
    cfg.seed = args.seed
    cfg.warmup_instructions = args.warmup
    cfg.max_instructions = args.max_instructions
    cfg.translation_mode = args.translation
    cfg.energy_params = args.energy_params
    cfg.command_log = bool(args.command_log)
    return cfg


def _simulate(args):
    cfg = _config(args)
    spec = resolve_spec(cfg.dram, cfg.dram_file)
    from . import harness
    if args.command_log:
        runner = {"single": harness.run_single, "bundle": harness.run_bundle,
                  "network": harness.run_network,
                  "multithreaded": harness.run_multithreaded}[cfg.mode]
        report, run = runner(cfg, _return_run=True)
        if cfg.mode == "network":
            cmds = run.command_log()
        elif cfg.mode == "multithreaded":
            cmds = run[max(run)].mem.command_log()
        else:
            cmds = run.mem.command_log()
        geom = geometry_for(spec)
        write_command_log(args.command_log, cmds,
                          {"dram": spec.name, "units": geom.units, "ranks": geom.ranks,
                           "banks": geom.banks})
    else:
        report = run_experiment(cfg)
    fmt = args.format or ("csv" if args.out and args.out.endswith(".csv") else "json")
    data = emit_report(report, fmt)
    if args.out:
        with open(args.out, "wb") as fh:
            fh.write(data)
    else:
        sys.stdout.write(data.decode())


def _gen_trace(args):
    pattern = _pattern(args.pattern)
    if args.instructions <= 0:
        raise ConfigError("--instructions must be positive")
    records = generate_synthetic(pattern, args.instructions)
    if args.binary:
        with open(args.out, "wb") as fh:
            n = write_binary_trace(records, fh)
    else:
        with open(args.out, "w") as fh:
            n = write_text_trace(records, fh)
    print(f"wrote {n} records to {args.out}")


def _audit(args):
    spec = resolve_spec(args.dram, args.dram_file)
    try:
        errors = audit_log(args.log, spec)
    except OSError as exc:
        raise TraceIOError(f"cannot read command log {args.log}: {exc}") from exc
    for e in errors:
        print(e)
    print(f"{len(errors)} violation(s)")
    return 1 if errors else 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.cmd == "simulate":
            _simulate(args)
        elif args.cmd == "gen-trace":
            _gen_trace(args)
        else:
            return _audit(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TraceError as exc:
        print(f"trace error: {exc}", file=sys.stderr)
        return EXIT_TRACE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
