from dramscope.dramspec import builtin_spec
from dramscope.mapping import DramCoordinates, default_mode, mapper_for
from dramscope.memsys import MemoryConfig, MemorySystem


def addr(spec, channel=0, bank=0, row=0, column=0, rank=0, vault=0, mode=None):
    m = mapper_for(spec, mode or default_mode(spec))
    return m.encode(DramCoordinates(channel, rank, bank % spec.bank_groups_per_rank, bank,
                                    row, column, vault))


def memory(name, **kw):
    spec = builtin_spec(name) if isinstance(name, str) else name
    return MemorySystem(spec, MemoryConfig(**kw))


def read(mem, paddr, t_ps=None, is_write=False):
    t = mem.cycle * mem.tck + mem.tck if t_ps is None else t_ps
    t = max(t, 0)
    req = mem.new_request(paddr, is_write, t_ps=t)
    mem.submit(req, t)
    return req


def isolated_latency_ns(name, kind):
    """DRAM service time of one read under the hit/miss/conflict precondition."""
    spec = builtin_spec(name)
    mem = memory(spec, hmc_row_policy="open")
    if kind != "miss":
        read(mem, addr(spec, row=1), 0)
        mem.drain()
    probe = read(mem, addr(spec, row=2 if kind == "conflict" else 1, column=1))
    mem.drain()
    assert probe.locality_class == kind
    return (probe.completion_cycle - probe.first_command_cycle) * mem.tck / 1000
