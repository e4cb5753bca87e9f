import pytest

from sfcmig.model import (ExperimentConfig, Flow, PhysicalLink, PhysicalNode, Problem,
                          ServiceChain, Topology, VnfType)


def make_topology(nodes, links):
    """nodes: (id, capacity, energy, is_function); links: (i, j, delay)."""
    return Topology(tuple(PhysicalNode(*n) for n in nodes), tuple(PhysicalLink(*l) for l in links))


def make_problem(nodes, links, catalog, chains, flows, **config):
    """chains: (vnf types, max_delay); flows: (src, dst, bandwidth or trace, chain index)."""
    topo = make_topology(nodes, links)
    catalog = [v if isinstance(v, VnfType) else VnfType(*v) for v in catalog]
    members = {q: [] for q in range(len(chains))}
    flow_objs = []
    for fid, (src, dst, bw, q) in enumerate(flows):
        trace = tuple(bw) if isinstance(bw, (list, tuple)) else (float(bw),)
        flow_objs.append(Flow(fid, src, dst, trace, service_type=str(q)))
        members[q].append(fid)
    chain_objs = [ServiceChain(q, tuple(types), d, tuple(members[q]), str(q))
                  for q, (types, d) in enumerate(chains)]
    config.setdefault("slots", 4)
    return Problem(topo, catalog, chain_objs, flow_objs, ExperimentConfig(**config))


# id, proc_coeff, config_delay, deploy_delay, deploy_cost, vm_energy
UNIT_TYPE = (0, 1.0, 1.0, 2.0, 6.0, 0.5)


@pytest.fixture
def line3():
    """a(0) - b(1) - c(2), delays 1, all function nodes with capacity 10;
    one chain with one VNF of type 0 (t_p = 1), one flow 0 -> 2."""
    return make_problem([(0, 10, 1, True), (1, 10, 1, True), (2, 10, 1, True)],
                        [(0, 1, 1), (1, 2, 1)], [UNIT_TYPE], [((0,), 10.0)], [(0, 2, 2.0, 0)])


@pytest.fixture
def migration_fixture():
    """Tree rooted at 0 with branches 0-1-2 and 0-3-4-5.  Chain 0 = (type 0 on
    node 0, type 1 on node 2); B_q = 4; type 1 has t_c = 1, t_d = 2, D_v = 6."""
    nodes = [(i, 100, 1, True) for i in range(6)]
    links = [(0, 1, 1), (1, 2, 1), (0, 3, 1), (3, 4, 1), (4, 5, 1)]
    catalog = [(0, 0.5, 1, 2, 6, 0.5), (1, 0.5, 1, 2, 6, 0.5)]
    return make_problem(nodes, links, catalog, [((0, 1), 100.0)], [(0, 0, 4.0, 0)])
