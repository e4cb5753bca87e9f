
import pytest

from sfcmig.errors import ModelError, ParseError
from sfcmig.model import (ExperimentConfig, Flow, VnfType, action_space_size,
                          assign_flows_to_chains, build_chains, dump_catalog, dump_topology,
                          dump_trace, generate_traffic, joint_action_space_size, load_topology,
                          parse_catalog, parse_topology, parse_trace, select_function_nodes)
from sfcmig.harness import DATA_DIR

from conftest import make_problem, make_topology

TOPO_TEXT = """# tiny
[nodes]
0,10,2,1
1,8,2,0
2,10,1.5,1
[links]
0,1,1
1,2,2.5
"""


def enumerate_actions(g, n):
    """Brute force: no-op plus every (vnf, other node) pair."""
    nodes = range(n)
    current = [0] * g
    moves = {("noop",)}
    for m in range(g):
        for j in nodes:
            if j != current[m]:
                moves.add((m, j))
    return len(moves)


def test_action_space_formula_matches_enumeration():
    for g in range(1, 5):
        for n in range(2, 12):
            assert action_space_size(g, n) == enumerate_actions(g, n) == g * (n - 1) + 1


def test_action_space_examples():
    assert action_space_size(3, 10) == 28
    assert joint_action_space_size([3, 3, 3], 10) == 21952
    assert action_space_size(2, 6) == 11
    assert joint_action_space_size([2, 2], 6) == 121


def test_parse_topology_round_trip():
    topo = parse_topology(TOPO_TEXT)
    assert topo.function_nodes == (0, 2)
    assert topo.link_delay[(1, 2)] == topo.link_delay[(2, 1)] == 2.5
    assert parse_topology(dump_topology(topo)) == topo


@pytest.mark.parametrize("text,needle", [
    ("[nodes]\n0,10,2\n[links]\n", "t.topo:2:"),
    ("[nodes]\n0,10,2,1\n0,10,2,1\n[links]\n", "duplicate node"),
    ("[nodes]\n0,10,2,1\n1,10,2,1\n[links]\n0,5,1\n", "5"),
    ("[nodes]\n0,x,2,1\n[links]\n", "t.topo:2:"),
])
def test_parse_topology_errors(text, needle):
    with pytest.raises(ModelError) as err:
        parse_topology(text, "t.topo")
    assert needle in str(err.value)


def test_disconnected_topology_rejected():
    with pytest.raises(ModelError):
        parse_topology("[nodes]\n0,1,1,1\n1,1,1,1\n2,1,1,1\n[links]\n0,1,1\n")


def test_select_function_nodes_by_degree():
    topo = make_topology([(i, 10, 1, False) for i in range(5)],
                         [(0, 1, 1), (0, 2, 1), (0, 3, 1), (1, 2, 1), (3, 4, 1)])
    assert select_function_nodes(topo, 2).function_nodes == (0, 1)
    assert select_function_nodes(topo, 3).function_nodes == (0, 1, 2)


def test_bundled_uunet_like_topology():
    topo = load_topology(DATA_DIR / "uunet_like.topo", 10)
    assert len(topo.nodes) == 49 and len(topo.links) == 84
    assert len(topo.function_nodes) == 10


def test_catalog_round_trip_and_errors():
    text = "# id,proc,cfg,dep,cost,energy\n0,0.5,1,2,6,1\n1,0.8,1.5,3,8,1\n"
    cat = parse_catalog(text)
    assert cat[1] == VnfType(1, 0.8, 1.5, 3, 8, 1)
    assert parse_catalog(dump_catalog(cat)) == cat
    with pytest.raises(ModelError):
        parse_catalog("0,-0.5,1,2,6,1\n")


def test_trace_parse_and_gaps():
    series = parse_trace("0,0,1.5\n0,1,2.0\n1,0,3\n1,1,4\n")
    assert series == {0: (1.5, 2.0), 1: (3.0, 4.0)}
    with pytest.raises(ParseError):
        parse_trace("0,0,1\n0,2,1\n")
    flows = [Flow(k, 0, 1, v) for k, v in series.items()]
    assert parse_trace(dump_trace(flows)) == series


def test_flow_bandwidth_wraps():
    f = Flow(0, 0, 1, (1.0, 2.0, 3.0))
    assert [f.bandwidth(t) for t in range(5)] == [1.0, 2.0, 3.0, 1.0, 2.0]


def test_generate_traffic_profiles():
    flows = generate_traffic("step", 3, 5, step_at=2, base=0.5, amplitude=2.0, nodes=[0, 1])
    assert flows[0].bandwidth_trace == (0.5, 0.5, 2.0, 2.0, 2.0)
    a = generate_traffic("sinusoid", 4, 8, seed=3, nodes=[0, 1, 2], service_types=["0", "1"])
    b = generate_traffic("sinusoid", 4, 8, seed=3, nodes=[0, 1, 2], service_types=["0", "1"])
    assert a == b
    assert all(x >= 0 for f in a for x in f.bandwidth_trace)
    assert [f.service_type for f in a] == ["0", "1", "0", "1"]
    with pytest.raises(ModelError):
        generate_traffic("burst", 1, 1)


def test_generate_traffic_from_trace(tmp_path):
    path = tmp_path / "t.csv"
    path.write_text("0,0,1\n0,1,2\n1,0,3\n1,1,4\n")
    flows = generate_traffic("trace", 2, 2, nodes=[0], trace_path=path)
    assert [f.bandwidth_trace for f in flows] == [(1.0, 2.0), (3.0, 4.0)]
    with pytest.raises(ModelError):
        generate_traffic("trace", 3, 2, nodes=[0], trace_path=path)


def test_chain_assignment_partitions_flows():
    cat = [VnfType(k, 0.5, 1, 2, 6, 1) for k in range(4)]
    chains = build_chains(cat, 3, 3, 50.0)
    assert [c.vnf_sequence for c in chains] == [(0, 1, 2), (1, 2, 3), (2, 3, 0)]
    flows = generate_traffic("step", 7, 2, nodes=[0, 1], service_types=[c.kind for c in chains])
    chains, flows = assign_flows_to_chains(flows, chains)
    owned = sorted(f for c in chains for f in c.member_flows)
    assert owned == [f.id for f in flows]
    assert all(f.max_delay == 50.0 for f in flows)
    bad = [Flow(0, 0, 1, (1.0,), service_type="nope")]
    with pytest.raises(ModelError):
        assign_flows_to_chains(bad, chains)


def test_problem_validation():
    with pytest.raises(ModelError):
        make_problem([(0, 10, 1, True)], [], [(0, 1, 1, 2, 6, 1)], [((5,), 10.0)], [(0, 0, 1.0, 0)])
    with pytest.raises(ModelError):
        ExperimentConfig(alpha_c=0.7, beta_c=0.7)


def test_problem_derived_quantities(line3):
    assert line3.function_nodes == (0, 1, 2)
    assert line3.action_count(0) == 3
    assert line3.chain_bandwidth(0, 0) == 2.0
    # sum of node energies plus every (function node, catalog type) VM
    assert line3.ecost_max == 3 * 1 + 3 * 1 * 0.5
    assert line3.with_config(ExperimentConfig(ecost_max=20.0)).ecost_max == 20.0
