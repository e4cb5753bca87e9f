import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sfcmig.errors import InfeasibleError, StateError
from sfcmig.state import (MigrationAction, apply_action, build_state, chain_delays,
                          chain_overload_prob, check_constraints, compute_resources, dump_state,
                          end_slot, end_to_end_delay, initial_placement, maxmin_allocate,
                          node_overload_prob, observe, overload_degree,
                          placement_delays, requested_resources, route, shortest_path, snapshot)

from conftest import UNIT_TYPE, make_problem
from oracles import maxmin_violations, random_state_pair, violations_bruteforce


def test_triangle_shortest_path():
    p = make_problem([(0, 10, 1, True), (1, 10, 1, True), (2, 10, 1, True)],
                     [(0, 1, 5), (1, 2, 5), (0, 2, 11)], [UNIT_TYPE], [((0,), 50)], [(0, 2, 1, 0)])
    assert route(p.topology, 0, 2) == ((0, 1, 2), 10)
    assert route(p.topology, 1, 1) == ((1,), 0.0)
    # exhaustive enumeration of simple paths agrees
    best = min(d for path, d in [((0, 2), 11), ((0, 1, 2), 10)])
    assert route(p.topology, 0, 2)[1] == best


def test_tie_break_is_lexicographic():
    p = make_problem([(i, 10, 1, True) for i in range(4)],
                     [(0, 1, 1), (1, 3, 1), (0, 2, 1), (2, 3, 1)], [UNIT_TYPE], [((0,), 50)],
                     [(0, 3, 1, 0)])
    assert shortest_path(p.topology, 0, 3) == (0, 1, 3)
    assert shortest_path(p.topology, 3, 0) == (3, 1, 0)


def test_line_delay(line3):
    # VNF on b, flow a -> c, t_p = 1 on the fixture; with t_p = 2 the delay is 4
    p = make_problem([(0, 10, 1, True), (1, 10, 1, True), (2, 10, 1, True)],
                     [(0, 1, 1), (1, 2, 1)], [(0, 2.0, 1, 2, 6, 0.5)], [((0,), 10.0)],
                     [(0, 2, 1.0, 0)])
    s = build_state(p, {0: (1,)})
    assert end_to_end_delay(s, 0) == 4
    for node in (0, 2):
        off = build_state(p, {0: (node,)})
        assert end_to_end_delay(off, 0) >= 4
    # spur node 3 hangs off b: every placement off the a-c path is strictly worse
    p2 = make_problem([(i, 10, 1, True) for i in range(4)], [(0, 1, 1), (1, 2, 1), (1, 3, 1)],
                      [(0, 2.0, 1, 2, 6, 0.5)], [((0,), 10.0)], [(0, 2, 1.0, 0)])
    on_path = {n: end_to_end_delay(build_state(p2, {0: (n,)}), 0) for n in range(4)}
    assert on_path == {0: 4, 1: 4, 2: 4, 3: 6}


def test_delay_single_node_identity():
    p = make_problem([(0, 10, 1, True), (1, 10, 1, True)], [(0, 1, 1)], [UNIT_TYPE],
                     [((0,), 10.0)], [(0, 0, 1.0, 0)])
    assert end_to_end_delay(build_state(p, {0: (0,)}), 0) == 1


def test_placement_delays_match_state(line3):
    s = build_state(line3, {0: (1,)})
    assert placement_delays(line3, 0, (1,)) == chain_delays(s, 0)


def test_requested_resources_example():
    # B_q = 100, Len = 10, t_p = 0.5 on node 3 -> 5
    p = make_problem([(i, 10, 1, True) for i in range(4)], [(0, 1, 1), (1, 2, 1), (2, 3, 1)],
                     [(0, 0.5, 1, 2, 6, 0.5)], [((0,), 50.0), ((0,), 50.0)],
                     [(0, 1, 100.0, 0), (0, 1, 100.0, 1)], packet_len=10)
    s = build_state(p, {0: (3,), 1: (2,)})
    req = requested_resources(s)
    assert req == {(3, 0): 5.0, (2, 0): 5.0}
    s2 = build_state(p, {0: (3,), 1: (3,)})
    assert requested_resources(s2) == {(3, 0): 10.0}
    assert 0 not in {i for i, _ in req}


@pytest.mark.parametrize("demands,cap,want", [
    ([6, 6], 10, [5, 5]),
    ([2, 9], 10, [2, 8]),
    ([3, 4], 10, [3, 4]),
    ([], 10, []),
])
def test_maxmin_examples(demands, cap, want):
    assert maxmin_allocate(demands, cap).tolist() == want


def test_maxmin_perturbation():
    a = maxmin_allocate([2, 9], 10)
    # moving any epsilon from the smaller share makes the min smaller
    assert min(a[0] - 0.1, a[1] + 0.1) < min(a)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 100, allow_nan=False), max_size=8), st.floats(0, 200))
def test_maxmin_properties(demands, cap):
    alloc = maxmin_allocate(demands, cap)
    assert maxmin_violations(demands, cap, alloc, tol=1e-7) == []


def test_packet_loss_example():
    p = make_problem([(0, 5, 1, True), (1, 5, 1, True)], [(0, 1, 1)], [(0, 0.5, 1, 2, 6, 0.5)],
                     [((0,), 50)], [(0, 1, 12.0, 0)])
    s = build_state(p, {0: (0,)})
    res = compute_resources(s)
    assert res.requested[(0, 0)] == 6.0 and res.allocated[(0, 0)] == 5.0
    assert res.packet_loss == 2.0


def test_packet_loss_homogeneous():
    def loss(scale):
        p = make_problem([(0, 5 * scale, 1, True), (1, 5 * scale, 1, True)], [(0, 1, 1)],
                         [(0, 0.5, 1, 2, 6, 0.5), (1, 0.25, 1, 2, 6, 0.5)], [((0, 1), 50)],
                         [(0, 1, 12.0 * scale, 0)])
        return compute_resources(build_state(p, {0: (0, 0)})).packet_loss
    assert loss(2) == pytest.approx(2 * loss(1))
    assert loss(1) > 0


def test_no_loss_under_capacity(line3):
    res = compute_resources(initial_placement(line3))
    assert res.packet_loss == 0.0
    assert res.allocated == res.requested


def test_initial_placement_rules():
    p = make_problem([(0, 10, 1, True), (1, 10, 1, True)], [(0, 1, 1)], [(0, 1.0, 1, 2, 6, 1)],
                     [((0,), 50)], [(0, 1, 3.0, 0)])
    assert initial_placement(p).placement == {0: (0,)}
    # two VNFs demanding 6 each on capacities [10, 10]: split
    p = make_problem([(0, 10, 1, True), (1, 10, 1, True)], [(0, 1, 1)], [(0, 1.0, 1, 2, 6, 1)],
                     [((0, 0), 50)], [(0, 1, 6.0, 0)])
    assert initial_placement(p).placement == {0: (0, 1)}
    p = make_problem([(0, 10, 1, True), (1, 10, 1, True)], [(0, 1, 1)], [(0, 1.0, 1, 2, 6, 1)],
                     [((0,), 50)], [(0, 1, 25.0, 0)])
    with pytest.raises(InfeasibleError):
        initial_placement(p)


def test_initial_placement_fragmented_goes_to_most_headroom():
    p = make_problem([(0, 10, 1, True), (1, 10, 1, True)], [(0, 1, 1)], [(0, 1.0, 1, 2, 6, 1)],
                     [((0, 0, 0), 50)], [(0, 1, 6.0, 0)])
    # 6 + 6 + 6 = 18 <= 20 but the third VNF fits nowhere
    s = initial_placement(p)
    assert s.placement[0] == (0, 1, 0)


def test_apply_action_noop_and_moves():
    p = make_problem([(i, 10, 1, True) for i in range(3)], [(0, 1, 1), (1, 2, 1)],
                     [UNIT_TYPE, (1, 1.0, 1, 2, 6, 0.5)], [((0, 1), 50)], [(0, 2, 1.0, 0)])
    s = build_state(p, {0: (1, 1)}, deployed={(1, 0), (1, 1), (2, 0)})
    assert apply_action(s, MigrationAction.noop(0)) is s
    t = apply_action(s, MigrationAction(0, 0, 2))
    assert t.placement[0] == (2, 1) and t.deployed == s.deployed
    assert t.routes[(0, 0)] == (2, 1)
    assert t.flow_paths[0] == ((0, 1, 2), (1, 2))
    u = apply_action(s, MigrationAction(0, 1, 0))
    assert (0, 1) in u.deployed and (0, 1) not in s.deployed
    assert s.placement[0] == (1, 1)
    with pytest.raises(StateError):
        apply_action(t, MigrationAction(0, 1, 0))
    with pytest.raises(StateError):
        apply_action(s, MigrationAction(0, 0, 1))
    assert apply_action(t, MigrationAction(0, 1, 0), force=True).placement[0] == (2, 0)


def test_apply_action_rejects_non_function_target():
    p = make_problem([(0, 10, 1, True), (1, 10, 1, False)], [(0, 1, 1)], [UNIT_TYPE],
                     [((0,), 50)], [(0, 1, 1.0, 0)])
    with pytest.raises(StateError):
        apply_action(initial_placement(p), MigrationAction(0, 0, 1))


def test_end_slot_retracts_idle_instances(line3):
    s = build_state(line3, {0: (0,)})
    t = end_slot(apply_action(s, MigrationAction(0, 0, 2)))
    assert t.slot == 1 and t.moved == {}
    assert t.deployed == {(2, 0)}


def test_snapshot_isolation(line3):
    s = initial_placement(line3)
    before = s.fingerprint()
    c = snapshot(s)
    c.placement[0] = (2,)
    c.deployed.add((1, 0))
    c.routes[("x", 0)] = (0,)
    apply_action(snapshot(s), MigrationAction(0, 0, 1))
    assert s.fingerprint() == before


def test_observation_and_overload_examples():
    p = make_problem([(0, 10, 1, True), (1, 10, 1, True), (2, 10, 1, True)],
                     [(0, 1, 1), (1, 2, 1)], [UNIT_TYPE], [((0,), 50), ((0,), 50), ((0, 0), 50)],
                     [(0, 1, 5.0, 0), (0, 1, 12.0, 1), (0, 1, 4.0, 2)])
    s = build_state(p, {0: (0,), 1: (1,), 2: (2, 0)})
    res = compute_resources(s)
    # node 0: 5 + 4 = 9, node 1: 12, node 2: 4
    obs = observe(s, 0, res)
    assert obs.vnf_loads.tolist() == [0.5]
    assert obs.node_headroom.tolist() == pytest.approx([0.1, -0.2, 0.6])
    assert node_overload_prob(s, 1, res) == pytest.approx(1.2)
    assert node_overload_prob(s, 2, res) == pytest.approx(0.4)
    assert chain_overload_prob(s, 2, res) == pytest.approx(0.4 * 0.9)
    assert overload_degree(s, res) == pytest.approx(0.2)
    assert len(obs.vector()) == len(obs) == 4


def test_overload_probability_examples():
    p = make_problem([(0, 10, 1, True), (1, 10, 1, True)], [(0, 1, 1)], [UNIT_TYPE],
                     [((0,), 50), ((0, 0), 50)], [(0, 1, 5.0, 0), (0, 1, 0.0, 1)])
    s = build_state(p, {0: (0,), 1: (0, 1)})
    res = compute_resources(s)
    assert chain_overload_prob(s, 0, res) == 0.5
    p2 = make_problem([(0, 10, 1, True), (1, 10, 1, True)], [(0, 1, 1)], [UNIT_TYPE],
                      [((0, 0), 50), ((0,), 50)], [(0, 1, 5.0, 0), (0, 1, 3.0, 1)])
    s2 = build_state(p2, {0: (0, 1), 1: (1,)})
    res2 = compute_resources(s2)
    assert chain_overload_prob(s2, 0, res2) == pytest.approx(0.5 * 0.8)


def test_constraints_examples(line3):
    s = initial_placement(line3)
    assert check_constraints(s, s) == []
    p = make_problem([(i, 10, 1, True) for i in range(3)], [(0, 1, 1), (1, 2, 1)],
                     [UNIT_TYPE], [((0, 0), 50)], [(0, 2, 6.0, 0)])
    s = build_state(p, {0: (0, 1)})
    t = apply_action(apply_action(s, MigrationAction(0, 0, 2)), MigrationAction(0, 1, 0), force=True)
    kinds = {v.constraint for v in check_constraints(s, t)}
    assert "migration" in kinds
    over = build_state(p, {0: (1, 1)})
    vs = [v for v in check_constraints(over, over) if v.constraint == "capacity"]
    assert vs == [("capacity", (1,), 2.0)]


def test_valid_sequences_never_violate_hard_constraints():
    rng = np.random.default_rng(5)
    p = make_problem([(i, 10, 1, i != 3) for i in range(5)],
                     [(0, 1, 1), (1, 2, 1), (2, 3, 1), (3, 4, 1), (4, 0, 2)],
                     [UNIT_TYPE, (1, 0.5, 1, 2, 6, 0.5)], [((0, 1), 50), ((1, 1, 0), 50)],
                     [(0, 3, 2.0, 0), (3, 4, 1.0, 1)])
    s = initial_placement(p)
    for _ in range(30):
        prev = s
        for c in p.chains:
            if rng.random() < 0.6:
                m = int(rng.integers(c.length))
                targets = [i for i in p.function_nodes if i != s.placement[c.id][m]]
                s = apply_action(s, MigrationAction(c.id, m, int(rng.choice(targets))))
        hard = {v.constraint for v in check_constraints(prev, s)} - {"delay", "capacity"}
        assert not hard
        s = end_slot(s)


def test_checker_agrees_with_bruteforce_small():
    rng = np.random.default_rng(11)
    p = make_problem([(i, 6, 1, i != 2) for i in range(4)],
                     [(0, 1, 1), (1, 2, 1), (2, 3, 1), (0, 3, 3)],
                     [UNIT_TYPE, (1, 0.5, 1, 2, 6, 0.5)], [((0, 1), 4), ((1, 0), 4)],
                     [(0, 2, 2.0, 0), (1, 3, 3.0, 1), (2, 2, 1.0, 0)])
    for _ in range(40):
        prev, s = random_state_pair(p, rng)
        got = {(v.constraint, v.ident): v.magnitude for v in check_constraints(prev, s)}
        want = violations_bruteforce(prev, s)
        assert set(got) == set(want)
        for k in got:
            assert got[k] == pytest.approx(want[k], abs=1e-9)


def test_dump_state(line3):
    s = initial_placement(line3)
    text = dump_state(s, compute_resources(s))
    assert text.splitlines() == ["0,0,0,0", "0,0,0,2.0,2.0"]
