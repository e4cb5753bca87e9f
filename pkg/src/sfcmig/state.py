"""Per-slot network state: VNF mapping, deployed instances, routes, resources.

A :class:`NetworkState` is a value.  Every operation that changes it returns
a new object; the old one stays valid so callers can diff consecutive states
for the migration cost terms.
"""
from __future__ import annotations

import hashlib
import heapq
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import InfeasibleError, StateError
from .model import Problem, Topology


# --- routing ---------------------------------------------------------------

def _dijkstra(topology: Topology, source: int):
    """Shortest paths from ``source``; among equal-delay paths the
    lexicographically smallest node sequence wins."""
    paths: dict[int, tuple[tuple[int, ...], float]] = {}
    heap = [(0.0, (source,))]
    while heap:
        dist, path = heapq.heappop(heap)
        u = path[-1]
        if u in paths:
            continue
        paths[u] = (path, dist)
        for v, w in topology.adjacency[u]:
            if v not in paths:
                heapq.heappush(heap, (dist + w, path + (v,)))
    return paths


def _route_table(topology: Topology) -> dict:
    table = topology.__dict__.get("_route_table")
    if table is None:
        table = topology.__dict__["_route_table"] = {}
    return table


def shortest_path(topology: Topology, i: int, j: int) -> tuple[int, ...]:
    return route(topology, i, j)[0]


def route(topology: Topology, i: int, j: int) -> tuple[tuple[int, ...], float]:
    """``(path, delay)`` of the minimum propagation-delay path from i to j."""
    table = _route_table(topology)
    tree = table.get(i)
    if tree is None:
        if i not in topology.node:
            raise StateError(f"unknown node {i}")
        tree = table[i] = _dijkstra(topology, i)
    try:
        return tree[j]
    except KeyError:
        raise StateError(f"unknown node {j}") from None


def path_delay(topology: Topology, path) -> float:
    delays = topology.link_delay
    return sum(delays[(a, b)] for a, b in zip(path, path[1:]))


def path_edges(path) -> set[tuple[int, int]]:
    return set(zip(path, path[1:]))


# --- state -----------------------------------------------------------------

@dataclass(frozen=True)
class MigrationAction:
    chain: int
    vnf_index: int | None = None
    target: int | None = None

    @classmethod
    def noop(cls, chain: int) -> "MigrationAction":
        return cls(chain)

    @property
    def is_noop(self) -> bool:
        return self.vnf_index is None

    def __str__(self):
        if self.is_noop:
            return "noop"
        return f"move({self.vnf_index}->{self.target})"


class NetworkState:
    """Snapshot of the network at one time slot.

    ``placement[q][m]`` is the node hosting VNF ``m`` of chain ``q``;
    ``deployed`` holds ``(node, type)`` pairs with an instance (x = 1);
    ``routes[(q, k)]`` is the physical path of virtual link ``k -> k+1``;
    ``flow_paths[f]`` is the pair (ingress path, egress path) of flow ``f``;
    ``moved`` maps chains that migrated during this slot to the moved index.
    """

    __slots__ = ("problem", "slot", "placement", "deployed", "routes", "flow_paths", "moved")

    def __init__(self, problem: Problem, slot, placement, deployed, routes, flow_paths, moved=None):
        self.problem = problem
        self.slot = slot
        self.placement = placement
        self.deployed = deployed
        self.routes = routes
        self.flow_paths = flow_paths
        self.moved = moved if moved is not None else {}

    def copy(self) -> "NetworkState":
        # values are tuples, so copying the containers is a full deep copy
        return NetworkState(self.problem, self.slot, dict(self.placement), set(self.deployed),
                            dict(self.routes), dict(self.flow_paths), dict(self.moved))

    def __eq__(self, other):
        if not isinstance(other, NetworkState):
            return NotImplemented
        return (self.problem is other.problem and self.slot == other.slot
                and self.placement == other.placement and self.deployed == other.deployed
                and self.routes == other.routes and self.flow_paths == other.flow_paths
                and self.moved == other.moved)

    __hash__ = None

    def __repr__(self):
        return f"NetworkState(slot={self.slot}, placement={self.placement})"

    def fingerprint(self) -> str:
        blob = repr((self.slot, sorted(self.placement.items()), sorted(self.deployed),
                     sorted(self.routes.items()), sorted(self.flow_paths.items()),
                     sorted(self.moved.items())))
        return hashlib.sha256(blob.encode()).hexdigest()

    def node_of(self, chain: int, m: int) -> int:
        return self.placement[chain][m]

    def active_vms(self) -> set[tuple[int, int]]:
        """``(node, type)`` pairs whose VM has at least one chain mapped to it (o = 1)."""
        out = set()
        for c in self.problem.chains:
            for node, v in zip(self.placement[c.id], c.vnf_sequence):
                out.add((node, v))
        return out

    def active_nodes(self) -> set[int]:
        return {i for i, _ in self.active_vms()}


def snapshot(state: NetworkState) -> NetworkState:
    return state.copy()


def _chain_routes(problem: Problem, chain_id: int, nodes: tuple[int, ...], routes, flow_paths):
    topo = problem.topology
    for k in range(len(nodes) - 1):
        routes[(chain_id, k)] = shortest_path(topo, nodes[k], nodes[k + 1])
    for fid in problem.chain[chain_id].member_flows:
        f = problem.flow[fid]
        flow_paths[fid] = (shortest_path(topo, f.src, nodes[0]), shortest_path(topo, nodes[-1], f.dst))


def build_state(problem: Problem, placement: dict[int, tuple[int, ...]], slot: int = 0,
                deployed=None) -> NetworkState:
    """State with the given mapping, shortest-path routes and instances
    wherever the mapping needs one."""
    placement = {q: tuple(nodes) for q, nodes in placement.items()}
    routes, flow_paths = {}, {}
    for c in problem.chains:
        if len(placement[c.id]) != c.length:
            raise StateError(f"chain {c.id}: placement length {len(placement[c.id])} != {c.length}")
        _chain_routes(problem, c.id, placement[c.id], routes, flow_paths)
    state = NetworkState(problem, slot, placement, set(), routes, flow_paths)
    state.deployed = state.active_vms() if deployed is None else set(deployed)
    return state


def vnf_demand(problem: Problem, chain_id: int, m: int, slot: int) -> float:
    """Resource requested by VNF ``m`` of a chain: ``B_q / Len * t_v^p``."""
    c = problem.chain[chain_id]
    bw = problem.chain_bandwidth(chain_id, slot) / problem.config.packet_len
    return bw * problem.catalog[c.vnf_sequence[m]].proc_coeff


def initial_placement(problem: Problem, slot: int = 0) -> NetworkState:
    """First-fit in ascending chain id, VNF order and node id at ``slot``
    demand.  When fragmentation leaves no node with room for a VNF, it goes
    to the node with the most headroom (overloading it)."""
    nodes = problem.function_nodes
    cap = {i: problem.topology.node[i].capacity for i in nodes}
    demands = {(c.id, m): vnf_demand(problem, c.id, m, slot)
               for c in problem.chains for m in range(c.length)}
    total, capacity = sum(demands.values()), sum(cap.values())
    if total > capacity:
        raise InfeasibleError(f"total demand {total:g} exceeds total capacity {capacity:g}")
    free = dict(cap)
    placement = {}
    for c in problem.chains:
        chosen = []
        for m in range(c.length):
            d = demands[(c.id, m)]
            node = next((i for i in nodes if free[i] >= d), None)
            if node is None:
                node = max(nodes, key=lambda i: (free[i], -i))
            free[node] -= d
            chosen.append(node)
        placement[c.id] = tuple(chosen)
    return build_state(problem, placement, slot)


def apply_action(state: NetworkState, action: MigrationAction, *, force: bool = False) -> NetworkState:
    """Return the state after ``action``.

    Moving a VNF deploys an instance of its type at the target when none
    exists (x flips to 1), re-routes the chain's virtual links and its flows'
    ingress/egress legs.  ``force`` skips the one-move-per-chain guard so
    tests can build constraint violations.
    """
    if action.is_noop:
        return state
    problem = state.problem
    q, m, target = action.chain, action.vnf_index, action.target
    if q not in problem.chain:
        raise StateError(f"unknown chain {q}")
    chain = problem.chain[q]
    if not 0 <= m < chain.length:
        raise StateError(f"chain {q}: vnf index {m} out of range")
    if target not in problem.topology.node or not problem.topology.node[target].is_function_node:
        raise StateError(f"target {target} is not a function node")
    if state.placement[q][m] == target:
        raise StateError(f"chain {q}: vnf {m} already on node {target}")
    if q in state.moved and not force:
        raise StateError(f"chain {q} already migrated a VNF in slot {state.slot}")
    new = state.copy()
    nodes = list(new.placement[q])
    nodes[m] = target
    new.placement[q] = tuple(nodes)
    new.deployed.add((target, chain.vnf_sequence[m]))
    _chain_routes(problem, q, new.placement[q], new.routes, new.flow_paths)
    new.moved[q] = m
    return new


def end_slot(state: NetworkState) -> NetworkState:
    """Advance to the next slot: idle instances are retracted and the
    per-slot migration record is cleared."""
    new = state.copy()
    new.slot = state.slot + 1
    new.deployed &= state.active_vms()
    new.moved = {}
    return new


# --- resources -------------------------------------------------------------

@dataclass
class ResourceReport:
    requested: dict[tuple[int, int], float]
    allocated: dict[tuple[int, int], float]
    packet_loss: float

    def node_load(self, node: int) -> float:
        return sum(c for (i, _), c in self.requested.items() if i == node)


def requested_resources(state: NetworkState, slot: int | None = None) -> dict[tuple[int, int], float]:
    """``C^t_{i,v}`` for every active ``(node, type)``."""
    problem = state.problem
    slot = state.slot if slot is None else slot
    out: dict[tuple[int, int], float] = {}
    inv_len = 1.0 / problem.config.packet_len
    for c in problem.chains:
        bw = problem.chain_bandwidth(c.id, slot) * inv_len
        for node, v in zip(state.placement[c.id], c.vnf_sequence):
            key = (node, v)
            out[key] = out.get(key, 0.0) + bw * problem.catalog[v].proc_coeff
    return out


def maxmin_allocate(demands, capacity: float) -> np.ndarray:
    """Max-min fair (water-filling) split of ``capacity`` over ``demands``."""
    demands = np.asarray(demands, dtype=float)
    alloc = np.zeros_like(demands)
    if demands.size == 0:
        return alloc
    if demands.sum() <= capacity:
        return demands.copy()
    remaining = float(capacity)
    order = np.argsort(demands, kind="stable")
    left = len(order)
    for k, idx in enumerate(order):
        share = remaining / left
        if demands[idx] <= share:
            alloc[idx] = demands[idx]
            remaining -= demands[idx]
            left -= 1
        else:
            alloc[order[k:]] = share
            break
    return alloc


def packet_loss(state: NetworkState, requested, allocated) -> float:
    catalog = state.problem.catalog
    loss = 0.0
    for key, c in requested.items():
        t_p = catalog[key[1]].proc_coeff
        if t_p > 0:
            loss += (c - allocated[key]) / t_p
    return loss


def compute_resources(state: NetworkState, slot: int | None = None) -> ResourceReport:
    """Requested resources, the per-node max-min allocation over VM demands,
    and the resulting packet loss."""
    requested = requested_resources(state, slot)
    by_node: dict[int, list[tuple[int, int]]] = {}
    for key in requested:
        by_node.setdefault(key[0], []).append(key)
    allocated = {}
    topo = state.problem.topology
    for node, keys in by_node.items():
        keys.sort()
        alloc = maxmin_allocate([requested[k] for k in keys], topo.node[node].capacity)
        for k, a in zip(keys, alloc):
            allocated[k] = float(a)
    return ResourceReport(requested, allocated, packet_loss(state, requested, allocated))


def node_loads(state: NetworkState, resources: ResourceReport) -> dict[int, float]:
    loads = {i: 0.0 for i in state.problem.function_nodes}
    for (i, _), c in resources.requested.items():
        loads[i] = loads.get(i, 0.0) + c
    return loads


def node_overload_prob(state: NetworkState, node: int, resources: ResourceReport) -> float:
    return resources.node_load(node) / state.problem.topology.node[node].capacity


def chain_overload_prob(state: NetworkState, chain_id: int, resources: ResourceReport) -> float:
    loads = node_loads(state, resources)
    topo = state.problem.topology
    p = 1.0
    for node in state.placement[chain_id]:
        p *= loads[node] / topo.node[node].capacity
    return p


def overload_degree(state: NetworkState, resources: ResourceReport) -> float:
    """Sum over nodes of the relative over-capacity ``max(0, load/C - 1)``."""
    topo = state.problem.topology
    return sum(max(0.0, load / topo.node[i].capacity - 1.0)
               for i, load in node_loads(state, resources).items())


# --- QoS -------------------------------------------------------------------

def end_to_end_delay(state: NetworkState, flow_id: int) -> float:
    problem = state.problem
    topo = problem.topology
    chain = problem.chain[problem.flow_chain[flow_id]]
    ingress, egress = state.flow_paths[flow_id]
    delay = path_delay(topo, ingress) + path_delay(topo, egress)
    for k in range(chain.length - 1):
        delay += path_delay(topo, state.routes[(chain.id, k)])
    return delay + sum(problem.catalog[v].proc_coeff for v in chain.vnf_sequence)


def chain_delays(state: NetworkState, chain_id: int) -> dict[int, float]:
    return {f: end_to_end_delay(state, f) for f in state.problem.chain[chain_id].member_flows}


def placement_delays(problem: Problem, chain_id: int, nodes) -> dict[int, float]:
    """Per-flow delays the chain would have with VNFs on ``nodes``
    (shortest-path routing), without building a state."""
    topo = problem.topology
    chain = problem.chain[chain_id]
    core = sum(route(topo, a, b)[1] for a, b in zip(nodes, nodes[1:]))
    core += sum(problem.catalog[v].proc_coeff for v in chain.vnf_sequence)
    out = {}
    for fid in chain.member_flows:
        f = problem.flow[fid]
        out[fid] = route(topo, f.src, nodes[0])[1] + core + route(topo, nodes[-1], f.dst)[1]
    return out


# --- observation -----------------------------------------------------------

@dataclass
class Observation:
    vnf_loads: np.ndarray
    node_headroom: np.ndarray

    def vector(self, low: float = -1.0, high: float = 1.0) -> np.ndarray:
        return np.clip(np.concatenate([self.vnf_loads, self.node_headroom]), low, high)

    def __len__(self):
        return len(self.vnf_loads) + len(self.node_headroom)


def observe(state: NetworkState, chain_id: int, resources: ResourceReport,
            floor: float = -1.0) -> Observation:
    """Demand of each of the chain's VNFs relative to its host's capacity,
    and the remaining-capacity ratio of every function node (clamped below
    at ``floor``)."""
    problem = state.problem
    topo = problem.topology
    chain = problem.chain[chain_id]
    b = np.array([vnf_demand(problem, chain_id, m, state.slot) / topo.node[node].capacity
                  for m, node in enumerate(state.placement[chain_id])])
    loads = node_loads(state, resources)
    n = np.array([(topo.node[i].capacity - loads[i]) / topo.node[i].capacity
                  for i in problem.function_nodes])
    assert len(b) == chain.length
    return Observation(b, np.maximum(n, floor))


# --- constraints -----------------------------------------------------------

class Violation(NamedTuple):
    constraint: str     # delay, capacity, mapping, migration, availability, partition, conservation
    ident: tuple
    magnitude: float


def check_constraints(prev: NetworkState, state: NetworkState,
                      resources: ResourceReport | None = None) -> list[Violation]:
    """All violated constraints of ``state`` (migration count is relative to
    ``prev``).  Violations are returned, never raised."""
    problem = state.problem
    topo = problem.topology
    fn = set(problem.function_nodes)
    out: list[Violation] = []

    mapping_ok = {}
    for c in problem.chains:
        nodes = state.placement.get(c.id, ())
        ok = len(nodes) == c.length and all(i in fn for i in nodes)
        mapping_ok[c.id] = ok
        if len(nodes) != c.length:
            out.append(Violation("mapping", (c.id,), abs(len(nodes) - c.length)))
        for m, i in enumerate(nodes):
            if i not in fn:
                out.append(Violation("mapping", (c.id, m), 1.0))

    for c in problem.chains:
        old, new = prev.placement.get(c.id, ()), state.placement.get(c.id, ())
        moves = sum(a != b for a, b in zip(old, new))
        if moves > 1:
            out.append(Violation("migration", (c.id,), moves - 1))

    for v in problem.used_types:
        if not any(t == v for _, t in state.deployed):
            out.append(Violation("availability", (v,), 1.0))

    owners: dict[int, int] = {}
    for c in problem.chains:
        for f in c.member_flows:
            owners[f] = owners.get(f, 0) + 1
    for f in problem.flows:
        if owners.get(f.id, 0) != 1:
            out.append(Violation("partition", (f.id,), abs(owners.get(f.id, 0) - 1)))

    for c in problem.chains:
        if not mapping_ok[c.id]:
            continue
        nodes = state.placement[c.id]
        for k in range(c.length - 1):
            path = state.routes.get((c.id, k))
            if not _valid_path(topo, path, nodes[k], nodes[k + 1]):
                out.append(Violation("conservation", (c.id, k), 1.0))
        for fid in c.member_flows:
            f = problem.flow[fid]
            ingress, egress = state.flow_paths.get(fid, (None, None))
            if not _valid_path(topo, ingress, f.src, nodes[0]):
                out.append(Violation("conservation", (c.id, "in", fid), 1.0))
            if not _valid_path(topo, egress, nodes[-1], f.dst):
                out.append(Violation("conservation", (c.id, "out", fid), 1.0))

    if all(mapping_ok.values()) and not any(v.constraint == "conservation" for v in out):
        for f in problem.flows:
            excess = end_to_end_delay(state, f.id) - f.max_delay
            if excess > 0:
                out.append(Violation("delay", (f.id,), excess))
        if resources is None:
            resources = compute_resources(state)
        for i, load in node_loads(state, resources).items():
            excess = load - topo.node[i].capacity
            if excess > 0:
                out.append(Violation("capacity", (i,), excess))
    return out


def _valid_path(topo: Topology, path, src, dst) -> bool:
    if not path or path[0] != src or path[-1] != dst:
        return False
    return all((a, b) in topo.link_delay for a, b in zip(path, path[1:]))


# --- text dump -------------------------------------------------------------

def dump_state(state: NetworkState, resources: ResourceReport | None = None) -> str:
    """``slot,chain,vnf_index,node`` rows, then ``slot,node,type,requested,allocated`` rows."""
    rows = [f"{state.slot},{q},{m},{node}"
            for q, nodes in sorted(state.placement.items()) for m, node in enumerate(nodes)]
    if resources is not None:
        rows += [f"{state.slot},{i},{v},{resources.requested[(i, v)]!r},{resources.allocated[(i, v)]!r}"
                 for i, v in sorted(resources.requested)]
    return "\n".join(rows) + "\n"
