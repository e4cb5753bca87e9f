"""Problem definition: topology, VNF catalog, service chains, flows.

Everything here is immutable after construction and can be shared between
runs.  Text loaders accept ``#`` comments and blank lines everywhere.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ModelError, ParseError, ValidationError


@dataclass(frozen=True)
class VnfType:
    id: int
    proc_coeff: float      # processing delay / resource per unit packet rate
    config_delay: float
    deploy_delay: float
    deploy_cost: float
    vm_energy: float

    def __post_init__(self):
        for name in ("proc_coeff", "config_delay", "deploy_delay", "deploy_cost", "vm_energy"):
            if getattr(self, name) < 0:
                raise ValidationError(f"vnf type {self.id}: {name} must be >= 0")


@dataclass(frozen=True)
class PhysicalNode:
    id: int
    capacity: float
    node_energy: float
    is_function_node: bool = False

    def __post_init__(self):
        if self.node_energy < 0:
            raise ValidationError(f"node {self.id}: node_energy must be >= 0")
        if self.capacity < 0 or (self.is_function_node and self.capacity <= 0):
            raise ValidationError(f"node {self.id}: function node capacity must be > 0")


@dataclass(frozen=True)
class PhysicalLink:
    i: int
    j: int
    prop_delay: float

    def __post_init__(self):
        if self.prop_delay < 0:
            raise ValidationError(f"link ({self.i},{self.j}): prop_delay must be >= 0")
        if self.i == self.j:
            raise ValidationError(f"link ({self.i},{self.j}): self loop")

    @property
    def key(self) -> frozenset:
        return frozenset((self.i, self.j))


@dataclass(frozen=True)
class Topology:
    nodes: tuple[PhysicalNode, ...]
    links: tuple[PhysicalLink, ...]

    def __post_init__(self):
        ids = [n.id for n in self.nodes]
        seen = set()
        for i in ids:
            if i in seen:
                raise ValidationError(f"duplicate node {i}")
            seen.add(i)
        keys = set()
        for link in self.links:
            for end in (link.i, link.j):
                if end not in seen:
                    raise ValidationError(f"link ({link.i},{link.j}) references unknown node {end}")
            if link.key in keys:
                raise ValidationError(f"duplicate link ({link.i},{link.j})")
            keys.add(link.key)
        if not self.nodes:
            raise ValidationError("topology has no nodes")
        if not self._connected():
            raise ValidationError("topology is not connected")

    def _connected(self) -> bool:
        start = self.nodes[0].id
        stack, seen = [start], {start}
        while stack:
            u = stack.pop()
            for v, _ in self.adjacency[u]:
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        return len(seen) == len(self.nodes)

    @cached_property
    def node(self) -> Mapping[int, PhysicalNode]:
        return {n.id: n for n in self.nodes}

    @cached_property
    def adjacency(self) -> Mapping[int, tuple[tuple[int, float], ...]]:
        adj: dict[int, list[tuple[int, float]]] = {n.id: [] for n in self.nodes}
        for link in self.links:
            adj[link.i].append((link.j, link.prop_delay))
            adj[link.j].append((link.i, link.prop_delay))
        return {k: tuple(sorted(v)) for k, v in adj.items()}

    @cached_property
    def link_delay(self) -> Mapping[tuple[int, int], float]:
        out = {}
        for link in self.links:
            out[(link.i, link.j)] = link.prop_delay
            out[(link.j, link.i)] = link.prop_delay
        return out

    @cached_property
    def function_nodes(self) -> tuple[int, ...]:
        return tuple(sorted(n.id for n in self.nodes if n.is_function_node))

    def degree(self, node_id: int) -> int:
        return len(self.adjacency[node_id])


@dataclass(frozen=True)
class ServiceChain:
    id: int
    vnf_sequence: tuple[int, ...]
    max_delay: float
    member_flows: tuple[int, ...] = ()
    service_type: str | None = None

    def __post_init__(self):
        if not self.vnf_sequence:
            raise ValidationError(f"chain {self.id}: empty vnf sequence")
        if self.max_delay <= 0:
            raise ValidationError(f"chain {self.id}: max_delay must be > 0")

    @property
    def kind(self) -> str:
        return self.service_type if self.service_type is not None else str(self.id)

    @property
    def length(self) -> int:
        return len(self.vnf_sequence)


@dataclass(frozen=True)
class Flow:
    id: int
    src: int
    dst: int
    bandwidth_trace: tuple[float, ...]
    service_type: str = "0"
    max_delay: float = math.inf

    def __post_init__(self):
        if not self.bandwidth_trace:
            raise ValidationError(f"flow {self.id}: empty bandwidth trace")
        if any(b < 0 for b in self.bandwidth_trace):
            raise ValidationError(f"flow {self.id}: negative bandwidth")

    def bandwidth(self, slot: int) -> float:
        """Bandwidth at ``slot``; traces wrap around when the run is longer."""
        return self.bandwidth_trace[slot % len(self.bandwidth_trace)]


@dataclass(frozen=True)
class ExperimentConfig:
    alpha_c: float = 0.5
    beta_c: float = 0.5
    gamma_c: float = 1.0
    beta_n: float = 0.5
    beta_r: float = 0.5
    rho: float = 0.1
    packet_len: float = 1.0
    slots: int = 24
    ecost_max: float | None = None   # None: all function nodes and all VM slots active
    seed: int = 0

    def __post_init__(self):
        for name in ("alpha_c", "beta_c", "gamma_c", "beta_n", "beta_r", "rho"):
            if getattr(self, name) < 0:
                raise ValidationError(f"config: {name} must be >= 0")
        if not math.isclose(self.alpha_c + self.beta_c, 1.0, abs_tol=1e-9):
            raise ValidationError("config: alpha_c + beta_c must equal 1")
        if self.packet_len <= 0:
            raise ValidationError("config: packet_len must be > 0")
        if self.slots <= 0:
            raise ValidationError("config: slots must be > 0")


class Problem:
    """Bundle of the immutable inputs of one experiment, with derived lookups.

    Chain bandwidths ``B_q(t)`` are precomputed as the per-slot sum over the
    chain's member flows.
    """

    def __init__(self, topology: Topology, catalog: Iterable[VnfType],
                 chains: Sequence[ServiceChain], flows: Sequence[Flow],
                 config: ExperimentConfig | None = None):
        self.topology = topology
        self.catalog = {v.id: v for v in catalog}
        self.chains = tuple(sorted(chains, key=lambda c: c.id))
        self.flows = tuple(sorted(flows, key=lambda f: f.id))
        self.config = config or ExperimentConfig()
        self.chain = {c.id: c for c in self.chains}
        self.flow = {f.id: f for f in self.flows}
        self.function_nodes = topology.function_nodes
        self._validate()
        self.horizon = max(len(f.bandwidth_trace) for f in self.flows) if self.flows else 1
        self._chain_bw = {}
        for c in self.chains:
            bw = np.zeros(self.horizon)
            for fid in c.member_flows:
                f = self.flow[fid]
                bw += np.array([f.bandwidth(t) for t in range(self.horizon)])
            self._chain_bw[c.id] = bw

    def _validate(self):
        if not self.function_nodes:
            raise ValidationError("topology has no function nodes")
        if len(self.chain) != len(self.chains):
            raise ValidationError("duplicate chain id")
        if len(self.flow) != len(self.flows):
            raise ValidationError("duplicate flow id")
        owner = {}
        for c in self.chains:
            for v in c.vnf_sequence:
                if v not in self.catalog:
                    raise ValidationError(f"chain {c.id}: unknown vnf type {v}")
            for fid in c.member_flows:
                if fid not in self.flow:
                    raise ValidationError(f"chain {c.id}: unknown flow {fid}")
                if fid in owner:
                    raise ValidationError(f"flow {fid} assigned to chains {owner[fid]} and {c.id}")
                owner[fid] = c.id
        flows = []
        for f in self.flows:
            if f.id not in owner:
                raise ValidationError(f"flow {f.id} is not assigned to any chain")
            for end in (f.src, f.dst):
                if end not in self.topology.node:
                    raise ValidationError(f"flow {f.id}: unknown node {end}")
            d_q = self.chain[owner[f.id]].max_delay
            if f.max_delay != d_q:
                if not math.isinf(f.max_delay):
                    raise ValidationError(f"flow {f.id}: max_delay differs from its chain's")
                f = replace(f, max_delay=d_q)
            flows.append(f)
        self.flows = tuple(flows)
        self.flow = {f.id: f for f in self.flows}
        self.flow_chain = owner

    def chain_bandwidth(self, chain_id: int, slot: int) -> float:
        return float(self._chain_bw[chain_id][slot % self.horizon])

    @property
    def used_types(self) -> tuple[int, ...]:
        return tuple(sorted({v for c in self.chains for v in c.vnf_sequence}))

    @cached_property
    def ecost_max(self) -> float:
        if self.config.ecost_max is not None:
            return self.config.ecost_max
        nodes = self.function_nodes
        lam_i = sum(self.topology.node[i].node_energy for i in nodes)
        lam_v = max(v.vm_energy for v in self.catalog.values())
        return lam_i + len(nodes) * len(self.catalog) * lam_v

    def action_count(self, chain_id: int) -> int:
        return action_space_size(self.chain[chain_id].length, len(self.function_nodes))

    def with_config(self, config: ExperimentConfig) -> "Problem":
        return Problem(self.topology, self.catalog.values(), self.chains, self.flows, config)


def action_space_size(chain_length: int, n_nodes: int) -> int:
    """Moves of one VNF to one of the other nodes, plus the no-op."""
    return chain_length * (n_nodes - 1) + 1


def joint_action_space_size(chain_lengths: Iterable[int], n_nodes: int) -> int:
    return math.prod(action_space_size(g, n_nodes) for g in chain_lengths)


# --- loaders ---------------------------------------------------------------

def _records(text: str):
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield lineno, line


def _fields(line, n, lineno, path, what):
    parts = [p.strip() for p in line.split(",")]
    if len(parts) != n:
        raise ParseError(f"expected {n} fields for {what}, got {len(parts)}", path, lineno)
    return parts


def _number(tok, lineno, path, kind=float):
    try:
        return kind(tok)
    except ValueError:
        raise ParseError(f"bad number {tok!r}", path, lineno) from None


def _flag(tok, lineno, path):
    t = tok.lower()
    if t in ("1", "true", "yes"):
        return True
    if t in ("0", "false", "no"):
        return False
    raise ParseError(f"bad flag {tok!r}", path, lineno)


def parse_topology(text: str, path=None, n_function_nodes: int | None = None) -> Topology:
    section = None
    nodes, links = [], []
    seen = set()
    for lineno, line in _records(text):
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip().lower()
            if section not in ("nodes", "links"):
                raise ParseError(f"unknown section [{section}]", path, lineno)
            continue
        if section is None:
            raise ParseError("data before first section header", path, lineno)
        try:
            if section == "nodes":
                i, cap, lam, fn = _fields(line, 4, lineno, path, "node")
                nid = _number(i, lineno, path, int)
                if nid in seen:
                    raise ParseError(f"duplicate node {nid}", path, lineno)
                seen.add(nid)
                nodes.append(PhysicalNode(nid, _number(cap, lineno, path),
                                          _number(lam, lineno, path), _flag(fn, lineno, path)))
            else:
                i, j, d = _fields(line, 3, lineno, path, "link")
                links.append(PhysicalLink(_number(i, lineno, path, int),
                                          _number(j, lineno, path, int), _number(d, lineno, path)))
        except ParseError:
            raise
        except ValidationError as exc:
            raise ParseError(str(exc), path, lineno) from None
    topo = Topology(tuple(nodes), tuple(links))
    if n_function_nodes is not None:
        topo = select_function_nodes(topo, n_function_nodes)
    return topo


def load_topology(path, n_function_nodes: int | None = None) -> Topology:
    """Read a topology file.  ``n_function_nodes`` overrides the file's flags
    with the top-k nodes by degree."""
    path = Path(path)
    return parse_topology(path.read_text(), path, n_function_nodes)


def select_function_nodes(topology: Topology, k: int) -> Topology:
    """Mark the ``k`` highest-degree nodes as function nodes (ties: lower id)."""
    if not 0 < k <= len(topology.nodes):
        raise ValidationError(f"cannot select {k} function nodes from {len(topology.nodes)}")
    ranked = sorted(topology.nodes, key=lambda n: (-topology.degree(n.id), n.id))
    chosen = {n.id for n in ranked[:k]}
    nodes = tuple(replace(n, is_function_node=n.id in chosen) for n in topology.nodes)
    return Topology(nodes, topology.links)


def _num(x: float) -> str:
    return repr(int(x)) if float(x).is_integer() else repr(float(x))


def dump_topology(topology: Topology) -> str:
    lines = ["[nodes]"]
    for n in sorted(topology.nodes, key=lambda n: n.id):
        lines.append(f"{n.id},{_num(n.capacity)},{_num(n.node_energy)},{int(n.is_function_node)}")
    lines.append("[links]")
    for link in sorted(topology.links, key=lambda l: (min(l.i, l.j), max(l.i, l.j))):
        lines.append(f"{min(link.i, link.j)},{max(link.i, link.j)},{_num(link.prop_delay)}")
    return "\n".join(lines) + "\n"


def normalize_topology(topology: Topology) -> Topology:
    """Canonical form: nodes by id, links with i < j sorted."""
    return parse_topology(dump_topology(topology))


def write_topology(topology: Topology, path) -> None:
    Path(path).write_text(dump_topology(topology))


def parse_catalog(text: str, path=None) -> tuple[VnfType, ...]:
    out, seen = [], set()
    for lineno, line in _records(text):
        parts = _fields(line, 6, lineno, path, "vnf type")
        vid = _number(parts[0], lineno, path, int)
        if vid in seen:
            raise ParseError(f"duplicate vnf type {vid}", path, lineno)
        seen.add(vid)
        try:
            out.append(VnfType(vid, *(_number(p, lineno, path) for p in parts[1:])))
        except ValidationError as exc:
            raise ParseError(str(exc), path, lineno) from None
    if not out:
        raise ParseError("empty catalog", path)
    return tuple(out)


def load_catalog(path) -> tuple[VnfType, ...]:
    path = Path(path)
    return parse_catalog(path.read_text(), path)


def dump_catalog(catalog: Iterable[VnfType]) -> str:
    return "".join(
        f"{v.id},{_num(v.proc_coeff)},{_num(v.config_delay)},{_num(v.deploy_delay)},"
        f"{_num(v.deploy_cost)},{_num(v.vm_energy)}\n"
        for v in sorted(catalog, key=lambda v: v.id))


def parse_trace(text: str, path=None) -> dict[int, tuple[float, ...]]:
    """Rows ``flow_id,slot,bandwidth`` -> per-flow series.  Slots start at 0
    and must be contiguous for every flow."""
    raw: dict[int, dict[int, float]] = {}
    for lineno, line in _records(text):
        f, t, b = _fields(line, 3, lineno, path, "trace row")
        fid, slot, bw = _number(f, lineno, path, int), _number(t, lineno, path, int), _number(b, lineno, path)
        if bw < 0:
            raise ParseError(f"negative bandwidth for flow {fid}", path, lineno)
        if slot < 0:
            raise ParseError(f"negative slot {slot}", path, lineno)
        series = raw.setdefault(fid, {})
        if slot in series:
            raise ParseError(f"duplicate row for flow {fid} slot {slot}", path, lineno)
        series[slot] = bw
    out = {}
    for fid, series in sorted(raw.items()):
        n = max(series) + 1
        missing = [t for t in range(n) if t not in series]
        if missing:
            raise ParseError(f"flow {fid}: missing slot {missing[0]}", path)
        out[fid] = tuple(series[t] for t in range(n))
    if not out:
        raise ParseError("empty trace", path)
    return out


def load_trace(path) -> dict[int, tuple[float, ...]]:
    path = Path(path)
    return parse_trace(path.read_text(), path)


def dump_trace(flows: Iterable[Flow]) -> str:
    return "".join(f"{f.id},{t},{_num(b)}\n" for f in flows for t, b in enumerate(f.bandwidth_trace))


# --- traffic ---------------------------------------------------------------

PROFILES = ("sinusoid", "step", "trace")


def generate_traffic(profile: str, n_flows: int, slots: int, seed: int = 0, *,
                     nodes: Sequence[int] = (0,), service_types: Sequence[str] = ("0",),
                     amplitude: float = 1.0, depth: float = 0.5, period: int | None = None,
                     step_at: int = 0, base: float = 0.0, trace_path=None) -> list[Flow]:
    """Synthetic per-flow, per-slot bandwidth traces.

    ``step``: ``base`` before ``step_at``, ``amplitude`` from then on.
    ``sinusoid``: per-flow mean drawn in [0.5, 1.5]*amplitude, modulated by
    ``1 + depth*sin(2*pi*t/period + phase)`` with a random phase.
    ``trace``: series read from ``trace_path``; the first ``n_flows`` flow ids
    are used.  Endpoints are drawn uniformly from ``nodes`` and service types
    are dealt round-robin.
    """
    if profile not in PROFILES:
        raise ModelError(f"unknown traffic profile {profile!r}")
    if n_flows <= 0 or slots <= 0:
        raise ModelError("n_flows and slots must be > 0")
    rng = np.random.default_rng(seed)
    nodes = list(nodes)
    ends = rng.integers(0, len(nodes), size=(n_flows, 2))
    if profile == "trace":
        if trace_path is None:
            raise ModelError("trace profile needs trace_path")
        series = load_trace(trace_path)
        if len(series) < n_flows:
            raise ModelError(f"trace has {len(series)} flows, {n_flows} requested")
        ids = sorted(series)[:n_flows]
        traces = [series[i] for i in ids]
    elif profile == "step":
        ids = list(range(n_flows))
        traces = [tuple(base if t < step_at else amplitude for t in range(slots))] * n_flows
    else:
        ids = list(range(n_flows))
        period = period or slots
        means = amplitude * rng.uniform(0.5, 1.5, size=n_flows)
        phases = rng.uniform(0, 2 * np.pi, size=n_flows)
        t = np.arange(slots)
        traces = []
        for k in range(n_flows):
            bw = means[k] * (1 + depth * np.sin(2 * np.pi * t / period + phases[k]))
            traces.append(tuple(float(x) for x in np.maximum(bw, 0.0)))
    return [Flow(fid, nodes[ends[k, 0]], nodes[ends[k, 1]], tuple(float(b) for b in traces[k]),
                 service_type=service_types[k % len(service_types)])
            for k, fid in enumerate(ids)]


def assign_flows_to_chains(flows: Sequence[Flow], chains: Sequence[ServiceChain]):
    """Partition flows over chains by service type.

    Returns ``(chains, flows)`` with ``member_flows`` filled in and each
    flow's ``max_delay`` set to its chain's.
    """
    by_kind: dict[str, list[ServiceChain]] = {}
    for c in chains:
        by_kind.setdefault(c.kind, []).append(c)
    members: dict[int, list[int]] = {c.id: [] for c in chains}
    new_flows = []
    for f in flows:
        matches = by_kind.get(f.service_type, [])
        if len(matches) != 1:
            what = "no" if not matches else "multiple"
            raise ModelError(f"flow {f.id}: {what} chain for service type {f.service_type!r}")
        c = matches[0]
        members[c.id].append(f.id)
        new_flows.append(replace(f, max_delay=c.max_delay))
    new_chains = [replace(c, member_flows=tuple(members[c.id])) for c in chains]
    return new_chains, new_flows


def build_chains(catalog: Sequence[VnfType], count: int, length: int | Sequence[int],
                 max_delay: float) -> list[ServiceChain]:
    """Chains ``0..count-1``; VNF ``m`` of chain ``q`` gets catalog entry ``(q + m) mod |F|``."""
    ids = sorted(v.id for v in catalog)
    lengths = [length] * count if isinstance(length, int) else list(length)
    if len(lengths) != count:
        raise ModelError("one length per chain required")
    return [ServiceChain(q, tuple(ids[(q + m) % len(ids)] for m in range(lengths[q])),
                         max_delay, service_type=str(q))
            for q in range(count)]
