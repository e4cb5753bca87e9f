"""Comparison policies sharing the state and cost machinery.

``greedy_step`` and ``rm_step`` are reconstructions from short prose
descriptions of the original heuristics: Greedy relieves the most
overloaded node, RM chases end-to-end delay under node capacity.
``oracle_step`` enumerates every joint single-slot decision.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .agent import index_to_action
from .cost import slot_breakdown
from .errors import BaselineError
from .model import ExperimentConfig
from .state import (MigrationAction, NetworkState, ResourceReport, apply_action,
                    compute_resources, node_loads, placement_delays, vnf_demand)


@dataclass(frozen=True)
class PolicyDecision:
    actions: tuple[MigrationAction, ...]

    def __iter__(self):
        return iter(self.actions)

    @property
    def migrations(self) -> int:
        return sum(not a.is_noop for a in self.actions)


def _decision(state: NetworkState, chosen: dict[int, MigrationAction]) -> PolicyDecision:
    return PolicyDecision(tuple(chosen.get(c.id, MigrationAction.noop(c.id))
                                for c in state.problem.chains))


def _meets_deadline(state: NetworkState, chain_id: int, nodes) -> bool:
    limit = state.problem.chain[chain_id].max_delay
    return all(d <= limit for d in placement_delays(state.problem, chain_id, nodes).values())


def greedy_step(state: NetworkState, resources: ResourceReport | None = None,
                all_overloaded: bool = False) -> PolicyDecision:
    """Move the biggest VNFs off the most overloaded node.

    VNFs on that node are taken by descending demand; each goes to the
    node with the most remaining capacity that can absorb it without
    exceeding capacity and keeps every flow of its chain within deadline.
    Stops once the node is no longer overloaded.  With ``all_overloaded``
    every overloaded node is processed, worst first.
    """
    problem = state.problem
    if resources is None:
        resources = compute_resources(state)
    cap = {i: problem.topology.node[i].capacity for i in problem.function_nodes}
    load = node_loads(state, resources)
    hot = sorted((i for i in cap if load[i] > cap[i]), key=lambda i: (-load[i] / cap[i], i))
    if not all_overloaded:
        hot = hot[:1]
    chosen: dict[int, MigrationAction] = {}
    for node in hot:
        vnfs = [(vnf_demand(problem, q, m, state.slot), q, m)
                for q, nodes in sorted(state.placement.items())
                for m, i in enumerate(nodes) if i == node]
        vnfs.sort(key=lambda t: (-t[0], t[1], t[2]))
        for d, q, m in vnfs:
            if load[node] <= cap[node]:
                break
            if q in chosen:
                continue
            best = None
            for j in problem.function_nodes:
                if j == node or load[j] + d > cap[j]:
                    continue
                nodes = list(state.placement[q])
                nodes[m] = j
                if not _meets_deadline(state, q, nodes):
                    continue
                if best is None or cap[j] - load[j] > cap[best] - load[best]:
                    best = j
            if best is not None:
                chosen[q] = MigrationAction(q, m, best)
                load[node] -= d
                load[best] += d
    return _decision(state, chosen)


def rm_step(state: NetworkState, resources: ResourceReport | None = None) -> PolicyDecision:
    """Real-time delay chasing.  Per chain (ascending id) find the placement
    minimising bandwidth-weighted flow delay at the current slot rates,
    searching every assignment of its VNFs to function nodes whose load
    would stay within capacity (ties: lexicographically smallest).  If it
    strictly beats the current placement, move the one VNF whose single
    move toward that placement gives the lowest weighted delay (one VNF
    per chain per slot)."""
    problem = state.problem
    if resources is None:
        resources = compute_resources(state)
    fn = problem.function_nodes
    cap = {i: problem.topology.node[i].capacity for i in fn}
    load = node_loads(state, resources)
    chosen: dict[int, MigrationAction] = {}

    def weighted(q, nodes):
        return sum(problem.flow[f].bandwidth(state.slot) * d
                   for f, d in placement_delays(problem, q, nodes).items())

    for c in problem.chains:
        current = state.placement[c.id]
        demand = [vnf_demand(problem, c.id, m, state.slot) for m in range(c.length)]
        base = dict(load)
        for m, i in enumerate(current):
            base[i] -= demand[m]
        now = weighted(c.id, current)
        best_delay, target = now, None
        for nodes in itertools.product(fn, repeat=c.length):
            extra: dict[int, float] = {}
            for m, j in enumerate(nodes):
                extra[j] = extra.get(j, 0.0) + demand[m]
            if any(base[j] + e > cap[j] + 1e-12 for j, e in extra.items()):
                continue
            total = weighted(c.id, nodes)
            if total < best_delay - 1e-12:
                best_delay, target = total, nodes
        if target is None:
            continue
        step = None
        for m in range(c.length):
            if target[m] == current[m]:
                continue
            nodes = list(current)
            nodes[m] = target[m]
            total = weighted(c.id, nodes)
            if step is None or total < step[0] - 1e-12:
                step = (total, m, target[m])
        _, m, j = step
        chosen[c.id] = MigrationAction(c.id, m, j)
        load[current[m]] -= demand[m]
        load[j] += demand[m]
    return _decision(state, chosen)


def random_step(state: NetworkState, rng: np.random.Generator) -> PolicyDecision:
    problem = state.problem
    chosen = {}
    for c in problem.chains:
        idx = int(rng.integers(problem.action_count(c.id)))
        chosen[c.id] = index_to_action(c.id, idx, state.placement[c.id], problem.function_nodes)
    return _decision(state, chosen)


def apply_decision(state: NetworkState, decision) -> NetworkState:
    for action in decision:
        state = apply_action(state, action)
    return state


def oracle_step(state: NetworkState, config: ExperimentConfig | None = None,
                cap: int = 10**6, with_penalty: bool = True):
    """Exhaustive search over joint single-slot decisions.

    Minimises ``alpha_c*ECOST + beta_c*MCOST`` (plus ``gamma_c*P`` when
    ``with_penalty``) of the resulting state; ties go to the
    lexicographically smallest tuple of action indices.  Returns the
    decision and its objective value.
    """
    problem = state.problem
    config = config or problem.config
    sizes = [problem.action_count(c.id) for c in problem.chains]
    space = math.prod(sizes)
    if space > cap:
        raise BaselineError(f"joint action space {space} exceeds enumeration cap {cap}")
    fn = problem.function_nodes
    options = [[index_to_action(c.id, k, state.placement[c.id], fn) for k in range(n)]
               for c, n in zip(problem.chains, sizes)]
    best_value, best = math.inf, None
    for combo in itertools.product(*options):
        after = apply_decision(state, combo)
        value = slot_breakdown(state, after).objective(config, with_penalty)
        if value < best_value:
            best_value, best = value, combo
    return PolicyDecision(tuple(best)), best_value
