"""Objective terms: energy, migration data, reconfiguration, penalty, reward.

Migration terms compare two states of the same slot.  The instance flags
``x`` are read from ``prev`` (before the slot's deployments), so moving onto
a node without an instance of the type pays the deployment delay and cost.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

from .model import ExperimentConfig
from .state import (NetworkState, ResourceReport, compute_resources, end_to_end_delay,
                    overload_degree, path_edges)


@dataclass
class CostBreakdown:
    slot: int
    ecost: float
    penalty: float
    ncost: dict[int, float] = field(default_factory=dict)
    rcost: dict[int, float] = field(default_factory=dict)
    mcost: dict[int, float] = field(default_factory=dict)
    reward: dict[int, float] = field(default_factory=dict)
    overload: float = 0.0
    migrations: int = 0

    def objective(self, config: ExperimentConfig, with_penalty: bool = False) -> float:
        """Per-slot term of the long-term cost, optionally plus the weighted penalty."""
        value = config.alpha_c * self.ecost + config.beta_c * sum(self.mcost.values())
        if with_penalty:
            value += config.gamma_c * self.penalty
        return value


def energy_cost(state: NetworkState) -> float:
    """Basic energy: ``lambda_i`` per node with any active VM plus ``lambda_v``
    per active VM."""
    problem = state.problem
    vms = state.active_vms()
    nodes = {i for i, _ in vms}
    return (sum(problem.topology.node[i].node_energy for i in nodes)
            + sum(problem.catalog[v].vm_energy for _, v in vms))


def migration_data_cost(prev: NetworkState, state: NetworkState, chain_id: int) -> float:
    problem = prev.problem
    chain = problem.chain[chain_id]
    half_bw = problem.chain_bandwidth(chain_id, state.slot) / 2
    total = 0.0
    for m, (old, new) in enumerate(zip(prev.placement[chain_id], state.placement[chain_id])):
        if old == new:
            continue
        v = chain.vnf_sequence[m]
        vnf = problem.catalog[v]
        # |y^t - y^{t-1}| = 1 at both the source and the target node
        for node in (old, new):
            x = (node, v) in prev.deployed
            total += half_bw * (vnf.config_delay + (0.0 if x else vnf.deploy_delay))
    return total


def reconfig_cost(prev: NetworkState, state: NetworkState, chain_id: int) -> float:
    problem = prev.problem
    chain = problem.chain[chain_id]
    total = 0.0
    for m, (old, new) in enumerate(zip(prev.placement[chain_id], state.placement[chain_id])):
        if old == new:
            continue
        v = chain.vnf_sequence[m]
        for node in (old, new):
            if (node, v) not in prev.deployed:
                total += 0.5 * problem.catalog[v].deploy_cost
    for k in range(chain.length - 1):
        before = path_edges(prev.routes[(chain_id, k)])
        after = path_edges(state.routes[(chain_id, k)])
        total += 0.5 * len(before ^ after)
    return total


def migration_overhead(prev: NetworkState, state: NetworkState, chain_id: int,
                       config: ExperimentConfig | None = None) -> float:
    config = config or prev.problem.config
    if prev.placement[chain_id] == state.placement[chain_id]:
        return 0.0
    return (config.beta_n * migration_data_cost(prev, state, chain_id)
            + config.beta_r * reconfig_cost(prev, state, chain_id))


def ramp(x: float) -> float:
    return x if x > 0 else 0.0


def penalty(state: NetworkState, resources: ResourceReport | None = None) -> float:
    """Relative deadline excess summed over flows, plus packet loss."""
    if resources is None:
        resources = compute_resources(state)
    delay_term = 0.0
    for f in state.problem.flows:
        delay_term += ramp((end_to_end_delay(state, f.id) - f.max_delay) / f.max_delay)
    return delay_term + ramp(resources.packet_loss)


def reward_value(ecost: float, mcost_q: float, p: float, config: ExperimentConfig,
                 ecost_max: float) -> float:
    """Piecewise reward; at or above the overload threshold the energy term
    is replaced by its maximum.  ``p == 0`` takes the lower branch."""
    energy = ecost if p < config.rho else ecost_max
    return -(config.alpha_c * energy + config.beta_c * mcost_q + config.gamma_c * p)


def reward(chain_id: int, prev: NetworkState, state: NetworkState,
           config: ExperimentConfig | None = None,
           resources: ResourceReport | None = None) -> float:
    config = config or state.problem.config
    return reward_value(energy_cost(state), migration_overhead(prev, state, chain_id, config),
                        penalty(state, resources), config, state.problem.ecost_max)


def slot_breakdown(prev: NetworkState, state: NetworkState,
                   resources: ResourceReport | None = None) -> CostBreakdown:
    """All cost terms of the move from ``prev`` to ``state`` (same slot)."""
    problem = state.problem
    config = problem.config
    if resources is None:
        resources = compute_resources(state)
    ecost = energy_cost(state)
    p = penalty(state, resources)
    out = CostBreakdown(state.slot, ecost, p, overload=overload_degree(state, resources))
    for c in problem.chains:
        moved = prev.placement[c.id] != state.placement[c.id]
        n = migration_data_cost(prev, state, c.id) if moved else 0.0
        r = reconfig_cost(prev, state, c.id) if moved else 0.0
        out.ncost[c.id] = n
        out.rcost[c.id] = r
        out.mcost[c.id] = config.beta_n * n + config.beta_r * r
        out.reward[c.id] = reward_value(ecost, out.mcost[c.id], p, config, problem.ecost_max)
        out.migrations += sum(a != b for a, b in zip(prev.placement[c.id], state.placement[c.id]))
    return out


def total_cost(breakdowns: Iterable[CostBreakdown], config: ExperimentConfig) -> float:
    return sum(b.objective(config) for b in breakdowns)


COST_LOG_HEADER = "slot,chain,ecost,ncost,rcost,mcost,penalty,reward"


def cost_log_lines(breakdown: CostBreakdown) -> list[str]:
    b = breakdown
    return [f"{b.slot},{q},{b.ecost!r},{b.ncost[q]!r},{b.rcost[q]!r},{b.mcost[q]!r},{b.penalty!r},{b.reward[q]!r}"
            for q in sorted(b.mcost)]
