"""Monitor and successive decision framework.

Each slot the chains are ranked by overload probability, each subagent in
turn decides on a snapshot that already contains the decisions of the
agents ranked before it, and the concatenated strategy is then applied to
the real network in the same order.  Training stops once the episode
rewards of every subagent have settled.
"""
from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .agent import (AgentConfig, Subagent, encode_action, index_to_action, select_action,
                    train_step)
from .cost import CostBreakdown, reward, reward_value, slot_breakdown
from .errors import StaleStrategyError
from .model import Problem
from .state import (MigrationAction, NetworkState, ResourceReport, apply_action,
                    chain_overload_prob, compute_resources, end_slot, initial_placement,
                    observe, snapshot)

log = logging.getLogger(__name__)


def sort_chains(state: NetworkState, resources: ResourceReport) -> list[int]:
    """Chain ids by descending overload probability, ties by ascending id."""
    probs = {c.id: chain_overload_prob(state, c.id, resources) for c in state.problem.chains}
    return sorted(probs, key=lambda q: (-probs[q], q))


@dataclass(frozen=True)
class JointStrategy:
    actions: tuple[MigrationAction, ...]
    indices: tuple[int, ...]
    fingerprint: str

    @property
    def order(self) -> tuple[int, ...]:
        return tuple(a.chain for a in self.actions)

    def action_of(self, chain_id: int) -> MigrationAction:
        return next(a for a in self.actions if a.chain == chain_id)


@dataclass
class PlannedStep:
    chain: int
    observation: np.ndarray
    action: int
    reward: float                 # evaluated on the intermediate snapshot
    next_observation: np.ndarray
    loss: float | None = None


class ConvergenceMonitor:
    """Sliding-window variance of episode rewards, per agent."""

    def __init__(self, agents, window: int = 50, threshold: float = 1.0):
        if window < 2:
            raise ValueError("window must be >= 2")
        self.window = window
        self.threshold = threshold
        self.history = {a: deque(maxlen=window) for a in agents}
        self.aggregate = deque(maxlen=window)

    def push(self, rewards: dict) -> bool:
        for a, r in rewards.items():
            self.history[a].append(r)
        self.aggregate.append(sum(rewards.values()))
        return self.converged

    def variances(self) -> dict:
        return {a: float(np.var(h)) for a, h in self.history.items() if len(h) >= 2}

    @property
    def converged(self) -> bool:
        if any(len(h) < self.window for h in self.history.values()):
            return False
        return all(v <= self.threshold for v in self.variances().values())


@dataclass(frozen=True)
class MsdfConfig:
    episode_cap: int = 500
    window: int = 50
    variance_threshold: float = 1.0
    resort_every_slot: bool = True
    train_steps: int = 1          # gradient steps per decision once the buffer is warm
    stop_on_convergence: bool = True


@dataclass
class EpisodeMetrics:
    episode: int
    rewards: dict[int, float]
    total_cost: float
    migrations: int
    overload: float
    ecost: float
    penalty: float
    exploit: float

    @property
    def reward(self) -> float:
        return sum(self.rewards.values())


@dataclass
class SlotRecord:
    episode: int
    breakdown: CostBreakdown
    actions: dict[int, str]


@dataclass
class RunResult:
    episodes: list[EpisodeMetrics] = field(default_factory=list)
    slots: list[SlotRecord] = field(default_factory=list)
    converged_at: int | None = None
    action_space: dict[int, int] = field(default_factory=dict)

    @property
    def converged(self) -> bool:
        return self.converged_at is not None


METRICS_HEADER = "episode,slot,chain,action,reward,ecost,mcost,penalty,migrated"
EPISODE_HEADER = "episode,total_cost,migrations,overload,ecost,penalty,reward,exploit"


def slot_lines(record: SlotRecord) -> list[str]:
    b = record.breakdown
    return [f"{record.episode},{b.slot},{q},{record.actions[q]},{b.reward[q]!r},{b.ecost!r},"
            f"{b.mcost[q]!r},{b.penalty!r},{int(record.actions[q] != 'noop')}"
            for q in sorted(b.reward)]


def episode_line(m: EpisodeMetrics) -> str:
    return (f"{m.episode},{m.total_cost!r},{m.migrations},{m.overload!r},{m.ecost!r},"
            f"{m.penalty!r},{m.reward!r},{m.exploit!r}")


def _episode_metrics(problem: Problem, episode: int, breakdowns: list[CostBreakdown],
                     rewards: dict, exploit: float) -> EpisodeMetrics:
    cfg = problem.config
    return EpisodeMetrics(
        episode, rewards,
        total_cost=sum(b.objective(cfg) for b in breakdowns),
        migrations=sum(b.migrations for b in breakdowns),
        overload=sum(b.overload for b in breakdowns),
        ecost=sum(b.ecost for b in breakdowns),
        penalty=sum(b.penalty for b in breakdowns),
        exploit=exploit)


class Msdf:
    """One subagent per chain plus the successive planning loop."""

    def __init__(self, problem: Problem, agent_config: AgentConfig | None = None,
                 config: MsdfConfig | None = None, seed: int | None = None):
        self.problem = problem
        self.agent_config = agent_config or AgentConfig()
        self.config = config or MsdfConfig()
        seed = self.agent_config.seed if seed is None else seed
        streams = np.random.SeedSequence(seed).spawn(len(problem.chains) + 1)
        n_nodes = len(problem.function_nodes)
        self.subagents = {}
        for c, ss in zip(problem.chains, streams):
            self.subagents[c.id] = Subagent(c.id, c.length + n_nodes, problem.action_count(c.id),
                                            self.agent_config, np.random.default_rng(ss))
        self.explore_rng = np.random.default_rng(streams[-1])
        self._fixed_order = None

    @property
    def action_space(self) -> dict[int, int]:
        return {q: a.n_actions for q, a in self.subagents.items()}

    def order(self, state: NetworkState, resources: ResourceReport) -> list[int]:
        if self.config.resort_every_slot or self._fixed_order is None:
            self._fixed_order = sort_chains(state, resources)
        return list(self._fixed_order)

    def plan_joint(self, real_state: NetworkState, order=None, *, exploit: float | None = None,
                   train: bool = True, with_rewards: bool = True):
        """Successive decisions on a snapshot of ``real_state``.

        Returns the strategy and one :class:`PlannedStep` per chain, in
        decision order.  ``real_state`` is not modified.
        """
        start = snapshot(real_state)
        sim = start
        resources = compute_resources(sim)
        if order is None:
            order = self.order(sim, resources)
        actions, indices, steps = [], [], []
        for q in order:
            agent = self.subagents[q]
            obs = observe(sim, q, resources).vector()
            idx = select_action(agent, obs, self.explore_rng, exploit)
            loss = None
            if train and agent.ready():
                for _ in range(self.config.train_steps):
                    loss = train_step(agent)
            action = encode_action(sim, q, idx)
            sim = apply_action(sim, action)
            if not action.is_noop:
                resources = compute_resources(sim)
            r = reward(q, start, sim, resources=resources) if with_rewards else math.nan
            steps.append(PlannedStep(q, obs, idx, r, observe(sim, q, resources).vector(), loss))
            actions.append(action)
            indices.append(idx)
        return JointStrategy(tuple(actions), tuple(indices), real_state.fingerprint()), steps

    def apply_joint(self, real_state: NetworkState, strategy: JointStrategy):
        """Apply the strategy in its planned order; returns the new state
        (same slot) and the slot's cost breakdown with real per-chain rewards."""
        if strategy.fingerprint != real_state.fingerprint():
            raise StaleStrategyError("network state changed since the strategy was planned")
        state = real_state
        for action in strategy.actions:
            state = apply_action(state, action)
        return state, slot_breakdown(real_state, state)

    def run_episode(self, episode: int, *, learn: bool = True, exploit: float | None = None,
                    result: RunResult | None = None) -> EpisodeMetrics:
        problem = self.problem
        if exploit is None:
            exploit = self.agent_config.exploitation(episode, self.config.episode_cap)
        for a in self.subagents.values():
            a.exploit = exploit
        state = initial_placement(problem)
        rewards = {q: 0.0 for q in self.subagents}
        breakdowns = []
        for _ in range(problem.config.slots):
            resources = compute_resources(state)
            order = self.order(state, resources)
            strategy, steps = self.plan_joint(state, order, exploit=exploit, train=learn,
                                              with_rewards=False)
            applied, breakdown = self.apply_joint(state, strategy)
            nxt = end_slot(applied)
            if learn:
                nxt_res = compute_resources(nxt)
                for step in steps:
                    s_next = observe(nxt, step.chain, nxt_res).vector()
                    self.subagents[step.chain].remember(step.observation, step.action,
                                                        breakdown.reward[step.chain], s_next)
            for q, r in breakdown.reward.items():
                rewards[q] += r
            breakdowns.append(breakdown)
            if result is not None:
                result.slots.append(SlotRecord(episode, breakdown,
                                               {a.chain: str(a) for a in strategy.actions}))
            state = nxt
        return _episode_metrics(problem, episode, breakdowns, rewards, exploit)

    def run(self, record_slots: bool = False) -> RunResult:
        """Train until the monitor fires or the episode cap is reached."""
        cfg = self.config
        monitor = ConvergenceMonitor(self.subagents, cfg.window, cfg.variance_threshold)
        result = RunResult(action_space=self.action_space)
        for ep in range(cfg.episode_cap):
            m = self.run_episode(ep, result=result if record_slots else None)
            result.episodes.append(m)
            if monitor.push(m.rewards) and result.converged_at is None:
                result.converged_at = ep
                if cfg.stop_on_convergence:
                    break
        if result.converged_at is None:
            log.warning("MSDF did not converge within %d episodes", cfg.episode_cap)
        return result

    def evaluate(self, episode: int = -1, result: RunResult | None = None) -> EpisodeMetrics:
        """One greedy episode without learning."""
        return self.run_episode(episode, learn=False, exploit=1.0, result=result)

    def decide(self, state: NetworkState, resources: ResourceReport) -> list[MigrationAction]:
        """Greedy joint decision, usable as a policy by the harness."""
        strategy, _ = self.plan_joint(state, exploit=1.0, train=False, with_rewards=False)
        return list(strategy.actions)


class JointAgent:
    """Single DQN over the full joint action space; the comparison point for
    the decomposition.  Uses the same hyperparameters and episode loop."""

    def __init__(self, problem: Problem, agent_config: AgentConfig | None = None,
                 config: MsdfConfig | None = None, seed: int | None = None):
        self.problem = problem
        self.agent_config = agent_config or AgentConfig()
        self.config = config or MsdfConfig()
        seed = self.agent_config.seed if seed is None else seed
        init_ss, explore_ss = np.random.SeedSequence(seed).spawn(2)
        self.radix = [problem.action_count(c.id) for c in problem.chains]
        n_inputs = sum(c.length for c in problem.chains) + len(problem.function_nodes)
        self.agent = Subagent(-1, n_inputs, math.prod(self.radix), self.agent_config,
                              np.random.default_rng(init_ss))
        self.explore_rng = np.random.default_rng(explore_ss)

    def observation(self, state: NetworkState, resources: ResourceReport) -> np.ndarray:
        parts = [observe(state, c.id, resources) for c in self.problem.chains]
        vec = np.concatenate([p.vnf_loads for p in parts] + [parts[0].node_headroom])
        return np.clip(vec, -1.0, 1.0)

    def split(self, index: int) -> list[int]:
        """Joint index to per-chain indices (last chain varies fastest)."""
        out = []
        for r in reversed(self.radix):
            index, k = divmod(index, r)
            out.append(k)
        return out[::-1]

    def actions(self, state: NetworkState, index: int) -> list[MigrationAction]:
        fn = self.problem.function_nodes
        return [index_to_action(c.id, k, state.placement[c.id], fn)
                for c, k in zip(self.problem.chains, self.split(index))]

    def run_episode(self, episode: int, *, learn: bool = True, exploit: float | None = None):
        problem = self.problem
        if exploit is None:
            exploit = self.agent_config.exploitation(episode, self.config.episode_cap)
        self.agent.exploit = exploit
        state = initial_placement(problem)
        total_reward = 0.0
        breakdowns = []
        for _ in range(problem.config.slots):
            resources = compute_resources(state)
            obs = self.observation(state, resources)
            idx = select_action(self.agent, obs, self.explore_rng, exploit)
            if learn and self.agent.ready():
                for _ in range(self.config.train_steps):
                    train_step(self.agent)
            applied = state
            for action in self.actions(state, idx):
                applied = apply_action(applied, action)
            b = slot_breakdown(state, applied)
            r = reward_value(b.ecost, sum(b.mcost.values()), b.penalty, problem.config,
                             problem.ecost_max)
            nxt = end_slot(applied)
            if learn:
                self.agent.remember(obs, idx, r, self.observation(nxt, compute_resources(nxt)))
            total_reward += r
            breakdowns.append(b)
            state = nxt
        return _episode_metrics(problem, episode, breakdowns, {"joint": total_reward}, exploit)

    def run(self) -> RunResult:
        cfg = self.config
        monitor = ConvergenceMonitor(["joint"], cfg.window, cfg.variance_threshold)
        result = RunResult(action_space={-1: self.agent.n_actions})
        for ep in range(cfg.episode_cap):
            m = self.run_episode(ep)
            result.episodes.append(m)
            if monitor.push(m.rewards) and result.converged_at is None:
                result.converged_at = ep
                if cfg.stop_on_convergence:
                    break
        return result
