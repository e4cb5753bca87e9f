"""Scenario files, policy runs, sweeps and comparisons.

A scenario is an INI file::

    [scenario]   topology, catalog, function_nodes, policy, episodes, output_dir, seed
    [traffic]    profile, n_flows, slots, amplitude, depth, period, step_at, base, trace, endpoints
    [chains]     count, length, max_delay
    [experiment] ExperimentConfig fields
    [agent]      AgentConfig fields
    [msdf]       MsdfConfig fields

Relative paths resolve against the scenario file, then against the bundled
``data`` directory.  The master seed is split with ``numpy.random.SeedSequence``
into two children: child 0 drives traffic generation, child 1 the learning
agents (which split it again into network init and exploration streams).
``random`` draws its decisions from child 1 as well.
"""
from __future__ import annotations

import configparser
import dataclasses
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import baselines
from .agent import AgentConfig
from .cost import COST_LOG_HEADER, cost_log_lines, slot_breakdown
from .errors import HarnessError, SfcError
from .model import (ExperimentConfig, Problem, assign_flows_to_chains, build_chains,
                    generate_traffic, load_catalog, load_topology)
from .msdf import (EPISODE_HEADER, METRICS_HEADER, EpisodeMetrics, JointAgent, Msdf, MsdfConfig,
                   RunResult, SlotRecord, _episode_metrics, episode_line, slot_lines)
from .state import compute_resources, end_slot, initial_placement

log = logging.getLogger(__name__)

DATA_DIR = Path(__file__).parent / "data"
POLICIES = ("msdf", "joint", "greedy", "rm", "random", "oracle")
AXES = {"n_flows": ("traffic", "n_flows"), "n_chains": ("chains", "count"),
        "chain_length": ("chains", "length")}


@dataclass(frozen=True)
class TrafficSpec:
    profile: str = "sinusoid"
    n_flows: int = 20
    slots: int = 24
    amplitude: float = 1.0
    depth: float = 0.5
    period: int | None = None
    step_at: int = 0
    base: float = 0.0
    trace: str | None = None
    endpoints: str = "all"        # all | function


@dataclass(frozen=True)
class ChainSpec:
    count: int = 3
    length: int = 3
    max_delay: float = 50.0


@dataclass(frozen=True)
class Scenario:
    topology: str
    catalog: str
    function_nodes: int | None = None
    policy: str = "msdf"
    episodes: int = 300
    output_dir: str | None = None
    seed: int = 0
    traffic: TrafficSpec = field(default_factory=TrafficSpec)
    chains: ChainSpec = field(default_factory=ChainSpec)
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)
    agent: AgentConfig = field(default_factory=AgentConfig)
    msdf: MsdfConfig = field(default_factory=MsdfConfig)
    base_dir: str = "."


# --- scenario files --------------------------------------------------------

def _convert(kind: str, raw: str, where: str):
    raw = raw.strip()
    optional = "None" in kind
    if optional and raw.lower() in ("", "none"):
        return None
    base = kind.replace("| None", "").strip()
    try:
        if base == "int":
            return int(raw)
        if base == "float":
            return float(raw)
        if base == "bool":
            low = raw.lower()
            if low not in ("1", "0", "true", "false", "yes", "no", "on", "off"):
                raise ValueError(raw)
            return low in ("1", "true", "yes", "on")
        if base.startswith("tuple"):
            return tuple(int(x) for x in raw.split(",") if x.strip())
        return raw
    except ValueError:
        raise HarnessError(f"{where}: cannot parse {raw!r} as {base}") from None


def _section(cls, parser, name):
    if not parser.has_section(name):
        return cls()
    kinds = {f.name: f.type for f in dataclasses.fields(cls)}
    values = {}
    for key, raw in parser.items(name):
        if key not in kinds:
            raise HarnessError(f"[{name}] unknown key {key!r}")
        values[key] = _convert(kinds[key], raw, f"[{name}] {key}")
    try:
        return cls(**values)
    except SfcError as exc:
        raise HarnessError(f"[{name}] {exc}") from None


def parse_scenario(text: str, base_dir=".") -> Scenario:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise HarnessError(f"bad scenario file: {exc}") from None
    known = {"scenario", "traffic", "chains", "experiment", "agent", "msdf"}
    for s in parser.sections():
        if s not in known:
            raise HarnessError(f"unknown section [{s}]")
    if not parser.has_section("scenario"):
        raise HarnessError("missing [scenario] section")
    top = dict(parser.items("scenario"))
    for key in ("topology", "catalog"):
        if key not in top:
            raise HarnessError(f"[scenario] missing {key}")
    kinds = {f.name: f.type for f in dataclasses.fields(Scenario)}
    values = {}
    for key, raw in top.items():
        if key not in kinds or key in ("traffic", "chains", "experiment", "agent", "msdf", "base_dir"):
            raise HarnessError(f"[scenario] unknown key {key!r}")
        values[key] = _convert(kinds[key], raw, f"[scenario] {key}")
    sc = Scenario(**values, traffic=_section(TrafficSpec, parser, "traffic"),
                  chains=_section(ChainSpec, parser, "chains"),
                  experiment=_section(ExperimentConfig, parser, "experiment"),
                  agent=_section(AgentConfig, parser, "agent"),
                  msdf=_section(MsdfConfig, parser, "msdf"),
                  base_dir=str(base_dir))
    validate_scenario(sc)
    return sc


def load_scenario(path) -> Scenario:
    path = Path(path)
    if not path.exists():
        raise HarnessError(f"scenario file {path} not found")
    return parse_scenario(path.read_text(), path.parent)


def resolve(scenario: Scenario, name: str) -> Path:
    for candidate in (Path(scenario.base_dir) / name, DATA_DIR / name):
        if candidate.exists():
            return candidate
    raise HarnessError(f"file {name!r} not found next to the scenario or in {DATA_DIR}")


def validate_scenario(sc: Scenario) -> None:
    if sc.policy not in POLICIES:
        raise HarnessError(f"unknown policy {sc.policy!r}; expected one of {', '.join(POLICIES)}")
    resolve(sc, sc.topology)
    resolve(sc, sc.catalog)
    if sc.traffic.profile == "trace":
        if not sc.traffic.trace:
            raise HarnessError("[traffic] trace profile needs a trace file")
        resolve(sc, sc.traffic.trace)
    if sc.episodes < 1:
        raise HarnessError("[scenario] episodes must be >= 1")
    if sc.traffic.endpoints not in ("all", "function"):
        raise HarnessError("[traffic] endpoints must be 'all' or 'function'")


def seed_streams(seed: int) -> tuple[int, int]:
    """(traffic seed, agent seed) derived from the master seed."""
    traffic, agent = np.random.SeedSequence(seed).spawn(2)
    return int(traffic.generate_state(1)[0]), int(agent.generate_state(1)[0])


def build_problem(sc: Scenario) -> Problem:
    """Topology, catalog, chains and flows for a scenario."""
    topo = load_topology(resolve(sc, sc.topology), sc.function_nodes)
    catalog = load_catalog(resolve(sc, sc.catalog))
    chains = build_chains(catalog, sc.chains.count, sc.chains.length, sc.chains.max_delay)
    t = sc.traffic
    endpoints = topo.function_nodes if t.endpoints == "function" else sorted(topo.node)
    flows = generate_traffic(
        t.profile, t.n_flows, t.slots, seed_streams(sc.seed)[0], nodes=endpoints,
        service_types=[c.kind for c in chains], amplitude=t.amplitude, depth=t.depth,
        period=t.period, step_at=t.step_at, base=t.base,
        trace_path=resolve(sc, t.trace) if t.trace else None)
    chains, flows = assign_flows_to_chains(flows, chains)
    return Problem(topo, catalog, chains, flows, sc.experiment)


# --- runs ------------------------------------------------------------------

@dataclass
class MetricsSummary:
    policy: str
    final: EpisodeMetrics
    episodes: list[EpisodeMetrics] = field(default_factory=list)
    converged_at: int | None = None
    action_space: dict = field(default_factory=dict)
    episode_cap: int = 0

    @property
    def total_cost(self) -> float:
        return self.final.total_cost

    @property
    def migrations(self) -> int:
        return self.final.migrations

    @property
    def overload(self) -> float:
        return self.final.overload

    @property
    def ecost(self) -> float:
        return self.final.ecost


def rollout(problem: Problem, decide: Callable, episode: int = 0,
            result: RunResult | None = None) -> EpisodeMetrics:
    """Run one episode of a non-learning policy ``decide(state, resources)``."""
    state = initial_placement(problem)
    rewards = {c.id: 0.0 for c in problem.chains}
    breakdowns = []
    for _ in range(problem.config.slots):
        resources = compute_resources(state)
        actions = list(decide(state, resources))
        applied = baselines.apply_decision(state, actions)
        b = slot_breakdown(state, applied)
        for q, r in b.reward.items():
            rewards[q] += r
        breakdowns.append(b)
        if result is not None:
            result.slots.append(SlotRecord(episode, b, {a.chain: str(a) for a in actions}))
        state = end_slot(applied)
    return _episode_metrics(problem, episode, breakdowns, rewards, 1.0)


def _heuristic(policy: str, seed: int) -> Callable:
    if policy == "greedy":
        return lambda s, r: baselines.greedy_step(s, r)
    if policy == "rm":
        return lambda s, r: baselines.rm_step(s, r)
    if policy == "oracle":
        return lambda s, r: baselines.oracle_step(s)[0]
    if policy == "random":
        rng = np.random.default_rng(seed)
        return lambda s, r: baselines.random_step(s, rng)
    raise HarnessError(f"unknown policy {policy!r}")


def run_policy(problem: Problem, sc: Scenario, policy: str, record: RunResult | None = None):
    """Train (learning policies) and evaluate one policy; returns a summary."""
    agent_seed = seed_streams(sc.seed)[1]
    msdf_cfg = replace(sc.msdf, episode_cap=sc.episodes)
    if policy == "msdf":
        runner = Msdf(problem, sc.agent, msdf_cfg, seed=agent_seed)
        result = runner.run()
        final = runner.evaluate(len(result.episodes), result=record)
        return MetricsSummary(policy, final, result.episodes, result.converged_at,
                              runner.action_space, sc.episodes)
    if policy == "joint":
        runner = JointAgent(problem, sc.agent, msdf_cfg, seed=agent_seed)
        result = runner.run()
        final = runner.run_episode(len(result.episodes), learn=False, exploit=1.0)
        return MetricsSummary(policy, final, result.episodes, result.converged_at,
                              {"joint": runner.agent.n_actions}, sc.episodes)
    final = rollout(problem, _heuristic(policy, agent_seed), 0, record)
    return MetricsSummary(policy, final, [final], None,
                          {c.id: problem.action_count(c.id) for c in problem.chains}, 1)


def write_outputs(summary: MetricsSummary, record: RunResult, out_dir: Path,
                  problem: Problem) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = [METRICS_HEADER]
    for rec in record.slots:
        lines += slot_lines(rec)
    (out_dir / "slots.csv").write_text("\n".join(lines) + "\n")
    costs = [COST_LOG_HEADER]
    for rec in record.slots:
        costs += cost_log_lines(rec.breakdown)
    (out_dir / "costs.csv").write_text("\n".join(costs) + "\n")
    eps = [EPISODE_HEADER] + [episode_line(m) for m in summary.episodes]
    (out_dir / "episodes.csv").write_text("\n".join(eps) + "\n")
    (out_dir / "summary.csv").write_text(summary_table([summary]))


def summary_row(s: MetricsSummary) -> str:
    conv = "" if s.converged_at is None else str(s.converged_at)
    space = ";".join(f"{k}:{v}" for k, v in sorted(s.action_space.items(), key=lambda kv: str(kv[0])))
    return (f"{s.policy},{s.total_cost!r},{s.migrations},{s.overload!r},{s.ecost!r},"
            f"{conv},{len(s.episodes)},{space}")


SUMMARY_HEADER = "policy,total_cost,migrations,overload,ecost,converged_at,episodes,action_space"


def summary_table(summaries: Sequence[MetricsSummary]) -> str:
    return "\n".join([SUMMARY_HEADER] + [summary_row(s) for s in summaries]) + "\n"


def run_scenario(sc: Scenario, out_dir=None) -> MetricsSummary:
    """Run the scenario's policy; writes ``slots.csv`` (evaluation episode),
    ``costs.csv``, ``episodes.csv`` and ``summary.csv`` when an output
    directory is given."""
    try:
        problem = build_problem(sc)
        record = RunResult()
        summary = run_policy(problem, sc, sc.policy, record)
    except HarnessError:
        raise
    except SfcError as exc:
        raise type(exc)(f"scenario {sc.policy}: {exc}") from exc
    out_dir = out_dir or sc.output_dir
    if out_dir is not None:
        write_outputs(summary, record, Path(out_dir), problem)
    return summary


def _with_axis(sc: Scenario, axis: str, value) -> Scenario:
    if axis not in AXES:
        raise HarnessError(f"unknown sweep axis {axis!r}; expected one of {', '.join(AXES)}")
    section, key = AXES[axis]
    sub = getattr(sc, section)
    return replace(sc, **{section: replace(sub, **{key: int(value)})})


@dataclass
class SweepPoint:
    value: int
    summary: MetricsSummary | None
    error: str | None = None


def sweep(sc: Scenario, axis: str, values: Sequence, out_dir=None) -> list[SweepPoint]:
    """One run per value along ``axis``; failures are recorded and the sweep
    continues."""
    if not values:
        raise HarnessError("sweep needs at least one value")
    if axis not in AXES:
        raise HarnessError(f"unknown sweep axis {axis!r}; expected one of {', '.join(AXES)}")
    points = []
    for v in values:
        point_dir = None if out_dir is None else Path(out_dir) / f"{axis}={v}"
        try:
            points.append(SweepPoint(int(v), run_scenario(_with_axis(sc, axis, v), point_dir)))
        except SfcError as exc:
            log.error("sweep point %s=%s failed: %s", axis, v, exc)
            points.append(SweepPoint(int(v), None, f"{exc.module}: {exc}"))
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / "sweep.csv").write_text(sweep_table(axis, points))
    return points


def sweep_table(axis: str, points: Sequence[SweepPoint]) -> str:
    lines = [f"{axis}," + SUMMARY_HEADER + ",error"]
    for p in points:
        if p.summary is None:
            lines.append(f"{p.value}," + "," * (SUMMARY_HEADER.count(",") + 1) + p.error)
        else:
            lines.append(f"{p.value},{summary_row(p.summary)},")
    return "\n".join(lines) + "\n"


def compare(policies: Sequence[str], sc: Scenario, out_dir=None) -> list[MetricsSummary]:
    """Every policy on the same traffic realisation."""
    if len(policies) < 2:
        raise HarnessError("compare needs at least two policies")
    for p in policies:
        if p not in POLICIES:
            raise HarnessError(f"unknown policy {p!r}")
    problem = build_problem(sc)
    out = []
    for p in policies:
        record = RunResult()
        summary = run_policy(problem, sc, p, record)
        out.append(summary)
        if out_dir is not None:
            write_outputs(summary, record, Path(out_dir) / p, problem)
    if out_dir is not None:
        (Path(out_dir) / "compare.csv").write_text(summary_table(out))
    return out
