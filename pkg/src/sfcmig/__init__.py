"""Service function chain migration: network model, cost model, DQN subagents
and the successive multi-agent decision loop, with heuristic baselines."""

from .errors import SfcError
from .model import (ExperimentConfig, Flow, PhysicalLink, PhysicalNode, Problem, ServiceChain,
                    Topology, VnfType, load_catalog, load_topology)
from .state import MigrationAction, NetworkState, initial_placement

__version__ = "0.1.0"
