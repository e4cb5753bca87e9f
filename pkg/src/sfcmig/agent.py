"""Per-chain DQN subagent: numpy MLP, replay buffer, epsilon schedule, training step.

The exploration parameter follows the exploitation convention: with
probability ``epsilon`` the agent acts greedily, otherwise uniformly at
random.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .errors import AgentError
from .model import action_space_size
from .state import MigrationAction, NetworkState


# --- action coding ---------------------------------------------------------

def index_to_action(chain_id: int, index: int, current: Sequence[int],
                    function_nodes: Sequence[int]) -> MigrationAction:
    n = len(function_nodes)
    size = action_space_size(len(current), n)
    if not 0 <= index < size:
        raise AgentError(f"action index {index} out of range [0, {size})")
    if index == 0:
        return MigrationAction.noop(chain_id)
    m, r = divmod(index - 1, n - 1)
    targets = [i for i in function_nodes if i != current[m]]
    return MigrationAction(chain_id, m, targets[r])


def action_to_index(action: MigrationAction, current: Sequence[int],
                    function_nodes: Sequence[int]) -> int:
    if action.is_noop:
        return 0
    n = len(function_nodes)
    m = action.vnf_index
    if not 0 <= m < len(current):
        raise AgentError(f"vnf index {m} out of range")
    targets = [i for i in function_nodes if i != current[m]]
    try:
        r = targets.index(action.target)
    except ValueError:
        raise AgentError(f"target {action.target} is not a candidate for vnf {m}") from None
    return 1 + m * (n - 1) + r


def encode_action(state: NetworkState, chain_id: int, index: int) -> MigrationAction:
    """Index to action: 0 is the no-op, then (vnf, target) pairs in row-major
    order, targets ascending and skipping the VNF's current node."""
    return index_to_action(chain_id, index, state.placement[chain_id], state.problem.function_nodes)


def decode_action(state: NetworkState, action: MigrationAction) -> int:
    return action_to_index(action, state.placement[action.chain], state.problem.function_nodes)


# --- network ---------------------------------------------------------------

class QNetwork:
    """Fully connected ReLU network with a linear output layer.

    ``weights[k]`` has shape ``(fan_in, fan_out)``; inputs are row vectors.
    """

    def __init__(self, sizes: Sequence[int], rng: np.random.Generator | None = None):
        if len(sizes) < 2:
            raise AgentError("network needs at least input and output sizes")
        self.sizes = tuple(int(s) for s in sizes)
        rng = rng or np.random.default_rng(0)
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(self.sizes, self.sizes[1:]):
            self.weights.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    def copy(self) -> "QNetwork":
        net = QNetwork.__new__(QNetwork)
        net.sizes = self.sizes
        net.weights = [w.copy() for w in self.weights]
        net.biases = [b.copy() for b in self.biases]
        return net

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.sizes[0]:
            raise AgentError(f"input has {x.shape[-1]} features, network expects {self.sizes[0]}")
        return x

    def forward(self, x) -> np.ndarray:
        x = self._check(x)
        h = x
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if k < last:
                h = np.maximum(h, 0.0)
        return h

    def forward_cache(self, x):
        x = self._check(x)
        acts = [x]
        h = x
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if k < last:
                h = np.maximum(h, 0.0)
            acts.append(h)
        return h, acts

    def backward(self, acts, grad_out) -> list[np.ndarray]:
        """Gradients (in ``params`` order) given dLoss/dOutput for a batch."""
        grads_w, grads_b = [], []
        g = np.atleast_2d(grad_out)
        for k in range(len(self.weights) - 1, -1, -1):
            a_in = np.atleast_2d(acts[k])
            grads_w.append(a_in.T @ g)
            grads_b.append(g.sum(axis=0))
            if k > 0:
                g = (g @ self.weights[k].T) * (np.atleast_2d(acts[k]) > 0)
        out = []
        for gw, gb in zip(reversed(grads_w), reversed(grads_b)):
            out += [gw, gb]
        return out

    def apply_gradients(self, grads, lr: float):
        for p, g in zip(self.params, grads):
            p -= lr * g

    def soft_update_from(self, other: "QNetwork", tau: float):
        for p, q in zip(self.params, other.params):
            p *= (1.0 - tau)
            p += tau * q

    def mse_grad(self, x, target):
        """Loss ``mean((Q(x) - target)**2)`` over all outputs and its gradients."""
        out, acts = self.forward_cache(x)
        diff = out - np.asarray(target, dtype=float)
        loss = float(np.mean(diff ** 2))
        return loss, self.backward(acts, 2.0 * diff / diff.size)

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.params)

    def __eq__(self, other):
        if not isinstance(other, QNetwork):
            return NotImplemented
        return self.sizes == other.sizes and all(
            np.array_equal(a, b) for a, b in zip(self.params, other.params))

    __hash__ = None


def q_forward(network: QNetwork, observation) -> np.ndarray:
    return network.forward(observation)


def gradient_check(network: QNetwork, observation, target, h: float = 1e-5,
                   analytic: Callable | None = None) -> float:
    """Max relative error between analytic and central-difference gradients
    of the squared-error loss.  Entries where both gradients are below 1e-6
    in magnitude count with a 1e-6 denominator."""
    x = np.asarray(observation, dtype=float)
    analytic = analytic or (lambda net, x, t: net.mse_grad(x, t)[1])
    grads = analytic(network, x, target)

    def loss():
        out = network.forward(x)
        return float(np.mean((out - np.asarray(target, dtype=float)) ** 2))

    worst = 0.0
    for p, g in zip(network.params, grads):
        flat, gflat = p.reshape(-1), np.asarray(g).reshape(-1)
        for k in range(flat.size):
            old = flat[k]
            flat[k] = old + h
            up = loss()
            flat[k] = old - h
            down = loss()
            flat[k] = old
            num = (up - down) / (2 * h)
            denom = max(abs(num), abs(gflat[k]), 1e-6)
            worst = max(worst, abs(num - gflat[k]) / denom)
    return worst


# --- checkpoints -----------------------------------------------------------

CHECKPOINT_MAGIC = "sfcmig-qnetwork 1"


def save_network(network: QNetwork, path) -> None:
    """Text dump: header, layer count, then per tensor its shape line and
    row-major values as hex floats (exact round trip)."""
    lines = [CHECKPOINT_MAGIC, str(len(network.weights))]
    for p in network.params:
        lines.append(" ".join(str(d) for d in p.shape))
        lines.append(" ".join(float(v).hex() for v in p.reshape(-1)))
    Path(path).write_text("\n".join(lines) + "\n")


def load_network(path) -> QNetwork:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != CHECKPOINT_MAGIC:
        raise AgentError(f"{path}: not a network checkpoint")
    n_layers = int(lines[1])
    tensors = []
    pos = 2
    for _ in range(2 * n_layers):
        shape = tuple(int(d) for d in lines[pos].split())
        values = [float.fromhex(v) for v in lines[pos + 1].split()]
        tensors.append(np.array(values, dtype=float).reshape(shape))
        pos += 2
    net = QNetwork.__new__(QNetwork)
    net.weights = tensors[0::2]
    net.biases = tensors[1::2]
    net.sizes = tuple([net.weights[0].shape[0]] + [w.shape[1] for w in net.weights])
    return net


# --- replay ----------------------------------------------------------------

class Transition(NamedTuple):
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray


class ReplayBuffer:
    """Fixed-capacity FIFO of transitions with uniform sampling."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise AgentError("buffer capacity must be >= 1")
        self.capacity = capacity
        self._items: list[Transition] = []
        self._next = 0

    def __len__(self):
        return len(self._items)

    def add(self, transition: Transition):
        if len(self._items) < self.capacity:
            self._items.append(transition)
        else:
            self._items[self._next] = transition
        self._next = (self._next + 1) % self.capacity

    def items(self) -> list[Transition]:
        """Contents oldest first."""
        if len(self._items) < self.capacity:
            return list(self._items)
        return self._items[self._next:] + self._items[:self._next]

    def sample(self, batch_size: int, rng: np.random.Generator):
        if batch_size > len(self._items):
            raise AgentError(f"cannot sample {batch_size} from {len(self._items)} transitions")
        idx = rng.choice(len(self._items), size=batch_size, replace=False)
        picked = [self._items[i] for i in idx]
        return (np.array([t.state for t in picked]), np.array([t.action for t in picked]),
                np.array([t.reward for t in picked], dtype=float),
                np.array([t.next_state for t in picked]))


# --- subagent --------------------------------------------------------------

@dataclass(frozen=True)
class AgentConfig:
    gamma: float = 0.9
    eps_start: float = 0.1          # exploitation probability at episode 0
    eps_end: float = 0.95
    anneal_episodes: int | None = None   # None: half of the episode cap
    lr: float = 1e-3
    momentum: float = 0.0
    batch_size: int = 32
    buffer_capacity: int = 10_000
    target_period: int = 100
    tau: float = 0.1
    hidden: tuple[int, ...] = (64, 64)
    reward_scale: float = 1.0
    grad_clip: float | None = None
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.gamma <= 1:
            raise AgentError("gamma must be in [0, 1]")
        if not 0 <= self.tau <= 1:
            raise AgentError("tau must be in [0, 1]")
        if self.target_period < 1:
            raise AgentError("target_period must be >= 1")
        if not (0 <= self.eps_start <= 1 and 0 <= self.eps_end <= 1):
            raise AgentError("exploitation probabilities must be in [0, 1]")
        if self.batch_size < 1:
            raise AgentError("batch_size must be >= 1")

    def exploitation(self, episode: int, episode_cap: int | None = None) -> float:
        span = self.anneal_episodes
        if span is None:
            span = max(1, (episode_cap or 2) // 2)
        if span <= 0:
            return self.eps_end
        frac = min(1.0, episode / span)
        return self.eps_start + (self.eps_end - self.eps_start) * frac


class Subagent:
    def __init__(self, chain_id: int, n_inputs: int, n_actions: int, config: AgentConfig,
                 rng: np.random.Generator):
        self.chain_id = chain_id
        self.n_actions = n_actions
        self.config = config
        self.rng = rng
        self.online = QNetwork((n_inputs, *config.hidden, n_actions), rng)
        self.target = self.online.copy()
        self.buffer = ReplayBuffer(config.buffer_capacity)
        self.exploit = config.eps_start
        self.steps = 0
        self.count = 0
        self._velocity = [np.zeros_like(p) for p in self.online.params]

    def greedy(self, obs) -> int:
        # argmax returns the first maximum, i.e. the lowest index on ties
        return int(np.argmax(self.online.forward(obs)))

    def remember(self, s, a, r, s_next):
        self.buffer.add(Transition(np.asarray(s, dtype=float), int(a),
                                   float(r) * self.config.reward_scale, np.asarray(s_next, dtype=float)))

    def ready(self) -> bool:
        return len(self.buffer) > self.config.batch_size


def select_action(agent: Subagent, observation, rng: np.random.Generator,
                  exploit: float | None = None) -> int:
    """Greedy with probability ``exploit`` (default: the agent's current
    schedule value), otherwise uniform over all actions."""
    p = agent.exploit if exploit is None else exploit
    if p >= 1.0 or rng.random() < p:
        return agent.greedy(observation)
    return int(rng.integers(agent.n_actions))


def td_loss(agent: Subagent, batch) -> float:
    s, a, r, s2 = batch
    target = r + agent.config.gamma * agent.target.forward(s2).max(axis=1)
    q = agent.online.forward(s)[np.arange(len(a)), a]
    return float(np.mean((target - q) ** 2))


def train_step(agent: Subagent, batch=None) -> float:
    """One SGD step on the mean squared TD error; returns the loss before the
    step.  Every ``target_period`` steps the target network moves towards
    the online one by ``tau``."""
    cfg = agent.config
    if batch is None:
        if not agent.ready():
            raise AgentError(f"need more than {cfg.batch_size} samples, have {len(agent.buffer)}")
        batch = agent.buffer.sample(cfg.batch_size, agent.rng)
    s, a, r, s2 = batch
    a = np.asarray(a, dtype=int)
    target = np.asarray(r, dtype=float) + cfg.gamma * agent.target.forward(s2).max(axis=1)
    out, acts = agent.online.forward_cache(s)
    rows = np.arange(len(a))
    diff = out[rows, a] - target
    loss = float(np.mean(diff ** 2))
    grad_out = np.zeros_like(out)
    grad_out[rows, a] = 2.0 * diff / len(a)
    grads = agent.online.backward(acts, grad_out)
    if cfg.grad_clip is not None:
        norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads))
        if norm > cfg.grad_clip:
            grads = [g * (cfg.grad_clip / norm) for g in grads]
    if cfg.momentum:
        for v, g in zip(agent._velocity, grads):
            v *= cfg.momentum
            v += g
        grads = agent._velocity
    agent.online.apply_gradients(grads, cfg.lr)
    agent.steps += 1
    agent.count += 1
    if agent.count == cfg.target_period:
        agent.target.soft_update_from(agent.online, cfg.tau)
        agent.count = 0
    return loss
