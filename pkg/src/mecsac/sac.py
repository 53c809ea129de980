"""Soft actor-critic with a state-value network, twin soft-Q networks and a
tanh-squashed Gaussian policy, trained on the quantized/corrected MEC model.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .codec import PTDFC, ActionMask, action_dim, correct, encode_state, quantize, state_dim
from .env import CacheState, MecEnv, SystemConfig
from .nets import Mlp, MlpSpec, make_optimizer
from .rollout import EpochStats, evaluate, eval_rng, has_converged

log = logging.getLogger(__name__)

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)
CHECKPOINT_VERSION = 1


class TrainingDivergence(RuntimeError):
    pass


@dataclass
class SacConfig:
    hidden: tuple[int, ...] = (256, 256)
    activation: str = "relu"
    batch_size: int = 256
    lr_value: float = 1e-4
    lr_q: float = 1e-4
    lr_policy: float = 1e-4
    lr_alpha: float = 1e-4
    optimizer: str = "sgd"
    target_smoothing: float = 0.005
    target_update_period: int = 1
    buffer_capacity: int = 10_000_000
    warmup_steps: int = 1000
    grad_steps: int = 1
    target_entropy: float | None = None
    init_log_alpha: float = 0.0
    auto_alpha: bool = True
    epoch_steps: int = 1000
    train_epochs: int = 100
    eval_every: int = 10
    eval_epochs: int = 10
    converge_tol: float = 0.01
    converge_windows: int = 5

    def __post_init__(self):
        self.hidden = tuple(self.hidden)


@dataclass
class SacParams:
    value: np.ndarray
    target_value: np.ndarray
    q1: np.ndarray
    q2: np.ndarray
    policy: np.ndarray
    log_alpha: float

    def arrays(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if k != "log_alpha"}


class SacNets:
    def __init__(self, num_tasks: int, hidden=(256, 256), activation="relu"):
        self.state_dim = state_dim(num_tasks)
        self.action_dim = action_dim(num_tasks)
        self.value = Mlp(MlpSpec.build(self.state_dim, 1, hidden, activation))
        self.q = Mlp(MlpSpec.build(self.state_dim + self.action_dim, 1, hidden, activation))
        self.policy = Mlp(MlpSpec.build(self.state_dim, 2 * self.action_dim, hidden, activation))

    def init_params(self, rng: np.random.Generator, init_log_alpha: float = 0.0) -> SacParams:
        value = self.value.init_params(rng)
        return SacParams(
            value=value,
            target_value=value.copy(),
            q1=self.q.init_params(rng),
            q2=self.q.init_params(rng),
            policy=self.policy.init_params(rng, final_scale=0.1),
            log_alpha=float(init_log_alpha),
        )


def log1m_tanh2(u: np.ndarray) -> np.ndarray:
    """log(1 - tanh(u)^2), stable for large |u|."""
    return 2.0 * (np.log(2.0) - u - np.logaddexp(0.0, -2.0 * u))


def squashed_log_prob(u: np.ndarray, mean: np.ndarray, log_std: np.ndarray) -> np.ndarray:
    """Log-density of tanh(u) where u ~ N(mean, exp(log_std)^2), summed over the last axis."""
    z = (u - mean) * np.exp(-log_std)
    return np.sum(-0.5 * z**2 - log_std - _HALF_LOG_2PI - log1m_tanh2(u), axis=-1)


@dataclass
class _PolicyPass:
    mean: np.ndarray
    log_std: np.ndarray
    inside: np.ndarray
    u: np.ndarray
    action: np.ndarray
    log_prob: np.ndarray
    cache: list


def _policy_pass(nets: SacNets, phi: np.ndarray, states: np.ndarray, noise: np.ndarray) -> _PolicyPass:
    out, cache = nets.policy.forward(phi, states)
    if not np.all(np.isfinite(out)):
        raise TrainingDivergence("policy network produced a non-finite output")
    A = nets.action_dim
    mean, raw_log_std = out[:, :A], out[:, A:]
    log_std = np.clip(raw_log_std, LOG_STD_MIN, LOG_STD_MAX)
    inside = (raw_log_std > LOG_STD_MIN) & (raw_log_std < LOG_STD_MAX)
    u = mean + np.exp(log_std) * noise
    action = np.tanh(u)
    log_prob = np.sum(-0.5 * noise**2 - log_std - _HALF_LOG_2PI - log1m_tanh2(u), axis=1)
    return _PolicyPass(mean, log_std, inside, u, action, log_prob, cache)


def policy_sample(nets: SacNets, phi: np.ndarray, states: np.ndarray, noise: np.ndarray):
    """Reparameterized squashed-Gaussian sample: (raw action in [-1, 1], log-probability)."""
    p = _policy_pass(nets, phi, np.atleast_2d(states), np.atleast_2d(noise))
    return p.action, p.log_prob


def policy_mean_action(nets: SacNets, phi: np.ndarray, states: np.ndarray) -> np.ndarray:
    out = nets.policy(phi, np.atleast_2d(states))
    return np.tanh(out[:, : nets.action_dim])


def value_loss(nets: SacNets, psi: np.ndarray, states: np.ndarray, targets: np.ndarray):
    """Squared residual of V against fixed soft-value targets; returns (loss, grad)."""
    v, cache = nets.value.forward(psi, states)
    resid = v[:, 0] - targets
    n = len(targets)
    grad, _ = nets.value.backward(psi, cache, (resid / n)[:, None])
    return 0.5 * float(np.mean(resid**2)), grad


def soft_value_targets(nets: SacNets, params: SacParams, states: np.ndarray, noise: np.ndarray):
    """min(Q1, Q2)(x, a) - alpha * log pi(a|x) with a drawn from the current policy."""
    p = _policy_pass(nets, params.policy, states, noise)
    xa = np.concatenate([states, p.action], axis=1)
    q = np.minimum(nets.q(params.q1, xa), nets.q(params.q2, xa))[:, 0]
    return q - np.exp(params.log_alpha) * p.log_prob


def q_targets(nets: SacNets, target_value: np.ndarray, rewards, next_states, gamma: float):
    return rewards + gamma * nets.value(target_value, next_states)[:, 0]


def q_loss(nets: SacNets, theta: np.ndarray, states, actions, targets):
    """Soft Bellman residual for one Q network; returns (loss, grad)."""
    q, cache = nets.q.forward(theta, np.concatenate([states, actions], axis=1))
    resid = q[:, 0] - targets
    grad, _ = nets.q.backward(theta, cache, (resid / len(targets))[:, None])
    return 0.5 * float(np.mean(resid**2)), grad


def policy_loss(nets: SacNets, params: SacParams, states: np.ndarray, noise: np.ndarray):
    """Reparameterized policy objective mean(alpha * log pi - min Q).

    Returns (loss, grad wrt policy params, log_prob, min_q). The gradient
    flows through both the log-density and the Q input.
    """
    alpha = np.exp(params.log_alpha)
    n, A = noise.shape
    p = _policy_pass(nets, params.policy, states, noise)
    xa = np.concatenate([states, p.action], axis=1)
    q1, c1 = nets.q.forward(params.q1, xa)
    q2, c2 = nets.q.forward(params.q2, xa)
    first = q1[:, 0] <= q2[:, 0]
    min_q = np.where(first, q1[:, 0], q2[:, 0])
    loss = float(np.mean(alpha * p.log_prob - min_q))

    scale = -1.0 / n
    g1 = np.where(first, scale, 0.0)[:, None]
    g2 = np.where(first, 0.0, scale)[:, None]
    _, dx1 = nets.q.backward(params.q1, c1, g1, need_input=True, need_params=False)
    _, dx2 = nets.q.backward(params.q2, c2, g2, need_input=True, need_params=False)
    d_action = (dx1 + dx2)[:, nets.state_dim :]

    # d log pi / du = 2 tanh(u); d log pi / d log_std = -1 at fixed noise
    du = (alpha / n) * 2.0 * p.action + d_action * (1.0 - p.action**2)
    d_log_std = (-alpha / n + du * np.exp(p.log_std) * noise) * p.inside
    grad, _ = nets.policy.backward(params.policy, p.cache, np.concatenate([du, d_log_std], axis=1))
    return loss, grad, p.log_prob, min_q


def temperature_loss(log_alpha: float, log_probs: np.ndarray, target_entropy: float):
    """Loss -log_alpha * mean(log pi + target); gradient is mean(-log pi - target)."""
    gap = float(np.mean(log_probs + target_entropy))
    return -log_alpha * gap, -gap


def target_update(psi: np.ndarray, psi_bar: np.ndarray, xi: float) -> np.ndarray:
    return xi * psi + (1.0 - xi) * psi_bar


class ReplayBuffer:
    """FIFO ring buffer of (state, raw action, reward, next state); grows on demand."""

    def __init__(self, state_dim: int, action_dim: int, capacity: int, initial: int = 4096):
        self.capacity = int(capacity)
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.size = 0
        self.cursor = 0
        self._alloc(min(initial, self.capacity))

    def _alloc(self, n: int) -> None:
        self.states = np.zeros((n, self.state_dim))
        self.actions = np.zeros((n, self.action_dim))
        self.rewards = np.zeros(n)
        self.next_states = np.zeros((n, self.state_dim))

    def _grow(self) -> None:
        n = min(2 * len(self.rewards), self.capacity)
        old = (self.states, self.actions, self.rewards, self.next_states)
        self._alloc(n)
        k = len(old[2])
        self.states[:k], self.actions[:k], self.rewards[:k], self.next_states[:k] = old

    def __len__(self) -> int:
        return self.size

    def add(self, state, action, reward, next_state) -> None:
        if self.cursor == len(self.rewards) and len(self.rewards) < self.capacity:
            self._grow()
        i = self.cursor
        self.states[i] = state
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_states[i] = next_state
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample_indices(self, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        return rng.choice(self.size, size=batch_size, replace=False)

    def sample(self, batch_size: int, rng: np.random.Generator):
        idx = self.sample_indices(batch_size, rng)
        return self.states[idx], self.actions[idx], self.rewards[idx], self.next_states[idx]

    def state_dict(self) -> dict:
        n = self.size
        return {
            "states": self.states[:n].copy(),
            "actions": self.actions[:n].copy(),
            "rewards": self.rewards[:n].copy(),
            "next_states": self.next_states[:n].copy(),
            "meta": np.array([self.size, self.cursor, self.capacity]),
        }

    def load_state_dict(self, state: dict) -> None:
        self.size, self.cursor, self.capacity = (int(v) for v in state["meta"])
        self._alloc(max(len(state["rewards"]), 1))
        n = len(state["rewards"])
        self.states[:n] = state["states"]
        self.actions[:n] = state["actions"]
        self.rewards[:n] = state["rewards"]
        self.next_states[:n] = state["next_states"]


@dataclass
class UpdateInfo:
    value_loss: float
    q1_loss: float
    q2_loss: float
    policy_loss: float
    alpha: float
    entropy: float


class SoftActorCritic:
    """Agent state: networks, optimizers, replay buffer and random streams."""

    def __init__(self, config: SystemConfig, sac: SacConfig, seed: int):
        self.config = config
        self.sac = sac
        self.seed = seed
        self.nets = SacNets(config.num_tasks, sac.hidden, sac.activation)
        init_ss, noise_ss, buf_ss, env_ss = np.random.SeedSequence(seed).spawn(4)
        self.rng_noise = np.random.default_rng(noise_ss)
        self.rng_buffer = np.random.default_rng(buf_ss)
        self.rng_env = np.random.default_rng(env_ss)
        self.params = self.nets.init_params(np.random.default_rng(init_ss), sac.init_log_alpha)
        self.optim = {
            "value": make_optimizer(sac.optimizer, sac.lr_value, self.nets.value.num_params),
            "q1": make_optimizer(sac.optimizer, sac.lr_q, self.nets.q.num_params),
            "q2": make_optimizer(sac.optimizer, sac.lr_q, self.nets.q.num_params),
            "policy": make_optimizer(sac.optimizer, sac.lr_policy, self.nets.policy.num_params),
            "log_alpha": make_optimizer(sac.optimizer, sac.lr_alpha, 1),
        }
        self.target_entropy = (
            -float(self.nets.action_dim) if sac.target_entropy is None else sac.target_entropy
        )
        self.buffer = ReplayBuffer(
            self.nets.state_dim, self.nets.action_dim, sac.buffer_capacity,
            initial=min(4096, sac.buffer_capacity),
        )
        self.env_steps = 0
        self.grad_steps = 0

    @property
    def alpha(self) -> float:
        return float(np.exp(self.params.log_alpha))

    def act(self, state_vec: np.ndarray, deterministic: bool = False) -> np.ndarray:
        if deterministic:
            return policy_mean_action(self.nets, self.params.policy, state_vec)[0]
        noise = self.rng_noise.standard_normal((1, self.nets.action_dim))
        action, _ = policy_sample(self.nets, self.params.policy, state_vec, noise)
        return action[0]

    def explore(self, state_vec: np.ndarray) -> np.ndarray:
        if self.env_steps < self.sac.warmup_steps:
            return self.rng_noise.uniform(-1.0, 1.0, self.nets.action_dim)
        return self.act(state_vec)

    def update(self) -> UpdateInfo:
        sac, p, nets = self.sac, self.params, self.nets
        states, actions, rewards, next_states = self.buffer.sample(sac.batch_size, self.rng_buffer)
        noise = self.rng_noise.standard_normal((sac.batch_size, nets.action_dim))
        alpha = np.exp(p.log_alpha)

        pi_loss, g_pi, log_prob, min_q = policy_loss(nets, p, states, noise)
        v_loss, g_v = value_loss(nets, p.value, states, min_q - alpha * log_prob)
        y = q_targets(nets, p.target_value, rewards, next_states, self.config.discount)
        q1_loss, g_q1 = q_loss(nets, p.q1, states, actions, y)
        q2_loss, g_q2 = q_loss(nets, p.q2, states, actions, y)
        losses = (v_loss, q1_loss, q2_loss, pi_loss)
        if not np.all(np.isfinite(losses)):
            raise TrainingDivergence(
                f"non-finite loss at gradient step {self.grad_steps}: "
                f"value={v_loss} q1={q1_loss} q2={q2_loss} policy={pi_loss}"
            )

        self.optim["value"].step(p.value, g_v)
        self.optim["q1"].step(p.q1, g_q1)
        self.optim["q2"].step(p.q2, g_q2)
        self.optim["policy"].step(p.policy, g_pi)
        if sac.auto_alpha:
            _, g_alpha = temperature_loss(p.log_alpha, log_prob, self.target_entropy)
            la = np.array([p.log_alpha])
            self.optim["log_alpha"].step(la, np.array([g_alpha]))
            p.log_alpha = float(la[0])
        self.grad_steps += 1
        if self.grad_steps % sac.target_update_period == 0:
            p.target_value[:] = target_update(p.value, p.target_value, sac.target_smoothing)
        return UpdateInfo(v_loss, q1_loss, q2_loss, pi_loss, float(alpha), float(-log_prob.mean()))

    # checkpointing

    def save(self, path) -> None:
        arrays = {f"param_{k}": v for k, v in self.params.arrays().items()}
        arrays["param_log_alpha"] = np.array(self.params.log_alpha)
        for name, opt in self.optim.items():
            for k, v in opt.state_dict().items():
                arrays[f"optim_{name}_{k}"] = v
        for k, v in self.buffer.state_dict().items():
            arrays[f"buffer_{k}"] = v
        rng_state = {
            "noise": self.rng_noise.bit_generator.state,
            "buffer": self.rng_buffer.bit_generator.state,
            "env": self.rng_env.bit_generator.state,
        }
        meta = {
            "version": CHECKPOINT_VERSION,
            "seed": self.seed,
            "env_steps": self.env_steps,
            "grad_steps": self.grad_steps,
            "sac": asdict(self.sac),
            "rng": rng_state,
        }
        arrays["meta"] = np.array(json.dumps(meta))
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)

    @classmethod
    def load(cls, path, config: SystemConfig) -> "SoftActorCritic":
        with np.load(path) as data:
            arrays = {k: data[k] for k in data.files}
        meta = json.loads(str(arrays["meta"]))
        if meta["version"] != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta['version']}")
        agent = cls(config, SacConfig(**meta["sac"]), meta["seed"])
        for k in agent.params.arrays():
            setattr(agent.params, k, arrays[f"param_{k}"].copy())
        agent.params.log_alpha = float(arrays["param_log_alpha"])
        for name, opt in agent.optim.items():
            prefix = f"optim_{name}_"
            opt.load_state_dict({k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)})
        agent.buffer.load_state_dict(
            {k[len("buffer_"):]: v for k, v in arrays.items() if k.startswith("buffer_")}
        )
        agent.rng_noise.bit_generator.state = meta["rng"]["noise"]
        agent.rng_buffer.bit_generator.state = meta["rng"]["buffer"]
        agent.rng_env.bit_generator.state = meta["rng"]["env"]
        agent.env_steps = meta["env_steps"]
        agent.grad_steps = meta["grad_steps"]
        return agent


@dataclass
class TrainResult:
    agent: SoftActorCritic
    curve: list[EpochStats] = field(default_factory=list)
    train_rewards: list[float] = field(default_factory=list)
    converged: bool = False

    def final_block(self) -> list[EpochStats]:
        if not self.curve:
            return []
        last = self.curve[-1].train_epoch
        return [s for s in self.curve if s.train_epoch == last]


def greedy_policy(agent: SoftActorCritic, mask: ActionMask) -> Callable:
    """Deterministic policy: mean raw action, quantized and corrected."""
    config = agent.config

    def policy(state):
        raw = agent.act(encode_state(state), deterministic=True)
        return correct(state, quantize(raw, config), raw, config, mask)

    return policy


def train(
    config: SystemConfig,
    chain,
    sac: SacConfig,
    seed: int,
    mask: ActionMask = PTDFC,
    initial_cache: CacheState | None = None,
    agent: SoftActorCritic | None = None,
) -> TrainResult:
    """Interleave environment steps and gradient steps; test every ``eval_every`` epochs.

    Transitions store the raw pre-quantization action with the reward of the
    corrected action that was executed.
    """
    agent = agent or SoftActorCritic(config, sac, seed)
    result = TrainResult(agent)
    env = MecEnv(config, chain, agent.rng_env, initial_cache)
    state = env.reset()
    x = encode_state(state)
    block_means: list[float] = []
    for epoch in range(1, sac.train_epochs + 1):
        total = 0.0
        for _ in range(sac.epoch_steps):
            raw = agent.explore(x)
            action = correct(state, quantize(raw, config), raw, config, mask)
            state, _, reward = env.step(action)
            x_next = encode_state(state)
            agent.buffer.add(x, raw, reward, x_next)
            agent.env_steps += 1
            total += reward
            x = x_next
            if len(agent.buffer) >= sac.batch_size and agent.env_steps > sac.warmup_steps:
                for _ in range(sac.grad_steps):
                    agent.update()
        result.train_rewards.append(total / sac.epoch_steps)
        if epoch % sac.eval_every == 0 or epoch == sac.train_epochs:
            block = evaluate(
                greedy_policy(agent, mask), config, chain,
                eval_rng(seed, epoch), sac.eval_epochs, sac.epoch_steps,
                train_epoch=epoch, initial_cache=initial_cache,
            )
            result.curve.extend(block)
            block_means.append(float(np.mean([s.reward for s in block])))
            log.info("seed %d epoch %d test reward %.4f alpha %.3g",
                     seed, epoch, block_means[-1], agent.alpha)
            if has_converged(block_means, sac.converge_tol, sac.converge_windows):
                result.converged = True
                break
    return result
