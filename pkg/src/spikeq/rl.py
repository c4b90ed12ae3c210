"""Deep Q-learning on spiking networks: replay, epsilon-greedy behaviour,
target-network bootstrapping, Adam updates, evaluation, and best-checkpoint
selection.

The loop is single-threaded and deterministic: all randomness flows from
label-derived streams of one root Rng (env / encoder / exploration /
replay), so a fixed seed reproduces the metrics log bit-for-bit on one
platform.
"""

from __future__ import annotations

import json
import os
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import network as net_mod
from .encoding import ENCODERS, normalize
from .env import StepResult
from .neuron import SurrogateSpec
from .network import SpikingNetwork, backward, forward, forward_batch, gradient_norm
from .tensor import Rng, Tensor


@dataclass
class Transition:
    obs: Tensor  # uint8 pixel planes
    action: int
    reward: float
    next_obs: Tensor
    terminal: bool


class ReplayBuffer:
    """Bounded ring of transitions with uniform sampling."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self._items: list[Transition] = []
        self._cursor = 0

    def __len__(self) -> int:
        return len(self._items)

    def add(self, transition: Transition) -> None:
        if len(self._items) < self.capacity:
            self._items.append(transition)
        else:
            self._items[self._cursor] = transition  # oldest-first eviction
        self._cursor = (self._cursor + 1) % self.capacity

    def sample(self, batch_size: int, rng: Rng) -> list[Transition]:
        if len(self._items) < batch_size:
            raise ValueError(
                f"buffer holds {len(self._items)} transitions, need {batch_size}"
            )
        idx = rng.gen.integers(len(self._items), size=batch_size)
        return [self._items[i] for i in idx]


@dataclass
class AgentConfig:
    """Training hyperparameters. Defaults follow the deep-Q lineage the
    network sizes come from; only lr / epsilon / window are pinned by the
    neuron-model defaults."""

    discount: float = 0.99
    epsilon: float = 0.1  # constant; no anneal
    eval_epsilon: float = 0.05
    learning_rate: float = 5e-5
    window: int = 20  # simulation time window T
    batch_size: int = 32
    buffer_capacity: int = 100_000
    target_sync_period: int = 1000
    total_steps: int = 100_000
    warmup_steps: int = 1000
    train_every: int = 1  # gradient steps : environment steps ratio
    checkpoint_window: int = 20  # episodes in the best-return moving average
    encoder: str = "bernoulli"
    surrogate: SurrogateSpec = field(default_factory=SurrogateSpec)

    def __post_init__(self):
        if not 0.0 <= self.discount < 1.0:
            raise ValueError(f"discount must be in [0, 1), got {self.discount}")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError(f"epsilon must be in [0, 1], got {self.epsilon}")
        if self.encoder not in ENCODERS:
            raise ValueError(f"unknown encoder {self.encoder!r}")


class Adam:
    """Adam over a named-parameter dict, updating in place."""

    def __init__(self, params: dict, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for name, p in self.params.items():
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m[...] = self.beta1 * m + (1.0 - self.beta1) * g
            v[...] = self.beta2 * v + (1.0 - self.beta2) * (g * g)
            p[...] = p - self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


def select_action(q: Tensor, epsilon: float, rng: Rng) -> int:
    """Epsilon-greedy over Q-values; greedy ties break to the lowest index."""
    n = q.shape[-1]
    if epsilon > 0.0 and rng.gen.random() < epsilon:
        return int(rng.gen.integers(n))
    return int(np.argmax(q))


def td_target(reward: float, terminal: bool, discount: float, q_next_target: Tensor) -> float:
    """Bootstrap target y = r (+ discount * max_a' Q_target(s', a') if not terminal)."""
    if terminal:
        return float(reward)
    return float(reward + discount * float(np.max(q_next_target)))


def huber(e: Tensor, delta: float = 1.0) -> Tensor:
    a = np.abs(e)
    return np.where(a <= delta, 0.5 * e * e, delta * (a - 0.5 * delta))


def _encode_batch(obs_batch: Tensor, window: int, encoder, rng: Rng) -> Tensor:
    """uint8 [B, ...] observations -> spike block [B, T, ...]."""
    p = normalize(obs_batch)
    spikes = encoder(p, window, rng)  # [T, B, ...]
    return np.ascontiguousarray(np.swapaxes(spikes, 0, 1))


def train_step(
    online: SpikingNetwork,
    target: SpikingNetwork,
    batch: list[Transition],
    cfg: AgentConfig,
    rng: Rng,
    optimizer: Adam,
) -> tuple[float, float] | None:
    """One Huber/BPTT/Adam update from a uniformly sampled batch.

    Returns (loss, gradient_norm), or None as the no-op signal for an empty
    batch. Fresh spike trains are drawn for both obs and next_obs; thresholds
    are clamped to their floor after the update.
    """
    if not batch:
        return None
    encoder = ENCODERS[cfg.encoder]
    obs = np.stack([t.obs for t in batch])
    next_obs = np.stack([t.next_obs for t in batch])
    actions = np.array([t.action for t in batch])
    rewards = np.array([t.reward for t in batch], dtype=np.float64)
    terminal = np.array([t.terminal for t in batch])

    next_spikes = _encode_batch(next_obs, cfg.window, encoder, rng)
    q_next, _ = forward_batch(next_spikes, target, record=False)
    y = rewards + cfg.discount * np.max(q_next, axis=1) * (~terminal)

    spikes = _encode_batch(obs, cfg.window, encoder, rng)
    q, tape = forward_batch(spikes, online, record=True)
    q_a = q[np.arange(len(batch)), actions]
    err = q_a - y
    loss = float(np.mean(huber(err)))

    dL_dq = np.zeros_like(q)
    dL_dq[np.arange(len(batch)), actions] = (
        np.clip(err, -1.0, 1.0) / len(batch)
    ).astype(online.dtype)
    grads = backward(tape, dL_dq, cfg.surrogate)
    grad_norm = gradient_norm(grads)
    optimizer.step(grads)
    net_mod.clamp_thresholds(online)
    online.bump_version()
    return loss, grad_norm


def _episode_telemetry(tape) -> tuple[list[int], list[int], list[int]]:
    """Per-layer (nonzero, positive, total) spike counts from one forward tape."""
    nonzero, positive, total = [], [], []
    for rec in tape.records:
        s = rec.s
        nonzero.append(int(np.count_nonzero(s)))
        positive.append(int(np.sum(s > 0)))
        total.append(int(s.size))
    return nonzero, positive, total


def _threshold_snapshot(net: SpikingNetwork) -> tuple[list[float], list[float]]:
    vps, vns = [], []
    for layer in net.layers:
        if layer.is_spiking:
            vps.append(float(layer.v_th_p))
            vns.append(float(layer.v_th_n))
    return vps, vns


def train(
    env,
    online: SpikingNetwork,
    cfg: AgentConfig,
    rng: Rng,
    out_dir: str | None = None,
) -> tuple[SpikingNetwork, list[dict]]:
    """Run the full epsilon-greedy training loop.

    Logs one record per episode (return, running gradient norm, per-layer
    firing rates, spike balance, threshold values) and keeps the checkpoint
    whose recent-episode average return is the best seen. Returns that best
    network plus the metrics log; with out_dir set, metrics.jsonl is appended
    line-by-line and best.ckpt / final.ckpt are written.
    """
    env_rng = rng.stream("env")
    enc_rng = rng.stream("encoder")
    explore_rng = rng.stream("exploration")
    replay_rng = rng.stream("replay")

    encoder = ENCODERS[cfg.encoder]
    target = net_mod.copy_network(online)
    optimizer = Adam(net_mod.trainable_params(online), cfg.learning_rate)
    buffer = ReplayBuffer(cfg.buffer_capacity)

    metrics: list[dict] = []
    metrics_fh = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        metrics_fh = open(os.path.join(out_dir, "metrics.jsonl"), "w", buffering=1)

    best = net_mod.copy_network(online)  # total_steps=0 still yields a checkpoint
    best_smoothed = None
    returns_hist: deque[float] = deque(maxlen=cfg.checkpoint_window)

    def save_best(src: SpikingNetwork) -> None:
        nonlocal best
        best = net_mod.copy_network(src)
        if out_dir is not None:
            net_mod.save_checkpoint(best, os.path.join(out_dir, "best.ckpt"))

    if out_dir is not None:
        net_mod.save_checkpoint(best, os.path.join(out_dir, "best.ckpt"))

    episode = 0
    ep_return = 0.0
    ep_grad_norms: list[float] = []
    ep_nonzero = ep_positive = ep_total = None

    try:
        obs = env.reset(env_rng)
        for step in range(1, cfg.total_steps + 1):
            spikes = encoder(normalize(obs), cfg.window, enc_rng)
            q, tape = forward(spikes, online)
            nz, pos, tot = _episode_telemetry(tape)
            if ep_total is None:
                ep_nonzero, ep_positive, ep_total = nz, pos, tot
            else:
                ep_nonzero = [a + b for a, b in zip(ep_nonzero, nz)]
                ep_positive = [a + b for a, b in zip(ep_positive, pos)]
                ep_total = [a + b for a, b in zip(ep_total, tot)]
            action = select_action(q, cfg.epsilon, explore_rng)
            try:
                result: StepResult = env.step(action)
            except Exception as exc:
                raise RuntimeError(f"environment failure at step {step}") from exc
            buffer.add(Transition(obs, action, result.reward, result.next_obs, result.terminal))
            obs = result.next_obs
            ep_return += result.reward

            if step > cfg.warmup_steps and len(buffer) >= cfg.batch_size and step % cfg.train_every == 0:
                out = train_step(
                    online, target, buffer.sample(cfg.batch_size, replay_rng), cfg, enc_rng, optimizer
                )
                if out is not None:
                    ep_grad_norms.append(out[1])
            if step % cfg.target_sync_period == 0:
                net_mod.sync_params(target, online)

            if result.terminal:
                episode += 1
                returns_hist.append(ep_return)
                nonzero_spikes = sum(ep_nonzero)
                pos_spikes = sum(ep_positive)
                vps, vns = _threshold_snapshot(online)
                record = {
                    "episode": episode,
                    "step": step,
                    "return": ep_return,
                    "epsilon": cfg.epsilon,
                    "grad_norm_avg": (
                        float(np.mean(ep_grad_norms)) if ep_grad_norms else None
                    ),
                    "firing_rate_by_layer": [
                        n / t for n, t in zip(ep_nonzero, ep_total)
                    ],
                    "pos_spike_fraction": (
                        pos_spikes / nonzero_spikes if nonzero_spikes else None
                    ),
                    "v_th_p_by_layer": vps,
                    "v_th_n_by_layer": vns,
                }
                metrics.append(record)
                if metrics_fh is not None:
                    metrics_fh.write(json.dumps(record) + "\n")

                if len(returns_hist) < cfg.checkpoint_window:
                    save_best(online)  # provisional until the window fills
                else:
                    smoothed = float(np.mean(returns_hist))
                    if best_smoothed is None or smoothed > best_smoothed:
                        best_smoothed = smoothed
                        save_best(online)

                ep_return = 0.0
                ep_grad_norms = []
                ep_nonzero = ep_positive = ep_total = None
                obs = env.reset(env_rng)
    finally:
        if metrics_fh is not None:
            metrics_fh.close()
    if out_dir is not None:
        net_mod.save_checkpoint(online, os.path.join(out_dir, "final.ckpt"))
    return best, metrics


def evaluate_returns(
    net: SpikingNetwork,
    env,
    cfg: AgentConfig,
    rng: Rng,
    episodes: int = 10,
) -> list[float]:
    """Per-episode returns under the near-greedy (eval_epsilon) policy."""
    env_rng = rng.stream("env")
    enc_rng = rng.stream("encoder")
    explore_rng = rng.stream("exploration")
    encoder = ENCODERS[cfg.encoder]
    returns = []
    for _ in range(episodes):
        obs = env.reset(env_rng)
        total = 0.0
        terminal = False
        while not terminal:
            spikes = encoder(normalize(obs), cfg.window, enc_rng)
            q, _ = forward(spikes, net, record=False)
            action = select_action(q, cfg.eval_epsilon, explore_rng)
            result = env.step(action)
            total += result.reward
            obs = result.next_obs
            terminal = result.terminal
        returns.append(total)
    return returns


def evaluate(
    net: SpikingNetwork,
    env,
    cfg: AgentConfig,
    rng: Rng,
    episodes: int = 10,
) -> tuple[float, float]:
    """Mean and population std of returns under the near-greedy policy."""
    arr = np.asarray(evaluate_returns(net, env, cfg, rng, episodes), dtype=np.float64)
    return float(arr.mean()), float(arr.std())
