"""2D point-reach task: the smallest full exercise of the PPO loop.

Lanes follow the batched env protocol: step(actions) -> (obs, reward,
terminal, timeout, final_obs), lanes auto-reset, final_obs holds the
pre-reset observation so the collector can bootstrap timeouts.
"""

from __future__ import annotations

import numpy as np

from .nets import GaussianHead, Mlp
from .ppo import PpoConfig, run_ppo


class PointReachEnv:
    """Velocity-controlled point moving toward a random goal in a 2 m box."""

    obs_dim = 4
    act_dim = 2

    def __init__(self, n_lanes: int = 16, horizon: int = 60, dt: float = 0.1,
                 success_radius: float = 0.1):
        self.n = n_lanes
        self.horizon = horizon
        self.dt = dt
        self.success_radius = success_radius
        self.pos = np.zeros((n_lanes, 2))
        self.goal = np.zeros((n_lanes, 2))
        self.t = np.zeros(n_lanes, dtype=np.int64)
        self.ep_return = np.zeros(n_lanes)
        self.rng = np.random.default_rng(0)
        self.last_episode_stats: dict = {}

    def _obs(self) -> np.ndarray:
        return np.concatenate([self.pos, self.goal - self.pos], axis=1)

    def _respawn(self, idx) -> None:
        k = len(idx)
        self.pos[idx] = self.rng.uniform(-1.0, 1.0, (k, 2))
        self.goal[idx] = self.rng.uniform(-1.0, 1.0, (k, 2))
        self.t[idx] = 0
        self.ep_return[idx] = 0.0

    def reset_all(self, rng: np.random.Generator) -> np.ndarray:
        self.rng = rng
        self._respawn(np.arange(self.n))
        return self._obs()

    def step(self, actions: np.ndarray):
        v = np.clip(actions, -1.0, 1.0)
        prev_dist = np.linalg.norm(self.goal - self.pos, axis=1)
        self.pos = self.pos + v * self.dt
        dist = np.linalg.norm(self.goal - self.pos, axis=1)
        reward = prev_dist - dist
        success = dist < self.success_radius
        reward = reward + 10.0 * success
        self.t += 1
        terminal = success
        timeout = (self.t >= self.horizon) & ~terminal
        self.ep_return += reward
        done = terminal | timeout
        final_obs = self._obs()
        if np.any(done):
            idx = np.where(done)[0]
            self.last_episode_stats = {
                "returns": self.ep_return[idx].tolist(),
                "successes": success[idx].tolist(),
            }
            self._respawn(idx)
        else:
            self.last_episode_stats = {}
        return self._obs(), reward, terminal, timeout, final_obs


def eval_success_rate(env: PointReachEnv, policy: GaussianHead, episodes: int,
                      rng: np.random.Generator) -> float:
    """Deterministic (mean-action) evaluation; fraction of reached goals."""
    wins = 0
    total = 0
    obs = env.reset_all(rng)
    while total < episodes:
        act = policy.body(obs)
        obs, _, terminal, timeout, _ = env.step(act)
        done = terminal | timeout
        if np.any(done):
            wins += int(np.sum(terminal & done))
            total += int(np.sum(done))
    return wins / total


def train_toy(seed: int = 0, updates: int = 60, n_lanes: int = 16):
    """Train on point-reach; returns (policy, value_net, history, success rate)."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xBEEF]))
    env = PointReachEnv(n_lanes=n_lanes)
    policy = GaussianHead(Mlp([4, 32, 32, 2], ["tanh", "tanh", "identity"], rng, out_scale=0.01),
                          init_log_std=-0.5)
    value_net = Mlp([4, 32, 32, 1], ["tanh", "tanh", "identity"], rng)
    cfg = PpoConfig(horizon=64, lr=1e-3, minibatches=4, epochs=5)
    history = run_ppo(env, policy, value_net, cfg, updates, rng)
    rate = eval_success_rate(PointReachEnv(n_lanes=n_lanes), policy, 100, np.random.default_rng(seed + 1))
    return policy, value_net, history, rate
