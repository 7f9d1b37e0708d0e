"""Proximal Policy Optimization over batched environment lanes.

Used twice: by the motion-tracking teacher (joint-space actions) and by the
task policy (latent actions). Environments implement the lane protocol:
reset_all(rng) -> obs; step(actions) -> (obs, reward, terminal, timeout,
final_obs) where lanes auto-reset after any done and final_obs carries the
pre-reset observation for timeout bootstrapping.

The clipped surrogate's gradient uses the exact gate implied by the min()
objective: gradient flows iff (A > 0 and ratio < 1 + clip) or (A < 0 and
ratio > 1 - clip). With clip = 0 no sample passes the gate at ratio 1, so the
update is exactly a policy no-op (entropy bonus aside, which is why the
no-op contract is stated for entropy_coef = 0).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, TrainingFailure
from .nets import Adam, GaussianHead, Mlp, logprob_grads


@dataclass
class PpoConfig:
    gamma: float = 0.99
    lam: float = 0.95
    clip: float = 0.2
    epochs: int = 5
    minibatches: int = 4
    lr: float = 3e-4
    entropy_coef: float = 1e-3
    value_coef: float = 0.5
    horizon: int = 64


def gae(rewards, values, dones, gamma: float, lam: float, bootstrap_value) -> tuple[np.ndarray, np.ndarray]:
    """Raw (unnormalized) generalized advantage estimates plus returns.

    rewards/values/dones are (T,N); bootstrap_value (N,) stands in for
    V(s_T) where the horizon cut an episode. dones mark episode boundaries of
    either kind; timeout bootstrapping is folded into rewards upstream.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    T, N = rewards.shape
    if not np.all(np.isfinite(rewards)):
        raise ContractViolation("non-finite rewards in rollout")
    adv = np.zeros((T, N))
    last = np.zeros(N)
    next_value = np.asarray(bootstrap_value, dtype=np.float64)
    for t in range(T - 1, -1, -1):
        not_done = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_value * not_done - values[t]
        last = delta + gamma * lam * not_done * last
        adv[t] = last
        next_value = values[t]
    returns = adv + values
    return adv, returns


@dataclass
class RolloutBuffer:
    obs: np.ndarray  # (T,N,O)
    actions: np.ndarray  # (T,N,A)
    log_probs: np.ndarray  # (T,N)
    values: np.ndarray  # (T,N)
    rewards: np.ndarray  # (T,N)
    dones: np.ndarray  # (T,N)
    bootstrap_value: np.ndarray  # (N,)

    def __post_init__(self):
        T, N = self.rewards.shape
        if self.obs.shape[:2] != (T, N) or self.actions.shape[:2] != (T, N):
            raise ContractViolation("rollout lanes misaligned")
        if not np.all(np.isfinite(self.rewards)):
            raise ContractViolation("non-finite rewards in rollout")


def collect_rollout(env, policy: GaussianHead, value_net: Mlp, horizon: int,
                    gamma: float, rng: np.random.Generator, obs: np.ndarray):
    """Roll the stochastic policy for `horizon` steps; returns (buffer, next_obs, episode stats)."""
    T, N = horizon, obs.shape[0]
    O = obs.shape[1]
    A = policy.body.out_width
    buf_obs = np.empty((T, N, O))
    buf_act = np.empty((T, N, A))
    buf_logp = np.empty((T, N))
    buf_val = np.empty((T, N))
    buf_rew = np.empty((T, N))
    buf_done = np.empty((T, N))
    ep_returns: list[float] = []
    ep_successes: list[bool] = []
    for t in range(T):
        dist = policy.dist(obs)
        act = dist.sample(rng)
        logp = dist.log_prob(act)
        val = value_net(obs)[:, 0]
        nxt, rew, terminal, timeout, final_obs = env.step(act)
        done = terminal | timeout
        # timeout lanes absorb their bootstrap into the reward
        if np.any(timeout):
            vt = value_net(final_obs[timeout])[:, 0]
            rew = rew.copy()
            rew[timeout] += gamma * vt
        buf_obs[t] = obs
        buf_act[t] = act
        buf_logp[t] = logp
        buf_val[t] = val
        buf_rew[t] = rew
        buf_done[t] = done
        info = getattr(env, "last_episode_stats", None)
        if info:
            ep_returns.extend(info.get("returns", []))
            ep_successes.extend(info.get("successes", []))
        obs = nxt
    bootstrap = value_net(obs)[:, 0]
    buf = RolloutBuffer(
        obs=buf_obs, actions=buf_act, log_probs=buf_logp, values=buf_val,
        rewards=buf_rew, dones=buf_done, bootstrap_value=bootstrap,
    )
    return buf, obs, {"returns": ep_returns, "successes": ep_successes}


def ppo_update(policy: GaussianHead, value_net: Mlp, buf: RolloutBuffer,
               cfg: PpoConfig, policy_opt: Adam, value_opt: Adam,
               rng: np.random.Generator) -> dict:
    """Clipped-surrogate epochs over shuffled minibatches; returns stats."""
    T, N = buf.rewards.shape
    adv, returns = gae(buf.rewards, buf.values, buf.dones, cfg.gamma, cfg.lam, buf.bootstrap_value)
    B = T * N
    obs = buf.obs.reshape(B, -1)
    actions = buf.actions.reshape(B, -1)
    old_logp = buf.log_probs.reshape(B)
    adv = adv.reshape(B)
    returns = returns.reshape(B)
    std = adv.std()
    adv = (adv - adv.mean()) / (std + 1e-8)

    mb = max(1, B // cfg.minibatches)
    pol_losses, val_losses = [], []
    for _ in range(cfg.epochs):
        perm = rng.permutation(B)
        for start in range(0, B, mb):
            idx = perm[start : start + mb]
            M = idx.size
            o, a, lp_old, ad, ret = obs[idx], actions[idx], old_logp[idx], adv[idx], returns[idx]

            # same log-prob code path as collection so unchanged params give ratio == 1.0 exactly
            dist, cache = policy.dist_cached(o)
            mu = dist.mu
            logp = dist.log_prob(a)
            ratio = np.exp(logp - lp_old)
            clipped = np.clip(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip)
            surrogate = np.minimum(ratio * ad, clipped * ad)
            pol_loss = -float(surrogate.mean())
            if not np.isfinite(pol_loss):
                raise TrainingFailure("non-finite policy loss")
            pol_losses.append(pol_loss)

            gate = ((ad > 0) & (ratio < 1.0 + cfg.clip)) | ((ad < 0) & (ratio > 1.0 - cfg.clip))
            coeff = np.where(gate, -ad * ratio, 0.0) / M
            dmu, dls = logprob_grads(mu, policy.log_std, a)
            up_mu = coeff[:, None] * dmu
            grads, _ = policy.body.backward(cache, up_mu)
            g_log_std = (coeff[:, None] * dls).sum(axis=0) - cfg.entropy_coef
            policy.apply_gradients(policy_opt, grads + [g_log_std])

            v, vcache = value_net.forward(o)
            verr = v[:, 0] - ret
            val_loss = 0.5 * float(np.mean(verr * verr))
            if not np.isfinite(val_loss):
                raise TrainingFailure("non-finite value loss")
            val_losses.append(val_loss)
            vgrads, _ = value_net.backward(vcache, cfg.value_coef * verr[:, None] / M)
            value_net.apply_gradients(value_opt, vgrads)

    # post-update diagnostics over the full batch
    dist = policy.dist(obs)
    logp = dist.log_prob(actions)
    ratio = np.exp(logp - old_logp)
    return {
        "policy_loss": float(np.mean(pol_losses)),
        "value_loss": float(np.mean(val_losses)),
        "kl": float(np.mean(old_logp - logp)),
        "clip_fraction": float(np.mean(np.abs(ratio - 1.0) > cfg.clip)),
        "entropy": float(dist.entropy().mean()),
        "mean_reward": float(buf.rewards.mean()),
    }


def run_ppo(env, policy: GaussianHead, value_net: Mlp, cfg: PpoConfig,
            updates: int, rng: np.random.Generator, on_update=None) -> list[dict]:
    """Collect/update loop with fresh optimizers; returns one stats dict per update."""
    policy_opt = Adam(cfg.lr)
    value_opt = Adam(cfg.lr)
    obs = env.reset_all(rng)
    history = []
    for u in range(updates):
        buf, obs, ep = collect_rollout(env, policy, value_net, cfg.horizon, cfg.gamma, rng, obs)
        stats = ppo_update(policy, value_net, buf, cfg, policy_opt, value_opt, rng)
        stats["update"] = u
        if ep["returns"]:
            stats["episode_return"] = float(np.mean(ep["returns"]))
        if ep["successes"]:
            stats["success_rate"] = float(np.mean(ep["successes"]))
        history.append(stats)
        if on_update is not None:
            on_update(u, stats)
    return history
