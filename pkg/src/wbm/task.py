"""Task-policy training: PPO over the motion prior's latent space.

The policy maps the 106-dim task observation to a latent residual; the frozen
prior/decoder pair turns that residual into whole-body joint targets inside
the environment. The value net sees the same observation (no privileged
state).
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from dataclasses import fields as dc_fields

from .env import NSDF_FEATURE_SLICE, EmbraceConfig, EmbraceEnv
from .errors import ContractViolation
from .nets import GaussianHead, Mlp, load_checkpoint, save_checkpoint
from .nsdf import NsdfModel
from .ppo import PpoConfig, run_ppo
from .prior import PriorBundle
from .rewards import RewardBreakdown
from .robot import RobotSpec

COMPONENT_COLUMNS = [f.name for f in dc_fields(RewardBreakdown)]


@dataclass
class TaskTrainConfig:
    updates: int = 300
    hidden: tuple = (256, 128)
    init_log_std: float = -1.0
    eval_episodes: int = 30
    env: EmbraceConfig = field(default_factory=EmbraceConfig)
    ppo: PpoConfig = field(default_factory=PpoConfig)

    def __post_init__(self):
        if self.updates < 1 or self.eval_episodes < 1:
            from .errors import ConfigError

            raise ConfigError("updates and eval_episodes must be >= 1")


def task_networks(obs_dim: int, latent_dim: int, hidden,
                  rng: np.random.Generator,
                  init_log_std: float = -1.0) -> tuple[GaussianHead, Mlp]:
    acts = ["tanh"] * len(hidden) + ["identity"]
    policy = GaussianHead(Mlp([obs_dim, *hidden, latent_dim], acts, rng,
                              out_scale=0.01), init_log_std=init_log_std)
    value = Mlp([obs_dim, *hidden, 1], acts, rng)
    return policy, value


def evaluate_task(env: EmbraceEnv, policy: GaussianHead, episodes: int,
                  rng: np.random.Generator, zero_nsdf: bool = False) -> dict:
    """Deterministic (mean-action) rollouts until `episodes` have finished.

    zero_nsdf blanks the link-distance block of the policy input only — the
    environment still runs intact — to measure how much the policy leans on
    those features.
    """
    obs = env.reset_all(rng)
    succ: list = []
    rets: list = []
    max_steps = env.cfg.horizon * (episodes + env.n_lanes)
    for _ in range(max_steps):
        x = obs
        if zero_nsdf:
            x = obs.copy()
            x[:, NSDF_FEATURE_SLICE] = 0.0
        obs, _, _, _, _ = env.step(policy.body(x))
        st = env.last_episode_stats
        if st:
            succ.extend(st["successes"])
            rets.extend(st["returns"])
        if len(succ) >= episodes:
            break
    succ, rets = succ[:episodes], rets[:episodes]
    return {
        "episodes": len(succ),
        "success_rate": float(np.mean(succ)) if succ else 0.0,
        "mean_return": float(np.mean(rets)) if rets else 0.0,
    }


def train_task(spec: RobotSpec, nsdf: NsdfModel, bundle: PriorBundle,
               out_dir: str, cfg: TaskTrainConfig | None = None,
               seed: int = 0, sim_cfg=None, reward_cfg=None, obj=None) -> dict:
    """PPO in latent space; writes checkpoint + metrics CSV, returns report."""
    cfg = cfg or TaskTrainConfig()
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x7A5C]))
    env_kw = dict(bundle=bundle, sim_cfg=sim_cfg, reward_cfg=reward_cfg,
                  obj=obj)
    env = EmbraceEnv(spec, nsdf, cfg.env, **env_kw)
    policy, value_net = task_networks(env.obs_dim, env.act_dim, cfg.hidden,
                                      rng, cfg.init_log_std)

    rows: list = []

    def log(update, stats):
        comps = env.pop_component_means()
        rows.append((update, stats["mean_reward"], stats["clip_fraction"],
                     stats["kl"], stats.get("success_rate", float("nan")),
                     [comps.get(k, float("nan")) for k in COMPONENT_COLUMNS]))

    run_ppo(env, policy, value_net, cfg.ppo, cfg.updates, rng, on_update=log)

    csv_path = os.path.join(out_dir, "task_metrics.csv")
    with open(csv_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["update", "mean_reward", "clip_fraction", "kl",
                    "success_rate", *COMPONENT_COLUMNS])
        for update, mr, clip, kl, sr, comps in rows:
            w.writerow([update, f"{mr:.10g}", f"{clip:.10g}", f"{kl:.10g}",
                        f"{sr:.10g}", *[f"{c:.10g}" for c in comps]])

    eval_env = EmbraceEnv(spec, nsdf, cfg.env, **env_kw)
    report_eval = evaluate_task(
        eval_env, policy, cfg.eval_episodes,
        np.random.default_rng(np.random.SeedSequence([seed, 0xE7A2])))

    meta = {
        "kind": "task",
        "obs_dim": env.obs_dim,
        "latent_dim": env.act_dim,
        "hidden": list(cfg.hidden),
        "eval": report_eval,
        "attach_contacts_min": (min(env.attach_contact_log)
                                if env.attach_contact_log else None),
    }
    arrays = policy.state_arrays("policy")
    arrays.update(value_net.state_arrays("value"))
    ckpt_path = os.path.join(out_dir, "task.ckpt")
    save_checkpoint(ckpt_path, meta, arrays)
    return {
        "checkpoint": ckpt_path,
        "metrics_csv": csv_path,
        "eval": report_eval,
        "attach_contact_log": list(env.attach_contact_log),
    }


def load_task_policy(path: str) -> tuple[GaussianHead, dict]:
    meta, arrays = load_checkpoint(path)
    if meta.get("kind") != "task":
        raise ContractViolation(f"checkpoint {path} is not a task checkpoint")
    hidden = meta["hidden"]
    acts = ["tanh"] * len(hidden) + ["identity"]
    policy = GaussianHead(Mlp([meta["obs_dim"], *hidden, meta["latent_dim"]],
                              acts, np.random.default_rng(0)))
    policy.load_state_arrays("policy", arrays)
    return policy, meta
