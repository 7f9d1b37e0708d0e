"""Motion-tracking teacher: observation assembly, tracking reward, env, training.

The teacher observes proprioception (90) plus a two-block goal (162): per-body
positional offsets to the next reference frame and the reference body targets,
both expressed in the robot's heading frame. Episodes use reference-state
initialization and terminate early once mean body error exceeds 0.5 m.
"""

from __future__ import annotations

import csv
import os

import numpy as np

from .errors import ConfigError, ContractViolation
from .motion import ClipLibrary, MotionClip
from .nets import GaussianHead, Mlp, load_checkpoint, save_checkpoint
from .ppo import PpoConfig, run_ppo
from .robot import RobotSpec, RobotState, fk_batch
from .rotations import heading_frame_inv, quat_rotate_inv, yaw_from_quat
from .sim import BodySim, SimConfig

EARLY_TERM_BODY_ERR = 0.5  # m, mean over bodies
K_BODY = 100.0
K_JOINT = 10.0


def proprio_dim(spec: RobotSpec) -> int:
    return 9 + 3 * spec.dof_count


def goal_dim(spec: RobotSpec) -> int:
    return 6 * spec.dof_count


def build_proprio(state: RobotState, prev_action: np.ndarray) -> np.ndarray:
    """Flat [v, omega, g, q, qdot, a_prev] with velocities in the root frame."""
    v = quat_rotate_inv(state.root_quat, state.root_lin_vel)
    w = quat_rotate_inv(state.root_quat, state.root_ang_vel)
    out = np.concatenate([v, w, state.projected_gravity, state.q, state.qdot,
                          np.asarray(prev_action, dtype=np.float64)])
    return out


def build_goal(ref_body_pos: np.ndarray, cur_body_pos: np.ndarray,
               root_pos: np.ndarray, root_yaw: float) -> np.ndarray:
    """Flat [per-body offsets, per-body targets], both heading-frame.

    Offsets are reference minus current body positions; targets are reference
    body positions relative to the current root. With identity heading the
    offset block is the raw elementwise difference.
    """
    d = heading_frame_inv(root_yaw, ref_body_pos - cur_body_pos)
    tgt = heading_frame_inv(root_yaw, ref_body_pos - np.asarray(root_pos))
    return np.concatenate([d.ravel(), tgt.ravel()])


def tracking_reward(cur_body_pos, ref_body_pos, q, q_ref):
    """exp(-100 * mean body-position err^2) + exp(-10 * mean joint err^2), in (0, 2]."""
    cur = np.asarray(cur_body_pos, dtype=np.float64)
    ref = np.asarray(ref_body_pos, dtype=np.float64)
    dp = cur - ref
    pos_term = np.mean(np.sum(dp * dp, axis=-1), axis=-1)
    dq = np.asarray(q, dtype=np.float64) - np.asarray(q_ref, dtype=np.float64)
    joint_term = np.mean(dq * dq, axis=-1)
    return np.exp(-K_BODY * pos_term) + np.exp(-K_JOINT * joint_term)


class _ClipTable:
    """Precomputed per-frame reference arrays for one clip (sim-rate frames)."""

    def __init__(self, spec: RobotSpec, clip: MotionClip):
        self.name = clip.name
        self.q = clip.q
        self.root_pos = clip.root_pos
        self.root_yaw = yaw_from_quat(clip.root_quat)
        self.qdot = np.gradient(clip.q, 1.0 / clip.fps, axis=0)
        self.body_pos, _ = fk_batch(spec, clip.root_pos, clip.root_quat, clip.q)
        self.frames = clip.frame_count


class MimicEnv:
    """Batched tracking environment over a clip library.

    Lane protocol: reset_all(rng) -> obs; step(actions) -> (obs, reward,
    terminal, timeout, final_obs) with auto-reset, final_obs holding the
    pre-reset observation of finished lanes.
    """

    def __init__(self, spec: RobotSpec, library: ClipLibrary, n_lanes: int = 16,
                 sim_cfg: SimConfig | None = None, min_horizon: int = 20):
        if not library.clips:
            raise ConfigError("empty clip library")
        cfg = sim_cfg or SimConfig()
        for c in library.clips:
            c.validate(spec, vel_cap=cfg.qdot_cap)
            if abs(c.fps - 1.0 / cfg.dt) > 1e-9:
                raise ConfigError(f"clip {c.name} fps {c.fps} does not match sim rate {1.0 / cfg.dt}")
            if c.frame_count <= min_horizon + 1:
                raise ConfigError(f"clip {c.name} shorter than the minimum horizon")
        self.spec = spec
        self.cfg = cfg
        self.n = n_lanes
        self.tables = [_ClipTable(spec, c) for c in library.clips]
        self.sim = BodySim(spec, cfg, n_lanes)
        self.obs_dim = proprio_dim(spec) + goal_dim(spec)
        self.act_dim = spec.dof_count
        self.min_horizon = min_horizon
        self.lane_clip = np.zeros(n_lanes, dtype=np.int64)
        self.lane_frame = np.zeros(n_lanes, dtype=np.int64)
        self.prev_action = np.zeros((n_lanes, spec.dof_count))
        self.ep_return = np.zeros(n_lanes)
        self.rng = np.random.default_rng(0)
        self.last_episode_stats: dict = {}
        self.last_body_err = np.zeros(n_lanes)
        self._err_sum = 0.0
        self._err_count = 0

    def _respawn(self, idx: np.ndarray) -> None:
        for i in np.atleast_1d(idx):
            c = int(self.rng.integers(0, len(self.tables)))
            tab = self.tables[c]
            f = int(self.rng.integers(0, tab.frames - 1 - self.min_horizon))
            self.lane_clip[i] = c
            self.lane_frame[i] = f
            self.sim.set_lanes(i, tab.q[f], tab.root_pos[f], tab.root_yaw[f], tab.qdot[f])
            self.prev_action[i] = tab.q[f]
            self.ep_return[i] = 0.0

    def _reference(self, offset: int = 0):
        """Per-lane reference (body_pos (N,L,3), q (N,L)) at lane frame + offset."""
        L = self.spec.dof_count
        body = np.empty((self.n, L, 3))
        q = np.empty((self.n, L))
        for i in range(self.n):
            tab = self.tables[self.lane_clip[i]]
            f = min(int(self.lane_frame[i]) + offset, tab.frames - 1)
            body[i] = tab.body_pos[f]
            q[i] = tab.q[f]
        return body, q

    def _obs(self) -> np.ndarray:
        proprio = self.sim.proprio(self.prev_action)
        ref_body, _ = self._reference(offset=1)
        d = heading_frame_inv(self.sim.root_yaw[:, None], ref_body - self.sim.link_pos)
        tgt = heading_frame_inv(self.sim.root_yaw[:, None],
                                ref_body - self.sim.root_pos[:, None, :])
        N = self.n
        return np.concatenate([proprio, d.reshape(N, -1), tgt.reshape(N, -1)], axis=1)

    def reset_all(self, rng: np.random.Generator) -> np.ndarray:
        self.rng = rng
        self._respawn(np.arange(self.n))
        return self._obs()

    def metrics(self) -> dict:
        """Mean per-step body error since the last call."""
        out = {"body_err_m": self._err_sum / max(1, self._err_count)}
        self._err_sum = 0.0
        self._err_count = 0
        return out

    def step(self, actions: np.ndarray):
        self.sim.step(actions)
        self.lane_frame += 1
        ref_body, ref_q = self._reference()
        body_err = np.mean(np.linalg.norm(self.sim.link_pos - ref_body, axis=2), axis=1)
        reward = tracking_reward(self.sim.link_pos, ref_body, self.sim.q, ref_q)
        self.last_body_err = body_err
        self._err_sum += float(body_err.sum())
        self._err_count += body_err.size
        ends = np.array([self.tables[c].frames - 1 for c in self.lane_clip])
        terminal = body_err > EARLY_TERM_BODY_ERR
        timeout = (self.lane_frame >= ends) & ~terminal
        self.prev_action = np.array(actions, dtype=np.float64)
        self.ep_return += reward
        done = terminal | timeout
        final_obs = self._obs()
        if np.any(done):
            idx = np.where(done)[0]
            self.last_episode_stats = {
                "returns": self.ep_return[idx].tolist(),
                "successes": timeout[idx].tolist(),  # ran to clip end without blowing up
            }
            self._respawn(idx)
        else:
            self.last_episode_stats = {}
        return self._obs(), reward, terminal, timeout, final_obs


def teacher_networks(spec: RobotSpec, rng: np.random.Generator,
                     hidden=(256, 128)) -> tuple[GaussianHead, Mlp]:
    obs = proprio_dim(spec) + goal_dim(spec)
    act = spec.dof_count
    widths = [obs, *hidden, act]
    acts = ["tanh"] * len(hidden) + ["identity"]
    policy = GaussianHead(Mlp(widths, acts, rng, out_scale=0.01), init_log_std=-1.0)
    value = Mlp([obs, *hidden, 1], acts, rng)
    return policy, value


def evaluate_teacher(env: MimicEnv, policy: GaussianHead, episodes: int,
                     rng: np.random.Generator) -> dict:
    """Deterministic rollouts; mean body tracking error per clip name."""
    sums: dict[str, float] = {}
    counts: dict[str, int] = {}
    obs = env.reset_all(rng)
    done_eps = 0
    while done_eps < episodes:
        act = policy.body(obs)
        names = [env.tables[c].name for c in env.lane_clip]
        obs, _, terminal, timeout, _ = env.step(act)
        err = env.last_body_err
        for i, name in enumerate(names):
            sums[name] = sums.get(name, 0.0) + float(err[i])
            counts[name] = counts.get(name, 0) + 1
        done_eps += int(np.sum(terminal | timeout))
    return {name: sums[name] / counts[name] for name in sums}


def train_teacher(spec: RobotSpec, library: ClipLibrary, out_dir: str,
                  updates: int, n_lanes: int = 16, seed: int = 0,
                  ppo_cfg: PpoConfig | None = None, hidden=(256, 128),
                  eval_episodes: int = 20) -> dict:
    """PPO on the tracking env; writes checkpoint + metrics CSV, returns report."""
    os.makedirs(out_dir, exist_ok=True)
    cfg = ppo_cfg or PpoConfig()
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x7EAC]))
    env = MimicEnv(spec, library, n_lanes=n_lanes)
    policy, value_net = teacher_networks(spec, rng, hidden)

    csv_path = os.path.join(out_dir, "teacher_metrics.csv")
    rows = []

    def log(update, stats):
        m = env.metrics()
        rows.append((update, stats["mean_reward"], m["body_err_m"]))

    run_ppo(env, policy, value_net, cfg, updates, rng, on_update=log)
    with open(csv_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["step", "mean_reward", "body_err_m"])
        for r in rows:
            w.writerow([r[0], f"{r[1]:.10g}", f"{r[2]:.10g}"])

    eval_env = MimicEnv(spec, library, n_lanes=n_lanes)
    per_clip = evaluate_teacher(eval_env, policy, eval_episodes,
                                np.random.default_rng(np.random.SeedSequence([seed, 0xE7A1])))
    meta = {
        "kind": "teacher",
        "obs_dim": env.obs_dim,
        "act_dim": env.act_dim,
        "hidden": list(hidden),
        "eval_body_err_m": per_clip,
    }
    arrays = policy.state_arrays("policy")
    arrays.update(value_net.state_arrays("value"))
    ckpt_path = os.path.join(out_dir, "teacher.ckpt")
    save_checkpoint(ckpt_path, meta, arrays)
    return {"checkpoint": ckpt_path, "metrics_csv": csv_path, "eval_body_err_m": per_clip}


def load_teacher(path: str) -> tuple[GaussianHead, dict]:
    meta, arrays = load_checkpoint(path)
    if meta.get("kind") != "teacher":
        raise ContractViolation(f"checkpoint {path} is not a teacher checkpoint")
    hidden = meta["hidden"]
    widths = [meta["obs_dim"], *hidden, meta["act_dim"]]
    acts = ["tanh"] * len(hidden) + ["identity"]
    policy = GaussianHead(Mlp(widths, acts, np.random.default_rng(0)))
    policy.load_state_arrays("policy", arrays)
    return policy, meta
