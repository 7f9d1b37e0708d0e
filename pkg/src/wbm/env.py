"""Three-stage embrace task in a quasi-static desk-scale world.

An object rests on a pedestal. The robot approaches from an annulus, wraps its
upper body around the object (attachment = enough contacts whose horizontal
normals admit no open half-plane), and carries it to a target location.
Locomotion is a velocity-commanded base read out of the leg joints; contact
physics is replaced by the capsule-vs-object SDF oracle.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, ContractViolation
from .geometry import object_sdf
from .nsdf import NsdfModel, nsdf_features
from .prior import PriorBundle
from .rewards import (
    RewardConfig,
    combine,
    physical_limits,
    r_arm,
    r_carry,
    r_nsdf,
    r_walk,
    smoothness,
)
from .robot import RobotSpec
from .rotations import quat_mul, quat_rotate, quat_rotate_inv
from .sim import BodySim, SimConfig

from dataclasses import dataclass, field

GRAVITY = 9.81
STAGE_APPROACH, STAGE_EMBRACE, STAGE_TRANSPORT = 0, 1, 2
STAGE_NAMES = ("approach", "embrace", "transport")

TASK_EXTRA_DIM = 19  # p_box, th_box, p_target, th_target, 15 link distances
NSDF_FEATURE_SLICE = slice(91, 106)  # the d_t block inside the task obs


@dataclass(frozen=True)
class ObjectSpec:
    shape: str = "cylinder"
    dims: tuple = (0.21, 0.40)  # cylinder (radius, height); cuboid half extents; sphere (radius,)
    mass: float = 3.0

    def __post_init__(self):
        if self.shape not in ("cylinder", "cuboid", "sphere"):
            raise ConfigError(f"unknown object shape {self.shape!r}")
        if self.mass <= 0.0 or any(d <= 0.0 for d in self.dims):
            raise ConfigError("object dimensions and mass must be positive")

    @property
    def half_height(self) -> float:
        if self.shape == "cylinder":
            return self.dims[1] / 2.0
        if self.shape == "cuboid":
            return self.dims[2]
        return self.dims[0]


@dataclass(frozen=True)
class EmbraceConfig:
    n_lanes: int = 64
    horizon: int = 750
    pickup_radius: float = 0.35
    annulus: tuple = (3.5, 4.0)
    pedestal_height: float = 0.8
    target_radius: float = 0.1
    contact_eps: float = 0.02
    contact_samples: int = 9
    detach_steps: int = 10
    scenarios: tuple = (1, 2, 3)
    object_xy: tuple = (0.0, 0.0)
    target_xy: tuple = (2.0, 0.0)
    prehug_standoff: tuple = (0.28, 0.33)
    hug_standoff: float = 0.30
    latent_bound: float = 3.0  # latent actions squashed to +-bound*sigma_prior
    robot_weight_n: float = 400.0

    def __post_init__(self):
        if self.annulus[0] >= self.annulus[1]:
            raise ConfigError("annulus inner radius must be below outer")
        if not set(self.scenarios) <= {1, 2, 3} or not self.scenarios:
            raise ConfigError("scenarios must be a nonempty subset of {1,2,3}")
        if self.pickup_radius <= 0 or self.target_radius <= 0:
            raise ConfigError("zone radii must be positive")


def _wrap(a: np.ndarray) -> np.ndarray:
    return (a + np.pi) % (2.0 * np.pi) - np.pi


def attach_check(spec: RobotSpec, link_pos: np.ndarray, link_quat: np.ndarray,
                 obj: ObjectSpec, obj_pos: np.ndarray, obj_quat: np.ndarray,
                 eps: float = 0.02, n_samples: int = 9):
    """Squeeze test against the object surface.

    Returns (attached (N,), contact_mask (N,K), link_dist (N,K)) over the
    upper-body links. A link is in contact when its capsule surface comes
    within eps of the object surface; attachment needs >= 3 contacts whose
    horizontal normals are not contained in any open half-plane.
    """
    ids = np.asarray(spec.upper_body_links)
    cap_a = np.stack([spec.links[i].capsule.a for i in ids])
    cap_b = np.stack([spec.links[i].capsule.b for i in ids])
    radii = np.array([spec.links[i].capsule.radius for i in ids])
    lp = link_pos[:, ids]  # (N,K,3)
    lq = link_quat[:, ids]
    a_w = lp + quat_rotate(lq, cap_a)
    b_w = lp + quat_rotate(lq, cap_b)
    ts = np.linspace(0.0, 1.0, n_samples)
    pts = a_w[:, :, None, :] + ts[None, None, :, None] * (b_w - a_w)[:, :, None, :]
    local = quat_rotate_inv(obj_quat[:, None, None, :], pts - obj_pos[:, None, None, :])
    sd = object_sdf(obj.shape, np.asarray(obj.dims), local)  # (N,K,S)
    dist = sd.min(axis=2) - radii[None, :]  # surface-to-surface
    contact = dist < eps
    n_contact = contact.sum(axis=1)

    attached = np.zeros(lp.shape[0], dtype=bool)
    best = np.argmin(sd, axis=2)
    for i in np.where(n_contact >= 3)[0]:
        links = np.where(contact[i])[0]
        normals = []
        for k in links:
            v = pts[i, k, best[i, k]] - obj_pos[i]
            n = np.hypot(v[0], v[1])
            if n > 1e-9:
                normals.append(np.arctan2(v[1], v[0]))
        if len(normals) < 3:
            continue
        ang = np.sort(np.asarray(normals))
        gaps = np.diff(np.concatenate([ang, [ang[0] + 2.0 * np.pi]]))
        attached[i] = bool(np.max(gaps) <= np.pi + 1e-12)
    return attached, contact, dist


def task_features(root_pos: np.ndarray, root_yaw: np.ndarray,
                  obj_pos: np.ndarray, target_xy: np.ndarray,
                  d_t: np.ndarray) -> np.ndarray:
    """(N,19) heading-frame scalars: distances/bearings to object and target."""
    rel_o = obj_pos[:, :2] - root_pos[:, :2]
    rel_t = target_xy[None, :] - root_pos[:, :2]
    p_box = np.hypot(rel_o[:, 0], rel_o[:, 1])
    p_tgt = np.hypot(rel_t[:, 0], rel_t[:, 1])
    th_box = _wrap(np.arctan2(rel_o[:, 1], rel_o[:, 0]) - root_yaw)
    th_tgt = np.arctan2(rel_t[:, 1], rel_t[:, 0]) - root_yaw
    th_tgt = _wrap(th_tgt)
    return np.concatenate(
        [p_box[:, None], th_box[:, None], p_tgt[:, None], th_tgt[:, None], d_t],
        axis=1,
    )


def act_through_prior(bundle: PriorBundle, s_task: np.ndarray,
                      u: np.ndarray) -> np.ndarray:
    """Decode a latent policy output into robot actions around the prior mean.

    The policy's latent is an additive residual on the prior mean: the decoded
    action is decode(s_d, u + mu_prior(s_d)), so a zero latent reproduces the
    prior's mean behavior exactly.
    """
    if not bundle.manifest.get("frozen"):
        raise ContractViolation("prior bundle must be frozen for deployment")
    sd_dim = bundle.manifest["deploy_dim"]
    s_d = s_task[:, :sd_dim]
    return bundle.decode(s_d, u + bundle.prior(s_d).mu)


class EmbraceEnv:
    """Vectorized episodes of the approach/embrace/transport task.

    With a frozen PriorBundle, actions are latent vectors decoded through the
    prior; without one, raw 27-dim joint targets are expected (scripted runs).
    """

    def __init__(self, spec: RobotSpec, nsdf: NsdfModel,
                 cfg: EmbraceConfig | None = None,
                 bundle: PriorBundle | None = None,
                 sim_cfg: SimConfig | None = None,
                 reward_cfg: RewardConfig | None = None,
                 obj: ObjectSpec | None = None):
        if not nsdf.trained:
            raise ContractViolation("embrace env needs a trained NSDF model")
        self.spec = spec
        self.nsdf = nsdf
        self.cfg = cfg or EmbraceConfig()
        self.obj = obj or ObjectSpec()
        self.bundle = bundle
        if bundle is not None and not bundle.manifest.get("frozen"):
            raise ContractViolation("prior bundle must be frozen")
        self.reward_cfg = reward_cfg or RewardConfig()
        n = self.cfg.n_lanes
        self.sim = BodySim(spec, sim_cfg or SimConfig(), n)
        self.n_lanes = n
        self.obs_dim = 87 + TASK_EXTRA_DIM
        self.act_dim = (bundle.manifest["latent_dim"] if bundle is not None
                        else spec.dof_count)
        L = spec.dof_count
        self.lane_t = np.zeros(n, dtype=np.int64)
        self.lane_scenario = np.zeros(n, dtype=np.int64)
        self.stage = np.zeros(n, dtype=np.int64)
        self.attached = np.zeros(n, dtype=bool)
        self.low_contact_streak = np.zeros(n, dtype=np.int64)
        self.obj_pos = np.zeros((n, 3))
        self.obj_quat = np.tile([1.0, 0.0, 0.0, 0.0], (n, 1))
        self.prev_obj_pos = np.zeros((n, 3))
        self.rel_pos = np.zeros((n, 3))
        self.rel_quat = np.tile([1.0, 0.0, 0.0, 0.0], (n, 1))
        self.prev_action = np.zeros((n, L))
        self.ep_return = np.zeros(n)
        self.last_episode_stats: dict = {}
        self.last_contact_count = np.zeros(n, dtype=np.int64)
        self.last_breakdown = None
        self.attach_contact_log: list = []  # contact count at each attach event
        self._comp_sums: dict = {}
        self._comp_steps = 0
        self._target = np.asarray(self.cfg.target_xy, dtype=np.float64)
        self._trace: list | None = None
        self.rng: np.random.Generator | None = None

    # -- resets ------------------------------------------------------------

    def reset_all(self, rng: np.random.Generator) -> np.ndarray:
        self.rng = rng
        self._respawn(np.arange(self.n_lanes))
        self._last_obs = self._obs()
        return self._last_obs

    def _spawn_pose(self, i: int, scenario: int):
        """Root xy/yaw, arm posture, object pose for one lane."""
        cfg = self.cfg
        rng = self.rng
        obj_xy = np.asarray(cfg.object_xy)
        obj_z = cfg.pedestal_height + self.obj.half_height
        if scenario == 1:
            r = rng.uniform(*cfg.annulus)
            phi = rng.uniform(0.0, 2.0 * np.pi)
            yaw = rng.uniform(-np.pi, np.pi)
            root_xy = obj_xy + r * np.array([np.cos(phi), np.sin(phi)])
            q = self.spec.posture("neutral")
        else:
            standoff = (rng.uniform(*cfg.prehug_standoff) if scenario == 2
                        else cfg.hug_standoff)
            phi = rng.uniform(0.0, 2.0 * np.pi)
            root_xy = obj_xy + standoff * np.array([np.cos(phi), np.sin(phi)])
            yaw = _wrap(phi + np.pi)  # face the object
            q = self.spec.posture("prehug" if scenario == 2 else "hug")
        return root_xy, yaw, q, np.array([obj_xy[0], obj_xy[1], obj_z])

    def _respawn(self, idx: np.ndarray) -> None:
        torso = self.spec.torso_link
        for i in idx:
            scenario = int(self.rng.choice(self.cfg.scenarios))
            root_xy, yaw, q, obj_pos = self._spawn_pose(i, scenario)
            root_pos = np.array([root_xy[0], root_xy[1], self.spec.root_height])
            self.sim.set_lanes(i, q, root_pos, yaw)
            self.lane_scenario[i] = scenario
            self.lane_t[i] = 0
            self.obj_pos[i] = obj_pos
            self.obj_quat[i] = (1.0, 0.0, 0.0, 0.0)
            self.prev_obj_pos[i] = obj_pos
            self.prev_action[i] = q
            self.ep_return[i] = 0.0
            self.low_contact_streak[i] = 0
            self.attached[i] = scenario == 3
            self.stage[i] = STAGE_TRANSPORT if scenario == 3 else (
                STAGE_EMBRACE if scenario == 2 else STAGE_APPROACH)
            if scenario == 3:
                tp = self.sim.link_pos[i, torso]
                tq = self.sim.link_quat[i, torso]
                self.rel_pos[i] = quat_rotate_inv(tq, self.obj_pos[i] - tp)
                self.rel_quat[i] = quat_mul(_quat_conj(tq), self.obj_quat[i])

    # -- observations --------------------------------------------------------

    def _features(self) -> np.ndarray:
        return nsdf_features(self.nsdf, self.sim.link_pos, self.sim.link_quat,
                             self.obj_pos)

    def _obs(self, d_t: np.ndarray | None = None) -> np.ndarray:
        s_d = self.sim.deploy_obs(self.prev_action)
        if d_t is None:
            d_t = self._features()
        extra = task_features(self.sim.root_pos, self.sim.root_yaw,
                              self.obj_pos, self._target, d_t)
        return np.concatenate([s_d, extra], axis=1)

    # -- stepping ------------------------------------------------------------

    def step(self, actions: np.ndarray):
        actions = np.asarray(actions, dtype=np.float64)
        if actions.shape != (self.n_lanes, self.act_dim):
            raise ContractViolation(
                f"actions shape {actions.shape}, expected {(self.n_lanes, self.act_dim)}")
        if not np.all(np.isfinite(actions)):
            raise ContractViolation("non-finite action")
        if self.bundle is not None:
            # squash the raw latent to +-bound prior-std units so decoded
            # motions stay inside the prior's trained region
            s_d = self._last_obs[:, :self.bundle.manifest["deploy_dim"]]
            sigma_p = self.bundle.prior(s_d).sigma
            z_s = self.cfg.latent_bound * sigma_p * np.tanh(actions)
            robot_actions = act_through_prior(self.bundle, self._last_obs, z_s)
        else:
            robot_actions = actions

        cfg = self.cfg
        info = self.sim.step(robot_actions)
        self.lane_t += 1

        # attached objects ride the torso frame
        self.prev_obj_pos = self.obj_pos.copy()
        torso = self.spec.torso_link
        if np.any(self.attached):
            att = self.attached
            tp = self.sim.link_pos[att, torso]
            tq = self.sim.link_quat[att, torso]
            self.obj_pos[att] = tp + quat_rotate(tq, self.rel_pos[att])
            self.obj_quat[att] = quat_mul(tq, self.rel_quat[att])

        attached_now, contact, link_dist = attach_check(
            self.spec, self.sim.link_pos, self.sim.link_quat, self.obj,
            self.obj_pos, self.obj_quat, cfg.contact_eps, cfg.contact_samples)
        n_contact = contact.sum(axis=1)
        self.last_contact_count = n_contact

        newly = attached_now & ~self.attached
        if np.any(newly):
            tp = self.sim.link_pos[newly, torso]
            tq = self.sim.link_quat[newly, torso]
            self.rel_pos[newly] = quat_rotate_inv(tq, self.obj_pos[newly] - tp)
            self.rel_quat[newly] = quat_mul(_quat_conj(tq), self.obj_quat[newly])
            self.attached[newly] = True
            self.low_contact_streak[newly] = 0
            self.attach_contact_log.extend(int(c) for c in n_contact[newly])

        # detachment: sustained loss of grip drops the object to the floor
        holding = self.attached & ~newly
        weak = holding & (n_contact < 2)
        self.low_contact_streak[weak] += 1
        self.low_contact_streak[holding & ~weak] = 0
        dropped = self.low_contact_streak >= cfg.detach_steps
        if np.any(dropped):
            self.attached[dropped] = False
            self.obj_pos[dropped, 2] = self.obj.half_height
            self.low_contact_streak[dropped] = 0

        # stage bookkeeping (monotone except attachment loss)
        rel_o = self.obj_pos[:, :2] - self.sim.root_pos[:, :2]
        p_box = np.hypot(rel_o[:, 0], rel_o[:, 1])
        in_zone = p_box <= cfg.pickup_radius
        self.stage = np.where(self.attached, STAGE_TRANSPORT,
                              np.where(in_zone | (self.stage >= STAGE_EMBRACE),
                                       STAGE_EMBRACE, STAGE_APPROACH))

        d_t = self._features()
        breakdown = self._rewards(info, robot_actions, in_zone, p_box, d_t)
        self.last_breakdown = breakdown
        for name, vals in breakdown.as_dict().items():
            self._comp_sums[name] = self._comp_sums.get(name, 0.0) + float(vals.mean())
        self._comp_steps += 1
        reward = breakdown.total
        self.prev_action = robot_actions.copy()
        self.ep_return += reward

        rel_t = self._target[None, :] - self.obj_pos[:, :2]
        obj_to_target = np.hypot(rel_t[:, 0], rel_t[:, 1])
        success = obj_to_target <= cfg.target_radius
        drop_fail = ~self.attached & (
            self.obj_pos[:, 2] < cfg.pedestal_height - 1e-9) & ~success
        terminal = success | drop_fail
        timeout = (self.lane_t >= cfg.horizon) & ~terminal

        if self._trace is not None:
            self._trace.append((
                int(self.lane_t[0]), STAGE_NAMES[int(self.stage[0])],
                float(p_box[0]), float(obj_to_target[0]), int(n_contact[0])))

        done = terminal | timeout
        final_obs = self._obs(d_t)
        self._last_obs = final_obs
        if np.any(done):
            idx = np.where(done)[0]
            self.last_episode_stats = {
                "returns": self.ep_return[idx].tolist(),
                "successes": success[idx].tolist(),
            }
            self._respawn(idx)
            self._last_obs = self._obs()
        else:
            self.last_episode_stats = {}
        return self._last_obs, reward, terminal, timeout, final_obs

    def _rewards(self, info, robot_actions, in_zone, p_box, d_t):
        cfg = self.cfg
        rcfg = self.reward_cfg
        sim = self.sim
        r_torque, r_acc, r_action = smoothness(
            info.tau, info.qddot, robot_actions, self.prev_action, rcfg)
        foot_speed = np.hypot(info.foot_vel[:, :, 0], info.foot_vel[:, :, 1])
        load = cfg.robot_weight_n + self.attached * self.obj.mass * GRAVITY
        foot_force = np.repeat(load[:, None] / 2.0, 2, axis=1)
        r_limit, r_slip, r_force = physical_limits(
            sim.q, self.spec.lower_limits, self.spec.upper_limits,
            foot_speed, foot_force, rcfg)

        yaw = sim.root_yaw
        rel_o = self.obj_pos[:, :2] - sim.root_pos[:, :2]
        th_box = _wrap(np.arctan2(rel_o[:, 1], rel_o[:, 0]) - yaw)
        c, s = np.cos(yaw), np.sin(yaw)
        v_world = np.stack([
            c * info.base_lin_local[:, 0] - s * info.base_lin_local[:, 1],
            s * info.base_lin_local[:, 0] + c * info.base_lin_local[:, 1],
        ], axis=1)
        dir_o = rel_o / np.maximum(p_box, 1e-9)[:, None]
        v_toward_obj = np.sum(v_world * dir_o, axis=1)
        v_hat_body = rcfg.approach_speed - v_toward_obj

        rel_t = self._target[None, :] - sim.root_pos[:, :2]
        p_tgt = np.hypot(rel_t[:, 0], rel_t[:, 1])
        th_tgt = _wrap(np.arctan2(rel_t[:, 1], rel_t[:, 0]) - yaw)
        rel_obj_t = self._target[None, :] - self.obj_pos[:, :2]
        d_obj_t = np.maximum(np.hypot(rel_obj_t[:, 0], rel_obj_t[:, 1]), 1e-9)
        v_obj = (self.obj_pos[:, :2] - self.prev_obj_pos[:, :2]) / self.sim.cfg.dt
        v_box_toward = np.sum(v_obj * rel_obj_t / d_obj_t[:, None], axis=1)
        v_hat_box = rcfg.transport_speed - v_box_toward

        hand_sd, hand_dz = self._hand_offsets()
        walk = r_walk(in_zone, p_box, th_box, v_hat_body, rcfg.sigma)
        carry = r_carry(in_zone, p_tgt, th_tgt, v_hat_box, rcfg.sigma)
        arm = r_arm(in_zone, hand_sd[:, 0], hand_sd[:, 1],
                    hand_dz[:, 0], hand_dz[:, 1], rcfg.sigma)
        nsdf = r_nsdf(in_zone, d_t, rcfg.sigma_nsdf)
        return combine(r_torque, r_acc, r_action, r_slip, r_force, r_limit,
                       walk, carry, arm, nsdf)

    def _hand_offsets(self):
        """Signed obj-surface distance and vertical offset per hand (N,2)."""
        pts = []
        for h in self.spec.hand_links:
            tip = self.spec.links[h].capsule.b
            pts.append(self.sim.link_pos[:, h]
                       + quat_rotate(self.sim.link_quat[:, h], tip))
        out_sd = np.empty((self.n_lanes, 2))
        out_dz = np.empty((self.n_lanes, 2))
        for j, p in enumerate(pts):
            local = quat_rotate_inv(self.obj_quat, p - self.obj_pos)
            out_sd[:, j] = object_sdf(self.obj.shape, np.asarray(self.obj.dims), local)
            out_dz[:, j] = p[:, 2] - self.obj_pos[:, 2]
        return out_sd, out_dz

    def pop_component_means(self) -> dict:
        """Mean per-component reward since the last call (empty if no steps)."""
        if self._comp_steps == 0:
            return {}
        out = {k: v / self._comp_steps for k, v in self._comp_sums.items()}
        self._comp_sums = {}
        self._comp_steps = 0
        return out

    # -- tracing -------------------------------------------------------------

    def start_trace(self) -> None:
        """Record lane-0 rows (t, stage, dist_box, dist_target, contacts)."""
        self._trace = []

    def take_trace(self) -> list:
        rows, self._trace = self._trace or [], None
        return rows


def _quat_conj(q: np.ndarray) -> np.ndarray:
    out = np.array(q, dtype=np.float64, copy=True)
    out[..., 1:] *= -1.0
    return out


def write_trace_csv(rows: list, path: str) -> None:
    with open(path, "w") as f:
        f.write("t,stage,dist_box,dist_target,contacts\n")
        for t, stage, db, dt_, nc in rows:
            f.write(f"{t},{stage},{db:.10g},{dt_:.10g},{nc}\n")


class ScriptedEmbracePolicy:
    """Hand-written expert over raw joint targets; proves the task is solvable.

    Reads privileged env state. Approach: steer at the object and brake into
    the pick-up zone. Embrace: stand still and close the arms from prehug to
    hug. Transport: steer so the held object converges on the target.
    """

    def __init__(self, env: EmbraceEnv, close_rate: float = 0.04):
        if env.bundle is not None:
            raise ContractViolation("scripted policy drives raw joint targets")
        self.env = env
        self.close_rate = close_rate
        self.alpha = np.zeros(env.n_lanes)
        self._prehug = env.spec.posture("prehug")
        self._hug = env.spec.posture("hug")
        self._neutral = env.spec.posture("neutral")

    def __call__(self, obs) -> np.ndarray:
        env = self.env
        self.alpha[env.lane_t == 0] = 0.0
        n = env.n_lanes
        act = np.zeros((n, env.spec.dof_count))
        root = env.sim.root_pos[:, :2]
        yaw = env.sim.root_yaw
        rel_o = env.obj_pos[:, :2] - root
        dist = np.hypot(rel_o[:, 0], rel_o[:, 1])
        th_o = _wrap(np.arctan2(rel_o[:, 1], rel_o[:, 0]) - yaw)

        to_t = env._target[None, :] - root
        dir_t = to_t / np.maximum(np.hypot(to_t[:, 0], to_t[:, 1]), 1e-9)[:, None]
        aim = env._target[None, :] - env.cfg.hug_standoff * dir_t
        rel_a = aim - root
        th_t = _wrap(np.arctan2(rel_a[:, 1], rel_a[:, 0]) - yaw)
        obj_t = np.hypot(env._target[0] - env.obj_pos[:, 0],
                         env._target[1] - env.obj_pos[:, 1])

        approaching = ~env.attached & (dist > 0.315)
        closing = ~env.attached & ~approaching
        carrying = env.attached

        v = np.zeros(n)
        w = np.zeros(n)
        v[approaching] = np.clip(1.8 * (dist[approaching] - env.cfg.hug_standoff),
                                 0.0, 0.8) * np.maximum(np.cos(th_o[approaching]), 0.0)
        v[(np.abs(th_o) > 0.5) & approaching] = 0.0
        w[approaching] = np.clip(2.0 * th_o[approaching], -1.0, 1.0)
        v[carrying] = np.clip(1.2 * obj_t[carrying], 0.0, 0.5) * np.maximum(
            np.cos(th_t[carrying]), 0.0)
        w[carrying] = np.clip(2.0 * th_t[carrying], -1.0, 1.0)

        self.alpha[closing] = np.minimum(self.alpha[closing] + self.close_rate, 1.0)
        arms = ((1.0 - self.alpha)[:, None] * self._prehug
                + self.alpha[:, None] * self._hug)
        act[:, 12:] = arms[:, 12:]
        # arms stay neutral until inside the pick-up zone: prehug sweeps a
        # wide enough arc to squeeze-attach in passing at ~0.36-0.40 m from the surface
        act[approaching & (dist > env.cfg.pickup_radius), 12:] = self._neutral[12:]
        act[carrying, 12:] = self._hug[12:]

        g_v, g_w = env.sim.cfg.loco_gain_v, env.sim.cfg.loco_gain_w
        act[:, 2] = act[:, 8] = -v / g_v  # hip pitch pair encodes forward speed
        act[:, 0] = act[:, 6] = w / g_w  # hip yaw pair encodes turn rate
        return act
