"""Per-step reward terms: smoothness and physical-limit penalties plus the
staged task terms (walk / carry / arm / contact-feature shaping).

All functions are pure and vectorized over environment lanes: scalar inputs
per lane, (N,) outputs. Penalty weights are negative by contract; task terms
carry unit weight. The in-zone/out-zone branches are exact piecewise
semantics, not approximations: r_walk is identically 1 inside the pick-up
zone and r_carry identically 0 outside it.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class RewardConfig:
    w_torque: float = -1e-7
    w_joint_acc: float = -2.5e-8
    w_action_rate: float = -0.5
    w_feet_slip: float = -0.05
    w_feet_force: float = -1e-5
    w_joint_limit: float = -1e-3
    sigma: float = 1.0
    sigma_nsdf: float = 5.0
    f_max: float = 500.0
    approach_speed: float = 0.8  # m/s toward the object while approaching
    transport_speed: float = 0.5  # m/s toward the target while carrying
    contact_force_threshold: float = 1.0  # N, slippage indicator

    def __post_init__(self):
        for name in ("w_torque", "w_joint_acc", "w_action_rate", "w_feet_slip",
                     "w_feet_force", "w_joint_limit"):
            if getattr(self, name) > 0.0:
                raise ConfigError(f"penalty weight {name} must be <= 0")


@dataclass
class RewardBreakdown:
    torque: np.ndarray
    joint_acc: np.ndarray
    action_rate: np.ndarray
    feet_slip: np.ndarray
    feet_force: np.ndarray
    joint_limit: np.ndarray
    r_walk: np.ndarray
    r_carry: np.ndarray
    r_arm: np.ndarray
    r_nsdf: np.ndarray
    total: np.ndarray

    def component_names(self) -> list[str]:
        return [f.name for f in fields(self) if f.name != "total"]

    def as_dict(self) -> dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def smoothness(tau, qddot, action, prev_action, cfg: RewardConfig):
    """Weighted torque, joint-acceleration, and action-rate penalties."""
    r_torque = cfg.w_torque * np.sum(tau * tau, axis=-1)
    r_acc = cfg.w_joint_acc * np.sum(qddot * qddot, axis=-1)
    diff = prev_action - action
    r_action = cfg.w_action_rate * np.sum(diff * diff, axis=-1)
    return r_torque, r_acc, r_action


def physical_limits(q, lower, upper, foot_planar_speed, foot_force, cfg: RewardConfig):
    """Weighted joint-limit, feet-slippage, and contact-force penalties.

    foot_planar_speed and foot_force are (N,F) per-foot proxies.
    """
    over = np.maximum(q - upper, 0.0) + np.maximum(lower - q, 0.0)
    r_limit = cfg.w_joint_limit * np.sum(over, axis=-1)
    in_contact = np.abs(foot_force) > cfg.contact_force_threshold
    r_slip = cfg.w_feet_slip * np.sum(foot_planar_speed * in_contact, axis=-1)
    r_force = cfg.w_feet_force * np.sum(np.maximum(np.abs(foot_force) - cfg.f_max, 0.0), axis=-1)
    return r_limit, r_slip, r_force


def r_walk(in_zone, p_hat_box, theta_hat_box, v_hat_body, sigma: float):
    """Identically 1 inside the pick-up zone; three-exp approach shaping outside."""
    out = (
        np.exp(-np.abs(sigma * p_hat_box))
        + np.exp(-np.abs(sigma * theta_hat_box))
        + np.exp(-np.abs(sigma * v_hat_body))
    )
    return np.where(in_zone, 1.0, out)


def r_carry(in_zone, p_hat_target, theta_hat_target, v_hat_box, sigma: float):
    """Identically 0 outside the pick-up stage; transport shaping inside."""
    inside = (
        np.exp(-np.abs(sigma * p_hat_target))
        + np.exp(-np.abs(sigma * theta_hat_target))
        + np.exp(-np.abs(sigma * v_hat_box))
    )
    return np.where(in_zone, inside, 0.0)


def r_arm(in_zone, p_hat_lh, p_hat_rh, h_hat_lh, h_hat_rh, sigma: float):
    """Hand-to-object shaping, zero during the approach stage."""
    val = np.exp(-sigma * (np.abs(p_hat_lh) + np.abs(p_hat_rh))) + np.exp(
        -sigma * (np.abs(h_hat_lh) + np.abs(h_hat_rh))
    )
    return np.where(in_zone, val, 0.0)


def r_nsdf(in_zone, d_t, sigma_n: float):
    """Mean over links of exp(-sigma_n * max(0, d_i)), gated to the zone.

    Rewards many upper-body links staying close to (or touching) the object;
    links already in contact (d <= 0) contribute the maximum 1.
    """
    per_link = np.exp(-sigma_n * np.maximum(d_t, 0.0))
    return np.where(in_zone, per_link.mean(axis=-1), 0.0)


def combine(
    torque, joint_acc, action_rate, feet_slip, feet_force, joint_limit,
    walk, carry, arm, nsdf,
) -> RewardBreakdown:
    """Total = sum of already-weighted penalties plus unit-weight task terms."""
    total = (
        torque + joint_acc + action_rate + feet_slip + feet_force + joint_limit
        + walk + carry + arm + nsdf
    )
    return RewardBreakdown(
        torque=torque,
        joint_acc=joint_acc,
        action_rate=action_rate,
        feet_slip=feet_slip,
        feet_force=feet_force,
        joint_limit=joint_limit,
        r_walk=walk,
        r_carry=carry,
        r_arm=arm,
        r_nsdf=nsdf,
        total=total,
    )
