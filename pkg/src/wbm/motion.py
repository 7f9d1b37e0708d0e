"""Synthetic reference motion clips: walk, reach, prehug, hug_hold.

Clips are sum-of-sines joint trajectories around blended base postures,
scaled analytically to respect joint limits (C1 smoothness is preserved; no
post-hoc clipping) and the finite-difference velocity cap. Walking clips
embed the DC hip offsets that the quasi-static base maps to root velocity,
plus the matching integrated root trajectory, so tracking them is
self-consistent. File format: one text file per clip, header line
"name fps dof_count frame_count", then one row per frame with root position
(3), root quaternion wxyz (4), joint angles (dof_count), all '%.17g' so
float64 round-trips bit-exactly.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation
from .robot import RobotSpec, fk_batch
from .rotations import quat_from_yaw, quat_nlerp

CLIP_KINDS = ("walk", "reach", "prehug", "hug_hold")

# base velocity readout gains shared with the simulator (see sim module)
LOCO_GAIN_V = 2.5
LOCO_GAIN_W = 2.0


@dataclass
class MotionClip:
    name: str
    fps: float
    root_pos: np.ndarray  # (F,3)
    root_quat: np.ndarray  # (F,4)
    q: np.ndarray  # (F,L)

    @property
    def frame_count(self) -> int:
        return self.q.shape[0]

    @property
    def duration(self) -> float:
        return (self.frame_count - 1) / self.fps

    def validate(self, spec: RobotSpec, vel_cap: float = 10.0) -> None:
        if self.frame_count < 2:
            raise ContractViolation("clip needs at least 2 frames")
        if self.q.shape[1] != spec.dof_count:
            raise ContractViolation(
                f"clip dof {self.q.shape[1]} does not match robot {spec.dof_count}"
            )
        if np.any(self.q < spec.lower_limits) or np.any(self.q > spec.upper_limits):
            raise ContractViolation(f"clip {self.name} violates joint limits")
        vel = np.abs(np.diff(self.q, axis=0)) * self.fps
        if vel.max(initial=0.0) > vel_cap:
            raise ContractViolation(
                f"clip {self.name} exceeds velocity cap: {vel.max():.3f} > {vel_cap}"
            )


@dataclass
class ReferenceFrame:
    q: np.ndarray
    root_pos: np.ndarray
    root_quat: np.ndarray
    body_pos: np.ndarray  # (L,3) world positions via FK


def reference_lookup(spec: RobotSpec, clip: MotionClip, t: float) -> ReferenceFrame:
    """Linear interpolation between frames; t clamps to the clip range."""
    ft = np.clip(t, 0.0, clip.duration) * clip.fps
    i0 = int(np.floor(ft))
    i0 = min(i0, clip.frame_count - 2)
    w = ft - i0
    q = (1.0 - w) * clip.q[i0] + w * clip.q[i0 + 1]
    root_pos = (1.0 - w) * clip.root_pos[i0] + w * clip.root_pos[i0 + 1]
    root_quat = quat_nlerp(clip.root_quat[i0], clip.root_quat[i0 + 1], np.array(w))
    body_pos, _ = fk_batch(spec, root_pos[None], root_quat[None], q[None])
    return ReferenceFrame(q=q, root_pos=root_pos, root_quat=root_quat, body_pos=body_pos[0])


def _sines(rng, n_frames, fps, n_terms, f_lo=0.4, f_hi=1.8):
    """Unit-amplitude smooth signal: sum of n_terms sines, max |value| <= 1."""
    t = np.arange(n_frames) / fps
    amps = rng.uniform(0.3, 1.0, n_terms)
    amps /= amps.sum()
    freqs = rng.uniform(f_lo, f_hi, n_terms)
    phases = rng.uniform(0.0, 2.0 * np.pi, n_terms)
    sig = np.zeros(n_frames)
    for a, f, ph in zip(amps, freqs, phases):
        sig += a * np.sin(2.0 * np.pi * f * t + ph)
    return sig, float((amps * 2.0 * np.pi * freqs).sum())  # signal, velocity bound


def _smoothstep(x):
    x = np.clip(x, 0.0, 1.0)
    return x * x * (3.0 - 2.0 * x)


def _gait(t, freq, amp, phase):
    return amp * np.sin(2.0 * np.pi * freq * t + phase)


def generate_clip(
    spec: RobotSpec,
    kind: str,
    duration: float,
    seed: int,
    fps: float = 50.0,
    vel_cap: float = 10.0,
) -> MotionClip:
    """Deterministic synthetic clip; duration >= 0.5 s."""
    if kind not in CLIP_KINDS:
        raise ContractViolation(f"unknown clip kind {kind!r}, valid: {CLIP_KINDS}")
    if duration < 0.5:
        raise ContractViolation(f"clip duration must be >= 0.5 s, got {duration}")
    rng = np.random.default_rng(np.random.SeedSequence([CLIP_KINDS.index(kind), seed]))
    F = int(round(duration * fps))
    L = spec.dof_count
    t = np.arange(F) / fps
    lo, hi = spec.lower_limits, spec.upper_limits

    neutral = spec.posture("neutral")
    prehug = spec.posture("prehug")
    hug = spec.posture("hug")

    # base posture trajectory (F,L)
    base = np.tile(neutral, (F, 1))
    speed = 0.0
    yaw_rate = 0.0
    gait_amp = 0.0
    if kind == "walk":
        speed = float(rng.uniform(0.3, 0.9))
        yaw_rate = float(rng.uniform(-0.25, 0.25)) if rng.uniform() < 0.6 else 0.0
        gait_amp = float(rng.uniform(0.15, 0.3))
    elif kind == "reach":
        # arms cycle neutral -> prehug -> neutral
        cyc = 0.5 - 0.5 * np.cos(2.0 * np.pi * rng.uniform(0.2, 0.4) * t)
        base = neutral[None] + cyc[:, None] * (prehug - neutral)[None]
    elif kind == "prehug":
        blend = _smoothstep(t / min(1.0, duration * 0.5))
        base = neutral[None] + blend[:, None] * (prehug - neutral)[None]
    elif kind == "hug_hold":
        blend = _smoothstep(t / min(1.0, duration * 0.4))
        base = prehug[None] + blend[:, None] * (hug - prehug)[None]
        if rng.uniform() < 0.5:  # carry composite: walk while holding
            speed = float(rng.uniform(0.2, 0.5))
            yaw_rate = float(rng.uniform(-0.15, 0.15))
            gait_amp = float(rng.uniform(0.1, 0.2))

    if speed != 0.0 or gait_amp != 0.0:
        freq = float(rng.uniform(1.0, 1.6))
        # DC offsets command the base; antiphase gait cancels in the readout
        base[:, 2] += -speed / LOCO_GAIN_V + _gait(t, freq, gait_amp, 0.0)
        base[:, 8] += -speed / LOCO_GAIN_V + _gait(t, freq, gait_amp, np.pi)
        base[:, 0] += yaw_rate / LOCO_GAIN_W
        base[:, 6] += yaw_rate / LOCO_GAIN_W
        base[:, 3] += gait_amp * 1.2 + _gait(t, freq, gait_amp * 1.2, -0.5 * np.pi)
        base[:, 9] += gait_amp * 1.2 + _gait(t, freq, gait_amp * 1.2, 0.5 * np.pi)
        base[:, 4] += _gait(t, freq, gait_amp * 0.5, np.pi)
        base[:, 10] += _gait(t, freq, gait_amp * 0.5, 0.0)

    # overlay small smooth noise on every joint, amplitude-fitted to limits
    q = base.copy()
    for j in range(L):
        sig, vbound = _sines(rng, F, fps, n_terms=2)
        room = float(min((base[:, j] - lo[j]).min(), (hi[j] - base[:, j]).min()))
        amp = min(0.08, max(0.0, room - 0.01))
        q[:, j] += amp * sig

    # enforce the velocity cap analytically: scale down if the bound is hit
    vel = np.abs(np.diff(q, axis=0)) * fps
    vmax = float(vel.max(initial=0.0))
    if vmax > 0.95 * vel_cap:
        center = q.mean(axis=0, keepdims=True)
        q = center + (q - center) * (0.95 * vel_cap / vmax)
        q = np.clip(q, lo + 1e-9, hi - 1e-9)

    # integrate the root trajectory implied by the locomotion offsets
    yaw = yaw_rate * t
    vx = speed * np.cos(yaw)
    vy = speed * np.sin(yaw)
    root_pos = np.zeros((F, 3))
    root_pos[:, 0] = np.concatenate([[0.0], np.cumsum(vx[:-1])]) / fps
    root_pos[:, 1] = np.concatenate([[0.0], np.cumsum(vy[:-1])]) / fps
    root_pos[:, 2] = spec.root_height
    root_quat = quat_from_yaw(yaw)

    clip = MotionClip(
        name=f"{kind}_{seed}", fps=fps, root_pos=root_pos, root_quat=root_quat, q=q
    )
    clip.validate(spec, vel_cap)
    return clip


# ---------------------------------------------------------------------------
# File io


def save_clip(clip: MotionClip, path: str) -> None:
    if " " in clip.name:
        raise ContractViolation("clip name must not contain spaces")
    with open(path, "w") as f:
        f.write(f"{clip.name} {clip.fps:.17g} {clip.q.shape[1]} {clip.frame_count}\n")
        rows = np.concatenate([clip.root_pos, clip.root_quat, clip.q], axis=1)
        for row in rows:
            f.write(" ".join(f"{x:.17g}" for x in row) + "\n")


def load_clip(path: str) -> MotionClip:
    with open(path) as f:
        header = f.readline().split()
        if len(header) != 4:
            raise ContractViolation(f"malformed clip header in {path}")
        name, fps, dof, frames = header[0], float(header[1]), int(header[2]), int(header[3])
        data = np.loadtxt(f, dtype=np.float64, ndmin=2)
    if data.shape != (frames, 7 + dof):
        raise ContractViolation(
            f"clip {path}: header promises {(frames, 7 + dof)}, file has {data.shape}"
        )
    quats = data[:, 3:7]
    if np.any(np.abs(np.linalg.norm(quats, axis=1) - 1.0) > 1e-9):
        raise ContractViolation(f"clip {path} contains non-unit root quaternions")
    return MotionClip(name=name, fps=fps, root_pos=data[:, 0:3], root_quat=quats, q=data[:, 7:])


@dataclass
class ClipLibrary:
    clips: list[MotionClip]

    def sample(self, rng: np.random.Generator) -> MotionClip:
        return self.clips[int(rng.integers(0, len(self.clips)))]

    def save(self, dirpath: str) -> None:
        os.makedirs(dirpath, exist_ok=True)
        for c in self.clips:
            save_clip(c, os.path.join(dirpath, f"{c.name}.txt"))

    @staticmethod
    def load(dirpath: str) -> "ClipLibrary":
        clips = [
            load_clip(os.path.join(dirpath, f))
            for f in sorted(os.listdir(dirpath))
            if f.endswith(".txt")
        ]
        if not clips:
            raise ContractViolation(f"no clips found in {dirpath}")
        return ClipLibrary(clips)


def default_library(spec: RobotSpec, seeds_per_kind: int = 4, duration: float = 6.0) -> ClipLibrary:
    clips = [
        generate_clip(spec, kind, duration, seed)
        for kind in CLIP_KINDS
        for seed in range(seeds_per_kind)
    ]
    return ClipLibrary(clips)
