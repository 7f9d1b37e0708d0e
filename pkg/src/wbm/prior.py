"""Teacher-to-student motion prior: encoder E, decoder D, learnable prior R.

E(s_p, s_g) and R(s_d) are Gaussian heads over a shared latent width; D maps
(s_d, z) to a 27-dim action mean with a fixed decoder std. Training regresses
the student's decoded action onto the teacher's mean action along the
student's own rollouts, with a latent-smoothness term on consecutive encoder
means and a KL term tying E to R. After training D and R are frozen; they
define the latent action space for the downstream task policy.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractViolation, TrainingFailure
from .mimic import MimicEnv, proprio_dim, goal_dim
from .motion import ClipLibrary
from .nets import (
    Adam,
    GaussianHead,
    GaussianParams,
    Mlp,
    kl_diag_with_grads,
    load_checkpoint,
    save_checkpoint,
)
from .robot import RobotSpec

V_BLOCK = 3  # leading root linear velocity entries stripped for deployment


def deploy_from_proprio(proprio: np.ndarray) -> np.ndarray:
    """DeployState = ProprioState minus the root linear velocity block."""
    p = np.asarray(proprio, dtype=np.float64)
    if p.shape[-1] < V_BLOCK + 1:
        raise ContractViolation(f"proprio vector too short: {p.shape}")
    return p[..., V_BLOCK:]


@dataclass
class DistillConfig:
    latent_dim: int = 32
    alpha: float = 0.1
    beta: float = 0.01
    lr: float = 1e-3
    steps: int = 2000
    n_lanes: int = 16
    decoder_std: float = 0.05
    hidden: tuple = (256, 128)
    init_log_std: float = -1.0

    def __post_init__(self):
        if self.latent_dim < 1 or self.decoder_std <= 0:
            raise ConfigError("latent_dim must be >= 1 and decoder_std > 0")
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError("alpha and beta must be non-negative")


def distill_loss(a_star, a_hat, mu_now, mu_prev, enc: GaussianParams,
                 pri: GaussianParams, alpha: float, beta: float):
    """Total = action reconstruction + alpha * latent smoothness + beta * KL(E || R).

    All components are batch means; returns (total, components dict).
    """
    da = np.asarray(a_hat) - np.asarray(a_star)
    l_action = float(np.mean(np.sum(da * da, axis=-1)))
    dm = np.asarray(mu_now) - np.asarray(mu_prev)
    l_regu = float(np.mean(np.sum(dm * dm, axis=-1)))
    l_kl = float(np.mean(enc.kl_to(pri)))
    total = l_action + alpha * l_regu + beta * l_kl
    return total, {"l_action": l_action, "l_regu": l_regu, "l_kl": l_kl}


class PriorBundle:
    """E, D, R plus the manifest that pins widths and the fixed decoder std."""

    def __init__(self, encoder: GaussianHead, decoder: Mlp, prior_net: GaussianHead,
                 manifest: dict):
        self.encoder = encoder
        self.decoder = decoder
        self.prior_net = prior_net
        self.manifest = manifest

    @staticmethod
    def create(spec: RobotSpec, cfg: DistillConfig, rng: np.random.Generator) -> "PriorBundle":
        sp, sg = proprio_dim(spec), goal_dim(spec)
        sd = sp - V_BLOCK
        act = spec.dof_count
        h = list(cfg.hidden)
        acts = ["tanh"] * len(h) + ["identity"]
        enc = GaussianHead(Mlp([sp + sg, *h, cfg.latent_dim], acts, rng, out_scale=0.01),
                           init_log_std=cfg.init_log_std)
        pri = GaussianHead(Mlp([sd, *h, cfg.latent_dim], acts, rng, out_scale=0.01),
                           init_log_std=cfg.init_log_std)
        dec = Mlp([sd + cfg.latent_dim, *h, act], acts, rng, out_scale=0.01)
        manifest = {
            "alpha": cfg.alpha,
            "beta": cfg.beta,
            "latent_dim": cfg.latent_dim,
            "decoder_std": cfg.decoder_std,
            "hidden": h,
            "proprio_dim": sp,
            "goal_dim": sg,
            "deploy_dim": sd,
            "act_dim": act,
            "frozen": False,
        }
        return PriorBundle(enc, dec, pri, manifest)

    # -- Eq-style accessors ------------------------------------------------
    def encode(self, s_p: np.ndarray, s_g: np.ndarray) -> GaussianParams:
        return self.encoder.dist(np.concatenate([s_p, s_g], axis=-1))

    def prior(self, s_d: np.ndarray) -> GaussianParams:
        return self.prior_net.dist(s_d)

    def decode(self, s_d: np.ndarray, z: np.ndarray) -> np.ndarray:
        if not np.all(np.isfinite(z)):
            raise ContractViolation("latent code has non-finite entries")
        return self.decoder(np.concatenate([s_d, z], axis=-1))

    def freeze_deployment(self) -> None:
        """Freeze D and R (the deployed pair); the encoder stays trainable."""
        self.decoder.freeze()
        self.prior_net.freeze()
        self.manifest["frozen"] = True

    @property
    def frozen(self) -> bool:
        return bool(self.manifest.get("frozen"))

    # -- persistence ---------------------------------------------------------
    def _record_probes(self, rng: np.random.Generator) -> None:
        sp, sg = self.manifest["proprio_dim"], self.manifest["goal_dim"]
        s_p = rng.normal(size=(1, sp))
        s_g = rng.normal(size=(1, sg))
        s_d = deploy_from_proprio(s_p)
        z = rng.normal(size=(1, self.manifest["latent_dim"]))
        enc = self.encode(s_p, s_g)
        pri = self.prior(s_d)
        act = self.decode(s_d, z)
        self.manifest["probes"] = {
            "s_p": s_p[0].tolist(),
            "s_g": s_g[0].tolist(),
            "z": z[0].tolist(),
            "enc_mu": enc.mu[0].tolist(),
            "enc_sigma": enc.sigma[0].tolist(),
            "prior_mu": pri.mu[0].tolist(),
            "prior_sigma": pri.sigma[0].tolist(),
            "action": act[0].tolist(),
        }

    def save(self, path: str, probe_rng: np.random.Generator | None = None) -> None:
        if probe_rng is not None:
            self._record_probes(probe_rng)
        arrays = self.encoder.state_arrays("encoder")
        arrays.update(self.prior_net.state_arrays("prior"))
        arrays.update(self.decoder.state_arrays("decoder"))
        save_checkpoint(path, {"kind": "prior_bundle", **self.manifest}, arrays)

    @staticmethod
    def load(path: str) -> "PriorBundle":
        meta, arrays = load_checkpoint(path)
        if meta.get("kind") != "prior_bundle":
            raise ContractViolation(f"checkpoint {path} is not a prior bundle")
        h = meta["hidden"]
        acts = ["tanh"] * len(h) + ["identity"]
        rng = np.random.default_rng(0)
        sp, sg, sd = meta["proprio_dim"], meta["goal_dim"], meta["deploy_dim"]
        enc = GaussianHead(Mlp([sp + sg, *h, meta["latent_dim"]], acts, rng))
        pri = GaussianHead(Mlp([sd, *h, meta["latent_dim"]], acts, rng))
        dec = Mlp([sd + meta["latent_dim"], *h, meta["act_dim"]], acts, rng)
        enc.load_state_arrays("encoder", arrays)
        pri.load_state_arrays("prior", arrays)
        dec.load_state_arrays("decoder", arrays)
        manifest = {k: v for k, v in meta.items() if k != "kind"}
        bundle = PriorBundle(enc, dec, pri, manifest)
        if manifest.get("frozen"):
            bundle.decoder.freeze()
            bundle.prior_net.freeze()
        return bundle

    def check_probes(self, atol: float = 1e-12) -> None:
        """Golden probe replay; raises on drift."""
        p = self.manifest.get("probes")
        if not p:
            raise ContractViolation("bundle has no recorded probes")
        s_p = np.array([p["s_p"]])
        s_g = np.array([p["s_g"]])
        s_d = deploy_from_proprio(s_p)
        enc = self.encode(s_p, s_g)
        pri = self.prior(s_d)
        act = self.decode(s_d, np.array([p["z"]]))
        for got, want, name in [
            (enc.mu[0], p["enc_mu"], "enc_mu"),
            (enc.sigma[0], p["enc_sigma"], "enc_sigma"),
            (pri.mu[0], p["prior_mu"], "prior_mu"),
            (pri.sigma[0], p["prior_sigma"], "prior_sigma"),
            (act[0], p["action"], "action"),
        ]:
            if np.max(np.abs(got - np.asarray(want))) > atol:
                raise ContractViolation(f"golden probe {name} drifted")


def distill_grads(bundle: PriorBundle, obs: np.ndarray, a_star: np.ndarray,
                  mu_prev: np.ndarray, alpha: float, beta: float, eps: np.ndarray):
    """Loss + gradients for one batch, with the reparametrization noise given.

    Pure: no parameter mutation. Returns (total, components,
    {encoder, prior, decoder} gradient lists, a_hat, mu_e).
    """
    sp = bundle.manifest["proprio_dim"]
    s_p = obs[:, :sp]
    s_g = obs[:, sp:]
    s_d = deploy_from_proprio(s_p)
    B = obs.shape[0]

    enc_in = np.concatenate([s_p, s_g], axis=1)
    mu_e, enc_cache = bundle.encoder.body.forward(enc_in)
    log_se = bundle.encoder.log_std
    sigma_e = np.exp(log_se)
    z = mu_e + sigma_e * eps

    dec_in = np.concatenate([s_d, z], axis=1)
    a_hat, dec_cache = bundle.decoder.forward(dec_in)

    mu_r, pri_cache = bundle.prior_net.body.forward(s_d)
    log_sr = bundle.prior_net.log_std

    enc_dist = GaussianParams(mu_e, np.broadcast_to(sigma_e, mu_e.shape).copy())
    pri_dist = GaussianParams(mu_r, np.broadcast_to(np.exp(log_sr), mu_r.shape).copy())
    total, comps = distill_loss(a_star, a_hat, mu_e, mu_prev, enc_dist, pri_dist,
                                alpha, beta)
    if not np.isfinite(total):
        raise TrainingFailure("non-finite distillation loss")

    # action term -> decoder, and into z via the decoder input
    up_a = 2.0 * (a_hat - a_star) / B
    dec_grads, d_dec_in = bundle.decoder.backward(dec_cache, up_a)
    d_z = d_dec_in[:, s_d.shape[1]:]

    # KL term -> encoder and prior heads (batch-mean closed form)
    _, d_mu_e_kl, d_log_se_kl, d_mu_r_kl, d_log_sr_kl = kl_diag_with_grads(
        mu_e, np.broadcast_to(log_se, mu_e.shape), mu_r,
        np.broadcast_to(log_sr, mu_r.shape))

    # encoder mean upstream: reparametrization + smoothness + KL
    up_mu_e = d_z + alpha * 2.0 * (mu_e - mu_prev) / B + beta * d_mu_e_kl
    enc_grads, _ = bundle.encoder.body.backward(enc_cache, up_mu_e)
    g_log_se = (d_z * eps * sigma_e + beta * d_log_se_kl).sum(axis=0)

    pri_grads, _ = bundle.prior_net.body.backward(pri_cache, beta * d_mu_r_kl)
    g_log_sr = beta * d_log_sr_kl.sum(axis=0)

    grads = {
        "encoder": enc_grads + [g_log_se],
        "prior": pri_grads + [g_log_sr],
        "decoder": dec_grads,
    }
    return total, comps, grads, a_hat, mu_e


def _distill_step(bundle: PriorBundle, obs: np.ndarray, a_star: np.ndarray,
                  mu_prev: np.ndarray, cfg: DistillConfig,
                  opts: dict, rng: np.random.Generator):
    """One gradient step on E, D, R from a batch of visited states."""
    eps = rng.standard_normal((obs.shape[0], bundle.manifest["latent_dim"]))
    total, comps, grads, a_hat, mu_e = distill_grads(
        bundle, obs, a_star, mu_prev, cfg.alpha, cfg.beta, eps)
    bundle.encoder.apply_gradients(opts["encoder"], grads["encoder"])
    bundle.prior_net.apply_gradients(opts["prior"], grads["prior"])
    bundle.decoder.apply_gradients(opts["decoder"], grads["decoder"])
    return a_hat, mu_e, total, comps


def run_distillation(teacher_policy, spec: RobotSpec, library: ClipLibrary,
                     out_dir: str, cfg: DistillConfig | None = None, seed: int = 0,
                     bundle: PriorBundle | None = None) -> dict:
    """On-policy imitation: student rolls out, teacher labels visited states.

    Writes the frozen bundle checkpoint plus a metrics CSV; returns a report
    with initial/final action reconstruction error.
    """
    cfg = cfg or DistillConfig()
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xD157]))
    env = MimicEnv(spec, library, n_lanes=cfg.n_lanes)
    if bundle is None:
        bundle = PriorBundle.create(spec, cfg, rng)
    if bundle.frozen:
        raise ContractViolation("cannot distill into a frozen bundle")

    opts = {"encoder": Adam(cfg.lr), "prior": Adam(cfg.lr), "decoder": Adam(cfg.lr)}
    obs = env.reset_all(rng)
    mu_prev = np.zeros((cfg.n_lanes, bundle.manifest["latent_dim"]))
    first_step = np.ones(cfg.n_lanes, dtype=bool)
    rows = []
    window = max(1, cfg.steps // 20)
    head_mse, tail_mse = [], []

    for step in range(cfg.steps):
        a_star = teacher_policy.body(obs)
        # first step of an episode: previous mean defined as the current one
        if np.any(first_step):
            enc = bundle.encode(obs[:, :proprio_dim(spec)], obs[:, proprio_dim(spec):])
            mu_prev[first_step] = enc.mu[first_step]
        a_hat, mu_e, total, comps = _distill_step(
            bundle, obs, a_star, mu_prev, cfg, opts, rng)
        mu_prev = mu_e
        rows.append((step, total, comps["l_action"], comps["l_regu"], comps["l_kl"]))
        if step < window:
            head_mse.append(comps["l_action"])
        if step >= cfg.steps - window:
            tail_mse.append(comps["l_action"])
        obs, _, terminal, timeout, _ = env.step(a_hat)
        first_step = terminal | timeout

    bundle.freeze_deployment()
    bundle_path = os.path.join(out_dir, "prior_bundle.ckpt")
    bundle.save(bundle_path, probe_rng=np.random.default_rng(np.random.SeedSequence([seed, 0x60AD])))

    csv_path = os.path.join(out_dir, "distill_metrics.csv")
    with open(csv_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["step", "loss", "l_action", "l_regu", "l_kl"])
        for r in rows:
            w.writerow([r[0]] + [f"{x:.10g}" for x in r[1:]])

    mse_initial = float(np.mean(head_mse))
    mse_final = float(np.mean(tail_mse))
    return {
        "bundle": bundle_path,
        "metrics_csv": csv_path,
        "mse_initial": mse_initial,
        "mse_final": mse_final,
        "drop_ratio": 1.0 - mse_final / mse_initial if mse_initial > 0 else 0.0,
    }
