"""Dense-network core: MLPs, diagonal Gaussians, Adam, checkpoints.

Everything is float64 numpy with hand-written reverse-mode gradients, which
keeps finite-difference checks tight (1e-4 relative at 1e-5 steps). No
autograd, no GPU. Networks can be frozen; frozen parameters reject updates
and are marked read-only.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass

import numpy as np

from .errors import CheckpointError, ContractViolation, FrozenModelError

_LOG_2PI = float(np.log(2.0 * np.pi))


def _act(tag: str, z: np.ndarray) -> np.ndarray:
    if tag == "tanh":
        return np.tanh(z)
    if tag == "relu":
        return np.maximum(z, 0.0)
    if tag == "silu":
        return z / (1.0 + np.exp(-z))
    if tag == "identity":
        return z
    raise ContractViolation(f"unknown activation {tag!r}")


def _act_grad(tag: str, z: np.ndarray, h: np.ndarray) -> np.ndarray:
    if tag == "tanh":
        return 1.0 - h * h
    if tag == "relu":
        return (z > 0.0).astype(np.float64)
    if tag == "silu":
        s = 1.0 / (1.0 + np.exp(-z))
        return s * (1.0 + z * (1.0 - s))
    if tag == "identity":
        return np.ones_like(z)
    raise ContractViolation(f"unknown activation {tag!r}")


@dataclass
class ForwardCache:
    x: np.ndarray
    pre: list
    post: list
    squeezed: bool


class Mlp:
    """Plain fully connected net, batch-first, x @ W + b per layer."""

    def __init__(self, widths, activations, rng: np.random.Generator, out_scale: float = 1.0):
        widths = list(widths)
        activations = list(activations)
        if len(widths) < 2:
            raise ContractViolation("Mlp needs at least one layer")
        if len(activations) != len(widths) - 1:
            raise ContractViolation(
                f"{len(widths) - 1} layers but {len(activations)} activation tags"
            )
        self.widths = widths
        self.activations = activations
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        self.frozen = False
        for i, tag in enumerate(activations):
            fan_in, fan_out = widths[i], widths[i + 1]
            if tag == "relu":
                w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
            else:
                lim = np.sqrt(6.0 / (fan_in + fan_out))
                w = rng.uniform(-lim, lim, size=(fan_in, fan_out))
            if i == len(activations) - 1:
                w *= out_scale
            self.weights.append(w)
            self.biases.append(np.zeros(fan_out))

    @property
    def in_width(self) -> int:
        return self.widths[0]

    @property
    def out_width(self) -> int:
        return self.widths[-1]

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
        x = np.asarray(x, dtype=np.float64)
        squeezed = x.ndim == 1
        if squeezed:
            x = x[None]
        if x.shape[1] != self.in_width:
            raise ContractViolation(
                f"input width {x.shape[1]} does not match net input {self.in_width}"
            )
        pre, post = [], []
        h = x
        for w, b, tag in zip(self.weights, self.biases, self.activations):
            z = h @ w + b
            h = _act(tag, z)
            pre.append(z)
            post.append(h)
        cache = ForwardCache(x=x, pre=pre, post=post, squeezed=squeezed)
        return (h[0] if squeezed else h), cache

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, cache: ForwardCache, upstream: np.ndarray):
        """Returns (grads aligned with parameters(), input gradient)."""
        if cache is None:
            raise ContractViolation("backward requires the cache from a forward pass")
        upstream = np.asarray(upstream, dtype=np.float64)
        if cache.squeezed:
            upstream = upstream[None]
        if upstream.shape != cache.post[-1].shape:
            raise ContractViolation(
                f"upstream shape {upstream.shape} does not match output {cache.post[-1].shape}"
            )
        grads: list[np.ndarray] = [None] * (2 * len(self.weights))
        g = upstream
        for i in reversed(range(len(self.weights))):
            z, h = cache.pre[i], cache.post[i]
            dz = g * _act_grad(self.activations[i], z, h)
            h_in = cache.x if i == 0 else cache.post[i - 1]
            grads[2 * i] = h_in.T @ dz
            grads[2 * i + 1] = dz.sum(axis=0)
            g = dz @ self.weights[i].T
        dx = g[0] if cache.squeezed else g
        return grads, dx

    def freeze(self) -> None:
        self.frozen = True
        for p in self.parameters():
            p.flags.writeable = False

    def apply_gradients(self, optimizer: "Adam", grads) -> None:
        if self.frozen:
            raise FrozenModelError("network is frozen; parameter updates are rejected")
        optimizer.step(self.parameters(), grads)

    def state_arrays(self, prefix: str) -> dict[str, np.ndarray]:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{prefix}.w{i}"] = w
            out[f"{prefix}.b{i}"] = b
        return out

    def load_state_arrays(self, prefix: str, arrays: dict) -> None:
        if self.frozen:
            raise FrozenModelError("network is frozen; parameter updates are rejected")
        for i in range(len(self.weights)):
            w = arrays[f"{prefix}.w{i}"]
            b = arrays[f"{prefix}.b{i}"]
            if w.shape != self.weights[i].shape or b.shape != self.biases[i].shape:
                raise CheckpointError(
                    f"layer {i} shape mismatch: checkpoint {w.shape}/{b.shape}, "
                    f"net {self.weights[i].shape}/{self.biases[i].shape}"
                )
            self.weights[i][...] = w
            self.biases[i][...] = b

    def meta(self) -> dict:
        return {"widths": self.widths, "activations": self.activations}


def mlp_from_meta(meta: dict, rng=None) -> Mlp:
    rng = rng or np.random.default_rng(0)
    return Mlp(meta["widths"], meta["activations"], rng)


# ---------------------------------------------------------------------------
# Diagonal Gaussians


class GaussianParams:
    """Diagonal Gaussian (mu, sigma); sigma strictly positive, same shape."""

    def __init__(self, mu: np.ndarray, sigma: np.ndarray):
        mu = np.asarray(mu, dtype=np.float64)
        sigma = np.asarray(sigma, dtype=np.float64)
        sigma = np.broadcast_to(sigma, mu.shape).copy() if sigma.shape != mu.shape else sigma
        if np.any(sigma <= 0.0):
            raise ContractViolation("Gaussian sigma entries must be strictly positive")
        self.mu = mu
        self.sigma = sigma

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        eps = rng.standard_normal(self.mu.shape)
        return self.mu + self.sigma * eps

    def log_prob(self, x: np.ndarray) -> np.ndarray:
        z = (np.asarray(x, dtype=np.float64) - self.mu) / self.sigma
        return np.sum(-0.5 * z * z - np.log(self.sigma) - 0.5 * _LOG_2PI, axis=-1)

    def entropy(self) -> np.ndarray:
        return np.sum(np.log(self.sigma) + 0.5 * (1.0 + _LOG_2PI), axis=-1)

    def kl_to(self, other: "GaussianParams") -> np.ndarray:
        """KL(self || other), closed form for diagonal Gaussians."""
        r = self.sigma / other.sigma
        m = (self.mu - other.mu) / other.sigma
        return np.sum(np.log(other.sigma) - np.log(self.sigma) + 0.5 * (r * r + m * m) - 0.5, axis=-1)


def kl_diag_with_grads(mu_e, log_se, mu_r, log_sr):
    """Mean-over-batch KL(E||R) and its gradients wrt all four inputs.

    Inputs are (B,K); returns scalar KL mean plus four (B,K) gradients of the
    batch-mean KL.
    """
    se2 = np.exp(2.0 * log_se)
    sr2 = np.exp(2.0 * log_sr)
    dm = mu_e - mu_r
    kl_terms = log_sr - log_se + 0.5 * (se2 + dm * dm) / sr2 - 0.5
    b = mu_e.shape[0]
    kl = float(kl_terms.sum() / b)
    d_mu_e = dm / sr2 / b
    d_mu_r = -d_mu_e
    d_log_se = (se2 / sr2 - 1.0) / b
    d_log_sr = (1.0 - (se2 + dm * dm) / sr2) / b
    return kl, d_mu_e, d_log_se, d_mu_r, d_log_sr


class GaussianHead:
    """Mlp mean plus state-independent learned log-std vector."""

    def __init__(self, body: Mlp, init_log_std: float = -0.5):
        self.body = body
        self.log_std = np.full(body.out_width, float(init_log_std))
        self.frozen = False

    def dist(self, x: np.ndarray) -> GaussianParams:
        mu, _ = self.body.forward(x)
        return GaussianParams(mu, np.broadcast_to(np.exp(self.log_std), mu.shape).copy())

    def dist_cached(self, x: np.ndarray):
        mu, cache = self.body.forward(x)
        return GaussianParams(mu, np.broadcast_to(np.exp(self.log_std), mu.shape).copy()), cache

    def parameters(self) -> list[np.ndarray]:
        return self.body.parameters() + [self.log_std]

    def freeze(self) -> None:
        self.frozen = True
        self.body.freeze()
        self.log_std.flags.writeable = False

    def apply_gradients(self, optimizer: "Adam", grads) -> None:
        if self.frozen:
            raise FrozenModelError("network is frozen; parameter updates are rejected")
        optimizer.step(self.parameters(), grads)

    def state_arrays(self, prefix: str) -> dict[str, np.ndarray]:
        out = self.body.state_arrays(prefix)
        out[f"{prefix}.log_std"] = self.log_std
        return out

    def load_state_arrays(self, prefix: str, arrays: dict) -> None:
        if self.frozen:
            raise FrozenModelError("network is frozen; parameter updates are rejected")
        self.body.load_state_arrays(prefix, arrays)
        self.log_std[...] = arrays[f"{prefix}.log_std"]


def logprob_grads(mu, log_std, x):
    """d log N(x | mu, exp(log_std)) wrt mu and log_std, elementwise (B,K)."""
    sigma = np.exp(log_std)
    z = (x - mu) / sigma
    return z / sigma, z * z - 1.0


# ---------------------------------------------------------------------------
# Adam


def adam_step(params, grads, state: dict, lr: float, betas=(0.9, 0.999), eps=1e-8):
    """One Adam update, in place. state holds m, v (aligned lists) and t."""
    if len(params) != len(grads):
        raise ContractViolation(f"{len(params)} params but {len(grads)} grads")
    if not state:
        state["m"] = [np.zeros_like(p) for p in params]
        state["v"] = [np.zeros_like(p) for p in params]
        state["t"] = 0
    state["t"] += 1
    t = state["t"]
    b1, b2 = betas
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p, g, m, v in zip(params, grads, state["m"], state["v"]):
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.shape:
            raise ContractViolation(f"gradient shape {g.shape} does not match param {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params


class Adam:
    def __init__(self, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.state: dict = {}

    def step(self, params, grads) -> None:
        adam_step(params, grads, self.state, self.lr, self.betas, self.eps)


# ---------------------------------------------------------------------------
# Checkpoints

_MAGIC = b"WBMCKPT1"
_VERSION = 1


def save_checkpoint(path: str, meta: dict, arrays: dict) -> None:
    """Versioned binary: magic, version, JSON meta, named '<f8' arrays, CRC32."""
    chunks = [_MAGIC, np.uint32(_VERSION).tobytes()]
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    chunks.append(np.uint32(len(meta_bytes)).tobytes())
    chunks.append(meta_bytes)
    chunks.append(np.uint32(len(arrays)).tobytes())
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name], dtype="<f8")
        nb = name.encode("utf-8")
        chunks.append(np.uint32(len(nb)).tobytes())
        chunks.append(nb)
        chunks.append(np.uint32(arr.ndim).tobytes())
        chunks.append(np.asarray(arr.shape, dtype="<u4").tobytes())
        chunks.append(arr.tobytes())
    body = b"".join(chunks)
    crc = zlib.crc32(body) & 0xFFFFFFFF
    with open(path, "wb") as f:
        f.write(body)
        f.write(np.uint32(crc).tobytes())


def load_checkpoint(path: str) -> tuple[dict, dict]:
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    if len(blob) < len(_MAGIC) + 12:
        raise CheckpointError(f"checkpoint {path} is truncated")
    body, crc_bytes = blob[:-4], blob[-4:]
    if zlib.crc32(body) & 0xFFFFFFFF != int(np.frombuffer(crc_bytes, "<u4")[0]):
        raise CheckpointError(f"checkpoint {path} failed its checksum")
    if body[: len(_MAGIC)] != _MAGIC:
        raise CheckpointError(f"checkpoint {path} has wrong magic tag")
    off = len(_MAGIC)

    def take_u32():
        nonlocal off
        v = int(np.frombuffer(body[off : off + 4], "<u4")[0])
        off += 4
        return v

    version = take_u32()
    if version != _VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    meta_len = take_u32()
    meta = json.loads(body[off : off + meta_len].decode("utf-8"))
    off += meta_len
    arrays = {}
    for _ in range(take_u32()):
        name_len = take_u32()
        name = body[off : off + name_len].decode("utf-8")
        off += name_len
        ndim = take_u32()
        shape = tuple(np.frombuffer(body[off : off + 4 * ndim], "<u4").astype(int))
        off += 4 * ndim
        size = int(np.prod(shape)) if shape else 1
        arrays[name] = np.frombuffer(body[off : off + 8 * size], "<f8").reshape(shape).copy()
        off += 8 * size
    return meta, arrays


# ---------------------------------------------------------------------------
# Gradient checking


def gradcheck(loss_and_grads, params, rng: np.random.Generator, n_probe: int = 100, eps: float = 1e-5):
    """Max relative error between analytic grads and central differences.

    loss_and_grads() -> (loss scalar, grads aligned with params); probes
    n_probe uniformly random parameter entries.
    """
    _, grads = loss_and_grads()
    sizes = np.array([p.size for p in params])
    total = int(sizes.sum())
    picks = rng.integers(0, total, size=min(n_probe, total))
    worst = 0.0
    bounds = np.cumsum(sizes)
    for flat in picks:
        pi = int(np.searchsorted(bounds, flat, side="right"))
        local = int(flat - (bounds[pi - 1] if pi > 0 else 0))
        p = params[pi]
        orig = p.flat[local]
        p.flat[local] = orig + eps
        lp, _ = loss_and_grads()
        p.flat[local] = orig - eps
        lm, _ = loss_and_grads()
        p.flat[local] = orig
        fd = (lp - lm) / (2.0 * eps)
        an = grads[pi].flat[local]
        rel = abs(an - fd) / max(1e-8, abs(an) + abs(fd))
        worst = max(worst, rel)
    return worst
