"""The three learned functions: noise predictor, return classifier,
inverse dynamics.

All are residual MLPs over flattened trajectory pairs plus a sinusoidal
embedding of the diffusion step; the final projection starts at zero so
an untrained net is the identity map in the residual sense. One
parameter set serves every agent, so per-agent outputs differ only
through inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .netsim import DomainError
from .tensor import Tensor

EMBED_DIM = 32
OBS_DIM = 4


def timestep_embedding(k, K: int, dim: int = EMBED_DIM) -> np.ndarray:
    """Sinusoidal embedding of diffusion steps, one row per sample."""
    k = np.atleast_1d(np.asarray(k, dtype=np.float64))
    if np.any(k < 1) or np.any(k > K):
        raise DomainError(f"diffusion step out of range [1, {K}]")
    half = dim // 2
    freqs = np.exp(-np.log(10_000.0) * np.arange(half) / half)
    ang = k[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


def _init_affine(rng: np.random.Generator, fan_in: int, fan_out: int, zero: bool = False):
    if zero:
        w = np.zeros((fan_in, fan_out))
    else:
        w = rng.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in)
    return Tensor(w), Tensor(np.zeros(fan_out))


class ResidualMLP:
    """Shared trunk: input proj, pre-norm residual blocks, zeroed output proj."""

    def __init__(self, in_dim: int, out_dim: int, hidden: int, blocks: int,
                 rng: np.random.Generator):
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.hidden = hidden
        self.blocks = blocks
        self.p: dict[str, Tensor] = {}
        self.p["in.w"], self.p["in.b"] = _init_affine(rng, in_dim, hidden)
        for i in range(blocks):
            self.p[f"blk{i}.w1"], self.p[f"blk{i}.b1"] = _init_affine(rng, hidden, hidden)
            self.p[f"blk{i}.w2"], self.p[f"blk{i}.b2"] = _init_affine(rng, hidden, hidden)
        self.p["out.w"], self.p["out.b"] = _init_affine(rng, hidden, out_dim, zero=True)

    def apply(self, z: Tensor) -> Tensor:
        h = T.affine(z, self.p["in.w"], self.p["in.b"])
        for i in range(self.blocks):
            r = T.affine(T.layer_norm(h), self.p[f"blk{i}.w1"], self.p[f"blk{i}.b1"])
            r = T.affine(T.silu(r), self.p[f"blk{i}.w2"], self.p[f"blk{i}.b2"])
            h = T.add(h, r)
        return T.affine(h, self.p["out.w"], self.p["out.b"])


def pack_pair(x, xbar) -> np.ndarray:
    """Flatten and concatenate a trajectory pair: (..., H, 4) -> (..., 2*H*4)."""
    x = np.asarray(x, dtype=np.float64)
    xbar = np.asarray(xbar, dtype=np.float64)
    if x.shape != xbar.shape:
        raise DomainError(f"trajectory pair shapes differ: {x.shape} vs {xbar.shape}")
    flat = x.reshape(*x.shape[:-2], -1)
    flat_bar = xbar.reshape(*xbar.shape[:-2], -1)
    return np.concatenate([flat, flat_bar], axis=-1)


def unpack_pair(z: np.ndarray, H: int) -> tuple[np.ndarray, np.ndarray]:
    half = H * OBS_DIM
    lead = z.shape[:-1]
    return (z[..., :half].reshape(*lead, H, OBS_DIM),
            z[..., half:].reshape(*lead, H, OBS_DIM))


class DenoiserNet:
    """Predicts the injected noise for a noised trajectory pair at step k."""

    def __init__(self, H: int, K: int, hidden: int = 256, blocks: int = 4, seed: int = 0):
        self.H = H
        self.K = K
        traj = 2 * H * OBS_DIM
        rng = np.random.default_rng(seed)
        self.net = ResidualMLP(traj + EMBED_DIM, traj, hidden, blocks, rng)

    def apply_packed(self, z: np.ndarray, k) -> Tensor:
        emb = timestep_embedding(k, self.K)
        if emb.shape[0] == 1 and z.shape[0] > 1:
            emb = np.repeat(emb, z.shape[0], axis=0)
        return self.net.apply(T.concat([Tensor(z), Tensor(emb)], axis=1))

    def params(self) -> dict[str, Tensor]:
        return self.net.p


class ClassifierNet:
    """Predicts the normalized window return from a noised trajectory pair."""

    def __init__(self, H: int, K: int, hidden: int = 256, blocks: int = 4, seed: int = 1):
        self.H = H
        self.K = K
        traj = 2 * H * OBS_DIM
        rng = np.random.default_rng(seed)
        self.net = ResidualMLP(traj + EMBED_DIM, 1, hidden, blocks, rng)

    def apply_packed(self, z: np.ndarray, k) -> Tensor:
        emb = timestep_embedding(k, self.K)
        if emb.shape[0] == 1 and z.shape[0] > 1:
            emb = np.repeat(emb, z.shape[0], axis=0)
        return self.net.apply(T.concat([Tensor(z), Tensor(emb)], axis=1))

    def grad_packed(self, z: np.ndarray, k) -> np.ndarray:
        """d(predicted return)/d(input pair), one row per batch row.

        Computed on the tape: rows are independent, so the gradient of
        the summed output recovers each row's gradient.
        """
        emb = timestep_embedding(k, self.K)
        if emb.shape[0] == 1 and z.shape[0] > 1:
            emb = np.repeat(emb, z.shape[0], axis=0)
        zt = Tensor(z)
        out = self.net.apply(T.concat([zt, Tensor(emb)], axis=1))
        (gz,) = T.backward(T.tsum(out), [zt])
        return gz

    def params(self) -> dict[str, Tensor]:
        return self.net.p


class InverseDynamicsNet:
    """Maps an observation transition (o_t, o_{t+1}) to the action behind it."""

    def __init__(self, hidden: int = 128, blocks: int = 2, seed: int = 2):
        rng = np.random.default_rng(seed)
        self.net = ResidualMLP(2 * OBS_DIM, 1, hidden, blocks, rng)

    def apply(self, o: np.ndarray, o_next: np.ndarray) -> Tensor:
        o = np.atleast_2d(np.asarray(o, dtype=np.float64))
        o_next = np.atleast_2d(np.asarray(o_next, dtype=np.float64))
        if o.shape != o_next.shape or o.shape[1] != OBS_DIM:
            raise DomainError(f"bad transition shapes {o.shape}, {o_next.shape}")
        return self.net.apply(Tensor(np.concatenate([o, o_next], axis=1)))

    def params(self) -> dict[str, Tensor]:
        return self.net.p


@dataclass
class ModelBundle:
    """One shared parameter set for all (homogeneous) agents."""

    denoiser: DenoiserNet
    classifier: ClassifierNet
    inv_dyn: InverseDynamicsNet

    def params(self) -> dict[str, Tensor]:
        out = {}
        for prefix, net in (("denoiser", self.denoiser),
                            ("classifier", self.classifier),
                            ("inv_dyn", self.inv_dyn)):
            for name, p in net.params().items():
                out[f"{prefix}/{name}"] = p
        return out


def make_bundle(H: int, K: int, hidden: int = 256, blocks: int = 4,
                inv_hidden: int = 128, inv_blocks: int = 2, seed: int = 0) -> ModelBundle:
    seq = np.random.SeedSequence(seed)
    s1, s2, s3 = (int(s.generate_state(1)[0]) for s in seq.spawn(3))
    return ModelBundle(
        denoiser=DenoiserNet(H, K, hidden, blocks, seed=s1),
        classifier=ClassifierNet(H, K, hidden, blocks, seed=s2),
        inv_dyn=InverseDynamicsNet(inv_hidden, inv_blocks, seed=s3),
    )


# Spec-facing wrappers over the packed internals.

def denoiser_forward(net: DenoiserNet, x_k, xbar_k, k) -> np.ndarray:
    """Noise prediction shaped like the packed (x_k || xbar_k) input."""
    x = np.asarray(x_k, dtype=np.float64)
    single = x.ndim == 2
    z = pack_pair(x_k, xbar_k)
    z = z[None] if single else z
    out = net.apply_packed(z, k).data
    return out[0] if single else out


def classifier_forward(net: ClassifierNet, x_k, xbar_k, k):
    x = np.asarray(x_k, dtype=np.float64)
    single = x.ndim == 2
    z = pack_pair(x_k, xbar_k)
    z = z[None] if single else z
    out = net.apply_packed(z, k).data[:, 0]
    return float(out[0]) if single else out


def classifier_grad(net: ClassifierNet, x_k, xbar_k, k):
    """Gradient of the predicted return w.r.t. (x_k, xbar_k)."""
    x = np.asarray(x_k, dtype=np.float64)
    single = x.ndim == 2
    z = pack_pair(x_k, xbar_k)
    z = z[None] if single else z
    gz = net.grad_packed(z, k)
    H = net.H
    gx, gxbar = unpack_pair(gz, H)
    return (gx[0], gxbar[0]) if single else (gx, gxbar)


def inv_dyn_forward(net: InverseDynamicsNet, o, o_next):
    out = net.apply(o, o_next).data[:, 0]
    single = np.asarray(o).ndim == 1
    return float(out[0]) if single else out
