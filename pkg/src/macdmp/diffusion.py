"""Noise schedules, forward noising, the joint training loss, and
classifier-guided reverse sampling (ancestral and a first-order fast
sampler).

Conventions: diffusion steps are 1-based, k in {1..K}; alpha_bar(0) is
defined as 1 so the posterior variance at k=1 is exactly zero and the
final ancestral step is deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .models import pack_pair, unpack_pair
from .netsim import DomainError


class ScheduleError(ValueError):
    """Schedule parameters violate the schedule invariants."""


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Discrete variance-preserving schedule.

    Arrays are stored 0-based internally; use the 1-based accessors.
    sigma2(k) is the reverse-step variance
    (1 - alpha_bar_{k-1}) / (1 - alpha_bar_k) * beta_k, which is 0 at
    k = 1.
    """

    betas: np.ndarray
    kind: str = "linear"
    _abar: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        b = np.asarray(self.betas, dtype=np.float64)
        if b.ndim != 1 or b.size < 1:
            raise ScheduleError("betas must be a non-empty vector")
        if np.any(b <= 0) or np.any(b >= 1):
            raise ScheduleError("betas must lie strictly in (0, 1)")
        if np.any(np.diff(b) < 0):
            raise ScheduleError("betas must be monotone nondecreasing")
        object.__setattr__(self, "betas", b)
        # alpha_bar with a leading 1 for k = 0
        object.__setattr__(self, "_abar", np.concatenate([[1.0], np.cumprod(1.0 - b)]))

    @property
    def K(self) -> int:
        return int(self.betas.size)

    def beta(self, k) -> np.ndarray:
        return self.betas[np.asarray(k) - 1]

    def alpha(self, k) -> np.ndarray:
        return 1.0 - self.beta(k)

    def alpha_bar(self, k) -> np.ndarray:
        """alpha_bar(k) for k in [0, K]; alpha_bar(0) = 1."""
        return self._abar[np.asarray(k)]

    def sigma2(self, k) -> np.ndarray:
        k = np.asarray(k)
        return (1.0 - self._abar[k - 1]) / (1.0 - self._abar[k]) * self.beta(k)

    @property
    def final_alpha_bar(self) -> float:
        return float(self._abar[-1])


def make_schedule(K: int, beta_start: float = 1e-4, beta_end: float = 0.02,
                  kind: str = "cosine") -> NoiseSchedule:
    """Linear or cosine beta schedule over K steps.

    The cosine form is the squared-cosine cumulative product with offset
    0.008; beta_start/beta_end only shape the linear form. Cosine betas
    are capped at 0.2: the tail of the raw cosine sequence approaches 1,
    and every reverse step scales leftover noise-prediction error by
    1 / sqrt(1 - beta), so at desk-scale K an uncapped tail amplifies
    model error by ~30x per step and sampled plans diverge. The cap
    keeps the terminal alpha_bar below 1e-2 at the default K.
    """
    if K < 1:
        raise ScheduleError("K must be >= 1")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ScheduleError(
            f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})")
    if kind == "linear":
        betas = np.linspace(beta_start, beta_end, K)
    elif kind == "cosine":
        s = 0.008
        steps = np.arange(K + 1, dtype=np.float64)
        f = np.cos((steps / K + s) / (1.0 + s) * np.pi / 2.0) ** 2
        abar = f / f[0]
        betas = np.clip(1.0 - abar[1:] / abar[:-1], 1e-8, 0.2)
    else:
        raise ScheduleError(f"unknown schedule kind {kind!r}")
    return NoiseSchedule(betas=betas, kind=kind)


@dataclass(frozen=True)
class GuidanceConfig:
    zeta: float = 1.2
    K_sample: int | None = None        # None: all K steps
    sampler: str = "ancestral"         # "ancestral" | "dpm1"

    def __post_init__(self):
        if self.zeta < 0:
            raise DomainError("zeta must be >= 0")
        if self.K_sample is not None and self.K_sample < 1:
            raise DomainError("K_sample must be >= 1")
        if self.sampler not in ("ancestral", "dpm1"):
            raise DomainError(f"unknown sampler {self.sampler!r}")


# ---------------------------------------------------------------------------
# forward process


def forward_noise_packed(schedule: NoiseSchedule, z0: np.ndarray, k,
                         eps: np.ndarray) -> np.ndarray:
    """sqrt(abar_k) z0 + sqrt(1 - abar_k) eps on packed pairs (B, 2*H*4)."""
    z0 = np.asarray(z0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != z0.shape:
        raise DomainError(f"eps shape {eps.shape} does not match pair shape {z0.shape}")
    abar = np.asarray(schedule.alpha_bar(k), dtype=np.float64)
    if abar.ndim == 1 and z0.ndim > 1:
        abar = abar.reshape(-1, *([1] * (z0.ndim - 1)))
    return np.sqrt(abar) * z0 + np.sqrt(1.0 - abar) * eps


def forward_noise(schedule: NoiseSchedule, x0, xbar0, k, eps):
    """Noise a trajectory pair jointly to step k; eps is packed-shaped."""
    x0 = np.asarray(x0, dtype=np.float64)
    single = x0.ndim == 2
    z0 = pack_pair(x0, xbar0)
    eps = np.asarray(eps, dtype=np.float64)
    if single:
        z0, eps = z0[None], eps.reshape(1, -1)
    zk = forward_noise_packed(schedule, z0, k, eps)
    xk, xbark = unpack_pair(zk, x0.shape[-2])
    return (xk[0], xbark[0]) if single else (xk, xbark)


# ---------------------------------------------------------------------------
# training loss


def _transition_arrays(x0: np.ndarray, actions: np.ndarray):
    """(o_t, o_{t+1}, a_t) rows from every in-window transition."""
    o = x0[:, :-1].reshape(-1, x0.shape[-1])
    o_next = x0[:, 1:].reshape(-1, x0.shape[-1])
    a = actions[:, :-1].reshape(-1)
    return o, o_next, a


def training_loss(windows, models, schedule: NoiseSchedule, rng: np.random.Generator,
                  stats, use_mean_field: bool = True):
    """The joint objective: inverse dynamics + noise + return regression.

    Draws one k ~ U{1..K} and one standard-normal eps per window,
    noises the standardized pair, and sums the three MSE terms. Returns
    (scalar loss node, per-term float breakdown); run backward on the
    node to train.
    """
    if len(windows) == 0:
        raise DomainError("training_loss needs a non-empty batch")
    H = windows[0].x0.shape[0]
    x0 = stats.standardize(np.stack([w.x0 for w in windows]))
    if use_mean_field:
        xbar0 = stats.standardize(np.stack([w.xbar0 for w in windows]))
    else:
        xbar0 = x0
    actions = np.stack([w.actions for w in windows])
    y_norm = stats.normalize_return(np.array([w.y for w in windows]))

    B = x0.shape[0]
    k = rng.integers(1, schedule.K + 1, size=B)
    eps = rng.standard_normal((B, 2 * H * x0.shape[-1]))
    zk = forward_noise_packed(schedule, pack_pair(x0, xbar0), k, eps)

    o, o_next, a_true = _transition_arrays(x0, actions)
    a_hat = models.inv_dyn.apply(o, o_next)
    loss_inv = T.mse(a_hat, T.Tensor(a_true.reshape(-1, 1)))

    eps_hat = models.denoiser.apply_packed(zk, k)
    loss_eps = T.mse(eps_hat, T.Tensor(eps))

    y_hat = models.classifier.apply_packed(zk, k)
    loss_y = T.mse(y_hat, T.Tensor(y_norm.reshape(-1, 1)))

    loss = T.add(T.add(loss_inv, loss_eps), loss_y)
    breakdown = {
        "inverse_dynamics": float(loss_inv.data),
        "noise": float(loss_eps.data),
        "classifier": float(loss_y.data),
        "total": float(loss.data),
    }
    return loss, breakdown


# ---------------------------------------------------------------------------
# reverse sampling


def denoise_step_packed(z: np.ndarray, k: int, models, schedule: NoiseSchedule,
                        zeta: float, rng: np.random.Generator,
                        add_noise: bool = True) -> np.ndarray:
    """One guided ancestral step on packed pairs (B, 2*H*4).

    Mean is the usual noise-prediction reparameterization plus
    zeta * sigma2_k * grad of the classifier, evaluated at z_k. No noise
    is injected at k = 1, and the classifier is never evaluated when the
    guidance term would vanish.
    """
    if not 1 <= k <= schedule.K:
        raise DomainError(f"step k={k} outside [1, {schedule.K}]")
    alpha_k = float(schedule.alpha(k))
    abar_k = float(schedule.alpha_bar(k))
    sigma2_k = float(schedule.sigma2(k))

    eps_hat = models.denoiser.apply_packed(z, k).data
    mu = (z - (1.0 - alpha_k) / np.sqrt(1.0 - abar_k) * eps_hat) / np.sqrt(alpha_k)
    if zeta > 0.0 and sigma2_k > 0.0:
        mu = mu + zeta * sigma2_k * models.classifier.grad_packed(z, k)
    if k > 1 and add_noise:
        mu = mu + np.sqrt(sigma2_k) * rng.standard_normal(z.shape)
    return mu


def denoise_step(x_k, xbar_k, k: int, models, schedule: NoiseSchedule,
                 zeta: float, rng: np.random.Generator):
    """Spec-shaped wrapper over denoise_step_packed for (H, 4) pairs."""
    x = np.asarray(x_k, dtype=np.float64)
    single = x.ndim == 2
    z = pack_pair(x_k, xbar_k)
    z = z[None] if single else z
    out = denoise_step_packed(z, k, models, schedule, zeta, rng)
    xk, xbark = unpack_pair(out, x.shape[-2])
    return (xk[0], xbark[0]) if single else (xk, xbark)


def _constrain(z: np.ndarray, H: int, o: np.ndarray, obar: np.ndarray) -> None:
    """Pin the first observation of both tracks to the live values."""
    d = o.shape[-1]
    z[..., 0:d] = o
    z[..., H * d:H * d + d] = obar


def sample_plan(o_t: np.ndarray, obar_t: np.ndarray, models, schedule: NoiseSchedule,
                guidance: GuidanceConfig, rng: np.random.Generator, H: int):
    """Guided ancestral generation of an H-step plan pair.

    Starts from standard normal, re-pins index 0 of both tracks to
    (o_t, obar_t) after initialization and after every step, so the
    returned plan is exactly consistent with the live observation.
    Inputs are standardized observations, (4,) or (B, 4).
    """
    o = np.atleast_2d(np.asarray(o_t, dtype=np.float64))
    obar = np.atleast_2d(np.asarray(obar_t, dtype=np.float64))
    single = np.asarray(o_t).ndim == 1
    B, d = o.shape
    z = rng.standard_normal((B, 2 * H * d))
    _constrain(z, H, o, obar)
    for k in range(schedule.K, 0, -1):
        z = denoise_step_packed(z, k, models, schedule, guidance.zeta, rng)
        _constrain(z, H, o, obar)
    x0, xbar0 = unpack_pair(z, H)
    return (x0[0], xbar0[0]) if single else (x0, xbar0)


def dpm_subgrid(K: int, K_sample: int) -> np.ndarray:
    """Strictly decreasing step indices from K to 0 with K_sample steps."""
    if not 1 <= K_sample <= K:
        raise DomainError(f"K_sample must lie in [1, {K}]")
    return np.floor(np.linspace(K, 0, K_sample + 1)).astype(int)


def dpm1_sample(o_t: np.ndarray, obar_t: np.ndarray, models, schedule: NoiseSchedule,
                guidance: GuidanceConfig, rng: np.random.Generator, H: int):
    """Deterministic first-order fast sampling on a sub-grid of the schedule.

    Exponential-integrator update in half-log-SNR time; classifier
    guidance is folded into the predicted noise as
    eps - zeta * sqrt(1 - abar_k) * grad. Same consistency pinning as
    the ancestral sampler.
    """
    K_sample = guidance.K_sample if guidance.K_sample is not None else schedule.K
    ks = dpm_subgrid(schedule.K, K_sample)
    o = np.atleast_2d(np.asarray(o_t, dtype=np.float64))
    obar = np.atleast_2d(np.asarray(obar_t, dtype=np.float64))
    single = np.asarray(o_t).ndim == 1
    B, d = o.shape
    z = rng.standard_normal((B, 2 * H * d))
    _constrain(z, H, o, obar)
    for idx in range(len(ks) - 1):
        k_src, k_dst = int(ks[idx]), int(ks[idx + 1])
        abar_s = float(schedule.alpha_bar(k_src))
        abar_t_ = float(schedule.alpha_bar(k_dst))
        a_s, s_s = np.sqrt(abar_s), np.sqrt(1.0 - abar_s)
        a_t, s_t = np.sqrt(abar_t_), np.sqrt(1.0 - abar_t_)
        eps_hat = models.denoiser.apply_packed(z, k_src).data
        if guidance.zeta > 0.0:
            eps_hat = eps_hat - guidance.zeta * s_s * models.classifier.grad_packed(z, k_src)
        x0_pred = (z - s_s * eps_hat) / a_s
        z = a_t * x0_pred + s_t * eps_hat
        _constrain(z, H, o, obar)
    x0, xbar0 = unpack_pair(z, H)
    return (x0[0], xbar0[0]) if single else (x0, xbar0)
