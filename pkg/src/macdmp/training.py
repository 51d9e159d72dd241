"""Offline training loop over trajectory windows, plus checkpoint I/O.

Each step samples a window mini-batch, evaluates the joint loss, and
applies one Adam update to the shared parameter set. Checkpoints carry
the parameters together with everything needed to plan: schedule
config, horizon, dataset stats, and whether mean-field inputs were
used.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import storage
from . import tensor as T
from .dataset import DatasetStats, TrajectoryWindow, fit_stats, slice_windows
from .diffusion import NoiseSchedule, make_schedule, training_loss
from .models import ModelBundle, make_bundle


@dataclass
class TrainConfig:
    H: int = 8
    K: int = 100
    gamma: float = 0.99
    schedule_kind: str = "cosine"
    beta_start: float = 1e-4
    beta_end: float = 0.02
    hidden: int = 256
    blocks: int = 4
    inv_hidden: int = 128
    inv_blocks: int = 2
    epochs: int = 100
    steps_per_epoch: int = 1000
    batch_size: int = 64
    lr: float = 2e-4
    use_mean_field: bool = True
    seed: int = 0


@dataclass
class TrainResult:
    models: ModelBundle
    schedule: NoiseSchedule
    stats: DatasetStats
    config: TrainConfig
    loss_log: list[dict]       # one entry per epoch: mean per-term losses


def windows_from_streams(streams, H: int, gamma: float) -> list[TrajectoryWindow]:
    windows = []
    for stream in streams:
        windows.extend(slice_windows(stream, H, gamma))
    return windows


def train(streams, config: TrainConfig, stats: DatasetStats | None = None,
          log_fn=None) -> TrainResult:
    """Run the offline training loop on collected record streams."""
    windows = windows_from_streams(streams, config.H, config.gamma)
    if not windows:
        raise ValueError("no training windows; streams shorter than H?")
    if stats is None:
        stats = fit_stats(streams, config.H, config.gamma)
    schedule = make_schedule(config.K, config.beta_start, config.beta_end,
                             config.schedule_kind)
    models = make_bundle(config.H, config.K, config.hidden, config.blocks,
                         config.inv_hidden, config.inv_blocks, seed=config.seed)
    params = models.params()
    opt = T.adam_init(params, lr=config.lr)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x7EA1]))

    names = list(params)
    tensors = [params[n] for n in names]
    loss_log = []
    for epoch in range(config.epochs):
        sums: dict[str, float] = {}
        for _ in range(config.steps_per_epoch):
            idx = rng.integers(len(windows), size=config.batch_size)
            batch = [windows[i] for i in idx]
            loss, breakdown = training_loss(
                batch, models, schedule, rng, stats,
                use_mean_field=config.use_mean_field)
            grads = T.backward(loss, tensors)
            T.adam_step(opt, params, dict(zip(names, grads)))
            for key, val in breakdown.items():
                sums[key] = sums.get(key, 0.0) + val
        entry = {"epoch": epoch}
        entry.update({k: v / config.steps_per_epoch for k, v in sums.items()})
        loss_log.append(entry)
        if log_fn is not None:
            log_fn(entry)
    return TrainResult(models=models, schedule=schedule, stats=stats,
                       config=config, loss_log=loss_log)


# ---------------------------------------------------------------------------
# checkpoints (same container as datasets: meta + named parameter blocks)


def save_checkpoint(path, result: TrainResult, config_hash: str = "") -> None:
    cfg = result.config
    params = result.models.params()
    meta = {
        "schema": "checkpoint/v1",
        "config_hash": config_hash,
        "H": cfg.H,
        "K": cfg.K,
        "gamma": cfg.gamma,
        "schedule_kind": cfg.schedule_kind,
        "beta_start": cfg.beta_start,
        "beta_end": cfg.beta_end,
        "hidden": cfg.hidden,
        "blocks": cfg.blocks,
        "inv_hidden": cfg.inv_hidden,
        "inv_blocks": cfg.inv_blocks,
        "use_mean_field": cfg.use_mean_field,
        "seed": cfg.seed,
        "stats": {
            "obs_mean": result.stats.obs_mean.tolist(),
            "obs_std": result.stats.obs_std.tolist(),
            "return_min": result.stats.return_min,
            "return_max": result.stats.return_max,
        },
        "param_shapes": {name: list(p.data.shape) for name, p in params.items()},
    }
    blocks = [(name, np.ascontiguousarray(p.data, dtype="<f8").tobytes())
              for name, p in sorted(params.items())]
    storage.write_container(path, storage.KIND_CHECKPOINT, meta, blocks)


def load_checkpoint(path) -> TrainResult:
    _, meta, blocks = storage.read_container(path, expect_kind=storage.KIND_CHECKPOINT)
    if meta.get("schema") != "checkpoint/v1":
        raise storage.SchemaError(f"{path}: unexpected schema {meta.get('schema')!r}")
    cfg = TrainConfig(
        H=meta["H"], K=meta["K"], gamma=meta["gamma"],
        schedule_kind=meta["schedule_kind"], beta_start=meta["beta_start"],
        beta_end=meta["beta_end"], hidden=meta["hidden"], blocks=meta["blocks"],
        inv_hidden=meta["inv_hidden"], inv_blocks=meta["inv_blocks"],
        use_mean_field=meta["use_mean_field"], seed=meta["seed"])
    models = make_bundle(cfg.H, cfg.K, cfg.hidden, cfg.blocks,
                         cfg.inv_hidden, cfg.inv_blocks, seed=cfg.seed)
    params = models.params()
    for name, p in params.items():
        if name not in blocks:
            raise storage.SchemaError(f"{path}: missing parameter block {name!r}")
        shape = tuple(meta["param_shapes"][name])
        arr = np.frombuffer(blocks[name], dtype="<f8").reshape(shape)
        if arr.shape != p.data.shape:
            raise storage.SchemaError(
                f"{path}: parameter {name!r} has shape {arr.shape}, expected {p.data.shape}")
        p.data = arr.copy()
    s = meta["stats"]
    stats = DatasetStats(
        obs_mean=np.array(s["obs_mean"], dtype=np.float64),
        obs_std=np.array(s["obs_std"], dtype=np.float64),
        return_min=float(s["return_min"]), return_max=float(s["return_max"]))
    schedule = make_schedule(cfg.K, cfg.beta_start, cfg.beta_end, cfg.schedule_kind)
    return TrainResult(models=models, schedule=schedule, stats=stats,
                       config=cfg, loss_log=[])
