"""Offline trajectory data: collection, windowing, stats, and file I/O.

A collection run records, per node per frame, the local observation,
its mean-field companion (frozen at collection time), the raw RB
demand that was submitted, and the reward. Training consumes length-H
sliding windows labeled with the discounted return of their rewards.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import netsim, storage
from .netsim import DomainError, mean_field_obs
from .scenario import ScenarioConfig, make_simulator

BEHAVIOR_POLICIES = ("proportional", "uniform", "noisy-proportional")

# mix used by the shipped collector: coverage needs more than one policy
DEFAULT_POLICY_MIX = (
    ("proportional", 0.5),
    ("noisy-proportional", 0.3),
    ("uniform", 0.2),
)
NOISY_SIGMA = 0.3


@dataclass(frozen=True, eq=False)
class TransitionRecord:
    t: int
    node: int
    obs: np.ndarray        # (4,)
    mf_obs: np.ndarray     # (4,)
    action: float          # raw RB demand, pre-normalization
    reward: float          # -mean delivery delay, <= 0

    def __post_init__(self):
        if self.action < 0:
            raise DomainError("action must be >= 0")
        if self.reward > 0:
            raise DomainError("reward must be <= 0")


@dataclass(frozen=True, eq=False)
class TrajectoryWindow:
    """One training window: H observations, mean-field track, labels.

    Per-step actions and rewards ride along; the inverse-dynamics loss
    needs the actions and the return label is recomputable from the
    rewards.
    """

    x0: np.ndarray         # (H, 4)
    xbar0: np.ndarray      # (H, 4)
    actions: np.ndarray    # (H,)
    rewards: np.ndarray    # (H,)
    y: float
    start: int
    node: int


@dataclass(eq=False)
class DatasetStats:
    obs_mean: np.ndarray       # (4,)
    obs_std: np.ndarray        # (4,), floored away from zero
    return_min: float
    return_max: float

    def standardize(self, obs: np.ndarray) -> np.ndarray:
        return (np.asarray(obs, dtype=np.float64) - self.obs_mean) / self.obs_std

    def destandardize(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z, dtype=np.float64) * self.obs_std + self.obs_mean

    def normalize_return(self, y) -> np.ndarray:
        span = max(self.return_max - self.return_min, 1e-12)
        return (np.asarray(y, dtype=np.float64) - self.return_min) / span


def compute_return(rewards, gamma: float) -> float:
    """Discounted sum of a reward window."""
    r = np.asarray(rewards, dtype=np.float64)
    if r.ndim != 1 or r.size == 0:
        raise DomainError("rewards must be a non-empty 1-D sequence")
    if not 0.0 < gamma <= 1.0:
        raise DomainError(f"gamma must be in (0, 1], got {gamma}")
    return float(np.sum(gamma ** np.arange(r.size) * r))


def stream_to_arrays(stream: list[TransitionRecord]) -> dict[int, dict[str, np.ndarray]]:
    """Per-node column arrays (obs, mf, action, reward), ordered by frame."""
    per_node: dict[int, list[TransitionRecord]] = {}
    for rec in stream:
        per_node.setdefault(rec.node, []).append(rec)
    out = {}
    for node, recs in per_node.items():
        recs.sort(key=lambda r: r.t)
        out[node] = {
            "t": np.array([r.t for r in recs], dtype=np.int64),
            "obs": np.stack([r.obs for r in recs]),
            "mf": np.stack([r.mf_obs for r in recs]),
            "action": np.array([r.action for r in recs], dtype=np.float64),
            "reward": np.array([r.reward for r in recs], dtype=np.float64),
        }
    return out


def slice_windows(stream: list[TransitionRecord], H: int, gamma: float) -> list[TrajectoryWindow]:
    """All stride-1 windows in one record stream; empty if it is too short."""
    if H < 1:
        raise DomainError("H must be >= 1")
    windows = []
    for node, cols in sorted(stream_to_arrays(stream).items()):
        T = len(cols["t"])
        for start in range(T - H + 1):
            sl = slice(start, start + H)
            windows.append(TrajectoryWindow(
                x0=cols["obs"][sl].copy(),
                xbar0=cols["mf"][sl].copy(),
                actions=cols["action"][sl].copy(),
                rewards=cols["reward"][sl].copy(),
                y=compute_return(cols["reward"][sl], gamma),
                start=int(cols["t"][start]),
                node=node,
            ))
    return windows


def fit_stats(streams: list[list[TransitionRecord]], H: int, gamma: float,
              std_floor: float = 1e-6) -> DatasetStats:
    """Observation moments and return range over all streams."""
    obs = np.concatenate([
        np.stack([r.obs for r in stream]) for stream in streams if stream])
    returns = []
    for stream in streams:
        for node, cols in stream_to_arrays(stream).items():
            r = cols["reward"]
            for start in range(len(r) - H + 1):
                returns.append(compute_return(r[start:start + H], gamma))
    if not returns:
        returns = [0.0]
    return DatasetStats(
        obs_mean=obs.mean(axis=0),
        obs_std=np.maximum(obs.std(axis=0), std_floor),
        return_min=float(min(returns)),
        return_max=float(max(returns)),
    )


# ---------------------------------------------------------------------------
# behavior policies


def behavior_demands(policy: str, obs_rows: np.ndarray, rng: np.random.Generator,
                     noise_sigma: float = NOISY_SIGMA) -> np.ndarray:
    """Raw demands for one frame under a scripted policy.

    proportional: demand = gen + tran queue lengths. noisy-proportional:
    the same scaled by multiplicative lognormal noise; a sigma of zero
    reproduces proportional bit-for-bit on the same RNG stream.
    """
    n = obs_rows.shape[0]
    if policy == "uniform":
        return np.ones(n)
    if policy in ("proportional", "noisy-proportional"):
        base = obs_rows[:, 0] + obs_rows[:, 2]
        if policy == "noisy-proportional":
            z = rng.standard_normal(n)
            base = base * np.exp(noise_sigma * z)
        return base
    raise DomainError(f"unknown behavior policy {policy!r}")


def run_behavior_policy(cfg: ScenarioConfig, policy: str, duration: int,
                        seed: int, noise_sigma: float = NOISY_SIGMA) -> list[TransitionRecord]:
    """Simulate one stream of `duration` frames under a scripted policy."""
    if policy not in BEHAVIOR_POLICIES:
        raise DomainError(f"unknown behavior policy {policy!r}")
    sim = make_simulator(cfg, seed=seed)
    policy_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0xBE])))
    n = sim.n_nodes
    obs = [netsim.ZERO_OBS] * n
    records: list[TransitionRecord] = []
    for t in range(duration):
        obs_rows = np.stack([o.as_array() for o in obs])
        mf_rows = np.stack([mean_field_obs(obs, sim.topology, i) for i in range(n)])
        demands = behavior_demands(policy, obs_rows, policy_rng, noise_sigma)
        alloc = netsim.allocate_rbs(demands, sim.grid, sim.alloc_rng)
        next_obs, rewards, _ = sim.step_frame(alloc)
        for i in range(n):
            records.append(TransitionRecord(
                t=t, node=i, obs=obs_rows[i], mf_obs=mf_rows[i],
                action=float(demands[i]), reward=float(rewards[i])))
        obs = next_obs
    return records


def collect_mixed_streams(cfg: ScenarioConfig, n_streams: int, frames_per_stream: int,
                          seed: int) -> list[list[TransitionRecord]]:
    """Behavior mix for the shipped dataset: 50/30/20 per DEFAULT_POLICY_MIX."""
    picks = []
    for policy, frac in DEFAULT_POLICY_MIX:
        picks.extend([policy] * round(frac * n_streams))
    while len(picks) < n_streams:
        picks.append(DEFAULT_POLICY_MIX[0][0])
    picks = picks[:n_streams]
    streams = []
    for idx, policy in enumerate(picks):
        streams.append(run_behavior_policy(
            cfg, policy, frames_per_stream, seed=int(np.random.SeedSequence(
                [seed, idx]).generate_state(1)[0])))
    return streams


# ---------------------------------------------------------------------------
# file format

_REC_COLS = 12  # t, node, obs*4, mf*4, action, reward


def _stream_to_block(stream: list[TransitionRecord]) -> bytes:
    rows = np.empty((len(stream), _REC_COLS), dtype="<f8")
    for i, r in enumerate(stream):
        rows[i, 0] = r.t
        rows[i, 1] = r.node
        rows[i, 2:6] = r.obs
        rows[i, 6:10] = r.mf_obs
        rows[i, 10] = r.action
        rows[i, 11] = r.reward
    return rows.tobytes()


def _block_to_stream(payload: bytes) -> list[TransitionRecord]:
    rows = np.frombuffer(payload, dtype="<f8")
    if rows.size % _REC_COLS != 0:
        raise storage.SchemaError("record block size is not a whole number of rows")
    rows = rows.reshape(-1, _REC_COLS)
    return [TransitionRecord(
        t=int(row[0]), node=int(row[1]), obs=row[2:6].copy(), mf_obs=row[6:10].copy(),
        action=float(row[10]), reward=float(row[11])) for row in rows]


def _stats_meta(stats: DatasetStats) -> dict:
    return {
        "obs_mean": stats.obs_mean.tolist(),
        "obs_std": stats.obs_std.tolist(),
        "return_min": stats.return_min,
        "return_max": stats.return_max,
    }


def _stats_from_meta(meta: dict) -> DatasetStats:
    return DatasetStats(
        obs_mean=np.array(meta["obs_mean"], dtype=np.float64),
        obs_std=np.array(meta["obs_std"], dtype=np.float64),
        return_min=float(meta["return_min"]),
        return_max=float(meta["return_max"]),
    )


def write_dataset(path, streams: list[list[TransitionRecord]], stats: DatasetStats,
                  H: int, gamma: float, config_hash: str = "") -> None:
    """Serialize record streams losslessly with per-block checksums."""
    meta = {
        "schema": "transition-records/v1",
        "config_hash": config_hash,
        "H": int(H),
        "gamma": float(gamma),
        "n_streams": len(streams),
        "stats": _stats_meta(stats),
    }
    blocks = [(f"stream/{i}", _stream_to_block(s)) for i, s in enumerate(streams)]
    storage.write_container(path, storage.KIND_RECORDS, meta, blocks)


def read_dataset(path):
    """Inverse of write_dataset; returns (streams, stats, meta)."""
    _, meta, blocks = storage.read_container(path, expect_kind=storage.KIND_RECORDS)
    if meta.get("schema") != "transition-records/v1":
        raise storage.SchemaError(f"{path}: unexpected schema {meta.get('schema')!r}")
    streams = []
    for i in range(meta["n_streams"]):
        name = f"stream/{i}"
        if name not in blocks:
            raise storage.TruncatedError(f"{path}: missing block {name}")
        streams.append(_block_to_stream(blocks[name]))
    return streams, _stats_from_meta(meta["stats"]), meta


_WIN_EXTRA = 3  # node, start, y


def write_windows(path, windows: list[TrajectoryWindow], stats: DatasetStats,
                  H: int, gamma: float, config_hash: str = "") -> None:
    width = _WIN_EXTRA + H * 4 * 2 + H * 2
    rows = np.empty((len(windows), width), dtype="<f8")
    for i, w in enumerate(windows):
        rows[i, 0] = w.node
        rows[i, 1] = w.start
        rows[i, 2] = w.y
        rows[i, 3:3 + H * 4] = w.x0.reshape(-1)
        rows[i, 3 + H * 4:3 + 2 * H * 4] = w.xbar0.reshape(-1)
        rows[i, 3 + 2 * H * 4:3 + 2 * H * 4 + H] = w.actions
        rows[i, 3 + 2 * H * 4 + H:] = w.rewards
    meta = {
        "schema": "trajectory-windows/v1",
        "config_hash": config_hash,
        "H": int(H),
        "gamma": float(gamma),
        "n_windows": len(windows),
        "stats": _stats_meta(stats),
    }
    storage.write_container(path, storage.KIND_WINDOWS, meta, [("windows", rows.tobytes())])


def read_windows(path):
    _, meta, blocks = storage.read_container(path, expect_kind=storage.KIND_WINDOWS)
    if meta.get("schema") != "trajectory-windows/v1":
        raise storage.SchemaError(f"{path}: unexpected schema {meta.get('schema')!r}")
    H = meta["H"]
    width = _WIN_EXTRA + H * 4 * 2 + H * 2
    rows = np.frombuffer(blocks["windows"], dtype="<f8").reshape(-1, width)
    if rows.shape[0] != meta["n_windows"]:
        raise storage.SchemaError(f"{path}: window count mismatch")
    windows = []
    for row in rows:
        windows.append(TrajectoryWindow(
            x0=row[3:3 + H * 4].reshape(H, 4).copy(),
            xbar0=row[3 + H * 4:3 + 2 * H * 4].reshape(H, 4).copy(),
            actions=row[3 + 2 * H * 4:3 + 2 * H * 4 + H].copy(),
            rewards=row[3 + 2 * H * 4 + H:].copy(),
            y=float(row[2]), start=int(row[1]), node=int(row[0])))
    return windows, _stats_from_meta(meta["stats"]), meta
