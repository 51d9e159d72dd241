"""Receding-horizon control and the evaluation harness.

Each frame, every agent averages its neighbors' observations, samples a
guided plan jointly over its own and the mean-field track, and reads
its RB demand off the first planned transition through the inverse
dynamics net. Demands are normalized by the allocator, never here.
Scripted uniform and proportional policies serve as baselines.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from . import netsim
from .dataset import behavior_demands
from .diffusion import GuidanceConfig, dpm1_sample, sample_plan
from .netsim import DomainError, Simulator, mean_field_obs
from .scenario import ScenarioConfig, make_simulator
from .training import TrainResult

POLICIES = ("macdmp", "macdmp_no_mf", "uniform", "proportional")


@dataclass
class PlannerConfig:
    H: int
    guidance: GuidanceConfig = field(default_factory=GuidanceConfig)
    replan_every: int = 1
    action_clamp_min: float = 0.0

    def __post_init__(self):
        if self.replan_every < 1:
            raise DomainError("replan_every must be >= 1")


def plan_actions(observations, topology, artifacts: TrainResult,
                 planner: PlannerConfig, rng: np.random.Generator) -> np.ndarray:
    """Raw per-node RB demands from one round of guided planning.

    Observations go in raw, are standardized with the training stats,
    planned in standardized space, and the demand is the clamped
    inverse-dynamics read-out of the first planned transition.
    """
    n = len(observations)
    obs_rows = np.stack([
        o.as_array() if isinstance(o, netsim.Observation) else np.asarray(o, float)
        for o in observations])
    if artifacts.config.use_mean_field:
        mf_rows = np.stack([mean_field_obs(observations, topology, i) for i in range(n)])
    else:
        mf_rows = obs_rows
    o_std = artifacts.stats.standardize(obs_rows)
    mf_std = artifacts.stats.standardize(mf_rows)

    sampler = dpm1_sample if planner.guidance.sampler == "dpm1" else sample_plan
    x0, _ = sampler(o_std, mf_std, artifacts.models, artifacts.schedule,
                    planner.guidance, rng, H=planner.H)
    a = artifacts.models.inv_dyn.apply(x0[:, 0], x0[:, 1]).data[:, 0]
    return np.maximum(a, planner.action_clamp_min)


class DiffusionPolicy:
    """Per-episode wrapper holding the replan cache and sampler RNG."""

    def __init__(self, artifacts: TrainResult, planner: PlannerConfig, seed: int):
        self.artifacts = artifacts
        self.planner = planner
        self.rng = np.random.default_rng(np.random.SeedSequence([seed, 0x9A]))
        self._frame = 0
        self._cached: np.ndarray | None = None

    def demands(self, observations, topology) -> np.ndarray:
        if self._cached is None or self._frame % self.planner.replan_every == 0:
            self._cached = plan_actions(
                observations, topology, self.artifacts, self.planner, self.rng)
        self._frame += 1
        return self._cached


@dataclass
class SeedResult:
    seed: int
    avg_reward: float
    avg_throughput_bps: float
    avg_delay_s: float
    packet_loss_rate: float

    def __post_init__(self):
        if not 0.0 <= self.packet_loss_rate <= 1.0:
            raise DomainError("packet_loss_rate must lie in [0, 1]")
        if self.avg_delay_s < 0:
            raise DomainError("avg_delay_s must be >= 0")


@dataclass
class EvalReport:
    policy: str
    scenario: str
    config_hash: str
    episode_frames: int
    per_seed: list[SeedResult]

    def _col(self, name):
        return np.array([getattr(r, name) for r in self.per_seed])

    def mean(self, name) -> float:
        return float(self._col(name).mean())

    def std(self, name) -> float:
        return float(self._col(name).std())

    def rows(self) -> list[dict]:
        return [{
            "policy": self.policy,
            "scenario": self.scenario,
            "config_hash": self.config_hash,
            "seed": r.seed,
            "avg_reward": r.avg_reward,
            "avg_throughput_bps": r.avg_throughput_bps,
            "avg_delay_s": r.avg_delay_s,
            "packet_loss_rate": r.packet_loss_rate,
        } for r in self.per_seed]

    def summary(self) -> str:
        return (f"{self.policy} on {self.scenario}: "
                f"reward {self.mean('avg_reward'):.6f} ± {self.std('avg_reward'):.6f}, "
                f"throughput {self.mean('avg_throughput_bps'):.1f} bit/s, "
                f"delay {self.mean('avg_delay_s'):.4f} s, "
                f"loss {self.mean('packet_loss_rate'):.4f}")


def report_csv(reports: list[EvalReport]) -> str:
    """One CSV row per (policy, scenario, seed)."""
    buf = io.StringIO()
    fields = ["policy", "scenario", "config_hash", "seed", "avg_reward",
              "avg_throughput_bps", "avg_delay_s", "packet_loss_rate"]
    writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    writer.writeheader()
    for report in reports:
        for row in report.rows():
            writer.writerow(row)
    return buf.getvalue()


def run_episode(sim: Simulator, demand_fn, frames: int) -> SeedResult:
    """Drive one episode; demand_fn(observations, topology) -> raw demands."""
    n = sim.n_nodes
    obs = [netsim.ZERO_OBS] * n
    reward_sum = 0.0
    reward_count = 0
    delivered = dropped = generated = 0
    delay_sum = 0.0
    delivered_bits = 0
    total_rbs = sim.grid.total_rbs
    for _ in range(frames):
        demands = np.asarray(demand_fn(obs, sim.topology), dtype=np.float64)
        alloc = netsim.allocate_rbs(demands, sim.grid, sim.alloc_rng)
        assert sum(len(c) for c in alloc) == total_rbs
        obs, rewards, delta = sim.step_frame(alloc)
        reward_sum += float(rewards.sum())
        reward_count += n
        generated += delta.generated
        delivered += delta.delivered
        dropped += delta.dropped
        delay_sum += delta.delay_sum
        delivered_bits += delta.delivered_bits
    episode_s = frames * sim.grid.frame_duration
    return SeedResult(
        seed=-1,
        avg_reward=reward_sum / reward_count,
        avg_throughput_bps=delivered_bits / episode_s,
        avg_delay_s=delay_sum / delivered if delivered else 0.0,
        packet_loss_rate=dropped / generated if generated else 0.0,
    )


def evaluate(policy: str, cfg: ScenarioConfig, seeds=(0, 1, 2), episodes: int = 1,
             episode_frames: int = 1000, artifacts: TrainResult | None = None,
             guidance: GuidanceConfig | None = None,
             replan_every: int = 1) -> EvalReport:
    """QoS evaluation of one policy over seeded episodes.

    Diffusion policies need trained artifacts; the no-MF variant must
    come from a bundle trained without mean-field inputs so parameter
    counts match.
    """
    if policy not in POLICIES:
        raise DomainError(f"unknown policy {policy!r}; choose from {POLICIES}")
    if policy in ("macdmp", "macdmp_no_mf"):
        if artifacts is None:
            raise DomainError(f"policy {policy!r} requires trained artifacts")
        if policy == "macdmp_no_mf" and artifacts.config.use_mean_field:
            raise DomainError("macdmp_no_mf needs a bundle trained without mean field")
        if policy == "macdmp" and not artifacts.config.use_mean_field:
            raise DomainError("macdmp needs a bundle trained with mean field")
    per_seed = []
    for seed in seeds:
        acc = []
        for ep in range(episodes):
            ep_seed = int(np.random.SeedSequence([seed, ep]).generate_state(1)[0])
            sim = make_simulator(cfg, seed=ep_seed)
            if policy in ("uniform", "proportional"):
                scripted_rng = np.random.default_rng(np.random.SeedSequence([ep_seed, 3]))

                def demand_fn(obs, topo, _rng=scripted_rng):
                    rows = np.stack([o.as_array() for o in obs])
                    return behavior_demands(policy, rows, _rng)
            else:
                planner = PlannerConfig(
                    H=artifacts.config.H,
                    guidance=guidance if guidance is not None else GuidanceConfig(),
                    replan_every=replan_every)
                dp = DiffusionPolicy(artifacts, planner, seed=ep_seed)
                demand_fn = dp.demands
            acc.append(run_episode(sim, demand_fn, episode_frames))
        per_seed.append(SeedResult(
            seed=seed,
            avg_reward=float(np.mean([r.avg_reward for r in acc])),
            avg_throughput_bps=float(np.mean([r.avg_throughput_bps for r in acc])),
            avg_delay_s=float(np.mean([r.avg_delay_s for r in acc])),
            packet_loss_rate=float(np.mean([r.packet_loss_rate for r in acc])),
        ))
    return EvalReport(policy=policy, scenario=cfg.name, config_hash=cfg.config_hash(),
                      episode_frames=episode_frames, per_seed=per_seed)
