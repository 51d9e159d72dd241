import time, sys
import numpy as np
from macdmp import dataset, planner, scenario, training
from macdmp.diffusion import GuidanceConfig

def log(*a):
    print(f"[{time.strftime('%H:%M:%S')}]", *a, flush=True)

HIGH, LOW = 0.0012, 0.005
scn = scenario.get_scenario("s8_2v6")
scn.high_interarrival_s = HIGH
scn.low_interarrival_s = LOW
log(f"rates high={HIGH} low={LOW}")

for pol in ("uniform", "proportional"):
    rep = planner.evaluate(pol, scn, seeds=(0,1,2), episode_frames=1000)
    log(f"{pol}: {rep.summary()}")
    log(f"   per-seed: {[round(r.avg_reward,6) for r in rep.per_seed]}")

t0 = time.time()
streams = dataset.collect_mixed_streams(scn, n_streams=12, frames_per_stream=1200, seed=100)
log(f"collected in {time.time()-t0:.0f}s")
results = {}
for use_mf in (True, False):
    cfg = training.TrainConfig(H=8, K=100, gamma=0.99, epochs=20, steps_per_epoch=150,
                               batch_size=64, lr=2e-4, use_mean_field=use_mf, seed=0)
    t0 = time.time()
    res = training.train(streams, cfg)
    log(f"trained mf={use_mf} in {time.time()-t0:.0f}s, last={results.setdefault('_',None) or res.loss_log[-1]['total']:.4f}")
    results[use_mf] = res

reports = {}
for name, policy, art, guid in [
    ("macdmp", "macdmp", results[True], GuidanceConfig(zeta=1.2)),
    ("macdmp_no_mf", "macdmp_no_mf", results[False], GuidanceConfig(zeta=1.2)),
    ("macdmp_dpm10", "macdmp", results[True], GuidanceConfig(zeta=1.2, K_sample=10, sampler="dpm1")),
]:
    t0 = time.time()
    rep = planner.evaluate(policy, scn, seeds=(0,1,2), episode_frames=1000,
                           artifacts=art, guidance=guid)
    log(f"{name}: {rep.summary()}  [{time.time()-t0:.0f}s]")
    log(f"   per-seed: {[round(r.avg_reward,6) for r in rep.per_seed]}")
    reports[name] = rep

for i in range(3):
    m = reports["macdmp"].per_seed[i].avg_reward
    n = reports["macdmp_no_mf"].per_seed[i].avg_reward
    log(f"seed {i}: macdmp={m:.6f} no_mf={n:.6f} | mf>=nomf {m>=n}")
k100 = reports["macdmp"].mean("avg_reward")
k10 = reports["macdmp_dpm10"].mean("avg_reward")
log(f"K100={k100:.6f} K10={k10:.6f} rel {abs(k10-k100)/abs(k100):.3%}")
