"""Acceptance suite: one test per criterion, one printed PASS/FAIL line each.

Run with `pytest tests/test_acceptance.py -v -s`. The directional
criteria (8 and 9) train on a locally collected dataset and evaluate
full 1000-frame episodes; together they dominate the runtime.
"""

import math
import time

import numpy as np
import pytest

from synth import fit_window_stats, linear_gaussian_windows, train_on_windows

from macdmp import dataset, netsim, planner, scenario, training
from macdmp import tensor as T
from macdmp.cli import main
from macdmp.diffusion import GuidanceConfig, denoise_step_packed, make_schedule
from macdmp.models import ClassifierNet, DenoiserNet, InverseDynamicsNet
from macdmp.scenario import ScenarioConfig, save_yaml
from macdmp.tensor import Tensor
from macdmp.theorylab import (GaussianDist, LinearSDE, PerturbedReverseConfig,
                              drift_gap_experiment, lemma2_check, lemma3_check,
                              theorem1_check)


def report(num, name, ok, detail=""):
    status = "PASS" if ok else "FAIL"
    print(f"\nACCEPTANCE {num:02d} {name}: {status} {detail}")
    assert ok, f"criterion {num} ({name}) failed: {detail}"


# -------------------------------------------------------------------- 1

def test_criterion_01_conservation_and_allocation():
    t0 = time.time()
    frames_checked = 0
    for seed in range(10):
        cfg = ScenarioConfig(name=f"acc1_{seed}", n_nodes=6, n_high=2,
                             layout_seed=20 + seed, high_interarrival_s=0.002,
                             low_interarrival_s=0.008)
        sim = scenario.make_simulator(cfg, seed=seed)
        rng = np.random.default_rng(seed)
        full_grid = {(s, c) for s in range(sim.grid.slots_per_frame)
                     for c in range(sim.grid.channels)}
        for _ in range(1000):
            demands = rng.uniform(0, 5, size=sim.n_nodes)
            alloc = netsim.allocate_rbs(demands, sim.grid, sim.alloc_rng)
            cells = [c for group in alloc for c in group]
            assert len(cells) == sim.grid.total_rbs
            assert set(cells) == full_grid
            sim.step_frame(alloc)       # asserts conservation every frame
            frames_checked += 1
        q = sim.state.qos
        assert q.generated == q.delivered + q.dropped + sim.state.queued_packets()
    report(1, "conservation-and-allocation", True,
           f"({frames_checked} frames, {time.time() - t0:.1f}s)")


# -------------------------------------------------------------------- 2

def _directional_fd_check(build_loss, params, rng, rel_tol=1e-5):
    """Compare <grad, v> against a central difference along random v."""
    names = list(params)
    tensors = [params[n] for n in names]
    grads = T.backward(build_loss(), tensors)
    direction = [rng.standard_normal(p.data.shape) for p in tensors]
    norm = math.sqrt(sum(float((d * d).sum()) for d in direction))
    direction = [d / norm for d in direction]
    got = sum(float((g * d).sum()) for g, d in zip(grads, direction))

    h = 1e-6
    saved = [p.data.copy() for p in tensors]
    for p, d, s in zip(tensors, direction, saved):
        p.data = s + h * d
    f_plus = float(build_loss().data)
    for p, d, s in zip(tensors, direction, saved):
        p.data = s - h * d
    f_minus = float(build_loss().data)
    for p, s in zip(tensors, saved):
        p.data = s
    want = (f_plus - f_minus) / (2 * h)
    scale = max(abs(want), abs(got), 1e-8)
    return abs(got - want) / scale


def test_criterion_02_gradient_correctness():
    t0 = time.time()
    H, K = 8, 12
    rng = np.random.default_rng(0)
    worst = 0.0
    for arch in ("denoiser", "classifier", "inv_dyn"):
        for point in range(10):
            seed = 100 * point + hash(arch) % 50
            if arch == "denoiser":
                net = DenoiserNet(H, K, hidden=32, blocks=2, seed=seed)
            elif arch == "classifier":
                net = ClassifierNet(H, K, hidden=32, blocks=2, seed=seed)
            else:
                net = InverseDynamicsNet(hidden=32, blocks=2, seed=seed)
            params = net.params()
            # head starts at zero; give it scale so the loss sees every layer
            params["out.w"].data = rng.standard_normal(params["out.w"].data.shape) * 0.3
            if arch == "inv_dyn":
                o = rng.standard_normal((4, 4))
                o2 = rng.standard_normal((4, 4))
                build = lambda: T.sum_sq(net.apply(o, o2))
            else:
                z = rng.standard_normal((4, 2 * H * 4))
                k = rng.integers(1, K + 1, size=4)
                build = lambda: T.sum_sq(net.apply_packed(z, k))
            err = _directional_fd_check(build, params, rng)
            worst = max(worst, err)
            assert err <= 1e-5, f"{arch} point {point}: rel err {err:.2e}"
    report(2, "gradient-correctness", worst <= 1e-5,
           f"(worst rel err {worst:.2e}, {time.time() - t0:.1f}s)")


# -------------------------------------------------------------------- 3

def test_criterion_03_terminal_kl_bound():
    t0 = time.time()
    rng = np.random.default_rng(3)
    ok = True
    worst_slack = -math.inf
    for d in (1, 2, 4):
        a = rng.standard_normal((d, d))
        data = GaussianDist(rng.uniform(-1.5, 1.5, size=d),
                            0.4 * np.eye(d) + 0.15 * (a @ a.T))
        grid = np.linspace(math.log(10.0) + 0.1, 9.0, 20)   # e^-int beta <= 0.1
        rep = lemma2_check(data, 1.0, grid)
        assert len(rep.rows) == 20
        ok = ok and rep.ok
        worst_slack = max(worst_slack,
                          max(r["kl"] - r["bound"] for r in rep.rows))
    report(3, "terminal-kl-bound", ok,
           f"(d in 1,2,4 x 20 T-values; worst kl-bound gap {worst_slack:.2e}, "
           f"{time.time() - t0:.1f}s)")


# -------------------------------------------------------------------- 4

def test_criterion_04_kl_evolution_identity():
    t0 = time.time()
    pairs = [
        (LinearSDE(lambda t: -0.5, lambda t: 1.0, 1.0, 0.5),
         LinearSDE(lambda t: -1.0, lambda t: 1.0, -0.5, 1.0)),
        (LinearSDE(lambda t: -0.2, lambda t: 0.8, 0.0, 2.0),
         LinearSDE(lambda t: -0.6, lambda t: 0.8, 0.5, 0.7)),
        (LinearSDE(lambda t: -0.5 - 0.1 * t, lambda t: 1.0, 1.5, 1.0),
         LinearSDE(lambda t: -0.3, lambda t: 1.0, 0.0, 0.4)),
        (LinearSDE(lambda t: 0.1, lambda t: 1.4, -1.0, 0.3),
         LinearSDE(lambda t: -0.4, lambda t: 1.4, 1.0, 1.2)),
        (LinearSDE(lambda t: -0.8, lambda t: 0.5 + 0.2 * t, 0.7, 0.9),
         LinearSDE(lambda t: -0.8, lambda t: 0.5 + 0.2 * t, -0.7, 0.9)),
    ]
    worst = 0.0
    for sde1, sde2 in pairs:
        rep = lemma3_check(sde1, sde2, np.linspace(0.2, 1.4, 7), fd_step=1e-4)
        assert rep.ok
        worst = max(worst, max(r["rel_err"] for r in rep.rows))
    report(4, "kl-evolution-identity", worst <= 1e-2,
           f"(5 SDE pairs x 7 grid points, worst rel err {worst:.2e}, "
           f"{time.time() - t0:.1f}s)")


# -------------------------------------------------------------------- 5

@pytest.mark.slow
def test_criterion_05_drift_gap_and_generation_bound():
    t0 = time.time()
    gap_q = drift_gap_experiment("quadratic", n_samples=200, seed=5)
    gap_c = drift_gap_experiment("cubic", n_samples=200, seed=5)
    assert gap_q.ok and gap_c.ok

    rep = theorem1_check(PerturbedReverseConfig(seed=5))
    statuses = [r["status"] for r in rep.rows]
    n_pass = statuses.count("pass")
    ok = rep.ok and len(rep.rows) >= 10 and statuses.count("fail") == 0
    report(5, "drift-gap-and-generation-bound", ok,
           f"(drift gaps bounded on both instances; generation bound: "
           f"{n_pass}/{len(rep.rows)} pass, {statuses.count('inconclusive')} "
           f"inconclusive, {time.time() - t0:.1f}s)")


# -------------------------------------------------------------------- 6

@pytest.mark.slow
def test_criterion_06_sampler_fidelity():
    t0 = time.time()
    mu, var = 1.0, 0.25
    K = 1000
    schedule = make_schedule(K, 1e-4, 0.01, kind="linear")

    class Den:
        def apply_packed(self, z, k):
            abar = schedule.alpha_bar(k)
            v_k = abar * var + (1 - abar)
            return Tensor(np.sqrt(1 - abar) * (z - np.sqrt(abar) * mu) / v_k)

    class M:
        denoiser = Den()
        classifier = None

    rng = np.random.default_rng(6)
    z = rng.standard_normal((100_000, 8))
    models = M()
    for k in range(K, 0, -1):
        z = denoise_step_packed(z, k, models, schedule, zeta=0.0, rng=rng)
    mean_err = abs(z.mean() - mu) / abs(mu)
    var_err = abs(z.var() - var) / var
    report(6, "sampler-fidelity", mean_err <= 0.02 and var_err <= 0.02,
           f"(K=1000, mean err {mean_err:.3%}, var err {var_err:.3%}, "
           f"{time.time() - t0:.1f}s)")


# -------------------------------------------------------------------- 7

@pytest.mark.slow
def test_criterion_07_learning_sanity():
    t0 = time.time()
    windows = linear_gaussian_windows(H=8, n=512, seed=7)
    stats = fit_window_stats(windows)
    _, log = train_on_windows(windows, stats, H=8, K=20, steps=2000, batch=32,
                              lr=1e-3, hidden=64, blocks=2, seed=7, lr_decay=False)
    first, last = np.mean(log[:50]), np.mean(log[-50:])
    drop_ok = last <= 0.5 * first

    rng = np.random.default_rng(8)
    o = rng.standard_normal((4000, 4))
    o2 = rng.standard_normal((4000, 4))
    a = o2[:, 0] - o[:, 0]
    net = InverseDynamicsNet(hidden=48, blocks=1, seed=8)
    params = net.params()
    opt = T.adam_init(params, lr=3e-3)
    names = list(params)
    for _ in range(600):
        idx = rng.integers(3000, size=64)
        loss = T.mse(net.apply(o[idx], o2[idx]), Tensor(a[idx].reshape(-1, 1)))
        grads = T.backward(loss, [params[n] for n in names])
        T.adam_step(opt, params, dict(zip(names, grads)))
    pred = net.apply(o[3000:], o2[3000:]).data[:, 0]
    r2 = 1.0 - np.sum((pred - a[3000:]) ** 2) / np.sum((a[3000:] - a[3000:].mean()) ** 2)
    report(7, "learning-sanity", drop_ok and r2 >= 0.99,
           f"(loss {first:.3f} -> {last:.3f} [{last / first:.1%}], inverse-dynamics "
           f"R^2 {r2:.4f}, {time.time() - t0:.1f}s)")


# -------------------------------------------------------------------- 8 & 9

SEEDS = (0, 1, 2)
EPISODE_FRAMES = 1000


@pytest.fixture(scope="module")
def directional_runs():
    """Collect, train (with and without mean field), evaluate all policies."""
    t0 = time.time()
    scn = scenario.get_scenario("s8_2v6")
    streams = dataset.collect_mixed_streams(scn, n_streams=12,
                                            frames_per_stream=1200, seed=100)
    results = {}
    for use_mf in (True, False):
        cfg = training.TrainConfig(H=8, K=100, gamma=0.99, epochs=20,
                                   steps_per_epoch=150, batch_size=64, lr=2e-4,
                                   use_mean_field=use_mf, seed=0)
        results[use_mf] = training.train(streams, cfg)

    reports = {}
    reports["uniform"] = planner.evaluate(
        "uniform", scn, seeds=SEEDS, episode_frames=EPISODE_FRAMES)
    reports["macdmp"] = planner.evaluate(
        "macdmp", scn, seeds=SEEDS, episode_frames=EPISODE_FRAMES,
        artifacts=results[True], guidance=GuidanceConfig(zeta=1.2))
    reports["macdmp_no_mf"] = planner.evaluate(
        "macdmp_no_mf", scn, seeds=SEEDS, episode_frames=EPISODE_FRAMES,
        artifacts=results[False], guidance=GuidanceConfig(zeta=1.2))
    reports["macdmp_k10"] = planner.evaluate(
        "macdmp", scn, seeds=SEEDS, episode_frames=EPISODE_FRAMES,
        artifacts=results[True],
        guidance=GuidanceConfig(zeta=1.2, K_sample=10, sampler="dpm1"))
    reports["_elapsed"] = time.time() - t0
    return reports


@pytest.mark.slow
def test_criterion_08_directional_reproduction(directional_runs):
    rep = directional_runs
    mf = [r.avg_reward for r in rep["macdmp"].per_seed]
    no_mf = [r.avg_reward for r in rep["macdmp_no_mf"].per_seed]
    uni = [r.avg_reward for r in rep["uniform"].per_seed]
    vs_nomf = [m >= n for m, n in zip(mf, no_mf)]
    vs_uni = [m >= u for m, u in zip(mf, uni)]
    ok = all(vs_nomf) and all(vs_uni)
    report(8, "directional-reproduction", ok,
           f"(per-seed reward macdmp={[round(x, 5) for x in mf]}, "
           f"no_mf={[round(x, 5) for x in no_mf]}, "
           f"uniform={[round(x, 5) for x in uni]}; "
           f"{rep['_elapsed'] / 60:.1f} min incl. training)")


@pytest.mark.slow
def test_criterion_09_fast_sampler_within_15_percent(directional_runs):
    rep = directional_runs
    r100 = rep["macdmp"].mean("avg_reward")
    r10 = rep["macdmp_k10"].mean("avg_reward")
    rel = abs(r10 - r100) / abs(r100)
    report(9, "fast-sampler-parity", rel <= 0.15,
           f"(K=100 reward {r100:.5f}, K_sample=10 reward {r10:.5f}, "
           f"rel diff {rel:.2%})")


# -------------------------------------------------------------------- 10

def test_criterion_10_manifest_reruns_bit_identical(tmp_path):
    t0 = time.time()
    tiny = ScenarioConfig(
        name="acc10", n_nodes=3, n_high=1,
        positions=[[0.0, 0.0], [900.0, 0.0], [450.0, 700.0]],
        target_range_m=1200.0, high_interarrival_s=0.004)
    cfg_path = tmp_path / "acc10.yaml"
    save_yaml(tiny, cfg_path)

    runs = [
        ["simulate", "--config", str(cfg_path), "--seed", "11", "--frames", "120",
         "--policy", "proportional"],
        ["simulate", "--config", str(cfg_path), "--seed", "12", "--frames", "80",
         "--policy", "noisy-proportional"],
        ["verify-theory", "--quick", "--seed", "2"],
    ]
    all_ok = True
    for i, argv in enumerate(runs):
        first = tmp_path / f"run{i}_a"
        second = tmp_path / f"run{i}_b"
        assert main(argv + ["--out-dir", str(first)]) == 0
        manifest = next(first.glob("*.manifest.json"))
        assert main(["rerun", str(manifest), "--out-dir", str(second)]) == 0
        for fa in sorted(first.iterdir()):
            if fa.suffix == ".json" or fa.suffix == ".yaml":
                continue        # manifests differ in wall-clock fields
            fb = second / fa.name
            same = fb.exists() and fa.read_bytes() == fb.read_bytes()
            all_ok = all_ok and same
    report(10, "manifest-reruns-bit-identical", all_ok,
           f"(3 runs x 2 executions, {time.time() - t0:.1f}s)")
