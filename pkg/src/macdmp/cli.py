"""Batch CLI: simulate, collect, train, eval, ablate, verify-theory.

Every run writes its outputs plus a manifest (resolved args, config
hash, seed, package version) under --out-dir; `rerun <manifest>`
repeats a run bit-exactly. Exit codes: 0 ok, 2 bad config, 3 missing
artifact, 4 schema mismatch, 5 assertion/check failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, dataset, planner, storage, training
from .diffusion import GuidanceConfig
from .netsim import DomainError, TopologyError
from .scenario import ConfigError, get_scenario
from .theorylab import (GaussianDist, LinearSDE, PerturbedReverseConfig,
                        drift_gap_experiment, lemma2_check, lemma3_check,
                        theorem1_check)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING = 3
EXIT_SCHEMA = 4
EXIT_ASSERTION = 5


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _hash_args(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def _write_manifest(out_dir: Path, subcommand: str, args_payload: dict,
                    config_hash: str, seed, outputs: list[str]) -> Path:
    manifest = {
        "subcommand": subcommand,
        "args": args_payload,
        "config_hash": config_hash,
        "seed": seed,
        "version": __version__,
        "outputs": outputs,
        "wall_clock": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    path = out_dir / f"{subcommand}_{config_hash}_{seed}.manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _require_file(path: str, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise CliError(EXIT_MISSING, f"{what} not found: {path}")
    return p


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _resolve_scenario(args):
    try:
        return get_scenario(args.config, limited_rf=getattr(args, "limited_rf", False))
    except FileNotFoundError as e:
        raise CliError(EXIT_MISSING, f"scenario config not found: {args.config}") from e
    except ConfigError as e:
        raise CliError(EXIT_CONFIG, str(e)) from e


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(args) -> int:
    cfg = _resolve_scenario(args)
    if args.policy not in dataset.BEHAVIOR_POLICIES:
        raise CliError(EXIT_CONFIG, f"bad --policy {args.policy!r}")
    out = _out_dir(args)
    stream = dataset.run_behavior_policy(cfg, args.policy, args.frames, seed=args.seed)
    stats = dataset.fit_stats([stream], args.H, args.gamma)
    chash = cfg.config_hash()
    trace = out / f"simulate_{chash}_{args.seed}.macd"
    dataset.write_dataset(trace, [stream], stats, args.H, args.gamma, config_hash=chash)
    payload = {"config": cfg.to_dict(), "policy": args.policy, "frames": args.frames,
               "H": args.H, "gamma": args.gamma}
    _write_manifest(out, "simulate", payload, chash, args.seed, [trace.name])
    print(f"wrote {trace} ({len(stream)} records, {args.frames} frames)")
    return EXIT_OK


def cmd_collect(args) -> int:
    names = [s.strip() for s in args.config.split(",") if s.strip()]
    if not names:
        raise CliError(EXIT_CONFIG, "collect needs at least one scenario in --config")
    out = _out_dir(args)
    streams = []
    cfg_dicts = []
    for name in names:
        cfg = get_scenario(name, limited_rf=args.limited_rf)
        cfg_dicts.append(cfg.to_dict())
        streams.extend(dataset.collect_mixed_streams(
            cfg, args.streams, args.frames_per_stream, seed=args.seed))
    stats = dataset.fit_stats(streams, args.H, args.gamma)
    payload = {"configs": cfg_dicts, "streams": args.streams,
               "frames_per_stream": args.frames_per_stream,
               "H": args.H, "gamma": args.gamma}
    chash = _hash_args(payload)
    path = out / f"collect_{chash}_{args.seed}.macd"
    dataset.write_dataset(path, streams, stats, args.H, args.gamma, config_hash=chash)
    _write_manifest(out, "collect", payload, chash, args.seed, [path.name])
    n_rec = sum(len(s) for s in streams)
    print(f"wrote {path} ({len(streams)} streams, {n_rec} records)")
    return EXIT_OK


def _read_dataset_or_die(path: str):
    p = _require_file(path, "dataset")
    try:
        return dataset.read_dataset(p)
    except (storage.VersionError, storage.SchemaError) as e:
        raise CliError(EXIT_SCHEMA, str(e)) from e
    except storage.StorageError as e:
        raise CliError(EXIT_SCHEMA, f"unreadable dataset: {e}") from e


def cmd_train(args) -> int:
    streams, _, meta = _read_dataset_or_die(args.dataset)
    out = _out_dir(args)
    cfg = training.TrainConfig(
        H=args.H if args.H is not None else meta["H"],
        K=args.K,
        gamma=args.gamma if args.gamma is not None else meta["gamma"],
        schedule_kind=args.schedule,
        epochs=args.epochs, steps_per_epoch=args.steps, batch_size=args.batch,
        lr=args.lr, hidden=args.hidden, blocks=args.blocks,
        use_mean_field=not args.no_mean_field, seed=args.seed)
    payload = {"dataset_hash": meta.get("config_hash", ""), "train": vars(cfg).copy()}
    chash = _hash_args(payload)

    def log(entry):
        print("  " + " ".join(f"{k}={v:.5f}" if isinstance(v, float) else f"{k}={v}"
                              for k, v in entry.items()))

    result = training.train(streams, cfg, log_fn=log if args.verbose else None)
    ckpt = out / f"train_{chash}_{args.seed}.ckpt"
    training.save_checkpoint(ckpt, result, config_hash=chash)
    losscsv = out / f"train_{chash}_{args.seed}_loss.csv"
    fields = list(result.loss_log[0])
    lines = [",".join(fields)]
    for entry in result.loss_log:
        lines.append(",".join(repr(entry[f]) if isinstance(entry[f], float)
                              else str(entry[f]) for f in fields))
    losscsv.write_text("\n".join(lines) + "\n")
    _write_manifest(out, "train", payload, chash, args.seed, [ckpt.name, losscsv.name])
    first, last = result.loss_log[0]["total"], result.loss_log[-1]["total"]
    print(f"wrote {ckpt} (loss {first:.5f} -> {last:.5f})")
    return EXIT_OK


def _load_checkpoint_or_die(path: str):
    p = _require_file(path, "checkpoint")
    try:
        return training.load_checkpoint(p)
    except (storage.VersionError, storage.SchemaError) as e:
        raise CliError(EXIT_SCHEMA, str(e)) from e
    except storage.StorageError as e:
        raise CliError(EXIT_SCHEMA, f"unreadable checkpoint: {e}") from e


def _guidance_from_args(args) -> GuidanceConfig:
    return GuidanceConfig(zeta=args.zeta, K_sample=args.k_sample, sampler=args.sampler)


def cmd_eval(args) -> int:
    cfg = _resolve_scenario(args)
    seeds = [int(s) for s in args.seeds.split(",")]
    policies = [p.strip() for p in args.policy.split(",")]
    artifacts = None
    if any(p in ("macdmp", "macdmp_no_mf") for p in policies):
        if args.checkpoint is None:
            raise CliError(EXIT_CONFIG, "diffusion policies need --checkpoint")
        artifacts = _load_checkpoint_or_die(args.checkpoint)
    out = _out_dir(args)
    guidance = _guidance_from_args(args)
    reports = []
    for policy in policies:
        if policy not in planner.POLICIES:
            raise CliError(EXIT_CONFIG, f"unknown policy {policy!r}")
        try:
            rep = planner.evaluate(
                policy, cfg, seeds=seeds, episodes=args.episodes,
                episode_frames=args.frames, artifacts=artifacts,
                guidance=guidance, replan_every=args.replan_every)
        except DomainError as e:
            raise CliError(EXIT_CONFIG, str(e)) from e
        reports.append(rep)
        print(rep.summary())
    payload = {"config": cfg.to_dict(), "policies": policies, "seeds": seeds,
               "episodes": args.episodes, "frames": args.frames,
               "zeta": args.zeta, "sampler": args.sampler, "k_sample": args.k_sample,
               "checkpoint": args.checkpoint, "replan_every": args.replan_every}
    chash = _hash_args(payload)
    path = out / f"eval_{chash}_{seeds[0]}.csv"
    path.write_text(planner.report_csv(reports))
    _write_manifest(out, "eval", payload, chash, seeds[0], [path.name])
    print(f"wrote {path}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _resolve_scenario(args)
    seeds = [int(s) for s in args.seeds.split(",")]
    values = [v.strip() for v in args.values.split(",")]
    if args.param not in ("zeta", "k_sample"):
        raise CliError(EXIT_CONFIG,
                       f"--param must be zeta or k_sample, got {args.param!r} "
                       "(sweep H or mean-field by retraining with `train`)")
    artifacts = _load_checkpoint_or_die(args.checkpoint)
    policy = "macdmp" if artifacts.config.use_mean_field else "macdmp_no_mf"
    out = _out_dir(args)
    reports = []
    for raw in values:
        if args.param == "zeta":
            guidance = GuidanceConfig(zeta=float(raw), K_sample=args.k_sample,
                                      sampler=args.sampler)
        else:
            guidance = GuidanceConfig(zeta=args.zeta, K_sample=int(raw), sampler="dpm1")
        rep = planner.evaluate(policy, cfg, seeds=seeds, episodes=args.episodes,
                               episode_frames=args.frames, artifacts=artifacts,
                               guidance=guidance, replan_every=args.replan_every)
        for row in rep.rows():
            row[args.param] = raw
        rep.policy = f"{policy}[{args.param}={raw}]"
        reports.append(rep)
        print(rep.summary())
    payload = {"config": cfg.to_dict(), "param": args.param, "values": values,
               "seeds": seeds, "frames": args.frames, "checkpoint": args.checkpoint}
    chash = _hash_args(payload)
    path = out / f"ablate_{chash}_{seeds[0]}.csv"
    path.write_text(planner.report_csv(reports))
    _write_manifest(out, "ablate", payload, chash, seeds[0], [path.name])
    print(f"wrote {path}")
    return EXIT_OK


def cmd_verify_theory(args) -> int:
    out = _out_dir(args)
    reports = []

    for d in (1, 2, 4):
        rng = np.random.default_rng(d)
        mean = rng.uniform(-1.0, 1.0, size=d)
        a = rng.standard_normal((d, d))
        cov = 0.5 * np.eye(d) + 0.1 * (a @ a.T)
        grid = np.linspace(2.4, 8.0, 20)
        reports.append(lemma2_check(GaussianDist(mean, cov), 1.0, grid))

    sde_pairs = [
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
    grid = np.linspace(0.2, 1.4, 7)
    for sde1, sde2 in sde_pairs:
        reports.append(lemma3_check(sde1, sde2, grid))

    reports.append(drift_gap_experiment("quadratic", seed=args.seed))
    reports.append(drift_gap_experiment("cubic", seed=args.seed))

    cfg = PerturbedReverseConfig(seed=args.seed)
    if args.quick:
        cfg = PerturbedReverseConfig(
            pairs=((0.0, 8.0), (0.1, 8.0)), n_paths=20_000, n_steps=2_000,
            seed=args.seed)
    reports.append(theorem1_check(cfg))

    payload = {"quick": args.quick, "seed": args.seed}
    chash = _hash_args(payload)
    all_ok = True
    outputs = []
    for i, rep in enumerate(reports):
        path = out / f"verify-theory_{chash}_{args.seed}_{i}_{rep.name}.csv"
        path.write_text(rep.to_csv())
        outputs.append(path.name)
        n_fail = sum(r.get("status") == "fail" for r in rep.rows)
        print(f"{rep.name}: {len(rep.rows)} rows, {n_fail} failures")
        all_ok = all_ok and rep.ok
    _write_manifest(out, "verify-theory", payload, chash, args.seed, outputs)
    if not all_ok:
        raise CliError(EXIT_ASSERTION, "one or more theory checks failed")
    print("all theory checks passed")
    return EXIT_OK


def cmd_rerun(args) -> int:
    manifest_path = _require_file(args.manifest, "manifest")
    manifest = json.loads(manifest_path.read_text())
    sub = manifest["subcommand"]
    stored = manifest["args"]
    argv = [sub]
    if sub == "simulate":
        cfgd = stored["config"]
        argv += ["--config", _materialize_config(manifest_path, cfgd),
                 "--seed", str(manifest["seed"]), "--frames", str(stored["frames"]),
                 "--policy", stored["policy"], "--H", str(stored["H"]),
                 "--gamma", str(stored["gamma"]),
                 "--out-dir", str(Path(args.out_dir or manifest_path.parent))]
    elif sub == "verify-theory":
        argv += ["--seed", str(manifest["seed"]),
                 "--out-dir", str(Path(args.out_dir or manifest_path.parent))]
        if stored.get("quick"):
            argv.append("--quick")
    else:
        raise CliError(EXIT_CONFIG,
                       f"rerun supports simulate and verify-theory manifests, got {sub!r}")
    return main(argv)


def _materialize_config(manifest_path: Path, cfg_dict: dict) -> str:
    from .scenario import ScenarioConfig, save_yaml
    cfg = ScenarioConfig(**cfg_dict)
    path = manifest_path.parent / f"rerun_{cfg.config_hash()}.yaml"
    save_yaml(cfg, path)
    return str(path)


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="macdmp",
        description="Diffusion-planned multi-agent RB allocation: simulate, "
                    "collect, train, evaluate, verify.")
    sub = ap.add_subparsers(dest="subcommand", required=True)

    def common(p, seed_required=True):
        p.add_argument("--seed", type=int, required=seed_required)
        p.add_argument("--out-dir", default="out")

    p = sub.add_parser("simulate", help="run a scripted-policy trace")
    p.add_argument("--config", required=True)
    p.add_argument("--frames", type=int, default=6000)
    p.add_argument("--policy", default="proportional")
    p.add_argument("--H", type=int, default=8)
    p.add_argument("--gamma", type=float, default=0.99)
    p.add_argument("--limited-rf", action="store_true")
    common(p)
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("collect", help="collect a mixed-policy offline dataset")
    p.add_argument("--config", required=True, help="comma-separated scenario names/paths")
    p.add_argument("--streams", type=int, default=10, help="streams per scenario")
    p.add_argument("--frames-per-stream", type=int, default=1500)
    p.add_argument("--H", type=int, default=8)
    p.add_argument("--gamma", type=float, default=0.99)
    p.add_argument("--limited-rf", action="store_true")
    common(p)
    p.set_defaults(fn=cmd_collect)

    p = sub.add_parser("train", help="offline training on a collected dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--lr", type=float, default=2e-4)
    p.add_argument("--K", type=int, default=100)
    p.add_argument("--H", type=int, default=None, help="default: dataset header")
    p.add_argument("--gamma", type=float, default=None, help="default: dataset header")
    p.add_argument("--schedule", default="cosine", choices=["cosine", "linear"])
    p.add_argument("--hidden", type=int, default=256)
    p.add_argument("--blocks", type=int, default=4)
    p.add_argument("--no-mean-field", action="store_true")
    p.add_argument("--verbose", action="store_true")
    common(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="QoS evaluation of one or more policies")
    p.add_argument("--config", required=True)
    p.add_argument("--policy", default="macdmp", help="comma-separated policy names")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--episodes", type=int, default=1)
    p.add_argument("--frames", type=int, default=1000)
    p.add_argument("--zeta", type=float, default=1.2)
    p.add_argument("--sampler", default="ancestral", choices=["ancestral", "dpm1"])
    p.add_argument("--k-sample", type=int, default=None)
    p.add_argument("--replan-every", type=int, default=1)
    p.add_argument("--limited-rf", action="store_true")
    common(p)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablate", help="sweep zeta or k_sample at eval time")
    p.add_argument("--config", required=True)
    p.add_argument("--param", required=True)
    p.add_argument("--values", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--episodes", type=int, default=1)
    p.add_argument("--frames", type=int, default=1000)
    p.add_argument("--zeta", type=float, default=1.2)
    p.add_argument("--sampler", default="ancestral", choices=["ancestral", "dpm1"])
    p.add_argument("--k-sample", type=int, default=None)
    p.add_argument("--replan-every", type=int, default=1)
    p.add_argument("--limited-rf", action="store_true")
    common(p)
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("verify-theory", help="run all bound checks, exit 0 iff green")
    p.add_argument("--quick", action="store_true", help="smaller generation check")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default="out")
    p.set_defaults(fn=cmd_verify_theory)

    p = sub.add_parser("rerun", help="repeat a run from its manifest")
    p.add_argument("manifest")
    p.add_argument("--out-dir", default=None)
    p.set_defaults(fn=cmd_rerun)

    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.fn(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code
    except (ConfigError, DomainError, TopologyError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (storage.VersionError, storage.SchemaError, storage.StorageError) as e:
        print(f"schema error: {e}", file=sys.stderr)
        return EXIT_SCHEMA


if __name__ == "__main__":
    sys.exit(main())
