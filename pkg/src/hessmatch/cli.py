"""Command-line pipeline: gen-data, precompute, train, simulate, evaluate, verify.

Each command reads a manifest (or, for gen-data, a config), checks the hashes
of every file the manifest records, writes its outputs next to the manifest
(or under ``--out``) and records them back into the manifest.

Exit codes: 0 success, 1 invalid input, 2 numerical failure.
"""

import argparse
import logging
import os
import sys
import time

import numpy as np

from . import analysis, config as cfgmod, errors
from .aa_system import sample_boltzmann
from .cg_model import load_checkpoint, save_checkpoint
from .dynamics import simulate
from .io import Manifest, read_frames, trajectory_frames, write_frames
from .numerics import Rng
from .targets import atomic_write, precompute_term1, read_target_store, write_target_store
from .training import VARIANTS, cg_training_set, train, write_history

log = logging.getLogger("hessmatch")

NUMERICAL = (
    errors.NonFiniteLoss,
    errors.NonFiniteState,
    errors.StepTooLarge,
    errors.NotPositiveDefinite,
    errors.NoConvergence,
    errors.DivergentGeometry,
    errors.SingularGeometry,
)


def _slug(variant):
    return variant.lower().replace("+", "_")


def _config_of(manifest):
    return cfgmod.Config(manifest.parser, manifest.path)


def _out_dir(args, manifest):
    out = args.out or manifest.root
    os.makedirs(out, exist_ok=True)
    return out


def _system(cfg):
    ff = cfgmod.build_forcefield(cfg)
    cg_map = cfgmod.build_map(cfg, ff.n, ff.dim)
    return ff, cg_map


def cmd_gen_data(args):
    if not args.config:
        raise errors.ConfigError("gen-data needs --config")
    cfg = cfgmod.Config.read(args.config)
    ff, cg_map = _system(cfg)
    beta = cfg.get("system", "beta", 1.0, float)
    seed = args.seed if args.seed is not None else cfg.get("sampling", "seed", 0, int)
    initial = cfg.get("sampling", "initial", None, cfgmod._vector)
    frames = sample_boltzmann(
        ff,
        beta,
        cfg.require("sampling", "frames", int),
        dt=cfg.get("sampling", "dt", 1e-3, float),
        friction=cfg.get("sampling", "friction", 1.0, float),
        rng=Rng(seed),
        thinning=cfg.get("sampling", "thinning", 10, int),
        chains=cfg.get("sampling", "chains", 1, int),
        initial=initial,
        burn_in=cfg.get("sampling", "burn_in", None, int),
    )
    out = args.out or os.path.dirname(os.path.abspath(args.config))
    os.makedirs(out, exist_ok=True)
    manifest = Manifest.create(os.path.join(out, "manifest.ini"), cfg)
    path = os.path.join(out, "frames.txt")
    write_frames(path, frames)
    manifest.record("frames", path)
    manifest.save()
    log.info("wrote %d frames to %s", len(frames), path)
    print(manifest.path)


def cmd_precompute(args):
    manifest = Manifest.load(args.manifest)
    cfg = _config_of(manifest)
    ff, cg_map = _system(cfg)
    frames = read_frames(manifest.file("frames"))
    seed = args.seed if args.seed is not None else cfg.get("targets", "seed", 0, int)
    K = cfg.get("targets", "K", 8, int)
    eps = cfg.get("targets", "epsilon", 1e-5, float)
    scale = cfg.get("targets", "unit_scale", 1.0, float)
    start = time.perf_counter()
    records = []
    chunk = 256
    for lo in range(0, len(frames), chunk):
        sub = type(frames)(frames.positions[lo:lo + chunk], frames.n, frames.dim,
                           frame_index=frames.frame_index[lo:lo + chunk],
                           forces=frames.forces[lo:lo + chunk])
        records.extend(precompute_term1(sub, ff, cg_map, seed, K, eps, scale))
        log.info("term 1: %d/%d frames", len(records), len(frames))
    path = os.path.join(_out_dir(args, manifest), "targets.txt")
    write_target_store(path, records, seed)
    manifest.record("targets", path)
    manifest.save()
    log.info("precomputed %d records in %.2f s", len(records), time.perf_counter() - start)
    print(path)


def cmd_train(args):
    manifest = Manifest.load(args.manifest)
    cfg = _config_of(manifest)
    ff, cg_map = _system(cfg)
    variant = args.variant or "FM+AAp"
    tcfg = cfgmod.train_config(cfg, variant, args.seed)
    data = cg_training_set(read_frames(manifest.file("frames")), cg_map)
    records = None
    if tcfg.weights.w_hvp > 0:
        records, _ = read_target_store(manifest.file("targets"))
    model = cfgmod.build_model(cfg, data.n, data.dim)
    model, history = train(data, records, model, tcfg)
    out = _out_dir(args, manifest)
    ck = os.path.join(out, f"model_{_slug(variant)}.txt")
    hist = os.path.join(out, f"history_{_slug(variant)}.csv")
    save_checkpoint(ck, model)
    write_history(hist, history)
    manifest.record(f"model_{_slug(variant)}", ck)
    manifest.record(f"history_{_slug(variant)}", hist)
    manifest.save()
    print(ck)


def cmd_simulate(args):
    manifest = Manifest.load(args.manifest)
    cfg = _config_of(manifest)
    ff, cg_map = _system(cfg)
    variant = args.variant or "FM+AAp"
    model = load_checkpoint(manifest.file(f"model_{_slug(variant)}"))
    data = cg_training_set(read_frames(manifest.file("frames")), cg_map)
    replicas = args.replicas if args.replicas is not None else cfg.get("simulate", "replicas", 20, int)
    scfg = cfgmod.sim_config(cfg, args.seed, initial=data.positions[0])
    try:
        trajs = simulate(model, scfg, replicas)
    except errors.NonFiniteState as exc:
        log.error("replica %s diverged; last states:\n%s", exc.replica, exc.last_states)
        raise
    out = _out_dir(args, manifest)
    for r, traj in enumerate(trajs):
        path = os.path.join(out, f"traj_{_slug(variant)}_{r:03d}.txt")
        write_frames(path, trajectory_frames(traj, data.n, data.dim))
        manifest.record(f"traj_{_slug(variant)}_{r:03d}", path)
    manifest.save()
    print(f"{replicas} trajectories in {out}")


def cmd_evaluate(args):
    manifest = Manifest.load(args.manifest)
    cfg = _config_of(manifest)
    ff, cg_map = _system(cfg)
    variant = args.variant or "FM+AAp"
    if args.reference:
        reference = [read_frames(p).positions for p in args.reference]
        dim = read_frames(args.reference[0]).dim
    else:
        data = cg_training_set(read_frames(manifest.file("frames")), cg_map)
        reference, dim = [data.positions], data.dim
    if args.model:
        model_trajs = [read_frames(p).positions for p in args.model]
    else:
        keys = sorted(k for k in manifest.parser["files"] if k.startswith(f"traj_{_slug(variant)}_"))
        if not keys:
            raise errors.StoreMismatch(f"no trajectories for variant {variant}; run simulate first")
        model_trajs = [read_frames(manifest.file(k)).positions for k in keys]
    rows, dens = analysis.compare_trajectories(
        reference,
        model_trajs,
        dim,
        lag=cfg.get("evaluate", "lag", 10, int),
        bins=cfg.get("evaluate", "bins", 50, int),
        directions=cfg.get("evaluate", "directions", 64, int),
        seed=cfg.get("evaluate", "seed", 0, int),
    )
    out = _out_dir(args, manifest)
    rpath = os.path.join(out, f"report_{_slug(variant)}.csv")
    dpath = os.path.join(out, f"densities_{_slug(variant)}.csv")
    atomic_write(rpath, analysis.format_report(rows))
    atomic_write(dpath, analysis.format_densities(dens))
    manifest.record(f"report_{_slug(variant)}", rpath)
    manifest.record(f"densities_{_slug(variant)}", dpath)
    manifest.save()
    sys.stdout.write(analysis.format_report(rows))


def cmd_verify(args):
    from .verify import run_suite

    results = run_suite(fault=args.inject_fault, quick=args.quick)
    width = max(len(r.name) for r in results)
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status}  {r.name:<{width}}  {r.detail}")
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return 0 if failed == 0 else 1


COMMANDS = {
    "gen-data": cmd_gen_data,
    "precompute": cmd_precompute,
    "train": cmd_train,
    "simulate": cmd_simulate,
    "evaluate": cmd_evaluate,
    "verify": cmd_verify,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="hessmatch", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config")
        p.add_argument("--manifest")
        p.add_argument("--variant", choices=sorted(VARIANTS))
        p.add_argument("--seed", type=int)
        p.add_argument("--replicas", type=int)
        p.add_argument("--out")
        if name == "evaluate":
            p.add_argument("--reference", nargs="+", help="CG frame stores of the reference")
            p.add_argument("--model", nargs="+", help="CG frame stores of model trajectories")
        if name == "verify":
            p.add_argument("--inject-fault", choices=["term2-sign"], help=argparse.SUPPRESS)
            p.add_argument("--quick", action="store_true", help="smaller sample counts")
        if name in ("precompute", "train", "simulate", "evaluate"):
            p.set_defaults(needs_manifest=True)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(message)s",
    )
    if getattr(args, "needs_manifest", False) and not args.manifest:
        print(f"error: {args.command} needs --manifest", file=sys.stderr)
        return 1
    try:
        code = COMMANDS[args.command](args)
    except NUMERICAL as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except (errors.HessmatchError, ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return code or 0


if __name__ == "__main__":
    sys.exit(main())
