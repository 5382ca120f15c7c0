"""Command-line interface.

Subcommands: make-scene, fit-prior, optimize, evaluate, noise-sweep,
check-gradients. Option precedence is CLI flags > JSON config file > defaults;
unknown config keys are rejected. Exit codes: 0 success, 2 configuration or
input error, 3 non-finite loss.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import gradcheck, sweep
from .errors import ConfigError, NonFiniteLoss, PhotomeshError
from .mesh import load_obj, save_obj
from .metrics import DepthErrorResult, depth_error, mesh_to_mesh_errors, reprojection_error
from .photometric import OptimConfig, optimize
from .prior import LinearShapePrior, ShapeState, fit_prior, make_shape_family
from .scenes import (NoiseSpec, OrbitRig, SceneBundle, TextureSpec, load_scene,
                     make_noise_panorama, make_sequence, perturb_state, save_scene)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_NONFINITE = 3

# keys accepted in a --config JSON file, per subcommand
CONFIG_KEYS = {
    "make-scene": {"prior", "seed", "azimuths", "elevations", "size", "radius",
                   "focal", "texture", "texture_scale", "out"},
    "fit-prior": {"family_size", "code_dim", "subdivisions", "seed", "meshes", "out"},
    "optimize": {"scene", "prior", "out", "iters", "lr", "lambda_code",
                 "lambda_scale", "sigma", "seed", "pairs", "init_state"},
    "evaluate": {"scene", "mesh", "gt_mesh", "points", "seed", "reproj_dists", "out"},
    "noise-sweep": {"prior", "sigmas", "runs_per_sigma", "azimuths", "elevations",
                    "size", "radius", "texture", "iters", "lr", "lambda_code",
                    "lambda_scale", "pairs", "seed", "threads", "out_dir",
                    "family_size", "code_dim", "subdivisions"},
    "check-gradients": {"cases", "seed"},
}


def _load_config(path: str | None, command: str) -> dict:
    if not path:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}")
    if not isinstance(cfg, dict):
        raise ConfigError("config file must hold a JSON object")
    unknown = set(cfg) - CONFIG_KEYS[command]
    if unknown:
        raise ConfigError(f"unknown config key(s) for {command}: {sorted(unknown)}")
    return cfg


def _opt(args, cfg: dict, key: str, default=None):
    """CLI flag > config file > default."""
    val = getattr(args, key.replace("-", "_"), None)
    if val is not None:
        return val
    if key in cfg and cfg[key] is not None:
        return cfg[key]
    return default


def _parse_floats(text) -> tuple[float, ...]:
    if isinstance(text, (list, tuple)):
        return tuple(float(x) for x in text)
    return tuple(float(x) for x in str(text).split(","))


def _parse_ints(text) -> tuple[int, ...]:
    if isinstance(text, (list, tuple)):
        return tuple(int(x) for x in text)
    return tuple(int(x) for x in str(text).split(","))


def _threads(args, cfg) -> int:
    val = _opt(args, cfg, "threads")
    if val is None:
        val = os.environ.get("PHOTOMESH_THREADS", "1")
    try:
        n = int(val)
    except ValueError:
        raise ConfigError(f"invalid thread count {val!r}")
    if n < 1:
        raise ConfigError("thread count must be >= 1")
    return n


def _optim_config(args, cfg, seed: int) -> OptimConfig:
    pairs = _opt(args, cfg, "pairs", 8)
    if str(pairs) == "all":
        policy, per_iter = "all", 8
    else:
        policy, per_iter = "random", int(pairs)
    return OptimConfig(
        learning_rate=float(_opt(args, cfg, "lr", 0.003)),
        iterations=int(_opt(args, cfg, "iters", 100)),
        lambda_code=float(_opt(args, cfg, "lambda_code", 0.05)),
        lambda_scale=float(_opt(args, cfg, "lambda_scale", 0.02)),
        pairs_per_iteration=per_iter,
        pair_policy=policy,
        seed=seed,
    )


def cmd_make_scene(args) -> int:
    cfg = _load_config(args.config, "make-scene")
    prior_path = _opt(args, cfg, "prior")
    if not prior_path or not Path(prior_path).exists():
        raise ConfigError("make-scene requires an existing --prior file")
    prior = LinearShapePrior.load(prior_path)
    seed = int(_opt(args, cfg, "seed", 0))
    size = int(_opt(args, cfg, "size", 224))
    rig = OrbitRig(
        azimuths=int(_opt(args, cfg, "azimuths", 24)),
        elevations=_parse_floats(_opt(args, cfg, "elevations", "-10,0,20")),
        radius=float(_opt(args, cfg, "radius", 2.5)),
        width=size,
        height=size,
        focal=None if _opt(args, cfg, "focal") is None else float(_opt(args, cfg, "focal")),
    )
    texture = TextureSpec(kind=str(_opt(args, cfg, "texture", "checker")),
                          scale=float(_opt(args, cfg, "texture_scale", 4.0)))
    out = _opt(args, cfg, "out")
    if not out:
        raise ConfigError("make-scene requires --out")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC0DE]))
    code = prior.code_std() * rng.standard_normal(prior.n_code)
    pano = make_noise_panorama(seed=seed)
    frames, gt_mesh, gt_state = make_sequence(prior, code, rig, pano, texture, seed=seed)
    meta = {"rig": rig.to_dict(), "texture": texture.to_dict(), "seed": seed,
            "prior": str(prior_path)}
    save_scene(SceneBundle(frames, gt_mesh, gt_state, meta), out)
    print(f"wrote {len(frames)} frames to {out}")
    return EXIT_OK


def cmd_fit_prior(args) -> int:
    cfg = _load_config(args.config, "fit-prior")
    out = _opt(args, cfg, "out")
    if not out:
        raise ConfigError("fit-prior requires --out")
    mesh_dir = _opt(args, cfg, "meshes")
    k = int(_opt(args, cfg, "code_dim", 16))
    if mesh_dir:
        paths = sorted(Path(mesh_dir).glob("*.obj"))
        if not paths:
            raise ConfigError(f"no .obj files in {mesh_dir}")
        meshes = [load_obj(p) for p in paths]
    else:
        meshes = make_shape_family(
            int(_opt(args, cfg, "family_size", 48)),
            seed=int(_opt(args, cfg, "seed", 0)),
            subdivisions=int(_opt(args, cfg, "subdivisions", 3)),
        )
    prior = fit_prior(meshes, n_components=k)
    prior.save(out)
    print(f"fit prior: {prior.n_vertices} vertices, K={prior.n_code}, "
          f"{len(meshes)} training meshes -> {out}")
    return EXIT_OK


def cmd_optimize(args) -> int:
    cfg = _load_config(args.config, "optimize")
    scene_dir = _opt(args, cfg, "scene")
    prior_path = _opt(args, cfg, "prior")
    out = _opt(args, cfg, "out")
    if not scene_dir or not Path(scene_dir).exists():
        raise ConfigError("optimize requires an existing --scene directory")
    if not prior_path or not Path(prior_path).exists():
        raise ConfigError("optimize requires an existing --prior file")
    if not out:
        raise ConfigError("optimize requires --out")
    try:
        bundle = load_scene(scene_dir)
    except FileNotFoundError as exc:
        raise ConfigError(str(exc))
    prior = LinearShapePrior.load(prior_path)
    seed = int(_opt(args, cfg, "seed", 0))

    init_path = _opt(args, cfg, "init_state")
    if init_path:
        with open(init_path) as fh:
            init = ShapeState.from_dict(json.load(fh))
    else:
        sigma = float(_opt(args, cfg, "sigma", 0.0))
        init = perturb_state(bundle.gt_state, NoiseSpec(sigma=sigma, seed=seed))

    config = _optim_config(args, cfg, seed)
    final, trace = optimize(prior, bundle.frames, init, z0=init.code, config=config)

    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_obj(prior.generate(final), out_dir / "out_mesh.obj")
    with open(out_dir / "out_state.json", "w") as fh:
        json.dump(final.to_dict(), fh, indent=1)
    with open(out_dir / "trace.jsonl", "w") as fh:
        for k, report in enumerate(trace):
            fh.write(json.dumps({"iteration": k, **report.to_dict()}) + "\n")
    print(f"optimized {config.iterations} iteration(s) -> {out_dir}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _load_config(args.config, "evaluate")
    scene_dir = _opt(args, cfg, "scene")
    if not scene_dir or not Path(scene_dir).exists():
        raise ConfigError("evaluate requires an existing --scene directory")
    try:
        bundle = load_scene(scene_dir)
    except FileNotFoundError as exc:
        raise ConfigError(str(exc))
    mesh_path = _opt(args, cfg, "mesh")
    if not mesh_path or not Path(mesh_path).exists():
        raise ConfigError("evaluate requires an existing --mesh file")
    pred = load_obj(mesh_path)
    gt_path = _opt(args, cfg, "gt_mesh")
    gt = load_obj(gt_path) if gt_path else bundle.gt_mesh
    n = int(_opt(args, cfg, "points", 10000))
    seed = int(_opt(args, cfg, "seed", 0))
    dists = _parse_ints(_opt(args, cfg, "reproj_dists", "1,2,4"))

    metrics = mesh_to_mesh_errors(pred, gt, n=n, seed=seed)
    metrics["reproj"] = {
        str(d): reprojection_error(gt, pred, bundle.frames.cameras, d,
                                   max_samples_per_pair=400, seed=seed)
        for d in dists
    }
    result: DepthErrorResult = depth_error(pred, gt, bundle.frames.cameras)
    metrics["depth_error"] = result.mean
    out = _opt(args, cfg, "out")
    text = json.dumps(metrics, indent=1)
    if out:
        Path(out).write_text(text)
    print(text)
    return EXIT_OK


def cmd_noise_sweep(args) -> int:
    cfg = _load_config(args.config, "noise-sweep")
    out_dir = Path(_opt(args, cfg, "out_dir", "sweep_out"))
    out_dir.mkdir(parents=True, exist_ok=True)
    prior_path = _opt(args, cfg, "prior")
    if prior_path:
        prior = LinearShapePrior.load(prior_path)
    else:
        prior = fit_prior(
            make_shape_family(int(_opt(args, cfg, "family_size", 48)),
                              seed=int(_opt(args, cfg, "seed", 0)),
                              subdivisions=int(_opt(args, cfg, "subdivisions", 3))),
            n_components=int(_opt(args, cfg, "code_dim", 16)),
        )
    size = int(_opt(args, cfg, "size", 128))
    rig = OrbitRig(
        azimuths=int(_opt(args, cfg, "azimuths", 24)),
        elevations=_parse_floats(_opt(args, cfg, "elevations", "0")),
        radius=float(_opt(args, cfg, "radius", 2.5)),
        width=size,
        height=size,
    )
    seed = int(_opt(args, cfg, "seed", 0))
    sweep_cfg = sweep.SweepConfig(
        sigmas=_parse_floats(_opt(args, cfg, "sigmas", "0.03,0.06,0.12")),
        runs_per_sigma=int(_opt(args, cfg, "runs_per_sigma", 10)),
        rig=rig,
        texture=TextureSpec(kind=str(_opt(args, cfg, "texture", "checker"))),
        optim=_optim_config(args, cfg, seed),
        base_seed=seed,
    )
    runs = sweep.run_sweep(prior, sweep_cfg, workers=_threads(args, cfg))
    sweep.write_csv(runs, out_dir / "sweep.csv")
    sweep.write_summary(runs, out_dir / "summary.json")
    print(json.dumps(sweep.summarize(runs), indent=1))
    failures = [r for r in runs if r.error]
    print(f"{len(runs) - len(failures)}/{len(runs)} runs succeeded -> {out_dir}")
    return EXIT_OK


def cmd_check_gradients(args) -> int:
    cfg = _load_config(args.config, "check-gradients")
    results = gradcheck.run_all(cases=int(_opt(args, cfg, "cases", 1000)),
                                seed=int(_opt(args, cfg, "seed", 0)))
    print(gradcheck.format_table(results))
    return EXIT_OK if all(r.passed for r in results) else EXIT_ERROR


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="photomesh",
        description="Multi-view photometric mesh alignment over a shape prior.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, flags):
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file (flags override it)")
        for flag, kwargs in flags.items():
            p.add_argument(flag, **kwargs)
        p.set_defaults(fn=fn)
        return p

    add("make-scene", cmd_make_scene, {
        "--prior": {}, "--seed": {"type": int}, "--azimuths": {"type": int},
        "--elevations": {}, "--size": {"type": int}, "--radius": {"type": float},
        "--focal": {"type": float}, "--texture": {}, "--texture-scale": {"type": float},
        "--out": {},
    })
    add("fit-prior", cmd_fit_prior, {
        "--family-size": {"type": int}, "--code-dim": {"type": int},
        "--subdivisions": {"type": int}, "--seed": {"type": int},
        "--meshes": {"help": "directory of same-topology .obj files"}, "--out": {},
    })
    add("optimize", cmd_optimize, {
        "--scene": {}, "--prior": {}, "--out": {}, "--iters": {"type": int},
        "--lr": {"type": float}, "--lambda-code": {"type": float},
        "--lambda-scale": {"type": float}, "--sigma": {"type": float},
        "--seed": {"type": int}, "--pairs": {}, "--init-state": {},
    })
    add("evaluate", cmd_evaluate, {
        "--scene": {}, "--mesh": {}, "--gt-mesh": {}, "--points": {"type": int},
        "--seed": {"type": int}, "--reproj-dists": {}, "--out": {},
    })
    add("noise-sweep", cmd_noise_sweep, {
        "--prior": {}, "--sigmas": {}, "--runs-per-sigma": {"type": int},
        "--azimuths": {"type": int}, "--elevations": {}, "--size": {"type": int},
        "--radius": {"type": float}, "--texture": {}, "--iters": {"type": int},
        "--lr": {"type": float}, "--lambda-code": {"type": float},
        "--lambda-scale": {"type": float}, "--pairs": {}, "--seed": {"type": int},
        "--threads": {"type": int}, "--out-dir": {}, "--family-size": {"type": int},
        "--code-dim": {"type": int}, "--subdivisions": {"type": int},
    })
    add("check-gradients", cmd_check_gradients, {
        "--cases": {"type": int}, "--seed": {"type": int},
    })
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonFiniteLoss as exc:
        print(f"optimization aborted: {exc}", file=sys.stderr)
        return EXIT_NONFINITE
    except PhotomeshError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
