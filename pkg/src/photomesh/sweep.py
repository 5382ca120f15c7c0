"""Noise-sweep experiment: perturb the ground-truth similarity transform at
several noise levels, optimize each run, and aggregate 3D errors.

Runs are independent and execute in a process pool; each run is internally
serial and fully seeded, so results do not depend on the pool size.
"""

from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .metrics import mesh_to_mesh_errors, reprojection_error
from .photometric import OptimConfig, optimize
from .prior import LinearShapePrior
from .scenes import (NoiseSpec, OrbitRig, TextureSpec, make_noise_panorama,
                     make_sequence, perturb_state)


@dataclass(frozen=True)
class SweepRun:
    sigma: float
    seed: int
    eta_before: float
    eta_after: float
    eta_before_cov: float
    eta_after_cov: float
    final_scale: float
    reproj_before: dict = field(default_factory=dict)  # {d: px}
    reproj_after: dict = field(default_factory=dict)
    error: str | None = None


@dataclass(frozen=True)
class SweepConfig:
    sigmas: tuple[float, ...] = (0.03, 0.06, 0.12)
    runs_per_sigma: int = 10
    rig: OrbitRig = OrbitRig(azimuths=24, elevations=(0.0,), width=128, height=128)
    texture: TextureSpec = TextureSpec(kind="checker")
    optim: OptimConfig = OptimConfig()
    eval_points: int = 10000
    reproj_distances: tuple[int, ...] = ()
    reproj_max_samples: int = 400
    base_seed: int = 0


def _draw_code(prior: LinearShapePrior, seed: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC0DE]))
    return prior.code_std() * rng.standard_normal(prior.n_code)


def build_scene(prior: LinearShapePrior, cfg: SweepConfig, seed: int):
    """Scene for one seed: shape code, panorama, and renders all derive from it."""
    pano = make_noise_panorama(seed=seed)
    code = _draw_code(prior, seed)
    return make_sequence(prior, code, cfg.rig, pano, cfg.texture, seed=seed)


def run_single(prior: LinearShapePrior, cfg: SweepConfig, sigma: float,
               seed: int) -> SweepRun:
    frames, gt_mesh, gt_state = build_scene(prior, cfg, seed)
    init = perturb_state(gt_state, NoiseSpec(sigma=sigma, seed=seed))
    init_mesh = prior.generate(init)
    before = mesh_to_mesh_errors(init_mesh, gt_mesh, cfg.eval_points, seed=seed)

    optim_cfg = OptimConfig(
        learning_rate=cfg.optim.learning_rate,
        iterations=cfg.optim.iterations,
        lambda_code=cfg.optim.lambda_code,
        lambda_scale=cfg.optim.lambda_scale,
        pairs_per_iteration=cfg.optim.pairs_per_iteration,
        pair_policy=cfg.optim.pair_policy,
        seed=seed,
    )
    final, _ = optimize(prior, frames, init, z0=init.code, config=optim_cfg)
    final_mesh = prior.generate(final)
    after = mesh_to_mesh_errors(final_mesh, gt_mesh, cfg.eval_points, seed=seed)

    reproj_b: dict = {}
    reproj_a: dict = {}
    for d in cfg.reproj_distances:
        reproj_b[d] = reprojection_error(gt_mesh, init_mesh, frames.cameras, d,
                                         max_samples_per_pair=cfg.reproj_max_samples,
                                         seed=seed)
        reproj_a[d] = reprojection_error(gt_mesh, final_mesh, frames.cameras, d,
                                         max_samples_per_pair=cfg.reproj_max_samples,
                                         seed=seed)
    return SweepRun(
        sigma=sigma,
        seed=seed,
        eta_before=before["eta_pred_to_gt"],
        eta_after=after["eta_pred_to_gt"],
        eta_before_cov=before["eta_gt_to_pred"],
        eta_after_cov=after["eta_gt_to_pred"],
        final_scale=final.transform.scale,
        reproj_before=reproj_b,
        reproj_after=reproj_a,
    )


def _safe_run(args) -> SweepRun:
    prior, cfg, sigma, seed = args
    try:
        return run_single(prior, cfg, sigma, seed)
    except Exception as exc:  # per-run failures are reported, the sweep continues
        return SweepRun(sigma, seed, float("nan"), float("nan"), float("nan"),
                        float("nan"), float("nan"), error=f"{type(exc).__name__}: {exc}")


def run_sweep(prior: LinearShapePrior, cfg: SweepConfig, workers: int = 1) -> list[SweepRun]:
    jobs = [(prior, cfg, sigma, cfg.base_seed + k)
            for sigma in cfg.sigmas for k in range(cfg.runs_per_sigma)]
    if workers <= 1:
        return [_safe_run(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_safe_run, jobs))


def summarize(runs: list[SweepRun]) -> dict:
    """Mean and stddev of before/after errors per noise level."""
    out: dict = {"sigmas": [], "failures": []}
    for r in runs:
        if r.error:
            out["failures"].append({"sigma": r.sigma, "seed": r.seed, "error": r.error})
    for sigma in sorted({r.sigma for r in runs}):
        good = [r for r in runs if r.sigma == sigma and not r.error]
        if not good:
            out["sigmas"].append({"sigma": sigma, "n": 0})
            continue
        eb = np.array([r.eta_before for r in good])
        ea = np.array([r.eta_after for r in good])
        out["sigmas"].append({
            "sigma": sigma,
            "n": len(good),
            "eta_before_mean": float(eb.mean()),
            "eta_before_std": float(eb.std()),
            "eta_after_mean": float(ea.mean()),
            "eta_after_std": float(ea.std()),
            "reduction": float(1.0 - ea.mean() / eb.mean()) if eb.mean() > 0 else 0.0,
        })
    return out


def write_csv(runs: list[SweepRun], path: str | os.PathLike) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sigma", "seed", "eta_before", "eta_after",
                         "eta_before_cov", "eta_after_cov", "final_scale", "error"])
        for r in runs:
            writer.writerow([r.sigma, r.seed, r.eta_before, r.eta_after,
                             r.eta_before_cov, r.eta_after_cov, r.final_scale,
                             r.error or ""])


def write_summary(runs: list[SweepRun], path: str | os.PathLike) -> None:
    with open(path, "w") as fh:
        json.dump(summarize(runs), fh, indent=1)
