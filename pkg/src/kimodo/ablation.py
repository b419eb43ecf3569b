"""Ablation and scaling harness.

Trains the named model/recipe variants under identical seeds and budgets,
evaluates each on the same constrained test suite, and emits a comparison
table (JSON + markdown). Variants:

  full                 two-stage model, smoothed root, curriculum
  one_stage            single encoder at a matched parameter count
  second_stage_global  body stage reads the global root prediction
  no_smoothed_root     raw pelvis root track in the representation
  no_extra_tokens      P = 0
  no_curriculum        single mixed phase for the combined step budget

The scaling sweep varies data fraction (10/50/100%), model size (S/M/L) and
batch size (1x/2x) one axis at a time.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, replace

import numpy as np
import torch

from .denoiser import DenoiserConfig, MotionDenoiser, matched_one_stage_config
from .diffusion import NoiseSchedule
from .evaluation import build_constraint_test_suite, run_suite
from .motion_repr import CodecConfig, NormalizationStats, encode, fit_normalization
from .skeleton import Skeleton
from .synthetic import DatasetSampler, MotionClip
from .training import ModelBundle, TrainingConfig, load_model_bundle, run_training

ABLATION_VARIANTS = (
    "full",
    "one_stage",
    "second_stage_global",
    "no_smoothed_root",
    "no_extra_tokens",
    "no_curriculum",
)


def variant_configs(
    name: str,
    denoiser: DenoiserConfig,
    training: TrainingConfig,
    codec: CodecConfig,
) -> tuple[DenoiserConfig, TrainingConfig, CodecConfig]:
    if name == "full":
        return denoiser, training, codec
    if name == "one_stage":
        return matched_one_stage_config(denoiser), training, codec
    if name == "second_stage_global":
        return (
            DenoiserConfig(**{**denoiser.to_dict(), "variant": "second_stage_global"}),
            training,
            codec,
        )
    if name == "no_smoothed_root":
        return denoiser, training, replace(codec, smoothing_sigma_s=0.0)
    if name == "no_extra_tokens":
        return DenoiserConfig(**{**denoiser.to_dict(), "extra_tokens": 0}), training, codec
    if name == "no_curriculum":
        no_cur = TrainingConfig.from_dict(
            {**training.to_dict(), "curriculum": False, "dropout_phase1": 0.0}
        )
        return denoiser, no_cur, codec
    raise ValueError(f"unknown variant {name!r}")


def train_variant(
    name: str,
    clips: list[MotionClip],
    skeleton: Skeleton,
    denoiser: DenoiserConfig,
    training: TrainingConfig,
    codec: CodecConfig,
    out_dir: str,
    seed: int,
    sampler_kwargs: dict | None = None,
) -> str:
    """Train one variant to completion; returns the checkpoint path.

    The checkpoint is cached: an existing final checkpoint is returned as-is.
    """
    d_cfg, t_cfg, c_cfg = variant_configs(name, denoiser, training, codec)
    t_cfg = TrainingConfig.from_dict({**t_cfg.to_dict(), "seed": seed})
    final = os.path.join(out_dir, "checkpoint_final.pt")
    if os.path.exists(final):
        return final
    os.makedirs(out_dir, exist_ok=True)
    sampler = DatasetSampler(
        clips, skeleton, codec_config=c_cfg, seed=seed, **(sampler_kwargs or {})
    )
    stats = fit_normalization(
        [encode(c.raw, skeleton, c_cfg, standardize_first=True) for c in sampler.clips]
    )
    torch.manual_seed(seed)
    model = MotionDenoiser(d_cfg)
    return run_training(
        model, sampler, stats, skeleton, d_cfg, t_cfg, out_dir, codec_config=c_cfg
    )


def evaluate_checkpoint(
    checkpoint: str,
    test_clips: list[MotionClip],
    skeleton: Skeleton,
    suite_seed: int = 0,
    steps: int = 50,
    cases_per_cell: int = 1,
    lengths_s=(3, 4),
) -> dict:
    bundle = load_model_bundle(checkpoint)
    rng = np.random.default_rng(suite_seed)
    cases = build_constraint_test_suite(
        test_clips,
        skeleton,
        rng,
        codec_config=bundle.codec_config,
        lengths_s=lengths_s,
        cases_per_cell=cases_per_cell,
    )
    report = run_suite(bundle, cases, steps=steps, seed=suite_seed)
    out = report.to_dict()
    out.pop("per_case")
    return out


def run_ablation_harness(
    clips: list[MotionClip],
    test_clips: list[MotionClip],
    skeleton: Skeleton,
    denoiser: DenoiserConfig,
    training: TrainingConfig,
    codec: CodecConfig,
    out_dir: str,
    seeds=(0,),
    variants=ABLATION_VARIANTS,
    include_scaling: bool = False,
    eval_kwargs: dict | None = None,
    log_fn=print,
) -> dict:
    """Train + evaluate every variant (and optionally the scaling sweep)."""
    os.makedirs(out_dir, exist_ok=True)
    eval_kwargs = eval_kwargs or {}
    table: dict[str, list] = {}
    for name in variants:
        rows = []
        for seed in seeds:
            run_dir = os.path.join(out_dir, f"{name}-seed{seed}")
            log_fn(f"[ablation] training {name} seed {seed}")
            ckpt = train_variant(
                name, clips, skeleton, denoiser, training, codec, run_dir, seed
            )
            metrics = evaluate_checkpoint(ckpt, test_clips, skeleton, **eval_kwargs)
            metrics["seed"] = seed
            rows.append(metrics)
        table[name] = rows

    scaling = {}
    if include_scaling:
        scaling = run_scaling_sweep(
            clips, test_clips, skeleton, denoiser, training, codec,
            os.path.join(out_dir, "scaling"), eval_kwargs=eval_kwargs, log_fn=log_fn,
        )

    report = {"variants": table, "scaling": scaling}
    with open(os.path.join(out_dir, "ablation_report.json"), "w") as f:
        json.dump(report, f, indent=1)
    with open(os.path.join(out_dir, "ablation_report.md"), "w") as f:
        f.write(render_markdown(report))
    return report


def subsample_families(clips: list[MotionClip], fraction: float, seed: int = 0) -> list[MotionClip]:
    """Keep every family but reduce the number of performances per family."""
    rng = np.random.default_rng(seed)
    by_family: dict[str, list[MotionClip]] = {}
    for clip in clips:
        by_family.setdefault(clip.family, []).append(clip)
    out = []
    for family, members in by_family.items():
        keep = max(1, int(round(len(members) * fraction)))
        idx = rng.choice(len(members), size=keep, replace=False)
        out.extend(members[i] for i in sorted(idx))
    return out


def run_scaling_sweep(
    clips,
    test_clips,
    skeleton,
    denoiser: DenoiserConfig,
    training: TrainingConfig,
    codec: CodecConfig,
    out_dir: str,
    eval_kwargs: dict | None = None,
    log_fn=print,
) -> dict:
    """Miniature scaling analysis: data 10/50/100%, model S/M/L, batch 1x/2x."""
    os.makedirs(out_dir, exist_ok=True)
    eval_kwargs = eval_kwargs or {}
    results = {"data": {}, "model": {}, "batch": {}}

    for fraction in (0.1, 0.5, 1.0):
        subset = subsample_families(clips, fraction)
        run_dir = os.path.join(out_dir, f"data-{int(fraction * 100)}")
        log_fn(f"[scaling] data fraction {fraction}")
        ckpt = train_variant(
            "full", subset, skeleton, denoiser, training, codec, run_dir,
            seed=training.seed, sampler_kwargs={"mixture": (0.5, 0.35, 0.0, 0.15)},
        )
        results["data"][f"{int(fraction * 100)}%"] = evaluate_checkpoint(
            ckpt, test_clips, skeleton, **eval_kwargs
        )

    sizes = {
        "S": {"latent_dim": max(denoiser.n_heads * 8, denoiser.latent_dim // 2)},
        "M": {"n_layers": max(1, denoiser.n_layers // 2)},
        "L": {},
    }
    for label, tweak in sizes.items():
        cfg = DenoiserConfig(**{**denoiser.to_dict(), **tweak})
        run_dir = os.path.join(out_dir, f"model-{label}")
        log_fn(f"[scaling] model {label}")
        ckpt = train_variant(
            "full", clips, skeleton, cfg, training, codec, run_dir, seed=training.seed
        )
        results["model"][label] = evaluate_checkpoint(ckpt, test_clips, skeleton, **eval_kwargs)
        results["model"][label]["params"] = MotionDenoiser(cfg).parameter_count()

    for label, factor in (("1x", 1), ("2x", 2)):
        t_cfg = TrainingConfig.from_dict(
            {**training.to_dict(), "batch_size": training.batch_size * factor}
        )
        run_dir = os.path.join(out_dir, f"batch-{label}")
        log_fn(f"[scaling] batch {label}")
        ckpt = train_variant(
            "full", clips, skeleton, denoiser, t_cfg, codec, run_dir, seed=training.seed
        )
        results["batch"][label] = evaluate_checkpoint(ckpt, test_clips, skeleton, **eval_kwargs)

    with open(os.path.join(out_dir, "scaling_report.json"), "w") as f:
        json.dump(results, f, indent=1)
    return results


_COLUMNS = (
    ("foot_skate_cm_s", "Skate (cm/s)"),
    ("contact_accuracy", "Contact"),
    ("full_body_pos_cm", "Full-Body (cm)"),
    ("ee_pos_cm", "EE Pos (cm)"),
    ("ee_rot_deg", "EE Rot (deg)"),
    ("root2d_pos_cm", "2D Root (cm)"),
    ("pelvis_dev_p95_cm", "Pelvis@95% (cm)"),
    ("surrogate_fid", "Surrogate FID"),
)


def _fmt(value) -> str:
    if value is None:
        return "-"
    return f"{value:.2f}"


def render_markdown(report: dict) -> str:
    lines = ["| Method | " + " | ".join(label for _, label in _COLUMNS) + " |"]
    lines.append("|" + "---|" * (len(_COLUMNS) + 1))
    for name, rows in report["variants"].items():
        medians = {}
        for key, _ in _COLUMNS:
            vals = [r[key] for r in rows if r.get(key) is not None]
            medians[key] = float(np.median(vals)) if vals else None
        lines.append(
            f"| {name} | " + " | ".join(_fmt(medians[key]) for key, _ in _COLUMNS) + " |"
        )
    if report.get("scaling"):
        lines.append("")
        for axis, cells in report["scaling"].items():
            lines.append(f"### scaling: {axis}")
            lines.append("| Setting | " + " | ".join(label for _, label in _COLUMNS) + " |")
            lines.append("|" + "---|" * (len(_COLUMNS) + 1))
            for label, metrics in cells.items():
                lines.append(
                    f"| {label} | "
                    + " | ".join(_fmt(metrics.get(key)) for key, _ in _COLUMNS)
                    + " |"
                )
    return "\n".join(lines) + "\n"
