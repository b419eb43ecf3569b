"""Train a small model end to end on the procedural dataset.

The "micro" preset fits CPU budgets; pass --preset toy on a machine with an
accelerator for the full desk-scale recipe (two phases: text-only
pre-training, then mixed text + constraints with the growing keyframe
curriculum).

Usage: python demos/04_train_toy.py [out_dir] [n_steps_scale]
"""

import json
import sys

import numpy as np
import torch

from kimodo.denoiser import MotionDenoiser
from kimodo.motion_repr import encode, fit_normalization
from kimodo.presets import preset_configs
from kimodo.skeleton import canonical_skeleton
from kimodo.synthetic import DataConfig, DatasetSampler, generate_clips
from kimodo.training import TrainingConfig, run_training

out_dir = sys.argv[1] if len(sys.argv) > 1 else "runs/demo-train"
scale = float(sys.argv[2]) if len(sys.argv) > 2 else 0.05  # fraction of micro budget

skeleton = canonical_skeleton()
denoiser_cfg, training_cfg, codec_cfg = preset_configs("micro")
training_cfg = TrainingConfig.from_dict(
    {
        **training_cfg.to_dict(),
        "phase1_steps": max(10, int(training_cfg.phase1_steps * scale)),
        "phase2_steps": max(10, int(training_cfg.phase2_steps * scale)),
        "log_interval": 10,
    }
)
print(f"steps: {training_cfg.phase1_steps} text-only + {training_cfg.phase2_steps} mixed")

clips = generate_clips(DataConfig(n_clips=64, seed=0), skeleton)
train_clips = [c for c in clips if c.split == "train"]
sampler = DatasetSampler(train_clips, skeleton, codec_config=codec_cfg, seed=0)
stats = fit_normalization([encode(c.raw, skeleton, codec_cfg) for c in sampler.clips])

torch.manual_seed(0)
model = MotionDenoiser(denoiser_cfg)
print(f"model: {model.parameter_count() / 1e6:.2f}M parameters ({denoiser_cfg.variant})")

losses = []
path = run_training(
    model, sampler, stats, skeleton, denoiser_cfg, training_cfg, out_dir,
    codec_config=codec_cfg,
    log_fn=lambda m: losses.append(m["total"]) or print(json.dumps(m)),
)
print(f"\nloss {losses[0]:.1f} -> {losses[-1]:.1f}")
print(f"checkpoint: {path}")
