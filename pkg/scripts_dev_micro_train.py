"""Dev calibration: micro training + suite evaluation (not part of the package)."""

import json
import os
import sys
import time

import numpy as np
import torch

sys.path.insert(0, "src")

from kimodo.ablation import evaluate_checkpoint, train_variant
from kimodo.presets import preset_configs
from kimodo.skeleton import canonical_skeleton
from kimodo.synthetic import DataConfig, generate_clips

out_root = sys.argv[1] if len(sys.argv) > 1 else "/root/pkg/.cache/dev-micro"
seed = int(sys.argv[2]) if len(sys.argv) > 2 else 0

t0 = time.time()
skeleton = canonical_skeleton()
denoiser_cfg, training_cfg, codec_cfg = preset_configs("micro")
from kimodo.training import TrainingConfig
training_cfg = TrainingConfig.from_dict({**training_cfg.to_dict(), "phase1_steps": 1200, "phase2_steps": 4800})
data_cfg = DataConfig(n_clips=240, seed=0)
clips = generate_clips(data_cfg, skeleton)
train = [c for c in clips if c.split == "train"]
test = [c for c in clips if c.split == "test"]
print(f"dataset: {len(train)} train, {len(test)} test; {time.time()-t0:.1f}s", flush=True)

ckpt = train_variant(
    "full", train, skeleton, denoiser_cfg, training_cfg, codec_cfg,
    os.path.join(out_root, f"full-seed{seed}"), seed=seed,
)
print(f"trained: {ckpt} at {time.time()-t0:.1f}s", flush=True)

metrics = evaluate_checkpoint(
    ckpt, test, skeleton, suite_seed=0, steps=100, cases_per_cell=1, lengths_s=(3, 4, 5)
)
print(json.dumps(metrics, indent=1), flush=True)
print(f"total {time.time()-t0:.1f}s", flush=True)
