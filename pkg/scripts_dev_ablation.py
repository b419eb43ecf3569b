"""Dev calibration for the ablation-direction criterion (nano budget)."""

import json
import sys
import time

import numpy as np

sys.path.insert(0, "src")

from kimodo.ablation import evaluate_checkpoint, train_variant
from kimodo.denoiser import DenoiserConfig
from kimodo.motion_repr import CodecConfig
from kimodo.skeleton import canonical_skeleton
from kimodo.synthetic import DataConfig, generate_clips
from kimodo.training import TrainingConfig

out_root = sys.argv[1] if len(sys.argv) > 1 else "/root/pkg/.cache/dev-ablation"

skeleton = canonical_skeleton()
clips = generate_clips(DataConfig(n_clips=240, seed=0), skeleton)
train = [c for c in clips if c.split == "train"]
test = [c for c in clips if c.split == "test"]

denoiser = DenoiserConfig(
    n_joints=27, n_layers=1, n_heads=2, latent_dim=64,
    extra_tokens=4, text_dim=32, max_frames=120, dropout=0.1,
)
training = TrainingConfig(
    phase1_steps=800, phase2_steps=1200, batch_size=16, learning_rate=3e-4,
    max_seconds=4.0, log_interval=200, checkpoint_interval=4000,
)
eval_kwargs = dict(steps=50, cases_per_cell=1, lengths_s=(3, 4))

t0 = time.time()
results = {}
for variant in ("full", "one_stage", "no_curriculum"):
    rows = []
    for seed in (0, 1, 2):
        ckpt = train_variant(
            variant, train, skeleton, denoiser, training, CodecConfig(),
            f"{out_root}/{variant}-seed{seed}", seed=seed,
        )
        metrics = evaluate_checkpoint(ckpt, test, skeleton, suite_seed=7, **eval_kwargs)
        rows.append(metrics)
        print(f"{variant} seed{seed} @ {time.time()-t0:.0f}s: "
              f"skate {metrics['foot_skate_cm_s']:.2f} fb {metrics['full_body_pos_cm']:.2f} "
              f"root {metrics['root2d_pos_cm']:.2f} contact {metrics['contact_accuracy']:.3f}",
              flush=True)
    results[variant] = rows

def med(v, k):
    return float(np.median([r[k] for r in results[v]]))

print(json.dumps({v: {k: med(v, k) for k in
      ("foot_skate_cm_s", "full_body_pos_cm", "root2d_pos_cm")} for v in results}, indent=1))
print(f"one_stage worse skate: {med('one_stage','foot_skate_cm_s') > med('full','foot_skate_cm_s')}")
print(f"one_stage worse fb:    {med('one_stage','full_body_pos_cm') > med('full','full_body_pos_cm')}")
print(f"no_curr worse fb:      {med('no_curriculum','full_body_pos_cm') > med('full','full_body_pos_cm')}")
print(f"no_curr worse root:    {med('no_curriculum','root2d_pos_cm') > med('full','root2d_pos_cm')}")
print(f"total {time.time()-t0:.0f}s")
