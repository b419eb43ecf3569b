"""Train and compare the model/recipe variants on one tiny budget.

Produces the comparison table (markdown + JSON) over: the full two-stage
model, the parameter-matched one-stage baseline, the global-root second
stage, the raw-pelvis root representation, no extra tokens, and single-phase
(no curriculum) training. Pass --scaling for the miniature data/model/batch
sweep as well. Budgets here are deliberately small; use --preset toy for the
real run.

Usage: python demos/07_ablation_and_scaling.py [out_dir] [--scaling]
"""

import sys

from kimodo.ablation import run_ablation_harness
from kimodo.denoiser import DenoiserConfig
from kimodo.motion_repr import CodecConfig
from kimodo.skeleton import canonical_skeleton
from kimodo.synthetic import DataConfig, generate_clips
from kimodo.training import TrainingConfig

out_dir = sys.argv[1] if len(sys.argv) > 1 else "runs/demo-ablation"
include_scaling = "--scaling" in sys.argv

skeleton = canonical_skeleton()
clips = generate_clips(DataConfig(n_clips=64, seed=0), skeleton)
train = [c for c in clips if c.split == "train"]
test = [c for c in clips if c.split == "test"]

denoiser = DenoiserConfig(
    n_joints=27, n_layers=1, n_heads=2, latent_dim=48,
    extra_tokens=2, text_dim=32, max_frames=100, dropout=0.1,
)
training = TrainingConfig(
    phase1_steps=60, phase2_steps=60, batch_size=8, learning_rate=3e-4,
    max_seconds=3.0, log_interval=30, checkpoint_interval=1000,
)

report = run_ablation_harness(
    train, test, skeleton, denoiser, training, CodecConfig(), out_dir,
    seeds=(0,),
    include_scaling=include_scaling,
    eval_kwargs=dict(steps=10, cases_per_cell=1, lengths_s=(3,)),
)
print(open(f"{out_dir}/ablation_report.md").read())
print(f"full report: {out_dir}/ablation_report.json")
