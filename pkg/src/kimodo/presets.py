"""Named configuration presets.

- "toy": the flagship desk-scale preset (~5M-parameter class model, 20k+20k
  steps, batch 64); trains in a few hours on one commodity accelerator.
- "micro": CPU-friendly preset used by the automated acceptance run.
- "paper": reference numbers at publication scale, kept for documentation;
  not intended to be trained here.
"""

from __future__ import annotations

from .denoiser import DenoiserConfig
from .motion_repr import CodecConfig
from .synthetic import DataConfig
from .training import TrainingConfig

PRESETS = {
    "toy": {
        "denoiser": dict(
            n_joints=27, n_layers=4, n_heads=4, latent_dim=256,
            extra_tokens=49, text_dim=256, max_frames=300, dropout=0.1,
        ),
        "training": dict(
            phase1_steps=20_000, phase2_steps=20_000, batch_size=64,
            learning_rate=2e-5, max_seconds=10.0, fps=30.0,
        ),
        "data": dict(n_clips=2000, fps=30.0),
    },
    "micro": {
        "denoiser": dict(
            n_joints=27, n_layers=2, n_heads=4, latent_dim=128,
            extra_tokens=8, text_dim=64, max_frames=160, dropout=0.1,
        ),
        "training": dict(
            phase1_steps=1500, phase2_steps=2500, batch_size=16,
            learning_rate=3e-4, max_seconds=5.0, fps=30.0,
            log_interval=100, checkpoint_interval=2000,
        ),
        "data": dict(n_clips=240, fps=30.0),
    },
    "paper": {
        # published-scale reference: 16 layers, 8 heads, latent 1024 per
        # stage (282M params), 500k+500k steps, batch 2048, lr 2e-5
        "denoiser": dict(
            n_joints=27, n_layers=16, n_heads=8, latent_dim=1024,
            extra_tokens=49, text_dim=4096, max_frames=300, dropout=0.1,
        ),
        "training": dict(
            phase1_steps=500_000, phase2_steps=500_000, batch_size=2048,
            learning_rate=2e-5, max_seconds=10.0, fps=30.0,
        ),
        "data": dict(n_clips=2000, fps=30.0),
    },
}


def preset_configs(name: str, **overrides):
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    spec = PRESETS[name]
    denoiser = DenoiserConfig(**{**spec["denoiser"], **overrides.get("denoiser", {})})
    training = TrainingConfig(**{**spec["training"], **overrides.get("training", {})})
    data = DataConfig(**{**spec["data"], **overrides.get("data", {})})
    return denoiser, training, CodecConfig()
