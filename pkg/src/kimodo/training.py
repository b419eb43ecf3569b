"""Training: composite loss, two-phase curriculum, batching, checkpoints.

Phase 1 trains text-to-motion only (dropout on, zero constraint masks);
phase 2 mixes text and sampled kinematic constraints with dropout removed and
a linearly growing keyframe budget. Text conditioning is dropped 10% of the
time in both phases for classifier-free guidance.

All losses run in normalized feature space except the FK term, which
denormalizes the rotation predictions and compares forward-kinematics
positions against denormalized position targets in meters (anchored at the
target's pelvis entry, so the term isolates rotation error).
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from . import diffkin
from .constraints import ConstraintSpec, empty_spec, sample_constraint_pattern
from .denoiser import DenoiserConfig, HashedTextEmbedder, MotionDenoiser
from .diffusion import EmaState, NoiseSchedule
from .errors import ConfigError, TrainingFault
from .motion_repr import (
    CodecConfig,
    FeatureLayout,
    NormalizationStats,
    rotate_features_yaw,
    standardize_features,
)
from .skeleton import Skeleton, canonical_skeleton

CHECKPOINT_FORMAT_VERSION = 1

TERM_NAMES = ("root_pos", "heading", "joint_pos", "joint_vel", "joint_rot", "contact", "fk")


@dataclass
class LossWeights:
    root_pos: float = 10.0
    heading: float = 2.0
    joint_pos: float = 10.0
    joint_vel: float = 3.0
    joint_rot: float = 10.0
    contact: float = 4.0
    fk: float = 5.0

    def as_tuple(self):
        return tuple(getattr(self, name) for name in TERM_NAMES)


@dataclass
class TrainingConfig:
    phase1_steps: int = 20_000
    phase2_steps: int = 20_000
    batch_size: int = 64
    learning_rate: float = 2e-5
    loss_weights: LossWeights = field(default_factory=LossWeights)
    dropout_phase1: float = 0.1
    text_drop_prob: float = 0.1
    ema_decay: float = 0.995
    ema_interval: int = 10
    max_seconds: float = 10.0
    fps: float = 30.0
    seed: int = 0
    smooth_l1_beta: float = 1.0
    grad_clip: float = 1.0
    optimizer: str = "adamw"  # or "adam_atan2"
    diffusion_steps: int = 1000
    schedule: str = "cosine"
    curriculum: bool = True
    # probability that a phase-2 (or no-curriculum) draw has no constraints
    constraint_none_prob: float = 0.10
    no_curriculum_none_prob: float = 0.5
    log_interval: int = 50
    checkpoint_interval: int = 5000

    @property
    def total_steps(self) -> int:
        return self.phase1_steps + self.phase2_steps

    @property
    def max_frames(self) -> int:
        return int(round(self.max_seconds * self.fps))

    def to_dict(self) -> dict:
        d = asdict(self)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "TrainingConfig":
        data = dict(data)
        if isinstance(data.get("loss_weights"), dict):
            data["loss_weights"] = LossWeights(**data["loss_weights"])
        return cls(**data)


@dataclass
class TrainItem:
    """One training sample before batching: unnormalized features + text.

    phase_frames carries the clip's gait-cycle length so random crops can be
    cycle-aligned: the generator starts every clip at gait phase zero, and
    keeping crops phase-aligned makes the gait phase a deterministic function
    of the frame index, which a small denoiser can actually learn (a
    uniformly random phase has a phase-averaged posterior mean: gliding
    feet). 0 disables alignment (stationary families).
    """

    features: np.ndarray  # [N, D] unnormalized, standardized
    text: str | None
    source: str = "clip"  # clip | subclip | stitched | paraphrase
    phase_frames: int = 0


@dataclass
class Batch:
    features: torch.Tensor  # [B, N, D] normalized, zero-padded
    lengths: torch.Tensor  # [B]
    text: torch.Tensor  # [B, text_dim]
    text_present: torch.Tensor  # [B] bool
    target: torch.Tensor  # [B, N, D] normalized constraint targets
    mask: torch.Tensor  # [B, N, D]
    c_dir: torch.Tensor  # [B, 2]
    t: torch.Tensor  # [B] diffusion steps
    eps: torch.Tensor  # [B, N, D]


def smooth_l1(residual: torch.Tensor, beta: float) -> torch.Tensor:
    """Elementwise smooth L1: quadratic below beta, linear above."""
    absr = residual.abs()
    return torch.where(absr < beta, 0.5 * residual * residual / beta, absr - 0.5 * beta)


def compute_loss(
    x0_hat: torch.Tensor,
    x0: torch.Tensor,
    lengths: torch.Tensor,
    skeleton: Skeleton,
    stats: NormalizationStats,
    config: TrainingConfig,
) -> tuple[torch.Tensor, dict]:
    """Weighted 7-term loss; each term sums over its feature dims and
    averages over valid (batch, frame) entries. Returns (total, breakdown)."""
    if torch.isnan(x0_hat).any() or torch.isnan(x0).any():
        raise TrainingFault("NaN in loss inputs")
    layout = FeatureLayout(skeleton.n_joints)
    b, n, _ = x0.shape
    beta = config.smooth_l1_beta
    valid = (
        torch.arange(n, device=x0.device)[None, :] < lengths[:, None]
    ).to(x0.dtype)
    denom = valid.sum().clamp_min(1.0)

    def masked_mean(per_frame: torch.Tensor) -> torch.Tensor:
        return (per_frame * valid).sum() / denom

    slices = {
        "root_pos": layout.root_pos,
        "heading": layout.heading,
        "joint_pos": layout.joint_pos,
        "joint_vel": layout.joint_vel,
        "joint_rot": layout.joint_rot,
        "contact": layout.contacts,
    }
    terms = {}
    for name, sl in slices.items():
        residual = x0_hat[:, :, sl] - x0[:, :, sl]
        terms[name] = masked_mean(smooth_l1(residual, beta).sum(dim=2))

    # FK term in meters: denormalize rotations and position targets.
    mean = torch.as_tensor(stats.mean, dtype=x0.dtype, device=x0.device)
    std = torch.as_tensor(stats.std, dtype=x0.dtype, device=x0.device)
    rot_sl, pos_sl = layout.joint_rot, layout.joint_pos
    ja_hat = x0_hat[:, :, rot_sl] * std[rot_sl] + mean[rot_sl]
    jp_target = x0[:, :, pos_sl] * std[pos_sl] + mean[pos_sl]
    rot_mats = diffkin.rotation_6d_to_matrix(ja_hat.reshape(b, n, skeleton.n_joints, 6))
    pelvis = jp_target.reshape(b, n, skeleton.n_joints, 3)[:, :, 0]
    fk_pos = diffkin.forward_kinematics(skeleton, pelvis, rot_mats)
    fk_residual = fk_pos.reshape(b, n, -1) - jp_target
    terms["fk"] = masked_mean(smooth_l1(fk_residual, beta).sum(dim=2))

    weights = config.loss_weights
    total = sum(getattr(weights, name) * terms[name] for name in TERM_NAMES)
    breakdown = {name: float(terms[name].detach()) for name in TERM_NAMES}
    breakdown["total"] = float(total.detach())
    return total, breakdown


class AdamAtan2(torch.optim.Optimizer):
    """Adam variant replacing the epsilon-divide with atan2 (scale-invariant,
    removes the epsilon hyperparameter). Used for training-stability parity;
    AdamW with zero decay is the default."""

    def __init__(self, params, lr=2e-5, betas=(0.9, 0.999), a=1.2732395447351628, b=1.0):
        defaults = dict(lr=lr, betas=betas, a=a, b=b)
        super().__init__(params, defaults)

    @torch.no_grad()
    def step(self, closure=None):
        loss = None if closure is None else closure()
        for group in self.param_groups:
            beta1, beta2 = group["betas"]
            for p in group["params"]:
                if p.grad is None:
                    continue
                state = self.state[p]
                if not state:
                    state["step"] = 0
                    state["exp_avg"] = torch.zeros_like(p)
                    state["exp_avg_sq"] = torch.zeros_like(p)
                state["step"] += 1
                t = state["step"]
                m, v = state["exp_avg"], state["exp_avg_sq"]
                m.mul_(beta1).add_(p.grad, alpha=1 - beta1)
                v.mul_(beta2).addcmul_(p.grad, p.grad, value=1 - beta2)
                m_hat = m / (1 - beta1**t)
                v_hat = v / (1 - beta2**t)
                update = torch.atan2(m_hat, group["b"] * v_hat.sqrt())
                p.add_(update, alpha=-group["lr"] * group["a"])
        return loss


def build_optimizer(model: torch.nn.Module, config: TrainingConfig) -> torch.optim.Optimizer:
    if config.optimizer == "adamw":
        return torch.optim.AdamW(model.parameters(), lr=config.learning_rate, weight_decay=0.0)
    if config.optimizer == "adam_atan2":
        return AdamAtan2(model.parameters(), lr=config.learning_rate)
    raise ConfigError(f"unknown optimizer {config.optimizer!r}")


def set_dropout(model: torch.nn.Module, p: float) -> None:
    for module in model.modules():
        if isinstance(module, torch.nn.Dropout):
            module.p = p


def ema_params(model: torch.nn.Module) -> dict:
    return {k: v.detach() for k, v in model.state_dict().items() if v.dtype.is_floating_point}


def ema_swap_in(ema: EmaState, model: torch.nn.Module) -> None:
    """Copy the EMA shadow into the model (for inference)."""
    with torch.no_grad():
        ema.copy_to(ema_params(model))


def q_sample_batch(
    schedule: NoiseSchedule, x0: torch.Tensor, t: torch.Tensor, eps: torch.Tensor
) -> torch.Tensor:
    """Per-sample-step forward noising (torch mirror of diffusion.q_sample)."""
    ab = torch.as_tensor(schedule.alpha_bar, dtype=x0.dtype, device=x0.device)[t - 1]
    ab = ab.view(-1, *([1] * (x0.dim() - 1)))
    return torch.sqrt(ab) * x0 + torch.sqrt(1.0 - ab) * eps


def make_batch(
    sampler,
    rng: np.random.Generator,
    config: TrainingConfig,
    stats: NormalizationStats,
    skeleton: Skeleton,
    embedder,
    phase: int,
    progress: float,
    none_probability: float | None = None,
) -> Batch:
    """Draw, augment, constrain, normalize and pad a training batch.

    Augmentation order per item: crop to the length budget, re-standardize,
    randomize the heading, then normalize. The heading token is read off the
    augmented (unnormalized) frame 0.
    """
    layout = FeatureLayout(skeleton.n_joints)
    if none_probability is None:
        none_probability = config.constraint_none_prob
    items, specs, dirs, texts = [], [], [], []
    max_frames = config.max_frames
    for _ in range(config.batch_size):
        item = sampler.sample_item(rng)
        feats = item.features
        if feats.shape[0] > max_frames:
            # crop the tail, never the head: clips are performances anchored
            # at their own frame 0 (standing start, gait phase zero), so a
            # random crop start would make onset time and gait phase
            # unpredictable and the posterior mean collapses to a glide at
            # desk scale. Random lengths still vary the windows.
            length = int(rng.integers(max_frames // 2, max_frames + 1))
            feats = feats[:length]
        feats = standardize_features(feats)
        feats = rotate_features_yaw(feats, float(rng.uniform(0.0, 2 * np.pi)), layout)
        dirs.append(feats[0, 3:5].copy())
        feats = (feats - stats.mean) / stats.std
        if phase == 2:
            spec = sample_constraint_pattern(
                feats, skeleton, rng, progress, none_probability=none_probability
            )
            spec.normalized = True
        else:
            spec = empty_spec(feats.shape[0], layout.width, normalized=True)
        items.append(feats)
        specs.append(spec)
        texts.append(item.text)

    b = len(items)
    n_max = max(f.shape[0] for f in items)
    d = layout.width
    features = np.zeros((b, n_max, d), dtype=np.float32)
    target = np.zeros((b, n_max, d), dtype=np.float32)
    mask = np.zeros((b, n_max, d), dtype=np.float32)
    lengths = np.zeros(b, dtype=np.int64)
    text_vecs = np.zeros((b, embedder.dim), dtype=np.float32)
    text_present = np.zeros(b, dtype=bool)
    for i, feats in enumerate(items):
        n = feats.shape[0]
        lengths[i] = n
        features[i, :n] = feats
        target[i, :n] = specs[i].target
        mask[i, :n] = specs[i].mask
        if texts[i] and rng.random() >= config.text_drop_prob:
            text_vecs[i] = embedder.embed(texts[i])
            text_present[i] = True

    t = rng.integers(1, config.diffusion_steps + 1, size=b)
    eps = rng.standard_normal((b, n_max, d)).astype(np.float32)
    return Batch(
        features=torch.from_numpy(features),
        lengths=torch.from_numpy(lengths),
        text=torch.from_numpy(text_vecs),
        text_present=torch.from_numpy(text_present),
        target=torch.from_numpy(target),
        mask=torch.from_numpy(mask),
        c_dir=torch.from_numpy(np.stack(dirs).astype(np.float32)),
        t=torch.from_numpy(t),
        eps=torch.from_numpy(eps),
    )


def training_step(
    model: MotionDenoiser,
    batch: Batch,
    phase: int,
    optimizer: torch.optim.Optimizer,
    ema: EmaState,
    schedule: NoiseSchedule,
    skeleton: Skeleton,
    stats: NormalizationStats,
    config: TrainingConfig,
    global_step: int,
) -> dict:
    """One optimization step: noise, impute, denoise, loss, clip, update, EMA."""
    if phase == 1 and torch.any(batch.mask > 0.5):
        raise TrainingFault("phase 1 batches must carry zero constraint masks")
    x0 = batch.features
    x_t = q_sample_batch(schedule, x0, batch.t, batch.eps)
    x_tilde = torch.where(batch.mask > 0.5, batch.target, x_t)
    x_in = torch.cat([x_tilde, batch.mask], dim=2)

    x0_hat = model(
        x_in,
        batch.t,
        batch.c_dir,
        text=batch.text,
        text_present=batch.text_present,
        lengths=batch.lengths,
    )
    loss, breakdown = compute_loss(x0_hat, x0, batch.lengths, skeleton, stats, config)

    optimizer.zero_grad(set_to_none=True)
    loss.backward()
    grad_norm = torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
    optimizer.step()
    ema.update(ema_params(model), global_step)

    breakdown["grad_norm"] = float(grad_norm)
    breakdown["phase"] = phase
    return breakdown


def config_hash(*dicts) -> str:
    payload = json.dumps(dicts, sort_keys=True).encode()
    return hashlib.sha256(payload).hexdigest()[:16]


def save_checkpoint(
    path: str,
    model: MotionDenoiser,
    optimizer: torch.optim.Optimizer,
    ema: EmaState,
    step: int,
    denoiser_config: DenoiserConfig,
    training_config: TrainingConfig,
    codec_config: CodecConfig,
    stats: NormalizationStats,
    skeleton_id: str,
    rng: np.random.Generator,
) -> None:
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "step": step,
        "denoiser_config": denoiser_config.to_dict(),
        "training_config": training_config.to_dict(),
        "codec_config": codec_config.to_dict(),
        "config_hash": config_hash(
            denoiser_config.to_dict(), training_config.to_dict(), codec_config.to_dict()
        ),
        "model_state": model.state_dict(),
        "optimizer_state": optimizer.state_dict(),
        "ema_shadow": ema.shadow,
        "ema_decay": ema.decay,
        "ema_interval": ema.update_interval,
        "stats_mean": torch.from_numpy(np.asarray(stats.mean)),
        "stats_std": torch.from_numpy(np.asarray(stats.std)),
        "skeleton_id": skeleton_id,
        "numpy_rng_state": json.dumps(rng.bit_generator.state),
        "torch_rng_state": torch.get_rng_state(),
        "curriculum_progress": max(
            0.0, min(1.0, (step - training_config.phase1_steps) / max(training_config.phase2_steps, 1))
        ),
    }
    tmp = path + ".tmp"
    torch.save(payload, tmp)
    os.replace(tmp, path)


def load_checkpoint(path: str) -> dict:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise ConfigError(f"unsupported checkpoint version in {path}")
    return payload


@dataclass
class ModelBundle:
    """Everything needed for inference, loaded from a checkpoint."""

    model: MotionDenoiser
    denoiser_config: DenoiserConfig
    training_config: TrainingConfig
    codec_config: CodecConfig
    stats: NormalizationStats
    skeleton: Skeleton
    schedule: NoiseSchedule
    embedder: HashedTextEmbedder
    step: int = 0
    model_id: str = "unnamed"


def load_model_bundle(path: str, use_ema: bool = True) -> ModelBundle:
    payload = load_checkpoint(path)
    denoiser_config = DenoiserConfig.from_dict(payload["denoiser_config"])
    training_config = TrainingConfig.from_dict(payload["training_config"])
    codec_config = CodecConfig.from_dict(payload["codec_config"])
    model = MotionDenoiser(denoiser_config)
    model.load_state_dict(payload["model_state"])
    if use_ema:
        with torch.no_grad():
            state = model.state_dict()
            for k, v in payload["ema_shadow"].items():
                state[k].copy_(v)
    model.eval()
    set_dropout(model, 0.0)
    skeleton = canonical_skeleton()
    if payload["skeleton_id"] != skeleton.skeleton_id:
        raise ConfigError(
            f"checkpoint skeleton {payload['skeleton_id']} != {skeleton.skeleton_id}"
        )
    stats = NormalizationStats(
        mean=payload["stats_mean"].numpy().astype(np.float64),
        std=payload["stats_std"].numpy().astype(np.float64),
    )
    return ModelBundle(
        model=model,
        denoiser_config=denoiser_config,
        training_config=training_config,
        codec_config=codec_config,
        stats=stats,
        skeleton=skeleton,
        schedule=NoiseSchedule.create(training_config.schedule, training_config.diffusion_steps),
        embedder=HashedTextEmbedder(denoiser_config.text_dim),
        step=payload["step"],
        model_id=f"kimodo-{payload['config_hash']}-step{payload['step']}",
    )


def run_training(
    model: MotionDenoiser,
    sampler,
    stats: NormalizationStats,
    skeleton: Skeleton,
    denoiser_config: DenoiserConfig,
    config: TrainingConfig,
    out_dir: str,
    codec_config: CodecConfig = CodecConfig(),
    resume_from: str | None = None,
    log_fn=None,
) -> str:
    """Train to completion; returns the final checkpoint path.

    Deterministic given config.seed (single-threaded CPU semantics): the data
    rng, torch rng, optimizer and EMA state all live in the checkpoint, so
    resuming reproduces the uninterrupted run bit for bit.
    """
    os.makedirs(out_dir, exist_ok=True)
    schedule = NoiseSchedule.create(config.schedule, config.diffusion_steps)
    embedder = HashedTextEmbedder(denoiser_config.text_dim)
    optimizer = build_optimizer(model, config)
    start_step = 0

    if resume_from is not None:
        payload = load_checkpoint(resume_from)
        expect = config_hash(
            denoiser_config.to_dict(), config.to_dict(), codec_config.to_dict()
        )
        if payload["config_hash"] != expect:
            raise ConfigError("checkpoint config hash does not match; refusing to resume")
        model.load_state_dict(payload["model_state"])
        optimizer.load_state_dict(payload["optimizer_state"])
        ema = EmaState(ema_params(model), payload["ema_decay"], payload["ema_interval"])
        ema.shadow = payload["ema_shadow"]
        rng = np.random.default_rng()
        rng.bit_generator.state = json.loads(payload["numpy_rng_state"])
        torch.set_rng_state(payload["torch_rng_state"])
        start_step = payload["step"]
    else:
        torch.manual_seed(config.seed)
        rng = np.random.default_rng(config.seed)
        ema = EmaState(ema_params(model), config.ema_decay, config.ema_interval)

    metrics_path = os.path.join(out_dir, "metrics.jsonl")
    final_path = os.path.join(out_dir, "checkpoint_final.pt")
    metrics_file = open(metrics_path, "a")

    def phase_of(step: int) -> int:
        if not config.curriculum:
            return 2
        return 1 if step < config.phase1_steps else 2

    def progress_of(step: int) -> float:
        if not config.curriculum:
            return 1.0
        return max(0.0, min(1.0, (step - config.phase1_steps) / max(config.phase2_steps, 1)))

    model.train()
    set_dropout(model, 0.0 if (not config.curriculum or start_step >= config.phase1_steps) else config.dropout_phase1)

    t_start = time.time()
    for step in range(start_step, config.total_steps):
        phase = phase_of(step)
        if config.curriculum and step == config.phase1_steps:
            set_dropout(model, 0.0)
        none_probability = (
            config.no_curriculum_none_prob if not config.curriculum else None
        )
        batch = make_batch(
            sampler, rng, config, stats, skeleton, embedder, phase, progress_of(step), none_probability
        )
        try:
            metrics = training_step(
                model, batch, phase, optimizer, ema, schedule, skeleton, stats, config, step + 1
            )
        except TrainingFault as fault:
            metrics = {"skipped": True, "reason": str(fault), "phase": phase}
        metrics["step"] = step + 1
        metrics["progress"] = progress_of(step)
        if (step + 1) % config.log_interval == 0 or step + 1 == config.total_steps:
            metrics["elapsed_s"] = round(time.time() - t_start, 2)
            metrics_file.write(json.dumps(metrics) + "\n")
            metrics_file.flush()
            if log_fn is not None:
                log_fn(metrics)
        if (step + 1) % config.checkpoint_interval == 0 or step + 1 == config.total_steps:
            save_checkpoint(
                os.path.join(out_dir, f"checkpoint_{step + 1:07d}.pt"),
                model,
                optimizer,
                ema,
                step + 1,
                denoiser_config,
                config,
                codec_config,
                stats,
                skeleton.skeleton_id,
                rng,
            )
    metrics_file.close()

    save_checkpoint(
        final_path,
        model,
        optimizer,
        ema,
        config.total_steps,
        denoiser_config,
        config,
        codec_config,
        stats,
        skeleton.skeleton_id,
        rng,
    )
    return final_path
