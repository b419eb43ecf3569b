"""Diffusion machinery: noise schedule, DDIM reversal, dual guidance, EMA.

The denoiser is any callable `f(x_in, text, t) -> x0_hat` where x_in is the
imputed motion concatenated with its control mask ([N, 2D]), text is an
embedding vector or None, and t is an integer step in [1, T]. Sampling is the
deterministic DDIM variant (eta = 0), so a fixed seed reproduces outputs
bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .constraints import ConstraintSpec, assemble_input, impute
from .motion_repr import MotionFeatures

DenoiserFn = Callable[[np.ndarray, np.ndarray | None, int], np.ndarray]


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step beta/alpha tables, index i holds step t = i + 1."""

    n_steps: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    kind: str = "cosine"

    def __post_init__(self):
        if self.beta.shape != (self.n_steps,):
            raise ValueError("beta table size mismatch")
        if np.any(self.beta <= 0.0) or np.any(self.beta >= 1.0):
            raise ValueError("beta values must lie in (0, 1)")
        if np.any(np.diff(self.alpha_bar) >= 0.0):
            raise ValueError("alpha_bar must be strictly decreasing")

    def alpha_bar_at(self, t: int) -> float:
        """Cumulative alpha at step t, with the t = 0 convention of 1."""
        if t == 0:
            return 1.0
        if not 1 <= t <= self.n_steps:
            raise ValueError(f"step {t} outside [0, {self.n_steps}]")
        return float(self.alpha_bar[t - 1])

    @classmethod
    def cosine(cls, n_steps: int = 1000, s: float = 0.008) -> "NoiseSchedule":
        """Cosine alpha_bar schedule (squared-cosine decay, offset s)."""
        steps = np.arange(n_steps + 1, dtype=np.float64)
        f = np.cos((steps / n_steps + s) / (1.0 + s) * np.pi / 2.0) ** 2
        alpha_bar = f[1:] / f[0]
        beta = 1.0 - alpha_bar / np.concatenate([[1.0], alpha_bar[:-1]])
        beta = np.clip(beta, 1e-8, 0.999)
        alpha = 1.0 - beta
        return cls(n_steps, beta, alpha, np.cumprod(alpha), kind="cosine")

    @classmethod
    def linear(cls, n_steps: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02) -> "NoiseSchedule":
        beta = np.linspace(beta_start, beta_end, n_steps, dtype=np.float64)
        alpha = 1.0 - beta
        return cls(n_steps, beta, alpha, np.cumprod(alpha), kind="linear")

    @classmethod
    def create(cls, kind: str, n_steps: int = 1000) -> "NoiseSchedule":
        if kind == "cosine":
            return cls.cosine(n_steps)
        if kind == "linear":
            return cls.linear(n_steps)
        raise ValueError(f"unknown schedule kind: {kind!r}")


@dataclass(frozen=True)
class GuidanceWeights:
    w_text: float = 2.0
    w_constr: float = 2.0

    def __post_init__(self):
        if not (np.isfinite(self.w_text) and np.isfinite(self.w_constr)):
            raise ValueError("guidance weights must be finite")


def q_sample(schedule: NoiseSchedule, x_0: np.ndarray, t: int, eps: np.ndarray) -> np.ndarray:
    """Forward-noise x_0 to step t with the provided gaussian draw."""
    if not 1 <= t <= schedule.n_steps:
        raise ValueError(f"step {t} outside [1, {schedule.n_steps}]")
    if eps.shape != x_0.shape:
        raise ValueError("eps shape mismatch")
    ab = schedule.alpha_bar_at(t)
    return np.sqrt(ab) * x_0 + np.sqrt(1.0 - ab) * eps


def guided_x0(
    denoiser: DenoiserFn,
    x_t: np.ndarray,
    t: int,
    spec: ConstraintSpec | None,
    text_embedding: np.ndarray | None,
    weights: GuidanceWeights,
) -> np.ndarray:
    """Decomposed classifier-free guidance over text and constraints.

    x0 = D_none + w_text (D_text - D_none) + w_constr (D_constr - D_none),
    where only the constrained branch sees the imputed motion and mask.
    Branches with zero weight (or absent conditioning) are skipped, so the
    unconditional call is returned exactly when both weights are zero.
    """
    zero_mask = np.zeros_like(x_t)
    x_in_uncond = assemble_input(x_t, zero_mask)

    use_text = text_embedding is not None and weights.w_text != 0.0
    use_constr = spec is not None and not spec.is_empty and weights.w_constr != 0.0

    if weights.w_text == 1.0 and not use_constr and text_embedding is not None:
        return denoiser(x_in_uncond, text_embedding, t)

    d_none = denoiser(x_in_uncond, None, t)
    out = d_none
    if use_text:
        d_text = denoiser(x_in_uncond, text_embedding, t)
        out = out + weights.w_text * (d_text - d_none)
    if use_constr:
        x_in_constr = assemble_input(impute(x_t, spec), spec.mask)
        d_constr = denoiser(x_in_constr, None, t)
        out = out + weights.w_constr * (d_constr - d_none)
    return out


def ddim_step(
    schedule: NoiseSchedule, x_t: np.ndarray, x0_hat: np.ndarray, t: int, t_prev: int
) -> np.ndarray:
    """Deterministic DDIM update from step t to t_prev (eta = 0)."""
    if not (schedule.n_steps >= t > t_prev >= 0):
        raise ValueError(f"need n_steps >= t > t_prev >= 0, got t={t}, t_prev={t_prev}")
    if t_prev == 0:
        return x0_hat
    ab_t = schedule.alpha_bar_at(t)
    ab_prev = schedule.alpha_bar_at(t_prev)
    eps_implied = (x_t - np.sqrt(ab_t) * x0_hat) / np.sqrt(1.0 - ab_t)
    return np.sqrt(ab_prev) * x0_hat + np.sqrt(1.0 - ab_prev) * eps_implied


def sampling_steps(schedule: NoiseSchedule, steps: int) -> np.ndarray:
    """Descending uniform-stride sub-schedule over [1, T]."""
    if not 1 <= steps <= schedule.n_steps:
        raise ValueError(f"steps must lie in [1, {schedule.n_steps}]")
    if steps == 1:
        return np.array([schedule.n_steps], dtype=int)
    ts = np.linspace(schedule.n_steps, 1, steps)
    return np.unique(np.round(ts).astype(int))[::-1].copy()


def sample(
    denoiser: DenoiserFn,
    n_frames: int,
    width: int,
    schedule: NoiseSchedule,
    spec: ConstraintSpec | None = None,
    text_embedding: np.ndarray | None = None,
    weights: GuidanceWeights = GuidanceWeights(),
    steps: int = 100,
    seed: int = 0,
    fps: float = 30.0,
    initial_noise: np.ndarray | None = None,
    final_imputation: bool = True,
) -> MotionFeatures:
    """Run the full DDIM reverse process; returns normalized features.

    After the last step any masked entries are overwritten with their targets
    once more, so constrained dims match the targets exactly in feature space.
    Evaluation harnesses disable final_imputation to measure how well the
    denoiser itself follows constraints.
    """
    if spec is not None and spec.target.shape != (n_frames, width):
        raise ValueError("constraint spec shape does not match requested motion")
    if initial_noise is not None:
        x = np.array(initial_noise, dtype=np.float64)
        if x.shape != (n_frames, width):
            raise ValueError("initial_noise shape mismatch")
    else:
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((n_frames, width))

    ts = sampling_steps(schedule, steps)
    for i, t in enumerate(ts):
        t_prev = int(ts[i + 1]) if i + 1 < len(ts) else 0
        x0_hat = guided_x0(denoiser, x, int(t), spec, text_embedding, weights)
        x = ddim_step(schedule, x, x0_hat, int(t), t_prev)
    if final_imputation and spec is not None and not spec.is_empty:
        x = impute(x, spec)
    return MotionFeatures(x, fps=fps, normalized=True)


class EmaState:
    """Exponential moving average over a dict of arrays/tensors.

    Updates apply only when the global step is a multiple of the interval;
    the shadow is initialized from the first parameter snapshot.
    """

    def __init__(self, params: dict, decay: float = 0.995, update_interval: int = 10):
        if not 0.0 <= decay < 1.0:
            raise ValueError("decay must lie in [0, 1)")
        self.decay = decay
        self.update_interval = update_interval
        self.shadow = {k: _clone(v) for k, v in params.items()}

    def update(self, params: dict, global_step: int) -> bool:
        """Blend current params in when due; returns True when applied."""
        if global_step % self.update_interval != 0:
            return False
        if set(params) != set(self.shadow):
            raise ValueError("parameter name set changed since EMA init")
        for k, v in params.items():
            if self.shadow[k].shape != v.shape:
                raise ValueError(f"parameter {k} changed shape")
            self.shadow[k] *= self.decay
            self.shadow[k] += (1.0 - self.decay) * v
        return True

    def copy_to(self, params: dict) -> None:
        """Write the shadow values into a parameter dict (swap-in)."""
        for k in self.shadow:
            params[k][...] = self.shadow[k]


def _clone(v):
    if hasattr(v, "detach"):
        return v.detach().clone()
    return np.array(v, copy=True)
