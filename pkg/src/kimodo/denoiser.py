"""Two-stage transformer denoiser and the deterministic toy text embedder.

Stage 1 (root) reads the full masked-motion input and predicts the global
root block; the prediction is converted to the local root representation and
concatenated with the body features (and their mask) as input to stage 2,
which predicts the body block. Both stages run at every denoising step and
the whole thing is differentiable end to end.

Variants: `one_stage` denoises everything with a single (deeper) encoder at a
matched parameter count; `second_stage_global` skips the local-root
conversion and feeds the raw global root prediction to stage 2.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, asdict

import numpy as np
import torch
import torch.nn as nn

from .diffkin import local_root_from_global
from .motion_repr import FeatureLayout

VARIANTS = ("two_stage", "one_stage", "second_stage_global")


@dataclass
class DenoiserConfig:
    n_joints: int = 27
    n_layers: int = 4
    n_heads: int = 4
    latent_dim: int = 256
    extra_tokens: int = 49  # P
    text_dim: int = 256
    max_frames: int = 300
    dropout: float = 0.1
    variant: str = "two_stage"
    one_stage_layers: int | None = None  # defaults to 2 * n_layers

    def __post_init__(self):
        if self.latent_dim % self.n_heads != 0:
            raise ValueError("latent_dim must be divisible by n_heads")
        if self.extra_tokens < 0:
            raise ValueError("extra_tokens must be >= 0")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.one_stage_layers is None:
            self.one_stage_layers = 2 * self.n_layers

    @property
    def feature_width(self) -> int:
        return FeatureLayout(self.n_joints).width

    @property
    def n_cond_tokens(self) -> int:
        """text + dir + step + P extras."""
        return 3 + self.extra_tokens

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "DenoiserConfig":
        return cls(**data)


def sinusoidal_embedding(positions: torch.Tensor, dim: int) -> torch.Tensor:
    """Standard transformer sinusoid table for integer positions [...]."""
    half = dim // 2
    freqs = torch.exp(
        torch.arange(half, dtype=torch.float32, device=positions.device)
        * (-math.log(10000.0) / max(half - 1, 1))
    )
    args = positions.float().unsqueeze(-1) * freqs
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=-1)
    if dim % 2 == 1:
        emb = torch.nn.functional.pad(emb, (0, 1))
    return emb


class _Stage(nn.Module):
    """One transformer encoder stage with its own embeddings and head."""

    def __init__(self, config: DenoiserConfig, in_dim: int, out_dim: int, n_layers: int):
        super().__init__()
        self.config = config
        lat = config.latent_dim
        self.frame_embed = nn.Linear(in_dim, lat)
        self.text_embed = nn.Linear(config.text_dim, lat)
        self.dir_embed = nn.Linear(2, lat)
        self.step_mlp = nn.Sequential(nn.Linear(lat, lat), nn.GELU(), nn.Linear(lat, lat))
        layer = nn.TransformerEncoderLayer(
            d_model=lat,
            nhead=config.n_heads,
            dim_feedforward=4 * lat,
            dropout=config.dropout,
            activation="gelu",
            batch_first=True,
            norm_first=True,
        )
        self.encoder = nn.TransformerEncoder(layer, n_layers, enable_nested_tensor=False)
        self.head = nn.Linear(lat, out_dim)
        max_tokens = config.max_frames + config.n_cond_tokens
        pe = sinusoidal_embedding(torch.arange(max_tokens), lat)
        self.register_buffer("pos_encoding", pe, persistent=False)

    def assemble_tokens(
        self,
        x_in: torch.Tensor,  # [B, N, in_dim]
        text: torch.Tensor,  # [B, text_dim] (null rows already substituted)
        c_dir: torch.Tensor,  # [B, 2]
        t: torch.Tensor,  # [B]
        lengths: torch.Tensor | None,
    ) -> tuple[torch.Tensor, torch.Tensor | None]:
        """Build the token sequence [B, P+3+N, latent] and its padding mask."""
        b, n, _ = x_in.shape
        cfg = self.config
        if n > cfg.max_frames:
            raise ValueError(f"{n} frames exceeds max_frames={cfg.max_frames}")
        lat = cfg.latent_dim
        dtype = self.frame_embed.weight.dtype
        tokens = [self.text_embed(text).unsqueeze(1), self.dir_embed(c_dir).unsqueeze(1)]
        step = self.step_mlp(sinusoidal_embedding(t, lat).to(dtype))
        tokens.append(step.unsqueeze(1))
        if cfg.extra_tokens > 0:
            zeros = x_in.new_zeros(b, cfg.extra_tokens, cfg.text_dim)
            tokens.append(self.text_embed(zeros))
        tokens.append(self.frame_embed(x_in))
        seq = torch.cat(tokens, dim=1)
        seq = seq + self.pos_encoding[: seq.shape[1]].to(seq.dtype)

        padding_mask = None
        if lengths is not None:
            n_cond = cfg.n_cond_tokens
            frame_idx = torch.arange(n, device=x_in.device)
            pad = frame_idx[None, :] >= lengths[:, None]
            padding_mask = torch.cat(
                [torch.zeros(b, n_cond, dtype=torch.bool, device=x_in.device), pad], dim=1
            )
        return seq, padding_mask

    def forward(self, x_in, text, c_dir, t, lengths):
        seq, padding_mask = self.assemble_tokens(x_in, text, c_dir, t, lengths)
        out = self.encoder(seq, src_key_padding_mask=padding_mask)
        frames = out[:, self.config.n_cond_tokens :]
        return self.head(frames)


class MotionDenoiser(nn.Module):
    """Predicts the clean motion from a masked noisy motion plus conditions.

    forward() input is [B, N, 2D] (imputed features concatenated with the
    control mask); output is [B, N, D].
    """

    def __init__(self, config: DenoiserConfig):
        super().__init__()
        self.config = config
        d = config.feature_width
        self.null_text = nn.Parameter(torch.zeros(config.text_dim))
        nn.init.normal_(self.null_text, std=0.02)
        if config.variant == "one_stage":
            self.stage_all = _Stage(config, 2 * d, d, config.one_stage_layers)
        else:
            body = d - 5
            root_in = 4 if config.variant == "two_stage" else 5
            self.stage_root = _Stage(config, 2 * d, 5, config.n_layers)
            self.stage_body = _Stage(config, root_in + 2 * body, body, config.n_layers)

    def substitute_null_text(
        self, text: torch.Tensor | None, present: torch.Tensor | None, batch: int
    ) -> torch.Tensor:
        """Replace absent / dropped prompts with the learned null embedding."""
        null = self.null_text.unsqueeze(0).expand(batch, -1)
        if text is None:
            return null
        if present is None:
            return text
        return torch.where(present.unsqueeze(1), text, null)

    def forward(
        self,
        x_in: torch.Tensor,  # [B, N, 2D]
        t: torch.Tensor,  # [B]
        c_dir: torch.Tensor,  # [B, 2]
        text: torch.Tensor | None = None,  # [B, text_dim]
        text_present: torch.Tensor | None = None,  # [B] bool
        lengths: torch.Tensor | None = None,  # [B]
    ) -> torch.Tensor:
        b, n, two_d = x_in.shape
        d = self.config.feature_width
        if two_d != 2 * d:
            raise ValueError(f"expected input width {2 * d}, got {two_d}")
        text_emb = self.substitute_null_text(text, text_present, b)

        if self.config.variant == "one_stage":
            return self.stage_all(x_in, text_emb, c_dir, t, lengths)

        root_glob = self.stage_root(x_in, text_emb, c_dir, t, lengths)  # [B, N, 5]
        if self.config.variant == "two_stage":
            root_for_body = local_root_from_global(root_glob, lengths)  # [B, N, 4]
        else:
            root_for_body = root_glob
        body_slice = torch.cat([x_in[:, :, 5:d], x_in[:, :, d + 5 :]], dim=2)
        body_in = torch.cat([root_for_body, body_slice], dim=2)
        body = self.stage_body(body_in, text_emb, c_dir, t, lengths)
        return torch.cat([root_glob, body], dim=2)

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def parameter_count_report(self) -> dict:
        report = {"total": self.parameter_count()}
        for name, module in self.named_children():
            if isinstance(module, nn.Module):
                report[name] = sum(p.numel() for p in module.parameters())
        return report


def _stage_param_count(latent: int, layers: int, in_dim: int, out_dim: int, text_dim: int) -> int:
    """Closed-form parameter count of one _Stage (verified against torch)."""
    per_layer = 12 * latent * latent + 13 * latent
    embeds = (in_dim + 1) * latent + (text_dim + 1) * latent + 3 * latent
    step_mlp = 2 * (latent * latent + latent)
    head = (latent + 1) * out_dim
    return layers * per_layer + embeds + step_mlp + head


def denoiser_param_count(config: DenoiserConfig) -> int:
    d = config.feature_width
    if config.variant == "one_stage":
        total = _stage_param_count(
            config.latent_dim, config.one_stage_layers, 2 * d, d, config.text_dim
        )
    else:
        body = d - 5
        root_in = 4 if config.variant == "two_stage" else 5
        total = _stage_param_count(config.latent_dim, config.n_layers, 2 * d, 5, config.text_dim)
        total += _stage_param_count(
            config.latent_dim, config.n_layers, root_in + 2 * body, body, config.text_dim
        )
    return total + config.text_dim  # null text embedding


def matched_one_stage_config(base: DenoiserConfig, tolerance: float = 0.05) -> DenoiserConfig:
    """One-stage variant whose parameter count matches the two-stage base.

    Searches layer counts near 2x and latent sizes in head multiples, since
    doubling layers alone under-counts when embeddings dominate at small
    scale.
    """
    target = denoiser_param_count(base)
    best = None
    for layers in range(2 * base.n_layers - 1, 2 * base.n_layers + 4):
        if layers < 1:
            continue
        for bump in range(0, 16):
            latent = base.latent_dim + bump * base.n_heads
            candidate = DenoiserConfig(
                **{
                    **base.to_dict(),
                    "variant": "one_stage",
                    "one_stage_layers": layers,
                    "latent_dim": latent,
                }
            )
            count = denoiser_param_count(candidate)
            err = abs(count - target) / target
            if best is None or err < best[0]:
                best = (err, candidate)
    err, candidate = best
    if err > tolerance:
        raise ValueError(f"could not match parameter count within {tolerance:.0%} (best {err:.1%})")
    return candidate


class HashedTextEmbedder:
    """Deterministic bag-of-ngrams text encoder (stand-in for a large frozen
    language embedder behind the same interface; paper-scale systems plug a
    4096-dim model in here).

    Hashing uses blake2b so vectors are stable across processes and runs.
    A small learned projection inside each denoiser stage adapts the codes
    during training.
    """

    def __init__(self, dim: int = 256):
        self.dim = dim

    def _bucket(self, gram: str) -> tuple[int, float]:
        digest = hashlib.blake2b(gram.encode("utf-8"), digest_size=8).digest()
        idx = int.from_bytes(digest[:4], "little") % self.dim
        sign = 1.0 if digest[4] % 2 == 0 else -1.0
        return idx, sign

    def embed(self, prompt: str) -> np.ndarray:
        if not prompt or not prompt.strip():
            raise ValueError("empty prompt has no embedding; use the null condition")
        words = [w for w in "".join(c.lower() if c.isalnum() else " " for c in prompt).split() if w]
        grams = list(words)
        grams += [f"{a}_{b}" for a, b in zip(words, words[1:])]
        vec = np.zeros(self.dim, dtype=np.float64)
        for gram in grams:
            idx, sign = self._bucket(gram)
            vec[idx] += sign
        norm = np.linalg.norm(vec)
        if norm > 0:
            vec /= norm
        return vec
