"""Text and image encoders.

The text side is a small from-scratch transformer that accepts one extra
"prompt" vector per layer: the vector is prepended as an additional sequence
position before self-attention and stripped afterwards, so returned states
always align one-to-one with the input tokens.  The image side is a single
convolutional backbone shared between per-object feature extraction and the
pooled whole-image embedding.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from mmie.data import NUM_OBJECTS, ConfigError


@dataclass(frozen=True)
class TextEncoderConfig:
    vocab_size: int
    d_model: int = 64
    num_layers: int = 2
    num_heads: int = 4
    ffn_dim: int = 128
    max_len: int = 32
    dropout: float = 0.1

    def validate(self) -> None:
        if self.vocab_size < 1:
            raise ConfigError("vocab_size must be >= 1")
        if self.num_layers < 1:
            raise ConfigError("num_layers must be >= 1")
        if self.d_model % self.num_heads != 0:
            raise ConfigError(
                f"d_model {self.d_model} not divisible by num_heads {self.num_heads}")
        if not 0 <= self.dropout < 1:
            raise ConfigError("dropout must be in [0, 1)")
        if self.max_len < 1:
            raise ConfigError("max_len must be >= 1")


@dataclass(frozen=True)
class ImageBackboneConfig:
    in_channels: int = 3
    level_channels: tuple[int, ...] = (16, 32)
    kernel_size: int = 3

    @property
    def num_levels(self) -> int:
        return len(self.level_channels)

    @property
    def pooled_dim(self) -> int:
        return self.level_channels[-1]

    def validate(self) -> None:
        if not self.level_channels:
            raise ConfigError("level_channels must be non-empty")
        if self.kernel_size % 2 != 1:
            raise ConfigError("kernel_size must be odd (same-padding)")


class ImageBackbone(nn.Module):
    """Conv -> GELU -> AvgPool(2) per level; one weight set serves both the
    object crops and the whole image."""

    def __init__(self, cfg: ImageBackboneConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        blocks = []
        c_in = cfg.in_channels
        for c_out in cfg.level_channels:
            blocks.append(nn.Sequential(
                nn.Conv2d(c_in, c_out, cfg.kernel_size, padding=cfg.kernel_size // 2),
                nn.GELU(),
                nn.AvgPool2d(2),
            ))
            c_in = c_out
        self.blocks = nn.ModuleList(blocks)

    def features(self, x: torch.Tensor) -> list[torch.Tensor]:
        """Per-level feature maps for a (B, C, H, W) batch."""
        if x.dim() != 4 or x.shape[1] != self.cfg.in_channels:
            raise ValueError(f"expected (B, {self.cfg.in_channels}, H, W), "
                             f"got {tuple(x.shape)}")
        out = []
        for block in self.blocks:
            x = block(x)
            out.append(x)
        return out

    def encode_objects(self, objects: torch.Tensor) -> list[torch.Tensor]:
        """Per-level features for (B, num_objects, C, h, w) crop stacks.

        Returns one (B, num_objects, C_l, h_l, w_l) tensor per level.
        """
        if objects.dim() != 5 or objects.shape[1] != NUM_OBJECTS:
            raise ValueError(
                f"expected (B, {NUM_OBJECTS}, C, h, w), got {tuple(objects.shape)}")
        B, m = objects.shape[:2]
        flat = objects.reshape(B * m, *objects.shape[2:])
        return [f.reshape(B, m, *f.shape[1:]) for f in self.features(flat)]

    def encode_image(self, image: torch.Tensor) -> torch.Tensor:
        """(B, C, H, W) -> (B, pooled_dim) global summary vector."""
        return self.features(image)[-1].mean(dim=(2, 3))


class TransformerLayer(nn.Module):
    """Post-norm self-attention block with a GELU feed-forward."""

    def __init__(self, d_model: int, num_heads: int, ffn_dim: int, dropout: float):
        super().__init__()
        self.attn = nn.MultiheadAttention(d_model, num_heads, dropout=dropout,
                                          batch_first=True)
        self.ffn = nn.Sequential(
            nn.Linear(d_model, ffn_dim),
            nn.GELU(),
            nn.Dropout(dropout),
            nn.Linear(ffn_dim, d_model),
        )
        self.norm1 = nn.LayerNorm(d_model)
        self.norm2 = nn.LayerNorm(d_model)
        self.drop = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor, key_padding_mask=None) -> torch.Tensor:
        attn_out, _ = self.attn(x, x, x, key_padding_mask=key_padding_mask,
                                need_weights=False)
        x = self.norm1(x + self.drop(attn_out))
        x = self.norm2(x + self.drop(self.ffn(x)))
        return x


class PromptTextEncoder(nn.Module):
    """Token transformer with per-layer prompt injection.

    At layer l the prompt vector for that layer is prepended as one extra
    sequence position (no positional embedding of its own), attends with the
    words in both directions, and is stripped from the layer output, so the
    result always has exactly one row per input token.
    """

    def __init__(self, cfg: TextEncoderConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.token_embed = nn.Embedding(cfg.vocab_size, cfg.d_model)
        self.pos_embed = nn.Embedding(cfg.max_len, cfg.d_model)
        self.drop = nn.Dropout(cfg.dropout)
        self.layers = nn.ModuleList([
            TransformerLayer(cfg.d_model, cfg.num_heads, cfg.ffn_dim, cfg.dropout)
            for _ in range(cfg.num_layers)
        ])

    def forward(self, tokens: torch.Tensor, mask: torch.Tensor | None = None,
                prompts: list[torch.Tensor] | None = None) -> torch.Tensor:
        """tokens (B, n) int64, mask (B, n) bool with True = real token,
        prompts: one (B, d_model) vector per layer or None. Returns (B, n, d)."""
        if tokens.dim() != 2:
            raise ValueError(f"tokens must be (B, n), got {tuple(tokens.shape)}")
        B, n = tokens.shape
        if n > self.cfg.max_len:
            raise ValueError(f"sequence length {n} exceeds max_len {self.cfg.max_len}")
        if prompts is not None and len(prompts) != len(self.layers):
            raise ValueError(
                f"need one prompt per layer ({len(self.layers)}), got {len(prompts)}")
        if mask is None:
            mask = torch.ones(B, n, dtype=torch.bool, device=tokens.device)

        pos = torch.arange(n, device=tokens.device)
        x = self.drop(self.token_embed(tokens) + self.pos_embed(pos))
        pad = ~mask
        for i, layer in enumerate(self.layers):
            if prompts is None:
                x = layer(x, key_padding_mask=pad)
                continue
            p = prompts[i]
            if p.shape != (B, self.cfg.d_model):
                raise ValueError(
                    f"prompt {i} must be ({B}, {self.cfg.d_model}), got {tuple(p.shape)}")
            x = torch.cat([p.unsqueeze(1), x], dim=1)
            kpm = torch.cat([torch.zeros(B, 1, dtype=torch.bool, device=pad.device),
                             pad], dim=1)
            x = layer(x, key_padding_mask=kpm)[:, 1:]
        return x
