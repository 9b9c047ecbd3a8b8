"""Prompt construction from object features and the semantic KL loss.

The prompt signal is one vector per text layer: object features are averaged
over objects and spatial extent, then projected to the text width by a
level-specific linear map (the pointwise-convolution equivalent on pooled
vectors).  The semantic loss is the closed-form KL divergence between two
diagonal Gaussians: a textual prior read off the pooled token states and a
visual distribution read off the pooled image embedding.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

LOGVAR_MIN = -10.0
LOGVAR_MAX = 10.0


@dataclass
class GaussianParams:
    """Diagonal Gaussian over k dims; tensors are (..., k)."""

    mean: torch.Tensor
    logvar: torch.Tensor

    def __post_init__(self):
        if self.mean.shape != self.logvar.shape:
            raise ValueError(
                f"mean/logvar shapes differ: {tuple(self.mean.shape)} vs "
                f"{tuple(self.logvar.shape)}")


def masked_mean(states: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Mean of (B, n, d) states over positions where mask (B, n) is True."""
    counts = mask.sum(dim=1)
    if int(counts.min()) < 1:
        raise ValueError("every row needs at least one unmasked position")
    total = (states * mask.unsqueeze(-1).to(states.dtype)).sum(dim=1)
    return total / counts.unsqueeze(-1).to(states.dtype)


class PromptProjector(nn.Module):
    """Object feature stacks -> one prompt vector per text layer."""

    def __init__(self, level_channels: tuple[int, ...], d_model: int):
        super().__init__()
        self.proj = nn.ModuleList([nn.Linear(c, d_model) for c in level_channels])

    def forward(self, object_features: list[torch.Tensor]) -> list[torch.Tensor]:
        """object_features[l]: (B, num_objects, C_l, h_l, w_l). Returns a list
        of (B, d_model) prompt vectors, one per level."""
        if len(object_features) != len(self.proj):
            raise ValueError(
                f"expected {len(self.proj)} feature levels, got {len(object_features)}")
        out = []
        for feats, proj in zip(object_features, self.proj):
            pooled = feats.mean(dim=(1, 3, 4))
            out.append(proj(pooled))
        return out


class GaussianHead(nn.Module):
    """Linear map emitting (mean, logvar) of a diagonal Gaussian."""

    def __init__(self, in_dim: int, latent_dim: int):
        super().__init__()
        self.latent_dim = latent_dim
        self.proj = nn.Linear(in_dim, 2 * latent_dim)

    def forward(self, x: torch.Tensor) -> GaussianParams:
        mean, logvar = self.proj(x).chunk(2, dim=-1)
        return GaussianParams(mean, logvar.clamp(LOGVAR_MIN, LOGVAR_MAX))


def gaussian_kl(p: GaussianParams, q: GaussianParams) -> torch.Tensor:
    """KL(p || q) between diagonal Gaussians, summed over the last dim."""
    if p.mean.shape[-1] != q.mean.shape[-1]:
        raise ValueError(
            f"dimension mismatch: {p.mean.shape[-1]} vs {q.mean.shape[-1]}")
    for t in (p.mean, p.logvar, q.mean, q.logvar):
        if not bool(torch.isfinite(t).all()):
            raise ValueError("non-finite Gaussian parameters")
    term = (torch.exp(p.logvar - q.logvar)
            + (q.mean - p.mean).pow(2) * torch.exp(-q.logvar)
            - 1.0 + q.logvar - p.logvar)
    return 0.5 * term.sum(dim=-1)


def semantic_loss(p_gamma: GaussianParams, p_beta: GaussianParams) -> torch.Tensor:
    """Batch-mean KL(textual prior || visual distribution): scalar >= 0."""
    return gaussian_kl(p_gamma, p_beta).mean()
