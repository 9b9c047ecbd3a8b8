"""Inter-sample augmentation: batch attention, vicinal sampling, mixup,
and training-set composition.

All ops act on already-encoded per-sample representations: a single vector
per sample for classification, or a padded token-state matrix plus mask for
sequence labeling (where a pooled mean over real tokens stands in for the
sample vector).  Everything here is train-path only; the eval path is the
identity (`eval_passthrough`), which is what makes per-sample predictions
independent of batch composition.

Rounding conventions for the two ratio knobs are pinned for determinism:
the vicinal split uses round-half-up, the composition counts use floor, and
both add a 1e-9 fuzz so ratios like 0.6 behave as the decimal they denote
rather than their nearest-binary neighbours.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Union

import torch
from torch import nn


# ---------------------------------------------------------------------------
# targets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HardClass:
    """Single class label (relation classification)."""

    label: int


@dataclass(frozen=True)
class HardSeq:
    """Per-token tag ids (sequence labeling)."""

    tags: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "tags", tuple(int(t) for t in self.tags))
        if len(self.tags) < 1:
            raise ValueError("HardSeq needs at least one tag")


HardTarget = Union[HardClass, HardSeq]


@dataclass(frozen=True)
class Mixed:
    """Convex combination of two hard targets with coefficient lam on `a`."""

    lam: float
    a: HardTarget
    b: HardTarget

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lam must be in [0, 1], got {self.lam}")
        for t in (self.a, self.b):
            if not isinstance(t, (HardClass, HardSeq)):
                raise ValueError("Mixed may only nest hard targets")


Target = Union[HardClass, HardSeq, Mixed]


# ---------------------------------------------------------------------------
# batch container
# ---------------------------------------------------------------------------

@dataclass
class BatchReps:
    """A batch of per-sample representations plus their targets.

    Exactly one of `vecs` (B, C) or `states` (B, n, d) with `mask` (B, n)
    must be provided.
    """

    targets: list
    vecs: Optional[torch.Tensor] = None
    states: Optional[torch.Tensor] = None
    mask: Optional[torch.Tensor] = None

    def __post_init__(self):
        if (self.vecs is None) == (self.states is None):
            raise ValueError("provide exactly one of vecs or states")
        if self.states is not None:
            if self.mask is None:
                raise ValueError("sequence reps need a mask")
            if self.states.shape[:2] != self.mask.shape:
                raise ValueError("states and mask disagree on (B, n)")
            data = self.states
        else:
            if self.mask is not None:
                raise ValueError("mask is only valid with states")
            data = self.vecs
        if data.dim() not in (2, 3) or data.shape[0] < 1:
            raise ValueError(f"bad rep shape {tuple(data.shape)}")
        if len(self.targets) != data.shape[0]:
            raise ValueError(
                f"{len(self.targets)} targets for batch of {data.shape[0]}")
        if not bool(torch.isfinite(data.detach()).all()):
            raise ValueError("non-finite representations")

    @property
    def batch_size(self) -> int:
        return (self.vecs if self.vecs is not None else self.states).shape[0]

    @property
    def is_sequence(self) -> bool:
        return self.states is not None

    def pooled(self) -> torch.Tensor:
        """(B, C) sample vectors: `vecs`, or the mean over real positions."""
        if self.vecs is not None:
            return self.vecs
        counts = self.mask.sum(dim=1).clamp(min=1)
        total = (self.states * self.mask.unsqueeze(-1).to(self.states.dtype)).sum(dim=1)
        return total / counts.unsqueeze(-1).to(self.states.dtype)


def _check_aligned(a: BatchReps, b: BatchReps, what: str) -> None:
    if a.batch_size != b.batch_size or a.is_sequence != b.is_sequence:
        raise ValueError(f"{what}: misaligned batches")
    if a.targets != b.targets:
        raise ValueError(f"{what}: target lists differ")


# ---------------------------------------------------------------------------
# rounding helpers
# ---------------------------------------------------------------------------

def split_count(batch_size: int, ratio: float) -> int:
    """round(ratio * B), half away from zero, with decimal-ratio fuzz."""
    return int(math.floor(ratio * batch_size + 0.5 + 1e-9))

def floor_count(batch_size: int, ratio: float) -> int:
    """floor(ratio * B) with decimal-ratio fuzz."""
    return int(math.floor(ratio * batch_size + 1e-9))


# ---------------------------------------------------------------------------
# batch attention
# ---------------------------------------------------------------------------

class BatchAttention(nn.Module):
    """Multi-head attention across the samples of a batch.

    Per head, each sample's pooled vector is scored with v' tanh(W h + b),
    the scores are normalized over the batch axis, and the resulting mixture
    of pooled vectors becomes a context that is projected, dropped out, added
    residually, and layer-normalized.  For sequence reps the context is
    broadcast onto every real token position before the norm.
    """

    def __init__(self, dim: int, num_heads: int = 4, dropout: float = 0.2):
        super().__init__()
        if num_heads < 1:
            raise ValueError("num_heads must be >= 1")
        self.dim = dim
        self.num_heads = num_heads
        bound = 1.0 / math.sqrt(dim)
        self.score_w = nn.Parameter(torch.empty(num_heads, dim, dim).uniform_(-bound, bound))
        self.score_b = nn.Parameter(torch.zeros(num_heads, dim))
        self.score_v = nn.Parameter(torch.empty(num_heads, dim).uniform_(-bound, bound))
        self.proj = nn.Linear(num_heads * dim, dim)
        self.drop = nn.Dropout(dropout)
        self.norm = nn.LayerNorm(dim, eps=1e-9)

    def attention_weights(self, pooled: torch.Tensor) -> torch.Tensor:
        """(B, dim) -> (num_heads, B, B) row-stochastic weights.

        The score of sample j does not depend on the query row i, so all rows
        of a head's matrix are identical; the batch-axis softmax is what makes
        each row sum to one.
        """
        if pooled.dim() != 2 or pooled.shape[0] < 1:
            raise ValueError(f"pooled must be (B, dim), got {tuple(pooled.shape)}")
        B = pooled.shape[0]
        hidden = torch.tanh(torch.einsum("bd,hed->hbe", pooled, self.score_w)
                            + self.score_b.unsqueeze(1))
        scores = (hidden * self.score_v.unsqueeze(1)).sum(dim=-1)
        if not bool(torch.isfinite(scores).all()):
            raise ValueError("non-finite attention scores")
        weights = torch.softmax(scores, dim=1)
        return weights.unsqueeze(1).expand(self.num_heads, B, B)

    def forward(self, batch: BatchReps) -> BatchReps:
        pooled = batch.pooled()
        weights = self.attention_weights(pooled)
        context = torch.einsum("hbj,jd->bhd", weights, pooled)
        context = context.reshape(pooled.shape[0], self.num_heads * self.dim)
        context = self.drop(self.proj(context))
        if batch.is_sequence:
            real = batch.mask.unsqueeze(-1).to(batch.states.dtype)
            out = self.norm(batch.states + context.unsqueeze(1)) * real
            return BatchReps(targets=list(batch.targets), states=out,
                             mask=batch.mask)
        out = self.norm(batch.vecs + context)
        return BatchReps(targets=list(batch.targets), vecs=out)


# ---------------------------------------------------------------------------
# vicinal sampling, mixup, composition
# ---------------------------------------------------------------------------

def vicinal_sample(batch: BatchReps, transformed: BatchReps,
                   sample_ratio: float, rng) -> BatchReps:
    """Row-wise mix of originals and transformed reps.

    Exactly round(sample_ratio * B) row indices, drawn without replacement,
    keep their original representation; the rest take the transformed one.
    Row order and targets are preserved.
    """
    if not 0.0 <= sample_ratio <= 1.0:
        raise ValueError(f"sample_ratio must be in [0, 1], got {sample_ratio}")
    _check_aligned(batch, transformed, "vicinal_sample")
    B = batch.batch_size
    n_orig = split_count(B, sample_ratio)
    chosen = rng.choice(B, size=n_orig, replace=False) if n_orig else []
    take = torch.zeros(B, dtype=torch.bool)
    take[[int(i) for i in chosen]] = True
    if batch.is_sequence:
        states = torch.where(take[:, None, None], batch.states, transformed.states)
        return BatchReps(targets=list(batch.targets), states=states,
                         mask=batch.mask)
    vecs = torch.where(take[:, None], batch.vecs, transformed.vecs)
    return BatchReps(targets=list(batch.targets), vecs=vecs)


def mixup_synthesize(batch: BatchReps, beta_alpha: float, rng) -> BatchReps:
    """B synthetic rows, each a Beta(alpha, alpha) convex combination of a
    uniformly drawn pair of distinct rows; targets become Mixed."""
    B = batch.batch_size
    if B < 2:
        raise ValueError("mixup needs at least 2 rows")
    if beta_alpha <= 0:
        raise ValueError("beta_alpha must be > 0")
    left, right, lams = [], [], []
    for _ in range(B):
        i = int(rng.integers(B))
        j = int(rng.integers(B - 1))
        if j >= i:
            j += 1
        left.append(i)
        right.append(j)
        lams.append(float(rng.beta(beta_alpha, beta_alpha)))
    li = torch.as_tensor(left)
    ri = torch.as_tensor(right)
    targets = [Mixed(lam, batch.targets[i], batch.targets[j])
               for lam, i, j in zip(lams, left, right)]
    if batch.is_sequence:
        lam_t = torch.as_tensor(lams, dtype=batch.states.dtype)[:, None, None]
        states = lam_t * batch.states[li] + (1.0 - lam_t) * batch.states[ri]
        mask = batch.mask[li] | batch.mask[ri]
        return BatchReps(targets=targets, states=states, mask=mask)
    lam_t = torch.as_tensor(lams, dtype=batch.vecs.dtype)[:, None]
    vecs = lam_t * batch.vecs[li] + (1.0 - lam_t) * batch.vecs[ri]
    return BatchReps(targets=targets, vecs=vecs)


def compose_training_set(batch: BatchReps, transformed: BatchReps,
                         synthetic: BatchReps, compose_ratio: float,
                         rng) -> BatchReps:
    """All B original rows, plus floor(ratio * B) transformed rows and
    floor((1 - ratio) * B) synthetic rows, both sampled without replacement.
    Original rows come first."""
    if not 0.0 <= compose_ratio <= 1.0:
        raise ValueError(f"compose_ratio must be in [0, 1], got {compose_ratio}")
    _check_aligned(batch, transformed, "compose_training_set")
    if synthetic.batch_size != batch.batch_size \
            or synthetic.is_sequence != batch.is_sequence:
        raise ValueError("compose_training_set: misaligned synthetic batch")
    B = batch.batch_size
    n_star = floor_count(B, compose_ratio)
    n_syn = floor_count(B, 1.0 - compose_ratio)
    idx_star = sorted(int(i) for i in rng.choice(B, size=n_star, replace=False)) \
        if n_star else []
    idx_syn = sorted(int(i) for i in rng.choice(B, size=n_syn, replace=False)) \
        if n_syn else []
    targets = (list(batch.targets)
               + [transformed.targets[i] for i in idx_star]
               + [synthetic.targets[i] for i in idx_syn])
    star_t = torch.as_tensor(idx_star, dtype=torch.long)
    syn_t = torch.as_tensor(idx_syn, dtype=torch.long)
    if batch.is_sequence:
        states = torch.cat([batch.states, transformed.states[star_t],
                            synthetic.states[syn_t]])
        mask = torch.cat([batch.mask, transformed.mask[star_t],
                          synthetic.mask[syn_t]])
        return BatchReps(targets=targets, states=states, mask=mask)
    vecs = torch.cat([batch.vecs, transformed.vecs[star_t], synthetic.vecs[syn_t]])
    return BatchReps(targets=targets, vecs=vecs)


def eval_passthrough(batch: BatchReps) -> BatchReps:
    """Identity: test-time reps are used directly, no transform or synthesis."""
    return batch
