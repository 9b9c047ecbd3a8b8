"""Linear-chain CRF with exact NLL, analytic gradients, and Viterbi decoding.

The sequential recursions run in the selected kernel (see ``kernels``);
gradients w.r.t. emissions, transitions and boundary scores are the exact
forward-backward marginals, wired into autograd through a custom Function.
Scores are unnormalized log-potentials; transitions are indexed [from, to].
"""

from __future__ import annotations

import numpy as np
import torch
from torch import nn

from mmie.kernels import crf_kernel


def _check_inputs(emissions, transitions, start, end, lengths, tags=None):
    if emissions.dim() != 3:
        raise ValueError(f"emissions must be (S, n, L), got {tuple(emissions.shape)}")
    S, n_max, L = emissions.shape
    if transitions.shape != (L, L):
        raise ValueError(f"transitions must be ({L}, {L}), got {tuple(transitions.shape)}")
    if start.shape != (L,) or end.shape != (L,):
        raise ValueError(f"start/end must be ({L},)")
    if lengths.shape != (S,):
        raise ValueError(f"lengths must be ({S},), got {tuple(lengths.shape)}")
    if int(lengths.min()) < 1 or int(lengths.max()) > n_max:
        raise ValueError("sequence lengths must lie in [1, n_max]")
    if tags is not None:
        if tags.shape != (S, n_max):
            raise ValueError(f"tags must be ({S}, {n_max}), got {tuple(tags.shape)}")
        mask = torch.arange(n_max).unsqueeze(0) < lengths.unsqueeze(1)
        used = tags[mask]
        if used.numel() and (int(used.min()) < 0 or int(used.max()) >= L):
            raise ValueError(f"tag ids must lie in [0, {L})")


def _np64(t: torch.Tensor) -> np.ndarray:
    return np.ascontiguousarray(t.detach().cpu().to(torch.float64).numpy())


def _npi64(t: torch.Tensor) -> np.ndarray:
    return np.ascontiguousarray(t.detach().cpu().to(torch.int64).numpy())


class _CrfNll(torch.autograd.Function):
    @staticmethod
    def forward(ctx, emissions, transitions, start, end, lengths, tags):
        nll, g_em, g_tr, g_st, g_en = crf_kernel.nll_grad(
            _np64(emissions), _npi64(lengths), _npi64(tags),
            _np64(transitions), _np64(start), _np64(end))
        ctx.save_for_backward(torch.from_numpy(g_em), torch.from_numpy(g_tr),
                              torch.from_numpy(g_st), torch.from_numpy(g_en))
        ctx.in_dtype = emissions.dtype
        return torch.from_numpy(nll).to(emissions.dtype)

    @staticmethod
    def backward(ctx, grad_out):
        g_em, g_tr, g_st, g_en = ctx.saved_tensors
        go = grad_out.to(torch.float64)
        grad_em = (g_em * go[:, None, None]).to(ctx.in_dtype)
        grad_tr = (g_tr * go[:, None, None]).sum(dim=0).to(ctx.in_dtype)
        grad_st = (g_st * go[:, None]).sum(dim=0).to(ctx.in_dtype)
        grad_en = (g_en * go[:, None]).sum(dim=0).to(ctx.in_dtype)
        return grad_em, grad_tr, grad_st, grad_en, None, None


def crf_nll(emissions: torch.Tensor, transitions: torch.Tensor,
            start: torch.Tensor, end: torch.Tensor,
            tags: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
    """-log p(tags | emissions) per sequence, differentiable in all scores."""
    _check_inputs(emissions, transitions, start, end, lengths, tags)
    return _CrfNll.apply(emissions, transitions, start, end, lengths, tags)


def crf_decode(emissions: torch.Tensor, transitions: torch.Tensor,
               start: torch.Tensor, end: torch.Tensor,
               lengths: torch.Tensor) -> tuple[list[list[int]], torch.Tensor]:
    """Viterbi paths (ties -> lowest tag id) and their scores."""
    _check_inputs(emissions, transitions, start, end, lengths)
    paths, scores = crf_kernel.viterbi(
        _np64(emissions), _npi64(lengths), _np64(transitions),
        _np64(start), _np64(end))
    out = [paths[s, : int(lengths[s])].tolist() for s in range(paths.shape[0])]
    return out, torch.from_numpy(scores).to(emissions.dtype)


class LinearChainCRF(nn.Module):
    """Learnable transition/boundary scores over a fixed tag set."""

    def __init__(self, num_tags: int):
        super().__init__()
        if num_tags < 1:
            raise ValueError("num_tags must be >= 1")
        self.num_tags = num_tags
        self.transitions = nn.Parameter(torch.zeros(num_tags, num_tags))
        self.start_scores = nn.Parameter(torch.zeros(num_tags))
        self.end_scores = nn.Parameter(torch.zeros(num_tags))

    def nll(self, emissions, tags, lengths,
            transition_penalty=None, start_penalty=None) -> torch.Tensor:
        trans = self.transitions
        start = self.start_scores
        if transition_penalty is not None:
            trans = trans + transition_penalty
        if start_penalty is not None:
            start = start + start_penalty
        return crf_nll(emissions, trans, start, self.end_scores, tags, lengths)

    @torch.no_grad()
    def decode(self, emissions, lengths,
               transition_penalty=None, start_penalty=None) -> list[list[int]]:
        trans = self.transitions
        start = self.start_scores
        if transition_penalty is not None:
            trans = trans + transition_penalty
        if start_penalty is not None:
            start = start + start_penalty
        paths, _ = crf_decode(emissions, trans, start, self.end_scores, lengths)
        return paths
