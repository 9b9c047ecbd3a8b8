"""Pure-numpy linear-chain CRF kernel.

Reference implementation of the same API as the compiled kernel in
``_crf_cy.pyx``: negative log-likelihood with analytic gradients via the
forward-backward recursions, and Viterbi decoding. All arrays are float64;
everything is computed in log space.
"""

from __future__ import annotations

import numpy as np


def _logsumexp(x: np.ndarray, axis: int) -> np.ndarray:
    m = np.max(x, axis=axis, keepdims=True)
    return (m + np.log(np.sum(np.exp(x - m), axis=axis, keepdims=True))).squeeze(axis)


def nll_grad(emissions: np.ndarray, lengths: np.ndarray, tags: np.ndarray,
             transitions: np.ndarray, start: np.ndarray, end: np.ndarray):
    """Per-sequence NLL and gradients w.r.t. every score table.

    emissions: (S, n_max, L); lengths: (S,); tags: (S, n_max) valid over the
    first lengths[s] positions; transitions: (L, L) indexed [from, to];
    start, end: (L,).

    Returns (nll, g_em, g_tr, g_st, g_en) where g_* hold d nll_s / d score
    per sequence: g_em (S, n_max, L), g_tr (S, L, L), g_st / g_en (S, L).
    """
    S, n_max, L = emissions.shape
    nll = np.zeros(S)
    g_em = np.zeros_like(emissions)
    g_tr = np.zeros((S, L, L))
    g_st = np.zeros((S, L))
    g_en = np.zeros((S, L))

    for s in range(S):
        n = int(lengths[s])
        em = emissions[s, :n]
        y = tags[s, :n]

        alpha = np.empty((n, L))
        alpha[0] = start + em[0]
        for t in range(1, n):
            alpha[t] = em[t] + _logsumexp(alpha[t - 1][:, None] + transitions, axis=0)
        logz = _logsumexp(alpha[n - 1] + end, axis=0)

        beta = np.empty((n, L))
        beta[n - 1] = end
        for t in range(n - 2, -1, -1):
            beta[t] = _logsumexp(transitions + (em[t + 1] + beta[t + 1])[None, :],
                                 axis=1)

        score = start[y[0]] + em[0, y[0]] + end[y[n - 1]]
        for t in range(1, n):
            score += transitions[y[t - 1], y[t]] + em[t, y[t]]
        nll[s] = logz - score

        # unary marginals p(y_t = k)
        unary = np.exp(alpha + beta - logz)
        g_em[s, :n] = unary
        g_em[s, np.arange(n), y] -= 1.0
        g_st[s] = unary[0]
        g_st[s, y[0]] -= 1.0
        g_en[s] = unary[n - 1]
        g_en[s, y[n - 1]] -= 1.0

        # pairwise marginals p(y_t = j, y_{t+1} = k)
        for t in range(n - 1):
            pair = np.exp(alpha[t][:, None] + transitions
                          + (em[t + 1] + beta[t + 1])[None, :] - logz)
            g_tr[s] += pair
            g_tr[s, y[t], y[t + 1]] -= 1.0

    return nll, g_em, g_tr, g_st, g_en


def viterbi(emissions: np.ndarray, lengths: np.ndarray, transitions: np.ndarray,
            start: np.ndarray, end: np.ndarray):
    """Best path per sequence; ties break toward the lowest tag id.

    Returns (paths (S, n_max) int64 with -1 past each length, scores (S,)).
    """
    S, n_max, L = emissions.shape
    paths = np.full((S, n_max), -1, dtype=np.int64)
    scores = np.zeros(S)

    for s in range(S):
        n = int(lengths[s])
        em = emissions[s, :n]
        delta = start + em[0]
        back = np.zeros((n, L), dtype=np.int64)
        for t in range(1, n):
            cand = delta[:, None] + transitions          # (from, to)
            back[t] = np.argmax(cand, axis=0)            # first max = lowest id
            delta = cand[back[t], np.arange(L)] + em[t]
        final = delta + end
        best = int(np.argmax(final))
        scores[s] = final[best]
        paths[s, n - 1] = best
        for t in range(n - 1, 0, -1):
            best = int(back[t, best])
            paths[s, t - 1] = best

    return paths, scores
