# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled linear-chain CRF kernel.

Same API and semantics as the pure-numpy fallback in ``_crf_np.py``; the
sequential forward/backward/Viterbi recursions run as C loops.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log

cnp.import_array()


cdef double _lse(double[::1] buf, Py_ssize_t m) noexcept nogil:
    cdef double mx = buf[0]
    cdef double acc = 0.0
    cdef Py_ssize_t i
    for i in range(1, m):
        if buf[i] > mx:
            mx = buf[i]
    for i in range(m):
        acc += exp(buf[i] - mx)
    return mx + log(acc)


def nll_grad(double[:, :, ::1] emissions, long[::1] lengths, long[:, ::1] tags,
             double[:, ::1] transitions, double[::1] start, double[::1] end):
    cdef Py_ssize_t S = emissions.shape[0]
    cdef Py_ssize_t n_max = emissions.shape[1]
    cdef Py_ssize_t L = emissions.shape[2]

    nll_arr = np.zeros(S)
    g_em_arr = np.zeros((S, n_max, L))
    g_tr_arr = np.zeros((S, L, L))
    g_st_arr = np.zeros((S, L))
    g_en_arr = np.zeros((S, L))
    alpha_arr = np.empty((n_max, L))
    beta_arr = np.empty((n_max, L))
    buf_arr = np.empty(L)

    cdef double[::1] nll = nll_arr
    cdef double[:, :, ::1] g_em = g_em_arr
    cdef double[:, :, ::1] g_tr = g_tr_arr
    cdef double[:, ::1] g_st = g_st_arr
    cdef double[:, ::1] g_en = g_en_arr
    cdef double[:, ::1] alpha = alpha_arr
    cdef double[:, ::1] beta = beta_arr
    cdef double[::1] buf = buf_arr

    cdef Py_ssize_t s, t, j, k, n
    cdef double logz, score, u
    cdef long y_t, y_prev

    with nogil:
        for s in range(S):
            n = lengths[s]

            for k in range(L):
                alpha[0, k] = start[k] + emissions[s, 0, k]
            for t in range(1, n):
                for k in range(L):
                    for j in range(L):
                        buf[j] = alpha[t - 1, j] + transitions[j, k]
                    alpha[t, k] = emissions[s, t, k] + _lse(buf, L)
            for k in range(L):
                buf[k] = alpha[n - 1, k] + end[k]
            logz = _lse(buf, L)

            for k in range(L):
                beta[n - 1, k] = end[k]
            for t in range(n - 2, -1, -1):
                for j in range(L):
                    for k in range(L):
                        buf[k] = transitions[j, k] + emissions[s, t + 1, k] + beta[t + 1, k]
                    beta[t, j] = _lse(buf, L)

            y_t = tags[s, 0]
            score = start[y_t] + emissions[s, 0, y_t]
            for t in range(1, n):
                y_prev = y_t
                y_t = tags[s, t]
                score += transitions[y_prev, y_t] + emissions[s, t, y_t]
            score += end[y_t]
            nll[s] = logz - score

            for t in range(n):
                for k in range(L):
                    u = exp(alpha[t, k] + beta[t, k] - logz)
                    g_em[s, t, k] = u
                    if t == 0:
                        g_st[s, k] = u
                    if t == n - 1:
                        g_en[s, k] = u
                g_em[s, t, tags[s, t]] -= 1.0
            g_st[s, tags[s, 0]] -= 1.0
            g_en[s, tags[s, n - 1]] -= 1.0

            for t in range(n - 1):
                for j in range(L):
                    for k in range(L):
                        g_tr[s, j, k] += exp(alpha[t, j] + transitions[j, k]
                                             + emissions[s, t + 1, k]
                                             + beta[t + 1, k] - logz)
                g_tr[s, tags[s, t], tags[s, t + 1]] -= 1.0

    return nll_arr, g_em_arr, g_tr_arr, g_st_arr, g_en_arr


def viterbi(double[:, :, ::1] emissions, long[::1] lengths,
            double[:, ::1] transitions, double[::1] start, double[::1] end):
    cdef Py_ssize_t S = emissions.shape[0]
    cdef Py_ssize_t n_max = emissions.shape[1]
    cdef Py_ssize_t L = emissions.shape[2]

    paths_arr = np.full((S, n_max), -1, dtype=np.int64)
    scores_arr = np.zeros(S)
    delta_arr = np.empty(L)
    next_arr = np.empty(L)
    back_arr = np.empty((n_max, L), dtype=np.int64)

    cdef long[:, ::1] paths = paths_arr
    cdef double[::1] scores = scores_arr
    cdef double[::1] delta = delta_arr
    cdef double[::1] nxt = next_arr
    cdef long[:, ::1] back = back_arr

    cdef Py_ssize_t s, t, j, k, n
    cdef long best
    cdef double cand, best_val

    with nogil:
        for s in range(S):
            n = lengths[s]
            for k in range(L):
                delta[k] = start[k] + emissions[s, 0, k]
            for t in range(1, n):
                for k in range(L):
                    best = 0
                    best_val = delta[0] + transitions[0, k]
                    for j in range(1, L):
                        cand = delta[j] + transitions[j, k]
                        if cand > best_val:
                            best_val = cand
                            best = j
                    back[t, k] = best
                    nxt[k] = best_val + emissions[s, t, k]
                for k in range(L):
                    delta[k] = nxt[k]
            best = 0
            best_val = delta[0] + end[0]
            for k in range(1, L):
                cand = delta[k] + end[k]
                if cand > best_val:
                    best_val = cand
                    best = k
            scores[s] = best_val
            paths[s, n - 1] = best
            for t in range(n - 1, 0, -1):
                best = back[t, best]
                paths[s, t - 1] = best

    return paths_arr, scores_arr
