"""Verification suites: independent oracles for the load-bearing numerics.

Each suite reports its worst observed deviation against a pinned tolerance
and, on failure, serializes the offending case so it can be replayed:

- crf-oracle:  forward NLL, Viterbi, and normalization against brute-force
               path enumeration (every tag sequence, 64-bit log-sum-exp).
- grad-check:  full-model training losses (semantic term included) against
               central finite differences on sampled parameters.
- kl-mc:       closed-form Gaussian KL against an antithetic Monte-Carlo
               estimate, plus the KL(p||p) = 0 identity.
- attn-props:  row-stochastic attention, composition counts (checked against
               exact rational arithmetic), mixup convexity, and the
               sampling-ratio edge cases.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional

import numpy as np
import torch

from mmie.augment import (BatchAttention, BatchReps, HardClass,
                          compose_training_set, mixup_synthesize, vicinal_sample)
from mmie.crf import crf_decode, crf_nll
from mmie.data import TASK_NER, TASK_RE, CorpusSpec, generate_corpus
from mmie.fusion import GaussianParams, gaussian_kl
from mmie.model import ModelConfig, MultimodalExtractor, collate_batch

NLL_TOL = 1e-8
VITERBI_TOL = 1e-8
NORM_TOL = 1e-6
GRAD_TOL = 1e-4
KL_IDENTITY_TOL = 1e-12
KL_MC_TOL = 1e-2
ROW_SUM_TOL = 1e-6
HULL_TOL = 1e-12


@dataclass
class SuiteResult:
    name: str
    passed: bool
    details: dict = field(default_factory=dict)
    failure: Optional[dict] = None

    def summary(self) -> str:
        parts = [f"suite={self.name}", f"passed={self.passed}"]
        for k, v in self.details.items():
            parts.append(f"{k}={v:.3e}" if isinstance(v, float) else f"{k}={v}")
        return " ".join(parts)


# ---------------------------------------------------------------------------
# crf-oracle
# ---------------------------------------------------------------------------

def _brute_force(em: np.ndarray, tr: np.ndarray, st: np.ndarray,
                 en: np.ndarray) -> tuple[float, float]:
    """(logZ, best path score) by enumerating every tag sequence."""
    n, L = em.shape
    scores = []
    for path in itertools.product(range(L), repeat=n):
        s = st[path[0]] + en[path[-1]] + sum(em[t, y] for t, y in enumerate(path))
        s += sum(tr[path[t], path[t + 1]] for t in range(n - 1))
        scores.append(s)
    scores = np.asarray(scores)
    m = scores.max()
    return float(m + np.log(np.exp(scores - m).sum())), float(m)


def run_crf_oracle(seed: int = 0, cases: int = 200) -> SuiteResult:
    rng = np.random.default_rng(seed)
    max_nll = max_vit = max_norm = 0.0
    failure = None
    for case in range(cases):
        n = int(rng.integers(1, 5))
        L = int(rng.integers(1, 5))
        em = rng.normal(0.0, 2.0, (n, L))
        tr = rng.normal(0.0, 2.0, (L, L))
        st = rng.normal(0.0, 2.0, L)
        en = rng.normal(0.0, 2.0, L)
        tags = rng.integers(0, L, n)

        em_t = torch.from_numpy(em)
        tr_t, st_t, en_t = map(torch.from_numpy, (tr, st, en))
        log_z, best = _brute_force(em, tr, st, en)
        gold_score = (st[tags[0]] + en[tags[-1]]
                      + sum(em[t, y] for t, y in enumerate(tags))
                      + sum(tr[tags[t], tags[t + 1]] for t in range(n - 1)))

        nll = float(crf_nll(em_t.unsqueeze(0), tr_t, st_t, en_t,
                            torch.from_numpy(tags).unsqueeze(0),
                            torch.tensor([n]))[0])
        nll_dev = abs(nll - (log_z - gold_score))

        all_paths = np.array(list(itertools.product(range(L), repeat=n)),
                             dtype=np.int64)
        P = all_paths.shape[0]
        nll_all = crf_nll(em_t.unsqueeze(0).expand(P, n, L), tr_t, st_t, en_t,
                          torch.from_numpy(all_paths),
                          torch.full((P,), n, dtype=torch.int64))
        norm_dev = abs(float(torch.exp(-nll_all).sum()) - 1.0)

        _, scores = crf_decode(em_t.unsqueeze(0), tr_t, st_t, en_t,
                               torch.tensor([n]))
        vit_dev = abs(float(scores[0]) - best)

        max_nll = max(max_nll, nll_dev)
        max_vit = max(max_vit, vit_dev)
        max_norm = max(max_norm, norm_dev)
        bad = nll_dev >= NLL_TOL or vit_dev >= VITERBI_TOL or norm_dev >= NORM_TOL
        if bad and failure is None:
            failure = {"case": case, "n": n, "L": L,
                       "emissions": em.tolist(), "transitions": tr.tolist(),
                       "start": st.tolist(), "end": en.tolist(),
                       "tags": tags.tolist(), "nll_dev": nll_dev,
                       "viterbi_dev": vit_dev, "norm_dev": norm_dev}
    passed = max_nll < NLL_TOL and max_vit < VITERBI_TOL and max_norm < NORM_TOL
    return SuiteResult("crf-oracle", passed,
                       {"cases": cases, "max_nll_dev": max_nll,
                        "max_viterbi_dev": max_vit, "max_norm_dev": max_norm},
                       failure)


# ---------------------------------------------------------------------------
# grad-check
# ---------------------------------------------------------------------------

def _grad_check_model(task: str, seed: int):
    spec = CorpusSpec(task=task, vocab_size=20, num_entity_types=2,
                      num_relation_types=3, num_train=3, num_val=1,
                      num_test=1, seed=seed, visual_dependency=0.5,
                      image_size=8, object_size=4)
    train, _, _ = generate_corpus(spec)
    cfg = ModelConfig(task=task, vocab_size=20, num_entity_types=2,
                      num_relation_types=3, d_model=16, text_layers=2,
                      text_heads=2, ffn_dim=32, max_len=32, text_dropout=0.0,
                      level_channels=(4, 8), latent_dim=4, attn_heads=2,
                      attn_dropout=0.0)
    torch.manual_seed(seed)
    model = MultimodalExtractor(cfg)
    model.train()
    batch = collate_batch(train, model.schema, cfg.max_len)
    return model, batch


def _check_task_grads(task: str, seed: int, num_params: int, h: float):
    model, batch = _grad_check_model(task, seed)

    def loss_value() -> torch.Tensor:
        # identical augmentation draws on every call, so the loss is a pure
        # function of the parameters and central differences are valid
        rng = np.random.Generator(np.random.PCG64(seed + 1))
        return model.training_losses(batch, rng, semantic_weight=0.5)["total"]

    params = [p for p in model.parameters() if p.requires_grad]
    names = [n for n, p in model.named_parameters() if p.requires_grad]
    grads = torch.autograd.grad(loss_value(), params, allow_unused=True)

    sizes = np.array([p.numel() for p in params])
    cum = np.cumsum(sizes)
    rng = np.random.default_rng(seed + 2)
    worst = 0.0
    failure = None
    for _ in range(num_params):
        flat = int(rng.integers(int(cum[-1])))
        pi = int(np.searchsorted(cum, flat, side="right"))
        offset = flat - (int(cum[pi - 1]) if pi else 0)
        p = params[pi]
        with torch.no_grad():
            orig = float(p.view(-1)[offset])
            p.view(-1)[offset] = orig + h
            f_plus = float(loss_value())
            p.view(-1)[offset] = orig - h
            f_minus = float(loss_value())
            p.view(-1)[offset] = orig
        fd = (f_plus - f_minus) / (2.0 * h)
        an = 0.0 if grads[pi] is None else float(grads[pi].reshape(-1)[offset])
        rel = abs(fd - an) / max(abs(fd), abs(an), 1e-4)
        if rel > worst:
            worst = rel
            if rel >= GRAD_TOL:
                failure = {"task": task, "param": names[pi], "index": offset,
                           "finite_diff": fd, "analytic": an, "rel_err": rel}
    return worst, failure


def run_grad_check(seed: int = 0, num_params: int = 50,
                   h: float = 1e-5) -> SuiteResult:
    worst_ner, fail_ner = _check_task_grads(TASK_NER, seed, num_params, h)
    worst_re, fail_re = _check_task_grads(TASK_RE, seed, num_params, h)
    passed = worst_ner < GRAD_TOL and worst_re < GRAD_TOL
    return SuiteResult("grad-check", passed,
                       {"params_per_task": num_params, "h": h,
                        "max_rel_err_ner": worst_ner,
                        "max_rel_err_re": worst_re},
                       fail_ner or fail_re)


# ---------------------------------------------------------------------------
# kl-mc
# ---------------------------------------------------------------------------

def _mc_kl(mu_p, lv_p, mu_q, lv_q, rng, samples: int) -> float:
    """Antithetic Monte-Carlo estimate of KL(p || q), diagonal Gaussians."""
    std_p = np.exp(0.5 * lv_p)
    inv_p, inv_q = np.exp(-lv_p), np.exp(-lv_q)

    def log_ratio(x):
        lp = -0.5 * ((x - mu_p) ** 2 * inv_p + lv_p)
        lq = -0.5 * ((x - mu_q) ** 2 * inv_q + lv_q)
        return (lp - lq).sum(axis=1)

    half = samples // 2
    total = 0.0
    chunk = 100_000
    for lo in range(0, half, chunk):
        z = rng.standard_normal((min(chunk, half - lo), mu_p.shape[0]))
        total += log_ratio(mu_p + std_p * z).sum()
        total += log_ratio(mu_p - std_p * z).sum()
    return float(total / (2 * half))


def run_kl_mc(seed: int = 0, pairs: int = 20, k: int = 8,
              samples: int = 10 ** 6) -> SuiteResult:
    rng = np.random.default_rng(seed)
    max_dev = 0.0
    max_identity = 0.0
    failure = None
    for case in range(pairs):
        mu_p = rng.normal(0.0, 0.3, k)
        lv_p = rng.uniform(-0.2, 0.2, k)
        mu_q = rng.normal(0.0, 0.3, k)
        lv_q = rng.uniform(-0.2, 0.2, k)
        p = GaussianParams(torch.from_numpy(mu_p), torch.from_numpy(lv_p))
        q = GaussianParams(torch.from_numpy(mu_q), torch.from_numpy(lv_q))
        closed = float(gaussian_kl(p, q))
        mc = _mc_kl(mu_p, lv_p, mu_q, lv_q, rng, samples)
        dev = abs(closed - mc)
        identity = abs(float(gaussian_kl(p, p)))
        max_dev = max(max_dev, dev)
        max_identity = max(max_identity, identity)
        if (dev >= KL_MC_TOL or identity > KL_IDENTITY_TOL) and failure is None:
            failure = {"case": case, "mu_p": mu_p.tolist(), "lv_p": lv_p.tolist(),
                       "mu_q": mu_q.tolist(), "lv_q": lv_q.tolist(),
                       "closed_form": closed, "monte_carlo": mc, "dev": dev}
    passed = max_dev < KL_MC_TOL and max_identity <= KL_IDENTITY_TOL
    return SuiteResult("kl-mc", passed,
                       {"pairs": pairs, "samples": samples,
                        "max_mc_dev": max_dev, "max_identity_dev": max_identity},
                       failure)


# ---------------------------------------------------------------------------
# attn-props
# ---------------------------------------------------------------------------

def _vec_batch(B: int, dim: int, rng) -> BatchReps:
    vecs = torch.from_numpy(rng.normal(0.0, 1.0, (B, dim)))
    return BatchReps(targets=[HardClass(i) for i in range(B)], vecs=vecs)


def _rational_count(ratio: float, B: int) -> int:
    return math.floor(Fraction(str(ratio)) * B)


def run_attn_props(seed: int = 0) -> SuiteResult:
    rng = np.random.default_rng(seed)
    torch.manual_seed(seed)
    failure = None

    attn = BatchAttention(dim=16, num_heads=4, dropout=0.2).double()
    pooled = torch.from_numpy(rng.normal(0.0, 1.0, (8, 16)))
    with torch.no_grad():
        weights = attn.attention_weights(pooled)
    row_dev = float((weights.sum(dim=-1) - 1.0).abs().max())
    neg = float((-weights).clamp(min=0).max())

    counts_ok = True
    for B in range(2, 65):
        base = _vec_batch(B, 4, rng)
        transformed = BatchReps(targets=list(base.targets),
                                vecs=torch.from_numpy(rng.normal(0, 1, (B, 4))))
        synthetic = mixup_synthesize(base, 0.2, rng)
        for ratio in (0.0, 0.4, 0.6, 0.8, 1.0):
            composed = compose_training_set(base, transformed, synthetic,
                                            ratio, rng)
            expected = (B + _rational_count(ratio, B)
                        + math.floor((1 - Fraction(str(ratio))) * B))
            if composed.batch_size != expected:
                counts_ok = False
                if failure is None:
                    failure = {"check": "composition-count", "B": B,
                               "ratio": ratio, "got": composed.batch_size,
                               "expected": expected}

    hull_dev = 0.0
    batch = _vec_batch(12, 6, rng)
    mixed = mixup_synthesize(batch, 0.2, rng)
    for row, tgt in enumerate(mixed.targets):
        a, b = batch.vecs[tgt.a.label], batch.vecs[tgt.b.label]
        lo, hi = torch.minimum(a, b), torch.maximum(a, b)
        x = mixed.vecs[row]
        dev = float(torch.maximum(lo - x, x - hi).clamp(min=0).max())
        hull_dev = max(hull_dev, dev)

    transformed = BatchReps(targets=list(batch.targets),
                            vecs=torch.from_numpy(rng.normal(0, 1, (12, 6))))
    keep_all = vicinal_sample(batch, transformed, 1.0, rng)
    keep_none = vicinal_sample(batch, transformed, 0.0, rng)
    edges_ok = (torch.equal(keep_all.vecs, batch.vecs)
                and torch.equal(keep_none.vecs, transformed.vecs))

    passed = (row_dev < ROW_SUM_TOL and neg == 0.0 and counts_ok
              and hull_dev <= HULL_TOL and edges_ok)
    if not passed and failure is None:
        failure = {"row_sum_dev": row_dev, "negative_weight": neg,
                   "hull_dev": hull_dev, "edges_ok": edges_ok}
    return SuiteResult("attn-props", passed,
                       {"max_row_sum_dev": row_dev, "max_hull_dev": hull_dev,
                        "counts_ok": counts_ok, "edge_cases_ok": edges_ok},
                       failure)


SUITES: dict[str, Callable[..., SuiteResult]] = {
    "crf-oracle": run_crf_oracle,
    "grad-check": run_grad_check,
    "kl-mc": run_kl_mc,
    "attn-props": run_attn_props,
}


def run_suite(name: str, seed: int = 0) -> SuiteResult:
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}; choose from {sorted(SUITES)}")
    return SUITES[name](seed=seed)


def run_all(seed: int = 0) -> list[SuiteResult]:
    return [fn(seed=seed) for fn in SUITES.values()]
