"""Times the compiled CRF kernel against the pure-numpy twin.

Runs the forward/gradient pass and Viterbi decoding on random batches at a
few realistic shapes and prints per-call times plus the speedup.  Usage:

    python3 benchmarks/bench_crf.py [--repeats N]
"""

import argparse
import time

import numpy as np

from mmie import _crf_np

try:
    from mmie import _crf_cy
except ImportError:
    _crf_cy = None

SHAPES = [
    # (batch, n_max, num_tags)  -- tag counts for 3 and 8 entity types
    (8, 16, 7),
    (16, 32, 7),
    (64, 32, 7),
    (64, 32, 17),
]


def make_batch(rng, S, n_max, L):
    em = rng.normal(0, 2, size=(S, n_max, L))
    lengths = rng.integers(max(1, n_max // 2), n_max + 1, size=S)
    tags = rng.integers(0, L, size=(S, n_max))
    trans = rng.normal(0, 1, size=(L, L))
    start = rng.normal(0, 1, size=L)
    end = rng.normal(0, 1, size=L)
    return em, lengths.astype(np.int64), tags.astype(np.int64), trans, start, end


def time_call(fn, args, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=5,
                        help="take the best of N timed calls")
    args = parser.parse_args()

    if _crf_cy is None:
        print("compiled kernel not built; timing the numpy kernel only")
    rng = np.random.default_rng(0)

    header = f"{'shape (S,n,L)':>16} {'op':>8} {'numpy':>10} {'compiled':>10} {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for S, n_max, L in SHAPES:
        batch = make_batch(rng, S, n_max, L)
        vit_args = (batch[0], batch[1], batch[3], batch[4], batch[5])
        for op, np_fn, np_args in (
                ("nll+grad", _crf_np.nll_grad, batch),
                ("viterbi", _crf_np.viterbi, vit_args)):
            t_np = time_call(np_fn, np_args, args.repeats)
            if _crf_cy is not None:
                cy_fn = getattr(_crf_cy, np_fn.__name__)
                t_cy = time_call(cy_fn, np_args, args.repeats)
                print(f"{str((S, n_max, L)):>16} {op:>8} {t_np * 1e3:>8.2f}ms "
                      f"{t_cy * 1e3:>8.2f}ms {t_np / t_cy:>7.1f}x")
            else:
                print(f"{str((S, n_max, L)):>16} {op:>8} {t_np * 1e3:>8.2f}ms "
                      f"{'-':>10} {'-':>8}")


if __name__ == "__main__":
    main()
