"""Timing comparison of the numba and numpy ranking kernels.

Run directly:  python benchmarks/bench_accel.py

The kernels are the hot path of moment-matrix assembly: ranking all pairwise
basis-exponent sums for each PSD block.  Sizes below mirror the relaxations
the benchmark suite actually builds (dim x order pairs up to the largest
moment matrix the hierarchy reaches before the size guard stops it).
"""

import sys
import time

import numpy as np

from bilevelsos import accel
from bilevelsos.polyring import monomials

CASES = [
    # (dim, order) of the moment-matrix basis
    (2, 4),
    (4, 3),
    (6, 3),
    (8, 2),
    (8, 3),
]


def _bench(fn, *args, repeat=5):
    fn(*args)  # warm-up (includes jit compilation when numba is active)
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    mode = "numba" if accel.USING_NUMBA else "numpy"
    print(f"active kernel: {mode}  (set BILEVELSOS_NO_NUMBA=1 for the fallback)")
    print(f"{'dim':>4} {'order':>5} {'basis':>6} {'rank_exponents':>15} {'pair_ranks':>12}")
    for dim, order in CASES:
        E = np.array(monomials(dim, order), dtype=np.int64)
        C = accel.binom_table(4 * order + dim + 2)
        t_rank = _bench(accel.rank_exponents, E, C)
        t_pair = _bench(accel.pair_ranks, E, None, C)
        print(f"{dim:>4} {order:>5} {len(E):>6} {t_rank * 1e3:>13.2f}ms {t_pair * 1e3:>10.2f}ms")

    # cross-check: both implementations agree bit for bit
    for dim, order in CASES:
        E = np.array(monomials(dim, order), dtype=np.int64)
        C = accel.binom_table(4 * order + dim + 2)
        a = accel._rank_batch_numpy(2 * E, C)
        b = accel.rank_exponents(2 * E, C)
        assert np.array_equal(a, b), f"kernel mismatch at dim={dim} order={order}"
    print("cross-check: numpy and active kernels agree")
    return 0


if __name__ == "__main__":
    sys.exit(main())
