"""Independent numpy oracle for the EP kernel and the LCG.

Prints values that are frozen into the Rust test suite. Not run by cargo.
Usage: python3 ep_oracle.py [log2_pairs]
"""
import sys

import numpy as np

A = 5**13
SEED = 271828183
MOD = 2**46


def first_uniform():
    # exact multiple-precision integer arithmetic
    s = (A * SEED) % MOD
    return s, s / MOD


def state_after(n):
    return (pow(A, n, MOD) * SEED) % MOD


def ep(log2_pairs, block=1 << 20):
    n_uniform = 2 << log2_pairs
    mask = np.uint64(MOD - 1)
    # powers a^1..a^block mod 2^46 (exact in uint64 since 2^46 | 2^64)
    pw = np.empty(block, dtype=np.uint64)
    pw[0] = A
    n = 1
    while n < block:
        m = min(n, block - n)
        pw[n:n + m] = (pw[:m] * pw[n - 1]) & mask
        n += m
    q = np.zeros(10, dtype=np.int64)
    sx = 0.0
    sy = 0.0
    start = SEED
    for base in range(0, n_uniform, block):
        st = (pw * np.uint64(start)) & mask
        u = st.astype(np.float64) * 2.0**-46
        start = int(st[-1])
        x = 2.0 * u[0::2] - 1.0
        y = 2.0 * u[1::2] - 1.0
        t = x * x + y * y
        ok = (t <= 1.0) & (t > 0.0)
        x, y, t = x[ok], y[ok], t[ok]
        f = np.sqrt(-2.0 * np.log(t) / t)
        gx, gy = x * f, y * f
        l = np.maximum(np.abs(gx), np.abs(gy)).astype(np.int64)
        q += np.bincount(l, minlength=10)[:10]
        sx += float(np.sum(gx))
        sy += float(np.sum(gy))
    return q, sx, sy


if __name__ == "__main__":
    print("first state/uniform", first_uniform())
    print("state after 1000", state_after(1000))
    print("state after 2^30", state_after(2**30))
    m = int(sys.argv[1]) if len(sys.argv) > 1 else 24
    q, sx, sy = ep(m)
    print("q", list(q), "accepted", int(q.sum()))
    print("sx %.15e sy %.15e" % (sx, sy))
