"""Simulated R^(n) against the exact law of a small discrete branching rule.

Every node has 0, 1 or 2 children, each weight is +-2 or +-1/2 and the
node's own value Q is 1 or -1/2.  All atoms are dyadic, so the exact law
of R^(4) can be enumerated and compared with a million tree samples.
"""

import time

import numpy as np

from branchtail.law import parse_law
from branchtail.moments import solve_alpha
from branchtail.oracle import enumerate_Rn
from branchtail.treesim import batch_R, iterate_R
from branchtail import rng

law = parse_law({"n": {"kind": "table", "values": [0, 1, 2], "probs": [0.2, 0.3, 0.5]},
                 "c": {"magnitude": {"kind": "two_point", "values": [2, 0.5], "p": 0.15}, "q_neg": 0.4},
                 "q": {"kind": "two_point", "values": [1, -0.5], "p": 0.6}})

fit = solve_alpha(law)
print(f"tail index alpha = {fit.alpha:.6f}, mu = {fit.mu:.6f}")

# one tree, walked depth-first
print("a single draw of R^(4):", iterate_R(law, 4, rng.stream(0)))

t = time.perf_counter()
exact = enumerate_Rn(law, 4, cap=10**8)
print(f"exact law of R^(4): {len(exact)} atoms in {time.perf_counter() - t:.1f} s")

t = time.perf_counter()
x = np.sort(batch_R(law, 4, 10**6, seed=1).values)
print(f"10**6 simulated draws in {time.perf_counter() - t:.1f} s")

# sup distance between the two CDFs, checked at every atom from both sides
cdf = np.cumsum(exact.probs)
right = np.searchsorted(x, exact.values + 1e-9, side="right") / len(x)
left = np.searchsorted(x, exact.values - 1e-9, side="left") / len(x)
ks = max(np.abs(right - cdf).max(), np.abs(left - (cdf - exact.probs)).max())
print(f"KS distance {ks:.5f} (about 1/sqrt(n) = {1 / np.sqrt(len(x)):.5f} is expected)")

for q in (0.5, 0.9, 0.99, 0.999):
    i = np.searchsorted(cdf, q)
    print(f"  {q:>6} quantile: exact {exact.values[i]:10.4f}  simulated {np.quantile(x, q):10.4f}")
