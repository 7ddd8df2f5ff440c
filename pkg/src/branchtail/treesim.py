"""Weighted branching trees and the explicit solution R^(n) = W_0 + ... + W_n.

Two samplers produce R^(n):

* ``exact`` grows an independent tree for every sample, generation by
  generation and vectorized across the samples of a chunk.
* ``pool`` runs the recursion R^(k) = sum_j C_j R_j^(k-1) + Q on a pool of
  samples, drawing the children R_j^(k-1) uniformly from the previous pool.
  Its cost is linear in the depth, which is what makes deep truncations of
  supercritical trees feasible; samples within a pool are weakly dependent.

``iterate_R`` is the reference single-sample sampler (depth-first backward
recursion) and ``generation_trace`` records Z_n, W_n and weight statistics of
one forward-grown tree.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod
from .law import closed_rho

DEFAULT_NODE_CAP = 10**8
# live nodes held in memory at once by the exact batch sampler
_CHUNK_NODES = 2 * 10**6
BETA_GRID = tuple(round(0.1 * i, 1) for i in range(1, 11))


class TreeTooLarge(RuntimeError):
    pass


class ContractivityError(ValueError):
    pass


def node_cap():
    return int(os.environ.get("BRANCHTAIL_NODE_CAP", DEFAULT_NODE_CAP))


@dataclass
class GenerationTrace:
    z: np.ndarray
    w: np.ndarray
    abs_pi_sum: np.ndarray
    max_abs_pi: np.ndarray

    def rows(self):
        for g in range(len(self.z)):
            yield g, int(self.z[g]), float(self.w[g]), float(self.abs_pi_sum[g]), float(self.max_abs_pi[g])


@dataclass
class SampleBatch:
    depth: int
    count: int
    seed: int
    stream_count: int
    values: np.ndarray
    fingerprint: str
    method: str = "exact"
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.values)


def generation_trace(law, depth, stream, cap=None):
    """Grow one tree to ``depth`` generations and record each generation."""
    if depth < 0:
        raise ValueError("depth must be >= 0")
    cap = node_cap() if cap is None else cap
    pi = np.ones(1)
    z, w, abs_sum, abs_max = [], [], [], []
    total = 0
    for g in range(depth + 1):
        total += len(pi)
        if total > cap:
            raise TreeTooLarge(f"tree too large: more than {cap} nodes")
        z.append(len(pi))
        if len(pi) == 0:
            w.append(0.0)
            abs_sum.append(0.0)
            abs_max.append(0.0)
            continue
        vec = law.sample(stream, len(pi))
        w.append(math.fsum(vec.q * pi))
        a = np.abs(pi)
        abs_sum.append(math.fsum(a))
        abs_max.append(float(a.max()))
        if g < depth:
            pi = np.repeat(pi, vec.n) * vec.c
    return GenerationTrace(np.array(z, dtype=np.int64), np.array(w), np.array(abs_sum), np.array(abs_max))


def iterate_R(law, depth, stream, cap=None):
    """One realization of R^(depth) by depth-first backward recursion.

    Each node draws its vector; a node at remaining depth 0 returns its Q,
    otherwise Q plus the weighted values of its children's subtrees.
    """
    if depth < 0:
        raise ValueError("depth must be >= 0")
    cap = node_cap() if cap is None else cap
    visited = 1
    v = law.draw(stream)
    if depth == 0:
        return v.q
    # frame: [remaining depth, accumulated value, weights, next child index]
    stack = [[depth, v.q, v.c, 0]]
    result = None
    while stack:
        frame = stack[-1]
        if result is not None:
            frame[1] += frame[2][frame[3] - 1] * result
            result = None
        if frame[3] == len(frame[2]):
            stack.pop()
            result = frame[1]
            continue
        frame[3] += 1
        visited += 1
        if visited > cap:
            raise TreeTooLarge(f"tree too large: more than {cap} nodes")
        child = law.draw(stream)
        if frame[0] == 1:
            result = child.q
        else:
            stack.append([frame[0] - 1, child.q, child.c, 0])
    return result


def _exact_chunk(law, depth, size, stream, cap):
    out = np.zeros(size)
    owner = np.arange(size)
    pi = np.ones(size)
    nodes = np.ones(size, dtype=np.int64)
    for g in range(depth + 1):
        if len(pi) == 0:
            break
        vec = law.sample(stream, len(pi))
        out += np.bincount(owner, weights=vec.q * pi, minlength=size)
        if g == depth:
            break
        owner = np.repeat(owner, vec.n)
        pi = np.repeat(pi, vec.n) * vec.c
        nodes += np.bincount(owner, minlength=size)
        if nodes.max() > cap:
            raise TreeTooLarge(f"tree too large: more than {cap} nodes")
    return out


def _sample_exact(law, depth, count, stream, cap):
    m = max(law.mean_n(), 1.0)
    per_tree = depth + 1 if m == 1.0 else (m ** (depth + 1) - 1) / (m - 1)
    chunk = int(max(1, min(count, _CHUNK_NODES // max(1.0, m ** depth))))
    if per_tree > cap:
        raise TreeTooLarge(f"tree too large: expected {per_tree:.3g} nodes per tree exceeds cap {cap}")
    parts = []
    done = 0
    while done < count:
        k = min(chunk, count - done)
        parts.append(_exact_chunk(law, depth, k, stream, cap))
        done += k
    return np.concatenate(parts)


def _sample_pool(law, depth, count, stream):
    pool = np.asarray(law.q_law.sample(stream, count) if not law.is_joint
                      else law.sample(stream, count).q, dtype=float)
    for _ in range(depth):
        vec = law.sample(stream, count)
        kids = pool[stream.integers(0, count, len(vec.c))]
        pool = vec.q + vec.weight_sums(vec.c * kids)
    return pool


def expected_tree_size(law, depth):
    m = law.mean_n()
    return depth + 1 if m == 1 else (m ** (depth + 1) - 1) / (m - 1)


def choose_method(law, depth, count, budget=3 * 10**8):
    return "exact" if expected_tree_size(law, depth) * count <= budget else "pool"


def batch_R(law, depth, count, seed=0, stream_count=1, method="auto", cap=None, workers=1):
    """``count`` realizations of R^(depth) spread over ``stream_count`` streams.

    Stream ``s`` fills a fixed contiguous slot of the output, so the result
    depends only on ``(law, depth, count, seed, stream_count, method)``.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if depth < 0:
        raise ValueError("depth must be >= 0")
    cap = node_cap() if cap is None else cap
    if method == "auto":
        method = choose_method(law, depth, count)
    if method not in ("exact", "pool"):
        raise ValueError(f"unknown method {method!r}")
    sizes = rngmod.split_counts(count, stream_count)
    bounds = np.concatenate(([0], np.cumsum(sizes)))
    values = np.empty(count)

    def run(s):
        if sizes[s] == 0:
            return
        st = rngmod.stream(seed, s)
        if method == "exact":
            part = _sample_exact(law, depth, sizes[s], st, cap)
        else:
            part = _sample_pool(law, depth, sizes[s], st)
        values[bounds[s]:bounds[s + 1]] = part

    if workers > 1 and stream_count > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(workers) as ex:
            list(ex.map(run, range(stream_count)))
    else:
        for s in range(stream_count):
            run(s)
    return SampleBatch(depth, count, seed, stream_count, values, law.fingerprint(), method)


# ---------------------------------------------------------------------------
# truncation depth
# ---------------------------------------------------------------------------

def truncation_bound(q_moment, rho_beta, beta, depth, epsilon):
    """Bound on P(sup_{m>n} |R^(m) - R^(n)| > epsilon) for 0 < beta <= 1.

    (1/epsilon**beta) * E|Q|**beta * rho_beta**(n+1) / (1 - rho_beta),
    clamped to [0, 1].
    """
    if not 0 < beta <= 1:
        raise ValueError("beta must lie in (0, 1]")
    if rho_beta >= 1:
        raise ContractivityError(f"contractivity violated: rho_beta = {rho_beta} >= 1")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if math.isinf(epsilon):
        return 0.0
    b = q_moment * rho_beta ** (depth + 1) / ((1 - rho_beta) * epsilon ** beta)
    return min(1.0, max(0.0, b))


def min_depth(q_moment, rho_beta, beta, epsilon, delta):
    """Smallest n with ``truncation_bound(...) <= delta``."""
    if delta >= 1:
        return 0
    truncation_bound(q_moment, rho_beta, beta, 0, epsilon)  # validates inputs
    if q_moment == 0 or rho_beta == 0:
        return 0
    target = delta * (1 - rho_beta) * epsilon ** beta / q_moment
    n = max(0, math.ceil(math.log(target) / math.log(rho_beta) - 1))
    # guard against rounding in the closed-form inversion
    while n > 0 and truncation_bound(q_moment, rho_beta, beta, n - 1, epsilon) <= delta:
        n -= 1
    while truncation_bound(q_moment, rho_beta, beta, n, epsilon) > delta:
        n += 1
    return n


def pick_depth(law, epsilon=1e-3, delta=1e-3, beta=None):
    """Minimal depth whose truncation bound is at most ``delta``.

    With ``beta=None`` every beta in {0.1, ..., 1.0} with rho_beta < 1 is
    tried and the smallest resulting depth is returned.
    """
    betas = BETA_GRID if beta is None else (beta,)
    best = None
    for b in betas:
        rho = closed_rho(law, b)
        if rho is None:
            from .moments import rho_estimate
            est = rho_estimate(law, b, count=10**5, seed=0, exact=False)
            rho = est.ci_high
        if rho >= 1:
            continue
        n = min_depth(law.q_abs_moment(b), rho, b, epsilon, delta)
        if best is None or n < best[0]:
            best = (n, b)
    if best is None:
        raise ContractivityError("cannot bound truncation: no beta in (0, 1] with rho_beta < 1")
    return best[0]


def pick_depth_with_beta(law, epsilon=1e-3, delta=1e-3):
    """Like :func:`pick_depth` but also returns the beta that achieved it."""
    best = None
    for b in BETA_GRID:
        try:
            n = pick_depth(law, epsilon, delta, beta=b)
        except ContractivityError:
            continue
        if best is None or n < best[0]:
            best = (n, b)
    if best is None:
        raise ContractivityError("cannot bound truncation: no beta in (0, 1] with rho_beta < 1")
    return best
