"""Exact computations for finite-discrete laws.

Everything here works by exhaustive enumeration over finite supports, so
the results serve as ground truth for the Monte Carlo and convolution code
paths.  Costs grow quickly; every entry point enforces an atom cap.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

ATOM_CAP = 10**7
MERGE_TOL = 1e-12


class EnumerationTooLarge(RuntimeError):
    pass


class NotFiniteDiscrete(ValueError):
    pass


def _merge(values, probs):
    values = np.asarray(values, dtype=float)
    probs = np.asarray(probs, dtype=float)
    keep = probs > 0
    values, probs = values[keep], probs[keep]
    if len(values) == 0:
        return values, probs
    order = np.argsort(values, kind="stable")
    values, probs = values[order], probs[order]
    # start a new atom where the gap to the previous value exceeds the tolerance
    gap = np.diff(values) > MERGE_TOL * np.maximum(1.0, np.abs(values[1:]))
    group = np.concatenate(([0], np.cumsum(gap)))
    p = np.bincount(group, weights=probs)
    # representative value: the probability-weighted mean of the group
    v = np.bincount(group, weights=probs * values) / p
    return v, p


@dataclass
class ExactPmf:
    values: np.ndarray
    probs: np.ndarray
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_atoms(cls, values, probs, **meta):
        v, p = _merge(values, probs)
        return cls(v, p, dict(meta))

    @classmethod
    def point(cls, x):
        return cls(np.array([float(x)]), np.array([1.0]))

    def __len__(self):
        return len(self.values)

    def total(self):
        return math.fsum(self.probs)

    def cdf(self, x):
        """P(X <= x) for scalar or array ``x``."""
        c = np.concatenate(([0.0], np.cumsum(self.probs)))
        return c[np.searchsorted(self.values, x, side="right")]

    def expect(self, f):
        return float(np.dot(f(self.values), self.probs))

    def atoms(self):
        return list(zip(self.values.tolist(), self.probs.tolist()))


def _require_discrete(law):
    if not law.is_finite_discrete:
        raise NotFiniteDiscrete("not finite-discrete")


def _affine_sum(q, weights, pmf, cap):
    """Exact law of q + sum_j weights[j] * X_j with X_j iid ~ pmf."""
    vals, probs = np.array([q]), np.array([1.0])
    for c in weights:
        if len(vals) * len(pmf) > cap:
            raise EnumerationTooLarge("enumeration too large; reduce depth")
        vals = (vals[:, None] + c * pmf.values[None, :]).ravel()
        probs = (probs[:, None] * pmf.probs[None, :]).ravel()
        vals, probs = _merge(vals, probs)
    return vals, probs


def push_forward(law, pmf, cap=ATOM_CAP):
    """Exact law of sum_j C_j X_j + Q with X_j iid ~ ``pmf``."""
    _require_discrete(law)
    all_v, all_p = [], []
    cache = {}
    for p, q, c in law.outcomes():
        key = tuple(c)
        if key not in cache:
            cache[key] = _affine_sum(0.0, c, pmf, cap)
        v, pr = cache[key]
        v = v + q
        all_v.append(v)
        all_p.append(p * pr)
        if sum(len(x) for x in all_v) > cap:
            raise EnumerationTooLarge("enumeration too large; reduce depth")
    return ExactPmf.from_atoms(np.concatenate(all_v), np.concatenate(all_p))


def q_pmf(law):
    _require_discrete(law)
    v, p = law.q_support()
    return ExactPmf.from_atoms(v, p)


def enumerate_Rn(law, depth, cap=ATOM_CAP):
    """Exact pmf of R^(depth), built bottom-up from R^(0) = Q."""
    pmf = q_pmf(law)
    for _ in range(depth):
        pmf = push_forward(law, pmf, cap)
    pmf.meta = {"depth": depth, "fingerprint": law.fingerprint()}
    return pmf


def enumerate_Wn(law, depth, cap=ATOM_CAP):
    """Exact pmf of W_n from W_0 = Q and W_n = sum_k C_k W_{n-1,k}."""
    pmf = q_pmf(law)
    weights = law.weight_outcomes()
    for _ in range(depth):
        all_v, all_p = [], []
        for p, c in weights:
            v, pr = _affine_sum(0.0, c, pmf, cap)
            all_v.append(v)
            all_p.append(p * pr)
        pmf = ExactPmf.from_atoms(np.concatenate(all_v), np.concatenate(all_p))
    return pmf


def enumerate_trees(law, depth, cap=10**6):
    """Every depth-``depth`` tree realization as ``(prob, W_0..W_depth)``.

    Brute force over the joint outcome of every node, generation by
    generation; only feasible for tiny laws.
    """
    _require_discrete(law)
    outcomes = law.outcomes()
    # state: (prob, weights Pi of the current generation, W values so far)
    states = [(1.0, (1.0,), ())]
    for g in range(depth + 1):
        nxt = []
        for prob, pis, ws in states:
            if len(outcomes) ** len(pis) > cap:
                raise EnumerationTooLarge("enumeration too large; reduce depth")
            for combo in itertools.product(outcomes, repeat=len(pis)):
                p = prob * math.prod(o[0] for o in combo)
                w = math.fsum(o[1] * pi for o, pi in zip(combo, pis))
                kids = tuple(pi * c for o, pi in zip(combo, pis) for c in o[2])
                nxt.append((p, kids, ws + (w,)))
            if len(nxt) > cap:
                raise EnumerationTooLarge("enumeration too large; reduce depth")
        states = nxt
    return [(p, ws) for p, _, ws in states]


def enumerate_generation(law, depth, cap=ATOM_CAP):
    """Every realization of generation ``depth`` as ``(prob, Pi tuple)``.

    Brute force over the weight vectors of all nodes; unlike
    :func:`enumerate_paths` no independence shortcut is used.
    """
    _require_discrete(law)
    outcomes = law.weight_outcomes()
    states = [(1.0, (1.0,))]
    for _ in range(depth):
        nxt = []
        for prob, pis in states:
            if len(outcomes) ** len(pis) + len(nxt) > cap:
                raise EnumerationTooLarge("enumeration too large")
            for combo in itertools.product(outcomes, repeat=len(pis)):
                p = prob * math.prod(o[0] for o in combo)
                nxt.append((p, tuple(pi * c for o, pi in zip(combo, pis) for c in o[1])))
        states = nxt
    return states


def enumerate_paths(law, depth, cap=ATOM_CAP):
    """Intensity of generation ``depth``: atoms ``(Pi, E[#nodes with this Pi])``.

    Every root-to-generation path is listed individually (no merging), with
    its probability weight times multiplicity.
    """
    _require_discrete(law)
    outcomes = law.weight_outcomes()
    pis, weights = np.array([1.0]), np.array([1.0])
    for _ in range(depth):
        step_c = np.array([c for p, cs in outcomes for c in cs], dtype=float)
        step_p = np.array([p for p, cs in outcomes for _ in cs], dtype=float)
        if len(pis) * len(step_c) > cap:
            raise EnumerationTooLarge("enumeration too large")
        pis = (pis[:, None] * step_c[None, :]).ravel()
        weights = (weights[:, None] * step_p[None, :]).ravel()
    return pis, weights


def pi_moment_exact(law, beta, n):
    """E[sum_{A_n} |Pi|**beta] by path enumeration."""
    pis, w = enumerate_paths(law, n)
    a = np.abs(pis)
    return math.fsum(np.where(a > 0, a ** beta if beta else 1.0, 0.0) * w)


def wn_abs_moment_exact(law, beta, n):
    pmf = enumerate_Wn(law, n)
    return pmf.expect(lambda x: np.abs(x) ** beta)


# ---------------------------------------------------------------------------
# support-lemma checks
# ---------------------------------------------------------------------------

@dataclass
class LemmaCheck:
    lhs: float
    rhs: float
    diff: float
    holds: bool

    def to_dict(self):
        return {"lhs": self.lhs, "rhs": self.rhs, "diff": self.diff, "holds": self.holds}


def _tpow(x, alpha):
    x = np.maximum(np.asarray(x, dtype=float), 0.0)
    return np.where(x > 0, x ** alpha, 0.0)


def _step_integral(breaks, heights, alpha):
    """int_0^inf h(t) t**(alpha-1) dt for h constant on [breaks[i], breaks[i+1])."""
    upper = _tpow(breaks[1:], alpha)
    lower = _tpow(breaks[:-1], alpha)
    heights = np.asarray(heights, dtype=float)
    finite = np.isfinite(upper)
    if np.any(heights[~finite] != 0):
        return math.inf
    return math.fsum(heights[finite] * (upper[finite] - lower[finite])) / alpha


def _variant(c, r, variant):
    t = c * r
    if variant == "CR":
        return t
    if variant == "-CR":
        return -t
    if variant == "|CR|":
        return np.abs(t)
    raise ValueError(f"unknown variant {variant!r}")


def max_approx_identity_check(law, alpha, variant, r_pmf, cap=ATOM_CAP):
    """Both sides of the max-approximation identity for T_i = C_i R_i variants.

    The left side integrates the exact step functions E[sum 1(T_i > t)] and
    P(max T_i > t) against t**(alpha-1); the right side enumerates every
    joint outcome of (N, C, R_1..R_N) and averages
    (1/alpha)(sum (T_i+)**alpha - ((max T_i)+)**alpha).
    """
    _require_discrete(law)
    weights = law.weight_outcomes()
    rv, rp = r_pmf.values, r_pmf.probs
    # breakpoints: every positive value any T_i can take
    pts = set()
    for _, cs in weights:
        for c in cs:
            pts.update(_variant(c, rv, variant)[_variant(c, rv, variant) > 0].tolist())
    breaks = np.array(sorted(pts | {0.0}))
    breaks = np.append(breaks, np.inf)
    mids = np.where(np.isinf(breaks[1:]), breaks[:-1] + 1.0, 0.5 * (breaks[:-1] + breaks[1:]))
    sum_ccdf = np.zeros(len(mids))
    max_ccdf = np.zeros(len(mids))
    for p, cs in weights:
        if not cs:
            continue
        below = np.ones(len(mids))
        for c in cs:
            t = _variant(c, rv, variant)
            exceed = np.array([rp[t > m].sum() for m in mids])
            sum_ccdf += p * exceed
            below *= 1.0 - exceed
        max_ccdf += p * (1.0 - below)
    lhs = _step_integral(breaks, sum_ccdf - max_ccdf, alpha)
    rhs_terms = []
    for p, cs in weights:
        if not cs:
            continue
        if len(rv) ** len(cs) > cap:
            raise EnumerationTooLarge("enumeration too large")
        for combo in itertools.product(range(len(rv)), repeat=len(cs)):
            ts = np.array([_variant(c, rv[i], variant) for c, i in zip(cs, combo)])
            pr = p * math.prod(rp[i] for i in combo)
            rhs_terms.append(pr * (float(_tpow(ts, alpha).sum()) - float(_tpow(ts.max(), alpha))) / alpha)
    rhs = math.fsum(rhs_terms)
    return LemmaCheck(lhs, rhs, abs(lhs - rhs), abs(lhs - rhs) < 1e-9 and lhs >= -1e-12)


@dataclass
class JointPmf:
    """Finite joint law of a pair (X, Y)."""

    x: np.ndarray
    y: np.ndarray
    p: np.ndarray

    @classmethod
    def independent(cls, x_pmf, y_pmf):
        xs, ys = np.meshgrid(x_pmf.values, y_pmf.values, indexing="ij")
        ps = np.outer(x_pmf.probs, y_pmf.probs)
        return cls(xs.ravel(), ys.ravel(), ps.ravel())

    @classmethod
    def constant(cls, x, y):
        return cls(np.array([float(x)]), np.array([float(y)]), np.array([1.0]))


def indicator_integral_bound_check(joint, alpha):
    """int_0^inf E|1(X>t) - 1(Y>t)| t**(alpha-1) dt vs (1/alpha) E|(X+)**a - (Y+)**a|."""
    breaks = np.unique(np.concatenate(([0.0], np.maximum(joint.x, 0), np.maximum(joint.y, 0))))
    breaks = np.append(breaks, np.inf)
    mids = np.where(np.isinf(breaks[1:]), breaks[:-1] + 1.0, 0.5 * (breaks[:-1] + breaks[1:]))
    h = np.array([np.dot(joint.p, np.abs((joint.x > m).astype(float) - (joint.y > m))) for m in mids])
    lhs = _step_integral(breaks, h, alpha)
    rhs = float(np.dot(joint.p, np.abs(_tpow(joint.x, alpha) - _tpow(joint.y, alpha)))) / alpha
    return LemmaCheck(lhs, rhs, rhs - lhs, lhs <= rhs + 1e-12)


def alpha_moment_bound_check(law, y_pmf, beta, cap=ATOM_CAP):
    """E[(sum (D_i Y_i)+)**b - sum ((D_i Y_i)+)**b] <= E|Y|**(p-1)**(b/(p-1)) E[(sum|D_i|)**b].

    D_i are the weights of ``law``; the Y_i are iid ~ ``y_pmf`` and
    independent of them; p = ceil(beta).
    """
    if beta <= 1:
        raise ValueError("beta must exceed 1")
    _require_discrete(law)
    p_int = math.ceil(beta)
    yv, yp = y_pmf.values, y_pmf.probs
    lhs_terms, sum_abs = [], []
    for p, ds in law.weight_outcomes():
        sum_abs.append(p * sum(abs(d) for d in ds) ** beta if ds else 0.0)
        if not ds:
            continue
        if len(yv) ** len(ds) > cap:
            raise EnumerationTooLarge("enumeration too large")
        for combo in itertools.product(range(len(yv)), repeat=len(ds)):
            parts = _tpow([d * yv[i] for d, i in zip(ds, combo)], 1.0)
            pr = p * math.prod(yp[i] for i in combo)
            lhs_terms.append(pr * (parts.sum() ** beta - float(_tpow(parts, beta).sum())))
    lhs = math.fsum(lhs_terms)
    y_mom = float(np.dot(np.abs(yv) ** (p_int - 1), yp))
    rhs = y_mom ** (beta / (p_int - 1)) * math.fsum(sum_abs)
    return LemmaCheck(lhs, rhs, rhs - lhs, lhs <= rhs + 1e-12)


# ---------------------------------------------------------------------------
# randomized small laws for property checks
# ---------------------------------------------------------------------------

def random_discrete_law(rng, max_n=2, max_rows=4, signed=True):
    """A random joint-table law with small integer-free supports."""
    from .law import BranchingLaw, JointRow
    k = int(rng.integers(1, max_rows + 1))
    probs = rng.dirichlet(np.ones(k))
    rows = []
    for i in range(k):
        n = int(rng.integers(0, max_n + 1))
        mags = np.round(rng.uniform(0.1, 1.5, n), 3)
        signs = np.where(rng.random(n) < (0.5 if signed else 0.0), -1.0, 1.0)
        q = float(np.round(rng.uniform(-2, 2), 3)) if signed else float(np.round(rng.uniform(0.1, 2), 3))
        rows.append(JointRow(float(probs[i]), q, tuple(float(x) for x in mags * signs)))
    if all(r.q == 0 for r in rows):
        rows[0] = JointRow(rows[0].p, 1.0, rows[0].c)
    # renormalize so the probabilities sum to one to machine precision
    total = math.fsum(r.p for r in rows)
    rows = [JointRow(r.p / total, r.q, r.c) for r in rows]
    return BranchingLaw(joint=tuple(rows))


def random_pmf(rng, size=3, lo=-2.0, hi=2.0):
    v = np.round(rng.uniform(lo, hi, size), 3)
    return ExactPmf.from_atoms(v, rng.dirichlet(np.ones(size)))
