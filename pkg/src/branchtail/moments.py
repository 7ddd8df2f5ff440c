"""The moment function rho_beta, the renewal mean mu, the root rho_alpha = 1,
and Monte Carlo checks of the moment identities for Pi and W_n.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import optimize, stats

from . import rng as rngmod
from .law import _pow_abs, _pow_log_abs, closed_mu, closed_rho
from .treesim import TreeTooLarge, node_cap

Z99 = stats.norm.ppf(0.995)
Z999 = stats.norm.ppf(0.9995)
DEFAULT_BRACKET = (1e-3, 16.0)
DEFAULT_COUNT = 10**6


class AssumptionError(ValueError):
    """A modelling assumption fails (no root, mu <= 0, contractivity)."""


class NoRootError(AssumptionError):
    pass


class NonPositiveMuError(AssumptionError):
    def __init__(self, message, alpha):
        super().__init__(message)
        self.alpha = alpha


class NoiseError(AssumptionError):
    pass


@dataclass
class Estimate:
    estimate: float
    ci_low: float
    ci_high: float
    exact: bool = False
    count: int = 0

    @property
    def half_width(self):
        return 0.5 * (self.ci_high - self.ci_low)

    def covers(self, value):
        return self.ci_low <= value <= self.ci_high

    @classmethod
    def from_samples(cls, x, z=Z99):
        x = np.asarray(x, dtype=float)
        m = float(x.mean())
        h = z * float(x.std(ddof=1)) / math.sqrt(len(x)) if len(x) > 1 else math.inf
        return cls(m, m - h, m + h, False, len(x))

    @classmethod
    def exact_value(cls, v):
        return cls(v, v, v, True, 0)


@dataclass
class AlphaResult:
    alpha: float
    mu: float
    method: str
    evaluations: int
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self):
        return {"alpha": self.alpha, "mu": self.mu, "method": self.method,
                "evaluations": self.evaluations}


@dataclass
class MomentReport:
    beta_grid: list
    rho: list
    alpha_star: Optional[float] = None
    mu_at_alpha: Optional[float] = None

    def rows(self):
        for b, e in zip(self.beta_grid, self.rho):
            yield b, e.estimate, e.ci_low, e.ci_high, int(e.exact)


# ---------------------------------------------------------------------------
# rho and mu
# ---------------------------------------------------------------------------

def _per_vector(law, count, seed, f, chunk=10**6):
    """Per-draw sums of f(C_i) over ``count`` draws of the vector."""
    g = rngmod.stream(seed)
    out = []
    left = count
    while left > 0:
        k = min(chunk, left)
        vec = law.sample(g, k)
        out.append(vec.weight_sums(f(vec.c)))
        left -= k
    return np.concatenate(out)


def rho_estimate(law, beta, count=DEFAULT_COUNT, seed=0, exact=True):
    """E[sum |C_i|**beta] with a 99% normal-approximation interval.

    The closed form replaces the Monte Carlo mean when one exists and
    ``exact`` is true.
    """
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    if exact:
        v = closed_rho(law, beta)
        if v is not None:
            return Estimate.exact_value(v)
    return Estimate.from_samples(_per_vector(law, count, seed, lambda c: _pow_abs(c, beta)))


def mu_estimate(law, alpha, count=DEFAULT_COUNT, seed=0, exact=True):
    """E[sum |C_i|**alpha log|C_i|] with the 0 log 0 = 0 convention."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if exact:
        v = closed_mu(law, alpha)
        if v is not None:
            return Estimate.exact_value(v)
    return Estimate.from_samples(_per_vector(law, count, seed, lambda c: _pow_log_abs(c, alpha)))


def moment_report(law, beta_grid, count=DEFAULT_COUNT, seed=0, exact=True):
    rho = [rho_estimate(law, b, count, seed, exact) for b in beta_grid]
    report = MomentReport(list(beta_grid), rho)
    try:
        res = solve_alpha(law, mode="exact" if exact else "mc", count=count, seed=seed)
        report.alpha_star, report.mu_at_alpha = res.alpha, res.mu
    except AssumptionError:
        pass
    return report


# ---------------------------------------------------------------------------
# the root rho_alpha = 1
# ---------------------------------------------------------------------------

class _MCRho:
    """rho_beta estimated on one fixed set of weight draws.

    Reusing the same draws for every beta makes the estimate a smooth,
    log-convex function of beta, so bisection on it is well defined.
    """

    def __init__(self, law, count, seed):
        g = rngmod.stream(seed)
        vec = law.sample(g, count)
        a = np.abs(vec.c)
        keep = a > 0
        self.parent = vec.parent[keep]
        self.loga = np.log(a[keep])
        self.count = count
        self.calls = 0

    def sums(self, beta):
        self.calls += 1
        return np.bincount(self.parent, weights=np.exp(beta * self.loga), minlength=self.count)

    def __call__(self, beta):
        return Estimate.from_samples(self.sums(beta))

    def mu(self, alpha):
        w = np.exp(alpha * self.loga) * self.loga
        return Estimate.from_samples(np.bincount(self.parent, weights=w, minlength=self.count))


def _crossings(f, lo, hi, grid_size):
    xs = np.geomspace(lo, hi, grid_size)
    fs = np.array([f(x) for x in xs])
    ups, downs = [], []
    for i in range(len(xs) - 1):
        a, b = fs[i], fs[i + 1]
        if a == 0:
            (ups if b > 0 else downs).append((xs[i], xs[i]))
        elif a < 0 < b:
            ups.append((xs[i], xs[i + 1]))
        elif a > 0 > b:
            downs.append((xs[i], xs[i + 1]))
    return ups, downs, len(xs)


def solve_alpha(law, bracket=DEFAULT_BRACKET, tol=None, mode="exact", count=DEFAULT_COUNT,
                seed=0, grid_size=400):
    """Find alpha in ``bracket`` with rho_alpha = 1 and mu > 0.

    The bracket is scanned for sign changes of rho - 1.  An up-crossing
    (rho rising through 1) is where mu > 0; a bracket containing only
    down-crossings raises :class:`NonPositiveMuError` naming the spurious
    root.  ``mode="exact"`` refines with Brent's method on the closed form;
    ``mode="mc"`` bisects a common-random-numbers estimate and reports the
    induced uncertainty of alpha.
    """
    lo, hi = bracket
    if not 0 < lo < hi:
        raise ValueError("bracket must satisfy 0 < lo < hi")
    if mode == "exact" and closed_rho(law, 1.0) is None:
        mode = "mc"
    if mode == "exact":
        tol = 1e-12 if tol is None else tol
        f = lambda b: closed_rho(law, b) - 1.0
        ups, downs, evals = _crossings(f, lo, hi, grid_size)
        if not ups:
            _no_up(downs, f, lambda a: closed_mu(law, a), tol)
        a, b = ups[0]
        if a == b:
            alpha, n_it = a, 0
        else:
            alpha, r = optimize.brentq(f, a, b, xtol=tol, rtol=4 * np.finfo(float).eps, full_output=True)
            n_it = r.function_calls
        return AlphaResult(alpha, closed_mu(law, alpha), "exact", evals + n_it,
                           {"up_crossings": len(ups), "down_crossings": len(downs)})
    if mode != "mc":
        raise ValueError(f"unknown mode {mode!r}")
    tol = 0.05 if tol is None else tol
    rho = _MCRho(law, count, seed)
    f = lambda b: float(rho.sums(b).mean()) - 1.0
    ups, downs, _ = _crossings(f, lo, hi, min(grid_size, 120))
    if not ups:
        _no_up(downs, f, lambda x: rho.mu(x).estimate, tol / 10)
    a, b = ups[0]
    while b - a > tol / 10:
        mid = 0.5 * (a + b)
        if f(mid) < 0:
            a = mid
        else:
            b = mid
    alpha = 0.5 * (a + b)
    mu = rho.mu(alpha)
    at_root = rho(alpha)
    # first-order propagation of the rho interval through the slope mu
    alpha_hw = at_root.half_width / mu.estimate if mu.estimate > 0 else math.inf
    if mu.ci_low <= 0:
        raise NonPositiveMuError(f"root has mu <= 0 within noise at alpha = {alpha:.6g}", alpha)
    if alpha_hw > tol:
        raise NoiseError(f"MC noise exceeds tol: alpha half-width {alpha_hw:.3g} > {tol}")
    return AlphaResult(alpha, mu.estimate, "mc", rho.calls,
                       {"alpha_half_width": alpha_hw, "mu_ci": (mu.ci_low, mu.ci_high),
                        "up_crossings": len(ups), "down_crossings": len(downs)})


def _no_up(downs, f, mu_fn, tol):
    if downs:
        a, b = downs[0]
        if a == b:
            root = a
        else:
            while b - a > tol:
                mid = 0.5 * (a + b)
                if f(mid) > 0:
                    a = mid
                else:
                    b = mid
            root = 0.5 * (a + b)
        raise NonPositiveMuError(
            f"root has mu <= 0: rho crosses 1 downward at alpha = {root:.6g} "
            f"(mu = {mu_fn(root):.6g})", root)
    raise NoRootError("no root in bracket: rho_beta - 1 does not change sign")


# ---------------------------------------------------------------------------
# generation moments
# ---------------------------------------------------------------------------

def _generation_sums(law, n_max, count, seed, fns, cap=None):
    """Simulate ``count`` trees to depth ``n_max``.

    ``fns`` maps a name to ``f(pi, q) -> per-node values``; returns, per
    name, an array of shape (n_max + 1, count) of per-tree generation sums.
    """
    cap = node_cap() if cap is None else cap
    g = rngmod.stream(seed)
    out = {k: np.zeros((n_max + 1, count)) for k in fns}
    owner = np.arange(count)
    pi = np.ones(count)
    nodes = np.ones(count, dtype=np.int64)
    for gen in range(n_max + 1):
        if len(pi) == 0:
            break
        vec = law.sample(g, len(pi))
        for k, f in fns.items():
            out[k][gen] = np.bincount(owner, weights=f(pi, vec.q), minlength=count)
        if gen == n_max:
            break
        owner = np.repeat(owner, vec.n)
        pi = np.repeat(pi, vec.n) * vec.c
        nodes += np.bincount(owner, minlength=count)
        if nodes.max() > cap:
            raise TreeTooLarge(f"tree too large: more than {cap} nodes")
    return out


@dataclass
class CheckRow:
    n: int
    estimate: float
    ci_low: float
    ci_high: float
    reference: float
    passed: bool


def pi_moment_check(law, beta, n_max, count=10**5, seed=0, z=Z999):
    """Compare MC estimates of E[sum_{A_n} |Pi|**beta] with rho_beta**n."""
    rho = closed_rho(law, beta)
    if rho is None:
        rho = rho_estimate(law, beta, seed=seed + 1, exact=False).estimate
    sums = _generation_sums(law, n_max, count, seed, {"pi": lambda pi, q: _pow_abs(pi, beta)})["pi"]
    rows = []
    for n in range(n_max + 1):
        e = Estimate.from_samples(sums[n], z)
        ref = rho ** n
        ok = e.covers(ref) or abs(e.estimate - ref) <= 1e-12 * max(1.0, ref)
        rows.append(CheckRow(n, e.estimate, e.ci_low, e.ci_high, ref, bool(ok)))
    return rows


def wn_bound_check(law, beta, n_max, count=10**5, seed=0, slack=3.0):
    """MC estimates of E|W_n|**beta against the moment bounds.

    Intervals are 99% normal intervals.  For beta <= 1 the reference is
    E|Q|**beta * rho_beta**n and a row fails when the estimate minus
    ``slack`` half-widths exceeds it.  For beta > 1 the bound is
    K (rho v rho_beta)**n with an unknown K; K is fitted on the first half of
    the rows and the second half is checked against it.
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    rho_b = closed_rho(law, beta)
    rho_b = rho_estimate(law, beta, seed=seed + 1, exact=False).estimate if rho_b is None else rho_b
    if beta > 1:
        rho_1 = closed_rho(law, 1.0)
        rho_1 = rho_estimate(law, 1.0, seed=seed + 1, exact=False).estimate if rho_1 is None else rho_1
        rate = max(rho_1, rho_b)
        if rate >= 1:
            raise AssumptionError(f"precondition failed: rho v rho_beta = {rate:.6g} must be < 1 for beta > 1")
    elif not math.isfinite(rho_b):
        raise AssumptionError("precondition failed: rho_beta must be finite")
    sums = _generation_sums(law, n_max, count, seed, {"w": lambda pi, q: q * pi})["w"]
    est = [Estimate.from_samples(_pow_abs(sums[n], beta)) for n in range(n_max + 1)]
    low = [e.estimate - slack * e.half_width for e in est]
    rows = []
    if beta <= 1:
        qb = law.q_abs_moment(beta)
        for n, e in enumerate(est):
            ref = qb * rho_b ** n
            rows.append(CheckRow(n, e.estimate, e.ci_low, e.ci_high, ref, low[n] <= ref * (1 + 1e-12)))
        return rows
    half = max(1, n_max // 2)
    k_fit = max(e.ci_high / rate ** n for n, e in enumerate(est) if 1 <= n <= half)
    for n, e in enumerate(est):
        ref = k_fit * rate ** n
        rows.append(CheckRow(n, e.estimate, e.ci_low, e.ci_high, ref, n <= half or low[n] <= ref))
    return rows
