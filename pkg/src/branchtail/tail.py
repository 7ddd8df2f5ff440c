"""Tail index and tail constants of R.

Two independent estimators of the constants are provided:

* the *moment form* runs one step of the recursion T = sum_j C_j R_j + Q on
  fresh weight draws, with the R_j resampled from a pre-drawn batch, and
  averages d(T)**alpha - sum_j d(C_j R_j)**alpha;
* the *integral form* integrates v**(alpha-1) (P(dR > v) - E[sum_j 1(d C_j R > v)])
  using the empirical law of the batch directly.

Here d is the positive part, the negative part or the absolute value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import stats

from . import rng as rngmod
from .moments import Estimate, Z99

Z95 = stats.norm.ppf(0.975)
DEFAULT_GRID_POINTS = 400
DEFAULT_BATCHES = 20


class TailEmpty(ValueError):
    pass


class DegenerateSample(ValueError):
    pass


class IntegralNotConverged(RuntimeError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


def _values(samples):
    return np.asarray(getattr(samples, "values", samples), dtype=float)


# ---------------------------------------------------------------------------
# Hill estimator
# ---------------------------------------------------------------------------

@dataclass
class HillCurve:
    k: np.ndarray
    alpha_right: Optional[np.ndarray]
    alpha_left: Optional[np.ndarray]
    errors: dict = field(default_factory=dict)

    def ci(self, side, k_index, z=Z95):
        """Asymptotic normal interval alpha_hat (1 -+ z / sqrt(k))."""
        a = (self.alpha_right if side == "right" else self.alpha_left)[k_index]
        h = z * a / math.sqrt(self.k[k_index])
        return a - h, a + h

    def rows(self):
        nan = np.full(len(self.k), np.nan)
        r = self.alpha_right if self.alpha_right is not None else nan
        l = self.alpha_left if self.alpha_left is not None else nan
        for i, k in enumerate(self.k):
            yield int(k), float(r[i]), float(l[i])


def hill_estimates(x, k_grid):
    """Hill estimates of the tail index of the positive sample ``x``.

    alpha_hat(k) = 1 / mean_{i<=k} log(X_(i) / X_(k+1)) over the top order
    statistics X_(1) >= X_(2) >= ...
    """
    x = np.asarray(x, dtype=float)
    x = x[x > 0]
    k_grid = np.asarray(k_grid, dtype=np.int64)
    if len(k_grid) == 0 or k_grid.min() < 1:
        raise ValueError("k values must be >= 1")
    kmax = int(k_grid.max())
    if len(x) < kmax + 1:
        raise TailEmpty(f"tail empty: {len(x)} positive samples, need {kmax + 1}")
    top = -np.sort(-x)[: kmax + 1]
    # ratios rather than differences of logs keep the estimate exactly
    # invariant under scaling by powers of two
    mean_log_spacing = np.array([np.mean(np.log(top[:k] / top[k])) for k in k_grid])
    if np.any(mean_log_spacing <= 0):
        raise DegenerateSample("zero log-spacings: the top order statistics are tied")
    return 1.0 / mean_log_spacing


def default_k(count):
    return max(1, int(math.floor(count ** 0.6)))


def hill(samples, k_grid=None):
    """Hill curves for the right tail (R > 0) and the left tail (-R > 0).

    A tail without enough positive observations gets ``None`` and its
    message in ``errors``; degenerate (tied) input raises.
    """
    v = _values(samples)
    if k_grid is None:
        k_grid = default_k(len(v))
    k_grid = np.atleast_1d(np.asarray(k_grid, dtype=np.int64))
    out, errors = {}, {}
    for side, x in (("right", v), ("left", -v)):
        try:
            out[side] = hill_estimates(x, k_grid)
        except TailEmpty as exc:
            out[side] = None
            errors[side] = str(exc)
    if out["right"] is None and out["left"] is None:
        raise TailEmpty("tail empty on both sides")
    return HillCurve(k_grid, out["right"], out["left"], errors)


# ---------------------------------------------------------------------------
# empirical machinery shared by the constant estimators
# ---------------------------------------------------------------------------

class EmpiricalTails:
    """Sorted positive parts of R and -R with prefix sums of powers."""

    def __init__(self, values, alpha=None):
        v = np.asarray(values, dtype=float)
        self.n = len(v)
        if self.n == 0:
            raise ValueError("empty sample batch")
        self.side = {1: np.sort(v[v > 0]), -1: np.sort(-v[v < 0])}
        self.alpha = alpha
        if alpha is not None:
            self.prefix = {s: np.concatenate(([0.0], np.cumsum(a ** alpha))) for s, a in self.side.items()}

    def ccdf(self, s, x):
        """P(s R > x) for x >= 0."""
        a = self.side[s]
        return (len(a) - np.searchsorted(a, x, side="right")) / self.n

    def abs_ccdf(self, x):
        return self.ccdf(1, x) + self.ccdf(-1, x)

    def trunc_moment(self, s, u):
        """E[min((s R)+, u)**alpha] for u >= 0 (vectorized over u)."""
        a = self.side[s]
        u = np.asarray(u, dtype=float)
        k = np.searchsorted(a, u, side="right")
        return (self.prefix[s][k] + np.where(k < len(a), u ** self.alpha * (len(a) - k), 0.0)) / self.n


@dataclass
class ChildWeights:
    """A finite measure on child weights: E[sum_j f(C_j)] ~ sum_i w_i f(c_i).

    Exact for finite-discrete laws, a Monte Carlo average otherwise.
    """

    w: np.ndarray
    c: np.ndarray
    exact: bool

    @classmethod
    def from_law(cls, law, count=10**6, seed=0):
        try:
            outcomes = law.weight_outcomes()
        except ValueError:
            outcomes = None
        if outcomes is not None:
            w = np.array([p for p, cs in outcomes for _ in cs], dtype=float)
            c = np.array([x for _, cs in outcomes for x in cs], dtype=float)
            keep = c != 0
            return cls(w[keep], c[keep], True)
        vec = law.sample(rngmod.stream(seed), count)
        keep = vec.c != 0
        return cls(np.full(int(keep.sum()), 1.0 / count), vec.c[keep], False)

    def split(self, b):
        """Partition into ``b`` groups, each rescaled to a full-mass measure."""
        if self.exact:
            return [self] * b
        idx = np.arange(len(self.c)) % b
        return [ChildWeights(self.w[idx == i] * b, self.c[idx == i], False) for i in range(b)]

    def expected_exceed(self, tails, s, x):
        """E[sum_j 1(s C_j R > x)] for scalar x >= 0; s = 0 means |C_j R|."""
        a = np.abs(self.c)
        if s == 0:
            return float(np.dot(self.w, tails.abs_ccdf(x / a)))
        sg = np.sign(self.c) * s
        pos = sg > 0
        return float(np.dot(self.w[pos], tails.ccdf(1, x / a[pos])) +
                     np.dot(self.w[~pos], tails.ccdf(-1, x / a[~pos])))

    def expected_trunc(self, tails, s, u):
        """E[sum_j min(d(C_j R), u)**alpha] with d the s-part (s = 0: |.|)."""
        a = np.abs(self.c)
        scale = self.w * a ** tails.alpha
        if s == 0:
            return float(np.dot(scale, tails.trunc_moment(1, u / a) + tails.trunc_moment(-1, u / a)))
        sg = np.sign(self.c) * s
        pos = sg > 0
        return float(np.dot(scale[pos], tails.trunc_moment(1, u / a[pos])) +
                     np.dot(scale[~pos], tails.trunc_moment(-1, u / a[~pos])))


def _own_trunc(tails, s, u):
    if s == 0:
        return float(tails.trunc_moment(1, u) + tails.trunc_moment(-1, u))
    return float(tails.trunc_moment(s, u))


def _own_exceed(tails, s, x):
    return float(tails.abs_ccdf(x) if s == 0 else tails.ccdf(s, x))


def _batch_ci(full, parts, z=None):
    parts = np.asarray(parts, dtype=float)
    b = len(parts)
    t = stats.t.ppf(0.995, b - 1) if z is None else z
    h = t * parts.std(ddof=1) / math.sqrt(b)
    return Estimate(full, full - h, full + h, False, b)


def _interleave(values, b):
    return [values[i::b] for i in range(b)]


@dataclass
class HConstants:
    method: str
    case: str
    h_plus: Optional[Estimate] = None
    h_minus: Optional[Estimate] = None
    h: Optional[Estimate] = None
    diagnostics: dict = field(default_factory=dict)

    def primary(self):
        """The constant governing P(R > t): H in case (b), H+ in case (a)."""
        return self.h if self.case == "b" else self.h_plus

    def to_dict(self):
        out = {"method": self.method, "case": self.case}
        for name in ("h_plus", "h_minus", "h"):
            e = getattr(self, name)
            out[name] = None if e is None else {"estimate": e.estimate, "ci": [e.ci_low, e.ci_high]}
        out["diagnostics"] = self.diagnostics
        return out


def _case(law):
    return "a" if law.nonnegative else "b"


# ---------------------------------------------------------------------------
# moment form
# ---------------------------------------------------------------------------

def estimate_H_moment(law, r_samples, alpha, mu, count=10**6, seed=0, batches=DEFAULT_BATCHES,
                      chunk=10**6):
    """H+, H- (nonnegative weights) or H (signed weights) in moment form.

    Averages d(sum_j C_j R_j + Q)**alpha - sum_j d(C_j R_j)**alpha over
    ``count`` fresh vectors, each child slot drawing R_j independently
    with replacement from ``r_samples``, and divides by alpha * mu
    (2 alpha mu for signed weights).  Intervals are batch means.
    """
    if mu <= 0 or alpha <= 0:
        raise ValueError("alpha and mu must be positive")
    r = _values(r_samples)
    if len(r) == 0:
        raise ValueError("empty sample batch")
    case = _case(law)
    g = rngmod.stream(seed)
    parts = {"+": [], "-": [], "abs": []}
    done = 0
    while done < count:
        k = min(chunk, count - done)
        vec = law.sample(g, k)
        cr = vec.c * r[g.integers(0, len(r), len(vec.c))]
        total = vec.weight_sums(cr) + vec.q
        if case == "a":
            parts["+"].append(np.maximum(total, 0) ** alpha - vec.weight_sums(np.maximum(cr, 0) ** alpha))
            parts["-"].append(np.maximum(-total, 0) ** alpha - vec.weight_sums(np.maximum(-cr, 0) ** alpha))
        else:
            parts["abs"].append(np.abs(total) ** alpha - vec.weight_sums(np.abs(cr) ** alpha))
        done += k

    def summarize(vals, denom):
        x = np.concatenate(vals) / denom
        groups = np.array_split(x, batches)
        return _batch_ci(float(x.mean()), [gr.mean() for gr in groups])

    out = HConstants("moment", case)
    if case == "a":
        out.h_plus = summarize(parts["+"], alpha * mu)
        out.h_minus = summarize(parts["-"], alpha * mu)
    else:
        out.h = summarize(parts["abs"], 2 * alpha * mu)
    out.diagnostics = {"count": count, "batches": batches, "pool_size": len(r)}
    return out


# ---------------------------------------------------------------------------
# integral form
# ---------------------------------------------------------------------------

def covers_support(a, min_count=1000):
    """True when at least ``min_count`` magnitudes sit on the sample maximum.

    Such a sample has bounded, fully sampled support, so sums and integrals
    over it need no upper cut.
    """
    a = np.asarray(a, dtype=float)
    top = float(a.max())
    return np.count_nonzero(a >= top * (1 - 1e-12)) >= min_count


def default_v_grid(r_samples, points=DEFAULT_GRID_POINTS, cmax=None):
    """Log-uniform grid from the median of |R| to its 99.99% quantile.

    With ``cmax`` (the largest |C|) and a sample that covers its support the
    grid runs to 2 cmax max|R|, past every value of |C R|.
    """
    a = np.abs(_values(r_samples))
    lo, hi = np.quantile(a, [0.5, 0.9999])
    if cmax is not None and covers_support(a):
        hi = 2 * cmax * float(a.max())
    lo = max(lo, hi * 1e-12, np.finfo(float).tiny)
    return np.geomspace(lo, hi, points)


def _integrand(tails, kids, s, v):
    """v**alpha * (P(dR > v) - E[sum 1(d C_j R > v)]): integrand in d(log v)."""
    return np.array([x ** tails.alpha * (_own_exceed(tails, s, x) - kids.expected_exceed(tails, s, x))
                     for x in v])


def _head(tails, kids, s, u):
    """int_0^u v**(alpha-1) (P(dR > v) - E[sum 1(d C_j R > v)]) dv, exactly."""
    return (_own_trunc(tails, s, u) - kids.expected_trunc(tails, s, u)) / tails.alpha


def _decade_residual(head_at, v_max, scale=0.0):
    """Extrapolate the integral beyond ``v_max``.

    The increments of the exact cumulative integral over the last two
    decades give the decay per decade (the integrand's log-slope seen at
    decade resolution); the remainder is the geometric continuation.
    Increments below 1e-12 * ``scale`` are rounding noise and count as 0.
    """
    f0, f1, f2 = head_at(v_max / 100), head_at(v_max / 10), head_at(v_max)
    last, prev = f2 - f1, f1 - f0
    if abs(last) <= 1e-12 * scale:
        return 0.0, 0.0
    if prev == 0:
        return math.inf, math.nan
    ratio = last / prev
    if abs(ratio) >= 1:
        return math.copysign(math.inf, last), ratio
    return last * ratio / (1 - ratio), ratio


def estimate_H_integral(law, r_samples, alpha, mu, v_grid=None, count=10**6, seed=0,
                        batches=DEFAULT_BATCHES, max_residual=0.25, grid_kids=4000):
    """H+, H- or H in integral form from the empirical law of ``r_samples``.

    The integral over [0, v_max] is evaluated exactly for the empirical
    measures: with R resampled from the batch, the pairing expectation
    E[sum_j 1(d C_j R > v)] is averaged over the whole batch for each
    weight.  The integrand on ``v_grid`` (400 log-uniform points from the
    median of |R| to its 99.99% quantile by default) is reported, and the
    part beyond v_max is bounded by extrapolating the decay of the exact
    integral over the two decades below v_max.  That bound is reported as
    ``residual`` in the diagnostics and not added to the estimate: the
    integrand is usually still pre-asymptotic there and the geometric
    continuation overshoots.
    """
    if mu <= 0 or alpha <= 0:
        raise ValueError("alpha and mu must be positive")
    r = _values(r_samples)
    if len(r) == 0:
        raise ValueError("empty sample batch")
    kids = ChildWeights.from_law(law, count, seed)
    cmax = float(np.max(np.abs(kids.c))) if len(kids.c) else 0.0
    top = float(np.max(np.abs(r))) * max(1.0, cmax)
    if v_grid is None:
        v_grid = default_v_grid(r, cmax=cmax)
    v_grid = np.asarray(v_grid, dtype=float)
    if len(v_grid) < 2:
        raise ValueError("grid too coarse: need at least two points")
    if np.any(np.diff(v_grid) <= 0) or v_grid[0] <= 0:
        raise ValueError("grid must be positive and strictly increasing")
    case = _case(law)
    tails = EmpiricalTails(r, alpha)
    sub = kids if kids.exact or len(kids.c) <= grid_kids else ChildWeights(
        kids.w[:: len(kids.c) // grid_kids] * (len(kids.c) // grid_kids),
        kids.c[:: len(kids.c) // grid_kids], False)
    sides = {"h_plus": 1, "h_minus": -1} if case == "a" else {"h": 0}
    denom = mu if case == "a" else 2 * mu
    groups_r = _interleave(r, batches)
    groups_k = kids.split(batches)
    out = HConstants("integral", case)
    diag = {"v_min": float(v_grid[0]), "v_max": float(v_grid[-1]), "points": len(v_grid)}
    for name, s in sides.items():
        head = _head(tails, kids, s, v_grid[-1])
        f = _integrand(tails, sub, s, v_grid)
        if v_grid[-1] >= top:
            # both empirical terms vanish beyond the largest |R| and |C R|
            resid, ratio = 0.0, 0.0
        else:
            scale = _own_trunc(tails, s, v_grid[-1]) / alpha
            resid, ratio = _decade_residual(lambda u: _head(tails, kids, s, u), v_grid[-1], scale)
        if not math.isfinite(resid) or abs(resid) > max_residual * max(abs(head), 1e-300):
            raise IntegralNotConverged(
                f"integral not converged for {name}: residual {resid:.3g} vs integral {head:.3g} "
                f"(decade decay ratio {ratio:.3g})",
                {"head": head, "residual": resid, "decade_ratio": ratio, "integrand": f.tolist()})
        parts = []
        for gr, gk in zip(groups_r, groups_k):
            t = EmpiricalTails(gr, alpha)
            parts.append(_head(t, gk, s, v_grid[-1]) / denom)
        setattr(out, name, _batch_ci(head / denom, parts))
        diag[name] = {"head": head / denom, "residual": resid / denom, "decade_ratio": ratio,
                      "integrand": f.tolist()}
    out.diagnostics = diag
    return out


# ---------------------------------------------------------------------------
# Goldie integrability diagnostics
# ---------------------------------------------------------------------------

@dataclass
class GoldieTable:
    t: np.ndarray
    g_plus: np.ndarray
    g_minus: np.ndarray
    cum_plus: np.ndarray
    cum_minus: np.ndarray
    cum_abs_plus: np.ndarray
    cum_abs_minus: np.ndarray

    def last_decade_fraction(self, side="plus", absolute=False):
        """Share of the cumulative integral added over t > t_max - log 10.

        By default the signed (exact) cumulative integral is used; with
        ``absolute=True`` the grid integral of |g|, which also accumulates
        the sampling noise of g.
        """
        if absolute:
            cum = self.cum_abs_plus if side == "plus" else self.cum_abs_minus
        else:
            cum = self.cum_plus if side == "plus" else self.cum_minus
        if cum[-1] == 0:
            return 0.0
        cut = np.searchsorted(self.t, self.t[-1] - math.log(10.0))
        return float(abs(cum[-1] - cum[cut]) / abs(cum[-1]))

    def rows(self):
        for i in range(len(self.t)):
            yield (float(self.t[i]), float(self.g_plus[i]), float(self.g_minus[i]),
                   float(self.cum_plus[i]), float(self.cum_minus[i]),
                   float(self.cum_abs_plus[i]), float(self.cum_abs_minus[i]))


def default_t_grid(r_samples, points=400, min_exceed=100):
    """log|R| from two units below the smallest |R| up to the level where
    the empirical CCDF of |R| is about ``min_exceed / count``."""
    a = np.abs(_values(r_samples))
    a = a[a != 0]
    lo = math.log(a.min()) - 2.0
    hi = math.log(np.quantile(a, 1 - min_exceed / len(a))) if len(a) > 2 * min_exceed else math.log(a.max())
    return np.linspace(lo, hi, points)


def goldie_integrand(law, r_samples, alpha, t_grid=None, count=2 * 10**4, seed=0, grid_kids=4000):
    """g(t) = e^(alpha t) (P(dR > e^t) - E[sum_j 1(d C_j R > e^t)]) for d = +, -.

    ``cum_*`` is the signed integral from -inf to t, exact for the
    empirical measures; ``cum_abs_*`` integrates |g| over the grid with the
    trapezoid rule, starting from the exact absolute head below t[0].
    For continuous weights g itself is evaluated with a subsample of
    ``grid_kids`` weight draws.
    """
    r = _values(r_samples)
    tails = EmpiricalTails(r, alpha)
    kids = ChildWeights.from_law(law, count, seed)
    step = max(1, len(kids.c) // grid_kids) if not kids.exact else 1
    sub = kids if step == 1 else ChildWeights(kids.w[::step] * step, kids.c[::step], False)
    t_grid = default_t_grid(r) if t_grid is None else np.asarray(t_grid, dtype=float)
    v = np.exp(t_grid)
    res = {}
    for name, s in (("plus", 1), ("minus", -1)):
        g = np.array([x ** alpha * (tails.ccdf(s, x) - sub.expected_exceed(tails, s, x)) for x in v])
        cum = np.array([_head(tails, kids, s, x) for x in v])
        steps = 0.5 * (np.abs(g[1:]) + np.abs(g[:-1])) * np.diff(t_grid)
        res[name] = (g, cum, abs(cum[0]) + np.concatenate(([0.0], np.cumsum(steps))))
    return GoldieTable(t_grid, res["plus"][0], res["minus"][0], res["plus"][1], res["minus"][1],
                       res["plus"][2], res["minus"][2])


# ---------------------------------------------------------------------------
# empirical vs model tail
# ---------------------------------------------------------------------------

def wilson(k, n, z=Z95):
    """Wilson score interval for a binomial proportion k / n."""
    k = np.asarray(k, dtype=float)
    p = k / n
    denom = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * np.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return centre - half, centre + half


@dataclass
class TailRow:
    t: float
    right: float
    right_ci: tuple
    left: float
    left_ci: tuple
    model_right: float
    model_left: float
    exceed_right: int
    exceed_left: int
    flag: str

    @property
    def ratio_right(self):
        return self.right / self.model_right if self.model_right > 0 else math.nan

    @property
    def ratio_left(self):
        return self.left / self.model_left if self.model_left > 0 else math.nan

    def csv_row(self):
        return (self.t, self.right, self.right_ci[0], self.right_ci[1], self.left, self.left_ci[0],
                self.left_ci[1], self.model_right, self.model_left, self.ratio_right,
                self.ratio_left, self.flag)


def default_thresholds(r_samples, points=25, min_exceed=100):
    """Log-spaced thresholds from the 90% quantile of |R| up to the level
    where the rarer tail still has ``min_exceed`` exceedances."""
    v = _values(r_samples)
    tails = EmpiricalTails(v)
    a = np.abs(v)
    lo = np.quantile(a, 0.9)
    sides = [tails.side[s] for s in (1, -1) if len(tails.side[s]) > min_exceed + 1]
    if not sides:
        raise TailEmpty("tail empty: fewer than min_exceed observations")
    # strictly above the (min_exceed + 1)-th largest value lie min_exceed points
    hi = min(s[-min_exceed - 1] for s in sides)
    if hi <= lo:
        hi = max(s[-min_exceed - 1] for s in sides)
    return np.geomspace(lo, hi, points)


def tail_table(r_samples, alpha, h_plus, h_minus, thresholds=None, z=Z95, min_exceed=100):
    """Empirical CCDFs of R and -R with Wilson intervals against H t**-alpha.

    Rows where either empirical CCDF exceeds 1/2 are flagged
    ``pre-asymptotic``; rows with fewer than ``min_exceed`` exceedances on
    either side are flagged ``sparse``.
    """
    v = _values(r_samples)
    thresholds = default_thresholds(v) if thresholds is None else np.asarray(thresholds, dtype=float)
    if np.any(np.diff(thresholds) <= 0):
        raise ValueError("thresholds must be strictly increasing")
    tails = EmpiricalTails(v)
    n = tails.n
    # a side without any observations (e.g. the left tail of a nonnegative R)
    # is not counted as sparse
    present = [s for s in (1, -1) if len(tails.side[s])]
    rows = []
    for t in thresholds:
        kr = int(round(tails.ccdf(1, t) * n))
        kl = int(round(tails.ccdf(-1, t) * n))
        pr, pl = kr / n, kl / n
        if pr > 0.5 or pl > 0.5:
            flag = "pre-asymptotic"
        elif min(kr if s == 1 else kl for s in present) < min_exceed:
            flag = "sparse"
        else:
            flag = "ok"
        rows.append(TailRow(float(t), pr, tuple(map(float, wilson(kr, n, z))), pl,
                            tuple(map(float, wilson(kl, n, z))),
                            h_plus * t ** -alpha, h_minus * t ** -alpha, kr, kl, flag))
    return rows


def intervals_overlap(a, b):
    return a[0] <= b[1] and b[0] <= a[1]
