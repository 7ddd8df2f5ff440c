"""Tilted path-weight measures and their matrix convolution powers.

For a node with path weight Pi, write V = log|Pi| and X = sgn(Pi).  The
generation-n measures

    mu_n^(+-)(dt) = e^(alpha t) E[sum_{A_n} 1(X_i = +-1, V_i in dt)]

satisfy (mu_n^+, mu_n^-) = (1, 0) H^{*n} where H = [[eta+, eta-], [eta-, eta+]]
and eta+- = mu_1^(+-).  Lattice laws (every log|C| in lambda Z) get exact
integer-indexed grids; other laws get binned grids.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Optional

import numpy as np
from scipy import signal

from . import rng as rngmod
from .law import closed_mu, closed_rho
from .oracle import enumerate_generation
from .tail import ChildWeights, EmpiricalTails, _batch_ci, _interleave, _values, covers_support

NORMALIZATION_TOL = 1e-9
MAX_SUPPORT = 10**7
BINS = 2048
WIDTH_SD = 12.0
LATTICE_EXCEEDANCES = 1000


class NotNormalized(ValueError):
    pass


class IncompatibleGrids(ValueError):
    pass


class NonLattice(ValueError):
    pass


class SupportOverflow(RuntimeError):
    pass


@dataclass
class MeasureGrid:
    """A finite measure on the points ``offset + (start + i) * span``.

    For ``kind == "lattice"`` the points are atoms; for ``"binned"`` they are
    bin centres with bin width ``span``.
    """

    kind: str
    span: float
    offset: float
    start: int
    masses: np.ndarray

    def __post_init__(self):
        self.masses = np.asarray(self.masses, dtype=float)
        if self.span <= 0:
            raise ValueError("span must be positive")
        if np.any(self.masses < 0):
            raise ValueError("masses must be nonnegative")

    @classmethod
    def zero(cls, kind, span, offset=0.0):
        return cls(kind, span, offset, 0, np.zeros(0))

    @classmethod
    def delta0(cls, kind, span):
        return cls(kind, span, 0.0, 0, np.ones(1))

    @property
    def support(self):
        return self.offset + (self.start + np.arange(len(self.masses))) * self.span

    @property
    def indices(self):
        return self.start + np.arange(len(self.masses))

    def total(self):
        return math.fsum(self.masses)

    def mean(self):
        """First moment (not normalized by the total mass)."""
        return math.fsum(self.support * self.masses)

    def trimmed(self):
        nz = np.flatnonzero(self.masses)
        if len(nz) == 0:
            return replace(self, start=0, masses=np.zeros(0))
        return replace(self, start=self.start + int(nz[0]), masses=self.masses[nz[0]: nz[-1] + 1].copy())

    def is_zero(self):
        return not np.any(self.masses)

    def atoms(self):
        return [(float(x), float(m)) for x, m in zip(self.support, self.masses) if m != 0]

    def _check(self, other):
        if self.kind != other.kind:
            raise IncompatibleGrids(f"incompatible grids: {self.kind} vs {other.kind}")
        if not math.isclose(self.span, other.span, rel_tol=1e-12):
            raise IncompatibleGrids(f"incompatible grids: span {self.span} vs {other.span}")

    def __add__(self, other):
        self._check(other)
        if self.is_zero():
            return other
        if other.is_zero():
            return self
        if abs(self.offset - other.offset) > 1e-12 * max(1.0, self.span):
            raise IncompatibleGrids("incompatible grids: offsets differ")
        lo = min(self.start, other.start)
        hi = max(self.start + len(self.masses), other.start + len(other.masses))
        m = np.zeros(hi - lo)
        m[self.start - lo: self.start - lo + len(self.masses)] += self.masses
        m[other.start - lo: other.start - lo + len(other.masses)] += other.masses
        return MeasureGrid(self.kind, self.span, self.offset, lo, m)

    def convolve(self, other, max_support=MAX_SUPPORT):
        self._check(other)
        if self.is_zero() or other.is_zero():
            return MeasureGrid.zero(self.kind, self.span, self.offset + other.offset)
        width = len(self.masses) + len(other.masses) - 1
        if width > max_support:
            raise SupportOverflow(f"support overflow: {width} points exceeds {max_support}")
        if len(self.masses) * len(other.masses) <= 10**7:
            m = np.convolve(self.masses, other.masses)
        else:
            m = np.maximum(signal.fftconvolve(self.masses, other.masses), 0.0)
        out = MeasureGrid(self.kind, self.span, self.offset + other.offset,
                          self.start + other.start, m)
        if self.kind == "binned":
            out = out.rebinned(self.offset)
        return out.normalized_offset()

    def normalized_offset(self):
        """Move the offset into [0, span) by shifting the integer start."""
        k = math.floor(self.offset / self.span)
        if k == 0:
            return self
        return replace(self, offset=self.offset - k * self.span, start=self.start + k)

    def rebinned(self, offset):
        """Move masses onto centres ``offset + i * span`` by splitting each
        mass linearly between its two nearest new centres (preserves total
        mass and first moment)."""
        shift = (self.offset - offset) / self.span
        whole = math.floor(shift)
        frac = shift - whole
        m = np.zeros(len(self.masses) + 1)
        m[:-1] += self.masses * (1 - frac)
        m[1:] += self.masses * frac
        return MeasureGrid(self.kind, self.span, offset, self.start + whole, m)

    def aligned_with(self, other):
        """Both mass vectors on a common index range (same kind, span, offset)."""
        self._check(other)
        lo = min(self.start, other.start)
        hi = max(self.start + len(self.masses), other.start + len(other.masses))
        a, b = np.zeros(hi - lo), np.zeros(hi - lo)
        a[self.start - lo: self.start - lo + len(self.masses)] = self.masses
        b[other.start - lo: other.start - lo + len(other.masses)] = other.masses
        return lo, a, b


@dataclass
class MatrixMeasure:
    """2x2 array of :class:`MeasureGrid` entries."""

    entries: tuple

    @classmethod
    def from_eta(cls, eta_plus, eta_minus):
        return cls(((eta_plus, eta_minus), (eta_minus, eta_plus)))

    @classmethod
    def identity(cls, kind, span):
        d, z = MeasureGrid.delta0(kind, span), MeasureGrid.zero(kind, span)
        return cls(((d, z), (z, d)))

    def __getitem__(self, ij):
        return self.entries[ij[0]][ij[1]]

    def mass_matrix(self):
        return np.array([[self[i, j].total() for j in range(2)] for i in range(2)])

    def is_symmetric(self):
        """Whether the arrangement is [[a, b], [b, a]]."""
        same = lambda x, y: x.trimmed().start == y.trimmed().start and np.array_equal(
            x.trimmed().masses, y.trimmed().masses)
        return same(self[0, 0], self[1, 1]) and same(self[0, 1], self[1, 0])


def matrix_convolve(a, b, max_support=MAX_SUPPORT):
    """(A * B)_ij = sum_k A_ik * B_kj."""
    kinds = {a[i, j].kind for i in range(2) for j in range(2)} | {b[i, j].kind for i in range(2) for j in range(2)}
    if len(kinds) != 1:
        raise IncompatibleGrids("incompatible grids: mixed kinds")
    rows = []
    for i in range(2):
        row = []
        for j in range(2):
            acc = a[i, 0].convolve(b[0, j], max_support) + a[i, 1].convolve(b[1, j], max_support)
            row.append(acc.trimmed())
        rows.append(tuple(row))
    return MatrixMeasure(tuple(rows))


def mass_matrix_checks(h, tol=1e-10):
    """Row sums 1 and eigenvector (1, 1) with eigenvalue 1 for the mass matrix of H."""
    m = h.mass_matrix()
    ones = np.ones(2)
    row_sums = m @ ones
    eig = np.linalg.eigvals(m)
    return {
        "matrix": m.tolist(),
        "row_sums": row_sums.tolist(),
        "row_sums_ok": bool(np.allclose(row_sums, 1.0, atol=tol, rtol=0)),
        "eigvec_ones_ok": bool(np.allclose(m @ ones, ones, atol=tol, rtol=0)),
        "spectral_radius": float(np.max(np.abs(eig))),
    }


# ---------------------------------------------------------------------------
# eta measures
# ---------------------------------------------------------------------------

def lattice_span(values, tol=1e-9, max_den=1000):
    """Largest lambda with every value in lambda Z, or None if there is none.

    Ratios to the smallest nonzero value are matched to fractions with
    denominators up to ``max_den``.
    """
    v = np.unique(np.abs(np.asarray(values, dtype=float)))
    v = v[v > tol]
    if len(v) == 0:
        return None
    base = v[0]
    fracs = []
    for x in v:
        f = Fraction(x / base).limit_denominator(max_den)
        if abs(float(f) * base - x) > tol * max(1.0, x):
            return None
        fracs.append(f)
    lcm = math.lcm(*(f.denominator for f in fracs))
    g = math.gcd(*(f.numerator * (lcm // f.denominator) for f in fracs))
    return base * g / lcm


def _log_weights(law):
    try:
        outcomes = law.weight_outcomes()
    except ValueError:
        return None
    c = np.array([x for _, cs in outcomes for x in cs], dtype=float)
    w = np.array([p for p, cs in outcomes for _ in cs], dtype=float)
    keep = c != 0
    return w[keep], c[keep]


def _span_of(u):
    # every log|C| = 0 sits on any lattice; use a unit span
    if len(u) and np.all(np.abs(u) <= 1e-12):
        return 1.0
    return lattice_span(u)


def law_span(law):
    """Lattice span of log|C| for a finite-discrete weight law, else None."""
    lw = _log_weights(law)
    if lw is None:
        return None
    return _span_of(np.log(np.abs(lw[1])))


def _check_normalized(law, alpha):
    rho = closed_rho(law, alpha)
    if rho is None:
        from .moments import rho_estimate
        est = rho_estimate(law, alpha, count=10**6, seed=0, exact=False)
        if not est.covers(1.0):
            raise NotNormalized(f"not normalized at alpha: rho_alpha CI [{est.ci_low:.6g}, {est.ci_high:.6g}]")
        return
    if abs(rho - 1) > NORMALIZATION_TOL:
        raise NotNormalized(f"not normalized at alpha: rho_alpha = {rho:.12g}")


def _lattice_from_atoms(x, m, span, kind="lattice"):
    """Lattice grid of atoms at ``x`` (each a multiple of ``span``)."""
    idx = np.rint(x / span).astype(np.int64)
    if np.any(np.abs(idx * span - x) > 1e-9 * np.maximum(1.0, np.abs(x))):
        raise NonLattice("atoms are not on the lattice")
    if len(idx) == 0:
        return MeasureGrid.zero(kind, span)
    lo = int(idx.min())
    masses = np.bincount(idx - lo, weights=m, minlength=int(idx.max()) - lo + 1)
    return MeasureGrid(kind, span, 0.0, lo, masses)


def _binned_from_atoms(x, m, lo, span, bins):
    centre0 = lo + 0.5 * span
    start = math.floor(centre0 / span)
    offset = centre0 - start * span
    idx = np.clip(np.floor((x - lo) / span).astype(np.int64), 0, bins - 1)
    return MeasureGrid("binned", span, offset, start, np.bincount(idx, weights=m, minlength=bins))


def eta_grids(law, alpha, grid_spec=None):
    """The pair (eta+, eta-) with eta+-(du) = e^(alpha u) E[sum_j 1(sgn C_j = +-1, log|C_j| in du)].

    Lattice laws give exact lattice grids.  Otherwise the measures are
    binned (``bins`` bins over ``width_sd`` standard deviations either side
    of the mean of log|C|), from exact atoms when the weights are
    finite-discrete and from ``count`` Monte Carlo vectors when not.
    """
    spec = {"count": 10**6, "seed": 0, "bins": BINS, "width_sd": WIDTH_SD}
    spec.update(grid_spec or {})
    _check_normalized(law, alpha)
    lw = _log_weights(law)
    if lw is not None:
        w, c = lw
        u = np.log(np.abs(c))
        mass = w * np.abs(c) ** alpha
        span = _span_of(u)
        if span is not None:
            pos = c > 0
            return (_lattice_from_atoms(u[pos], mass[pos], span),
                    _lattice_from_atoms(u[~pos], mass[~pos], span))
    else:
        vec = law.sample(rngmod.stream(spec["seed"]), spec["count"])
        c = vec.c[vec.c != 0]
        u = np.log(np.abs(c))
        mass = np.full(len(c), 1.0 / spec["count"]) * np.abs(c) ** alpha
    centre = float(np.mean(u))
    sd = float(np.std(u)) or 1.0
    lo = centre - spec["width_sd"] * sd
    span = 2 * spec["width_sd"] * sd / spec["bins"]
    pos = c > 0
    return (_binned_from_atoms(u[pos], mass[pos], lo, span, spec["bins"]),
            _binned_from_atoms(u[~pos], mass[~pos], lo, span, spec["bins"]))


def mu_n_via_convolution(eta_pair, n, max_support=MAX_SUPPORT):
    """(mu_n^+, mu_n^-) as the first row of the n-th matrix convolution power of H."""
    if n < 0:
        raise ValueError("n must be >= 0")
    eta_plus, eta_minus = eta_pair
    h = MatrixMeasure.from_eta(eta_plus, eta_minus)
    power = MatrixMeasure.identity(eta_plus.kind, eta_plus.span)
    for _ in range(n):
        power = matrix_convolve(power, h, max_support)
    return power[0, 0], power[0, 1]


def mu_n_via_enumeration(law, alpha, n, cap=10**7):
    """(mu_n^+, mu_n^-) by enumerating every generation-n realization.

    Each node of each realization contributes prob * |Pi|**alpha at
    log|Pi|; zero weights contribute nothing.
    """
    span = law_span(law)
    if span is None:
        raise NonLattice("law is not lattice")
    states = enumerate_generation(law, n, cap)
    pis = np.array([pi for _, pis in states for pi in pis], dtype=float)
    probs = np.array([p for p, pis in states for _ in pis], dtype=float)
    keep = pis != 0
    pis, probs = pis[keep], probs[keep]
    u = np.log(np.abs(pis))
    mass = probs * np.abs(pis) ** alpha
    pos = pis > 0
    return (_lattice_from_atoms(u[pos], mass[pos], span).trimmed(),
            _lattice_from_atoms(u[~pos], mass[~pos], span).trimmed())


def compare_measures(a, b):
    """Largest atom-wise absolute difference between two grids."""
    if a.is_zero() and b.is_zero():
        return 0.0
    if abs(a.offset - b.offset) > 1e-12 and not (a.is_zero() or b.is_zero()):
        raise IncompatibleGrids("incompatible grids: offsets differ")
    _, x, y = a.aligned_with(b)
    return float(np.max(np.abs(x - y))) if len(x) else 0.0


def convolution_identity(law, alpha, n_max, tol=1e-10):
    """Compare convolution and enumeration for n = 0..n_max."""
    eta = eta_grids(law, alpha)
    rows = []
    for n in range(n_max + 1):
        conv = mu_n_via_convolution(eta, n)
        enum = mu_n_via_enumeration(law, alpha, n)
        diff = max(compare_measures(conv[0], enum[0]), compare_measures(conv[1], enum[1]))
        total = conv[0].total() + conv[1].total()
        rows.append({"n": n, "max_diff": diff, "total_mass": total,
                     "passed": diff <= tol and abs(total - 1) <= tol})
    return rows


# ---------------------------------------------------------------------------
# lattice tail constants
# ---------------------------------------------------------------------------

@dataclass
class LatticeH:
    t: float
    span: float
    h_plus: object
    h_minus: object
    residual: dict = field(default_factory=dict)
    k_range: tuple = ()

    def to_dict(self):
        return {"t": self.t, "span": self.span,
                "h_plus": {"estimate": self.h_plus.estimate, "ci": [self.h_plus.ci_low, self.h_plus.ci_high]},
                "h_minus": {"estimate": self.h_minus.estimate, "ci": [self.h_minus.ci_low, self.h_minus.ci_high]},
                "residual": self.residual, "k_range": list(self.k_range)}


def _phase(t, span):
    """t modulo span, rounded so that t and t + span give the same phase."""
    frac = round((t / span) % 1.0, 12)
    return 0.0 if frac >= 1.0 else frac * span


def _lattice_sum(tails, kids, s, t0, span, alpha, k_lo, k_hi, closed_below):
    ks = np.arange(k_lo, k_hi + 1)
    x = np.exp(t0 + ks * span)
    terms = np.array([xi ** alpha * (tails.ccdf(s, xi) - kids.expected_exceed(tails, s, xi)) for xi in x])
    total = math.fsum(terms)
    if closed_below:
        # below k_lo every threshold is under the smallest |C R| and |R|, so
        # the bracket is constant and the remaining sum is geometric
        bracket = tails.ccdf(s, 0.0) - kids.expected_exceed(tails, s, 0.0)
        ratio = math.exp(-alpha * span)
        total += bracket * math.exp(alpha * (t0 + (k_lo - 1) * span)) / (1 - ratio)
    return total, terms


def _geometric_residual(edge):
    """Sum of the continuation of three summands ordered towards the cut."""
    a, _, c = edge
    if a == 0 or c == 0 or (a > 0) != (c > 0):
        return math.nan
    ratio = math.sqrt(c / a)
    if ratio >= 1:
        return math.inf
    return c * ratio / (1 - ratio)


def default_v_max(a, cmax):
    """Upper cut of the lattice sum for the sample magnitudes ``a``.

    Normally the level with 1000 exceedances.  When at least that many
    draws sit on the sample maximum the support is bounded and fully
    sampled, and the sum runs past every value of |C R|.
    """
    if covers_support(a, LATTICE_EXCEEDANCES):
        return 2 * cmax * float(a.max())
    return float(np.quantile(a, max(0.5, 1 - LATTICE_EXCEEDANCES / len(a))))


def lattice_H(law, r_samples, alpha, mu, t, K=None, v_max=None, batches=20, seed=0):
    """H+(t), H-(t) for a lattice law:

        (lambda / mu) sum_k e^(alpha (t + k lambda)) (P(+-R > e^(t + k lambda))
                                                     - E[sum_j 1(+-C_j R > e^(t + k lambda))])

    with empirical CCDFs.  Indices k are taken relative to t mod lambda, so
    the result is exactly lambda-periodic in t.

    Over the whole real line the empirical version of this sum collapses
    (the pairing term is a shifted copy of the first one), so the sum stops
    at the last threshold not above ``v_max`` (see :func:`default_v_max`);
    the part beyond is reported in ``residual`` from the geometric
    decay of the last three summands.  With ``K=None`` the lower part of the
    sum is complete: below the smallest |C R| and |R| the bracket is
    constant and the series is summed in closed form.  An explicit ``K``
    restricts to k >= -K and reports a lower residual the same way.
    """
    span = law_span(law)
    if span is None:
        raise NonLattice("law is not lattice; refusing lattice constants")
    if mu <= 0 or alpha <= 0:
        raise ValueError("alpha and mu must be positive")
    r = _values(r_samples)
    tails = EmpiricalTails(r, alpha)
    kids = ChildWeights.from_law(law, seed=seed)
    t0 = _phase(t, span)
    a = np.abs(r[r != 0])
    cmin = float(np.min(np.abs(kids.c)))
    if v_max is None:
        v_max = default_v_max(a, float(np.max(np.abs(kids.c))))
    k_hi = math.floor((math.log(v_max) - t0) / span)
    k_floor = math.floor((math.log(a.min() * min(cmin, 1.0)) - t0) / span) - 1
    if K is None:
        k_lo, closed = min(k_floor, k_hi - 2), True
    else:
        k_lo, closed = -int(K), False
        k_hi = min(k_hi, int(K))
    if k_hi - k_lo < 2:
        raise ValueError("lattice sum needs at least three summands")
    scale = span / mu
    out, residual = {}, {}
    group_tails = [EmpiricalTails(g, alpha) for g in _interleave(r, batches)]
    for name, s in (("h_plus", 1), ("h_minus", -1)):
        total, terms = _lattice_sum(tails, kids, s, t0, span, alpha, k_lo, k_hi, closed)
        res = {"upper": scale * _geometric_residual(terms[-3:])}
        res["lower"] = 0.0 if closed else scale * _geometric_residual(terms[2::-1])
        parts = [scale * _lattice_sum(gt, kids, s, t0, span, alpha, k_lo, k_hi, closed)[0]
                 for gt in group_tails]
        out[name] = _batch_ci(scale * total, parts)
        residual[name] = res
    return LatticeH(t, span, out["h_plus"], out["h_minus"], residual, (k_lo, k_hi))
