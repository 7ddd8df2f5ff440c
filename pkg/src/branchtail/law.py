"""The generic branching vector (Q, N, C_1, ..., C_N).

A :class:`BranchingLaw` is built either from three mutually independent
components (an offspring law for N, a magnitude law for |C| with an
independent sign flip, and a law for Q), or from a fully enumerated finite
joint table of (Q, N, C_1..C_N).  Laws are immutable once parsed.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import integrate, special

PROB_TOL = 1e-12


class ConfigError(ValueError):
    """Raised for an invalid law configuration; ``path`` names the field."""

    def __init__(self, message, path=""):
        self.path = path
        text = f"invalid config at {path}: {message}" if path else f"invalid config: {message}"
        super().__init__(text)


class DegenerateQError(ConfigError):
    def __init__(self, path="q"):
        ValueError.__init__(self, "degenerate Q: P(Q != 0) must be positive")
        self.path = path


# ---------------------------------------------------------------------------
# one-dimensional component laws
# ---------------------------------------------------------------------------

def _pow_abs(x, beta):
    """|x|**beta with 0**beta = 0 for beta > 0 and 0**0 = 1."""
    a = np.abs(np.asarray(x, dtype=float))
    if beta == 0:
        return np.ones_like(a)
    return np.where(a > 0, a ** beta, 0.0)


def _pow_log_abs(x, beta):
    """|x|**beta * log|x| with the convention 0**beta log 0 = 0."""
    a = np.abs(np.asarray(x, dtype=float))
    safe = np.where(a > 0, a, 1.0)
    return np.where(a > 0, safe ** beta * np.log(safe), 0.0)


class _Finite:
    """Mixin for laws with a finite support stored as ``values``/``probs``."""

    def support(self):
        return np.asarray(self.values, dtype=float), np.asarray(self.probs, dtype=float)

    def sample(self, rng, size):
        vals, probs = self.support()
        if len(vals) == 1:
            return np.full(size, vals[0])
        cdf = np.cumsum(probs)
        cdf[-1] = 1.0
        return vals[np.searchsorted(cdf, rng.random(size), side="right")]

    def mean(self):
        v, p = self.support()
        return float(np.dot(v, p))

    def abs_moment(self, beta):
        v, p = self.support()
        return float(np.dot(_pow_abs(v, beta), p))

    def abs_log_moment(self, beta):
        v, p = self.support()
        return float(np.dot(_pow_log_abs(v, beta), p))

    def pos_moment(self, beta):
        v, p = self.support()
        return float(np.dot(_pow_abs(np.maximum(v, 0.0), beta), p))

    def prob_nonzero(self):
        v, p = self.support()
        return float(p[v != 0].sum())


@dataclass(frozen=True)
class Deterministic(_Finite):
    value: float

    @property
    def values(self):
        return (self.value,)

    @property
    def probs(self):
        return (1.0,)

    def to_dict(self):
        return {"kind": "det", "value": self.value}


@dataclass(frozen=True)
class TwoPoint(_Finite):
    """``values[0]`` with probability ``p``, ``values[1]`` otherwise."""

    values: tuple
    p: float

    @property
    def probs(self):
        return (self.p, 1.0 - self.p)

    def sample(self, rng, size):
        return np.where(rng.random(size) < self.p, self.values[0], self.values[1]).astype(float)

    def to_dict(self):
        return {"kind": "two_point", "values": list(self.values), "p": self.p}


@dataclass(frozen=True)
class Table(_Finite):
    values: tuple
    probs: tuple

    def to_dict(self):
        return {"kind": "table", "values": list(self.values), "probs": list(self.probs)}


@dataclass(frozen=True)
class Poisson:
    lam: float

    def sample(self, rng, size):
        return rng.poisson(self.lam, size)

    def mean(self):
        return self.lam

    def support(self):
        return None

    def to_dict(self):
        return {"kind": "poisson", "lam": self.lam}


@dataclass(frozen=True)
class Geometric:
    """P(N = k) = p (1 - p)**k on {0, 1, 2, ...}."""

    p: float

    def sample(self, rng, size):
        return rng.geometric(self.p, size) - 1

    def mean(self):
        return (1.0 - self.p) / self.p

    def support(self):
        return None

    def to_dict(self):
        return {"kind": "geometric", "p": self.p}


@dataclass(frozen=True)
class LogNormal:
    """exp(m + sqrt(sigma2) Z) with Z standard normal."""

    m: float
    sigma2: float

    def sample(self, rng, size):
        return np.exp(self.m + math.sqrt(self.sigma2) * rng.standard_normal(size))

    def abs_moment(self, beta):
        return math.exp(self.m * beta + 0.5 * self.sigma2 * beta * beta)

    def abs_log_moment(self, beta):
        return (self.m + self.sigma2 * beta) * self.abs_moment(beta)

    def mean(self):
        return self.abs_moment(1.0)

    def support(self):
        return None

    def to_dict(self):
        return {"kind": "lognormal", "m": self.m, "sigma2": self.sigma2}


@dataclass(frozen=True)
class Normal:
    m: float
    sigma2: float

    def sample(self, rng, size):
        return self.m + math.sqrt(self.sigma2) * rng.standard_normal(size)

    def mean(self):
        return self.m

    def _expect(self, f):
        s = math.sqrt(self.sigma2)
        if s == 0:
            return float(f(np.array([self.m]))[0])
        dens = lambda x: math.exp(-0.5 * ((x - self.m) / s) ** 2) / (s * math.sqrt(2 * math.pi))
        g = lambda x: float(f(np.array([x]))[0]) * dens(x)
        # split at 0 where |x|**beta has a kink
        lo, hi = self.m - 40 * s, self.m + 40 * s
        pts = sorted({lo, min(max(0.0, lo), hi), hi})
        return sum(integrate.quad(g, a, b, limit=200, epsabs=1e-13, epsrel=1e-11)[0]
                   for a, b in zip(pts[:-1], pts[1:]) if b > a)

    def abs_moment(self, beta):
        if self.m == 0 and self.sigma2 > 0:
            s = math.sqrt(self.sigma2)
            return s ** beta * 2 ** (beta / 2) * special.gamma((beta + 1) / 2) / math.sqrt(math.pi)
        return self._expect(lambda x: _pow_abs(x, beta))

    def pos_moment(self, beta):
        if self.m == 0 and self.sigma2 > 0:
            return 0.5 * self.abs_moment(beta)
        return self._expect(lambda x: _pow_abs(np.maximum(x, 0.0), beta))

    def prob_nonzero(self):
        return 0.0 if (self.m == 0 and self.sigma2 == 0) else 1.0

    def support(self):
        return None

    def to_dict(self):
        return {"kind": "normal", "m": self.m, "sigma2": self.sigma2}


@dataclass(frozen=True)
class Exponential:
    rate: float

    def sample(self, rng, size):
        return rng.exponential(1.0 / self.rate, size)

    def mean(self):
        return 1.0 / self.rate

    def abs_moment(self, beta):
        return special.gamma(beta + 1) / self.rate ** beta

    def pos_moment(self, beta):
        return self.abs_moment(beta)

    def prob_nonzero(self):
        return 1.0

    def support(self):
        return None

    def to_dict(self):
        return {"kind": "exponential", "rate": self.rate}


# ---------------------------------------------------------------------------
# the branching vector
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class JointRow:
    p: float
    q: float
    c: tuple


@dataclass(frozen=True)
class GenericVectorSample:
    q: float
    n: int
    c: tuple


@dataclass
class VectorBatch:
    """``size`` independent draws of the generic vector.

    ``c`` holds all weights back to back; the weights of draw ``i`` are
    ``c[start[i]:start[i] + n[i]]`` and ``parent[j]`` is the draw owning
    ``c[j]``.
    """

    q: np.ndarray
    n: np.ndarray
    c: np.ndarray

    @property
    def parent(self):
        return np.repeat(np.arange(len(self.n)), self.n)

    @property
    def start(self):
        return np.concatenate(([0], np.cumsum(self.n)[:-1])).astype(np.int64)

    def weight_sums(self, values):
        """Per-draw sums of ``values`` laid out like ``c``."""
        return np.bincount(self.parent, weights=values, minlength=len(self.n))


@dataclass(frozen=True)
class BranchingLaw:
    n_law: Optional[object] = None
    c_magnitude: Optional[object] = None
    q_neg: float = 0.0
    q_law: Optional[object] = None
    joint: Optional[tuple] = None

    # -- structure -----------------------------------------------------------

    @property
    def is_joint(self):
        return self.joint is not None

    @property
    def nonnegative(self):
        """True when every weight is >= 0 almost surely."""
        if self.is_joint:
            return all(x >= 0 for r in self.joint if r.p > 0 for x in r.c)
        return self.q_neg == 0

    @property
    def is_finite_discrete(self):
        if self.is_joint:
            return True
        return all(d.support() is not None for d in (self.n_law, self.c_magnitude, self.q_law))

    def mean_n(self):
        if self.is_joint:
            return float(sum(r.p * len(r.c) for r in self.joint))
        return float(self.n_law.mean())

    def max_n(self):
        if self.is_joint:
            return max(len(r.c) for r in self.joint if r.p > 0)
        sup = self.n_law.support()
        return None if sup is None else int(max(v for v, p in zip(*sup) if p > 0))

    # -- sampling ------------------------------------------------------------

    def sample(self, rng, size):
        """Draw ``size`` iid copies of the vector as a :class:`VectorBatch`."""
        size = int(size)
        if self.is_joint:
            rows = self._joint_arrays()
            cdf = np.cumsum(rows["p"])
            cdf[-1] = 1.0
            idx = np.searchsorted(cdf, rng.random(size), side="right")
            n = rows["n"][idx]
            start = rows["start"][idx]
            total = int(n.sum())
            first = np.concatenate(([0], np.cumsum(n)[:-1]))
            within = np.arange(total) - np.repeat(first, n)
            c = rows["c"][np.repeat(start, n) + within]
            return VectorBatch(rows["q"][idx].astype(float), n.astype(np.int64), c.astype(float))
        n = np.asarray(self.n_law.sample(rng, size), dtype=np.int64)
        total = int(n.sum())
        c = np.asarray(self.c_magnitude.sample(rng, total), dtype=float)
        if self.q_neg >= 1:
            c = -c
        elif self.q_neg > 0:
            c = np.where(rng.random(total) < self.q_neg, -c, c)
        q = np.asarray(self.q_law.sample(rng, size), dtype=float)
        return VectorBatch(q, n, c)

    def draw(self, rng):
        b = self.sample(rng, 1)
        return GenericVectorSample(float(b.q[0]), int(b.n[0]), tuple(float(x) for x in b.c))

    def _joint_arrays(self):
        # cached on the instance; the dataclass is frozen so use object.__setattr__
        cache = self.__dict__.get("_rows")
        if cache is None:
            n = np.array([len(r.c) for r in self.joint], dtype=np.int64)
            cache = {
                "p": np.array([r.p for r in self.joint]),
                "q": np.array([r.q for r in self.joint]),
                "n": n,
                "start": np.concatenate(([0], np.cumsum(n)[:-1])).astype(np.int64),
                "c": np.array([x for r in self.joint for x in r.c], dtype=float),
            }
            object.__setattr__(self, "_rows", cache)
        return cache

    # -- enumeration ---------------------------------------------------------

    def weight_outcomes(self, cap=10**6):
        """Finite law of (N, C_1..C_N) as a list of ``(p, c_tuple)``.

        Raises ``ValueError`` if the weight part is not finite-discrete.
        """
        if self.is_joint:
            merged = {}
            for r in self.joint:
                if r.p > 0:
                    merged[r.c] = merged.get(r.c, 0.0) + r.p
            return list((p, c) for c, p in merged.items())
        nsup, csup = self.n_law.support(), self.c_magnitude.support()
        if nsup is None or csup is None:
            raise ValueError("not finite-discrete")
        signed = []
        for v, p in zip(*csup):
            if p <= 0:
                continue
            if self.q_neg < 1:
                signed.append((float(v), p * (1 - self.q_neg)))
            if self.q_neg > 0:
                signed.append((-float(v), p * self.q_neg))
        out = []
        for k, pk in zip(*nsup):
            k = int(k)
            if pk <= 0:
                continue
            if len(signed) ** k > cap:
                raise ValueError("enumeration too large")
            for combo in itertools.product(signed, repeat=k):
                p = pk * math.prod(x[1] for x in combo)
                out.append((p, tuple(x[0] for x in combo)))
        return out

    def outcomes(self, cap=10**6):
        """Finite joint law of (Q, N, C) as a list of ``(p, q, c_tuple)``."""
        if self.is_joint:
            return [(r.p, r.q, r.c) for r in self.joint if r.p > 0]
        qsup = self.q_law.support()
        if qsup is None:
            raise ValueError("not finite-discrete")
        w = self.weight_outcomes(cap)
        return [(pw * pq, float(q), c) for pw, c in w for q, pq in zip(*qsup) if pq > 0]

    def q_support(self):
        if self.is_joint:
            acc = {}
            for r in self.joint:
                acc[r.q] = acc.get(r.q, 0.0) + r.p
            return np.array(list(acc)), np.array(list(acc.values()))
        return self.q_law.support()

    # -- closed-form moments of Q --------------------------------------------

    def q_abs_moment(self, beta):
        """E|Q|**beta."""
        if self.is_joint:
            v, p = self.q_support()
            return float(np.dot(_pow_abs(v, beta), p))
        return float(self.q_law.abs_moment(beta))

    def q_pos_moment(self, beta):
        """E[(Q+)**beta]."""
        if self.is_joint:
            v, p = self.q_support()
            return float(np.dot(_pow_abs(np.maximum(v, 0), beta), p))
        return float(self.q_law.pos_moment(beta))

    # -- identity ------------------------------------------------------------

    def to_dict(self):
        if self.is_joint:
            return {"dependence": {"joint_table": [
                {"p": r.p, "q": r.q, "c": list(r.c)} for r in self.joint]}}
        return {
            "n": self.n_law.to_dict(),
            "c": {"magnitude": self.c_magnitude.to_dict(), "q_neg": self.q_neg},
            "q": self.q_law.to_dict(),
            "dependence": "iid_given_n",
        }

    def fingerprint(self):
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def sample_vector(law, stream):
    """One draw of (Q, N, C_1..C_N) from ``stream``."""
    return law.draw(stream)


# ---------------------------------------------------------------------------
# closed-form moment functions
# ---------------------------------------------------------------------------

def closed_rho(law, beta):
    """E[sum_i |C_i|**beta], or None if no closed form is available."""
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    if law.is_joint:
        return float(sum(r.p * _pow_abs(r.c, beta).sum() for r in law.joint))
    mag = law.c_magnitude
    if not hasattr(mag, "abs_moment"):
        return None
    return law.mean_n() * float(mag.abs_moment(beta))


def closed_mu(law, alpha):
    """E[sum_i |C_i|**alpha log|C_i|] (0**alpha log 0 = 0), or None."""
    if law.is_joint:
        return float(sum(r.p * _pow_log_abs(r.c, alpha).sum() for r in law.joint))
    mag = law.c_magnitude
    if not hasattr(mag, "abs_log_moment"):
        return None
    return law.mean_n() * float(mag.abs_log_moment(alpha))


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

def _num(obj, key, path, *, lo=None, hi=None, lo_open=False, hi_open=False, integer=False):
    if key not in obj:
        raise ConfigError("missing field", f"{path}.{key}")
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"expected a number, got {v!r}", f"{path}.{key}")
    v = float(v)
    if not math.isfinite(v):
        raise ConfigError("must be finite", f"{path}.{key}")
    if integer:
        if v != int(v):
            raise ConfigError(f"expected an integer, got {v!r}", f"{path}.{key}")
        v = int(v)
    if lo is not None and (v < lo or (lo_open and v == lo)):
        raise ConfigError(f"value {v!r} out of range", f"{path}.{key}")
    if hi is not None and (v > hi or (hi_open and v == hi)):
        raise ConfigError(f"value {v!r} out of range", f"{path}.{key}")
    return v


def _check_probs(probs, path):
    for i, p in enumerate(probs):
        if p < 0:
            raise ConfigError(f"negative probability {p!r}", f"{path}[{i}]")
    s = math.fsum(probs)
    if abs(s - 1.0) > PROB_TOL:
        raise ConfigError(f"probabilities sum to {s:.12g}", path)


def _table(obj, path, check_value):
    for key in ("values", "probs"):
        if not isinstance(obj.get(key), list) or not obj[key]:
            raise ConfigError("expected a nonempty list", f"{path}.{key}")
    vals, probs = obj["values"], obj["probs"]
    if len(vals) != len(probs):
        raise ConfigError("values and probs differ in length", path)
    wrapped = {f"v{i}": v for i, v in enumerate(vals)}
    vals = tuple(check_value(wrapped, f"v{i}", f"{path}.values") for i in range(len(vals)))
    probs = tuple(_num({"p": p}, "p", f"{path}.probs[{i}]") for i, p in enumerate(probs))
    _check_probs(probs, f"{path}.probs")
    return Table(vals, probs)


def _two_point(obj, path, check_value):
    vals = obj.get("values")
    if not isinstance(vals, list) or len(vals) != 2:
        raise ConfigError("expected a list of two values", f"{path}.values")
    wrapped = {"v0": vals[0], "v1": vals[1]}
    vals = (check_value(wrapped, "v0", f"{path}.values"), check_value(wrapped, "v1", f"{path}.values"))
    p = _num(obj, "p", path, lo=0, hi=1)
    return TwoPoint(vals, p)


def _kind(obj, path, allowed):
    if not isinstance(obj, dict):
        raise ConfigError("expected an object", path)
    kind = obj.get("kind")
    if kind not in allowed:
        raise ConfigError(f"kind must be one of {sorted(allowed)}, got {kind!r}", f"{path}.kind")
    return kind


def _parse_n(obj, path="n"):
    kind = _kind(obj, path, {"det", "poisson", "geometric", "table"})
    count = lambda o, k, p: _num(o, k, p, lo=0, integer=True)
    if kind == "det":
        return Deterministic(count(obj, "value", path))
    if kind == "poisson":
        return Poisson(_num(obj, "lam", path, lo=0, lo_open=True))
    if kind == "geometric":
        return Geometric(_num(obj, "p", path, lo=0, hi=1, lo_open=True, hi_open=True))
    return _table(obj, path, count)


def _parse_magnitude(obj, path="c.magnitude"):
    kind = _kind(obj, path, {"det", "two_point", "lognormal", "table"})
    positive = lambda o, k, p: _num(o, k, p, lo=0, lo_open=True)
    if kind == "det":
        return Deterministic(positive(obj, "value", path))
    if kind == "two_point":
        return _two_point(obj, path, positive)
    if kind == "lognormal":
        return LogNormal(_num(obj, "m", path), _num(obj, "sigma2", path, lo=0, lo_open=True))
    return _table(obj, path, positive)


def _parse_q(obj, path="q"):
    kind = _kind(obj, path, {"det", "two_point", "normal", "exponential", "table"})
    real = lambda o, k, p: _num(o, k, p)
    if kind == "det":
        return Deterministic(real(obj, "value", path))
    if kind == "two_point":
        return _two_point(obj, path, real)
    if kind == "normal":
        return Normal(_num(obj, "m", path), _num(obj, "sigma2", path, lo=0))
    if kind == "exponential":
        return Exponential(_num(obj, "rate", path, lo=0, lo_open=True))
    return _table(obj, path, real)


def _parse_joint(rows, path="dependence.joint_table"):
    if not isinstance(rows, list) or not rows:
        raise ConfigError("expected a nonempty list of rows", path)
    out = []
    for i, row in enumerate(rows):
        rp = f"{path}[{i}]"
        if not isinstance(row, dict):
            raise ConfigError("expected an object", rp)
        p = _num(row, "p", rp, lo=0)
        q = _num(row, "q", rp)
        c = row.get("c")
        if not isinstance(c, list):
            raise ConfigError("expected a list of weights", f"{rp}.c")
        if "n" in row and _num(row, "n", rp, lo=0, integer=True) != len(c):
            raise ConfigError("row must list exactly n weights", f"{rp}.c")
        c = tuple(_num({"x": x}, "x", f"{rp}.c[{j}]") for j, x in enumerate(c))
        out.append(JointRow(p, q, c))
    _check_probs([r.p for r in out], f"{path}.p")
    if sum(r.p for r in out if r.q != 0) <= 0:
        raise DegenerateQError(path)
    return tuple(out)


def parse_law(document):
    """Validate a JSON document (text or already-decoded dict) into a law."""
    if isinstance(document, (str, bytes)):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed JSON ({exc.msg} at line {exc.lineno})") from None
    if not isinstance(document, dict):
        raise ConfigError("top level must be an object")
    dep = document.get("dependence", "iid_given_n")
    if isinstance(dep, dict):
        if set(dep) != {"joint_table"}:
            raise ConfigError("expected {'joint_table': [...]}", "dependence")
        for key in ("n", "c", "q"):
            if key in document:
                raise ConfigError("not allowed together with joint_table", key)
        return BranchingLaw(joint=_parse_joint(dep["joint_table"]))
    if dep != "iid_given_n":
        raise ConfigError(f"unknown dependence mode {dep!r}", "dependence")
    for key in ("n", "c", "q"):
        if key not in document:
            raise ConfigError("missing field", key)
    n_law = _parse_n(document["n"])
    c = document["c"]
    if not isinstance(c, dict):
        raise ConfigError("expected an object", "c")
    if "magnitude" not in c:
        raise ConfigError("missing field", "c.magnitude")
    mag = _parse_magnitude(c["magnitude"])
    q_neg = _num(c, "q_neg", "c", lo=0, hi=1) if "q_neg" in c else 0.0
    q_law = _parse_q(document["q"])
    if q_law.prob_nonzero() <= 0:
        raise DegenerateQError()
    return BranchingLaw(n_law=n_law, c_magnitude=mag, q_neg=q_neg, q_law=q_law)


def load_law(path):
    with open(path, encoding="utf-8") as fh:
        return parse_law(fh.read())
