"""Finite distributions with exact rational probabilities.

Also holds the bounded query type, exact k-fold expectations, the planted
hyperplane distributions, and the divergences used to measure flatness.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Any, Callable, Hashable, Iterable, Mapping, Sequence

import numpy as np

from kwsq.fp_linalg import GuardExceeded, hyperplane_indicator, is_prime

ENUMERATION_GUARD = 10**7


class RangeViolation(ValueError):
    """A query returned a value outside [-1, +1]."""


def as_fraction(x) -> Fraction:
    """Exact rational from an int, Fraction, decimal string or float (via its repr)."""
    if isinstance(x, Fraction):
        return x
    if isinstance(x, float):
        return Fraction(repr(x))
    return Fraction(x)


def _lcm(values: Iterable[int]) -> int:
    out = 1
    for v in values:
        out = out * v // math.gcd(out, v)
    return out


class FiniteDistribution:
    """A probability distribution on finitely many hashable points.

    Probabilities are exact rationals that sum to one. The support order is
    the insertion order and fixes the order used for enumeration and sampling.
    """

    def __init__(self, probs: Mapping[Hashable, Any] | Iterable[tuple[Hashable, Any]]):
        items = probs.items() if isinstance(probs, Mapping) else probs
        support, values = [], []
        seen = set()
        for x, pr in items:
            if x in seen:
                raise ValueError(f"duplicate support point {x!r}")
            seen.add(x)
            pr = as_fraction(pr)
            if pr < 0:
                raise ValueError(f"negative probability at {x!r}")
            support.append(x)
            values.append(pr)
        if not support:
            raise ValueError("empty support")
        if sum(values) != 1:
            raise ValueError(f"probabilities sum to {sum(values)}, not 1")
        self.support: tuple = tuple(support)
        self.probs: tuple[Fraction, ...] = tuple(values)
        self._index = {x: i for i, x in enumerate(self.support)}

    @classmethod
    def uniform(cls, points: Iterable[Hashable]):
        points = list(points)
        return cls({x: Fraction(1, len(points)) for x in points})

    @classmethod
    def point_mass(cls, x: Hashable):
        return cls({x: 1})

    def __len__(self) -> int:
        return len(self.support)

    def __repr__(self) -> str:
        body = ", ".join(f"{x!r}: {p}" for x, p in self.items())
        return f"{type(self).__name__}({{{body}}})"

    def __eq__(self, other) -> bool:
        if not isinstance(other, FiniteDistribution):
            return NotImplemented
        return self.as_dict(nonzero=True) == other.as_dict(nonzero=True)

    def __hash__(self):
        return hash(frozenset(self.as_dict(nonzero=True).items()))

    def items(self):
        return zip(self.support, self.probs)

    def as_dict(self, nonzero: bool = False) -> dict:
        return {x: p for x, p in self.items() if p or not nonzero}

    def prob(self, x: Hashable) -> Fraction:
        i = self._index.get(x)
        return Fraction(0) if i is None else self.probs[i]

    def mass(self, event: Callable[[Any], bool]) -> Fraction:
        return sum((p for x, p in self.items() if event(x)), Fraction(0))

    @cached_property
    def denominator(self) -> int:
        return _lcm(p.denominator for p in self.probs)

    @cached_property
    def int_weights(self) -> tuple[int, ...]:
        """Probabilities scaled by :attr:`denominator` to integers."""
        den = self.denominator
        return tuple(p.numerator * (den // p.denominator) for p in self.probs)

    def pushforward(self, fn: Callable[[Any], Hashable]) -> "FiniteDistribution":
        out: dict = {}
        for x, p in self.items():
            y = fn(x)
            out[y] = out.get(y, 0) + p
        return FiniteDistribution(out)


class LabeledDistribution(FiniteDistribution):
    """Distribution over labeled examples ``(z, b)`` with ``b`` in {-1, +1}."""

    def __init__(self, probs):
        super().__init__(probs)
        for x in self.support:
            if not (isinstance(x, tuple) and len(x) == 2 and x[1] in (-1, 1)):
                raise ValueError(f"labeled point must be (z, +-1), got {x!r}")

    @classmethod
    def from_function(cls, marginal: FiniteDistribution, f: Callable[[Any], int]):
        """P^f: draw z from ``marginal`` and label it by ``f``."""
        return cls({(z, f(z)): p for z, p in marginal.items()})

    def marginal(self) -> FiniteDistribution:
        return self.pushforward(lambda x: x[0])

    def positive_mass(self) -> Fraction:
        return self.mass(lambda x: x[1] == 1)


@dataclass(frozen=True)
class Query:
    """A k-ary statistical query with values in [-1, +1].

    The range is checked every time the query is evaluated.
    """

    arity: int
    fn: Callable[..., Any] = field(compare=False)
    name: str = ""

    def __call__(self, *xs):
        if len(xs) != self.arity:
            raise ValueError(f"query of arity {self.arity} called with {len(xs)} arguments")
        v = self.fn(*xs)
        if not -1 <= v <= 1:
            raise RangeViolation(f"query {self.name or self.fn!r} returned {v} at {xs!r}")
        return v

    @classmethod
    def from_table(cls, table: Mapping[Hashable, Any], name: str = "", default=None):
        """Unary query backed by an explicit table of values."""

        def fn(x):
            if x in table:
                return table[x]
            if default is None:
                raise KeyError(x)
            return default

        return cls(1, fn, name)


def _tuple_weights(dists: Sequence[FiniteDistribution], guard: int = ENUMERATION_GUARD):
    size = math.prod(len(d) for d in dists)
    if size > guard:
        raise GuardExceeded(f"{size} terms exceeds enumeration guard {guard}")
    den = math.prod(d.denominator for d in dists)
    pts = itertools.product(*(d.support for d in dists))
    ws = itertools.product(*(d.int_weights for d in dists))
    return pts, (math.prod(w) for w in ws), den


def _exact(v) -> Fraction | int:
    if isinstance(v, (bool, int, Fraction)):
        return int(v) if isinstance(v, bool) else v
    return as_fraction(v)


def expectation_product(dists: Sequence[FiniteDistribution], q: Query,
                        guard: int = ENUMERATION_GUARD) -> Fraction:
    """Exact E[q(x_1..x_k)] with x_i drawn independently from dists[i]."""
    if q.arity != len(dists):
        raise ValueError(f"query arity {q.arity} != number of coordinates {len(dists)}")
    pts, ws, den = _tuple_weights(dists, guard)
    total = 0
    for x, w in zip(pts, ws):
        if w:
            total += w * _exact(q(*x))
    return Fraction(total) / den


def expectation_k(d: FiniteDistribution, q: Query, k: int | None = None,
                  guard: int = ENUMERATION_GUARD) -> Fraction:
    """Exact value of D^k[q] by full enumeration of support^k."""
    k = q.arity if k is None else k
    return expectation_product([d] * k, q, guard)


def power(d: FiniteDistribution, k: int, guard: int = ENUMERATION_GUARD) -> FiniteDistribution:
    """The product distribution D^k over k-tuples."""
    pts, ws, den = _tuple_weights([d] * k, guard)
    return FiniteDistribution({x: Fraction(w, den) for x, w in zip(pts, ws)})


def sample(d: FiniteDistribution, rng: np.random.Generator, m: int) -> list:
    """m i.i.d. draws by inverse CDF over the stored support order."""
    if m < 0:
        raise ValueError("m must be nonnegative")
    cum = np.cumsum([float(p) for p in d.probs])
    idx = np.searchsorted(cum, rng.random(m), side="right")
    idx = np.minimum(idx, len(d) - 1)
    # skip trailing zero-mass points that float round-off could select
    last = max(i for i, p in enumerate(d.probs) if p)
    return [d.support[min(i, last)] for i in idx]


# --- planted hyperplane family -------------------------------------------------

def planted_densities(p: int, ell: int) -> tuple[Fraction, Fraction]:
    """(alpha, beta): per-point mass off and on the hyperplane."""
    alpha = Fraction(1, 2 * (p**ell - p ** (ell - 1)))
    beta = Fraction(1, 2 * p ** (ell - 1))
    return alpha, beta


def planted_hyperplane(a: Sequence[int], p: int, ell: int | None = None) -> LabeledDistribution:
    """Labeled distribution D_a: marginal P_a, labels from the indicator of Hyp_a."""
    ell = len(a) if ell is None else ell
    if len(a) != ell:
        raise ValueError("len(a) must equal ell")
    if not is_prime(p):
        raise ValueError(f"{p} is not prime")
    alpha, beta = planted_densities(p, ell)
    out = {}
    for z in itertools.product(range(p), repeat=ell):
        b = hyperplane_indicator(a, z, p)
        out[(z, b)] = beta if b == 1 else alpha
    return LabeledDistribution(out)


def uniform_labeled(points: Iterable[Hashable]) -> LabeledDistribution:
    """Uniform distribution over points x {-1, +1}."""
    points = list(points)
    w = Fraction(1, 2 * len(points))
    return LabeledDistribution({(z, b): w for z in points for b in (1, -1)})


def condition_positive(ld: LabeledDistribution, k: int | None = None) -> FiniteDistribution:
    """Distribution of (z, 1) for a positively labeled example (z, 1)."""
    pos = ld.positive_mass()
    if pos == 0:
        raise ValueError("no positive mass to condition on")
    out = {}
    for (z, b), pr in ld.items():
        if b == 1 and pr:
            if k is not None and len(z) != k + 1:
                raise ValueError(f"expected points of length {k + 1}")
            out[tuple(z) + (1,)] = pr / pos
    return FiniteDistribution(out)


def bayes_error(d0: LabeledDistribution) -> Fraction:
    mass: dict = {}
    for (z, b), pr in d0.items():
        mass.setdefault(z, {1: Fraction(0), -1: Fraction(0)})[b] += pr
    return sum((min(m[1], m[-1]) for m in mass.values()), Fraction(0))


# --- divergences ---------------------------------------------------------------

def _ratio_terms(d: FiniteDistribution, center: FiniteDistribution):
    """(D(x), C(x)) over the union of supports."""
    pts = list(d.support) + [x for x in center.support if x not in d._index]
    return [(d.prob(x), center.prob(x)) for x in pts]


def max_ratio(d: FiniteDistribution, center: FiniteDistribution) -> Fraction | float:
    best: Fraction | float = Fraction(0)
    for dp, cp in _ratio_terms(d, center):
        if dp:
            if not cp:
                return math.inf
            best = max(best, dp / cp)
    return best


def approx_max_ratio(d: FiniteDistribution, center: FiniteDistribution, delta) -> Fraction | float:
    """sup over events E of (D(E) - delta) / C(E).

    The optimum is a prefix of the points sorted by decreasing D/C, so a
    single sorted scan is exact.
    """
    delta = as_fraction(delta)
    if not 0 <= delta < 1:
        raise ValueError("delta must lie in [0, 1)")
    terms = _ratio_terms(d, center)
    free = sum((dp for dp, cp in terms if not cp), Fraction(0))
    if free > delta:
        return math.inf
    ranked = sorted(((dp, cp) for dp, cp in terms if cp), key=lambda t: t[0] / t[1], reverse=True)
    best = None
    dm, cm = free, Fraction(0)
    for dp, cp in ranked:
        dm += dp
        cm += cp
        val = (dm - delta) / cm
        if best is None or val > best:
            best = val
    return best


def renyi_moment(d: FiniteDistribution, center: FiniteDistribution, alpha) -> Fraction | float:
    """sum_x D(x)^alpha C(x)^(1-alpha); exact for integer alpha."""
    exact = isinstance(alpha, int) or (isinstance(alpha, Fraction) and alpha.denominator == 1)
    total: Fraction | float = Fraction(0) if exact else 0.0
    for dp, cp in _ratio_terms(d, center):
        if not dp:
            continue
        if not cp:
            return math.inf
        if exact:
            a = int(alpha)
            total += dp**a / cp ** (a - 1)
        else:
            total += float(dp) ** float(alpha) * float(cp) ** (1 - float(alpha))
    return total


def divergence(d: FiniteDistribution, center: FiniteDistribution, kind: str = "max",
               delta=0, alpha=2) -> float:
    """Divergence of ``d`` from ``center`` in nats.

    kind is one of ``max``, ``approx_max`` (uses ``delta``), ``renyi``
    (uses ``alpha > 1``) or ``kl``. Returns ``math.inf`` when ``d`` puts mass
    where it cannot be dominated by ``center``.
    """
    if kind == "max":
        r = max_ratio(d, center)
    elif kind == "approx_max":
        r = approx_max_ratio(d, center, delta)
    elif kind == "renyi":
        if not alpha > 1:
            raise ValueError("Renyi order must exceed 1")
        m = renyi_moment(d, center, alpha)
        return math.inf if m == math.inf else math.log(m) / (float(alpha) - 1)
    elif kind == "kl":
        total = 0.0
        for dp, cp in _ratio_terms(d, center):
            if dp:
                if not cp:
                    return math.inf
                total += float(dp) * math.log(dp / cp)
        return max(total, 0.0)
    else:
        raise ValueError(f"unknown divergence kind {kind!r}")
    return math.inf if r == math.inf else math.log(r)


def flatness_radius(family: Sequence[FiniteDistribution], center: FiniteDistribution,
                    kind: str = "max", **kw) -> float:
    """sup over the family of divergence(D, center); radius at a supplied center."""
    if not family:
        raise ValueError("empty family")
    return max(divergence(d, center, kind, **kw) for d in family)


# --- fixture format ------------------------------------------------------------

def _parse_point(tok: str):
    parts = [int(t) for t in tok.split(",")]
    return parts[0] if len(parts) == 1 else tuple(parts)


def parse_distribution(text: str, labeled: bool = False) -> FiniteDistribution:
    """Parse lines ``point num/den``; a labeled point is ``z1,...,zl,b``."""
    out = []
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        tok, pr = line.split()
        parts = [int(t) for t in tok.split(",")]
        if labeled:
            out.append(((tuple(parts[:-1]), parts[-1]), Fraction(pr)))
        else:
            out.append((_parse_point(tok), Fraction(pr)))
    return LabeledDistribution(out) if labeled else FiniteDistribution(out)


def format_distribution(d: FiniteDistribution) -> str:
    def tok(x):
        if isinstance(d, LabeledDistribution):
            z, b = x
            return ",".join(str(v) for v in tuple(z) + (b,))
        return ",".join(str(v) for v in x) if isinstance(x, tuple) else str(x)

    return "".join(f"{tok(x)} {p.numerator}/{p.denominator}\n" for x, p in d.items())
