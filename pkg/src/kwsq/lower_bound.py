"""Average correlation, discrimination and the hyperplane-family lower bound.

Every quantity here is exact. Closed forms are kept next to enumeration
paths so the two can be compared value for value.
"""

from __future__ import annotations

import itertools
import json
import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from kwsq.dist import (
    ENUMERATION_GUARD,
    FiniteDistribution,
    LabeledDistribution,
    _lcm,
    planted_densities,
    planted_hyperplane,
    uniform_labeled,
)
from kwsq.fp_linalg import GuardExceeded, hyperplane_points, is_prime

BRUTEFORCE_GUARD = 20  # max |support|^k for the vertex search


def _rational(x: Fraction) -> str:
    return f"{x.numerator}/{x.denominator}"


def reference_distribution(p: int, ell: int) -> LabeledDistribution:
    """Uniform over F_p^ell x {-1, +1}."""
    return uniform_labeled(list(itertools.product(range(p), repeat=ell)))


def hyperplane_relation(a: Sequence[int], b: Sequence[int]) -> str:
    """``equal``, ``parallel`` (distinct, disjoint) or ``intersecting``."""
    a, b = tuple(a), tuple(b)
    if a == b:
        return "equal"
    return "parallel" if a[:-1] == b[:-1] else "intersecting"


# --- enumeration path ------------------------------------------------------------

def _scaled_ratio_tensor(d: FiniteDistribution, d0: FiniteDistribution, k: int):
    """Integer vector R with R(x) / L^k = D^k(x) / D0^k(x) over support(d0)^k, and L."""
    for x, pr in d.items():
        if pr and not d0.prob(x):
            raise ValueError(f"support of {d!r} is not inside the reference support")
    ratios = [d.prob(x) / p0 for x, p0 in d0.items()]
    L = _lcm(r.denominator for r in ratios)
    base = [r.numerator * (L // r.denominator) for r in ratios]
    out = np.array(base, dtype=object)
    for _ in range(k - 1):
        out = np.multiply.outer(out, np.array(base, dtype=object)).ravel()
    return out, L


def _reference_weights(d0: FiniteDistribution, k: int):
    w = np.array(d0.int_weights, dtype=object)
    out = w
    for _ in range(k - 1):
        out = np.multiply.outer(out, w).ravel()
    return out, d0.denominator**k


def pair_correlation_enumerated(da: FiniteDistribution, db: FiniteDistribution,
                                d0: FiniteDistribution, k: int,
                                guard: int = ENUMERATION_GUARD) -> Fraction:
    """D0^k[hat(Da) hat(Db)] summed over every x in support(d0)^k."""
    if len(d0) ** k > guard:
        raise GuardExceeded(f"{len(d0)}^{k} exceeds guard {guard}")
    ra, la = _scaled_ratio_tensor(da, d0, k)
    rb, lb = _scaled_ratio_tensor(db, d0, k)
    w, wden = _reference_weights(d0, k)
    total = int(np.sum(w * (ra - la**k) * (rb - lb**k)))
    return Fraction(total, wden * la**k * lb**k)


# --- closed forms ----------------------------------------------------------------

def intermediate_moments(a, b, p: int, ell: int, k: int) -> tuple[Fraction, Fraction]:
    """(E_{D0}[D_a], E_{D0}[D_a D_b]) over tuples of k labeled examples."""
    alpha, beta = planted_densities(p, ell)
    single = Fraction(1, 2**k * p ** (k * ell))
    rel = hyperplane_relation(a, b)
    if rel == "equal":
        inner = beta**2 / p + (1 - Fraction(1, p)) * alpha**2
    elif rel == "parallel":
        inner = alpha**2 * (1 - Fraction(2, p))
    else:
        inner = beta**2 / p**2 + alpha**2 * (1 - Fraction(2, p) + Fraction(1, p**2))
    return single, inner**k / 2**k


def intermediate_moments_enumerated(a, b, p: int, ell: int, k: int) -> tuple[Fraction, Fraction]:
    d0 = reference_distribution(p, ell)
    da, db = planted_hyperplane(a, p), planted_hyperplane(b, p)
    w, wden = _reference_weights(d0, k)
    ta, la = _scaled_ratio_tensor(da, d0, k)
    tb, lb = _scaled_ratio_tensor(db, d0, k)
    # D_a(x) = ratio(x) * D0(x), so both moments reduce to sums over w
    d0k = Fraction(1, len(d0) ** k)  # d0 is uniform
    single = Fraction(int(np.sum(w * ta)), wden * la**k) * d0k
    pair = Fraction(int(np.sum(w * ta * tb)), wden * la**k * lb**k) * d0k**2
    return single, pair


def pair_correlation_closed(a, b, p: int, ell: int, k: int) -> Fraction:
    """Closed form of D0^k[hat(D_a) hat(D_b)] by hyperplane relation.

    The equal case is (p^2 / (2(p-1)))^k - 1; see :func:`pair_correlation_from_moments`
    for the derivation from the two moments.
    """
    if not is_prime(p):
        raise ValueError(f"{p} is not prime")
    rel = hyperplane_relation(a, b)
    if rel == "equal":
        return Fraction(p * p, 2 * (p - 1)) ** k - 1
    if rel == "parallel":
        return (1 - Fraction(2, p)) ** k / (2**k * (1 - Fraction(1, p)) ** (2 * k)) - 1
    return Fraction(0)


def pair_correlation_from_moments(a, b, p: int, ell: int, k: int) -> Fraction:
    """2^{2k} p^{2k ell} E[D_a D_b] - 2^{k+1} p^{k ell} E[D_a] + 1."""
    single, pair = intermediate_moments(a, b, p, ell, k)
    return 4**k * p ** (2 * k * ell) * pair - 2 ** (k + 1) * p ** (k * ell) * single + 1


def hyperplane_pair_counts(p: int, ell: int, guard: int = ENUMERATION_GUARD,
                           verify: bool = True) -> tuple[int, int, int]:
    """(equal, parallel distinct, intersecting) counts over all pairs (a, b)."""
    closed = (p**ell, p**ell * (p - 1), p ** (2 * ell) - p ** (ell + 1))
    if not verify:
        return closed
    if p ** (2 * ell) > guard:
        warnings.warn(f"p^(2 ell) = {p ** (2 * ell)} exceeds guard; enumeration cross-check skipped")
        return closed
    counted = enumerate_pair_counts(p, ell)
    if counted != closed:
        raise AssertionError(f"pair counts {counted} disagree with {closed}")
    return closed


def enumerate_pair_counts(p: int, ell: int) -> tuple[int, int, int]:
    """Classify pairs by their point sets rather than by their parameters."""
    hs = {a: frozenset(hyperplane_points(a, p)) for a in itertools.product(range(p), repeat=ell)}
    eq = par = inter = 0
    for a, b in itertools.product(hs, repeat=2):
        if hs[a] == hs[b]:
            eq += 1
        elif hs[a].isdisjoint(hs[b]):
            par += 1
        else:
            inter += 1
    return eq, par, inter


# --- families and rho ------------------------------------------------------------

@dataclass
class DistributionFamily:
    members: list[FiniteDistribution]
    weights: list[Fraction] | None = None
    hyperplanes: list[tuple[int, ...]] | None = None
    p: int | None = None
    ell: int | None = None

    def __post_init__(self):
        if not self.members:
            raise ValueError("empty family")
        if self.weights is None:
            self.weights = [Fraction(1, len(self.members))] * len(self.members)
        self.weights = [Fraction(w) for w in self.weights]
        if len(self.weights) != len(self.members) or sum(self.weights) != 1 or min(self.weights) < 0:
            raise ValueError("weights must be a probability vector over the members")

    @classmethod
    def hyperplanes_family(cls, p: int, ell: int) -> "DistributionFamily":
        params = list(itertools.product(range(p), repeat=ell))
        return cls([planted_hyperplane(a, p) for a in params], None, params, p, ell)


def _ratio_matrix(family: DistributionFamily, d0: FiniteDistribution, k: int):
    rows, ls = [], []
    for d in family.members:
        r, L = _scaled_ratio_tensor(d, d0, k)
        rows.append(r)
        ls.append(L)
    L = _lcm(ls)
    m = np.stack([r * (L // l) ** k - L**k for r, l in zip(rows, ls)])
    return m, L


def correlation_matrix(family: DistributionFamily, d0: FiniteDistribution, k: int,
                       guard: int = ENUMERATION_GUARD) -> list[list[Fraction]]:
    """All pairwise D0^k[hat(D) hat(D')] by enumeration."""
    size = len(d0) ** k
    if size * len(family.members) > 10 * guard:
        raise GuardExceeded(f"{len(family.members)} members x {size} tuples exceeds guard")
    m, L = _ratio_matrix(family, d0, k)
    w, wden = _reference_weights(d0, k)
    bound = int(max(abs(v) for v in m.ravel())) ** 2 * int(np.sum(w))
    if bound < 2**62:
        mi, wi = m.astype(np.int64), w.astype(np.int64)
        gram = (mi * wi) @ mi.T
    else:
        gram = (m * w) @ m.T
    den = wden * L ** (2 * k)
    return [[Fraction(int(g), den) for g in row] for row in gram]


def rho(family: DistributionFamily, d0: FiniteDistribution, k: int, mode: str = "enumerated",
        guard: int = ENUMERATION_GUARD) -> Fraction:
    """Weighted mean of |D0^k[hat(D) hat(D')]| over ordered pairs."""
    ws = family.weights
    if mode == "closed":
        if family.hyperplanes is None:
            raise ValueError("closed mode needs the hyperplane family")
        if len(set(ws)) != 1 or len(family.hyperplanes) != family.p**family.ell:
            raise ValueError("closed mode needs the full uniform hyperplane family")
        p, ell = family.p, family.ell
        eq, par, inter = hyperplane_pair_counts(p, ell, verify=False)
        a0 = (0,) * ell
        par_rep = (0,) * (ell - 1) + (1,)
        int_rep = (1,) + (0,) * (ell - 1)
        total = (eq * abs(pair_correlation_closed(a0, a0, p, ell, k))
                 + par * abs(pair_correlation_closed(a0, par_rep, p, ell, k))
                 + inter * abs(pair_correlation_closed(a0, int_rep, p, ell, k)))
        return total / p ** (2 * ell)
    if mode != "enumerated":
        raise ValueError(f"unknown mode {mode!r}")
    corr = correlation_matrix(family, d0, k, guard)
    return sum((wi * wj * abs(c) for wi, row in zip(ws, corr) for wj, c in zip(ws, row)),
               Fraction(0))


def rho_closed(p: int, ell: int, k: int) -> Fraction:
    """rho of the full uniform hyperplane family without building it."""
    eq, par, _ = hyperplane_pair_counts(p, ell, verify=False)
    a0 = (0,) * ell
    e = abs(pair_correlation_closed(a0, a0, p, ell, k))
    q = abs(pair_correlation_closed(a0, (0,) * (ell - 1) + (1,), p, ell, k))
    return (eq * e + par * q) / p ** (2 * ell)


@dataclass(frozen=True)
class LowerBound:
    kappa1_bound: float
    d: float
    bound: float


def sq_query_lower_bound(p: int, ell: int, k: int, delta) -> LowerBound:
    """kappa1 <= 4 sqrt(rho), d = 1 / kappa1 bound, queries >= (1 - delta) sqrt(d) - 1."""
    delta = float(delta)
    if not 0 < delta < 0.5:
        raise ValueError("delta must lie in (0, 1/2)")
    r = rho_closed(p, ell, k)
    kb = 4 * math.sqrt(r)
    d = 1 / kb
    return LowerBound(kb, d, (1 - delta) * math.sqrt(d) - 1)


# --- discrimination by vertex search ----------------------------------------------

def _difference_matrix(family: DistributionFamily, d0: FiniteDistribution, k: int):
    """Integer rows proportional to D^k(x) - D0^k(x) and their common denominator."""
    size = len(d0) ** k
    if size > BRUTEFORCE_GUARD:
        raise GuardExceeded(f"|support|^k = {size} exceeds {BRUTEFORCE_GUARD}")
    pts = list(itertools.product(d0.support, repeat=k))
    rows = []
    for d in family.members:
        extra = [x for x, pr in d.items() if pr and not d0.prob(x)]
        if extra:
            raise ValueError("member support is not inside the reference support")
        rows.append([math.prod((d.prob(xi) for xi in x), start=Fraction(1))
                     - math.prod((d0.prob(xi) for xi in x), start=Fraction(1)) for x in pts])
    den = _lcm(v.denominator for row in rows for v in row)
    return np.array([[int(v * den) for v in row] for row in rows], dtype=object), den


def _vertices(n: int) -> np.ndarray:
    # rows are every sign vector with a fixed first sign (the objective is even)
    idx = np.arange(2 ** (n - 1), dtype=np.int64)
    bits = (idx[:, None] >> np.arange(n - 1, dtype=np.int64)) & 1
    signs = np.hstack([np.ones((len(idx), 1), dtype=np.int64), 1 - 2 * bits])
    return signs


def _vertex_values(family, d0, k):
    diffs, den = _difference_matrix(family, d0, k)
    signs = _vertices(diffs.shape[1])
    if max(abs(int(v)) for v in diffs.ravel()) * diffs.shape[1] < 2**62:
        vals = np.abs(signs @ diffs.astype(np.int64).T)
    else:
        vals = np.abs(signs.astype(object) @ diffs.T)
    return vals, den


def kappa1_bar_bruteforce(family: DistributionFamily, d0: FiniteDistribution, k: int) -> Fraction:
    """sup over phi of E_{D ~ mu}|D^k[phi] - D0^k[phi]|.

    The objective is convex in phi, so the sup over the box sits at a vertex
    phi in {-1, +1}^(support^k); all vertices are scanned.
    """
    vals, den = _vertex_values(family, d0, k)
    wden = _lcm(w.denominator for w in family.weights)
    wi = np.array([int(w * wden) for w in family.weights], dtype=object)
    best = max(int(v) for v in vals.astype(object) @ wi)
    return Fraction(best, den * wden)


def kappa1_frac_vertex_heuristic(family: DistributionFamily, d0: FiniteDistribution, k: int,
                                 tau) -> Fraction:
    """Heuristic lower bound on the max covered mu-fraction at tolerance tau.

    Only vertex queries are scanned. The covered fraction is not convex in
    phi, so the true sup may be larger.
    """
    tau = Fraction(tau)
    vals, den = _vertex_values(family, d0, k)
    covered = vals.astype(object) > tau * den
    ws = family.weights
    return max(sum((w for w, c in zip(ws, row) if c), Fraction(0)) for row in covered)


# --- reports ---------------------------------------------------------------------

@dataclass
class CorrelationReport:
    p: int
    ell: int
    k: int
    pair_values: dict[str, Fraction]
    rho: Fraction
    delta: float
    lower_bound: LowerBound = field(init=False)

    def __post_init__(self):
        self.lower_bound = sq_query_lower_bound(self.p, self.ell, self.k, self.delta)

    def to_json(self) -> str:
        lb = self.lower_bound
        return json.dumps({
            "p": self.p, "ell": self.ell, "k": self.k,
            "pair_values": {k: _rational(v) for k, v in self.pair_values.items()},
            "rho": _rational(self.rho),
            "kappa1_bound": lb.kappa1_bound, "d": lb.d, "query_bound": lb.bound,
        }, sort_keys=True)


def correlation_report(p: int, ell: int, k: int, delta=0.1) -> CorrelationReport:
    a0 = (0,) * ell
    reps = {"equal": a0, "parallel": (0,) * (ell - 1) + (1,), "intersecting": (1,) + (0,) * (ell - 1)}
    pairs = {name: pair_correlation_closed(a0, b, p, ell, k) for name, b in reps.items()}
    return CorrelationReport(p, ell, k, pairs, rho_closed(p, ell, k), delta)
