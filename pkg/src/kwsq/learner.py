"""(k+1)-wise SQ learner for affine hyperplane indicators over F_p^{k+1}.

The learner estimates, with (k+1)-wise queries, how often k+1 positively
labeled points span a subspace of each rank, picks the largest rank whose
frequency clears its threshold, and then reads the common row span off bit
by bit.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

from kwsq.dist import ENUMERATION_GUARD, FiniteDistribution, Query, as_fraction
from kwsq.fp_linalg import (
    AffineSubspace,
    GuardExceeded,
    Subspace,
    affine_slice,
    encode_subspace,
    decode_subspace,
    encoding_length,
    hyperplane_indicator,
    is_prime,
    rank,
    span,
)
from kwsq.oracles import OracleSession


class OracleViolation(RuntimeError):
    """The responses are inconsistent with any oracle that respects tau."""


@dataclass(frozen=True)
class LearnerParams:
    k: int
    p: int
    eps: Fraction
    c: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "eps", as_fraction(self.eps))
        if not is_prime(self.p):
            raise ValueError(f"{self.p} is not prime")
        if self.k < 1:
            raise ValueError("k must be positive")
        if not 0 < self.eps < 1:
            raise ValueError("eps must lie in (0, 1)")
        if self.c is None:
            object.__setattr__(self, "c", select_constant(self.k, self.eps))
        elif self.c < 1:
            raise ValueError("c must be a positive integer")


@dataclass(frozen=True)
class Schedule:
    """Tolerance and thresholds, all exact.

    tau = base^((k+1)^(k+3)) with base = eps / 2^(c(k+2)); every root of tau
    the thresholds need is an integer power of ``base``.
    """

    k: int
    eps: Fraction
    c: int
    base: Fraction
    tau: Fraction
    thresholds: tuple[Fraction, ...]  # thresholds[i - 1] = tau_i

    def threshold(self, i: int) -> Fraction:
        return self.thresholds[i - 1]

    def to_json(self) -> dict:
        def log2(x: Fraction) -> float:
            return math.log2(x.numerator) - math.log2(x.denominator)

        return {"c": self.c, "log2_tau": log2(self.tau),
                "log2_thresholds": [log2(t) for t in self.thresholds]}


def schedule(k: int, eps, c: int) -> Schedule:
    eps = as_fraction(eps)
    base = eps / 2 ** (c * (k + 2))
    tau = base ** ((k + 1) ** (k + 3))
    ths = tuple(2 ** (c * (k + 2 - i)) * k * base ** ((k + 1) ** (i + 1)) for i in range(1, k + 2))
    return Schedule(k, eps, c, base, tau, ths)


def schedule_violations(k: int, eps, c: int) -> list[str]:
    """Names of the schedule constraints that fail for this c (empty when c is valid)."""
    eps = as_fraction(eps)
    s = schedule(k, eps, c)
    t = s.thresholds
    bad = []
    if not 2 * (k + 1) * t[0] + 4 * (k + 1) * s.tau / eps ** (k + 1) < 1:
        bad.append("no-fall-through")
    if not s.tau <= eps ** (k + 1) / 2:
        bad.append("v-lower-bound")
    for i in range(1, k + 1):
        # (k+1) (4k)^(1/k) tau_{i+1}^(1/k) <= tau_i / 4, raised to the k-th power
        if not (k + 1) ** k * 4 * k * t[i] <= (t[i - 1] / 4) ** k:
            bad.append(f"failure-chain[{i}]")
    for i in range(1, k + 2):
        if not 4 * k * t[i - 1] <= eps ** (k * k):
            bad.append(f"error-bound[{i}]")
    return bad


def select_constant(k: int, eps) -> int:
    """Smallest positive integer c satisfying every schedule constraint."""
    c = 1
    while schedule_violations(k, eps, c):
        c += 1
    return c


# --- hypotheses ----------------------------------------------------------------

class Hypothesis:
    def __call__(self, z: Sequence[int]) -> int:
        raise NotImplementedError

    def positives(self) -> list[tuple[int, ...]]:
        raise NotImplementedError


@dataclass(frozen=True)
class AllNegative(Hypothesis):
    def __call__(self, z):
        return -1

    def positives(self):
        return []

    def to_json(self) -> dict:
        return {"kind": "all_negative"}


@dataclass(frozen=True)
class AffineIndicator(Hypothesis):
    subspace: AffineSubspace

    def __call__(self, z):
        return 1 if tuple(z) in self.subspace else -1

    def positives(self):
        return self.subspace.points()

    def to_json(self) -> dict:
        return {"kind": "affine_indicator", "p": self.subspace.p,
                "lift_basis": [list(r) for r in self.subspace.lift.basis]}


def hypothesis_error(h: Hypothesis, marginal: FiniteDistribution, a: Sequence[int], p: int) -> Fraction:
    """Exact Pr_{z ~ P}[h(z) != f_a(z)]."""
    return marginal.mass(lambda z: h(z) != hyperplane_indicator(a, z, p))


# --- learner -------------------------------------------------------------------

@dataclass
class _RankCache:
    """rank and span encoding of Z for each tuple of positive points."""

    p: int
    k: int
    table: dict = field(default_factory=dict)

    def lookup(self, zs: tuple) -> tuple[int, str]:
        hit = self.table.get(zs)
        if hit is None:
            w = span([tuple(z) + (1,) for z in zs], self.p, self.k + 2)
            hit = (w.dim, encode_subspace(w, self.k))
            self.table[zs] = hit
        return hit


@dataclass(frozen=True)
class LearnResult:
    hypothesis: Hypothesis
    branch: int | None  # rank i taken, None for the early exit
    responses: dict

    def to_json(self) -> dict:
        def r(x):
            return f"{x.numerator}/{x.denominator}" if isinstance(x, Fraction) else x

        return {"hypothesis": self.hypothesis.to_json(), "branch_taken_i": self.branch,
                "responses": {k: r(v) for k, v in self.responses.items()}}


def _all_positive(xs) -> bool:
    return all(b == 1 for _, b in xs)


def learn(session: OracleSession, params: LearnerParams) -> LearnResult:
    """Run the learner against a (k+1)-wise oracle over labeled examples.

    Raises:
        OracleViolation: no rank clears its threshold, which cannot happen for
            an oracle that respects the scheduled tolerance.
    """
    k, p, eps = params.k, params.p, params.eps
    sched = schedule(k, eps, params.c)
    if session.arity != k + 1:
        raise ValueError(f"learner needs a {k + 1}-wise oracle, got arity {session.arity}")
    if session.tau != sched.tau:
        raise ValueError("oracle tolerance must equal the scheduled tau")
    cache = _RankCache(p, k)
    responses: dict = {}

    w = session.stat_query(Query(k + 1, lambda *xs: int(xs[0][1] == 1), "positive"))
    responses["w"] = w
    if w <= eps - sched.tau:
        return LearnResult(AllNegative(), None, responses)

    v = session.stat_query(Query(k + 1, lambda *xs: int(_all_positive(xs)), "all_positive"))
    responses["v"] = v
    if v <= 0:
        raise OracleViolation(f"all-positive response {v} is not positive")

    for i in range(k + 1, 0, -1):
        def phi_i(*xs, i=i):
            return int(_all_positive(xs) and cache.lookup(tuple(z for z, _ in xs))[0] == i)

        v_i = session.stat_query(Query(k + 1, phi_i, f"rank={i}"))
        responses[f"v_{i}"] = v_i
        if v_i / v >= sched.threshold(i):
            vhat = recover_subspace(session, i, v, v_i, sched, p, cache)
            return LearnResult(AffineIndicator(vhat), i, responses)
    raise OracleViolation("no rank cleared its threshold")


def recover_subspace(session: OracleSession, i: int, v, v_i, sched: Schedule, p: int,
                     cache: _RankCache | None = None) -> AffineSubspace:
    """Read the rank-i row span bit by bit and slice it at last coordinate 1.

    Both v and v_i are taken: v for the precondition, v_i for the bit thresholds.

    Raises:
        DecodeError: the thresholded bits are not a valid rank-i RREF basis.
    """
    k = sched.k
    if not v > sched.eps ** (k + 1) / 2:
        raise ValueError("recovery needs v > eps^(k+1)/2")
    if not v_i / v >= sched.threshold(i):
        raise ValueError("recovery needs v_i / v >= tau_i")
    cache = cache or _RankCache(p, k)
    bits = []
    for j in range(encoding_length(p, k, i)):
        def phi_ij(*xs, j=j):
            if not _all_positive(xs):
                return 0
            r, enc = cache.lookup(tuple(z for z, _ in xs))
            return int(r == i and enc[j] == "1")

        u = session.stat_query(Query(k + 1, phi_ij, f"rank={i},bit={j}"))
        bits.append("1" if u / v_i >= Fraction(9, 10) else "0")
    return affine_slice(decode_subspace("".join(bits), p, k, i))


def query_budget(k: int, p: int) -> int:
    """Upper bound on the number of queries ``learn`` asks."""
    return 2 + (k + 1) + encoding_length(p, k, k + 1)


# --- structure ---------------------------------------------------------------------

def rank_distribution(q: FiniteDistribution, p: int, draws: int,
                      guard: int = ENUMERATION_GUARD) -> dict[int, Fraction]:
    """Exact law of rk(Z) for Z with ``draws`` i.i.d. rows from q.

    Only the set of distinct rows matters, so the sum runs over tuples of
    support indices with integer weights.
    """
    pts = [x for x, w in q.items() if w]
    if len(pts) ** draws > guard:
        raise GuardExceeded(f"{len(pts)}^{draws} exceeds guard {guard}")
    ws = [q.prob(x) for x in pts]
    out: dict[int, Fraction] = {}
    memo: dict[frozenset, int] = {}
    for idx in itertools.product(range(len(pts)), repeat=draws):
        key = frozenset(idx)
        r = memo.get(key)
        if r is None:
            r = memo[key] = rank([pts[t] for t in key], p)
        pr = math.prod((ws[t] for t in idx), start=Fraction(1))
        out[r] = out.get(r, Fraction(0)) + pr
    return dict(sorted(out.items()))


@dataclass(frozen=True)
class Witness:
    subspace: Subspace
    miss: Fraction
    qualifies: bool


@dataclass(frozen=True)
class Refutation:
    """The rank hypothesis itself fails: Pr[rk(Z) <= i] < 1 - xi."""

    prob_rank_at_most_i: Fraction


def best_subspace(q: FiniteDistribution, p: int, i: int,
                  guard: int = ENUMERATION_GUARD) -> tuple[Subspace, Fraction]:
    """A subspace of dim <= i with the least mass of q outside it.

    Every subspace W can be shrunk to the span of the support points it holds
    without losing mass, so spans of at most i support points cover all
    optimal candidates.
    """
    pts = [x for x, w in q.items() if w]
    n = len(pts[0])
    count = sum(math.comb(len(pts), r) for r in range(i + 1))
    if count > guard:
        raise GuardExceeded(f"{count} candidate spans exceed guard {guard}")
    best = (span([], p, n), Fraction(1) - sum(q.prob(x) for x in pts if not any(x)))
    seen = set()
    for r in range(1, i + 1):
        for combo in itertools.combinations(pts, r):
            w = span(combo, p, n)
            if w.dim > i or w in seen:
                continue
            seen.add(w)
            miss = Fraction(1) - sum((q.prob(x) for x in pts if x in w), Fraction(0))
            if miss < best[1]:
                best = (w, miss)
    return best


def structure_witness(q: FiniteDistribution, i: int, xi, k: int, p: int,
                      guard: int = ENUMERATION_GUARD) -> Witness | Refutation:
    """Check the rank hypothesis for k+1 rows of q exactly, then find a subspace.

    The witness qualifies when its miss mass is at most xi^(1/k), compared as
    miss^k <= xi.
    """
    xi = as_fraction(xi)
    law = rank_distribution(q, p, k + 1, guard)
    at_most = sum((pr for r, pr in law.items() if r <= i), Fraction(0))
    if at_most < 1 - xi:
        return Refutation(at_most)
    w, miss = best_subspace(q, p, i, guard)
    return Witness(w, miss, miss**k <= xi)


def tightness_distribution(k: int, alpha) -> FiniteDistribution:
    """Mass 1-alpha on e_1 and alpha/(k-1) on each other basis vector of F_2^k."""
    alpha = as_fraction(alpha)
    basis = [tuple(int(r == c) for c in range(k)) for r in range(k)]
    return FiniteDistribution([(basis[0], 1 - alpha)] + [(e, alpha / (k - 1)) for e in basis[1:]])


def tightness_span_law(k: int, alpha) -> dict[int, Fraction]:
    """Exact law of dim span of k draws from :func:`tightness_distribution`.

    The dimension is [e_1 drawn] plus the number of distinct other basis
    vectors drawn; the second count follows by inclusion-exclusion.
    """
    alpha = as_fraction(alpha)
    m = k - 1
    q = alpha / m
    out: dict[int, Fraction] = {}
    # choose how many draws avoid e_1 (s) and how many distinct others they hit (d)
    for s in range(k + 1):
        ways = math.comb(k, s) * (1 - alpha) ** (k - s) * q**s
        for d in range(min(s, m) + 1):
            # surjections from s draws onto d chosen vectors
            onto = sum((-1) ** j * math.comb(d, j) * (d - j) ** s for j in range(d + 1))
            if not onto:
                continue
            dim = d + (1 if s < k else 0)
            out[dim] = out.get(dim, Fraction(0)) + ways * math.comb(m, d) * onto
    return dict(sorted(out.items()))
