"""Reducing k-wise queries to unary ones for flat distribution families.

A k-wise gap between D and D0 is split along the hybrids D^j D0^(k-j). A
random hybrid index, a prefix drawn from the flat center and a suffix drawn
from D0 turn the k-ary query into a unary one that still separates D from D0
with noticeable probability.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from kwsq.dist import (
    ENUMERATION_GUARD,
    FiniteDistribution,
    Query,
    _exact,
    _tuple_weights,
    as_fraction,
    expectation_k,
    expectation_product,
    max_ratio,
)
from kwsq.fp_linalg import GuardExceeded
from kwsq.oracles import OracleSession


class NonConvergence(RuntimeError):
    """MW exceeded its update cap; the flatness certificate is likely wrong."""


# --- hybrids -------------------------------------------------------------------

def hybrid_values(d: FiniteDistribution, d0: FiniteDistribution, q: Query,
                  guard: int = ENUMERATION_GUARD) -> list[Fraction]:
    """H_j = D^j D0^(k-j)[q] for j = 0..k (the first j coordinates come from D)."""
    k = q.arity
    return [expectation_product([d] * j + [d0] * (k - j), q, guard) for j in range(k + 1)]


def signed_hybrid_differences(d, d0, q, guard: int = ENUMERATION_GUARD) -> list[Fraction]:
    h = hybrid_values(d, d0, q, guard)
    return [h[j] - h[j - 1] for j in range(1, len(h))]


def hybrid_gaps(d, d0, q, guard: int = ENUMERATION_GUARD) -> list[Fraction]:
    """|D^j D0^(k-j)[q] - D^(j-1) D0^(k-j+1)[q]| for j = 1..k."""
    return [abs(x) for x in signed_hybrid_differences(d, d0, q, guard)]


@dataclass(frozen=True)
class HybridContext:
    j: int
    prefix: tuple
    suffix: tuple

    def __post_init__(self):
        if self.j < 1:
            raise ValueError("j must be at least 1")

    @property
    def k(self) -> int:
        return len(self.prefix) + 1 + len(self.suffix)

    def to_json(self) -> dict:
        return {"j": self.j, "prefix": list(self.prefix), "suffix": list(self.suffix)}


def restrict(q: Query, ctx: HybridContext) -> Query:
    """The unary query x -> q(prefix, x, suffix)."""
    if ctx.k != q.arity:
        raise ValueError("context length does not match the query arity")
    pre, suf = ctx.prefix, ctx.suffix
    return Query(1, lambda x: q(*pre, x, *suf), f"{q.name}|j={ctx.j}")


def _draw(d: FiniteDistribution, rng: np.random.Generator, m: int) -> tuple:
    if m == 0:
        return ()
    probs = np.array([float(p) for p in d.probs])
    idx = rng.choice(len(d), size=m, p=probs / probs.sum())
    return tuple(d.support[i] for i in idx)


def sample_unary_query(q: Query, center: FiniteDistribution, d0: FiniteDistribution,
                       rng: np.random.Generator) -> tuple[Query, HybridContext]:
    """j uniform in [k], prefix from center^(j-1), suffix from d0^(k-j)."""
    k = q.arity
    j = int(rng.integers(1, k + 1))
    ctx = HybridContext(j, _draw(center, rng, j - 1), _draw(d0, rng, k - j))
    return restrict(q, ctx), ctx


def witness_probability(d: FiniteDistribution, d0: FiniteDistribution, center: FiniteDistribution,
                        q: Query, threshold, guard: int = ENUMERATION_GUARD) -> Fraction:
    """Exact Pr over (j, prefix, suffix) that |D[q'] - D0[q']| > threshold."""
    threshold = as_fraction(threshold)
    k = q.arity
    total = Fraction(0)
    for j in range(1, k + 1):
        dists = [center] * (j - 1) + [d0] * (k - j)
        if not dists:
            ctxs = [((), 1, 1)]
        else:
            pts, ws, den = _tuple_weights(dists, guard)
            ctxs = [(x, w, den) for x, w in zip(pts, ws) if w]
        for x, w, den in ctxs:
            ctx = HybridContext(j, tuple(x[: j - 1]), tuple(x[j - 1:]))
            u = restrict(q, ctx)
            if abs(expectation_k(d, u) - expectation_k(d0, u)) > threshold:
                total += Fraction(w, den)
    return total / k


# --- parameters ------------------------------------------------------------------

@dataclass(frozen=True)
class ReductionParams:
    """Sizing of the unary distinguisher.

    ``variant`` picks the flatness notion the certificate gamma refers to:
    ``max`` (max-divergence), ``approx_max`` (approximate max-divergence at
    tau/(8k^2)) or ``renyi`` (order ``alpha``). Each fixes a floor on the
    probability that a sampled unary query is a witness; q' is the number of
    samples after which a miss has probability at most delta.
    """

    k: int
    tau: Fraction
    gamma: Fraction
    delta: float
    variant: str = "max"
    alpha: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "tau", as_fraction(self.tau))
        object.__setattr__(self, "gamma", as_fraction(self.gamma))
        if self.gamma < 1:
            raise ValueError("gamma must be at least 1")
        if self.tau <= 0 or not 0 < self.delta < 1:
            raise ValueError("need tau > 0 and delta in (0, 1)")
        if self.variant not in ("max", "approx_max", "renyi"):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.variant == "renyi" and not (self.alpha and self.alpha > 1):
            raise ValueError("the Renyi variant needs alpha > 1")

    @property
    def unary_tolerance(self) -> Fraction:
        return self.tau / (4 * self.k)

    @property
    def witness_floor(self) -> float:
        k, tau, g = self.k, float(self.tau), float(self.gamma)
        if self.variant == "max":
            return tau / (4 * k * g ** (k - 1))
        if self.variant == "approx_max":
            return tau / (g ** (k - 1) * 8 * k)
        a = self.alpha
        return (tau / (4 * k)) ** (a / (a - 1)) / g ** (k - 1)

    @property
    def repetitions(self) -> int:
        if self.variant == "max":
            # 12 k gamma^(k-1) ln(1/delta) / tau, the same as 3 ln(1/delta) / floor
            return math.ceil(12 * self.k * float(self.gamma ** (self.k - 1))
                             * math.log(1 / self.delta) / float(self.tau))
        return math.ceil(3 * math.log(1 / self.delta) / self.witness_floor)


def check_flatness(family: Sequence[FiniteDistribution], center: FiniteDistribution, gamma) -> bool:
    """True when every member's max ratio to the center is at most gamma."""
    gamma = as_fraction(gamma)
    return all(max_ratio(d, center) <= gamma for d in family)


# --- distinguisher ---------------------------------------------------------------

@dataclass
class DistinguisherResult:
    decision: str
    queries: int
    params: ReductionParams
    deviating_context: HybridContext | None = None

    def to_json(self) -> dict:
        p = self.params
        return {"k": p.k, "tau": str(p.tau), "gamma": str(p.gamma), "delta": p.delta,
                "q_prime": p.repetitions, "decision": self.decision, "queries": self.queries,
                "deviating_query_context": None if self.deviating_context is None
                else self.deviating_context.to_json()}


def unary_distinguisher(q: Query, center: FiniteDistribution, d0: FiniteDistribution,
                        params: ReductionParams, session: OracleSession,
                        rng: np.random.Generator) -> DistinguisherResult:
    """Decide member vs reference with exactly q' unary queries.

    Declares ``member`` iff some sampled q' has |answer - D0[q']| > tau/(4k).
    """
    if session.arity != 1:
        raise ValueError("the distinguisher needs a unary oracle")
    if session.tau != params.unary_tolerance:
        raise ValueError(f"oracle tolerance must be tau/(4k) = {params.unary_tolerance}")
    if q.arity != params.k:
        raise ValueError("query arity does not match k")
    limit = params.unary_tolerance
    found = None
    for _ in range(params.repetitions):
        u, ctx = sample_unary_query(q, center, d0, rng)
        ans = session.stat_query(u)
        if found is None and abs(ans - expectation_k(d0, u)) > limit:
            found = ctx
    return DistinguisherResult("member" if found else "reference", params.repetitions, params, found)


# --- MW estimator ----------------------------------------------------------------

@dataclass
class MWResult:
    value: float
    updates: int
    queries: int
    update_cap: int
    streak: int

    def to_json(self) -> dict:
        return {"value": self.value, "updates": self.updates, "queries": self.queries,
                "update_cap": self.update_cap, "streak": self.streak}


def mw_budget(k: int, tau, gamma, delta) -> float:
    """gamma^(k-1) k^3 ln(1/delta) / tau^3, the leading term of the query bound."""
    return float(gamma) ** (k - 1) * k**3 * math.log(1 / delta) / float(tau) ** 3


def mw_update_cap(k: int, tau, gamma) -> int:
    return math.ceil(32 * k * k * math.log(float(gamma)) / float(tau) ** 2)


def _tensor(q: Query, domain: Sequence, guard: int) -> np.ndarray:
    k = q.arity
    if len(domain) ** k > guard:
        raise GuardExceeded(f"{len(domain)}^{k} exceeds guard {guard}")
    vals = [float(_exact(q(*x))) for x in itertools.product(domain, repeat=k)]
    return np.array(vals).reshape((len(domain),) * k)


def _kfold(t: np.ndarray, h: np.ndarray) -> float:
    for _ in range(t.ndim):
        t = t @ h
    return float(t)


def estimate_kwise_mw(q: Query, center: FiniteDistribution, gamma, tau, delta: float,
                      session: OracleSession, rng: np.random.Generator,
                      guard: int = ENUMERATION_GUARD) -> MWResult:
    """Estimate D^k[q] from unary queries by multiplicative weights.

    The candidate H starts at the center. Each round samples hybrid unary
    queries (prefix from the center, suffix from H) and compares the oracle
    answer with H's value; a gap over tau/(3k) reweights H by
    exp(+-eta q'(x)) with eta = tau/(12k). Once enough consecutive queries
    pass, H^k[q] is returned.

    Raises:
        NonConvergence: more than the update cap of reweightings were needed.
    """
    tau = as_fraction(tau)
    k = q.arity
    if session.arity != 1:
        raise ValueError("the estimator needs a unary oracle")
    if tau >= 1:
        return MWResult(0.0, 0, 0, 0, 0)
    if session.tau != tau / (6 * k):
        raise ValueError(f"oracle tolerance must be tau/(6k) = {tau / (6 * k)}")
    domain = list(center.support)
    tensor = _tensor(q, domain, guard)
    base = np.array([float(p) for p in center.probs])
    h = base.copy()
    ftau = float(tau)
    eta = ftau / (12 * k)
    flag = ftau / (3 * k)
    cap = mw_update_cap(k, tau, gamma)
    floor = ftau / (4 * k * float(gamma) ** (k - 1))
    streak = math.ceil(math.log((cap + 1) / delta) / floor)
    updates = queries = 0
    passed = 0
    base_cdf = np.cumsum(base)
    h_cdf = np.cumsum(h)
    last = len(domain) - 1
    while passed < streak:
        j = int(rng.integers(1, k + 1))
        u = rng.random(k - 1)
        pre = np.minimum(np.searchsorted(base_cdf, u[: j - 1] * base_cdf[-1], side="right"), last).tolist()
        suf = np.minimum(np.searchsorted(h_cdf, u[j - 1:] * h_cdf[-1], side="right"), last).tolist()
        t = tensor
        for i in pre:
            t = t[i]
        for i in suf[::-1]:
            t = t[..., i]
        vals = t  # q'(x) for each x in the domain
        ctx = HybridContext(j, tuple(domain[i] for i in pre), tuple(domain[i] for i in suf))
        ans = float(session.stat_query(restrict(q, ctx)))
        queries += 1
        gap = ans - float(vals @ h)
        if abs(gap) <= flag:
            passed += 1
            continue
        updates += 1
        if updates > cap:
            raise NonConvergence(f"more than {cap} updates")
        h = h * np.exp(eta * math.copysign(1.0, gap) * vals)
        h /= h.sum()
        h_cdf = np.cumsum(h)
        passed = 0
    return MWResult(_kfold(tensor, h), updates, queries, cap, streak)
