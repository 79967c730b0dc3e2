"""STAT^(k) and BS^(k) oracles with explicit response policies and accounting."""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Union

import numpy as np

from kwsq.dist import (
    ENUMERATION_GUARD,
    FiniteDistribution,
    Query,
    _exact,
    _tuple_weights,
    as_fraction,
    sample,
)

PERTURB_RESOLUTION = 2**32


class OracleError(RuntimeError):
    pass


class BudgetExhausted(OracleError):
    pass


@dataclass(frozen=True)
class Exact:
    """Answer with the exact expectation."""

    def describe(self) -> str:
        return "exact"


@dataclass(frozen=True)
class Extremal:
    """Answer exact + tau, exact - tau, or alternate starting with +tau."""

    sign: str = "+"

    def __post_init__(self):
        if self.sign not in ("+", "-", "alternate"):
            raise ValueError("sign must be '+', '-' or 'alternate'")

    def describe(self) -> str:
        return f"extremal({self.sign})"


@dataclass(frozen=True)
class Perturb:
    """Answer exact + tau * u with u uniform on a fine grid of [-1, 1]."""

    seed: int = 0

    def describe(self) -> str:
        return f"perturb(seed={self.seed})"


@dataclass(frozen=True)
class Empirical:
    """Answer with the mean over ``samples`` fresh draws.

    Only satisfies the tolerance with probability >= 1 - 2 exp(-m tau^2 / 2).
    ``budget`` caps the total number of draws across the session.
    """

    samples: int
    seed: int = 0
    budget: int | None = None

    def describe(self) -> str:
        return f"empirical(m={self.samples}, seed={self.seed})"


OraclePolicy = Union[Exact, Extremal, Perturb, Empirical]


@dataclass(frozen=True)
class TranscriptEntry:
    index: int
    query_digest: str
    answer: Fraction | str
    policy: str

    def to_json(self) -> dict:
        a = self.answer
        ans = f"{a.numerator}/{a.denominator}" if isinstance(a, Fraction) else a
        return {"index": self.index, "query_digest": self.query_digest,
                "answer_as_rational": ans, "policy": self.policy}


@dataclass(frozen=True)
class AuditReport:
    query_count: int
    tau: Fraction | None
    policy: str
    transcript_digest: str

    def to_json(self) -> dict:
        t = self.tau
        return {"query_count": self.query_count,
                "tau": None if t is None else f"{t.numerator}/{t.denominator}",
                "policy": self.policy, "transcript_digest": self.transcript_digest}


def _digest(values) -> str:
    text = "".join(f"{v}|" for v in values)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


@dataclass
class OracleSession:
    """One oracle bound to a distribution, arity and tolerance.

    A session is single-writer: queries must be issued sequentially.
    """

    distribution: FiniteDistribution
    arity: int
    tau: Fraction | None = None
    policy: OraclePolicy = field(default_factory=Exact)
    bits: int | None = None
    guard: int = ENUMERATION_GUARD
    transcript: list[TranscriptEntry] = field(default_factory=list)

    def __post_init__(self):
        if self.tau is not None:
            self.tau = as_fraction(self.tau)
            if self.tau <= 0:
                raise ValueError("tolerance must be positive")
        elif self.bits is None:
            raise ValueError("a STAT session needs a tolerance")
        if self.arity < 1:
            raise ValueError("arity must be positive")
        self._rng = random.Random(getattr(self.policy, "seed", 0))
        self._np_rng = np.random.default_rng(getattr(self.policy, "seed", 0))
        self._draws = 0
        self._cached_grid = None

    @property
    def query_count(self) -> int:
        return len(self.transcript)

    def _grid(self):
        if self._cached_grid is None:
            pts, ws, den = _tuple_weights([self.distribution] * self.arity, self.guard)
            self._cached_grid = (list(pts), list(ws), den)
        return self._cached_grid

    def _table(self, q: Query):
        pts, weights, den = self._grid()
        return [_exact(q(*x)) for x in pts], weights, den

    def stat_query(self, q: Query) -> Fraction:
        """Answer within tau of D^k[q] according to the session policy."""
        if self.tau is None:
            raise OracleError("session has no tolerance; it is a b-bit session")
        if q.arity != self.arity:
            raise ValueError(f"query arity {q.arity} != oracle arity {self.arity}")
        values, weights, den = self._table(q)
        num = sum(w * v for w, v in zip(weights, values) if w)
        exact = Fraction(num, den) if isinstance(num, int) else Fraction(num) / den
        pol = self.policy
        if isinstance(pol, Exact):
            ans = exact
        elif isinstance(pol, Extremal):
            sign = pol.sign
            if sign == "alternate":
                sign = "+" if self.query_count % 2 == 0 else "-"
            ans = exact + self.tau if sign == "+" else exact - self.tau
        elif isinstance(pol, Perturb):
            r = self._rng.randint(-PERTURB_RESOLUTION, PERTURB_RESOLUTION)
            ans = exact + self.tau * Fraction(r, PERTURB_RESOLUTION)
        elif isinstance(pol, Empirical):
            if pol.budget is not None and self._draws + pol.samples > pol.budget:
                raise BudgetExhausted(f"empirical budget of {pol.budget} draws exhausted")
            self._draws += pol.samples
            cols = [sample(self.distribution, self._np_rng, pol.samples) for _ in range(self.arity)]
            ans = sum((Fraction(_exact(q(*x))) for x in zip(*cols)), Fraction(0)) / pol.samples
        else:
            raise TypeError(f"unknown policy {pol!r}")
        self._record(values, ans)
        return ans

    def bbit_sample(self, q: Query | callable, rng: np.random.Generator) -> str:
        """phi(x_1..x_k) for a fresh draw from D^k; phi returns a bit string."""
        if self.bits is None:
            raise OracleError("session is not configured as a b-bit session")
        fn = q.fn if isinstance(q, Query) else q
        xs = [sample(self.distribution, rng, 1)[0] for _ in range(self.arity)]
        out = fn(*xs)
        if isinstance(out, int):
            out = format(out, "b") if out else "0"
        if len(out) > self.bits or set(out) - {"0", "1"}:
            raise OracleError(f"output {out!r} is not a bit string of length <= {self.bits}")
        pts, _, _ = _tuple_weights([self.distribution] * self.arity, self.guard)
        self._record([fn(*x) for x in pts], out)
        return out

    def _record(self, table, answer):
        self.transcript.append(TranscriptEntry(self.query_count, _digest(table), answer,
                                               self.policy.describe()))

    def audit(self) -> AuditReport:
        return AuditReport(self.query_count, self.tau, self.policy.describe(),
                           _digest(e.query_digest + ":" + str(e.answer) for e in self.transcript))

    def export_transcript(self) -> str:
        """JSON lines, one per query."""
        return "".join(json.dumps(e.to_json()) + "\n" for e in self.transcript)
