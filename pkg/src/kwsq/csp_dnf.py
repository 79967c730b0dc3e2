"""Planted CSPs over t-tuples, their Fourier complexity, and the DNF encoding.

Sign convention: +1 is "true" and corresponds to the bit 1. An assignment
sigma is stored as bits; :func:`to_bits` and :func:`to_signs` convert.
Variable indices are 1-based, matching tuple notation (i_1, ..., i_t).
"""

from __future__ import annotations

import itertools
import json
import math
import random
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Iterable, Sequence

import numpy as np

from kwsq.dist import LabeledDistribution
from kwsq.fp_linalg import GuardExceeded

MAX_ARITY = 20


def to_bits(signs: Sequence[int]) -> tuple[int, ...]:
    if any(s not in (1, -1) for s in signs):
        raise ValueError("expected +-1 entries")
    return tuple(1 if s == 1 else 0 for s in signs)


def to_signs(bits: Sequence[int]) -> tuple[int, ...]:
    if any(b not in (0, 1) for b in bits):
        raise ValueError("expected 0/1 entries")
    return tuple(1 if b else -1 for b in bits)


def _inputs(t: int) -> list[tuple[int, ...]]:
    """All of {+-1}^t; input number m has x_j = -1 iff bit j-1 of m is set."""
    return [tuple(-1 if (m >> j) & 1 else 1 for j in range(t)) for m in range(2**t)]


@dataclass(frozen=True)
class Predicate:
    t: int
    table: tuple[int, ...]
    name: str = ""

    def __post_init__(self):
        if self.t > MAX_ARITY:
            raise GuardExceeded(f"arity {self.t} exceeds {MAX_ARITY}")
        if len(self.table) != 2**self.t or any(v not in (1, -1) for v in self.table):
            raise ValueError("table must list 2^t values in {-1, +1}")

    @classmethod
    def from_function(cls, t: int, fn: Callable[..., int], name: str = "") -> "Predicate":
        return cls(t, tuple(fn(*x) for x in _inputs(t)), name)

    def __call__(self, *x: int) -> int:
        m = sum(1 << j for j, v in enumerate(x) if v == -1)
        return self.table[m]

    def permuted(self, perm: Sequence[int]) -> "Predicate":
        """x -> P(x_perm[0], ..., x_perm[t-1])."""
        return Predicate.from_function(self.t, lambda *x: self(*(x[i] for i in perm)), self.name)

    def to_hex(self) -> str:
        bits = sum(1 << m for m, v in enumerate(self.table) if v == 1)
        return format(bits, f"0{max(1, 2**self.t // 4)}x")

    @classmethod
    def from_hex(cls, t: int, text: str, name: str = "") -> "Predicate":
        bits = int(text, 16)
        return cls(t, tuple(1 if bits >> m & 1 else -1 for m in range(2**t)), name)


def parity(t: int) -> Predicate:
    return Predicate.from_function(t, lambda *x: math.prod(x), f"parity{t}")


def xor2() -> Predicate:
    return Predicate.from_function(2, lambda a, b: a * b, "XOR2")


def and2() -> Predicate:
    return Predicate.from_function(2, lambda a, b: 1 if a == b == 1 else -1, "AND2")


def or2() -> Predicate:
    return Predicate.from_function(2, lambda a, b: 1 if 1 in (a, b) else -1, "OR2")


def maj3() -> Predicate:
    return Predicate.from_function(3, lambda a, b, c: 1 if a + b + c > 0 else -1, "MAJ3")


def constant(t: int, value: int) -> Predicate:
    return Predicate(t, (value,) * 2**t, f"const{value}")


PREDICATES = {"XOR2": xor2, "AND2": and2, "OR2": or2, "parity3": lambda: parity(3), "MAJ3": maj3}


# --- Fourier ---------------------------------------------------------------------

def fourier(p: Predicate) -> dict[frozenset, Fraction]:
    """hat P(S) = E_x[P(x) chi_S(x)] for every S, keyed by 1-based index sets.

    Computed by an in-place integer Walsh-Hadamard transform.
    """
    a = np.array(p.table, dtype=np.int64)
    h = 1
    while h < len(a):
        a = a.reshape(-1, 2, h)
        a = np.stack([a[:, 0] + a[:, 1], a[:, 0] - a[:, 1]], axis=1).reshape(-1)
        h *= 2
    n = 2**p.t
    return {frozenset(j + 1 for j in range(p.t) if m >> j & 1): Fraction(int(a[m]), n)
            for m in range(n)}


def complexity(p: Predicate) -> tuple[int, int]:
    """(r_literal, r_positive): lowest degree with a nonzero coefficient.

    r_literal counts the empty set (so it is 0 for biased predicates);
    r_positive only looks at degrees >= 1.
    """
    spec = fourier(p)
    nonzero = [len(s) for s, c in spec.items() if c]
    positive = [d for d in nonzero if d >= 1]
    if not positive:
        raise ValueError("constant predicate has no positive-degree coefficient")
    return min(nonzero), min(positive)


# --- planted instances -------------------------------------------------------------

def distinct_tuples(n: int, t: int) -> Iterable[tuple[int, ...]]:
    return itertools.permutations(range(1, n + 1), t)


def planted_distribution(p: Predicate, sigma: Sequence[int], n: int, null: bool = False,
                         guard: int = 10**6) -> LabeledDistribution:
    """Uniform distinct t-tuple labeled by P(sigma_i1, ..., sigma_it), or by a fair coin.

    sigma is given in +-1 form.
    """
    t = p.t
    if len(sigma) != n or n < t:
        raise ValueError("need len(sigma) = n >= t")
    to_bits(sigma)
    count = math.perm(n, t)
    if count > guard:
        raise GuardExceeded(f"{count} tuples exceeds guard {guard}")
    w = Fraction(1, count)
    out = {}
    for tup in distinct_tuples(n, t):
        if null:
            out[(tup, 1)] = w / 2
            out[(tup, -1)] = w / 2
        else:
            out[(tup, p(*(sigma[i - 1] for i in tup)))] = w
    return LabeledDistribution(out)


def encode_tuple(tup: Sequence[int], n: int) -> tuple[int, ...]:
    """Concatenated indicator vectors: position n(j-1)+l is 1 iff i_j = l."""
    if len(set(tup)) != len(tup):
        raise ValueError("repeated index")
    if any(not 1 <= i <= n for i in tup):
        raise ValueError("index out of range")
    out = [0] * (len(tup) * n)
    for j, i in enumerate(tup):
        out[j * n + i - 1] = 1
    return tuple(out)


def encoded_distribution(ld: LabeledDistribution, n: int) -> LabeledDistribution:
    return LabeledDistribution({(encode_tuple(z, n), b): pr for (z, b), pr in ld.items()})


# --- DNF -------------------------------------------------------------------------

Literal = tuple[int, bool]  # (0-based variable index, positive?)


@dataclass(frozen=True)
class DNFFormula:
    num_vars: int
    terms: tuple[tuple[Literal, ...], ...]

    def __call__(self, v: Sequence[int]) -> int:
        if len(v) != self.num_vars:
            raise ValueError("wrong number of variables")
        for term in self.terms:
            if all(bool(v[i]) == pos for i, pos in term):
                return 1
        return -1

    @property
    def size(self) -> int:
        return len(self.terms)

    def export(self) -> list[list[int]]:
        """Signed 1-based variable indices per term."""
        return [[(i + 1) if pos else -(i + 1) for i, pos in term] for term in self.terms]

    @classmethod
    def from_export(cls, num_vars: int, terms: list[list[int]]) -> "DNFFormula":
        return cls(num_vars, tuple(tuple((abs(x) - 1, x > 0) for x in term) for term in terms))

    def flip_literal(self, term: int, lit: int) -> "DNFFormula":
        terms = [list(tm) for tm in self.terms]
        i, pos = terms[term][lit]
        terms[term][lit] = (i, not pos)
        return DNFFormula(self.num_vars, tuple(tuple(tm) for tm in terms))


def build_dnf(p: Predicate, sigma_bits: Sequence[int], n: int) -> DNFFormula:
    """f_sigma: one term per satisfying pattern y of P.

    Position j contributes z_j (no v_{j,l} with sigma_l = 0 is set) when
    y_j = 1 and its complement (no v_{j,l} with sigma_l = 1 is set) when
    y_j = 0.
    """
    sigma_bits = tuple(sigma_bits)
    if len(sigma_bits) != n:
        raise ValueError("sigma must have n bits")
    to_signs(sigma_bits)
    t = p.t
    terms = []
    for y in itertools.product((1, 0), repeat=t):
        if p(*to_signs(y)) != 1:
            continue
        term = tuple((j * n + l, False) for j in range(t) for l in range(n) if sigma_bits[l] != y[j])
        terms.append(term)
    return DNFFormula(t * n, tuple(terms))


def formula_violations(f: DNFFormula, p: Predicate, sigma_bits: Sequence[int], n: int) -> list:
    """Tuples on which f(M(tuple)) differs from P(sigma on the tuple)."""
    signs = to_signs(sigma_bits)
    bad = []
    for tup in distinct_tuples(n, p.t):
        want = p(*(signs[i - 1] for i in tup))
        got = f(encode_tuple(tup, n))
        if got != want:
            bad.append((tup, want, got))
    return bad


@dataclass(frozen=True)
class ReductionReport:
    predicate: str
    sigma_bits: tuple[int, ...]
    n: int
    checked: int
    dnf_size: int
    violations: tuple

    @property
    def ok(self) -> bool:
        return not self.violations


def verify_reduction(p: Predicate, sigma_bits: Sequence[int], n: int) -> ReductionReport:
    """Exhaustively check P(sigma_i1..sigma_it) = f_sigma(M(i_1..i_t))."""
    if n > 8 or p.t > 3:
        raise GuardExceeded("exhaustive verification is limited to n <= 8, t <= 3")
    f = build_dnf(p, sigma_bits, n)
    bad = formula_violations(f, p, sigma_bits, n)
    return ReductionReport(p.name, tuple(sigma_bits), n, math.perm(n, p.t), f.size, tuple(bad))


def mutation_results(p: Predicate, sigma_bits: Sequence[int], n: int) -> list[int]:
    """Violation count after flipping each literal of f_sigma in turn."""
    f = build_dnf(p, sigma_bits, n)
    out = []
    for ti, term in enumerate(f.terms):
        for li in range(len(term)):
            out.append(len(formula_violations(f.flip_literal(ti, li), p, sigma_bits, n)))
    return out


# --- bound calculators -------------------------------------------------------------

def lower_bound_numbers(t: int, r: int, n: float, alpha: float) -> dict:
    """Arity k = n^(1-alpha), the stated tolerance and query exponent, as plain numbers."""
    k = n ** (1 - alpha)
    return {
        "t": t, "r": r, "n": n, "alpha": alpha,
        "k": k,
        "csp_tolerance": (2 / n**alpha) ** (r / 2) * k / 4,
        "csp_query_exponent": k,  # 2^(k - O(t)) queries
        "dnf_query_exponent": k,  # 2^k queries
    }


# --- instance files ----------------------------------------------------------------

def write_instance(p: Predicate, sigma_bits: Sequence[int], n: int,
                   samples: Iterable[tuple[Sequence[int], int]]) -> str:
    header = {"t": p.t, "n": n, "sigma": "".join(str(b) for b in sigma_bits),
              "predicate": p.to_hex()}
    lines = [json.dumps(header, sort_keys=True)]
    lines += [" ".join(str(i) for i in tup) + f" {b}" for tup, b in samples]
    return "\n".join(lines) + "\n"


def read_instance(text: str):
    lines = [ln for ln in text.splitlines() if ln.strip()]
    header = json.loads(lines[0])
    p = Predicate.from_hex(header["t"], header["predicate"])
    sigma = tuple(int(c) for c in header["sigma"])
    samples = []
    for ln in lines[1:]:
        vals = [int(v) for v in ln.split()]
        samples.append((tuple(vals[:-1]), vals[-1]))
    return p, sigma, header["n"], samples


def sample_instance(p: Predicate, sigma_bits: Sequence[int], n: int, m: int, seed: int,
                    null: bool = False) -> list[tuple[tuple[int, ...], int]]:
    rng = random.Random(seed)
    signs = to_signs(sigma_bits)
    out = []
    for _ in range(m):
        tup = tuple(rng.sample(range(1, n + 1), p.t))
        b = rng.choice((1, -1)) if null else p(*(signs[i - 1] for i in tup))
        out.append((tup, b))
    return out
