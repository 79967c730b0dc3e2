"""Exact linear algebra over a prime field F_p.

Matrices are immutable tuples of residues. Subspaces are kept in reduced row
echelon form so that structural equality is point-set equality.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable, Sequence

ENUMERATION_GUARD = 10**7


class GuardExceeded(RuntimeError):
    """An exhaustive enumeration would exceed its feasibility bound."""


class DecodeError(ValueError):
    """A bit string does not decode to a valid RREF basis."""


def is_prime(p: int) -> bool:
    if p < 2:
        return False
    if p % 2 == 0:
        return p == 2
    f = 3
    while f * f <= p:
        if p % f == 0:
            return False
        f += 2
    return True


@dataclass(frozen=True)
class FpMatrix:
    p: int
    entries: tuple[tuple[int, ...], ...]
    cols: int

    def __init__(self, p: int, rows: Iterable[Sequence[int]], cols: int | None = None):
        if not is_prime(p):
            raise ValueError(f"modulus {p} is not prime")
        entries = tuple(tuple(int(x) % p for x in r) for r in rows)
        if cols is None:
            if not entries:
                raise ValueError("cols must be given for a matrix with no rows")
            cols = len(entries[0])
        if any(len(r) != cols for r in entries):
            raise ValueError("ragged rows")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "entries", entries)
        object.__setattr__(self, "cols", cols)

    @property
    def rows(self) -> int:
        return len(self.entries)

    def __getitem__(self, idx):
        return self.entries[idx]

    def tolist(self) -> list[list[int]]:
        return [list(r) for r in self.entries]


def _rref_rows(rows: list[list[int]], p: int, cols: int) -> tuple[list[list[int]], list[int]]:
    rows = [list(r) for r in rows]
    pivots: list[int] = []
    r = 0
    for c in range(cols):
        if r == len(rows):
            break
        found = next((i for i in range(r, len(rows)) if rows[i][c]), None)
        if found is None:
            continue
        rows[r], rows[found] = rows[found], rows[r]
        inv = pow(rows[r][c], -1, p)
        rows[r] = [(x * inv) % p for x in rows[r]]
        for i in range(len(rows)):
            if i != r and rows[i][c]:
                f = rows[i][c]
                rows[i] = [(x - f * y) % p for x, y in zip(rows[i], rows[r])]
        pivots.append(c)
        r += 1
    return rows, pivots


def rref(m: FpMatrix) -> tuple[FpMatrix, int]:
    """Reduced row echelon form of ``m`` and its rank over F_p."""
    rows, pivots = _rref_rows(m.tolist(), m.p, m.cols)
    return FpMatrix(m.p, rows, m.cols), len(pivots)


def rank(rows: Sequence[Sequence[int]], p: int) -> int:
    if not rows:
        return 0
    _, pivots = _rref_rows([list(r) for r in rows], p, len(rows[0]))
    return len(pivots)


@dataclass(frozen=True)
class Subspace:
    """Linear subspace of F_p^n stored by its unique RREF basis."""

    p: int
    ambient_dim: int
    basis: tuple[tuple[int, ...], ...]

    @property
    def dim(self) -> int:
        return len(self.basis)

    @property
    def pivots(self) -> tuple[int, ...]:
        return tuple(next(i for i, x in enumerate(r) if x) for r in self.basis)

    def __contains__(self, v: Sequence[int]) -> bool:
        v = [x % self.p for x in v]
        if len(v) != self.ambient_dim:
            raise ValueError("dimension mismatch")
        for row, c in zip(self.basis, self.pivots):
            f = v[c]
            if f:
                v = [(x - f * y) % self.p for x, y in zip(v, row)]
        return not any(v)

    def points(self) -> list[tuple[int, ...]]:
        out = []
        for coeffs in itertools.product(range(self.p), repeat=self.dim):
            v = [0] * self.ambient_dim
            for c, row in zip(coeffs, self.basis):
                if c:
                    v = [(x + c * y) % self.p for x, y in zip(v, row)]
            out.append(tuple(v))
        return out


def canonical_span(m: FpMatrix) -> Subspace:
    rows, pivots = _rref_rows(m.tolist(), m.p, m.cols)
    return Subspace(m.p, m.cols, tuple(tuple(r) for r in rows[: len(pivots)]))


def span(vectors: Iterable[Sequence[int]], p: int, ambient_dim: int) -> Subspace:
    return canonical_span(FpMatrix(p, list(vectors), ambient_dim))


def bits_per_element(p: int) -> int:
    """ceil(log2 p) for a prime p."""
    return (p - 1).bit_length()


def encoding_length(p: int, k: int, i: int) -> int:
    """Number of bits m_i used to serialize an i-dimensional subspace of F_p^{k+2}."""
    return (k + 2) * i * bits_per_element(p)


def encode_subspace(w: Subspace, k: int) -> str:
    """Serialize the RREF basis row-major, each residue as big-endian bits."""
    if w.ambient_dim != k + 2:
        raise ValueError(f"expected ambient dimension {k + 2}, got {w.ambient_dim}")
    if w.dim == 0:
        raise ValueError("the zero subspace has no encoding")
    width = bits_per_element(w.p)
    return "".join(format(x, f"0{width}b") for row in w.basis for x in row)


def decode_subspace(bits: str, p: int, k: int, i: int) -> Subspace:
    n = k + 2
    width = bits_per_element(p)
    if len(bits) != encoding_length(p, k, i) or set(bits) - {"0", "1"}:
        raise DecodeError("bit string has the wrong length or alphabet")
    vals = [int(bits[j : j + width], 2) for j in range(0, len(bits), width)]
    if any(v >= p for v in vals):
        raise DecodeError("residue out of range")
    rows = tuple(tuple(vals[r * n : (r + 1) * n]) for r in range(i))
    # a valid encoding is already its own RREF with i nonzero rows
    red, pivots = _rref_rows([list(r) for r in rows], p, n)
    if len(pivots) != i or tuple(tuple(r) for r in red) != rows:
        raise DecodeError("decoded rows are not a rank-%d RREF basis" % i)
    return Subspace(p, n, rows)


@dataclass(frozen=True)
class AffineSubspace:
    """Affine subspace V of F_p^{n-1} given by its lift W = span{(z, 1) : z in V}."""

    lift: Subspace

    @property
    def p(self) -> int:
        return self.lift.p

    @property
    def ambient_dim(self) -> int:
        return self.lift.ambient_dim - 1

    @property
    def is_empty(self) -> bool:
        return all(row[-1] == 0 for row in self.lift.basis)

    def __contains__(self, z: Sequence[int]) -> bool:
        return tuple(z) + (1,) in self.lift

    def points(self) -> list[tuple[int, ...]]:
        return sorted(v[:-1] for v in self.lift.points() if v[-1] == 1)

    def size(self) -> int:
        return 0 if self.is_empty else self.p ** (self.lift.dim - 1)


def affine_slice(w: Subspace) -> AffineSubspace:
    return AffineSubspace(w)


def lift_points(points: Iterable[Sequence[int]], p: int, ambient_dim: int) -> Subspace:
    """Span of the lifted points (z, 1) in F_p^{ambient_dim + 1}."""
    return span([tuple(z) + (1,) for z in points], p, ambient_dim + 1)


def hyperplane_indicator(a: Sequence[int], z: Sequence[int], p: int) -> int:
    """+1 iff z_l = a_1 z_1 + ... + a_{l-1} z_{l-1} + a_l (mod p), else -1."""
    if len(a) != len(z):
        raise ValueError("length mismatch between a and z")
    rhs = sum(ai * zi for ai, zi in zip(a[:-1], z[:-1])) + a[-1]
    return 1 if (z[-1] - rhs) % p == 0 else -1


def hyperplane_points(a: Sequence[int], p: int) -> list[tuple[int, ...]]:
    ell = len(a)
    out = []
    for head in itertools.product(range(p), repeat=ell - 1):
        last = (sum(x * y for x, y in zip(a[:-1], head)) + a[-1]) % p
        out.append(head + (last,))
    return out


def gaussian_binomial(n: int, d: int, p: int) -> int:
    if d < 0 or d > n:
        return 0
    num = den = 1
    for i in range(d):
        num *= p ** (n - i) - 1
        den *= p ** (i + 1) - 1
    return num // den


def enumerate_subspaces(n: int, d: int, p: int, guard: int = ENUMERATION_GUARD) -> list[Subspace]:
    """All d-dimensional subspaces of F_p^n, generated directly as RREF bases."""
    if not is_prime(p):
        raise ValueError(f"modulus {p} is not prime")
    if p ** (n * d) > guard:
        raise GuardExceeded(f"p^(n*d) = {p}^{n * d} exceeds guard {guard}")
    out = []
    for pivots in itertools.combinations(range(n), d):
        # free positions: right of the row's pivot, outside every pivot column
        free = [(r, c) for r, pc in enumerate(pivots) for c in range(pc + 1, n) if c not in pivots]
        for vals in itertools.product(range(p), repeat=len(free)):
            rows = [[0] * n for _ in range(d)]
            for r, pc in enumerate(pivots):
                rows[r][pc] = 1
            for (r, c), v in zip(free, vals):
                rows[r][c] = v
            out.append(Subspace(p, n, tuple(tuple(r) for r in rows)))
    return out


def parse_matrix(text: str) -> FpMatrix:
    """Parse the fixture format: ``p rows cols`` then row-major integers."""
    tokens = text.split()
    if len(tokens) < 3:
        raise ValueError("missing header")
    p, r, c = (int(t) for t in tokens[:3])
    vals = [int(t) for t in tokens[3:]]
    if len(vals) != r * c:
        raise ValueError(f"expected {r * c} entries, found {len(vals)}")
    return FpMatrix(p, [vals[i * c : (i + 1) * c] for i in range(r)], c)


def format_matrix(m: FpMatrix) -> str:
    lines = [f"{m.p} {m.rows} {m.cols}"]
    lines += [" ".join(str(x) for x in row) for row in m.entries]
    return "\n".join(lines) + "\n"
