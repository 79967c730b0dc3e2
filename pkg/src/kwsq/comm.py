"""Low-communication access to samples, simulated with unary statistical queries.

Bit-extraction programs are generators: they yield :class:`Extract`
requests, receive the extracted bit back, and return their output. The same
program object drives the real executor, the SQ simulation, and the exact
output-distribution calculators.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Callable, Generator, Hashable, Sequence

import numpy as np

from kwsq.dist import FiniteDistribution, Query, as_fraction
from kwsq.oracles import Exact, OracleSession


class BudgetViolation(RuntimeError):
    """A program asked for more than b bits of one sample."""


@dataclass(frozen=True)
class Extract:
    """Request one bit fn(x_sample, prior bits of that sample)."""

    sample: int
    fn: Callable[[Any, tuple], int]


Program = Callable[[], Generator[Extract, int, Any]]


@dataclass(frozen=True)
class BitExtractionAlgorithm:
    n: int
    b: int
    program: Program
    name: str = ""


def _drive(algo: BitExtractionAlgorithm, answer: Callable[[Extract, tuple], int]):
    """Run the program, answering each request; returns (output, transcript)."""
    gen = algo.program()
    prior: list[list[int]] = [[] for _ in range(algo.n)]
    transcript = []
    try:
        req = next(gen)
        while True:
            if not 0 <= req.sample < algo.n:
                raise IndexError(f"sample index {req.sample} out of range")
            if len(prior[req.sample]) >= algo.b:
                raise BudgetViolation(f"sample {req.sample} already gave {algo.b} bits")
            bit = int(answer(req, tuple(prior[req.sample])))
            prior[req.sample].append(bit)
            transcript.append((req.sample, bit))
            req = gen.send(bit)
    except StopIteration as stop:
        return stop.value, transcript


def run_extraction(algo: BitExtractionAlgorithm, samples: Sequence):
    """Execute on real samples; returns (output, [(sample, bit), ...])."""
    if len(samples) != algo.n:
        raise ValueError(f"expected {algo.n} samples")
    return _drive(algo, lambda req, prior: req.fn(samples[req.sample], prior))


def extraction_tolerance(beta, b: int, n: int) -> Fraction:
    return as_fraction(beta) / (2 ** (b + 1) * n)


@dataclass
class _VirtualSample:
    """Extraction history of one simulated sample and the domain points consistent with it."""

    history: list = field(default_factory=list)  # (fn, prior, bit)
    consistent: dict = field(default_factory=dict)

    def matches(self, x) -> bool:
        hit = self.consistent.get(x)
        if hit is None:
            hit = all(int(fn(x, prior)) == bit for fn, prior, bit in self.history)
            self.consistent[x] = hit
        return hit

    def record(self, fn, prior, bit):
        self.history.append((fn, prior, bit))
        self.consistent = {x: ok for x, ok in self.consistent.items()
                           if ok and int(fn(x, prior)) == bit}


def simulate_extraction_sq(algo: BitExtractionAlgorithm, session: OracleSession, beta,
                           rng: np.random.Generator | None = None,
                           coin: Callable[[Fraction], int] | None = None):
    """Replace every extracted bit by a coin of bias p/q estimated with two unary SQs.

    q estimates Pr[prior bits of this sample match], p additionally requires
    the new bit to be 1. When q <= 2 tol the coin is fair. ``coin`` maps a
    bias to a bit and defaults to one driven by ``rng``.
    """
    tol = extraction_tolerance(beta, algo.b, algo.n)
    if session.arity != 1:
        raise ValueError("simulation needs a unary oracle")
    if session.tau != tol:
        raise ValueError(f"oracle tolerance must be beta/(2^(b+1) n) = {tol}")
    if coin is None:
        rng = rng if rng is not None else np.random.default_rng()
        coin = lambda bias: int(rng.random() < float(bias))  # noqa: E731
    virtual = [_VirtualSample() for _ in range(algo.n)]

    def answer(req: Extract, prior: tuple) -> int:
        vs = virtual[req.sample]
        fn = req.fn
        p_hat = session.stat_query(Query(1, lambda x: int(vs.matches(x) and int(fn(x, prior)) == 1),
                                         "bit=1&match"))
        if prior:
            q_hat = session.stat_query(Query(1, lambda x: int(vs.matches(x)), "match"))
        else:
            q_hat = Fraction(1)
        if q_hat <= 2 * tol:
            bias = Fraction(1, 2)
        else:
            bias = min(max(p_hat / q_hat, Fraction(0)), Fraction(1))
        bit = coin(bias)
        vs.record(fn, prior, bit)
        return bit

    return _drive(algo, answer)


# --- exact output distributions -------------------------------------------------------

def real_output_distribution(algo: BitExtractionAlgorithm, d: FiniteDistribution,
                             guard: int = 10**6) -> dict:
    if len(d) ** algo.n > guard:
        raise ValueError("too many sample tuples to enumerate")
    out: dict = {}
    for xs in itertools.product(list(d.items()), repeat=algo.n):
        pr = math.prod((p for _, p in xs), start=Fraction(1))
        if pr:
            y, _ = run_extraction(algo, [x for x, _ in xs])
            out[y] = out.get(y, Fraction(0)) + pr
    return out


class _NeedCoin(Exception):
    def __init__(self, bias):
        self.bias = bias


@dataclass(frozen=True)
class SimulationLaw:
    outputs: dict
    max_queries: int


def simulated_output_law(algo: BitExtractionAlgorithm, d: FiniteDistribution, beta,
                         policy=None) -> SimulationLaw:
    """Exact law of the simulator's output, by replaying every coin path.

    Each replay uses a fresh session, so the policy must be deterministic
    (Exact or Extremal). Also reports the largest query count over all paths.
    """
    policy = policy or Exact()
    tol = extraction_tolerance(beta, algo.b, algo.n)
    out: dict = {}
    most = 0
    stack = [((), Fraction(1))]
    while stack:
        path, weight = stack.pop()
        step = iter(path)

        def coin(bias, step=step):
            try:
                return next(step)
            except StopIteration:
                raise _NeedCoin(bias) from None

        session = OracleSession(d, 1, tol, policy)
        try:
            y, _ = simulate_extraction_sq(algo, session, beta, coin=coin)
        except _NeedCoin as need:
            if need.bias < 1:
                stack.append((path + (0,), weight * (1 - need.bias)))
            if need.bias > 0:
                stack.append((path + (1,), weight * need.bias))
            continue
        most = max(most, session.query_count)
        out[y] = out.get(y, Fraction(0)) + weight
    return SimulationLaw(out, most)


def total_variation(p: dict, q: dict) -> Fraction:
    keys = set(p) | set(q)
    return sum((abs(p.get(x, Fraction(0)) - q.get(x, Fraction(0))) for x in keys), Fraction(0)) / 2


def _and_low_bits() -> BitExtractionAlgorithm:
    def program():
        a = yield Extract(0, lambda x, prior: x & 1)
        b = yield Extract(1, lambda x, prior: x & 1)
        return a & b

    return BitExtractionAlgorithm(2, 1, program, "and_low")


def _adaptive() -> BitExtractionAlgorithm:
    def program():
        a = yield Extract(0, lambda x, prior: x & 1)
        if a:
            b = yield Extract(0, lambda x, prior: (x >> 1) & 1)
        else:
            b = yield Extract(1, lambda x, prior: x & 1)
        c = yield Extract(2, lambda x, prior: (x >> (a ^ b)) & 1)
        return a ^ b ^ c

    return BitExtractionAlgorithm(3, 2, program, "adaptive")


def _rare_branch() -> BitExtractionAlgorithm:
    # the second bit is conditioned on an event of mass 1/200, below 2 tol at beta = 1/20
    def program():
        a = yield Extract(0, lambda x, prior: int(x == 3))
        b = yield Extract(0, lambda x, prior: x & 1)
        return (a, b)

    return BitExtractionAlgorithm(2, 2, program, "rare")


def example_programs() -> dict[str, tuple[BitExtractionAlgorithm, FiniteDistribution]]:
    """Small enumerable programs over a 4-point domain, with their sample distributions."""
    uniform = FiniteDistribution.uniform(range(4))
    skewed = FiniteDistribution({0: Fraction(199, 600), 1: Fraction(199, 600),
                                 2: Fraction(199, 600), 3: Fraction(1, 200)})
    return {"and_low": (_and_low_bits(), uniform),
            "adaptive": (_adaptive(), uniform),
            "rare": (_rare_branch(), skewed)}


# --- collision probability -------------------------------------------------------------

def collision_exact(d: FiniteDistribution) -> Fraction:
    return sum((p * p for p in d.probs), Fraction(0))


def sign_average_exact(d: FiniteDistribution) -> Fraction:
    """Average of D[s]^2 over all 2^|X| sign functions s (equals the collision probability)."""
    n = len(d)
    if n > 20:
        raise ValueError("support too large for full enumeration")
    w = np.array(d.int_weights, dtype=object)
    total = 0
    for signs in itertools.product((1, -1), repeat=n):
        v = int(np.dot(w, np.array(signs, dtype=object)))
        total += v * v
    return Fraction(total, 2**n * d.denominator**2)


@dataclass(frozen=True)
class CollisionEstimate:
    value: float
    queries: int
    tolerance: Fraction
    envelope: float  # 2 tau' + tau'^2, bias bound from the oracle tolerance tau'

    def to_json(self) -> dict:
        return {"value": self.value, "queries": self.queries,
                "oracle_tolerance": str(self.tolerance), "envelope": self.envelope}


def collision_sample_count(tau, delta) -> int:
    return math.ceil(8 * math.log(2 / delta) / float(tau) ** 2)


def estimate_collision_sq(session: OracleSession, tau, delta: float, rng: np.random.Generator,
                          domain: Sequence[Hashable] | None = None) -> CollisionEstimate:
    """Mean of D[s]^2 over random sign tables s, clipped to [0, 1].

    The tolerance envelope is reported, not subtracted.
    """
    tau = as_fraction(tau)
    if session.arity != 1:
        raise ValueError("the collision estimator needs a unary oracle")
    if session.tau != tau / 8:
        raise ValueError(f"oracle tolerance must be tau/8 = {tau / 8}")
    domain = list(domain if domain is not None else session.distribution.support)
    m = collision_sample_count(tau, delta)
    total = 0.0
    for _ in range(m):
        signs = rng.integers(0, 2, size=len(domain)) * 2 - 1
        table = dict(zip(domain, signs.tolist()))
        u = float(session.stat_query(Query.from_table(table, "sign")))
        total += u * u
    t = float(tau) / 8
    return CollisionEstimate(min(max(total / m, 0.0), 1.0), m, tau / 8, 2 * t + t * t)


# --- protocols -------------------------------------------------------------------------

Broadcast = Callable[[int, Any, int, tuple], str]


@dataclass(frozen=True)
class ProtocolSpec:
    """A k-party public-coin broadcast protocol.

    Each round, every party in turn broadcasts ``round(party, x, seed,
    transcript)`` (a bit string). ``output(transcript, seed)`` is +-1.
    ``success`` is the guaranteed per-input probability of the correct answer.
    """

    k: int
    bits_per_party: int
    rounds: tuple[Broadcast, ...]
    output: Callable[[tuple, int], int]
    seed_space: int = 2**32
    success: Fraction = Fraction(2, 3)
    name: str = ""

    def run(self, xs: Sequence, seed: int) -> tuple[int, tuple]:
        sent = [0] * self.k
        transcript: tuple = ()
        for rnd in self.rounds:
            for party in range(self.k):
                msg = rnd(party, xs[party], seed, transcript)
                sent[party] += len(msg)
                if sent[party] > self.bits_per_party:
                    raise BudgetViolation(f"party {party} broadcast more than {self.bits_per_party} bits")
                transcript += ((party, msg),)
        y = self.output(transcript, seed)
        if y not in (1, -1):
            raise ValueError("protocol output must be +-1")
        return y, transcript


def repetitions(success, tau) -> int:
    """Odd number of runs whose majority errs with probability <= tau/8."""
    gap = float(as_fraction(success)) - 0.5
    if gap <= 0:
        raise ValueError("success probability must exceed 1/2")
    r = math.ceil(math.log(8 / float(tau)) / (2 * gap * gap))
    return r if r % 2 else r + 1


def amplified_extraction(spec: ProtocolSpec, seeds: Sequence[int]) -> BitExtractionAlgorithm:
    """Majority over runs with the given shared seeds, as a bit-extraction program."""

    def program():
        votes = 0
        for seed in seeds:
            transcript: tuple = ()
            for rnd in spec.rounds:
                length = _message_length(rnd)
                for party in range(spec.k):
                    msg = ""
                    for pos in range(length):
                        bit = yield Extract(party, _message_bit(rnd, party, seed, transcript, pos))
                        msg += str(bit)
                    transcript += ((party, msg),)
            votes += spec.output(transcript, seed)
        return 1 if votes > 0 else -1

    return BitExtractionAlgorithm(spec.k, spec.bits_per_party * len(seeds), program, spec.name)


def _message_bit(rnd, party, seed, transcript, pos):
    return lambda x, prior: int(rnd(party, x, seed, transcript)[pos])


def _message_length(rnd) -> int:
    # input-independent lengths keep the per-sample bit count well defined
    length = getattr(rnd, "length", None)
    if length is None:
        raise ValueError("broadcast functions need a fixed 'length' attribute")
    return length


def protocol_tolerance(spec: ProtocolSpec, tau, beta=None) -> Fraction:
    """Oracle tolerance the simulation needs: beta/(2^(B+1) k) with B bits per party."""
    tau = as_fraction(tau)
    beta = tau / 8 if beta is None else as_fraction(beta)
    r = repetitions(spec.success, tau)
    return extraction_tolerance(beta, spec.bits_per_party * r, spec.k)


@dataclass(frozen=True)
class ProtocolEstimate:
    value: float
    outputs: int
    repetitions: int
    queries: int

    def to_json(self) -> dict:
        return {"value": self.value, "outputs": self.outputs,
                "repetitions": self.repetitions, "queries": self.queries}


def protocol_to_sq_estimate(spec: ProtocolSpec, session: OracleSession, tau, delta: float,
                            rng: np.random.Generator, beta=None) -> ProtocolEstimate:
    """Estimate D^k[q] for the q that ``spec`` computes, using unary SQs only.

    Shared randomness is fixed per run by seeded sampling; the majority-of-R
    protocol is simulated bit by bit and ceil(8 ln(2/delta)/tau^2) simulated
    outputs are averaged.
    """
    tau = as_fraction(tau)
    beta = tau / 8 if beta is None else as_fraction(beta)
    if session.tau != protocol_tolerance(spec, tau, beta):
        raise ValueError("oracle tolerance does not match the protocol simulation")
    r = repetitions(spec.success, tau)
    m = collision_sample_count(tau, delta)
    start = session.query_count
    total = 0
    for _ in range(m):
        seeds = [int(s) for s in rng.integers(0, spec.seed_space, size=r)]
        y, _ = simulate_extraction_sq(amplified_extraction(spec, seeds), session, beta, rng)
        total += y
    return ProtocolEstimate(total / m, m, r, session.query_count - start)


def fixed_length(length: int):
    """Decorator recording a broadcast function's message length."""

    def wrap(fn):
        fn.length = length
        return fn

    return wrap


def equality_protocol(domain_bits: int = 2, hash_bits: int = 2) -> ProtocolSpec:
    """Two parties compare random inner-product hashes of their inputs."""

    @fixed_length(hash_bits)
    def send(party, x, seed, transcript):
        out = ""
        for h in range(hash_bits):
            mask = (seed >> (h * domain_bits)) & ((1 << domain_bits) - 1)
            out += str(bin(mask & x).count("1") % 2)
        return out

    def output(transcript, seed):
        return 1 if transcript[0][1] == transcript[1][1] else -1

    success = 1 - Fraction(1, 2**hash_bits)
    return ProtocolSpec(2, hash_bits, (send,), output, 2 ** (domain_bits * hash_bits), success, "equality")


def deterministic_protocol(fn: Callable[[Any], int]) -> ProtocolSpec:
    """One party sends the bit [fn(x) = 1]; the output is that sign."""

    @fixed_length(1)
    def send(party, x, seed, transcript):
        return "1" if fn(x) == 1 else "0"

    return ProtocolSpec(1, 1, (send,), lambda tr, seed: 1 if tr[0][1] == "1" else -1,
                        1, Fraction(1), "deterministic")


def constant_protocol(k: int, value: int) -> ProtocolSpec:
    return ProtocolSpec(k, 0, (), lambda tr, seed: value, 1, Fraction(1), f"const{value}")
