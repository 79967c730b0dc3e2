import json
import math
from fractions import Fraction as F

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kwsq.dist import FiniteDistribution, Query, RangeViolation, expectation_k
from kwsq.oracles import (
    BudgetExhausted,
    Empirical,
    Exact,
    Extremal,
    OracleError,
    OracleSession,
    Perturb,
)

PM1 = FiniteDistribution.uniform([-1, 1])
IDENT = Query(1, lambda x: x, "x")


def test_exact_and_extremal():
    assert OracleSession(PM1, 1, F(1, 10)).stat_query(IDENT) == 0
    assert OracleSession(PM1, 1, F(1, 10), Extremal("+")).stat_query(IDENT) == F(1, 10)
    assert OracleSession(PM1, 1, F(1, 10), Extremal("-")).stat_query(IDENT) == F(-1, 10)
    alt = OracleSession(PM1, 1, F(1, 10), Extremal("alternate"))
    assert [alt.stat_query(IDENT) for _ in range(3)] == [F(1, 10), F(-1, 10), F(1, 10)]


def test_perturb_replays():
    a = [OracleSession(PM1, 1, F(1, 7), Perturb(4)).stat_query(IDENT) for _ in range(2)]
    assert a[0] == a[1]
    assert abs(a[0]) <= F(1, 7)


def test_errors():
    s = OracleSession(PM1, 1, F(1, 10))
    with pytest.raises(ValueError):
        s.stat_query(Query(2, lambda x, y: 0))
    with pytest.raises(RangeViolation):
        s.stat_query(Query(1, lambda x: 2 * x))
    with pytest.raises(ValueError):
        OracleSession(PM1, 1, 0)
    with pytest.raises(ValueError):
        OracleSession(PM1, 1, None)
    emp = OracleSession(PM1, 1, F(1, 10), Empirical(100, seed=1, budget=150))
    emp.stat_query(IDENT)
    with pytest.raises(BudgetExhausted):
        emp.stat_query(IDENT)


def test_bbit_sample():
    s = OracleSession(FiniteDistribution.uniform(range(4)), 1, bits=2)
    rng = np.random.default_rng(0)
    assert s.bbit_sample(lambda x: "10", rng) == "10"
    b1 = OracleSession(FiniteDistribution.point_mass(1), 1, bits=1)
    assert all(b1.bbit_sample(lambda x: str(x), rng) == "1" for _ in range(5))
    low = [int(s.bbit_sample(lambda x: str(x & 1), rng)) for _ in range(10**4)]
    assert abs(np.mean(low) - 0.5) <= 0.02
    with pytest.raises(OracleError):
        s.bbit_sample(lambda x: "101", rng)
    with pytest.raises(OracleError):
        OracleSession(PM1, 1, F(1, 10)).bbit_sample(lambda x: "1", rng)
    with pytest.raises(OracleError):
        s.stat_query(IDENT)


def test_audit_and_transcript():
    s = OracleSession(PM1, 1, F(1, 10), Perturb(2))
    assert s.audit().query_count == 0
    for _ in range(5):
        s.stat_query(IDENT)
    rep = s.audit()
    assert rep.query_count == 5 == len(s.transcript)
    t = OracleSession(PM1, 1, F(1, 10), Perturb(2))
    for _ in range(5):
        t.stat_query(IDENT)
    assert t.audit().transcript_digest == rep.transcript_digest
    lines = [json.loads(x) for x in s.export_transcript().splitlines()]
    assert [x["index"] for x in lines] == list(range(5))
    assert set(lines[0]) == {"index", "query_digest", "answer_as_rational", "policy"}
    assert F(lines[0]["answer_as_rational"]) == s.transcript[0].answer


def test_empirical_hoeffding():
    # answer within tau with probability >= 1 - 2 exp(-m tau^2 / 2)
    m, tau = 10**4, 0.05
    d = FiniteDistribution({-1: F(3, 10), 1: F(7, 10)})
    bound = 1 - 2 * math.exp(-m * tau**2 / 2)
    hits = 0
    runs = 200
    for seed in range(runs):
        s = OracleSession(d, 1, F(1, 20), Empirical(m, seed))
        hits += abs(s.stat_query(IDENT) - F(2, 5)) <= F(1, 20)
    assert hits / runs >= bound - 3 * math.sqrt(bound * (1 - bound) / runs) - 1e-9


POLICIES = [Exact(), Extremal("+"), Extremal("-"), Extremal("alternate"), Perturb(9)]


@settings(max_examples=400, deadline=None)
@given(st.sampled_from(POLICIES),
       st.lists(st.integers(1, 6), min_size=2, max_size=4),
       st.integers(1, 2),
       st.lists(st.fractions(-1, 1, max_denominator=12), min_size=16, max_size=16),
       st.fractions(F(1, 1000), F(1, 2)))
def test_tolerance_soundness(policy, ws, k, table, tau):
    d = FiniteDistribution({i: F(w, sum(ws)) for i, w in enumerate(ws)})
    n = len(ws)
    q = Query(k, lambda *x: table[sum(v * n**j for j, v in enumerate(x)) % 16])
    s = OracleSession(d, k, tau, policy)
    for _ in range(3):
        assert abs(s.stat_query(q) - expectation_k(d, q)) <= tau
