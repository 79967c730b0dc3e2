import itertools
import math
from fractions import Fraction as F

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kwsq.dist import FiniteDistribution, LabeledDistribution, condition_positive
from kwsq.fp_linalg import affine_slice, hyperplane_indicator, hyperplane_points, lift_points, rank, span
from kwsq.learner import (
    AffineIndicator,
    AllNegative,
    LearnerParams,
    OracleViolation,
    Refutation,
    Witness,
    best_subspace,
    hypothesis_error,
    learn,
    query_budget,
    rank_distribution,
    recover_subspace,
    schedule,
    schedule_violations,
    select_constant,
    structure_witness,
    tightness_distribution,
    tightness_span_law,
)
from kwsq.oracles import Exact, Extremal, OracleSession, Perturb

EPS = F(1, 8)
POLICIES = [Exact(), Extremal("+"), Extremal("-"), Perturb(17)]


def labeled(marginal, a, p):
    return LabeledDistribution.from_function(marginal, lambda z: hyperplane_indicator(a, z, p))


def run(marginal, a, p, k, policy=Exact()):
    params = LearnerParams(k, p, EPS)
    s = OracleSession(labeled(marginal, a, p), k + 1, schedule(k, EPS, params.c).tau, policy)
    return learn(s, params), s


def test_schedule_k1():
    s = schedule(1, EPS, 1)
    assert s.tau == F(1, 2**96)
    assert s.thresholds == (F(1, 2**22), F(1, 2**47))
    # independent route: tau_1 = 2^(2c) tau^(1/4), tau_2 = 2^c tau^(1/2)
    assert s.threshold(1) ** 4 == 2**8 * s.tau and s.threshold(2) ** 2 == 4 * s.tau


def test_schedule_k2_exponents():
    s = schedule(2, EPS, 1)
    assert s.tau == F(1, 2**1701)
    assert s.thresholds == (F(1, 2**59), F(1, 2**186), F(1, 2**565))


@pytest.mark.parametrize("k", [1, 2, 3])
def test_thresholds_non_increasing(k):
    t = schedule(k, EPS, 2).thresholds
    assert all(a >= b for a, b in zip(t, t[1:]))


@pytest.mark.parametrize("k,eps", [(1, F(1, 8)), (2, F(1, 8)), (1, F(1, 2)), (2, F(3, 4)), (3, F(1, 4))])
def test_select_constant_minimal(k, eps):
    c = select_constant(k, eps)
    assert schedule_violations(k, eps, c) == []
    if c > 1:
        assert schedule_violations(k, eps, c - 1)


def test_select_constant_known():
    assert select_constant(1, EPS) == 1
    assert select_constant(2, EPS) == 1


def test_query_budget():
    # 2 + (k+1) + (k+2)(k+1) ceil(log2 p)
    assert query_budget(1, 3) == 2 + 2 + 3 * 2 * 2
    assert query_budget(2, 2) == 2 + 3 + 4 * 3 * 1


def test_learn_uniform_p3():
    p, k, a = 3, 1, (1, 0)
    marg = FiniteDistribution.uniform(list(itertools.product(range(p), repeat=2)))
    res, s = run(marg, a, p, k)
    assert isinstance(res.hypothesis, AffineIndicator)
    assert sorted(res.hypothesis.positives()) == sorted(hyperplane_points(a, p))
    assert hypothesis_error(res.hypothesis, marg, a, p) == 0
    assert s.query_count <= query_budget(k, p)


def test_learn_point_mass():
    p, k, a = 3, 1, (2, 1)
    z = (1, 0)
    assert hyperplane_indicator(a, z, p) == 1
    res, _ = run(FiniteDistribution.point_mass(z), a, p, k)
    assert res.branch == 1
    assert res.hypothesis.positives() == [z]
    assert res.to_json()["branch_taken_i"] == 1


def test_learn_all_negative():
    p, k, a = 3, 1, (1, 0)
    neg = [z for z in itertools.product(range(p), repeat=2) if hyperplane_indicator(a, z, p) == -1]
    res, s = run(FiniteDistribution.uniform(neg), a, p, k)
    assert isinstance(res.hypothesis, AllNegative) and res.branch is None
    assert s.query_count == 1


def test_learn_checks_session():
    params = LearnerParams(1, 3, EPS)
    marg = FiniteDistribution.uniform(list(itertools.product(range(3), repeat=2)))
    with pytest.raises(ValueError):
        learn(OracleSession(labeled(marg, (1, 0), 3), 1, schedule(1, EPS, 1).tau), params)
    with pytest.raises(ValueError):
        learn(OracleSession(labeled(marg, (1, 0), 3), 2, F(1, 100)), params)
    with pytest.raises(ValueError):
        LearnerParams(1, 4, EPS)


class _Liar(OracleSession):
    """Answers every rank query with 0; not tau-respecting."""

    def stat_query(self, q):
        ans = super().stat_query(q)
        return F(0) if q.name.startswith("rank") else ans


def test_fall_through_is_violation():
    p, k = 3, 1
    marg = FiniteDistribution.uniform(list(itertools.product(range(p), repeat=2)))
    s = _Liar(labeled(marg, (1, 0), p), 2, schedule(1, EPS, 1).tau)
    with pytest.raises(OracleViolation):
        learn(s, LearnerParams(k, p, EPS))


def test_recover_subspace_all_policies():
    p, k, a = 3, 1, (1, 0)
    marg = FiniteDistribution.uniform(list(itertools.product(range(p), repeat=2)))
    sched = schedule(k, EPS, 1)
    for pol in [Exact(), Extremal("+"), Extremal("-")]:
        s = OracleSession(labeled(marg, a, p), 2, sched.tau, pol)
        res = learn(s, LearnerParams(k, p, EPS))
        assert res.branch == 2
        assert sorted(res.hypothesis.positives()) == sorted(hyperplane_points(a, p))
        v, v2 = res.responses["v"], res.responses["v_2"]
        again = recover_subspace(s, 2, v, v2, sched, p)
        assert sorted(again.points()) == sorted(hyperplane_points(a, p))
        with pytest.raises(ValueError):
            recover_subspace(s, 2, F(1, 10**6), v2, sched, p)
        with pytest.raises(ValueError):
            recover_subspace(s, 1, v, F(0), sched, p)


def test_hypothesis_error_examples():
    p = 3
    marg = FiniteDistribution.uniform(list(itertools.product(range(p), repeat=2)))
    a = (1, 2)
    true = AffineIndicator(affine_slice(lift_points(hyperplane_points(a, p), p, 2)))
    assert hypothesis_error(true, marg, a, p) == 0
    assert hypothesis_error(AllNegative(), marg, a, p) == F(1, p)
    complement = [z for z in marg.support if hyperplane_indicator(a, z, p) == -1]

    class Flip:
        def __call__(self, z):
            return 1 if z in complement else -1

    assert hypothesis_error(Flip(), marg, a, p) == 1


# --- structure ---------------------------------------------------------------------

def test_structure_point_mass():
    q = FiniteDistribution.point_mass((1, 2, 1))
    w = structure_witness(q, 1, F(1, 100), 1, 3)
    assert isinstance(w, Witness) and w.miss == 0 and w.qualifies
    assert w.subspace == span([(1, 2, 1)], 3, 3)


def test_structure_hyperplane_lift():
    p, k, a = 3, 1, (1, 2)
    ld = labeled(FiniteDistribution.uniform(list(itertools.product(range(p), repeat=2))), a, p)
    q = condition_positive(ld)
    w = structure_witness(q, k + 1, F(1, 10), k, p)
    assert isinstance(w, Witness) and w.miss == 0
    assert w.subspace == lift_points(hyperplane_points(a, p), p, 2)


def test_structure_refutation():
    q = FiniteDistribution.uniform([(1, 0, 0), (0, 1, 0), (0, 0, 1)])
    r = structure_witness(q, 1, F(1, 10), 1, 2)
    assert isinstance(r, Refutation)
    assert r.prob_rank_at_most_i == F(1, 3)


def test_tightness_witness():
    k, alpha = 10, F(1, 5)
    q = tightness_distribution(k, alpha)
    w, miss = best_subspace(q, 2, 5)
    assert w.dim <= 2 * alpha * k + 1
    # e_1 plus four of the nine light vectors: the other five stay outside
    assert miss == alpha * 5 / 9


def test_tightness_span_law_small_k():
    for k, alpha in [(3, F(1, 3)), (4, F(1, 5))]:
        q = tightness_distribution(k, alpha)
        brute = rank_distribution(q, 2, k)
        assert tightness_span_law(k, alpha) == brute


def test_tightness_span_law_k10():
    law = tightness_span_law(10, F(1, 5))
    assert sum(law.values()) == 1
    at_most_4 = float(sum(pr for d, pr in law.items() if d <= 4))
    assert at_most_4 == pytest.approx(0.93326, abs=1e-5)
    rng = np.random.default_rng(0)
    q = tightness_distribution(10, F(1, 5))
    probs = np.array([float(x) for x in q.probs])
    draws = rng.choice(10, size=(20000, 10), p=probs)
    dims = np.array([len(set(row)) for row in draws])
    assert abs((dims <= 4).mean() - at_most_4) <= 4 * math.sqrt(at_most_4 * (1 - at_most_4) / 20000)


def test_rank_distribution_matches_brute_force():
    q = FiniteDistribution({(1, 0, 1): F(1, 2), (0, 1, 1): F(1, 4), (1, 1, 1): F(1, 4)})
    law = rank_distribution(q, 2, 2)
    brute = {}
    for x, y in itertools.product(q.support, repeat=2):
        r = rank([x, y], 2)
        brute[r] = brute.get(r, 0) + q.prob(x) * q.prob(y)
    assert law == brute


# --- properties --------------------------------------------------------------------

@st.composite
def instance(draw):
    p, k = draw(st.sampled_from([(2, 1), (3, 1), (2, 2)]))
    space = list(itertools.product(range(p), repeat=k + 1))
    a = tuple(draw(st.integers(0, p - 1)) for _ in range(k + 1))
    pts = draw(st.lists(st.sampled_from(space), min_size=1, max_size=4, unique=True))
    ws = draw(st.lists(st.integers(1, 9), min_size=len(pts), max_size=len(pts)))
    return p, k, a, FiniteDistribution({z: F(w, sum(ws)) for z, w in zip(pts, ws)})


@settings(max_examples=60, deadline=None)
@given(instance(), st.sampled_from(POLICIES))
def test_pac_guarantee_and_one_sidedness(inst, policy):
    p, k, a, marg = inst
    res, s = run(marg, a, p, k, policy)
    assert hypothesis_error(res.hypothesis, marg, a, p) <= EPS
    assert all(hyperplane_indicator(a, z, p) == 1 for z in res.hypothesis.positives())
    assert s.query_count <= query_budget(k, p)
    if res.branch is not None and res.branch <= k:
        # Pr[rk(Z) <= i* | all rows positive] >= 1 - 4 k tau_{i*+1}
        q = condition_positive(labeled(marg, a, p))
        law = rank_distribution(q, p, k + 1)
        sched = schedule(k, EPS, select_constant(k, EPS))
        assert sum(pr for r, pr in law.items() if r <= res.branch) >= 1 - 4 * k * sched.threshold(res.branch + 1)
