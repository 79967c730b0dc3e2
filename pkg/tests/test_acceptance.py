"""Acceptance criteria, one test and one PASS/FAIL line each.

Run with ``pytest tests/test_acceptance.py -v``; the verdict lines are
repeated in the terminal summary. Heavy criteria (7 and 9) take minutes.
"""

import itertools
import math
from fractions import Fraction as F

import numpy as np

from kwsq.dist import FiniteDistribution, Query, expectation_k
from kwsq.experiments import run_experiment
from kwsq.fp_linalg import enumerate_subspaces
from kwsq.learner import Witness, rank_distribution, structure_witness, tightness_distribution, tightness_span_law
from kwsq.reduction import hybrid_gaps, witness_probability

SEED = 20240611
CONFIGS = {
    "learn": {"experiment": "learn", "seed": SEED},
    "dimension": {"experiment": "dimension", "seed": SEED},
    "decide_bernoulli": {"experiment": "reduce", "seed": SEED, "mode": "decide", "fixture": "bernoulli",
                         "tau": "1/4", "trials": 200, "delta": 0.05,
                         "policies": ["exact", "extremal+", "extremal-", "extremal_alt", "perturb"]},
    "decide_hyperplane": {"experiment": "reduce", "seed": SEED, "mode": "decide", "fixture": "hyperplane",
                          "tau": "1/8", "trials": 200, "delta": 0.05,
                          "policies": ["exact", "extremal+", "extremal-", "extremal_alt", "perturb"]},
    "mw_bernoulli": {"experiment": "reduce", "seed": SEED, "mode": "mw", "fixture": "bernoulli",
                     "tau": "1/20", "trials": 100, "delta": 0.05},
    "mw_hyperplane": {"experiment": "reduce", "seed": SEED, "mode": "mw", "fixture": "hyperplane",
                      "tau": "1/20", "trials": 100, "delta": 0.05},
    "cspdnf": {"experiment": "cspdnf", "seed": SEED},
    "collision": {"experiment": "collision", "seed": SEED, "trials": 100, "tau": "1/20", "delta": 0.1},
    "simulate": {"experiment": "simulate", "seed": SEED, "beta": "1/20", "protocols": ["equality"]},
}
DIGESTS: dict[str, str] = {}


def report(name):
    rep = run_experiment(dict(CONFIGS[name]))
    DIGESTS.setdefault(name, rep.payload_digest())
    return rep


def test_criterion_01_learner(verdict):
    rep = report("learn")
    settings = {(r["p"], r["k"]) for r in rep.trials}
    kinds = {r["fixture"] for r in rep.trials}
    per = min(sum(1 for r in rep.trials if (r["p"], r["k"]) == s and r["policy"] == "exact") for s in settings)
    ok = (rep.passed and settings == {(3, 1), (5, 1), (2, 2)} and per >= 20
          and {"point", "line"} <= kinds
          and {r["policy"] for r in rep.trials} == {"exact", "extremal+", "extremal-", "perturb"})
    assert verdict("criterion 1 learner correctness", ok,
                   f"{rep.aggregate['runs']} runs, max error {rep.aggregate['max_exact_error']}, "
                   f"{rep.assertions}")


def test_criterion_02_closed_forms(verdict):
    rep = report("dimension")
    grid = {(r["p"], r["ell"], r["k"]) for r in rep.trials if "p" in r and "ell" in r}
    keys = ("closed_equals_enumerated", "moments_match", "pair_counts_match")
    ok = all(rep.assertions[k] for k in keys) and grid == set(itertools.product([2, 3, 5], [2, 3], [1, 2]))
    assert verdict("criterion 2 closed forms equal enumeration", ok,
                   f"{len(grid)} grid points, " + ", ".join(f"{k}={rep.assertions[k]}" for k in keys))


def test_criterion_03_rho_and_kappa(verdict):
    rep = run_experiment(dict(CONFIGS["dimension"]))
    keys = ("rho_match", "kappa1_bar_within_bound", "rho_scaled_at_most_4", "d_slope_half")
    agg = rep.aggregate
    ok = all(rep.assertions[k] for k in keys)
    scaled = ", ".join(f"p={s['p']}: {s['rho_times_p']:.4f}" for s in agg["series"])
    assert verdict("criterion 3 rho and kappa1", ok,
                   f"kappa1_bar={agg['kappa1_bar']['value']} <= {agg['kappa1_bar']['bound']:.4f}; "
                   f"rho*p {scaled}; slope {agg['d_loglog_slope']:.4f}")


def _structure_instance(rng, p, k):
    n = k + 1
    i = int(rng.integers(1, k + 1))
    subs = enumerate_subspaces(n, i, p)
    w = subs[int(rng.integers(len(subs)))]
    pts = set(w.points())
    inside = [x for x in sorted(pts) if any(x)]
    outside = [x for x in itertools.product(range(p), repeat=n) if x not in pts]
    pick_in = [inside[j] for j in rng.choice(len(inside), size=min(3, len(inside)), replace=False)]
    pick_out = [outside[j] for j in rng.choice(len(outside), size=min(2, len(outside)), replace=False)]
    eta = F(int(rng.integers(1, 20)), 1000)
    ws = [int(v) for v in rng.integers(1, 6, size=len(pick_in))]
    mass = {x: (1 - eta) * F(v, sum(ws)) for x, v in zip(pick_in, ws)}
    for x in pick_out:
        mass[x] = eta / len(pick_out)
    return FiniteDistribution(mass), i


def test_criterion_04_structure(verdict):
    rng = np.random.default_rng(SEED)
    found = 0
    for t in range(100):
        p, k = (2, 3)[t % 2], 1 + (t // 2) % 2
        q, i = _structure_instance(rng, p, k)
        xi = 1 - sum(pr for r, pr in rank_distribution(q, p, k + 1).items() if r <= i)
        res = structure_witness(q, i, xi, k, p)
        found += isinstance(res, Witness) and res.qualifies
    k, alpha = 10, F(1, 5)
    law = tightness_span_law(k, alpha)
    exact = float(sum(pr for d, pr in law.items() if d <= 2 * alpha * k))
    q = tightness_distribution(k, alpha)
    probs = np.array([float(x) for x in q.probs])
    trials = 10**4
    draws = np.random.default_rng(SEED).choice(k, size=(trials, k), p=probs)
    rate = float((np.array([len(set(row)) for row in draws]) <= 2 * alpha * k).mean())
    sigma = math.sqrt(rate * (1 - rate) / trials)
    target = 1 - math.exp(-k)
    tight_ok = rate + 3 * sigma >= target
    verdict("criterion 4a structure witness", found == 100, f"{found}/100 qualifying subspaces")
    verdict("criterion 4b tightness span", tight_ok,
            f"Pr[dim <= 4] = {rate:.5f} +- {3 * sigma:.5f} (exact {exact:.5f}) vs 1 - e^-10 = {target:.5f}")
    assert verdict("criterion 4 structure and tightness", found == 100 and tight_ok)


def _random_instance(rng, max_k):
    k = int(rng.integers(1, max_k + 1))
    n = int(rng.integers(2, 5))
    dw = [int(v) for v in rng.integers(0, 7, size=n)]
    dw[int(rng.integers(n))] += 1
    cw = [int(v) for v in rng.integers(1, 7, size=n)]
    d = FiniteDistribution({x: F(w, sum(dw)) for x, w in enumerate(dw)})
    d0 = FiniteDistribution({x: F(w, sum(cw)) for x, w in enumerate(cw)})
    choices = [F(-1), F(-1, 2), F(0), F(1, 3), F(1)]
    vals = [choices[int(j)] for j in rng.integers(0, len(choices), size=n**k)]
    q = Query(k, lambda *x: vals[sum(v * n**i for i, v in enumerate(x))])
    return k, d, d0, q


def test_criterion_05_hybrid_gaps(verdict):
    rng = np.random.default_rng(SEED)
    count = floor = 0
    checked_floor = 0
    while count < 1000:
        k, d, d0, q = _random_instance(rng, 3)
        total = abs(expectation_k(d, q) - expectation_k(d0, q))
        if not total:
            continue
        tau = total * F(int(rng.integers(1, 100)), 100)
        gaps = hybrid_gaps(d, d0, q)
        assert max(gaps) >= sum(gaps) / k > tau / k, (k, tau, gaps)
        count += 1
        if k <= 2 and checked_floor < 300:
            checked_floor += 1
            floor += witness_probability(d, d0, d, q, tau / (2 * k)) >= tau / (4 * k)
    ok = count == 1000 and floor == checked_floor
    assert verdict("criterion 5 hybrid gaps", ok,
                   f"gap identity on {count} instances; witness floor on {floor}/{checked_floor}")


def test_criterion_06_decision_reduction(verdict):
    lines = []
    ok = True
    for name in ("decide_bernoulli", "decide_hyperplane"):
        rep = report(name)
        ok &= rep.passed and sum(r["role"] == "soundness" for r in rep.trials) == 200
        lines.append(f"{name}: q'={rep.aggregate['q_prime']}, soundness {rep.aggregate['soundness_rate']:.3f}, "
                     f"{rep.assertions}")
    assert verdict("criterion 6 flat decision reduction", ok, "; ".join(lines))


def test_criterion_07_mw_estimator(verdict):
    lines = []
    ok = True
    for name in ("mw_bernoulli", "mw_hyperplane"):
        rep = report(name)
        agg = rep.aggregate
        ok &= rep.passed and len(rep.trials) == 100
        lines.append(f"{name}: success {agg['success_rate']:.2f}, max queries {agg['max_queries']} "
                     f"vs 10x budget {10 * agg['budget']:.0f}")
    assert verdict("criterion 7 MW estimator", ok, "; ".join(lines))


def test_criterion_08_csp_dnf(verdict):
    rep = report("cspdnf")
    preds = {r["predicate"] for r in rep.trials}
    ok = rep.passed and preds == {"XOR2", "AND2", "OR2", "parity3", "MAJ3"} and max(r["n"] for r in rep.trials) == 6
    checked = sum(r["tuples_checked"] for r in rep.trials)
    assert verdict("criterion 8 CSP to DNF reduction", ok, f"{checked} (sigma, tuple) checks, {rep.assertions}")


def test_criterion_09_collision(verdict):
    rep = report("collision")
    per = rep.aggregate["benchmarks"]
    ok = rep.passed and len(per) == 5
    rates = ", ".join(f"{k} {v['success_rate']:.2f}" for k, v in per.items())
    assert verdict("criterion 9 collision estimator", ok,
                   f"{rates}; queries <= {rep.aggregate['query_bound']}")


def test_criterion_10_extraction(verdict):
    rep = report("simulate")
    progs = [r for r in rep.trials if "tv" in r]
    ok = rep.passed and len(progs) == 3 and all(r["n"] <= 3 and r["b"] <= 2 for r in progs)
    detail = ", ".join(f"{r['program']} tv={r['tv']} queries {r['max_queries']}/{r['query_bound']}" for r in progs)
    detail += "".join(f"; {r['protocol']} protocol estimate {r['value']:.3f} (error {r['error']:.3f})"
                      for r in rep.trials if "protocol" in r)
    assert verdict("criterion 10 extraction simulation", ok, detail)


def test_criterion_11_determinism(verdict):
    same = []
    for name in CONFIGS:
        if name not in DIGESTS:
            report(name)
        again = run_experiment(dict(CONFIGS[name])).payload_digest()
        same.append(again == DIGESTS[name])
    assert verdict("criterion 11 determinism", all(same), f"{sum(same)}/{len(same)} payload digests reproduced")
