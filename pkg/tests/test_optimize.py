import math

import pytest

from perforated.analysis import TWO_PI, GapSample
from perforated.constructions import build_family
from perforated.domain import DomainError
from perforated.optimize import (OptimizeError, OptProblem, balance_radius, evaluate, maximize, scan_monotone,
                                 sweep)

FAMILY = "stek-boundary"
PARAMS = {"k": 4}
BRACKET = (1e-3, 0.3)
H = 0.15


@pytest.fixture(scope="module")
def balanced():
    return balance_radius(FAMILY, PARAMS, r_bracket=BRACKET, tol=1e-3, h=H)


def test_balance_reaches_tolerance(balanced):
    ev = balanced.evaluation
    assert abs(ev.lam_d - ev.lam_n) <= 1e-3
    assert BRACKET[0] <= balanced.r <= BRACKET[1]


def test_balance_sign_change_around_root(balanced):
    lo = evaluate(build_family(FAMILY, **PARAMS, radius=balanced.r * 0.9), H)
    hi = evaluate(build_family(FAMILY, **PARAMS, radius=balanced.r * 1.1), H)
    assert lo.lam_d < lo.lam_n
    assert hi.lam_d > hi.lam_n


def test_dirichlet_value_monotone_in_radius():
    evs = scan_monotone(FAMILY, PARAMS, [0.01, 0.03, 0.1, 0.2], H)
    d = [e.lam_d for e in evs]
    assert all(a < b for a, b in zip(d, d[1:]))


def test_invalid_bracket_reports_endpoints():
    with pytest.raises(OptimizeError, match="r_lo=.*D=.*N="):
        balance_radius(FAMILY, PARAMS, r_bracket=(0.15, 0.3), h=H)


def test_no_holes_rejected():
    with pytest.raises((DomainError, OptimizeError)):
        balance_radius(FAMILY, {"k": 0}, r_bracket=BRACKET, h=H)


def _problem(seed=0):
    lo, hi = math.log(BRACKET[0]), math.log(BRACKET[1])
    return OptProblem(FAMILY, dict(PARAMS), ["radius"], [(lo, hi)], h_schedule=(0.2, H), restarts=1,
                      seed=seed, max_evals=16)


@pytest.fixture(scope="module")
def trace():
    return maximize(_problem())


def test_maximize_agrees_with_balance(trace, balanced):
    tol = 1e-2
    assert trace.status == "converged"
    assert abs(trace.best["certified_objective"] - balanced.evaluation.objective) <= 2 * tol
    assert trace.best["certified_objective"] <= TWO_PI


def test_maximize_is_reproducible(trace):
    again = maximize(_problem())
    assert again.to_jsonl() == trace.to_jsonl()
    assert again.best == trace.best


def test_maximize_all_failures():
    problem = OptProblem(FAMILY, dict(PARAMS), ["radius"], [(math.log(0.9), math.log(0.95))],
                         h_schedule=(0.3,), restarts=0, max_evals=3)
    with pytest.raises(OptimizeError, match="failed"):
        maximize(problem)
    assert problem.to_json()["family"] == FAMILY


def test_opt_problem_json_round_trip():
    p = _problem(7)
    assert OptProblem.from_json(p.to_json()) == p


def test_sweep_collects_failures():
    res = sweep("stek-diameter", [{"m": 2}, {"m": 4}, {"m": 0}], h=0.2)
    assert [s.param for s in res.samples] == [2.0, 4.0]
    assert len(res.failures) == 1
    assert all(isinstance(s, GapSample) and s.gap > 0 for s in res.samples)
    assert res.samples[0].gap > res.samples[1].gap


def test_empty_sweep():
    res = sweep("stek-diameter", [])
    assert res.samples == [] and res.failures == []
