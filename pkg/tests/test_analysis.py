import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from perforated.analysis import (EIGHT_PI, HOLDS, HOLDS_FITTED, VIOLATED, AnalysisError, GapSample,
                                 bounded_constant, check_neumann_stability, check_steklov_stability,
                                 dirichlet_margin, empirical_eps0, fit_decay, gap_floor_check, half_disk_oracle,
                                 lawson_area, lawson_comparison, leqpol_grid_check, leqpol_oracle, leqpol_scale,
                                 logcutoff_energy, neumann_fourth_floor, radial_ode_oracle, reports_csv,
                                 stab_ineq_check, steklov_stab_check)
from perforated.constructions import equator_poles, stek_diameter
from perforated.domain import HoleSpec, PerforatedDomain, full_sphere, unit_disk
from perforated.meshing import icosphere, mesh_domain
from perforated.spectral import DIRICHLET, BoundaryCondition, certified, mu_bar, sigma_bar, solve_laplace

NORTH = np.array([0.0, 0.0, 1.0])


def samples(xs, gaps, source="formula"):
    return [GapSample(float(x), float(g), source=source) for x, g in zip(xs, gaps)]


# radial oracle


@pytest.mark.parametrize("r", [1e-3, 1e-5, 1e-8])
def test_leqpol_closed_form_matches_integrator(r):
    R = 0.02
    sol = leqpol_oracle(R, r)
    t, f, Q = radial_ode_oracle(R, r)
    assert np.max(np.abs(sol.f(t) - f)) < 1e-8
    assert sol.Q == pytest.approx(Q, rel=1e-8)
    assert sol.f(r) == pytest.approx(0.0, abs=1e-12)
    assert sol.f(sol.T) == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(R=st.floats(1e-3, 0.07), log_r=st.floats(-18, -3))
def test_leqpol_ode_residual(R, log_r):
    r = math.exp(log_r)
    if not r < R:
        return
    sol = leqpol_oracle(R, r)
    t = np.linspace(r * 2, sol.T, 50)
    # relative to the size of the individual terms, which grow like b / t^2 near the hole
    scale = abs(sol.a) + abs(sol.b) * (1 + 1 / np.sin(t) ** 2 + np.abs(np.log(np.tan(t / 2))))
    assert np.max(np.abs(sol.ode_residual(t)) / scale) < 1e-8


def test_leqpol_preconditions():
    with pytest.raises(AnalysisError):
        leqpol_oracle(0.1, 0.01)
    with pytest.raises(AnalysisError):
        leqpol_oracle(0.01, 0.02)


def test_leqpol_grid_reports():
    reps = []
    for r in (1e-4, 1e-6):
        reps += leqpol_grid_check(leqpol_scale(r), [r])
    assert len(reps) == 6
    assert all(r.ok for r in reps)
    # a fixed outer scale violates the b asymptotics once log(1/r) grows
    assert not all(r.ok for r in leqpol_grid_check(0.01, [1e-6]))


# half-disk


def test_half_disk_oracle_values():
    np.testing.assert_allclose(half_disk_oracle(3), [1.0, 2.0, 3.0], atol=1e-6)


# log cutoff


def test_flat_cutoff_energy():
    assert logcutoff_energy(math.exp(-10)).flat == pytest.approx(4 * math.pi / 10)
    assert logcutoff_energy(1e-300).flat < logcutoff_energy(1e-3).flat
    with pytest.raises(AnalysisError):
        logcutoff_energy(2.0)


@pytest.mark.parametrize("r", [1e-2, 1e-3])
def test_fem_cutoff_energy(r):
    dom = PerforatedDomain("sphere", (HoleSpec(NORTH, r),))
    e = logcutoff_energy(r, mesh=mesh_domain(dom, 0.2))
    assert e.fem == pytest.approx(e.flat, rel=0.05)


# stability reports


@pytest.fixture(scope="module")
def cap_run():
    dom = PerforatedDomain("sphere", (HoleSpec(NORTH, 0.1),))
    mesh = mesh_domain(dom, 0.2)
    res, dres, neu = mu_bar(dom, mesh, extrapolate=True, count=5)
    return dom, mesh, res, neu


def test_neumann_stability_reports(cap_run):
    dom, _, res, neu = cap_run
    rep = check_neumann_stability(dom, neu)
    assert rep.verdict == HOLDS_FITTED
    assert rep.constants["C_emp"] > 0
    again = check_neumann_stability(dom, neu, C=rep.constants["C_emp"] * 1.5)
    assert again.ok
    floor = neumann_fourth_floor(dom, neu)
    assert floor.lhs > 4


def test_neumann_stability_without_holes():
    mesh = icosphere(0.2)
    res = certified(mesh, lambda m: solve_laplace(m, BoundaryCondition.build(m), 3))
    rep = check_neumann_stability(full_sphere(), res)
    assert rep.constants["C_emp"] == 0.0
    assert rep.lhs == pytest.approx(EIGHT_PI, rel=1e-3)


def test_bounded_constant_and_eps0():
    assert bounded_constant("x", [8.0, 7.9, 7.5], 3.0).verdict == HOLDS_FITTED
    assert bounded_constant("x", [8.0, 1.0], 3.0).verdict == VIOLATED
    assert bounded_constant("x", [3.0, 5.0], 2.0, reference=3.0).verdict == HOLDS_FITTED

    class Rep:
        def __init__(self, verdict):
            self.verdict = verdict

    assert empirical_eps0([1e-3, 1e-2, 1e-1], [Rep(HOLDS), Rep(HOLDS), Rep(VIOLATED)]) == 1e-2


def test_stab_ineq_constant_row_is_the_gap(cap_run):
    dom, mesh, res, neu = cap_run
    reps = stab_ineq_check(dom, mesh, neu, res.mu_bar)
    const = next(r for r in reps if r.check == "stab-ineq:const")
    assert const.lhs == pytest.approx(abs(EIGHT_PI - neu.nth(1) * res.area), rel=1e-12)
    assert all(r.ok for r in reps)


def test_stab_ineq_no_holes():
    mesh = icosphere(0.15)
    res, _, neu = mu_bar(full_sphere(), mesh, extrapolate=True, count=4)
    reps = stab_ineq_check(full_sphere(), mesh, neu, res.mu_bar)
    rows = [r for r in reps if r.check.startswith("stab-ineq")]
    assert all(r.lhs < 2e-3 for r in rows)


def test_steklov_stability_reports():
    dom = stek_diameter(4)
    mesh = mesh_domain(dom, 0.1)
    res, _, neu = sigma_bar(dom, mesh, extrapolate=True, count=4)
    rep = check_steklov_stability(dom, neu)
    assert rep.verdict == HOLDS_FITTED
    reps = steklov_stab_check(dom, mesh, min(res.sig_d, res.sig_n), res.sigma_bar)
    assert all(r.ok for r in reps)
    assert any(r.check == "hole-est" for r in reps)


def test_steklov_no_holes_gap_zero():
    mesh = mesh_domain(unit_disk(), 0.1)
    res, _, neu = sigma_bar(unit_disk(), mesh, extrapolate=True, count=4)
    rep = check_steklov_stability(unit_disk(), neu)
    assert rep.lhs == pytest.approx(1.0, abs=1e-3)


def test_dirichlet_margin_hemisphere():
    dom = PerforatedDomain("sphere", (HoleSpec(NORTH, math.pi / 2),))
    res = certified(mesh_domain(dom, 0.15), lambda m: solve_laplace(m, BoundaryCondition.build(m, DIRICHLET), 2))
    rep = dirichlet_margin(dom, res)
    assert rep.details["excess"] == pytest.approx(0.0, abs=1e-3)
    assert rep.ok


# fits


def test_fit_exp_sqrt_exact():
    k = np.array([4, 9, 16, 25])
    fit = fit_decay(samples(k, np.exp(-0.5 * np.sqrt(k))), "exp-in-sqrt-x")
    assert fit.rate == pytest.approx(0.5, abs=1e-12)
    assert fit.r2 == pytest.approx(1.0, abs=1e-12)


def test_fit_power_exact():
    m = np.array([4, 8, 16, 32])
    fit = fit_decay(samples(m, 3 / m), "power")
    assert fit.rate == pytest.approx(-1.0, abs=1e-12)
    np.testing.assert_allclose(fit.predict(m), 3 / m)


def test_fit_rejects_bad_input():
    with pytest.raises(AnalysisError, match="sample 2"):
        fit_decay(samples([1, 2, 3, 4], [1.0, 0.5, 0.0, 0.1]), "exp-in-x")
    with pytest.raises(AnalysisError, match="valid"):
        fit_decay(samples([1, 2, 3, 4], [1, 1, 1, 1]), "cubic")
    with pytest.raises(AnalysisError):
        fit_decay(samples([1, 2], [1, 2]), "exp-in-x")


@settings(max_examples=40, deadline=None)
@given(c=st.floats(0.05, 2.0), a=st.floats(0.1, 10.0))
def test_fit_recovers_synthetic_rate(c, a):
    x = np.array([2.0, 4.0, 7.0, 11.0])
    fit = fit_decay(samples(x, a * np.exp(-c * x)), "exp-in-x")
    assert fit.rate == pytest.approx(c, rel=1e-9)
    assert fit.intercept == pytest.approx(math.log(a), abs=1e-9)


def test_lawson_area():
    assert lawson_area(10) == pytest.approx(24.2617, abs=1e-4)
    assert lawson_area(math.inf) == EIGHT_PI
    assert lawson_area(1e12) == pytest.approx(EIGHT_PI)
    with pytest.raises(AnalysisError):
        lawson_area(0)


def test_lawson_comparison_is_reported_not_asserted():
    dom = equator_poles(8, 0.5)
    rep = lawson_comparison(dom, 24.0)
    assert rep.details["genus"] == 9
    assert rep.details["difference"] == pytest.approx(24.0 - lawson_area(9))
    assert rep.verdict == HOLDS


def test_gap_floor_synthetic():
    n = np.arange(2, 10)
    good = samples(n, np.exp(-0.4 * n))
    assert gap_floor_check(good).verdict == HOLDS_FITTED
    assert gap_floor_check(good, c=0.5).verdict == HOLDS
    bad = good + [GapSample(9.0, math.exp(-0.9 * 9))]
    assert gap_floor_check(bad, c=0.5).verdict == VIOLATED


def test_gap_floor_optimizer_sample_is_tested_not_fitted():
    base = samples([4, 8, 16], [0.2, 0.05, 0.01])
    beat = GapSample(8.0, 1e-6, source="optimizer")
    rep = gap_floor_check(base + [beat])
    assert rep.verdict == VIOLATED
    honest = GapSample(8.0, 0.06, source="optimizer")
    assert gap_floor_check(base + [honest]).verdict == HOLDS_FITTED


def test_reports_csv_has_header():
    text = reports_csv(leqpol_grid_check(0.01, [1e-4]))
    assert text.splitlines()[0] == "id,lhs,rhs,margin,verdict,hash"
    assert len(text.splitlines()) == 4
