import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from perforated.constructions import equator_poles, stek_boundary_holes
from perforated.domain import HoleSpec, PerforatedDomain, full_sphere, sphere_point, unit_disk
from perforated.groups import make_group
from perforated.meshing import OUTER_CODE, Mesh, icosphere, mesh_domain, refine
from perforated.spectral import (DIRICHLET, NEUMANN, STEKLOV, AssemblyError, BoundaryCondition, annulus_robin,
                                 assemble, capacity_condense, certified, condensed_dirichlet, eigenspace_angle,
                                 mu_bar, richardson, sigma_bar, solve_laplace, solve_steklov, vertex_permutation)

NORTH = np.array([0.0, 0.0, 1.0])


@pytest.fixture(scope="module")
def cap_mesh():
    dom = PerforatedDomain("sphere", (HoleSpec(NORTH, 0.3),))
    return dom, mesh_domain(dom, 0.2)


def test_operator_identities(cap_mesh):
    _, mesh = cap_mesh
    ops = assemble(mesh)
    one = np.ones(mesh.n_vertices)
    assert abs(one @ (ops.K @ one)) < 1e-10
    assert one @ (ops.M @ one) == pytest.approx(mesh.area(), rel=1e-12)
    for tag, B in ops.B.items():
        assert one @ (B @ one) == pytest.approx(mesh.boundary_length(tag), rel=1e-12)
    assert abs(ops.K - ops.K.T).max() < 1e-12
    assert np.linalg.eigvalsh(ops.M.toarray()).min() > 0


def test_degenerate_triangle_is_named():
    v = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [0.0, 1.0]])
    t = np.array([[0, 1, 3], [0, 1, 2]])
    mesh = Mesh("disk", v, t, np.full(4, -1), np.zeros((0, 2), int), np.zeros(0, int), 1.0,
                np.zeros((0, 2)), np.zeros(0))
    with pytest.raises(AssemblyError, match="triangle 1"):
        assemble(mesh)


def test_full_sphere_spectrum():
    mesh = icosphere(0.15)
    res = certified(mesh, lambda m: solve_laplace(m, BoundaryCondition.build(m), 10))
    assert res.nullspace_dim == 1
    np.testing.assert_allclose(res.best[:10], [0, 2, 2, 2, 6, 6, 6, 6, 6, 12][:10], atol=2e-3)


def test_sphere_error_ratio_per_refinement():
    errs = []
    mesh = icosphere(0.4)
    for _ in range(3):
        res = solve_laplace(mesh, BoundaryCondition.build(mesh), 2)
        errs.append(res.nth(1) - 2.0)
        mesh = refine(mesh)
    ratio = errs[-2] / errs[-1]
    assert 3.0 <= ratio <= 5.0


def test_hemisphere_dirichlet_is_two():
    dom = PerforatedDomain("sphere", (HoleSpec(NORTH, math.pi / 2),))
    res = certified(mesh_domain(dom, 0.15), lambda m: solve_laplace(m, BoundaryCondition.build(m, DIRICHLET), 2))
    assert res.nullspace_dim == 0
    assert res.nth(1) == pytest.approx(2.0, abs=1e-3)


def test_disk_steklov():
    mesh = mesh_domain(unit_disk(), 0.08)
    res = certified(mesh, lambda m: solve_steklov(m, BoundaryCondition.build(m, outer=STEKLOV), 5))
    np.testing.assert_allclose(res.best, [0, 1, 1, 2, 2], atol=2e-3)
    assert np.all(res.residuals <= 1e-8)


def test_half_disk_first_value():
    half = PerforatedDomain("disk", (), make_group("Z2", base="disk"))
    mesh = mesh_domain(half, 0.08, chamber_only=True)
    res = certified(mesh, lambda m: solve_steklov(m, BoundaryCondition.build(m, outer=STEKLOV, mirrors=DIRICHLET), 2))
    assert res.nth(1) == pytest.approx(1.0, abs=2e-3)
    assert res.nth(2) == pytest.approx(2.0, abs=5e-3)


def test_steklov_rejects_holes_as_steklov():
    mesh = mesh_domain(stek_boundary_holes(3), 0.2)
    with pytest.raises(ValueError):
        BoundaryCondition.build(mesh, holes=STEKLOV, outer=STEKLOV)


def test_mu_bar_of_full_sphere():
    dom = full_sphere()
    res, dres, _ = mu_bar(dom, icosphere(0.2), extrapolate=True)
    assert dres is None
    assert math.isinf(res.lam_d)
    assert res.mu_bar == pytest.approx(8 * math.pi, rel=1e-3)


def test_sigma_bar_of_disk():
    res, dres, _ = sigma_bar(unit_disk(), mesh_domain(unit_disk(), 0.1), extrapolate=True)
    assert dres is None
    assert res.sigma_bar == pytest.approx(2 * math.pi, rel=1e-3)


def test_single_shrinking_hole_limits():
    """The Neumann side tends to 8 pi while the Dirichlet value of a lone shrinking hole tends to 0."""
    neumann, dirichlet = [], []
    for r in (1e-1, 1e-2, 1e-3):
        dom = PerforatedDomain("sphere", (HoleSpec(NORTH, r),))
        res, _, _ = mu_bar(dom, mesh_domain(dom, 0.25), extrapolate=True)
        neumann.append(8 * math.pi - res.lam_n * res.area)
        dirichlet.append(res.lam_d)
        assert res.mu_bar == pytest.approx(res.area * min(res.lam_d, res.lam_n))
    assert neumann[0] > max(neumann[1], neumann[2])
    assert abs(neumann[2]) < 0.01
    assert dirichlet[0] > dirichlet[1] > dirichlet[2]


def test_richardson_exact_on_quadratic_error():
    exact = np.array([1.0, 2.0])
    coarse = exact + 0.4
    fine = exact + 0.1
    np.testing.assert_allclose(richardson(coarse, fine), exact)


def test_group_invariant_eigenspaces():
    dom = equator_poles(6, 0.6)
    mesh = mesh_domain(dom, 0.25)
    ops = assemble(mesh)
    for bc in (BoundaryCondition.build(mesh, NEUMANN), BoundaryCondition.build(mesh, DIRICHLET)):
        res = solve_laplace(mesh, bc, 8, ops=ops)
        for g in dom.group.elements:
            perm = vertex_permutation(mesh, g)
            assert eigenspace_angle(res, ops, perm) < 1e-6


def test_steklov_eigenspaces_invariant():
    dom = stek_boundary_holes(4, 0.5)
    mesh = mesh_domain(dom, 0.1)
    ops = assemble(mesh)
    res = solve_steklov(mesh, BoundaryCondition.build(mesh, holes=DIRICHLET, outer=STEKLOV), 6, ops=ops)
    for g in dom.group.elements:
        assert eigenspace_angle(res, ops, vertex_permutation(mesh, g)) < 1e-6


def test_annulus_robin_limits():
    # the Robin coefficient of the plane profile log(rho/r)
    assert annulus_robin("disk", 1e-4, 1e-2) == pytest.approx(1 / (1e-2 * math.log(100)))
    # sphere and plane agree for tiny radii
    assert annulus_robin("sphere", 1e-6, 1e-3) == pytest.approx(annulus_robin("disk", 1e-6, 1e-3), rel=1e-6)
    with pytest.raises(ValueError):
        annulus_robin("sphere", 0.2, 0.1)


def test_condensed_matches_direct_solve():
    """Widening a tiny hole with annulus Robin data reproduces the directly meshed value."""
    r = 1e-6
    dom = PerforatedDomain("sphere", (HoleSpec(NORTH, r), HoleSpec(-NORTH, r)))
    direct = certified(mesh_domain(dom, 0.25),
                       lambda m: solve_laplace(m, BoundaryCondition.build(m, DIRICHLET), 2)).nth(1)
    cd = capacity_condense(dom, 1e-3)
    assert set(cd.robin) == {0, 1}
    widened = condensed_dirichlet(cd, mesh_domain(cd.domain, 0.25)).nth(1)
    assert widened == pytest.approx(direct, rel=2e-3)


def _random_holes(data_seed, count, separation):
    rng = np.random.default_rng(data_seed)
    pts = []
    while len(pts) < count:
        x = sphere_point(rng.normal(size=3))
        if all(np.arccos(np.clip(x @ p, -1, 1)) > separation for p in pts):
            pts.append(x)
    return pts


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), count=st.integers(1, 3), r=st.floats(0.05, 0.2), grow=st.floats(1.2, 2.0))
def test_dirichlet_monotonicity(seed, count, r, grow):
    """Enlarging the holes shrinks the domain and can only raise the first Dirichlet value."""
    # doubled disks of the enlarged holes must stay disjoint
    centers = _random_holes(seed, count, 4 * r * grow * 1.05)
    small = PerforatedDomain("sphere", tuple(HoleSpec(c, r) for c in centers))
    big = PerforatedDomain("sphere", tuple(HoleSpec(c, r * grow) for c in centers))

    def first(dom):
        res = certified(mesh_domain(dom, 0.35),
                        lambda m: solve_laplace(m, BoundaryCondition.build(m, DIRICHLET), 1))
        return res.nth(1), res.margin(1)

    lam_big, m_big = first(big)
    lam_small, m_small = first(small)
    assert lam_big + m_big >= lam_small - m_small
