import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from perforated.domain import (BOUNDARY, ChamberError, DomainError, HoleSpec, OverlapError, PerforatedDomain,
                               TypeSignature, classify_scherk, expand_orbit, exact_measures, full_sphere,
                               holes_from_type, sphere_point, topology, type_of, unit_disk)
from perforated.groups import GroupError, make_group

ORDERS = [("trivial", None, 1), ("Z2", None, 2), ("Dk", 6, 12), ("Z2xDk", 4, 16),
          ("tetrahedral", None, 24), ("octahedral", None, 48), ("icosahedral", None, 120)]


@pytest.mark.parametrize("kind,k,order", ORDERS)
def test_group_orders_and_orthogonality(kind, k, order):
    g = make_group(kind, k)
    assert g.order == order
    for m in g.elements:
        np.testing.assert_allclose(m @ m.T, np.eye(3), atol=1e-12)


def test_disk_groups():
    assert make_group("Dn", 4, base="disk").order == 8
    assert make_group("Z2", base="disk").order == 2
    with pytest.raises(GroupError):
        make_group("icosahedral", base="disk")
    with pytest.raises(GroupError):
        make_group("nonsense")


def _generic_chamber_point(g):
    # a point strictly inside the chamber
    return g.chamber_center()


def test_free_orbit_d6_has_twelve_holes():
    g = make_group("Dk", 6)
    holes = expand_orbit(g, [HoleSpec(_generic_chamber_point(g), 0.01)])
    assert len(holes) == 12


def test_equatorial_seed_is_fixed_by_z2():
    g = make_group("Z2")
    holes = expand_orbit(g, [HoleSpec(np.array([1.0, 0.0, 0.0]), 0.1)])
    assert len(holes) == 1
    assert holes[0].stabilizer == 2


def test_corner_orbit_matches_enumeration():
    g = make_group("Z2xDk", 5)
    for pair, p in g.chamber_vertices():
        holes = expand_orbit(g, [HoleSpec(p, 0.01)])
        images = np.array([m @ p for m in g.elements])
        distinct = []
        for x in images:
            if all(np.linalg.norm(x - y) > 1e-9 for y in distinct):
                distinct.append(x)
        assert len(holes) == len(distinct)
        assert len(holes) * holes[0].stabilizer == g.order


def test_seed_outside_chamber_rejected():
    g = make_group("Dk", 4)
    outside = sphere_point(-g.chamber_center() + np.array([0.0, 0.0, 0.3]))
    with pytest.raises(ChamberError, match="chamber"):
        expand_orbit(g, [HoleSpec(outside, 0.01)])


def test_z2_three_edge_holes():
    g = make_group("Z2")
    dom = holes_from_type(g, TypeSignature.of(e={0: 3}, n_generators=1), [0.01] * 3)
    assert len(dom.holes) == 3
    assert np.allclose(dom.centers[:, 2], 0.0, atol=1e-12)
    assert topology(dom).boundary_components == 3


@pytest.mark.parametrize("k", [3, 4, 6])
def test_dk_hole_count_formula(k):
    g = make_group("Dk", k)
    e1, e2, v12 = 1, 2, 1
    sig = TypeSignature.of(0, {0: e1, 1: e2}, {(0, 1): v12}, n_generators=2)
    dom = holes_from_type(g, sig, [0.02] * sig.total())
    assert len(dom.holes) == k * (e1 + e2) + v12
    # a free hole has a regular orbit of 2k points
    sig = TypeSignature.of(1, {0: e1, 1: e2}, {(0, 1): v12}, n_generators=2)
    dom = holes_from_type(g, sig, [0.02] * sig.total(), placement_seed=3)
    assert len(dom.holes) == 2 * k + k * (e1 + e2) + v12


def test_trivial_group_free_holes():
    g = make_group("trivial")
    dom = holes_from_type(g, TypeSignature(f=5), [0.05] * 5, placement_seed=1)
    assert len(dom.holes) == 5


def test_wrong_radius_count_rejected():
    with pytest.raises(DomainError):
        holes_from_type(make_group("Z2"), TypeSignature.of(e={0: 2}, n_generators=1), [0.01])


def test_overlap_error_names_holes():
    a = HoleSpec(np.array([0.0, 0.0, 1.0]), 0.2)
    b = HoleSpec(sphere_point([0.1, 0.0, 1.0]), 0.2)
    with pytest.raises(OverlapError) as info:
        PerforatedDomain("sphere", (a, b))
    assert info.value.pair == (0, 1)


def test_doubled_disk_overlap_rejected():
    a = HoleSpec(np.array([1.0, 0.0]), 0.3, BOUNDARY)
    b = HoleSpec(np.array([0.75, 0.0]), 0.1)
    with pytest.raises(DomainError):
        PerforatedDomain("disk", (a, b))


SCHERK_TABLE = [
    ("Z2", None, TypeSignature.of(e={0: 5}, n_generators=1), "Scherk"),
    ("Z2", None, TypeSignature.of(1, {0: 3}, n_generators=1), "Generic"),
    ("Dk", 4, TypeSignature.of(e={0: 1}, n_generators=2), "Scherk"),
    ("Dk", 4, TypeSignature.of(e={1: 1}, n_generators=2), "Scherk"),
    ("Dk", 4, TypeSignature.of(1, n_generators=2), "Scherk"),
    ("Dk", 4, TypeSignature.of(1, {0: 1}, n_generators=2), "Generic"),
    ("Dk", 4, TypeSignature.of(v={(0, 1): 1}, n_generators=2), "Generic"),
    ("Z2", None, TypeSignature.of(e={0: 1}, n_generators=1), "Generic"),
    ("trivial", None, TypeSignature(f=3), "Generic"),
    ("Z2xDk", 4, TypeSignature.of(v={(0, 2): 1}, n_generators=3), "Scherk"),
    ("Z2xDk", 4, TypeSignature.of(1, n_generators=3), "Generic"),
]


@pytest.mark.parametrize("kind,k,sig,expected", SCHERK_TABLE)
def test_scherk_truth_table(kind, k, sig, expected):
    assert classify_scherk(make_group(kind, k), sig) == expected


def test_hemisphere_measures():
    dom = PerforatedDomain("sphere", (HoleSpec(np.array([0.0, 0.0, 1.0]), math.pi / 2),))
    m = exact_measures(dom)
    assert m.hole_area == pytest.approx(2 * math.pi, rel=1e-14)
    assert m.area == pytest.approx(2 * math.pi, rel=1e-14)


def test_disk_measures():
    m = exact_measures(unit_disk())
    assert m.area == pytest.approx(math.pi)
    assert m.boundary_length == pytest.approx(2 * math.pi)


def test_cap_area_formula_against_monte_carlo():
    r = 0.3
    centers = [np.array([0.0, 0.0, 1.0]), np.array([0.0, 0.0, -1.0]), np.array([1.0, 0.0, 0.0])]
    dom = PerforatedDomain("sphere", tuple(HoleSpec(c, r) for c in centers))
    assert exact_measures(dom).hole_area == pytest.approx(2 * math.pi * 3 * (1 - math.cos(r)), rel=1e-12)
    rng = np.random.default_rng(0)
    x = rng.normal(size=(400_000, 3))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    inside = np.zeros(len(x), bool)
    for c in centers:
        inside |= x @ c >= math.cos(r)
    mc = 4 * math.pi * inside.mean()
    assert mc == pytest.approx(exact_measures(dom).hole_area, rel=0.02)


def test_topology_sphere_five_holes():
    g = make_group("Z2")
    dom = holes_from_type(g, TypeSignature.of(e={0: 5}, n_generators=1), [0.05] * 5)
    t = topology(dom)
    assert (t.boundary_components, t.doubled_genus) == (5, 4)


def test_topology_disk_mixed():
    holes = [HoleSpec(np.array([1.0, 0.0]), 0.1, BOUNDARY), HoleSpec(np.array([-1.0, 0.0]), 0.1, BOUNDARY)]
    holes += [HoleSpec(np.array([0.3 * i - 0.3, 0.3]), 0.05) for i in range(3)]
    t = topology(PerforatedDomain("disk", tuple(holes)))
    assert t.boundary_components == 2
    assert t.doubled_genus == 3


def test_topology_degenerate_rejected():
    with pytest.raises(DomainError):
        topology(unit_disk())
    with pytest.raises(DomainError):
        topology(full_sphere())


def test_blueprint_round_trip_is_exact():
    g = make_group("Dk", 4)
    sig = TypeSignature.of(1, {0: 1}, n_generators=2)
    dom = holes_from_type(g, sig, [0.03, 0.02], placement_seed=5)
    again = PerforatedDomain.from_json(json.loads(dom.blueprint()))
    assert again.blueprint() == dom.blueprint()
    assert again.digest() == dom.digest()


type_cases = st.sampled_from([("Z2", None, 1), ("Dk", 4, 2), ("Dk", 6, 2), ("Z2xDk", 4, 3)])


@settings(max_examples=25, deadline=None)
@given(case=type_cases, f=st.integers(0, 2), e=st.lists(st.integers(0, 2), min_size=3, max_size=3),
       seed=st.integers(0, 1000))
def test_type_round_trip(case, f, e, seed):
    kind, k, ngen = case
    g = make_group(kind, k)
    sig = TypeSignature.of(f, {i: e[i] for i in range(ngen)}, n_generators=ngen)
    if sig.total() == 0:
        return
    dom = holes_from_type(g, sig, [0.01] * sig.total(), placement_seed=seed)
    assert type_of(dom) == sig
    assert len(dom.holes) == g.order * f + g.order // 2 * sum(e[:ngen])


@settings(max_examples=30, deadline=None)
@given(kind=st.sampled_from(["Dk", "Z2xDk", "tetrahedral", "octahedral", "icosahedral"]),
       v=st.lists(st.floats(-1, 1), min_size=3, max_size=3))
def test_fold_and_orbit_round_trip(kind, v):
    if np.linalg.norm(v) < 1e-3:
        return
    g = make_group(kind, 5 if "k" in kind.lower() else None)
    x = sphere_point(v)
    y = g.fold_into_chamber(x)
    assert g.in_chamber(y, tol=1e-9)[0]
    orbit = g.orbit(y)
    assert min(np.linalg.norm(orbit - x, axis=1)) < 1e-9
    assert len(orbit) * g.stabilizer_order(y) == g.order
