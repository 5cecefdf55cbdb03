"""Explicit hole configurations on the sphere and the disk.

Each builder takes the counts of its family plus a rate constant ``c`` that
sets the hole radius, and returns a validated, group-invariant
:class:`PerforatedDomain`.  ``radius=`` overrides the formula radius, which is
how radius searches drive a family.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .domain import (
    BOUNDARY,
    DomainError,
    HoleSpec,
    PerforatedDomain,
    expand_orbit,
    point_on_edge,
    edge_length,
    spherical_distance,
    sphere_point,
    type_of,
)
from .groups import ReflectionGroup, make_group

NORTH = np.array([0.0, 0.0, 1.0])
SOUTH = -NORTH


def _sph(theta: float, phi: float) -> np.ndarray:
    """Unit vector at polar angle ``theta`` from the north pole, longitude ``phi``."""
    return np.array([math.sin(theta) * math.cos(phi), math.sin(theta) * math.sin(phi), math.cos(theta)])


def _finish(base: str, holes, group: ReflectionGroup | None, meta: dict, strict: bool = True) -> PerforatedDomain:
    dom = PerforatedDomain(base, tuple(holes), group, None, strict, meta)
    return dom.with_holes(dom.holes, type_sig=type_of(dom)) if group is not None else dom


@dataclass(frozen=True)
class ConstructionParams:
    family: str
    params: dict = field(default_factory=dict)

    def build(self, **overrides) -> PerforatedDomain:
        return build_family(self.family, **{**self.params, **overrides})


# sphere families ----------------------------------------------------------


def vitali_pack(group: ReflectionGroup | str, f0: float, r: float | None = None, seed: int = 0,
                c: float | None = None, patience: int = 400) -> PerforatedDomain:
    """Greedy maximal R-packing of one chamber, R = 1/sqrt(f0 |G|), holes of radius r.

    Centers keep distance >= R from the mirrors and >= 2R from each other's
    orbits, so the disks D_R of the full orbit are pairwise disjoint.  Random
    candidates are tried until ``patience`` consecutive rejections, then a
    deterministic sweep of a fine point set makes the packing maximal.  When
    ``r`` is omitted, ``c`` sets r = R exp(-1/(2 c R^2)); without either, r = R/4.
    """
    if isinstance(group, str):
        group = make_group(group)
    R = 1.0 / math.sqrt(f0 * group.order)
    if r is None:
        r = R / 4 if c is None else R * math.exp(-1.0 / (2.0 * c * R * R))
    if not r < R / 2:
        raise DomainError(f"vitali_pack needs r < R/2 (r={r:.6g}, R={R:.6g})")
    rng = np.random.default_rng(seed)
    elems = group.elements
    sin_r = math.sin(R)
    accepted: list[np.ndarray] = []
    orbit_pts = np.zeros((0, 3))
    orbit_chunks: list[np.ndarray] = []
    min_chord = 2 * math.sin(R)  # chord of geodesic distance 2R

    def try_add(x: np.ndarray) -> bool:
        nonlocal orbit_pts
        if group.n_generators and np.min(group.normals @ x) < sin_r:
            return False
        if orbit_chunks:
            orbit_pts = np.vstack([orbit_pts, *orbit_chunks])
            orbit_chunks.clear()
        if len(orbit_pts) and np.min(np.linalg.norm(orbit_pts - x, axis=1)) < min_chord:
            return False
        accepted.append(x)
        orbit_chunks.append(elems @ x)
        return True

    fails = 0
    while fails < patience:
        batch = _fold_batch(group, rng.normal(size=(64, 3)))
        for x in batch:
            fails = 0 if try_add(x) else fails + 1
            if fails >= patience:
                break
    sweep = _fibonacci_sphere(max(2000, int(40.0 / (R * R))))
    for x in sweep[group.in_chamber(sweep, tol=0.0)]:
        try_add(x)
    if not accepted:
        raise DomainError("vitali_pack failed to place any center")
    seeds = [HoleSpec(x, r) for x in accepted]
    holes = expand_orbit(group, seeds)
    grp = group if group.kind != "trivial" else None
    meta = {"family": "vitali", "f0": f0, "R": R, "r": r, "seed": seed, "centers_per_chamber": len(accepted)}
    return _finish("sphere", holes, grp, meta)


def _fold_batch(group: ReflectionGroup, pts: np.ndarray) -> np.ndarray:
    """Map each point to its image in the closed chamber."""
    pts = pts / np.linalg.norm(pts, axis=1, keepdims=True)
    if group.n_generators == 0:
        return pts
    imgs = np.einsum("gij,bj->bgi", group.elements, pts)
    inside = np.all(imgs @ group.normals.T >= 0, axis=2)
    pick = np.argmax(inside, axis=1)
    return imgs[np.arange(len(pts)), pick]


def _fibonacci_sphere(n: int) -> np.ndarray:
    i = np.arange(n) + 0.5
    z = 1 - 2 * i / n
    phi = math.pi * (3 - math.sqrt(5)) * i
    s = np.sqrt(1 - z * z)
    return np.column_stack([s * np.cos(phi), s * np.sin(phi), z])


def covering_radius(domain: PerforatedDomain, n_samples: int = 20000, seed: int = 0) -> float:
    """Largest sampled distance from a sphere point to the nearest hole center."""
    pts = _fibonacci_sphere(n_samples)
    centers = domain.centers
    best = np.full(len(pts), np.inf)
    for start in range(0, len(centers), 512):
        d = spherical_distance(pts[:, None, :], centers[None, start:start + 512, :])
        best = np.minimum(best, d.min(axis=1))
    return float(best.max())


def equator_poles(k: int, c: float = 0.5, radius: float | None = None,
                  pole_radius: float | None = None, strict: bool = False) -> PerforatedDomain:
    """Holes at both poles and at k evenly spaced equator points, r = exp(-c sqrt k).

    Only plain disjointness is enforced by default; ``strict=True`` asks for
    disjoint doubled disks.
    """
    if k < 3:
        raise DomainError("equator_poles needs k >= 3")
    r = math.exp(-c * math.sqrt(k)) if radius is None else float(radius)
    rp = r if pole_radius is None else float(pole_radius)
    group = make_group("Z2xDk", k)
    holes = [HoleSpec(NORTH, rp), HoleSpec(SOUTH, rp)]
    holes += [HoleSpec(_sph(math.pi / 2, 2 * math.pi * j / k), r) for j in range(k)]
    meta = {"family": "equator-poles", "k": k, "c": c, "r": r, "pole_radius": rp}
    return _finish("sphere", holes, group, meta, strict)


def pole_latitude(k: int, c: float = 0.5, radius: float | None = None,
                  pole_radius: float | None = None, strict: bool = False) -> PerforatedDomain:
    """A north-polar hole plus k holes at polar distance pi/2 + 1/sqrt(k)."""
    if k < 2:
        raise DomainError("pole_latitude needs k >= 2")
    r = math.exp(-c * math.sqrt(k)) if radius is None else float(radius)
    rp = r if pole_radius is None else float(pole_radius)
    theta = math.pi / 2 + 1 / math.sqrt(k)
    group = make_group("Dk", k)
    holes = [HoleSpec(NORTH, rp)]
    holes += [HoleSpec(_sph(theta, 2 * math.pi * j / k), r) for j in range(k)]
    meta = {"family": "pole-latitude", "k": k, "c": c, "r": r, "latitude_offset": 1 / math.sqrt(k)}
    return _finish("sphere", holes, group, meta, strict)


def latitude_levels(n: int) -> list[float]:
    return [-1 + 2 * i / (n + 1) for i in range(1, n + 1)]


def segmented(n: int, k: int, c: float = 0.1, radius: float | None = None, c1: float = 1.0,
              strict: bool = True) -> PerforatedDomain:
    """2k holes on each latitude x3 = t_i, t_i = -1 + 2i/(n+1), r = exp(-c n k)/k.

    Longitudes are spaced pi/k.  Latitudes alternate between phase 0 (centers
    on the mirrors) and phase pi/(2k) (free centers); the phase depends on the
    distance to the nearer pole so the pattern is symmetric under x3 -> -x3.
    """
    if not (2 <= n <= c1 * k):
        raise DomainError(f"segmented needs 2 <= n <= {c1}*k (n={n}, k={k})")
    r = math.exp(-c * n * k) / k if radius is None else float(radius)
    holes = []
    phases = []
    for i, t in enumerate(latitude_levels(n), start=1):
        phase = (math.pi / (2 * k)) if min(i, n + 1 - i) % 2 == 1 else 0.0
        phases.append(phase)
        theta = math.acos(t)
        holes += [HoleSpec(_sph(theta, phase + math.pi * j / k), r) for j in range(2 * k)]
    extra_mirror = n % 2 == 0
    group = make_group("Z2xDk" if extra_mirror else "Dk", k)
    meta = {"family": "segmented", "n": n, "k": k, "c": c, "r": r, "phases": phases,
            "extra_mirror": extra_mirror}
    return _finish("sphere", holes, group, meta, strict)


def band(t_lo: float, t_hi: float) -> PerforatedDomain:
    """The spherical band t_lo <= x3 <= t_hi as the sphere minus two polar caps."""
    holes = [HoleSpec(NORTH, math.acos(t_hi)), HoleSpec(SOUTH, math.pi - math.acos(t_lo))]
    return PerforatedDomain("sphere", tuple(holes), None, None, False, {"family": "band", "t": [t_lo, t_hi]})


def platonic_edges(group: ReflectionGroup | str, i: int, e_i: int, r: float | None = None,
                   c: float = 0.5) -> PerforatedDomain:
    """e_i evenly spaced holes on chamber edge i (endpoints excluded), r = exp(-c e_i)/e_i."""
    if isinstance(group, str):
        group = make_group(group)
    if group.kind not in ("tetrahedral", "octahedral", "icosahedral"):
        raise DomainError("platonic_edges needs a tetrahedral, octahedral or icosahedral group")
    if r is None:
        r = math.exp(-c * e_i) / e_i
    length = edge_length(group, i)
    seeds = [HoleSpec(point_on_edge(group, i, (j + 0.5) * length / e_i), r) for j in range(e_i)]
    holes = expand_orbit(group, seeds)
    meta = {"family": "platonic-edges", "group": group.kind, "edge": i, "e": e_i, "r": r}
    return _finish("sphere", holes, group, meta)


def dk_wedges(k: int, n: int, r: float | None = None, c: float = 0.5) -> PerforatedDomain:
    """n evenly spaced holes on the rho_1 meridian of the D_k chamber, r = exp(-c n)."""
    if n < 1:
        raise DomainError("dk_wedges needs n >= 1")
    if r is None:
        r = math.exp(-c * n)
    group = make_group("Dk", k)
    seeds = [HoleSpec(_sph((j + 0.5) * math.pi / n, 0.0), r) for j in range(n)]
    holes = expand_orbit(group, seeds)
    meta = {"family": "dk-wedges", "k": k, "n": n, "r": r, "n_below_k": n < k}
    return _finish("sphere", holes, group, meta)


def mirror_cover_radius(domain: PerforatedDomain, mirror_normal: np.ndarray, samples: int = 4000) -> float:
    """Largest distance from a point of the mirror great circle to the nearest hole center."""
    n = np.asarray(mirror_normal, dtype=float)
    a = np.cross(n, [1.0, 0.0, 0.0] if abs(n[0]) < 0.9 else [0.0, 1.0, 0.0])
    a /= np.linalg.norm(a)
    b = np.cross(n, a)
    t = np.linspace(0, 2 * math.pi, samples, endpoint=False)
    pts = np.outer(np.cos(t), a) + np.outer(np.sin(t), b)
    d = spherical_distance(pts[:, None, :], domain.centers[None, :, :]).min(axis=1)
    return float(d.max())


# disk families --------------------------------------------------------------


def _disk_point(rho: float, ang: float) -> np.ndarray:
    return np.array([rho * math.cos(ang), rho * math.sin(ang)])


def stek_boundary_holes(k: int, c: float = 0.5, radius: float | None = None) -> PerforatedDomain:
    """k boundary half-disks at the k-th roots of unity, r = exp(-c k)/k."""
    if k < 2:
        raise DomainError("stek_boundary_holes needs k >= 2")
    r = math.exp(-c * k) / k if radius is None else float(radius)
    holes = [HoleSpec(_unit(2 * math.pi * j / k), r, BOUNDARY) for j in range(k)]
    meta = {"family": "stek-boundary", "k": k, "c": c, "r": r}
    return _finish("disk", holes, make_group("Dn", k, "disk"), meta)


def _unit(ang: float) -> np.ndarray:
    v = np.array([math.cos(ang), math.sin(ang)])
    return v / np.linalg.norm(v)


def stek_interior_ring(m: int, c: float = 0.5, boundary_holes: bool = False,
                       radius: float | None = None) -> PerforatedDomain:
    """m holes on the circle of radius (m-1)/m, r = exp(-c m)/m.

    With ``boundary_holes`` m half-disks of the same radius are added at the
    intermediate angles pi(2j+1)/m.
    """
    if m < 2:
        raise DomainError("stek_interior_ring needs m >= 2")
    r = math.exp(-c * m) / m if radius is None else float(radius)
    holes = [HoleSpec(_disk_point((m - 1) / m, 2 * math.pi * j / m), r) for j in range(m)]
    if boundary_holes:
        holes += [HoleSpec(_unit(math.pi * (2 * j + 1) / m), r, BOUNDARY) for j in range(m)]
    meta = {"family": "stek-ring", "m": m, "c": c, "r": r, "boundary_holes": bool(boundary_holes)}
    return _finish("disk", holes, make_group("Dn", m, "disk"), meta)


def stek_wedge_rays(n: int, a: int, c: float = 0.5, radius: float | None = None, n0: int = 2) -> PerforatedDomain:
    """a holes on each of n rays, centers l/(a+1) e^{2 pi i j/n}, r = exp(-c a)/a."""
    if not (a >= n >= n0):
        raise DomainError(f"stek_wedge_rays needs a >= n >= {n0} (a={a}, n={n})")
    r = math.exp(-c * a) / a if radius is None else float(radius)
    holes = [HoleSpec(_disk_point(l / (a + 1), 2 * math.pi * j / n), r) for j in range(n) for l in range(1, a + 1)]
    meta = {"family": "stek-wedges", "n": n, "a": a, "c": c, "r": r}
    return _finish("disk", holes, make_group("Dn", n, "disk"), meta)


def stek_diameter(m: int, boundary_holes: bool = False, radius: float | None = None) -> PerforatedDomain:
    """m holes of radius 1/(2m) centered at the midpoints of m equal pieces of a diameter.

    Neighboring centers are 2/m apart, so the doubled disks touch but do not
    overlap.  ``boundary_holes`` adds half-disks at (0, +-1).
    """
    if m < 1:
        raise DomainError("stek_diameter needs m >= 1")
    r = 1 / (2 * m) if radius is None else float(radius)
    holes = [HoleSpec(np.array([-1 + (2 * j - 1) / m, 0.0]), r) for j in range(1, m + 1)]
    if boundary_holes:
        holes += [HoleSpec(np.array([0.0, 1.0]), r, BOUNDARY), HoleSpec(np.array([0.0, -1.0]), r, BOUNDARY)]
    meta = {"family": "stek-diameter", "m": m, "r": r, "boundary_holes": bool(boundary_holes)}
    return _finish("disk", holes, make_group("Dn", 2, "disk"), meta)


# registry -----------------------------------------------------------------

FAMILIES: dict[str, Callable[..., PerforatedDomain]] = {
    "vitali": vitali_pack,
    "equator-poles": equator_poles,
    "pole-latitude": pole_latitude,
    "segmented": segmented,
    "platonic-edges": platonic_edges,
    "dk-wedges": dk_wedges,
    "stek-boundary": stek_boundary_holes,
    "stek-ring": stek_interior_ring,
    "stek-wedges": stek_wedge_rays,
    "stek-diameter": stek_diameter,
}

# the count that plays the role of the topology parameter in gap sweeps
TOPOLOGY_PARAM = {
    "vitali": "f0",
    "equator-poles": "k",
    "pole-latitude": "k",
    "segmented": "n",
    "platonic-edges": "e_i",
    "dk-wedges": "n",
    "stek-boundary": "k",
    "stek-ring": "m",
    "stek-wedges": "a",
    "stek-diameter": "m",
}


def build_family(family: str, **params) -> PerforatedDomain:
    try:
        builder = FAMILIES[family]
    except KeyError:
        raise DomainError(f"unknown family {family!r}; valid: {', '.join(FAMILIES)}") from None
    if family == "vitali" and isinstance(params.get("group"), str):
        params["group"] = make_group(params["group"])
    if family == "platonic-edges" and isinstance(params.get("group"), str):
        params["group"] = make_group(params["group"])
    return builder(**params)


def family_base(family: str) -> str:
    return "disk" if family.startswith("stek-") else "sphere"
