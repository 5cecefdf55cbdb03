"""Perforated spheres and disks: exact hole data, symmetry types and measures.

Holes are the source of truth.  A domain is a base surface (the round unit
sphere or the flat unit disk) minus a finite union of closed geodesic disks;
on the disk a hole may also be a "boundary half-disk", i.e. a Euclidean disk
centered on the unit circle intersected with the disk.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from scipy.spatial import cKDTree

from .groups import ReflectionGroup, group_from_json, make_group

INTERIOR = "interior-disk"
BOUNDARY = "boundary-half-disk"


class DomainError(ValueError):
    pass


class OverlapError(DomainError):
    def __init__(self, i: int, j: int, detail: str):
        super().__init__(f"holes {i} and {j} overlap: {detail}")
        self.pair = (i, j)


class ChamberError(DomainError):
    pass


@dataclass(frozen=True, eq=False)
class HoleSpec:
    center: np.ndarray
    radius: float
    kind: str = INTERIOR
    stabilizer: int = 1

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float)
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "radius", float(self.radius))
        if not self.radius > 0:
            raise DomainError(f"hole radius must be positive, got {self.radius}")
        if len(c) == 3:
            if abs(np.linalg.norm(c) - 1.0) > 1e-12:
                raise DomainError("sphere hole center must be a unit vector")
            if self.radius >= math.pi:
                raise DomainError("sphere hole radius must be < pi")
            if self.kind != INTERIOR:
                raise DomainError("half-disk holes only exist on the disk")
        elif len(c) == 2:
            if self.kind == BOUNDARY and abs(np.linalg.norm(c) - 1.0) > 1e-12:
                raise DomainError("boundary half-disk center must lie on the unit circle")
            if self.kind not in (INTERIOR, BOUNDARY):
                raise DomainError(f"unknown hole kind {self.kind!r}")
        else:
            raise DomainError("hole center must be a 2- or 3-vector")

    def to_json(self) -> dict:
        return {
            "center": [float(x) for x in self.center],
            "radius": float(self.radius),
            "kind": self.kind,
        }


def sphere_point(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def spherical_distance(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Geodesic distance on the unit sphere, accurate for nearby points."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    cross = np.linalg.norm(np.cross(a, b), axis=-1)
    dot = np.sum(a * b, axis=-1)
    return np.arctan2(cross, dot)


@dataclass(frozen=True)
class TypeSignature:
    """Hole counts relative to one chamber.

    ``f`` free holes in the chamber interior, ``e[i]`` holes on the edge of
    mirror ``i`` and ``v[(i, j)]`` holes at the corner where mirrors ``i`` and
    ``j`` meet.  Generator indices are zero-based here and one-based in JSON.
    """

    f: int = 0
    e: tuple[int, ...] = ()
    v: tuple[tuple[tuple[int, int], int], ...] = ()

    def __post_init__(self):
        if self.f < 0 or any(x < 0 for x in self.e) or any(c < 0 for _, c in self.v):
            raise DomainError("type counts must be nonnegative")
        v = tuple(sorted(((min(p), max(p)), int(c)) for p, c in self.v if c))
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "e", tuple(int(x) for x in self.e))

    @classmethod
    def of(cls, f: int = 0, e: dict[int, int] | None = None, v: dict[tuple[int, int], int] | None = None,
           n_generators: int = 0) -> "TypeSignature":
        e = e or {}
        ev = [0] * n_generators
        for i, c in e.items():
            ev[i] = c
        return cls(f, tuple(ev), tuple((v or {}).items()))

    def e_at(self, i: int) -> int:
        return self.e[i] if i < len(self.e) else 0

    def v_at(self, i: int, j: int) -> int:
        key = (min(i, j), max(i, j))
        return dict(self.v).get(key, 0)

    def total(self) -> int:
        return self.f + sum(self.e) + sum(c for _, c in self.v)

    def normalized(self, n_generators: int) -> "TypeSignature":
        e = tuple(self.e_at(i) for i in range(n_generators))
        return TypeSignature(self.f, e, self.v)

    def to_json(self) -> dict:
        return {
            "f": int(self.f),
            "e": [int(x) for x in self.e],
            "v": [[i + 1, j + 1, int(c)] for (i, j), c in self.v],
        }

    @classmethod
    def from_json(cls, data: dict) -> "TypeSignature":
        v = tuple(((int(i) - 1, int(j) - 1), int(c)) for i, j, c in data.get("v", []))
        return cls(int(data.get("f", 0)), tuple(int(x) for x in data.get("e", [])), v)


@dataclass(frozen=True)
class TopologyRecord:
    boundary_components: int
    doubled_genus: int
    euler_char: int
    interior_holes: int = 0
    boundary_holes: int = 0


@dataclass(frozen=True)
class Measures:
    area: float
    hole_area: float
    boundary_length: float
    gamma1_length: float | None = None
    boundary_hole_length: float = 0.0


@dataclass(frozen=True, eq=False)
class PerforatedDomain:
    base: str
    holes: tuple[HoleSpec, ...]
    group: ReflectionGroup | None = None
    type_sig: TypeSignature | None = None
    strict: bool = True
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.base not in ("sphere", "disk"):
            raise DomainError(f"unknown base {self.base!r}")
        object.__setattr__(self, "holes", tuple(self.holes))
        dim = 3 if self.base == "sphere" else 2
        for h in self.holes:
            if len(h.center) != dim:
                raise DomainError(f"hole center dimension {len(h.center)} does not match base {self.base}")
        validate_disjoint(self.base, self.holes, self.strict)
        if self.group is not None:
            if self.group.base != self.base:
                raise DomainError("group base does not match domain base")
            check_invariant(self.group, self.holes)

    @property
    def group_or_trivial(self) -> ReflectionGroup:
        return self.group if self.group is not None else make_group("trivial", None, self.base)

    @property
    def centers(self) -> np.ndarray:
        dim = 3 if self.base == "sphere" else 2
        if not self.holes:
            return np.zeros((0, dim))
        return np.array([h.center for h in self.holes])

    @property
    def radii(self) -> np.ndarray:
        return np.array([h.radius for h in self.holes], dtype=float)

    def to_json(self) -> dict:
        out: dict = {"base": self.base}
        out["group"] = self.group.to_json() if self.group is not None else {"kind": "trivial"}
        t = self.type_sig if self.type_sig is not None else None
        out["type"] = t.to_json() if t is not None else None
        out["holes"] = [h.to_json() for h in self.holes]
        if not self.strict:
            out["strict"] = False
        if self.metadata:
            out["metadata"] = self.metadata
        return out

    def blueprint(self) -> str:
        return canonical_json(self.to_json())

    def digest(self) -> str:
        return hashlib.sha256(self.blueprint().encode()).hexdigest()[:16]

    @classmethod
    def from_json(cls, data: dict) -> "PerforatedDomain":
        base = data["base"]
        group = group_from_json(data.get("group"), base)
        if group.kind == "trivial":
            group = None
        holes = tuple(
            HoleSpec(np.array(h["center"], dtype=float), h["radius"], h.get("kind", INTERIOR))
            for h in data.get("holes", [])
        )
        t = data.get("type")
        sig = TypeSignature.from_json(t) if t else None
        return cls(base, holes, group, sig, bool(data.get("strict", True)), dict(data.get("metadata", {})))

    def with_holes(self, holes, **changes) -> "PerforatedDomain":
        kw = dict(base=self.base, holes=tuple(holes), group=self.group, type_sig=self.type_sig,
                  strict=self.strict, metadata=dict(self.metadata))
        kw.update(changes)
        return PerforatedDomain(**kw)

    def scaled_radii(self, factor: float) -> "PerforatedDomain":
        return self.with_holes([HoleSpec(h.center, h.radius * factor, h.kind, h.stabilizer) for h in self.holes])


def canonical_json(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), sort_keys=False, allow_nan=False)


def full_sphere() -> PerforatedDomain:
    return PerforatedDomain("sphere", ())


def unit_disk() -> PerforatedDomain:
    return PerforatedDomain("disk", ())


# validation ---------------------------------------------------------------

_GAP_TOL = 1e-12


def validate_disjoint(base: str, holes, strict: bool = True) -> None:
    """Reject overlapping holes.

    With ``strict`` the doubled disks must be pairwise disjoint (touching is
    allowed); otherwise the holes themselves must be disjoint.
    """
    factor = 2.0 if strict else 1.0
    for i, h in enumerate(holes):
        if base == "disk" and h.kind == INTERIOR:
            if np.linalg.norm(h.center) + h.radius >= 1.0:
                raise DomainError(f"interior hole {i} is not contained in the open unit disk")
        if base == "disk" and h.kind == BOUNDARY and h.radius >= 1.0:
            raise DomainError(f"boundary half-disk {i} is too large")
    n = len(holes)
    if n < 2:
        return
    centers = np.array([h.center for h in holes])
    radii = np.array([h.radius for h in holes])
    reach = factor * 2 * radii.max()
    # chordal distance never exceeds geodesic distance, so this finds every candidate
    pairs = cKDTree(centers).query_pairs(reach * (1 + 1e-9) + 1e-15, output_type="ndarray")
    if len(pairs) == 0:
        return
    a, b = pairs[:, 0], pairs[:, 1]
    if base == "sphere":
        dist = spherical_distance(centers[a], centers[b])
    else:
        dist = np.linalg.norm(centers[a] - centers[b], axis=1)
    need = factor * (radii[a] + radii[b])
    bad = np.flatnonzero(dist < need * (1.0 - _GAP_TOL) - _GAP_TOL)
    if len(bad):
        q = bad[np.lexsort((b[bad], a[bad]))[0]]
        i, j = sorted((int(a[q]), int(b[q])))
        which = "doubled disks" if strict else "disks"
        raise OverlapError(i, j, f"{which} intersect (distance {dist[q]:.6g} < {need[q]:.6g})")


def check_invariant(group: ReflectionGroup, holes, tol: float = 1e-10) -> None:
    if not holes:
        return
    centers = np.array([h.center for h in holes])
    radii = np.array([h.radius for h in holes])
    tree = cKDTree(centers)
    for g in group.elements:
        d, j = tree.query(centers @ g.T)
        if np.any(d > 1e-8) or np.any(np.abs(radii[j] - radii) > tol):
            raise DomainError(f"hole set is not invariant under {group.label()}")


# orbits and types -----------------------------------------------------------


def expand_orbit(group: ReflectionGroup, seeds) -> list[HoleSpec]:
    """Full orbit of the seed holes; stabilized holes appear once.

    Seeds must lie in the closed fundamental chamber.
    """
    out: list[HoleSpec] = []
    for idx, s in enumerate(seeds):
        if not group.in_chamber(s.center, tol=1e-9)[0]:
            viol = group.normals @ s.center
            raise ChamberError(
                f"seed {idx} lies outside the closed chamber of {group.label()} "
                f"(mirror margins {np.round(viol, 6).tolist()})"
            )
        pts = group.orbit(s.center)
        stab = group.order // len(pts)
        for p in pts:
            if len(p) == 3:
                p = p / np.linalg.norm(p)
            elif s.kind == BOUNDARY:
                p = p / np.linalg.norm(p)
            out.append(HoleSpec(p, s.radius, s.kind, stab))
    return out


def classify_center(group: ReflectionGroup, center: np.ndarray) -> tuple:
    """('f',), ('e', i) or ('v', i, j) for a chamber point."""
    mirrors = group.mirrors_through(center)
    if len(mirrors) == 0:
        return ("f",)
    if len(mirrors) == 1:
        return ("e", mirrors[0])
    return ("v", mirrors[0], mirrors[1])


def type_of(domain: PerforatedDomain) -> TypeSignature:
    """Recompute the type signature from the hole positions."""
    group = domain.group_or_trivial
    f = 0
    e = [0] * group.n_generators
    v: dict[tuple[int, int], int] = {}
    for h in domain.holes:
        if not group.in_chamber(h.center, tol=1e-9)[0]:
            continue
        cls = classify_center(group, h.center)
        if cls[0] == "f":
            f += 1
        elif cls[0] == "e":
            e[cls[1]] += 1
        else:
            key = (cls[1], cls[2])
            v[key] = v.get(key, 0) + 1
    return TypeSignature(f, tuple(e), tuple(v.items()))


def _edge_arcs(group: ReflectionGroup, i: int) -> tuple[np.ndarray, np.ndarray, float]:
    """Start point, unit tangent and length of chamber edge ``i``."""
    if group.base == "sphere":
        n = group.normals[i]
        corners = [p for (pair, p) in group.chamber_vertices() if i in pair]
        if not corners:
            # the whole great circle bounds the chamber (single mirror)
            a = np.cross(n, [1.0, 0.0, 0.0])
            if np.linalg.norm(a) < 1e-8:
                a = np.cross(n, [0.0, 1.0, 0.0])
            a /= np.linalg.norm(a)
            return a, np.cross(n, a), 2 * math.pi
        if len(corners) == 1:
            raise ChamberError("edge with a single corner is not supported")
        # pick the arc between the corners that lies in the chamber
        p0, p1 = corners[0], corners[1]
        t = p1 - (p1 @ p0) * p0
        if np.linalg.norm(t) < 1e-12:
            # antipodal corners (lune edge): tangent points into the chamber
            t = np.cross(n, p0)
            mid = t
            if not group.in_chamber(mid, tol=1e-9)[0]:
                t = -t
        t /= np.linalg.norm(t)
        length = float(spherical_distance(p0, p1)) if np.linalg.norm(p1 + p0) > 1e-9 else math.pi
        mid = p0 * math.cos(length / 2) + t * math.sin(length / 2)
        if not group.in_chamber(mid, tol=1e-9)[0]:
            t = -t
            length = 2 * math.pi - length
        return p0, t, length
    # disk: edge i is the segment from the origin along the mirror line
    n = group.normals[i]
    d = np.array([-n[1], n[0]])
    if not group.in_chamber(0.5 * d, tol=1e-9)[0]:
        d = -d
    return np.zeros(2), d, 1.0


def point_on_edge(group: ReflectionGroup, i: int, s: float) -> np.ndarray:
    p0, t, _ = _edge_arcs(group, i)
    if group.base == "sphere":
        return p0 * math.cos(s) + t * math.sin(s)
    return p0 + s * t


def edge_length(group: ReflectionGroup, i: int) -> float:
    return _edge_arcs(group, i)[2]


def holes_from_type(group: ReflectionGroup, sig: TypeSignature, radii, placement_seed: int = 0,
                    strict: bool = True, max_tries: int = 2000) -> PerforatedDomain:
    """Place holes realizing ``sig`` in one chamber and expand them by the group.

    Radii are consumed in the order: free holes, edge holes by mirror index,
    corner holes by mirror pair.  Edge holes are evenly spaced along their
    edge; free holes are drawn from ``placement_seed``.
    """
    radii = [float(r) for r in radii]
    sig = sig.normalized(group.n_generators)
    if len(radii) != sig.total():
        raise DomainError(f"expected {sig.total()} radii for type {sig.to_json()}, got {len(radii)}")
    base = group.base
    rng = np.random.default_rng(placement_seed)
    it = iter(radii)
    seeds: list[HoleSpec] = []
    free_r = [next(it) for _ in range(sig.f)]
    edge_seeds = []
    for i in range(group.n_generators):
        cnt = sig.e_at(i)
        if cnt == 0:
            continue
        _, _, length = _edge_arcs(group, i)
        closed = base == "sphere" and length > 2 * math.pi - 1e-9
        for j in range(cnt):
            frac = j / cnt if closed else (j + 0.5) / cnt
            if base == "disk":
                frac = (j + 0.5) / (cnt + 0.5)
            edge_seeds.append(HoleSpec(point_on_edge(group, i, frac * length), next(it)))
    corner_seeds = []
    corners = group.chamber_vertices()
    for (i, j), c in sig.v:
        pts = [p for pair, p in corners if pair == (i, j)]
        if c > len(pts):
            raise DomainError(f"type asks for {c} holes at corner ({i + 1},{j + 1}) but only {len(pts)} exist")
        for p in pts[:c]:
            corner_seeds.append(HoleSpec(p, next(it)))
    seeds = edge_seeds + corner_seeds
    placed = expand_orbit(group, seeds)
    validate_disjoint(base, placed, strict)
    for r in free_r:
        for _ in range(max_tries):
            if base == "sphere":
                x = group.fold_into_chamber(sphere_point(rng.normal(size=3)))
                clearance = np.min(np.abs(group.normals @ x)) if group.n_generators else np.inf
                ok = clearance > 2.05 * r  # sin(dist to mirror) = |x . n|
            else:
                rho = math.sqrt(rng.uniform(0, 1)) * (1 - 2.5 * r)
                ang = rng.uniform(0, 2 * math.pi)
                x = group.fold_into_chamber(np.array([rho * math.cos(ang), rho * math.sin(ang)]))
                clearance = np.min(np.abs(group.normals @ x)) if group.n_generators else np.inf
                ok = clearance > 2.05 * r
            if not ok:
                continue
            cand = expand_orbit(group, [HoleSpec(x, r)])
            try:
                validate_disjoint(base, placed + cand, strict)
            except DomainError:
                continue
            placed = placed + cand
            break
        else:
            raise DomainError(f"could not place a free hole of radius {r} after {max_tries} tries")
    grp = group if group.kind != "trivial" else None
    return PerforatedDomain(base, tuple(placed), grp, sig, strict)


# Scherk classification ----------------------------------------------------


def classify_scherk(group: ReflectionGroup, sig: TypeSignature) -> str:
    """'Scherk' for the symmetry types whose optimal metrics are expected to be
    Scherk-like, 'Generic' otherwise (sphere only)."""
    if group.base != "sphere":
        raise DomainError("Scherk classification is defined on the sphere only")
    sig = sig.normalized(group.n_generators)
    kind = group.kind
    if kind == "Z2":
        return "Scherk" if sig.f == 0 and not sig.v and sig.e_at(0) >= 2 else "Generic"
    if kind == "Dk":
        e1, e2, v = sig.e_at(0), sig.e_at(1), sig.v_at(0, 1)
        counts = (sig.f, e1, e2, v)
        return "Scherk" if counts in ((1, 0, 0, 0), (0, 1, 0, 0), (0, 0, 1, 0)) else "Generic"
    if kind == "Z2xDk":
        if sig.f or sig.e_at(0) or sig.e_at(1) or sig.v_at(0, 1):
            return "Generic"
        if sig.v_at(0, 2) > 1 or sig.v_at(1, 2) > 1:
            return "Generic"
        return "Scherk"
    return "Generic"


# measures and topology ------------------------------------------------------


def _lens_area(r: float) -> float:
    """Area of the unit disk inside the disk of radius r centered on its boundary."""
    return r * r * math.acos(r / 2) + 2 * math.asin(r / 2) - 0.5 * r * math.sqrt(4 - r * r)


def exact_measures(domain: PerforatedDomain) -> Measures:
    if domain.base == "sphere":
        hole_area = sum(4 * math.pi * math.sin(h.radius / 2) ** 2 for h in domain.holes)
        length = sum(2 * math.pi * math.sin(h.radius) for h in domain.holes)
        return Measures(4 * math.pi - hole_area, hole_area, length, None, length)
    hole_area = 0.0
    hole_len = 0.0
    cut = 0.0
    for h in domain.holes:
        if h.kind == INTERIOR:
            hole_area += math.pi * h.radius ** 2
            hole_len += 2 * math.pi * h.radius
        else:
            hole_area += _lens_area(h.radius)
            hole_len += 2 * h.radius * math.acos(h.radius / 2)
            cut += 4 * math.asin(h.radius / 2)
    gamma1 = 2 * math.pi - cut
    return Measures(math.pi - hole_area, hole_area, gamma1 + hole_len, gamma1, hole_len)


def boundary_disk_cut_length(domain: PerforatedDomain) -> float:
    """Length of the unit circle covered by boundary half-disks, |∂𝔻 ∩ 𝒟|."""
    return sum(4 * math.asin(h.radius / 2) for h in domain.holes if h.kind == BOUNDARY)


def domain_euler_char(domain: PerforatedDomain) -> int:
    if domain.base == "sphere":
        return 2 - len(domain.holes)
    return 1 - sum(1 for h in domain.holes if h.kind == INTERIOR)


def topology(domain: PerforatedDomain) -> TopologyRecord:
    """Topology of the surface obtained by doubling across the hole boundaries."""
    if domain.base == "sphere":
        m = len(domain.holes)
        if m == 0:
            raise DomainError("the full sphere has no doubled surface (no hole boundaries)")
        gamma = m - 1
        return TopologyRecord(m, gamma, 2 - 2 * gamma, m, 0)
    n_int = sum(1 for h in domain.holes if h.kind == INTERIOR)
    n_bd = len(domain.holes) - n_int
    if n_int + n_bd == 0:
        raise DomainError("the disk without holes has a degenerate double")
    chi_omega = 1 - n_int
    if n_bd == 0:
        k = 2
        chi_double = 2 * chi_omega  # glued along circles
    else:
        k = n_bd
        chi_double = 2 * chi_omega - n_bd  # glued along arcs
    gamma = (2 - k - chi_double) // 2
    return TopologyRecord(k, gamma, chi_double, n_int, n_bd)


def load_blueprint(path) -> PerforatedDomain:
    with open(path) as fh:
        return PerforatedDomain.from_json(json.load(fh))
