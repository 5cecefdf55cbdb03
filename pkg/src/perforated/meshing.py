"""Boundary-conforming triangulations of perforated spheres and disks.

The mesher works on one fundamental chamber of the domain's symmetry group.
The chamber boundary (mirror arcs, pieces of the unit circle and hole arcs) is
sampled with a graded size field, mapped to the plane (stereographic chart on
the sphere), triangulated with a constrained quality Delaunay mesher, mapped
back and then reflected by every group element.  The result is exactly
invariant under the group.  Refinement splits every triangle into four and
puts new boundary vertices on the exact circles.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np
import triangle
from scipy.spatial import cKDTree

from .domain import BOUNDARY, PerforatedDomain, domain_euler_char
from .groups import ReflectionGroup

INTERIOR_CODE = -1
OUTER_CODE = -2
MIRROR_BASE = -10  # mirror i is MIRROR_BASE - i

MIN_RADIUS = 1e-10


class MeshError(RuntimeError):
    pass


class RadiusFloorError(MeshError):
    def __init__(self, radius: float, floor: float = MIN_RADIUS):
        super().__init__(f"radius below meshable floor: {radius:.3g} < {floor:.3g}")
        self.floor = floor


def mirror_code(i: int) -> int:
    return MIRROR_BASE - i


def code_name(code: int) -> str:
    if code == INTERIOR_CODE:
        return "interior"
    if code == OUTER_CODE:
        return "outer"
    if code <= MIRROR_BASE:
        return f"mirror:{MIRROR_BASE - code}"
    return f"hole:{code}"


def code_from_name(name: str) -> int:
    if name == "interior":
        return INTERIOR_CODE
    if name == "outer":
        return OUTER_CODE
    kind, _, idx = name.partition(":")
    return mirror_code(int(idx)) if kind == "mirror" else int(idx)


@dataclass(frozen=True, eq=False)
class Mesh:
    base: str
    vertices: np.ndarray
    triangles: np.ndarray
    vertex_class: np.ndarray
    boundary_edges: np.ndarray
    edge_tags: np.ndarray
    h: float
    hole_centers: np.ndarray
    hole_radii: np.ndarray
    level: int = 0
    info: dict = field(default_factory=dict)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    def edges(self) -> np.ndarray:
        t = self.triangles
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        e.sort(axis=1)
        return np.unique(e, axis=0)

    def euler_characteristic(self) -> int:
        return self.n_vertices - len(self.edges()) + len(self.triangles)

    def triangle_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        a, b = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
        if self.vertices.shape[1] == 2:
            return 0.5 * np.abs(a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0])
        return 0.5 * np.linalg.norm(np.cross(a, b), axis=1)

    def area(self) -> float:
        return float(self.triangle_areas().sum())

    def boundary_length(self, tag: int | None = None) -> float:
        e = self.boundary_edges if tag is None else self.boundary_edges[self.edge_tags == tag]
        return float(np.linalg.norm(self.vertices[e[:, 0]] - self.vertices[e[:, 1]], axis=1).sum())

    def min_angle(self) -> float:
        p = self.vertices[self.triangles]
        worst = np.full(len(p), np.pi)
        for i in range(3):
            u = p[:, (i + 1) % 3] - p[:, i]
            v = p[:, (i + 2) % 3] - p[:, i]
            cosang = np.sum(u * v, axis=1) / (np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
            worst = np.minimum(worst, np.arccos(np.clip(cosang, -1, 1)))
        return float(np.degrees(worst.min()))

    def boundary_polylines(self) -> list[tuple[int, np.ndarray]]:
        """(tag, ordered vertex indices) for each connected run of equally tagged edges.

        Closed polylines repeat their first vertex at the end.
        """
        out = []
        for tag in np.unique(self.edge_tags):
            edges = self.boundary_edges[self.edge_tags == tag]
            sub = replace(self, boundary_edges=edges, edge_tags=np.full(len(edges), tag))
            for comp in sub.boundary_loops():
                e = edges[comp]
                nbr: dict[int, list[int]] = {}
                for a, b in e.tolist():
                    nbr.setdefault(a, []).append(b)
                    nbr.setdefault(b, []).append(a)
                ends = [v for v, n in nbr.items() if len(n) == 1]
                start = min(ends) if ends else int(e.min())
                path, prev = [start], None
                while True:
                    nxt = [v for v in nbr[path[-1]] if v != prev]
                    if not nxt:
                        break
                    prev = path[-1]
                    path.append(nxt[0])
                    if path[-1] == start:
                        break
                out.append((int(tag), np.array(path)))
        return out

    def boundary_loops(self) -> list[np.ndarray]:
        """Boundary edges grouped into connected polylines."""
        if len(self.boundary_edges) == 0:
            return []
        adj: dict[int, list[int]] = {}
        for k, (a, b) in enumerate(self.boundary_edges):
            adj.setdefault(int(a), []).append(k)
            adj.setdefault(int(b), []).append(k)
        seen = np.zeros(len(self.boundary_edges), dtype=bool)
        loops = []
        for start in range(len(self.boundary_edges)):
            if seen[start]:
                continue
            stack = [start]
            comp = []
            while stack:
                k = stack.pop()
                if seen[k]:
                    continue
                seen[k] = True
                comp.append(k)
                for v in self.boundary_edges[k]:
                    stack.extend(j for j in adj[int(v)] if not seen[j])
            loops.append(np.array(sorted(comp)))
        return loops


# geometry helpers ------------------------------------------------------------


def _frame(axis: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    axis = axis / np.linalg.norm(axis)
    helper = np.array([1.0, 0.0, 0.0]) if abs(axis[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = np.cross(axis, helper)
    u /= np.linalg.norm(u)
    return u, np.cross(axis, u)


@dataclass
class _Chart:
    pole: np.ndarray

    def __post_init__(self):
        self.pole = self.pole / np.linalg.norm(self.pole)
        self.e1, self.e2 = _frame(self.pole)

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        z = x @ self.pole
        q = np.column_stack([x @ self.e1, x @ self.e2])
        # 1 - z cancels near the pole; |q|^2 / (1 + z) is the same number computed stably
        den = np.where(z > 0, np.sum(q * q, axis=1) / (1.0 + np.abs(z)), 1.0 - z)
        return q / den[:, None]

    def inverse(self, y: np.ndarray) -> np.ndarray:
        y = np.atleast_2d(y)
        n2 = np.sum(y * y, axis=1)
        x = (2 * (np.outer(y[:, 0], self.e1) + np.outer(y[:, 1], self.e2)) + np.outer(n2 - 1, self.pole))
        x /= (n2 + 1)[:, None]
        return x / np.linalg.norm(x, axis=1, keepdims=True)

    def scale(self, y: np.ndarray) -> np.ndarray:
        """Planar length per unit sphere length at chart point y."""
        return 0.5 * (1 + np.sum(np.atleast_2d(y) ** 2, axis=1))


class _Curve:
    """Arclength-parametrized curve piece with a boundary tag."""

    def __init__(self, fn, length: float, tag: int):
        self.fn = fn
        self.length = float(length)
        self.tag = tag

    def __call__(self, s):
        return self.fn(np.atleast_1d(np.asarray(s, dtype=float)))


def _great_arc(p0: np.ndarray, t: np.ndarray, length: float, tag: int) -> _Curve:
    return _Curve(lambda s: np.outer(np.cos(s), p0) + np.outer(np.sin(s), t), length, tag)


def _small_circle_arc(c: np.ndarray, r: float, psi0: float, dpsi: float, tag: int) -> _Curve:
    u, w = _frame(c)
    sr = math.sin(r)

    def fn(s):
        psi = psi0 + np.sign(dpsi) * s / sr
        return math.cos(r) * c + sr * (np.outer(np.cos(psi), u) + np.outer(np.sin(psi), w))

    return _Curve(fn, abs(dpsi) * sr, tag)


def _circle_angle_sphere(c: np.ndarray, x: np.ndarray) -> float:
    u, w = _frame(c)
    return math.atan2(x @ w, x @ u)


def _segment(p0: np.ndarray, d: np.ndarray, length: float, tag: int) -> _Curve:
    return _Curve(lambda s: p0 + np.outer(s, d), length, tag)


def _plane_arc(center: np.ndarray, radius: float, theta0: float, dtheta: float, tag: int) -> _Curve:
    def fn(s):
        th = theta0 + np.sign(dtheta) * s / radius
        return center + radius * np.column_stack([np.cos(th), np.sin(th)])

    return _Curve(fn, abs(dtheta) * radius, tag)


# size field ------------------------------------------------------------------


class _SizeField:
    def __init__(self, domain: PerforatedDomain, h: float, grading: float):
        self.h = h
        self.grading = grading
        self.sphere = domain.base == "sphere"
        self.centers = domain.centers
        self.radii = domain.radii
        self.tree = cKDTree(self.centers) if len(self.centers) else None
        self.rmax = float(self.radii.max()) if len(self.radii) else 0.0

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        out = np.full(len(x), self.h)
        if self.tree is None:
            return out
        # distances to a few nearest centers; grading is measured from the hole center
        k = min(4, len(self.centers))
        chord, idx = self.tree.query(x, k=k)
        chord = np.atleast_2d(chord.reshape(len(x), -1))
        idx = np.atleast_2d(idx.reshape(len(x), -1))
        if self.sphere:
            d = 2 * np.arcsin(np.clip(chord / 2, 0, 1))
        else:
            d = chord
        d = np.maximum(d, self.radii[idx])
        out = np.minimum(out, self.grading * d.min(axis=1))
        return out


def _sample_curve(curve: _Curve, size: _SizeField, min_pts: int = 2) -> np.ndarray:
    """Arclength positions (including both ends) spaced according to the size field."""
    L = curve.length
    ends = size(curve(np.array([0.0, L])))
    grid = np.concatenate([
        np.linspace(0, L, 257),
        np.minimum(L, np.geomspace(max(ends[0] * 1e-3, L * 1e-14), L, 120)),
        np.maximum(0, L - np.geomspace(max(ends[1] * 1e-3, L * 1e-14), L, 120)),
    ])
    grid = np.unique(np.clip(grid, 0, L))
    for _ in range(30):
        sz = size(curve(grid))
        ds = np.diff(grid)
        bad = ds > 0.25 * np.minimum(sz[:-1], sz[1:])
        if not bad.any():
            break
        grid = np.unique(np.concatenate([grid, 0.5 * (grid[:-1][bad] + grid[1:][bad])]))
    sz = size(curve(grid))
    inv = 1.0 / sz
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (inv[1:] + inv[:-1]) * np.diff(grid))])
    n = max(min_pts - 1, int(math.ceil(cum[-1] - 1e-9)))
    targets = np.linspace(0, cum[-1], n + 1)
    s = np.interp(targets, cum, grid)
    s[0], s[-1] = 0.0, L
    return s


# chamber boundary -------------------------------------------------------------


@dataclass
class _Loop:
    curves: list
    hole: int | None = None  # set for a closed hole loop strictly inside the chamber


def _chamber_sides_sphere(group: ReflectionGroup) -> list[_Curve]:
    ng = group.n_generators
    if ng == 0:
        return []
    if ng == 1:
        u, w = _frame(group.normals[0])
        return [_great_arc(u, w, 2 * math.pi, mirror_code(0))]
    corners = group.chamber_vertices()
    if ng == 2:
        # lune between two meridians: north pole to south pole and back
        (_, a), (_, b) = corners
        seq = [(a, b, 0), (b, a, 1)]
    else:
        at = {pair: p for pair, p in corners}
        seq = [(at[(0, 1)], at[(1, 2)], 1), (at[(1, 2)], at[(0, 2)], 2), (at[(0, 2)], at[(0, 1)], 0)]
    sides = []
    for p, q, mirror in seq:
        t = q - (q @ p) * p
        if np.linalg.norm(t) < 1e-12:
            t = np.cross(group.normals[mirror], p)
            mid = t / np.linalg.norm(t)
            if np.min(np.delete(group.normals, mirror, axis=0) @ mid) < 0:
                t = -t
            length = math.pi
        else:
            length = math.atan2(np.linalg.norm(np.cross(p, q)), p @ q)
        t = t / np.linalg.norm(t)
        sides.append(_great_arc(p.copy(), t, length, mirror_code(mirror)))
    return sides


def _chamber_sides_disk(group: ReflectionGroup) -> list[_Curve]:
    ng = group.n_generators
    o = np.zeros(2)
    if ng == 0:
        return [_plane_arc(o, 1.0, 0.0, 2 * math.pi, OUTER_CODE)]
    if ng == 1:
        n = group.normals[0]
        d = np.array([n[1], -n[0]])
        a = math.atan2(d[1], d[0])
        # segment from -d to d, then the arc back on the chamber side
        arc = _plane_arc(o, 1.0, a, math.pi, OUTER_CODE)
        mid = arc(np.array([arc.length / 2]))[0]
        if mid @ n < 0:
            arc = _plane_arc(o, 1.0, a, -math.pi, OUTER_CODE)
        return [_segment(-d, d, 2.0, mirror_code(0)), arc]
    dirs = []
    for i in range(2):
        n = group.normals[i]
        d = np.array([-n[1], n[0]])
        if not group.in_chamber(0.5 * d, tol=1e-9)[0]:
            d = -d
        dirs.append(d)
    a0 = math.atan2(dirs[0][1], dirs[0][0])
    a1 = math.atan2(dirs[1][1], dirs[1][0])
    da = (a1 - a0) % (2 * math.pi)
    return [
        _segment(o, dirs[0], 1.0, mirror_code(0)),
        _plane_arc(o, 1.0, a0, da, OUTER_CODE),
        _segment(dirs[1], -dirs[1], 1.0, mirror_code(1)),
    ]


def _hole_interval(curve_kind: str, curve: _Curve, data, c: np.ndarray, r: float):
    """Parameter intervals of ``curve`` lying inside the hole (c, r)."""
    L = curve.length
    out = []
    if curve_kind == "great":
        p0, t = data
        A, B = p0 @ c, t @ c
        rho = math.hypot(A, B)
        if rho <= math.cos(r):
            return out
        phi = math.atan2(B, A)
        alpha = math.acos(min(1.0, math.cos(r) / rho))
        for shift in (-2 * math.pi, 0.0, 2 * math.pi):
            lo, hi = phi + shift - alpha, phi + shift + alpha
            if hi > 0 and lo < L:
                out.append((max(lo, 0.0), min(hi, L)))
    elif curve_kind == "segment":
        p0, d = data
        q = p0 - c
        b = d @ q
        disc = b * b - (q @ q - r * r)
        if disc <= 0:
            return out
        lo, hi = -b - math.sqrt(disc), -b + math.sqrt(disc)
        if hi > 0 and lo < L:
            out.append((max(lo, 0.0), min(hi, L)))
    else:  # unit circle arc
        theta0, sgn = data
        if abs(np.linalg.norm(c) - 1.0) > 1e-9:
            return out
        half = 2 * math.asin(min(1.0, r / 2))
        tc = math.atan2(c[1], c[0])
        for shift in (-4 * math.pi, -2 * math.pi, 0.0, 2 * math.pi, 4 * math.pi):
            mid = sgn * (tc + shift - theta0)
            lo, hi = mid - half, mid + half
            if hi > 0 and lo < L:
                out.append((max(lo, 0.0), min(hi, L)))
    return out


def _side_kind(curve: _Curve, base: str, side_data):
    return side_data


def _build_loops(domain: PerforatedDomain, group: ReflectionGroup) -> tuple[list[_Loop], list[int]]:
    """Outer boundary loop of the chamber minus holes, plus interior hole loops.

    Returns the loops and the indices of holes fully inside the chamber.
    """
    sphere = domain.base == "sphere"
    holes = domain.holes
    in_ch = group.in_chamber(domain.centers, tol=1e-9) if holes else np.zeros(0, bool)
    on_bd = []
    inside = []
    for j, hs in enumerate(holes):
        if not in_ch[j]:
            continue
        touches = bool(group.mirrors_through(hs.center)) or (not sphere and hs.kind == BOUNDARY)
        (on_bd if touches else inside).append(j)

    if sphere:
        sides = _chamber_sides_sphere(group)
        side_data = []
        for s in sides:
            p0 = s(0.0)[0]
            t = (s(1e-3)[0] - p0 * math.cos(1e-3)) / math.sin(1e-3)
            side_data.append(("great", (p0, t / np.linalg.norm(t))))
    else:
        sides = _chamber_sides_disk(group)
        side_data = []
        for s in sides:
            if s.tag == OUTER_CODE:
                p0 = s(0.0)[0]
                p1 = s(min(1e-3, s.length))[0]
                theta0 = math.atan2(p0[1], p0[0])
                sgn = 1.0 if (p0[0] * p1[1] - p0[1] * p1[0]) > 0 else -1.0
                side_data.append(("circle", (theta0, sgn)))
            else:
                p0 = s(0.0)[0]
                d = s(1.0)[0] - p0 if s.length >= 1.0 else (s(s.length)[0] - p0) / s.length
                side_data.append(("segment", (p0, d / np.linalg.norm(d))))

    if not sides:
        # trivial sphere group: the largest hole becomes the outer loop
        if not holes:
            raise MeshError("cannot build chamber loops for the full sphere")
        j0 = int(np.argmax(domain.radii))
        c, r = holes[j0].center, holes[j0].radius
        loops = [_Loop([_small_circle_arc(c, r, 0.0, 2 * math.pi, j0)], hole=j0)]
        rest = [j for j in range(len(holes)) if j != j0]
        loops += [_Loop([_hole_full_circle(domain, j)], hole=j) for j in rest]
        return loops, rest

    offsets = np.concatenate([[0.0], np.cumsum([s.length for s in sides])])
    total = offsets[-1]
    removed = []  # (lo, hi, hole) in global parameter
    for j in on_bd:
        c, r = holes[j].center, holes[j].radius
        for si, (s, (kind, data)) in enumerate(zip(sides, side_data)):
            for lo, hi in _hole_interval(kind, s, data, c, r):
                removed.append((offsets[si] + lo, offsets[si] + hi, j))
    # merge intervals per hole (corner holes span two sides; wraps at 0)
    merged = []
    for j in on_bd:
        iv = sorted((lo, hi) for lo, hi, jj in removed if jj == j)
        if not iv:
            raise MeshError(f"hole {j} centered on the chamber boundary does not cut it")
        cur = [list(iv[0])]
        for lo, hi in iv[1:]:
            if lo <= cur[-1][1] + 1e-12:
                cur[-1][1] = max(cur[-1][1], hi)
            else:
                cur.append([lo, hi])
        if len(cur) == 2 and cur[0][0] <= 1e-12 and cur[-1][1] >= total - 1e-12:
            cur = [[cur[1][0], cur[0][1] + total]]
        if len(cur) != 1:
            raise MeshError(f"hole {j} cuts the chamber boundary more than once")
        merged.append((cur[0][0], cur[0][1], j))

    def point_at(S: float) -> np.ndarray:
        S = S % total if total > 0 else S
        si = int(np.searchsorted(offsets, S, side="right") - 1)
        si = min(si, len(sides) - 1)
        return sides[si](S - offsets[si])[0]

    if not merged:
        return [_Loop(list(sides))] + [_Loop([_hole_full_circle(domain, j)], hole=j) for j in inside], inside

    merged.sort()
    curves = []
    for idx, (lo, hi, j) in enumerate(merged):
        nlo, nhi, nj = merged[(idx + 1) % len(merged)]
        if idx + 1 == len(merged):
            nlo += total
        # hole arc from the entry point to the exit point
        curves.append(_hole_arc(domain, group, j, point_at(lo), point_at(hi)))
        curves.extend(_side_pieces(sides, offsets, hi, nlo, total))
    return [_Loop(curves)] + [_Loop([_hole_full_circle(domain, j)], hole=j) for j in inside], inside


def _side_pieces(sides, offsets, start: float, stop: float, total: float) -> list[_Curve]:
    """Sub-curves of the chamber sides covering the global parameter range [start, stop]."""
    out = []
    S = start
    eps = 1e-13
    while S < stop - eps:
        Sm = S % total
        si = int(np.searchsorted(offsets, Sm + eps, side="right") - 1)
        si = min(si, len(sides) - 1)
        side = sides[si]
        a = Sm - offsets[si]
        b = min(side.length, a + (stop - S))
        if b - a > eps:
            out.append(_sub_curve(side, a, b))
        S += (b - a) if b - a > eps else eps
    return out


def _sub_curve(curve: _Curve, a: float, b: float) -> _Curve:
    return _Curve(lambda s: curve.fn(a + s), b - a, curve.tag)


def _hole_full_circle(domain: PerforatedDomain, j: int) -> _Curve:
    h = domain.holes[j]
    if domain.base == "sphere":
        return _small_circle_arc(h.center, h.radius, 0.0, 2 * math.pi, j)
    return _plane_arc(h.center, h.radius, 0.0, 2 * math.pi, j)


def _hole_arc(domain: PerforatedDomain, group: ReflectionGroup, j: int, p: np.ndarray, q: np.ndarray) -> _Curve:
    h = domain.holes[j]
    sphere = domain.base == "sphere"
    if sphere:
        a0 = _circle_angle_sphere(h.center, p)
        a1 = _circle_angle_sphere(h.center, q)
    else:
        a0 = math.atan2(*(p - h.center)[::-1])
        a1 = math.atan2(*(q - h.center)[::-1])
    best = None
    for sgn in (1.0, -1.0):
        d = ((a1 - a0) * sgn) % (2 * math.pi) * sgn
        if sphere:
            arc = _small_circle_arc(h.center, h.radius, a0, d, j)
        else:
            arc = _plane_arc(h.center, h.radius, a0, d, j)
        mid = arc(np.array([arc.length / 2]))[0]
        margin = float(np.min(group.normals @ mid)) if group.n_generators else 1.0
        if not sphere:
            margin = min(margin, 1.0 - float(np.linalg.norm(mid)))
        if best is None or margin > best[0]:
            best = (margin, arc)
    arc = best[1]
    # pin the endpoints exactly
    fn = arc.fn
    L = arc.length

    def pinned(s, fn=fn, L=L, p=p, q=q):
        out = fn(s)
        out[s <= 0] = p
        out[s >= L] = q
        return out

    return _Curve(pinned, L, j)


# chamber triangulation ----------------------------------------------------------


def _chart_pole(domain: PerforatedDomain, group: ReflectionGroup) -> np.ndarray:
    if group.n_generators == 0:
        return domain.holes[int(np.argmax(domain.radii))].center
    return -group.chamber_center()


def _triangulate_chamber(domain: PerforatedDomain, group: ReflectionGroup, h: float, grading: float,
                         min_angle: float):
    sphere = domain.base == "sphere"
    size = _SizeField(domain, h, grading)
    loops, inside = _build_loops(domain, group)

    pts3: list[np.ndarray] = []
    codes: list[int] = []
    seg: list[tuple[int, int]] = []
    seg_tag: list[int] = []
    for loop in loops:
        loop_start = len(pts3)
        for ci, curve in enumerate(loop.curves):
            s = _sample_curve(curve, size, min_pts=3 if loop.hole is not None and len(loop.curves) == 1 else 2)
            if loop.hole is not None and len(loop.curves) == 1:
                n_min = 12
                if len(s) - 1 < n_min:
                    s = np.linspace(0, curve.length, n_min + 1)
            xs = curve(s)
            start = len(pts3)
            # the first point of each curve is the last point of the previous one
            keep = xs[:-1]
            for x in keep:
                pts3.append(x)
                codes.append(curve.tag)
            for a in range(len(keep)):
                seg.append((start + a, start + a + 1))
                seg_tag.append(curve.tag)
        # close the loop
        seg[-1] = (seg[-1][0], loop_start)
    pts3 = np.array(pts3)
    codes_arr = np.array(codes)
    # corner vertices: endpoint of the previous curve is a junction; tag with the hole if any
    seg_arr = np.array(seg)
    tags = np.array(seg_tag)
    vcode = np.full(len(pts3), INTERIOR_CODE)
    for (a, b), t in zip(seg_arr, tags):
        for v in (a, b):
            vcode[v] = _merge_code(vcode[v], t)

    if sphere:
        chart = _Chart(_chart_pole(domain, group))
        pts2 = chart.forward(pts3)
    else:
        chart = None
        pts2 = pts3.copy()
    hole_seeds = []
    for j in inside:
        c = domain.holes[j].center
        hole_seeds.append(chart.forward(c)[0] if sphere else c)
    if sphere and group.n_generators == 0:
        pass  # the outer hole is the chart exterior
    pslg = {"vertices": pts2, "segments": seg_arr, "segment_markers": (tags + 1000).reshape(-1, 1)}
    if hole_seeds:
        pslg["holes"] = np.array(hole_seeds)
    opts = f"pq{min_angle:g}Y"
    tri = triangle.triangulate(pslg, opts + "Q")
    for _ in range(25):
        v2 = tri["vertices"]
        t = tri["triangles"]
        cen = v2[t].mean(axis=1)
        if sphere:
            target = size(chart.inverse(cen)) * chart.scale(cen)
        else:
            target = size(cen)
        target_area = (math.sqrt(3) / 4) * target ** 2
        a, b = v2[t[:, 1]] - v2[t[:, 0]], v2[t[:, 2]] - v2[t[:, 0]]
        area = 0.5 * np.abs(a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0])
        if np.all(area <= 1.6 * target_area):
            break
        tri["triangle_max_area"] = target_area
        tri = triangle.triangulate(tri, "r" + opts + "aQ")
    v2 = tri["vertices"]
    nb = len(pts3)
    if not np.allclose(v2[:nb], pts2):
        raise MeshError("mesher moved boundary vertices")
    if sphere:
        verts = chart.inverse(v2)
        verts[:nb] = pts3
    else:
        verts = v2.copy()
        verts[:nb] = pts3
    vclass = np.full(len(verts), INTERIOR_CODE)
    vclass[:nb] = vcode
    tris = tri["triangles"].astype(np.int64)
    return verts, tris, vclass, seg_arr, tags


def _merge_code(old: int, new: int) -> int:
    """Precedence for vertex classes: hole > outer > mirror > interior."""

    def rank(c):
        if c >= 0:
            return 3
        if c == OUTER_CODE:
            return 2
        if c <= MIRROR_BASE:
            return 1
        return 0

    return new if rank(new) > rank(old) else old


# public entry points ------------------------------------------------------------


def icosphere(h: float) -> Mesh:
    """Subdivided icosahedron whose edge length is at most about h."""
    t = (1 + math.sqrt(5)) / 2
    v = np.array([[-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0], [0, -1, t], [0, 1, t],
                  [0, -1, -t], [0, 1, -t], [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1]], dtype=float)
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    f = np.array([[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11], [1, 5, 9], [5, 11, 4],
                  [11, 10, 2], [10, 7, 6], [7, 1, 8], [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8],
                  [3, 8, 9], [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]])
    mesh = Mesh("sphere", v, f, np.full(len(v), INTERIOR_CODE), np.zeros((0, 2), int), np.zeros(0, int),
                1.0515, np.zeros((0, 3)), np.zeros(0), 0, {"structured": "icosphere"})
    while mesh.h > h * 1.05:
        mesh = refine(mesh)
    return replace(mesh, level=0)


def _check_radii(domain: PerforatedDomain):
    for hs in domain.holes:
        if hs.radius < MIN_RADIUS:
            raise RadiusFloorError(hs.radius)


def mesh_domain(domain: PerforatedDomain, h: float, grading: float = 0.25, min_angle: float = 28.0,
                angle_floor: float = 15.0, chamber_only: bool = False) -> Mesh:
    """Mesh a perforated sphere or disk with target size ``h``.

    Near a hole of radius r the local size is ``grading * max(r, distance to
    its center)``, capped at ``h``.  With ``chamber_only`` the fundamental
    chamber itself is returned, with its mirror sides as tagged boundary.
    """
    _check_radii(domain)
    if domain.base == "sphere" and not domain.holes:
        if not chamber_only:
            return icosphere(h)
        if domain.group_or_trivial.order == 1:
            raise MeshError("chamber meshes need holes or mirrors")
    group = domain.group_or_trivial
    verts, tris, vclass, segs, tags = _triangulate_chamber(domain, group, h, grading, min_angle)
    centers, radii = domain.centers, domain.radii
    if chamber_only:
        mesh = _assemble_mesh(domain, verts, tris, vclass, segs, tags, h)
        return _orient(mesh)
    verts, tris, vclass, segs, tags = _reflect(domain, group, verts, tris, vclass, segs, tags)
    mesh = _assemble_mesh(domain, verts, tris, vclass, segs, tags, h)
    mesh = _orient(mesh)
    _validate(mesh, domain, angle_floor, group)
    return mesh


def mesh_sphere(domain: PerforatedDomain, h: float, **kw) -> Mesh:
    if domain.base != "sphere":
        raise MeshError("mesh_sphere needs a sphere domain")
    return mesh_domain(domain, h, **kw)


def mesh_disk(domain: PerforatedDomain, h: float, **kw) -> Mesh:
    if domain.base != "disk":
        raise MeshError("mesh_disk needs a disk domain")
    return mesh_domain(domain, h, **kw)


def _assemble_mesh(domain, verts, tris, vclass, segs, tags, h) -> Mesh:
    return Mesh(domain.base, verts, tris, vclass, segs, tags, h, domain.centers, domain.radii, 0,
                {"group": domain.group_or_trivial.label(), "digest": domain.digest()})


def _reflect(domain, group, verts, tris, vclass, segs, tags):
    if group.order == 1:
        keep = tags >= OUTER_CODE
        return verts, tris, vclass, segs[keep], tags[keep]
    centers = domain.centers
    ctree = cKDTree(centers) if len(centers) else None
    nv = len(verts)
    all_v, all_t, all_c, all_s, all_g = [], [], [], [], []
    for gi, g in enumerate(group.elements):
        off = gi * nv
        all_v.append(verts @ g.T)
        all_t.append(tris + off)
        cl = vclass.copy()
        cl[cl <= MIRROR_BASE] = INTERIOR_CODE
        keep_e = tags >= OUTER_CODE
        st = tags[keep_e].copy()
        if ctree is not None:
            holes_here = np.unique(np.concatenate([cl[cl >= 0], st[st >= 0]])).astype(int)
            if len(holes_here):
                _, img = ctree.query(centers[holes_here] @ g.T)
                mp = dict(zip(holes_here.tolist(), img.tolist()))
                cl = np.array([mp.get(int(c), c) if c >= 0 else c for c in cl])
                st = np.array([mp.get(int(c), c) if c >= 0 else c for c in st])
        all_c.append(cl)
        all_s.append(segs[keep_e] + off)
        all_g.append(st)
    V = np.vstack(all_v)
    T = np.vstack(all_t)
    C = np.concatenate(all_c)
    S = np.vstack(all_s) if all_s else np.zeros((0, 2), int)
    G = np.concatenate(all_g)
    # merge coincident vertices (those on mirrors)
    edge_len = np.linalg.norm(verts[tris[:, 0]] - verts[tris[:, 1]], axis=1).min()
    tol = 1e-4 * edge_len
    tree = cKDTree(V)
    pairs = tree.query_pairs(tol, output_type="ndarray")
    parent = np.arange(len(V))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for a, b in pairs:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    roots = np.array([find(a) for a in range(len(V))])
    uniq, new_index = np.unique(roots, return_inverse=True)
    V2 = V[uniq]
    C2 = np.full(len(uniq), INTERIOR_CODE)
    for old, new in enumerate(new_index):
        C2[new] = _merge_code(C2[new], C[old])
    T2 = new_index[T]
    S2 = new_index[S]
    # boundary edges can appear twice (an edge lying on a mirror is never a boundary edge)
    key = np.sort(S2, axis=1)
    _, first = np.unique(key, axis=0, return_index=True)
    return V2, T2, C2, S2[first], G[first]


def _orient(mesh: Mesh) -> Mesh:
    p = mesh.vertices[mesh.triangles]
    if mesh.base == "sphere":
        s = np.einsum("ij,ij->i", np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), p.mean(axis=1))
    else:
        a, b = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
        s = a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]
    t = mesh.triangles.copy()
    flip = s < 0
    t[flip] = t[flip][:, [0, 2, 1]]
    return replace(mesh, triangles=t)


def _validate(mesh: Mesh, domain: PerforatedDomain, angle_floor: float, group: ReflectionGroup):
    chi = mesh.euler_characteristic()
    expected = domain_euler_char(domain)
    if chi != expected:
        raise MeshError(f"mesh Euler characteristic {chi} != {expected}")
    if mesh.base == "sphere":
        err = np.abs(np.linalg.norm(mesh.vertices, axis=1) - 1).max()
        if err > 1e-12:
            raise MeshError(f"vertices off the sphere by {err:.2e}")
    worst = mesh.min_angle()
    forced = _forced_corner_angle(group, domain)
    if worst < min(angle_floor, forced - 0.5):
        raise MeshError(f"minimum angle {worst:.2f} deg below floor {angle_floor} deg")
    mesh.info["min_angle"] = worst


def _forced_corner_angle(group: ReflectionGroup, domain: PerforatedDomain) -> float:
    """Smallest chamber corner angle not removed by a hole (forces small mesh angles)."""
    worst = 180.0
    centers = domain.centers
    for (i, j), p in group.chamber_vertices():
        if len(centers) and np.min(np.linalg.norm(centers - p, axis=1)) < 1e-9:
            continue
        cosang = -group.normals[i] @ group.normals[j]
        worst = min(worst, math.degrees(math.acos(np.clip(cosang, -1, 1))))
    return worst


# refinement ----------------------------------------------------------------------


def refine(mesh: Mesh) -> Mesh:
    """Split every triangle into four; new boundary vertices go onto the exact curves."""
    V, T = mesh.vertices, mesh.triangles
    e = np.concatenate([T[:, [0, 1]], T[:, [1, 2]], T[:, [2, 0]]])
    es = np.sort(e, axis=1)
    uniq, inv = np.unique(es, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    nV = len(V)
    mids = 0.5 * (V[uniq[:, 0]] + V[uniq[:, 1]])
    mid_class = np.full(len(uniq), INTERIOR_CODE)
    # boundary edges
    be = np.sort(mesh.boundary_edges, axis=1)
    lookup = {tuple(x): k for k, x in enumerate(uniq.tolist())}
    be_idx = np.array([lookup[tuple(x)] for x in be.tolist()], dtype=int) if len(be) else np.zeros(0, int)
    if mesh.base == "sphere":
        mids /= np.linalg.norm(mids, axis=1, keepdims=True)
    for k, tag in zip(be_idx, mesh.edge_tags):
        mids[k] = _project(mesh, mids[k], int(tag))
        mid_class[k] = int(tag)
    newV = np.vstack([V, mids])
    m = nV + inv
    nT = len(T)
    m01, m12, m20 = m[:nT], m[nT:2 * nT], m[2 * nT:]
    a, b, c = T[:, 0], T[:, 1], T[:, 2]
    newT = np.vstack([
        np.column_stack([a, m01, m20]),
        np.column_stack([m01, b, m12]),
        np.column_stack([m20, m12, c]),
        np.column_stack([m01, m12, m20]),
    ])
    newB = np.vstack([
        np.column_stack([be[:, 0], nV + be_idx]),
        np.column_stack([nV + be_idx, be[:, 1]]),
    ]) if len(be) else np.zeros((0, 2), int)
    newTags = np.concatenate([mesh.edge_tags, mesh.edge_tags])
    vclass = np.concatenate([mesh.vertex_class, mid_class])
    out = replace(mesh, vertices=newV, triangles=newT, vertex_class=vclass, boundary_edges=newB,
                  edge_tags=newTags, h=mesh.h / 2, level=mesh.level + 1, info=dict(mesh.info))
    return out


def _project(mesh: Mesh, x: np.ndarray, tag: int) -> np.ndarray:
    if tag == OUTER_CODE:
        return x / np.linalg.norm(x)
    if tag <= MIRROR_BASE:
        return x
    c = mesh.hole_centers[tag]
    r = mesh.hole_radii[tag]
    if mesh.base == "sphere":
        v = x - (x @ c) * c
        v /= np.linalg.norm(v)
        return math.cos(r) * c + math.sin(r) * v
    d = x - c
    return c + r * d / np.linalg.norm(d)


def boundary_circle_error(mesh: Mesh) -> float:
    """Largest distance of a hole-boundary vertex from its exact circle."""
    worst = 0.0
    for j in np.unique(mesh.vertex_class[mesh.vertex_class >= 0]):
        x = mesh.vertices[mesh.vertex_class == j]
        c, r = mesh.hole_centers[j], mesh.hole_radii[j]
        if mesh.base == "sphere":
            err = np.abs(x @ c - math.cos(r))
        else:
            err = np.abs(np.linalg.norm(x - c, axis=1) - r)
        worst = max(worst, float(err.max()))
    return worst


# file formats ----------------------------------------------------------------------


def write_off(mesh: Mesh, path) -> None:
    """ASCII OFF plus a sidecar ``<path>.json`` with vertex classes and boundary edges."""
    V = mesh.vertices
    if V.shape[1] == 2:
        V = np.column_stack([V, np.zeros(len(V))])
    lines = ["OFF", f"{len(V)} {len(mesh.triangles)} 0"]
    lines += [" ".join(repr(float(x)) for x in row) for row in V]
    lines += [f"3 {a} {b} {c}" for a, b, c in mesh.triangles.tolist()]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    side = {
        "base": mesh.base,
        "h": mesh.h,
        "level": mesh.level,
        "vertex_class": [code_name(int(c)) for c in mesh.vertex_class],
        "boundary_edges": mesh.boundary_edges.tolist(),
        "edge_tags": [code_name(int(c)) for c in mesh.edge_tags],
        "hole_centers": mesh.hole_centers.tolist(),
        "hole_radii": mesh.hole_radii.tolist(),
        "info": mesh.info,
    }
    with open(str(path) + ".json", "w") as fh:
        json.dump(side, fh)


def read_off(path) -> Mesh:
    with open(path) as fh:
        tokens = [ln.strip() for ln in fh if ln.strip() and not ln.startswith("#")]
    if tokens[0] != "OFF":
        raise MeshError("not an OFF file")
    nv, nf, _ = (int(x) for x in tokens[1].split())
    V = np.array([[float(x) for x in ln.split()] for ln in tokens[2:2 + nv]])
    F = np.array([[int(x) for x in ln.split()[1:4]] for ln in tokens[2 + nv:2 + nv + nf]], dtype=np.int64)
    with open(str(path) + ".json") as fh:
        side = json.load(fh)
    if side["base"] == "disk":
        V = V[:, :2]
    dim = V.shape[1]
    return Mesh(
        side["base"], V, F,
        np.array([code_from_name(c) for c in side["vertex_class"]], dtype=int),
        np.array(side["boundary_edges"], dtype=np.int64).reshape(-1, 2),
        np.array([code_from_name(c) for c in side["edge_tags"]], dtype=int),
        float(side["h"]),
        np.array(side["hole_centers"], dtype=float).reshape(-1, dim),
        np.array(side["hole_radii"], dtype=float),
        int(side.get("level", 0)),
        dict(side.get("info", {})),
    )
