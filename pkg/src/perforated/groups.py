"""Finite reflection groups acting on the round sphere and the unit disk.

Every group is stored through the inward unit normals of its simple mirrors.
The closed fundamental chamber is ``{x : x . n_i >= 0 for all i}`` (intersected
with the base surface), generator ``i`` is the reflection ``I - 2 n_i n_i^T``,
and the full element list is obtained by closing the generators under
multiplication.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations

import numpy as np

SPHERE_KINDS = ("trivial", "Z2", "Dk", "Z2xDk", "tetrahedral", "octahedral", "icosahedral")
DISK_KINDS = ("trivial", "Z2", "Dn")

_PLATONIC_ORDERS = {"tetrahedral": (3, 24), "octahedral": (4, 48), "icosahedral": (5, 120)}
_ALIASES = {
    "tetra": "tetrahedral",
    "octa": "octahedral",
    "icosa": "icosahedral",
    "d": "Dk",
    "dn": "Dn",
    "dk": "Dk",
    "z2xdk": "Z2xDk",
    "z2": "Z2",
    "trivial": "trivial",
    "none": "trivial",
}

CHAMBER_TOL = 1e-10


class GroupError(ValueError):
    pass


def reflection_matrix(normal: np.ndarray) -> np.ndarray:
    n = np.asarray(normal, dtype=float)
    n = n / np.linalg.norm(n)
    return np.eye(len(n)) - 2.0 * np.outer(n, n)


def _close_under_products(generators: list[np.ndarray], dim: int, limit: int = 1000) -> np.ndarray:
    elements = [np.eye(dim)]
    keys = {_matrix_key(elements[0])}
    frontier = list(elements)
    while frontier:
        nxt = []
        for a in frontier:
            for g in generators:
                b = g @ a
                key = _matrix_key(b)
                if key not in keys:
                    keys.add(key)
                    elements.append(b)
                    nxt.append(b)
        frontier = nxt
        if len(elements) > limit:
            raise GroupError("group closure exceeded element limit")
    return np.array(elements)


def _matrix_key(m: np.ndarray) -> tuple:
    return tuple(np.round(m, 8).ravel() + 0.0)


@dataclass(frozen=True, eq=False)
class ReflectionGroup:
    """A finite reflection group given by its simple mirrors.

    ``base`` is ``"sphere"`` (3x3 matrices) or ``"disk"`` (2x2 matrices);
    ``k`` is the dihedral parameter for the ``Dk``/``Z2xDk``/``Dn`` kinds.
    """

    kind: str
    base: str
    k: int | None
    normals: np.ndarray
    elements: np.ndarray = field(repr=False)

    @property
    def dim(self) -> int:
        return 3 if self.base == "sphere" else 2

    @property
    def order(self) -> int:
        return len(self.elements)

    @property
    def generators(self) -> list[np.ndarray]:
        return [reflection_matrix(n) for n in self.normals]

    @property
    def n_generators(self) -> int:
        return len(self.normals)

    def label(self) -> str:
        if self.kind in ("Dk", "Z2xDk", "Dn"):
            return f"{self.kind}({self.k})"
        return self.kind

    def to_json(self) -> dict:
        out = {"kind": self.kind}
        if self.k is not None:
            out["k"] = int(self.k)
        return out

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ReflectionGroup):
            return NotImplemented
        return (self.kind, self.base, self.k) == (other.kind, other.base, other.k)

    def __hash__(self) -> int:
        return hash((self.kind, self.base, self.k))

    # chamber geometry -------------------------------------------------

    def in_chamber(self, points: np.ndarray, tol: float = CHAMBER_TOL) -> np.ndarray:
        pts = np.atleast_2d(points)
        if self.n_generators == 0:
            return np.ones(len(pts), dtype=bool)
        return np.all(pts @ self.normals.T >= -tol, axis=1)

    def mirrors_through(self, point: np.ndarray, tol: float = 1e-9) -> tuple[int, ...]:
        """Indices of simple mirrors containing ``point``."""
        if self.n_generators == 0:
            return ()
        d = self.normals @ np.asarray(point, dtype=float)
        return tuple(int(i) for i in np.flatnonzero(np.abs(d) <= tol))

    def fold_into_chamber(self, point: np.ndarray, max_steps: int = 10_000) -> np.ndarray:
        """Reflect ``point`` across violated mirrors until it lies in the chamber."""
        x = np.asarray(point, dtype=float).copy()
        for _ in range(max_steps):
            d = self.normals @ x if self.n_generators else np.zeros(0)
            bad = np.flatnonzero(d < -1e-15)
            if len(bad) == 0:
                return x
            n = self.normals[bad[0]]
            x = x - 2.0 * (x @ n) * n
        raise GroupError("folding into chamber did not terminate")

    def chamber_vertices(self) -> list[tuple[tuple[int, int], np.ndarray]]:
        """Mirror intersection points lying in the closed chamber.

        On the sphere two mirrors meet in an antipodal pair; each point of the
        pair inside the chamber is returned.  On the disk only the origin can be
        a mirror intersection.
        """
        out = []
        for i, j in combinations(range(self.n_generators), 2):
            if self.base == "sphere":
                d = np.cross(self.normals[i], self.normals[j])
                nd = np.linalg.norm(d)
                if nd < 1e-12:
                    continue
                d /= nd
                for s in (1.0, -1.0):
                    p = s * d
                    if self.in_chamber(p)[0]:
                        out.append(((i, j), p))
            else:
                p = np.zeros(2)
                out.append(((i, j), p))
        return out

    def chamber_center(self) -> np.ndarray:
        """A point in the interior of the chamber."""
        if self.n_generators == 0:
            return np.array([0.0, 0.0, 1.0]) if self.base == "sphere" else np.zeros(2)
        # solve x . n_i = 1 in the least-squares sense: equidistant-ish interior point
        x, *_ = np.linalg.lstsq(self.normals, np.ones(self.n_generators), rcond=None)
        if self.base == "sphere":
            if self.n_generators == 2 and self.kind == "Dk":
                # lune: pick its equatorial midpoint
                half = np.pi / (2 * self.k)
                return np.array([np.cos(half), np.sin(half), 0.0])
            x = x / np.linalg.norm(x)
        else:
            x = 0.5 * x / max(np.linalg.norm(x), 1e-300)
        if not self.in_chamber(x, tol=0.0)[0]:
            raise GroupError("failed to locate an interior chamber point")
        return x

    def orbit(self, point: np.ndarray, tol: float = 1e-9) -> np.ndarray:
        imgs = self.elements @ np.asarray(point, dtype=float)
        return unique_points(imgs, tol)

    def stabilizer_order(self, point: np.ndarray, tol: float = 1e-9) -> int:
        imgs = self.elements @ np.asarray(point, dtype=float)
        return int(np.sum(np.linalg.norm(imgs - point, axis=1) <= tol))


def unique_points(points: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    kept: list[np.ndarray] = []
    for p in points:
        if all(np.linalg.norm(p - q) > tol for q in kept):
            kept.append(p)
    return np.array(kept)


def _sphere_normals(kind: str, k: int | None) -> np.ndarray:
    if kind == "trivial":
        return np.zeros((0, 3))
    if kind == "Z2":
        return np.array([[0.0, 0.0, 1.0]])
    if kind in ("Dk", "Z2xDk"):
        a = np.pi / k
        n = [[0.0, 1.0, 0.0], [np.sin(a), -np.cos(a), 0.0]]
        if kind == "Z2xDk":
            n.append([0.0, 0.0, 1.0])
        return np.array(n)
    p = _PLATONIC_ORDERS[kind][0]
    # Coxeter diagram p-3 with the outer pair orthogonal
    n1 = np.array([1.0, 0.0, 0.0])
    n2 = np.array([-np.cos(np.pi / p), np.sin(np.pi / p), 0.0])
    a = -np.cos(np.pi / 3) / np.sin(np.pi / p)
    n3 = np.array([0.0, a, np.sqrt(1.0 - a * a)])
    return np.array([n1, n2, n3])


def _disk_normals(kind: str, k: int | None) -> np.ndarray:
    if kind == "trivial":
        return np.zeros((0, 2))
    if kind == "Z2":
        return np.array([[0.0, 1.0]])
    a = np.pi / k
    return np.array([[0.0, 1.0], [np.sin(a), -np.cos(a)]])


def _expected_order(kind: str, k: int | None) -> int:
    return {
        "trivial": 1,
        "Z2": 2,
        "Dk": 2 * (k or 0),
        "Dn": 2 * (k or 0),
        "Z2xDk": 4 * (k or 0),
    }.get(kind) or _PLATONIC_ORDERS[kind][1]


def normalize_kind(kind: str) -> str:
    key = kind.strip()
    if key in SPHERE_KINDS or key in DISK_KINDS:
        return key
    low = key.lower()
    if low in _ALIASES:
        return _ALIASES[low]
    raise GroupError(f"unknown group kind {kind!r}")


@lru_cache(maxsize=128)
def make_group(kind: str, k: int | None = None, base: str = "sphere") -> ReflectionGroup:
    """Build a reflection group by name.

    >>> make_group("Dk", 6).order
    12
    """
    kind = normalize_kind(kind)
    if base == "disk" and kind == "Dk":
        kind = "Dn"
    if base == "sphere" and kind == "Dn":
        kind = "Dk"
    allowed = SPHERE_KINDS if base == "sphere" else DISK_KINDS
    if kind not in allowed:
        raise GroupError(f"group kind {kind!r} not available on the {base}")
    if kind in ("Dk", "Z2xDk", "Dn"):
        if k is None or int(k) < 2:
            raise GroupError(f"{kind} needs k >= 2, got {k}")
        k = int(k)
    else:
        k = None
    normals = _sphere_normals(kind, k) if base == "sphere" else _disk_normals(kind, k)
    dim = 3 if base == "sphere" else 2
    gens = [reflection_matrix(n) for n in normals]
    elements = _close_under_products(gens, dim)
    expected = _expected_order(kind, k)
    if len(elements) != expected:
        raise GroupError(f"{kind} closed to {len(elements)} elements, expected {expected}")
    return ReflectionGroup(kind=kind, base=base, k=k, normals=normals, elements=elements)


def group_from_json(data: dict | None, base: str) -> ReflectionGroup:
    if not data:
        return make_group("trivial", None, base)
    return make_group(data["kind"], data.get("k"), base)
