"""P1 finite elements for Laplace and Steklov eigenproblems on perforated domains."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.spatial import cKDTree

from . import __version__
from .domain import PerforatedDomain, exact_measures
from .meshing import INTERIOR_CODE, MIRROR_BASE, OUTER_CODE, Mesh, code_name

DIRICHLET = "dirichlet"
NEUMANN = "neumann"
STEKLOV = "steklov"
_KINDS = (DIRICHLET, NEUMANN, STEKLOV)

DENSE_LIMIT = 1500
MARGIN_FACTOR = 3.0  # certified margin = 3 |extrapolated - fine|
STEKLOV_DENSE_LIMIT = 600


def factorize(A):
    """Sparse LU of a symmetric positive definite matrix with a fill-reducing symmetric ordering."""
    return spla.splu(sp.csc_matrix(A), permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                     options={"SymmetricMode": True})


class AssemblyError(ValueError):
    pass


class SolverError(RuntimeError):
    def __init__(self, message: str, history=None):
        super().__init__(message)
        self.history = list(history or [])


# assembly ------------------------------------------------------------------------


@dataclass(frozen=True)
class Operators:
    K: sp.csr_matrix
    M: sp.csr_matrix
    B: dict  # tag -> boundary mass on that tag's edges

    def boundary_mass(self, tags) -> sp.csr_matrix:
        out = sp.csr_matrix(self.K.shape)
        for t in tags:
            if t in self.B:
                out = out + self.B[t]
        return out


def assemble(mesh: Mesh) -> Operators:
    """Stiffness, lumped-free consistent mass and per-tag boundary mass."""
    V, T = mesh.vertices, mesh.triangles
    n = len(V)
    p0, p1, p2 = V[T[:, 0]], V[T[:, 1]], V[T[:, 2]]
    e0, e1, e2 = p2 - p1, p0 - p2, p1 - p0  # edge opposite each vertex
    if V.shape[1] == 2:
        twice = e2[:, 0] * (-e1[:, 1]) - e2[:, 1] * (-e1[:, 0])
        area = 0.5 * np.abs(twice)
    else:
        area = 0.5 * np.linalg.norm(np.cross(e2, -e1), axis=1)
    longest = np.max([np.einsum("ij,ij->i", e, e) for e in (e0, e1, e2)], axis=0)
    bad = np.flatnonzero(area <= 1e-10 * longest)
    if len(bad):
        raise AssemblyError(f"degenerate triangle {int(bad[0])} with vertices {T[bad[0]].tolist()}")
    E = (e0, e1, e2)
    rows, cols, kv, mv = [], [], [], []
    for a in range(3):
        for b in range(3):
            rows.append(T[:, a])
            cols.append(T[:, b])
            kv.append(np.einsum("ij,ij->i", E[a], E[b]) / (4 * area))
            mv.append(area / (6 if a == b else 12))
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    K = sp.coo_matrix((np.concatenate(kv), (rows, cols)), shape=(n, n)).tocsr()
    M = sp.coo_matrix((np.concatenate(mv), (rows, cols)), shape=(n, n)).tocsr()
    K = 0.5 * (K + K.T)
    B = {}
    if len(mesh.boundary_edges):
        be = mesh.boundary_edges
        length = np.linalg.norm(V[be[:, 0]] - V[be[:, 1]], axis=1)
        for tag in np.unique(mesh.edge_tags):
            sel = mesh.edge_tags == tag
            e, L = be[sel], length[sel]
            r = np.concatenate([e[:, 0], e[:, 1], e[:, 0], e[:, 1]])
            c = np.concatenate([e[:, 0], e[:, 1], e[:, 1], e[:, 0]])
            v = np.concatenate([L / 3, L / 3, L / 6, L / 6])
            B[int(tag)] = sp.coo_matrix((v, (r, c)), shape=(n, n)).tocsr()
    return Operators(K.tocsr(), M.tocsr(), B)


def dump_matrix(A, path) -> None:
    """Coordinate text, one sorted ``row col value`` triple per line."""
    C = sp.coo_matrix(A)
    order = np.lexsort((C.col, C.row))
    with open(path, "w") as fh:
        for i in order:
            fh.write(f"{C.row[i]} {C.col[i]} {float(C.data[i])!r}\n")


# boundary conditions --------------------------------------------------------------


@dataclass(frozen=True)
class BoundaryCondition:
    """Assignment of dirichlet / neumann / steklov to every boundary tag of a mesh."""

    assignment: tuple  # sorted ((tag, kind), ...)

    def __post_init__(self):
        tags = [t for t, _ in self.assignment]
        if len(set(tags)) != len(tags):
            raise ValueError("boundary component assigned twice")
        for t, kind in self.assignment:
            if kind not in _KINDS:
                raise ValueError(f"unknown boundary condition {kind!r}")
            if kind == STEKLOV and not (t == OUTER_CODE or t <= MIRROR_BASE):
                raise ValueError("the Steklov measure lives on the unit circle only")

    @classmethod
    def build(cls, mesh: Mesh, holes: str = NEUMANN, outer: str | None = None, mirrors: str | None = None,
              overrides: dict | None = None) -> "BoundaryCondition":
        spec = {}
        for t in np.unique(mesh.edge_tags).tolist():
            if t >= 0:
                spec[t] = holes
            elif t == OUTER_CODE:
                spec[t] = outer or NEUMANN
            else:
                spec[t] = mirrors or NEUMANN
        spec.update(overrides or {})
        return cls(tuple(sorted(spec.items())))

    def for_mesh(self, mesh: Mesh) -> "BoundaryCondition":
        have = dict(self.assignment)
        missing = [t for t in np.unique(mesh.edge_tags).tolist() if t not in have]
        if missing:
            raise ValueError(f"boundary components without a condition: {[code_name(t) for t in missing]}")
        return self

    def tags(self, kind: str) -> list[int]:
        return [t for t, k in self.assignment if k == kind]

    @property
    def has_steklov(self) -> bool:
        return bool(self.tags(STEKLOV))

    def describe(self) -> dict:
        out: dict[str, str] = {}
        for t, k in self.assignment:
            name = "hole" if t >= 0 else code_name(t)
            if name in out and out[name] != k:
                name = code_name(t)
            out[name] = k
        return out


def dirichlet_vertices(mesh: Mesh, bc: BoundaryCondition) -> np.ndarray:
    tags = bc.tags(DIRICHLET)
    mask = np.zeros(mesh.n_vertices, dtype=bool)
    if tags:
        sel = np.isin(mesh.edge_tags, tags)
        mask[mesh.boundary_edges[sel].ravel()] = True
    return mask


# results ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SpectralResult:
    problem: str  # "laplace" or "steklov"
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # nodal values, one column per eigenvalue (Dirichlet nodes are 0)
    bc: dict
    dof_count: int
    residuals: np.ndarray
    nullspace_dim: int
    h: float
    extrapolated: np.ndarray | None = None
    coarse: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def nth(self, k: int) -> float:
        """k-th eigenvalue in the usual labelling (first nonzero is 1 when constants are allowed)."""
        vals = self.best
        idx = k if self.nullspace_dim else k - 1
        return float(vals[idx])

    @property
    def best(self) -> np.ndarray:
        return self.extrapolated if self.extrapolated is not None else self.eigenvalues

    @property
    def nontrivial(self) -> np.ndarray:
        return self.best[self.nullspace_dim:]

    def margin(self, k: int) -> float:
        """Certified discretization margin for ``nth(k)`` (0 without a coarse level)."""
        if self.extrapolated is None:
            return 0.0
        idx = k if self.nullspace_dim else k - 1
        return MARGIN_FACTOR * float(abs(self.extrapolated[idx] - self.eigenvalues[idx]))

    def to_json(self) -> dict:
        out = {
            "problem": self.problem,
            "bc": self.bc,
            "eigenvalues": [float(x) for x in self.eigenvalues],
            "nullspace_dim": self.nullspace_dim,
            "dof_count": self.dof_count,
            "h": self.h,
            "residuals": [float(x) for x in self.residuals],
        }
        if self.extrapolated is not None:
            out["coarse"] = [float(x) for x in self.coarse]
            out["extrapolated"] = [float(x) for x in self.extrapolated]
        out["meta"] = dict(self.meta, version=__version__)
        return out

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1, sort_keys=False)


# solvers -----------------------------------------------------------------------------


def _gen_eigh(A, Bm, count: int, tol: float, sigma: float, history: list):
    n = A.shape[0]
    count = min(count, n - 1) if n > 1 else 1
    if n <= DENSE_LIMIT:
        w, v = sla.eigh(A.toarray(), Bm.toarray(), subset_by_index=(0, count - 1))
        return w, v
    A = sp.csc_matrix(A)
    shifted = sp.csc_matrix(A - sigma * Bm)
    lu = factorize(shifted)
    op = spla.LinearOperator(A.shape, matvec=lu.solve, dtype=float)
    # extra guard pairs so that degenerate clusters at the top are not split
    want = min(n - 2, count + max(4, count // 2))
    ncv = min(n, max(2 * want + 1, 24))
    for attempt in range(3):
        try:
            w, v = spla.eigsh(A, k=want, M=Bm, sigma=sigma, OPinv=op, which="LM", tol=tol * 1e-3,
                              ncv=ncv, maxiter=5000)
            order = np.argsort(w)[:count]
            return w[order], v[:, order]
        except spla.ArpackNoConvergence as exc:
            history.append({"attempt": attempt, "ncv": ncv, "converged": len(exc.eigenvalues)})
            ncv = min(n, 2 * ncv)
    raise SolverError("eigensolver did not converge", history)


def _residuals(A, Bm, w, v) -> np.ndarray:
    out = []
    for lam, x in zip(w, v.T):
        r = A @ x - lam * (Bm @ x)
        nb = math.sqrt(max(float(x @ (Bm @ x)), 1e-300))
        out.append(float(np.linalg.norm(r)) / nb)
    return np.array(out)


def _normalize(v, Bm):
    for j in range(v.shape[1]):
        s = math.sqrt(max(float(v[:, j] @ (Bm @ v[:, j])), 1e-300))
        v[:, j] /= s
        piv = np.argmax(np.abs(v[:, j]))
        if v[piv, j] < 0:
            v[:, j] *= -1
    return v


def solve_laplace(mesh: Mesh, bc: BoundaryCondition | None = None, count: int = 6, tol: float = 1e-8,
                  ops: Operators | None = None, robin: dict | None = None) -> SpectralResult:
    """Smallest ``count`` eigenvalues of the Laplacian, Dirichlet nodes eliminated.

    ``robin`` maps boundary tags to coefficients alpha of a du/dn + alpha u = 0
    condition; those tags must be assigned Neumann in ``bc``.  Problems with
    neither Dirichlet nor Robin part include the zero eigenvalue first.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    bc = (bc or BoundaryCondition.build(mesh)).for_mesh(mesh)
    if bc.has_steklov:
        raise ValueError("solve_laplace does not take a Steklov component")
    ops = ops or assemble(mesh)
    robin = {t: a for t, a in (robin or {}).items() if a > 0}
    kinds = dict(bc.assignment)
    if any(kinds.get(t) != NEUMANN for t in robin):
        raise ValueError("Robin coefficients need Neumann-assigned tags")
    K = ops.K
    for t, a in robin.items():
        if t in ops.B:
            K = K + a * ops.B[t]
    dmask = dirichlet_vertices(mesh, bc)
    free = np.flatnonzero(~dmask)
    A = K.tocsr()[free][:, free]
    Bm = ops.M[free][:, free]
    null = 0 if dmask.any() or robin else 1
    sigma = -1e-8 * float(A.diagonal().mean() / Bm.diagonal().mean())
    history: list = []
    w, v = _gen_eigh(A, Bm, count, tol, sigma, history)
    if null:
        w[0] = 0.0
        v[:, 0] = 1.0
    v = _normalize(v, Bm)
    res = _residuals(A, Bm, w, v)
    full = np.zeros((mesh.n_vertices, len(w)))
    full[free] = v
    meta = {"history": history, "tol": tol}
    if robin:
        meta["robin"] = {str(t): a for t, a in robin.items()}
    return SpectralResult("laplace", np.maximum(w, 0.0), full, bc.describe(), len(free), res, null, mesh.h,
                          meta=meta)


def solve_steklov(mesh: Mesh, bc: BoundaryCondition, count: int = 6, tol: float = 1e-8,
                  ops: Operators | None = None) -> SpectralResult:
    """Smallest Steklov eigenvalues K u = sigma B u via the discrete Dirichlet-to-Neumann map."""
    bc = bc.for_mesh(mesh)
    if not bc.has_steklov:
        raise ValueError("no Steklov component in the boundary condition")
    ops = ops or assemble(mesh)
    dmask = dirichlet_vertices(mesh, bc)
    B = ops.boundary_mass(bc.tags(STEKLOV))
    on_stek = np.zeros(mesh.n_vertices, dtype=bool)
    sel = np.isin(mesh.edge_tags, bc.tags(STEKLOV))
    on_stek[mesh.boundary_edges[sel].ravel()] = True
    on_stek &= ~dmask
    bdofs = np.flatnonzero(on_stek)
    idofs = np.flatnonzero(~on_stek & ~dmask)
    K = ops.K.tocsr()
    Kbb = K[bdofs][:, bdofs]
    Kbi = K[bdofs][:, idofs]
    Kii = sp.csc_matrix(K[idofs][:, idofs])
    Bbb = B[bdofs][:, bdofs]
    null = 0 if dmask.any() else 1
    history: list = []
    nb = len(bdofs)
    if nb == 0:
        raise ValueError("Steklov part has no free vertices")
    count = min(count, nb)
    if nb <= STEKLOV_DENSE_LIMIT:
        S = Kbb.toarray()
        lu = None
        if len(idofs):
            lu = factorize(Kii)
            KibT = Kbi.T.tocsc()
            step = 128
            for s0 in range(0, nb, step):
                S[:, s0:s0 + step] -= Kbi @ lu.solve(KibT[:, s0:s0 + step].toarray())
        S = 0.5 * (S + S.T)
        w, vb = sla.eigh(S, Bbb.toarray(), subset_by_index=(0, count - 1))
        vi = -lu.solve(np.asarray(Kbi.T @ vb)) if lu is not None else np.zeros((0, count))
    else:
        Kf = K[~dmask][:, ~dmask]
        Bf = B[~dmask][:, ~dmask]
        sigma = -1e-8 * float(Kf.diagonal().mean() / Bbb.diagonal().mean())
        lu = factorize(Kf - sigma * Bf)
        op = spla.LinearOperator(Kf.shape, matvec=lu.solve, dtype=float)
        want = min(nb - 1, count + max(4, count // 2))
        ncv = min(Kf.shape[0], max(2 * want + 1, 24))
        for attempt in range(3):
            try:
                wf, vf = spla.eigsh(Kf, k=want, M=Bf, sigma=sigma, OPinv=op, which="LM", tol=tol * 1e-3,
                                    ncv=ncv, maxiter=5000)
                break
            except spla.ArpackNoConvergence as exc:
                history.append({"attempt": attempt, "ncv": ncv, "converged": len(exc.eigenvalues)})
                ncv = min(Kf.shape[0], 2 * ncv)
        else:
            raise SolverError("Steklov eigensolver did not converge", history)
        order = np.argsort(wf)[:count]
        w, vfull = wf[order], vf[:, order]
        free = np.flatnonzero(~dmask)
        pos = {v: i for i, v in enumerate(free)}
        vb = vfull[[pos[v] for v in bdofs]]
        vi = vfull[[pos[v] for v in idofs]]
    if null:
        w[0] = 0.0
        vb[:, 0] = 1.0
        vi[:, 0] = 1.0
    scale = np.sqrt(np.maximum(np.einsum("ij,ij->j", vb, Bbb @ vb), 1e-300))
    vb, vi = vb / scale, vi / scale
    full = np.zeros((mesh.n_vertices, len(w)))
    full[bdofs] = vb
    full[idofs] = vi
    free = np.flatnonzero(~dmask)
    res = _residuals(K[free][:, free], B[free][:, free], w, full[free])
    return SpectralResult("steklov", np.maximum(w, 0.0), full, bc.describe(), len(free), res, null, mesh.h,
                          meta={"history": history, "tol": tol, "boundary_dofs": nb})


# extrapolation -------------------------------------------------------------------------


def richardson(coarse: np.ndarray, fine: np.ndarray, order: float = 2.0) -> np.ndarray:
    """Extrapolate eigenvalues from meshes of size h and h/2 assuming error ~ h^order."""
    f = 2.0 ** order
    n = min(len(coarse), len(fine))
    return (f * np.asarray(fine[:n]) - np.asarray(coarse[:n])) / (f - 1)


def with_extrapolation(coarse: SpectralResult, fine: SpectralResult) -> SpectralResult:
    ext = richardson(coarse.eigenvalues, fine.eigenvalues)
    n = len(ext)
    if fine.nullspace_dim:
        ext[: fine.nullspace_dim] = 0.0
    return SpectralResult(fine.problem, fine.eigenvalues[:n], fine.eigenvectors[:, :n], fine.bc, fine.dof_count,
                          fine.residuals[:n], fine.nullspace_dim, fine.h, ext, coarse.eigenvalues[:n],
                          dict(fine.meta, coarse_dofs=coarse.dof_count))


def certified(mesh: Mesh, solve, refine_fn=None) -> SpectralResult:
    """Run ``solve(mesh)`` on ``mesh`` and its refinement and attach the extrapolant."""
    from .meshing import refine

    fine_mesh = (refine_fn or refine)(mesh)
    return with_extrapolation(solve(mesh), solve(fine_mesh))


# normalized first eigenvalues ---------------------------------------------------------------


@dataclass(frozen=True)
class MuBar:
    lam_d: float
    lam_n: float
    mu_bar: float
    area: float
    margin_d: float = 0.0
    margin_n: float = 0.0


def _laplace_pair(mesh: Mesh, tol: float, count: int, ops=None):
    ops = ops or assemble(mesh)
    neu = solve_laplace(mesh, BoundaryCondition.build(mesh, holes=NEUMANN), count + 1, tol, ops)
    dirr = None
    if (mesh.edge_tags >= 0).any():
        dirr = solve_laplace(mesh, BoundaryCondition.build(mesh, holes=DIRICHLET), count, tol, ops)
    return dirr, neu


def mu_bar(domain: PerforatedDomain, mesh: Mesh, tol: float = 1e-8, extrapolate: bool = False,
           count: int = 1) -> tuple[MuBar, SpectralResult | None, SpectralResult]:
    """First Dirichlet and first nonzero Neumann eigenvalue and the area-normalized minimum.

    The area is the exact area of the domain.  With ``extrapolate`` the mesh is
    refined once and Richardson values are used.
    """
    dirr, neu = _laplace_pair(mesh, tol, count)
    if extrapolate:
        from .meshing import refine

        fd, fn = _laplace_pair(refine(mesh), tol, count)
        neu = with_extrapolation(neu, fn)
        dirr = with_extrapolation(dirr, fd) if dirr is not None else None
    area = exact_measures(domain).area
    lam_n = neu.nth(1)
    lam_d = dirr.nth(1) if dirr is not None else math.inf
    out = MuBar(lam_d, lam_n, area * min(lam_d, lam_n), area,
                dirr.margin(1) if dirr is not None else 0.0, neu.margin(1))
    return out, dirr, neu


@dataclass(frozen=True)
class SigmaBar:
    sig_d: float
    sig_n: float
    sigma_bar: float
    gamma1_length: float
    margin_d: float = 0.0
    margin_n: float = 0.0


def _steklov_pair(mesh: Mesh, tol: float, count: int):
    ops = assemble(mesh)
    neu = solve_steklov(mesh, BoundaryCondition.build(mesh, holes=NEUMANN, outer=STEKLOV), count + 1, tol, ops)
    dirr = None
    if (mesh.edge_tags >= 0).any():
        dirr = solve_steklov(mesh, BoundaryCondition.build(mesh, holes=DIRICHLET, outer=STEKLOV), count, tol, ops)
    return dirr, neu


def sigma_bar(domain: PerforatedDomain, mesh: Mesh, tol: float = 1e-8, extrapolate: bool = False,
              count: int = 1) -> tuple[SigmaBar, SpectralResult | None, SpectralResult]:
    """First mixed Steklov eigenvalues (Dirichlet / Neumann on holes) and the Gamma_1-normalized minimum."""
    dirr, neu = _steklov_pair(mesh, tol, count)
    if extrapolate:
        from .meshing import refine

        fd, fn = _steklov_pair(refine(mesh), tol, count)
        neu = with_extrapolation(neu, fn)
        dirr = with_extrapolation(dirr, fd) if dirr is not None else None
    L = exact_measures(domain).gamma1_length
    s_n = neu.nth(1)
    s_d = dirr.nth(1) if dirr is not None else math.inf
    out = SigmaBar(s_d, s_n, L * min(s_d, s_n), L, dirr.margin(1) if dirr is not None else 0.0, neu.margin(1))
    return out, dirr, neu


# holes below the mesh floor ------------------------------------------------------------------


@dataclass(frozen=True)
class Condensed:
    """A domain whose smallest holes were widened to ``rho0`` with matching Robin data."""

    domain: PerforatedDomain
    robin: dict  # hole index -> Robin coefficient on the widened circle
    radii: np.ndarray  # the original radii
    rho0: float


def annulus_robin(base: str, r: float, rho0: float) -> float:
    """Robin coefficient reproducing the radial harmonic profile of the annulus r < rho < rho0.

    That profile is log(tan(rho/2)/tan(r/2)) on the sphere and log(rho/r) in the
    plane; it vanishes on the true hole and its log-derivative at rho0 gives alpha.
    """
    if not 0 < r < rho0:
        raise ValueError("need 0 < r < rho0")
    if base == "sphere":
        return 1.0 / (math.sin(rho0) * math.log(math.tan(rho0 / 2) / math.tan(r / 2)))
    return 1.0 / (rho0 * math.log(rho0 / r))


def capacity_condense(domain: PerforatedDomain, rho0: float) -> Condensed:
    """Widen every hole of radius below ``rho0`` and record the Robin coefficient replacing it.

    The annulus between the true and the widened circle is dropped; its
    Dirichlet energy is kept exactly for radial functions through the Robin
    term, and the error is of relative order rho0^2 log(rho0/r) times the eigenvalue.
    """
    from dataclasses import replace

    holes, robin = [], {}
    for j, hole in enumerate(domain.holes):
        if hole.radius < rho0:
            robin[j] = annulus_robin(domain.base, hole.radius, rho0)
            hole = replace(hole, radius=rho0)
        holes.append(hole)
    widened = PerforatedDomain(domain.base, tuple(holes), domain.group, domain.type_sig, domain.strict,
                               dict(domain.metadata, widened_to=rho0))
    return Condensed(widened, robin, domain.radii.copy(), rho0)


def condensed_dirichlet(condensed: Condensed, mesh: Mesh, count: int = 2, tol: float = 1e-8,
                        extrapolate: bool = True) -> SpectralResult:
    """First Dirichlet values of the original domain computed on the widened one."""

    def solve(m: Mesh) -> SpectralResult:
        over = {j: NEUMANN for j in condensed.robin}
        bc = BoundaryCondition.build(m, holes=DIRICHLET, overrides=over)
        return solve_laplace(m, bc, count, tol, robin=condensed.robin)

    return certified(mesh, solve) if extrapolate else solve(mesh)


# checks used by the property suites -----------------------------------------------------------


def vertex_permutation(mesh: Mesh, g: np.ndarray, tol: float = 1e-8) -> np.ndarray:
    """perm with g @ vertices[i] == vertices[perm[i]]."""
    d, perm = cKDTree(mesh.vertices).query(mesh.vertices @ g.T)
    if d.max() > tol:
        raise ValueError(f"mesh is not invariant under the transformation (mismatch {d.max():.2e})")
    return perm


def eigenspace_angle(result: SpectralResult, ops: Operators, perm: np.ndarray, cluster_tol: float = 1e-6) -> float:
    """Largest M-angle between g(eigenvector) and its eigenspace, over all complete clusters."""
    w = result.eigenvalues
    V = result.eigenvectors
    M = ops.M if result.problem == "laplace" else None
    worst = 0.0
    i = 0
    n = len(w)
    while i < n:
        j = i + 1
        while j < n and abs(w[j] - w[i]) <= cluster_tol * max(1.0, abs(w[i])):
            j += 1
        if j == n and i > 0:
            break  # the last cluster may be truncated
        U = V[:, i:j]
        G = np.empty_like(U)
        G[perm] = U
        if M is None:
            Q, _ = np.linalg.qr(U)
            P = Q @ (Q.T @ G)
            num, den = np.linalg.norm(G - P, axis=0), np.linalg.norm(G, axis=0)
        else:
            gram = U.T @ (M @ U)
            coef = np.linalg.solve(gram, U.T @ (M @ G))
            Rm = G - U @ coef
            num = np.sqrt(np.maximum(np.einsum("ij,ij->j", Rm, M @ Rm), 0))
            den = np.sqrt(np.einsum("ij,ij->j", G, M @ G))
        worst = max(worst, float(np.max(np.arcsin(np.clip(num / den, 0, 1)))))
        i = j
    return worst


def coordinate_rayleigh(mesh: Mesh, ops: Operators | None = None) -> float:
    """Smallest Rayleigh quotient of a mean-zero coordinate function (upper bound for the first Neumann value)."""
    ops = ops or assemble(mesh)
    ones = np.ones(mesh.n_vertices)
    area = float(ones @ (ops.M @ ones))
    best = math.inf
    for i in range(mesh.vertices.shape[1]):
        x = mesh.vertices[:, i].copy()
        x -= float(ones @ (ops.M @ x)) / area
        best = min(best, float(x @ (ops.K @ x)) / float(x @ (ops.M @ x)))
    return best


__all__ = [
    "AssemblyError", "BoundaryCondition", "DIRICHLET", "INTERIOR_CODE", "NEUMANN", "Operators", "STEKLOV",
    "SolverError", "SpectralResult", "assemble", "certified", "coordinate_rayleigh", "dump_matrix",
    "eigenspace_angle", "mu_bar", "richardson", "sigma_bar", "solve_laplace", "solve_steklov",
    "vertex_permutation", "with_extrapolation",
]
