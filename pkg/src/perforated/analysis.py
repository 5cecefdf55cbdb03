"""Checks of eigenvalue inequalities, analytic oracles and decay-rate fits."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import eigh_tridiagonal

from . import __version__
from .domain import BOUNDARY, PerforatedDomain, exact_measures
from .meshing import OUTER_CODE, Mesh
from .spectral import Operators, SpectralResult, assemble

HOLDS = "holds"
HOLDS_FITTED = "holds-with-fitted-constant"
VIOLATED = "violated"

EIGHT_PI = 8 * math.pi
TWO_PI = 2 * math.pi


class AnalysisError(ValueError):
    pass


@dataclass
class BoundReport:
    check: str
    lhs: float
    rhs: float
    verdict: str
    margin: float = 0.0
    relation: str = ">="
    constants: dict = field(default_factory=dict)
    fit: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.verdict != VIOLATED

    def to_json(self) -> dict:
        out = asdict(self)
        out["provenance"] = dict(self.provenance, version=__version__)
        return _jsonable(out)

    def csv_row(self) -> list:
        return [self.check, repr(float(self.lhs)), repr(float(self.rhs)), repr(float(self.margin)),
                self.verdict, self.provenance.get("hash", "")]


CSV_HEADER = ["id", "lhs", "rhs", "margin", "verdict", "hash"]


def reports_csv(reports) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in reports:
        w.writerow(r.csv_row())
    return buf.getvalue()


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_jsonable(v) for v in x.tolist()]
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return v if math.isfinite(v) else str(v)
    if isinstance(x, np.integer):
        return int(x)
    return x


def _verdict(lhs: float, rhs: float, margin: float, relation: str, fitted: bool = False) -> str:
    if relation == ">=":
        ok = lhs + margin >= rhs
    else:
        ok = lhs - margin <= rhs
    if not ok:
        return VIOLATED
    return HOLDS_FITTED if fitted else HOLDS


def provenance(domain: PerforatedDomain | None, result: SpectralResult | None = None, **extra) -> dict:
    out = {}
    if domain is not None:
        out["hash"] = domain.digest()
    if result is not None:
        out["h"] = result.h
        out["tol"] = result.meta.get("tol")
    out.update(extra)
    return out


# Neumann stability ---------------------------------------------------------------


def check_neumann_stability(domain: PerforatedDomain, result: SpectralResult, C: float | None = None) -> BoundReport:
    """Empirical constant (8 pi - lambda_1^N |Omega|) / |D| and, given C, the bound itself.

    ``result`` is a Neumann Laplace result (zero eigenvalue included).
    """
    m = exact_measures(domain)
    lam = result.nth(1)
    margin = result.margin(1) * m.area
    lhs = lam * m.area
    gap = EIGHT_PI - lhs
    if m.hole_area == 0:
        return BoundReport("neumann-stability", lhs, EIGHT_PI, _verdict(lhs, EIGHT_PI, margin, ">="), margin,
                           constants={"C_emp": 0.0}, provenance=provenance(domain, result))
    c_emp = gap / m.hole_area
    if C is None:
        return BoundReport("neumann-stability", lhs, EIGHT_PI - c_emp * m.hole_area, HOLDS_FITTED, margin,
                           constants={"C_emp": c_emp}, details={"hole_area": m.hole_area, "gap": gap},
                           provenance=provenance(domain, result))
    rhs = EIGHT_PI - C * m.hole_area
    return BoundReport("neumann-stability", lhs, rhs, _verdict(lhs, rhs, margin, ">=", True), margin,
                       constants={"C": C, "C_emp": c_emp}, details={"hole_area": m.hole_area, "gap": gap},
                       provenance=provenance(domain, result))


def neumann_fourth_floor(domain: PerforatedDomain, result: SpectralResult, floor: float = 4.0,
                         slack: float = 0.0) -> BoundReport:
    """Fourth Neumann eigenvalue (counting the zero one) against the floor for small holes."""
    lam = result.nth(4)
    margin = result.margin(4) + slack
    return BoundReport("neumann-fourth-floor", lam, floor, _verdict(lam, floor, margin, ">="), margin,
                       details={"hole_area": exact_measures(domain).hole_area},
                       provenance=provenance(domain, result))


def bounded_constant(check: str, values, factor: float, reference: float | None = None) -> BoundReport:
    """Sweep-level boundedness: max/min of a fitted constant stays below ``factor``.

    With ``reference`` the values are compared to ``factor * reference`` instead.
    """
    v = np.asarray(values, dtype=float)
    if len(v) == 0:
        raise AnalysisError("no values to bound")
    if reference is None:
        lo, hi = float(v.min()), float(v.max())
        if lo <= 0:
            return BoundReport(check, hi, 0.0, VIOLATED, relation="<=", details={"values": v.tolist()})
        ratio = hi / lo
        return BoundReport(check, ratio, factor, HOLDS_FITTED if ratio < factor else VIOLATED, relation="<=",
                           constants={"C": hi}, details={"values": v.tolist()})
    bound = factor * reference
    hi = float(v.max())
    return BoundReport(check, hi, bound, HOLDS_FITTED if hi <= bound else VIOLATED, relation="<=",
                       constants={"C": hi}, details={"values": v.tolist(), "reference": reference})


def empirical_eps0(hole_areas, floor_reports) -> float | None:
    """Largest hole area below which every swept fourth-eigenvalue floor holds."""
    pairs = sorted(zip(hole_areas, floor_reports), key=lambda p: p[0])
    best = None
    for a, rep in pairs:
        if rep.verdict == VIOLATED:
            break
        best = a
    return best


# Steklov stability ---------------------------------------------------------------


def check_steklov_stability(domain: PerforatedDomain, result: SpectralResult, C: float | None = None) -> BoundReport:
    """Empirical constant (1 - sigma_1^N) / (|D| + |dDisk cap D|) for a Steklov-Neumann result."""
    m = exact_measures(domain)
    cut = TWO_PI - m.gamma1_length
    size = m.hole_area + cut
    sig = result.nth(1)
    margin = result.margin(1)
    if size == 0:
        return BoundReport("steklov-stability", sig, 1.0, _verdict(sig, 1.0, margin, ">="), margin,
                           constants={"C_emp": 0.0}, provenance=provenance(domain, result))
    c_emp = (1.0 - sig) / size
    rhs = 1.0 - (c_emp if C is None else C) * size
    verdict = HOLDS_FITTED if C is None else _verdict(sig, rhs, margin, ">=", True)
    return BoundReport("steklov-stability", sig, rhs, verdict, margin,
                       constants={"C_emp": c_emp} | ({} if C is None else {"C": C}),
                       details={"hole_area": m.hole_area, "boundary_cut": cut}, provenance=provenance(domain, result))


def steklov_fourth_floor(domain: PerforatedDomain, result: SpectralResult, floor: float = 1.5) -> BoundReport:
    """sigma_3 (fourth value counting sigma_0 = 0) of the Steklov-Neumann problem against 3/2."""
    sig = result.nth(3)
    margin = result.margin(3)
    return BoundReport("steklov-fourth-floor", sig, floor, _verdict(sig, floor, margin, ">="), margin,
                       provenance=provenance(domain, result))


# Dirichlet thresholds -------------------------------------------------------------


def dirichlet_margin(domain: PerforatedDomain, result: SpectralResult, threshold: float = 2.0,
                     C: float | None = None, R: float | None = None) -> BoundReport:
    """lambda_1^D (or sigma_1^D) minus ``threshold``, with the certified margin.

    If the packing scale ``R`` is known (from the arguments or domain metadata)
    the capacity prediction C R^2 log(R/r) for 1/lambda_1^D is reported too.
    """
    lam = result.nth(1)
    margin = result.margin(1)
    details = {"excess": lam - threshold}
    R = R if R is not None else domain.metadata.get("R")
    if R is not None and len(domain.holes):
        r = float(domain.radii.min())
        scale = R * R * math.log(R / r)
        details["R2_log_R_over_r"] = scale
        details["inverse_lambda"] = 1.0 / lam
        details["ratio"] = 1.0 / (lam * scale)
        if C is not None:
            details["prediction"] = C * scale
    return BoundReport("dirichlet-threshold", lam, threshold, _verdict(lam, threshold, margin, ">="), margin,
                       constants={} if C is None else {"C": C}, details=details,
                       provenance=provenance(domain, result))


def fit_capacity_constant(samples) -> tuple[float, dict]:
    """C = max over (lambda_D, R, r) samples of 1/(lambda_D R^2 log(R/r)), with the spread of ratios."""
    ratios = np.array([1.0 / (lam * R * R * math.log(R / r)) for lam, R, r in samples])
    if len(ratios) == 0:
        raise AnalysisError("no samples")
    return float(ratios.max()), {"ratios": ratios.tolist(), "spread": float(ratios.max() / ratios.min())}


def capacity_radius(R: float, C: float) -> float:
    """Hole radius r = R exp(-1/(2 C R^2)) that pushes the first Dirichlet value above 2."""
    return R * math.exp(-1.0 / (2.0 * C * R * R))


def certify_threshold(f0_values, group: str = "trivial", pilot_divisors=(4, 64), h: float = 0.15, seed: int = 0,
                      rho0: float = 1e-3, direct_floor: float = 1e-9, threshold: float = 2.0) -> list[BoundReport]:
    """Fit C on pilot packings, apply r = R exp(-1/(2 C R^2)) and certify lambda_1^D >= threshold.

    Pilot radii are R / d for each divisor d.  Radii below ``direct_floor``
    cannot be meshed in double precision and are solved on holes widened to
    ``rho0`` with the matching annulus Robin condition.
    """
    from .constructions import vitali_pack
    from .meshing import mesh_domain
    from .spectral import DIRICHLET, BoundaryCondition, capacity_condense, certified, condensed_dirichlet, \
        solve_laplace

    def dirichlet(m):
        return solve_laplace(m, BoundaryCondition.build(m, holes=DIRICHLET), 2)

    samples = []
    for f0 in f0_values:
        R = 1.0 / math.sqrt(f0)
        for d in pilot_divisors:
            dom = vitali_pack(group, f0, r=R / d, seed=seed)
            res = certified(mesh_domain(dom, h), dirichlet)
            samples.append((res.nth(1), R, R / d))
    C, fit = fit_capacity_constant(samples)
    reports = []
    for f0 in f0_values:
        R = 1.0 / math.sqrt(f0)
        r = capacity_radius(R, C)
        dom = vitali_pack(group, f0, r=r, seed=seed)
        if r >= direct_floor:
            res = certified(mesh_domain(dom, h), dirichlet)
            route = "direct"
        else:
            cd = capacity_condense(dom, rho0)
            res = condensed_dirichlet(cd, mesh_domain(cd.domain, h))
            route = f"widened to {rho0:g} with annulus Robin data"
        rep = dirichlet_margin(dom, res, threshold, C=C, R=R)
        rep.details.update({"f0": f0, "r": r, "route": route, "holes": len(dom.holes)})
        rep.fit = dict(fit, pilots=[list(p) for p in samples])
        reports.append(rep)
    return reports


# radial oracle --------------------------------------------------------------------------


@dataclass(frozen=True)
class RadialSolution:
    a: float
    b: float
    Q: float
    R: float
    r: float

    @property
    def T(self) -> float:
        return math.pi / 2 - 20 * self.R

    def f(self, t):
        t = np.asarray(t, dtype=float)
        return self.a * np.cos(t) + self.b * (1 + np.cos(t) * np.log(np.tan(t / 2)))

    def df(self, t):
        t = np.asarray(t, dtype=float)
        return -self.a * np.sin(t) + self.b * (-np.sin(t) * np.log(np.tan(t / 2)) + np.cos(t) / np.sin(t))

    def ode_residual(self, t):
        """csc t (sin t f')' + 2 f evaluated analytically."""
        t = np.asarray(t, dtype=float)
        # (sin t f')' = cos t f' + sin t f''
        s, c = np.sin(t), np.cos(t)
        L = np.log(np.tan(t / 2))
        f2 = -self.a * c + self.b * (-c * L - 1 - 1 / (s * s))
        return (c * self.df(t) + s * f2) / s + 2 * self.f(t)


def _radial_basis(t):
    t = np.asarray(t, dtype=float)
    return np.cos(t), 1 + np.cos(t) * np.log(np.tan(t / 2))


def leqpol_oracle(R: float, r: float) -> RadialSolution:
    """Rotationally symmetric solution of Delta f = 2 f on the annulus r < t < pi/2 - 20R.

    f(r) = 0 and f(pi/2 - 20R) = 1; Q = -f'(pi/2 - 20R).
    """
    if not (0 < r < R < math.pi / 40):
        raise AnalysisError(f"need 0 < r < R < pi/40 (R={R}, r={r})")
    T = math.pi / 2 - 20 * R
    c_r, l_r = _radial_basis(r)
    c_T, l_T = _radial_basis(T)
    A = np.array([[c_r, l_r], [c_T, l_T]], dtype=float)
    det = np.linalg.det(A)
    if abs(det) < 1e-14 * np.abs(A).max() ** 2:
        raise AnalysisError("singular boundary system")
    a, b = np.linalg.solve(A, [0.0, 1.0])
    sol = RadialSolution(float(a), float(b), 0.0, R, r)
    return RadialSolution(sol.a, sol.b, float(-sol.df(T)), R, r)


def radial_ode_oracle(R: float, r: float, t_eval=None, rtol: float = 1e-13):
    """Independent solution of the same boundary problem by numerical shooting.

    Integrates f' = g / sin t, g' = -2 sin t f in s = log t with an 8th-order
    Runge-Kutta method for two fundamental solutions and combines them to meet
    the boundary values.  Returns (t, f(t), Q).
    """
    T = math.pi / 2 - 20 * R
    s0, s1 = math.log(r), math.log(T)
    if t_eval is None:
        t_eval = np.geomspace(r, T, 200)
    s_eval = np.log(np.clip(t_eval, r, T))
    s_eval[0], s_eval[-1] = max(s_eval[0], s0), min(s_eval[-1], s1)

    def rhs(s, y):
        t = math.exp(s)
        st = math.sin(t)
        return [t * y[1] / st, -2 * t * st * y[0]]

    sols = []
    for y0 in ([0.0, 1.0], [1.0, 0.0]):
        sol = solve_ivp(rhs, (s0, s1), y0, method="DOP853", rtol=rtol, atol=1e-15, t_eval=s_eval, dense_output=True)
        if not sol.success:
            raise AnalysisError(f"ODE integration failed: {sol.message}")
        sols.append(sol)
    # y = alpha * u + beta * v; f(r) = beta = 0, so f = alpha * u_f with alpha u_f(T) = 1
    u = sols[0]
    alpha = 1.0 / u.sol(s1)[0]
    f = alpha * u.y[0]
    g_T = alpha * u.sol(s1)[1]
    Q = -g_T / math.sin(T)
    return np.exp(u.t), f, float(Q)


def leqpol_grid_check(R: float, radii, tol: float = 1e-8) -> list[BoundReport]:
    """Closed form vs the shooting oracle, plus the coefficient asymptotics, for each r."""
    out = []
    for r in radii:
        sol = leqpol_oracle(R, r)
        t, f_ode, Q_ode = radial_ode_oracle(R, r)
        err = float(np.max(np.abs(sol.f(t) - f_ode)))
        out.append(BoundReport("leqpol-ode-agreement", err, tol, HOLDS if err <= tol else VIOLATED, relation="<=",
                               details={"R": R, "r": r, "Q": sol.Q, "Q_ode": Q_ode}))
        out.append(BoundReport("leqpol-a-asymptotics", abs(sol.a + math.log(r)), 5.0,
                               HOLDS_FITTED if abs(sol.a + math.log(r)) <= 5 else VIOLATED, relation="<=",
                               details={"R": R, "r": r, "a": sol.a}))
        out.append(BoundReport("leqpol-b-asymptotics", abs(sol.b - 1), 2 * math.sqrt(R),
                               HOLDS_FITTED if abs(sol.b - 1) <= 2 * math.sqrt(R) else VIOLATED, relation="<=",
                               details={"R": R, "r": r, "b": sol.b}))
    return out


def leqpol_scale(r: float, c: float = 0.038) -> float:
    """Outer scale R tied to the hole radius through R = 2 pi c^2 / log(1/r)^2."""
    return 2 * math.pi * c * c / math.log(1 / r) ** 2


# half-disk model ----------------------------------------------------------------------


def half_disk_oracle(count: int = 2, n_angle: int = 4000) -> np.ndarray:
    """Steklov values of the half-disk with Dirichlet data on the diameter, by separation of variables.

    The angular factor solves -Theta'' = nu^2 Theta on [0, pi] with zero ends
    (second-order finite differences on two grids plus one Richardson step).
    The radial factor is integrated from near the origin along the regular
    branch, and the Steklov value is R'(1) / R(1).
    """
    nus = []
    for n in (n_angle, 2 * n_angle):
        dx = math.pi / n
        d = np.full(n - 1, 2.0 / dx**2)
        e = np.full(n - 2, -1.0 / dx**2)
        nus.append(eigh_tridiagonal(d, e, select="i", select_range=(0, count - 1), eigvals_only=True))
    nu2 = (4 * nus[1] - nus[0]) / 3
    out = []
    for nu in np.sqrt(nu2):
        rho0 = 1e-3

        def rhs(rho, y, nu=nu):
            return [y[1], -y[1] / rho + nu**2 * y[0] / rho**2]

        sol = solve_ivp(rhs, (rho0, 1.0), [rho0**nu, nu * rho0 ** (nu - 1)], method="DOP853",
                        rtol=1e-12, atol=1e-15)
        if not sol.success:
            raise AnalysisError(f"radial integration failed: {sol.message}")
        R1, dR1 = sol.y[:, -1]
        out.append(dR1 / R1)
    return np.array(out)


def half_disk_check(result: SpectralResult, tol: float = 1e-2) -> list[BoundReport]:
    """Compare computed half-disk Steklov values with the separation-of-variables oracle."""
    ref = half_disk_oracle(2)
    reports = []
    for j, want in enumerate(ref, start=1):
        got = result.nth(j)
        err = abs(got - want)
        reports.append(BoundReport(f"half-disk-sigma{j}", err, tol, _verdict(err, tol, 0.0, "<="), 0.0, "<=",
                                   details={"oracle": float(want), "computed": float(got)},
                                   provenance={"h": result.h}))
    delta0 = (ref[1] - 1) / 2
    reports.append(BoundReport("half-disk-delta0", float(delta0), 0.5,
                               _verdict(abs(delta0 - 0.5), tol, 0.0, "<="), 0.0, "=="))
    return reports


# log cutoff --------------------------------------------------------------------------


@dataclass(frozen=True)
class CutoffEnergy:
    flat: float
    fem: float | None


def log_cutoff_values(points: np.ndarray, centers: np.ndarray, r: float, sphere: bool = True) -> np.ndarray:
    """phi = 2/|log r| log(d/r) clipped to [0, 1], d the distance to the nearest center."""
    d = np.full(len(points), np.inf)
    for c in np.atleast_2d(centers):
        if sphere:
            dc = np.arccos(np.clip(points @ c, -1, 1))
        else:
            dc = np.linalg.norm(points - c, axis=1)
        d = np.minimum(d, dc)
    L = abs(math.log(r))
    return np.clip(2.0 / L * np.log(np.maximum(d, r) / r), 0.0, 1.0)


def logcutoff_energy(r: float, holes: int = 1, mesh: Mesh | None = None, centers=None,
                     ops: Operators | None = None) -> CutoffEnergy:
    """Dirichlet energy of the logarithmic cutoff around ``holes`` holes of radius r.

    The flat value is the closed form 4 pi/|log r| per hole; with a mesh the
    finite element energy of the interpolated cutoff is returned as well.
    """
    if not 0 < r < 1:
        raise AnalysisError("need 0 < r < 1")
    flat = holes * 4 * math.pi / abs(math.log(r))
    fem = None
    if mesh is not None:
        ops = ops or assemble(mesh)
        c = mesh.hole_centers if centers is None else np.atleast_2d(centers)
        phi = log_cutoff_values(mesh.vertices, c, r, mesh.base == "sphere")
        fem = float(phi @ (ops.K @ phi))
    return CutoffEnergy(flat, fem)


# stability inequalities (round metric) -------------------------------------------------


@dataclass(frozen=True)
class TestFunction:
    name: str
    values: np.ndarray
    full_integral: float  # integral over the whole sphere or disk


def sphere_battery(mesh: Mesh, cutoff_radius: float | None = None) -> list[TestFunction]:
    x = mesh.vertices
    out = [TestFunction("const", np.ones(len(x)), 4 * math.pi)]
    for i, name in enumerate("xyz"):
        out.append(TestFunction(f"coord-{name}", x[:, i].copy(), 0.0))
    harmonics = {
        "Y2-xy": x[:, 0] * x[:, 1],
        "Y2-yz": x[:, 1] * x[:, 2],
        "Y2-zx": x[:, 2] * x[:, 0],
        "Y2-x2y2": x[:, 0] ** 2 - x[:, 1] ** 2,
        "Y2-3z2": 3 * x[:, 2] ** 2 - 1,
    }
    out += [TestFunction(k, v, 0.0) for k, v in harmonics.items()]
    if len(mesh.hole_centers) and cutoff_radius is not None:
        phi = log_cutoff_values(x, mesh.hole_centers, cutoff_radius)
        out.append(TestFunction("log-cutoff", phi, None))
    return out


def _w12(ops: Operators, u: np.ndarray) -> float:
    return math.sqrt(max(float(u @ (ops.K @ u)) + float(u @ (ops.M @ u)), 0.0))


def stab_ineq_check(domain: PerforatedDomain, mesh: Mesh, neumann: SpectralResult, mu_bar_value: float,
                    ops: Operators | None = None, margin: float = 0.0) -> list[BoundReport]:
    """Round-metric stability checks for a perforated sphere.

    For each test function psi: |2 int_S2 psi - lambda_1^N int_Omega psi| against
    C sqrt(delta) ||psi||_{W^{1,2}(Omega)} with delta = 8 pi - mu_bar and C fitted;
    plus the area bound |D| <= delta/2.
    """
    ops = ops or assemble(mesh)
    lam = neumann.nth(1)
    delta = EIGHT_PI - mu_bar_value
    prov = provenance(domain, neumann)
    m = exact_measures(domain)
    r_cut = float(domain.radii.min()) if len(domain.holes) else None
    rows = []
    ones = np.ones(mesh.n_vertices)
    # rescale mesh quadrature to the exact area so psi = 1 reproduces the gap exactly
    area_fix = m.area / float(ones @ (ops.M @ ones))
    for tf in sphere_battery(mesh, r_cut):
        omega_int = area_fix * float(ones @ (ops.M @ tf.values))
        full = tf.full_integral if tf.full_integral is not None else omega_int
        lhs = abs(2 * full - lam * omega_int)
        rows.append((tf.name, lhs, _w12(ops, tf.values)))
    reports = _fit_stability("stab-ineq", rows, delta, margin, prov)
    reports.append(BoundReport("hole-area-vs-gap", m.hole_area, max(delta, 0.0) / 2,
                               _verdict(m.hole_area, max(delta, 0.0) / 2, margin / 2, "<="), margin / 2,
                               relation="<=", details={"delta": delta}, provenance=prov))
    return reports


def _fit_stability(check: str, rows, delta: float, margin: float, prov: dict) -> list[BoundReport]:
    scale = math.sqrt(max(delta, 0.0))
    out = []
    consts = []
    for name, lhs, norm in rows:
        if lhs <= margin * norm + 1e-9 * max(1.0, norm):
            c = 0.0
        elif scale == 0:
            c = math.inf
        else:
            c = lhs / (scale * norm)
        consts.append(c)
        out.append((name, lhs, norm, c))
    C = max(consts) if consts else 0.0
    reports = []
    for name, lhs, norm, c in out:
        rhs = C * scale * norm
        verdict = VIOLATED if not math.isfinite(C) else (HOLDS if C == 0 else HOLDS_FITTED)
        reports.append(BoundReport(f"{check}:{name}", lhs, rhs, verdict, margin * norm, relation="<=",
                                   constants={"C": C, "C_psi": c}, details={"delta": delta, "norm": norm},
                                   provenance=prov))
    return reports


def disk_battery(mesh: Mesh, cutoff_radius: float | None = None) -> list[TestFunction]:
    x = mesh.vertices
    out = [TestFunction("const", np.ones(len(x)), None),
           TestFunction("coord-x", x[:, 0].copy(), None),
           TestFunction("coord-y", x[:, 1].copy(), None),
           TestFunction("r2", (x ** 2).sum(axis=1), None),
           TestFunction("Re-z2", x[:, 0] ** 2 - x[:, 1] ** 2, None)]
    if len(mesh.hole_centers) and cutoff_radius is not None:
        out.append(TestFunction("log-cutoff", log_cutoff_values(x, mesh.hole_centers, cutoff_radius, False), None))
    return out


def steklov_stab_check(domain: PerforatedDomain, mesh: Mesh, sigma_min: float, sigma_bar_value: float,
                       ops: Operators | None = None, margin: float = 0.0, provenance_result=None) -> list[BoundReport]:
    """|int_dOmega phi <x, nu> - sigma int_Gamma1 phi| against C sqrt(delta) ||phi|| and |D| <= C delta.

    The flux term is evaluated through the divergence theorem as
    int_Omega (2 phi + x . grad phi).
    """
    ops = ops or assemble(mesh)
    delta = TWO_PI - sigma_bar_value
    prov = provenance(domain, provenance_result)
    B1 = ops.boundary_mass([OUTER_CODE])
    x = mesh.vertices
    T = mesh.triangles
    rows = []
    r_cut = float(domain.radii.min()) if len(domain.holes) else None
    area_t = mesh.triangle_areas()
    for tf in disk_battery(mesh, r_cut):
        u = tf.values
        grad = _p1_gradients(x, T, u)
        cen = x[T].mean(axis=1)
        flux = float(np.sum(area_t * (2 * u[T].mean(axis=1) + np.einsum("ij,ij->i", cen, grad))))
        gamma = float(np.ones(len(x)) @ (B1 @ u))
        rows.append((tf.name, abs(flux - sigma_min * gamma), _w12(ops, u)))
    reports = _fit_stability("stek-stab", rows, delta, margin, prov)
    m = exact_measures(domain)
    if delta > 0:
        C = m.hole_area / delta
        verdict = HOLDS_FITTED
    else:
        C = 0.0 if m.hole_area == 0 else math.inf
        verdict = HOLDS if m.hole_area == 0 else VIOLATED
    reports.append(BoundReport("hole-est", m.hole_area, C * max(delta, 0.0), verdict, margin, relation="<=",
                               constants={"C": C}, details={"delta": delta}, provenance=prov))
    return reports


def _p1_gradients(x: np.ndarray, T: np.ndarray, u: np.ndarray) -> np.ndarray:
    p0, p1, p2 = x[T[:, 0]], x[T[:, 1]], x[T[:, 2]]
    d1, d2 = p1 - p0, p2 - p0
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    du1 = u[T[:, 1]] - u[T[:, 0]]
    du2 = u[T[:, 2]] - u[T[:, 0]]
    gx = (du1 * d2[:, 1] - du2 * d1[:, 1]) / det
    gy = (du2 * d1[:, 0] - du1 * d2[:, 0]) / det
    return np.column_stack([gx, gy])


# decay fits --------------------------------------------------------------------------------


@dataclass
class GapSample:
    param: float
    gap: float
    domain_hash: str = ""
    margin: float = 0.0
    source: str = "formula"
    family: str = ""
    extra: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return _jsonable(asdict(self))

    @classmethod
    def from_json(cls, data: dict) -> "GapSample":
        return cls(**data)


@dataclass(frozen=True)
class DecayFit:
    model: str
    rate: float  # c for exponential models, the exponent for the power model
    intercept: float
    r2: float
    residuals: tuple

    def predict(self, x):
        x = np.asarray(x, dtype=float)
        return np.exp(self.intercept + self.rate * _regressor(self.model, x)) if self.model == "power" else \
            np.exp(self.intercept - self.rate * _regressor(self.model, x))

    def to_json(self) -> dict:
        return _jsonable(asdict(self))


MODELS = ("exp-in-x", "exp-in-sqrt-x", "power")


def _regressor(model: str, x: np.ndarray) -> np.ndarray:
    if model == "exp-in-x":
        return x
    if model == "exp-in-sqrt-x":
        return np.sqrt(x)
    if model == "power":
        return np.log(x)
    raise AnalysisError(f"unknown model {model!r}; valid: {', '.join(MODELS)}")


def fit_decay(samples, model: str, min_samples: int = 4) -> DecayFit:
    """Least squares fit of log(gap) against the model regressor.

    exp-in-x: gap = A e^{-c x}; exp-in-sqrt-x: gap = A e^{-c sqrt x};
    power: gap = A x^p.  Returns c (or p), R^2 and residuals of log(gap).
    """
    if model not in MODELS:
        raise AnalysisError(f"unknown model {model!r}; valid: {', '.join(MODELS)}")
    if len(samples) < min_samples:
        raise AnalysisError(f"need at least {min_samples} samples, got {len(samples)}")
    x = np.array([s.param for s in samples], dtype=float)
    g = np.array([s.gap for s in samples], dtype=float)
    bad = np.flatnonzero(~(g > 0))
    if len(bad):
        raise AnalysisError(f"nonpositive gap at sample {int(bad[0])} ({g[bad[0]]!r})")
    X = _regressor(model, x)
    y = np.log(g)
    A = np.column_stack([np.ones_like(X), X])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    res = y - A @ coef
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(res ** 2)) / ss_tot if ss_tot > 0 else 1.0
    slope = float(coef[1])
    rate = slope if model == "power" else -slope
    return DecayFit(model, rate, float(coef[0]), r2, tuple(float(v) for v in res))


def lawson_area(genus: float) -> float:
    """Two-term area expansion 8 pi - 4 pi log 2 / genus of the Lawson surfaces."""
    if genus <= 0:
        raise AnalysisError("genus must be positive")
    if math.isinf(genus):
        return EIGHT_PI
    return EIGHT_PI - 4 * math.pi * math.log(2) / genus


def lawson_comparison(domain: PerforatedDomain, mu_bar_value: float, margin: float = 0.0) -> BoundReport:
    """Numeric comparison of mu_bar with the Lawson area at the genus m - 1 of the double (never asserted)."""
    genus = len(domain.holes) - 1
    rhs = lawson_area(genus) if genus > 0 else float("nan")
    lhs = mu_bar_value
    return BoundReport("lawson-comparison", lhs, rhs, HOLDS, margin,
                       details={"genus": genus, "difference": lhs - rhs, "reported_only": True},
                       provenance=provenance(domain))


def upper_sanity(domain: PerforatedDomain, value: float, margin: float, kind: str = "mu-bar") -> BoundReport:
    bound = EIGHT_PI if kind == "mu-bar" else TWO_PI
    return BoundReport(f"{kind}-upper", value, bound, _verdict(value, bound, margin, "<="), margin, relation="<=",
                       provenance=provenance(domain))


def fit_floor_rate(samples) -> float:
    """Smallest c with gap >= e^{-c n} for all samples: max(-log gap / n)."""
    vals = [-math.log(s.gap) / s.param for s in samples if s.gap > 0 and s.param > 0]
    if not vals:
        raise AnalysisError("no positive samples to fit a floor rate")
    return max(vals)


def gap_floor_check(samples, topology_param: str = "n", c: float | None = None,
                    fit_samples=None) -> BoundReport:
    """Every gap must stay above e^{-c n}.

    Without ``c`` the rate is fitted on ``fit_samples`` (default: every sweep
    sample, i.e. source "formula" or "balance") and then applied to all
    samples, so optimizer outputs are tested against a floor they did not help fit.
    """
    samples = list(samples)
    if not samples:
        raise AnalysisError("no samples")
    fitted = c is None
    if fitted:
        base = fit_samples if fit_samples is not None else [s for s in samples if s.source != "optimizer"]
        c = fit_floor_rate(base or samples)
    worst_ratio = math.inf
    worst = None
    for i, s in enumerate(samples):
        floor = math.exp(-c * s.param)
        ratio = (s.gap + s.margin) / floor
        if ratio < worst_ratio:
            worst_ratio, worst = ratio, i
    verdict = VIOLATED if worst_ratio < 1 - 1e-12 else (HOLDS_FITTED if fitted else HOLDS)
    s = samples[worst]
    return BoundReport("gap-floor", s.gap, math.exp(-c * s.param), verdict, s.margin,
                       constants={"c": c}, details={"param": topology_param, "worst_index": worst,
                                                    "n_samples": len(samples)})


def write_reports(reports, json_path=None, csv_path=None) -> None:
    if json_path:
        with open(json_path, "w") as fh:
            json.dump([r.to_json() for r in reports], fh, indent=1)
    if csv_path:
        with open(csv_path, "w") as fh:
            fh.write(reports_csv(reports))
