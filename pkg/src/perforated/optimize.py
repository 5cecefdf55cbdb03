"""Radius balancing, derivative-free maximization of mu_bar / sigma_bar, and gap sweeps."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import brentq, minimize

from . import __version__
from .analysis import EIGHT_PI, TWO_PI, GapSample
from .constructions import TOPOLOGY_PARAM, build_family, family_base
from .domain import DomainError, PerforatedDomain
from .meshing import MeshError, mesh_domain
from .spectral import SolverError, mu_bar, sigma_bar


class OptimizeError(RuntimeError):
    pass


@dataclass(frozen=True)
class Evaluation:
    objective: float
    lam_d: float
    lam_n: float
    margin: float
    digest: str
    h: float

    @property
    def balance(self) -> float:
        return self.lam_d - self.lam_n


def evaluate(domain: PerforatedDomain, h: float = 0.15, extrapolate: bool = True, tol: float = 1e-8,
             grading: float = 0.25) -> Evaluation:
    """mu_bar on the sphere or sigma_bar on the disk, with the first Dirichlet/Neumann pair."""
    mesh = mesh_domain(domain, h, grading=grading)
    if domain.base == "sphere":
        res, _, _ = mu_bar(domain, mesh, tol, extrapolate)
        value, a, b = res.mu_bar, res.lam_d, res.lam_n
        scale = res.area
    else:
        res, _, _ = sigma_bar(domain, mesh, tol, extrapolate)
        value, a, b = res.sigma_bar, res.sig_d, res.sig_n
        scale = res.gamma1_length
    m = res.margin_d if a <= b else res.margin_n
    return Evaluation(value, a, b, m * scale, domain.digest(), h)


# balance ----------------------------------------------------------------------------


@dataclass
class BalanceResult:
    r: float
    evaluation: Evaluation
    iterations: list
    bracket: tuple

    def to_json(self) -> dict:
        return {"r": self.r, "evaluation": asdict(self.evaluation), "iterations": self.iterations,
                "bracket": list(self.bracket), "version": __version__}


def balance_radius(family: str, params: dict | None = None, r_bracket=(math.exp(-8), math.exp(-1)),
                   tol: float = 1e-2, h: float = 0.15, radius_key: str = "radius", max_iter: int = 60,
                   extrapolate: bool = True) -> BalanceResult:
    """Brent root search on log r for the radius where the first Dirichlet and Neumann values meet.

    The Dirichlet value grows with r while the Neumann value falls, so the sign
    of lambda^D - lambda^N changes once across a valid bracket.
    """
    params = dict(params or {})
    iterations: list = []

    def at(log_r: float) -> Evaluation:
        r = math.exp(log_r)
        dom = build_family(family, **params, **{radius_key: r})
        if not dom.holes:
            raise OptimizeError("balance needs a domain with holes")
        ev = evaluate(dom, h, extrapolate)
        iterations.append({"r": r, "lam_d": ev.lam_d, "lam_n": ev.lam_n, "objective": ev.objective})
        return ev

    lo, hi = math.log(r_bracket[0]), math.log(r_bracket[1])
    hi = _feasible_upper(family, params, radius_key, lo, hi)
    r_bracket = (math.exp(lo), math.exp(hi))
    ev_lo, ev_hi = at(lo), at(hi)
    if not (ev_lo.balance < 0 < ev_hi.balance):
        raise OptimizeError(
            "invalid bracket: need lambda_D < lambda_N at r_lo and lambda_D > lambda_N at r_hi; got "
            f"r_lo={r_bracket[0]:.3g} (D={ev_lo.lam_d:.6g}, N={ev_lo.lam_n:.6g}), "
            f"r_hi={r_bracket[1]:.3g} (D={ev_hi.lam_d:.6g}, N={ev_hi.lam_n:.6g})")
    state = {"best": min((ev_lo, lo), (ev_hi, hi), key=lambda p: abs(p[0].balance))}

    def balance(log_r: float) -> float:
        if log_r == lo:
            return ev_lo.balance
        if log_r == hi:
            return ev_hi.balance
        ev = at(log_r)
        if abs(ev.balance) < abs(state["best"][0].balance):
            state["best"] = (ev, log_r)
        if abs(ev.balance) <= tol:
            raise _Balanced
        return ev.balance

    if abs(state["best"][0].balance) > tol:
        try:
            brentq(balance, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=max_iter)
        except _Balanced:
            pass
        except RuntimeError:
            pass
    best, best_r = state["best"]
    if abs(best.balance) > tol:
        raise OptimizeError(f"root search did not reach |lambda_D - lambda_N| <= {tol}; "
                            f"best {abs(best.balance):.3g} at r={math.exp(best_r):.6g}")
    return BalanceResult(math.exp(best_r), best, iterations, tuple(r_bracket))


class _Balanced(Exception):
    pass


def _feasible_upper(family: str, params: dict, radius_key: str, lo: float, hi: float,
                    shrink: float = 0.9) -> float:
    """Largest log r <= hi for which the family still has disjoint holes (times ``shrink``)."""

    def ok(log_r):
        try:
            build_family(family, **params, **{radius_key: math.exp(log_r)})
            return True
        except DomainError:
            return False

    if ok(hi):
        return hi
    if not ok(lo):
        raise OptimizeError(f"family {family} is infeasible already at r={math.exp(lo):.3g}")
    a, b = lo, hi
    for _ in range(40):
        mid = 0.5 * (a + b)
        a, b = (mid, b) if ok(mid) else (a, mid)
    return a + math.log(shrink)


def scan_monotone(family: str, params: dict, radii, h: float = 0.15, radius_key: str = "radius") -> list[Evaluation]:
    """Evaluations along a radius grid (used to confirm monotonicity of the Dirichlet value)."""
    return [evaluate(build_family(family, **params, **{radius_key: r}), h) for r in radii]


@dataclass
class TunedConstant:
    c: float
    values: dict
    tried: list

    def to_json(self) -> dict:
        return {"c": self.c, "values": {str(k): asdict(v) for k, v in self.values.items()},
                "tried": self.tried, "version": __version__}


def tune_constant(family: str, counts, c_grid=(0.5, 0.4, 0.3, 0.2, 0.1), dirichlet_floor: float = 0.98,
                  h: float = 0.1, fixed: dict | None = None) -> TunedConstant:
    """Largest c on the grid for which every count keeps the Dirichlet value on top.

    A candidate c is accepted when, for each count n, lambda_D >= dirichlet_floor
    and lambda_D >= lambda_N, so the objective is set by the Neumann side.
    """
    fixed = dict(fixed or {})
    key = TOPOLOGY_PARAM[family]
    tried = []
    for c in sorted(c_grid, reverse=True):
        values, ok = {}, True
        for n in counts:
            try:
                ev = evaluate(build_family(family, **fixed, **{key: n, "c": c}), h)
            except (DomainError, MeshError) as exc:
                tried.append({"c": c, key: n, "error": str(exc)})
                ok = False
                break
            values[n] = ev
            tried.append({"c": c, key: n, "lam_d": ev.lam_d, "lam_n": ev.lam_n})
            if ev.lam_d < dirichlet_floor or ev.lam_d < ev.lam_n:
                ok = False
                break
        if ok:
            return TunedConstant(c, values, tried)
    raise OptimizeError(f"no c in {list(c_grid)} keeps the Dirichlet value on top for {family}")


# maximization -----------------------------------------------------------------------------


@dataclass
class OptProblem:
    family: str
    fixed: dict
    variables: list  # names of family parameters to vary; "radius" is searched in log scale
    bounds: list  # (lo, hi) per variable, in the search coordinates
    objective: str = "auto"  # mu-bar | sigma-bar | auto
    h_schedule: tuple = (0.2, 0.15)
    tol_schedule: tuple = (1e-6, 1e-8)
    restarts: int = 2
    seed: int = 0
    max_evals: int = 60
    xatol: float = 1e-3

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, data: dict) -> "OptProblem":
        data = dict(data)
        for key in ("h_schedule", "tol_schedule"):
            if key in data:
                data[key] = tuple(data[key])
        data["bounds"] = [tuple(b) for b in data["bounds"]]
        return cls(**data)

    def params_at(self, x) -> dict:
        out = dict(self.fixed)
        for name, v in zip(self.variables, x):
            out[name] = math.exp(v) if name in ("radius", "r") else float(v)
        return out


@dataclass
class OptTrace:
    iterates: list = field(default_factory=list)
    accepted: list = field(default_factory=list)
    best: dict | None = None
    status: str = "running"
    failures: int = 0

    def to_jsonl(self) -> str:
        return "".join(json.dumps(it, sort_keys=True) + "\n" for it in self.iterates)

    def to_json(self) -> dict:
        return {"best": self.best, "status": self.status, "failures": self.failures,
                "n_iterates": len(self.iterates), "accepted": self.accepted, "version": __version__}


def maximize(problem: OptProblem, log=None) -> OptTrace:
    """Seeded Nelder-Mead on the family parameters along the mesh schedule.

    The first (coarsest) stage runs from the box center plus ``restarts`` random
    starts without extrapolation; each later stage polishes the best point with
    extrapolated evaluations and a smaller simplex.  The final point is certified
    at the last mesh size.
    """
    if problem.family not in TOPOLOGY_PARAM:
        raise OptimizeError(f"unknown family {problem.family!r}")
    if len(problem.variables) != len(problem.bounds):
        raise OptimizeError("one bound pair per variable is required")
    rng = np.random.default_rng(problem.seed)
    lo = np.array([b[0] for b in problem.bounds], dtype=float)
    hi = np.array([b[1] for b in problem.bounds], dtype=float)
    trace = OptTrace()
    best_val = -math.inf
    n_stages = len(problem.h_schedule)
    tols = list(problem.tol_schedule) + [problem.tol_schedule[-1]] * n_stages

    def make_objective(stage: int):
        h, tol = problem.h_schedule[stage], tols[stage]
        extrapolate = stage > 0
        cache: dict = {}

        def objective(x) -> float:
            nonlocal best_val
            x = np.clip(np.asarray(x, dtype=float), lo, hi)
            key = tuple(np.round(x, 12))
            if key in cache:
                return cache[key]
            params = problem.params_at(x)
            record = {"x": x.tolist(), "params": _plain(params), "stage": stage, "h": h}
            try:
                dom = build_family(problem.family, **params)
                ev = evaluate(dom, h, extrapolate=extrapolate, tol=tol)
            except (DomainError, MeshError, SolverError, ValueError) as exc:
                trace.failures += 1
                record.update(status="failed", error=str(exc))
                trace.iterates.append(record)
                if log:
                    log(record)
                cache[key] = 1e6
                return 1e6
            record.update(status="ok", objective=ev.objective, lam_d=ev.lam_d, lam_n=ev.lam_n, digest=ev.digest)
            trace.iterates.append(record)
            if stage == n_stages - 1 or n_stages == 1:
                if ev.objective > best_val:
                    best_val = ev.objective
                    trace.accepted.append(record)
            if log:
                log(record)
            cache[key] = -ev.objective
            return -ev.objective

        return objective

    def stage_best(stage: int):
        ok = [it for it in trace.iterates if it.get("status") == "ok" and it["stage"] == stage]
        return max(ok, key=lambda it: it["objective"]) if ok else None

    objective = make_objective(0)
    starts = [0.5 * (lo + hi)] + [lo + (hi - lo) * rng.random(len(lo)) for _ in range(problem.restarts)]
    for x0 in starts:
        if len(trace.iterates) >= problem.max_evals:
            break
        minimize(objective, x0, method="Nelder-Mead",
                 options={"xatol": problem.xatol, "fatol": 1e-9, "maxfev": problem.max_evals,
                          "initial_simplex": _simplex(x0, lo, hi)})
    best = stage_best(0)
    if best is None:
        trace.status = "failed"
        raise OptimizeError("every objective evaluation failed")
    for stage in range(1, n_stages):
        objective = make_objective(stage)
        x0 = np.asarray(best["x"], dtype=float)
        minimize(objective, x0, method="Nelder-Mead",
                 options={"xatol": problem.xatol, "fatol": 1e-9, "maxfev": max(8, problem.max_evals // 2),
                          "initial_simplex": _simplex(x0, lo, hi, 0.02)})
        best = stage_best(stage) or best
    params = problem.params_at(best["x"])
    dom = build_family(problem.family, **params)
    h1 = problem.h_schedule[-1]
    final = evaluate(dom, h1, extrapolate=True, tol=tols[n_stages - 1])
    trace.best = dict(best, certified_objective=final.objective, certified_lam_d=final.lam_d,
                      certified_lam_n=final.lam_n, certified_margin=final.margin, certified_h=h1)
    trace.status = "converged"
    return trace


def _simplex(x0, lo, hi, frac: float = 0.1):
    n = len(x0)
    step = frac * (hi - lo)
    pts = [x0]
    for i in range(n):
        p = x0.copy()
        p[i] = p[i] + step[i] if p[i] + step[i] <= hi[i] else p[i] - step[i]
        pts.append(p)
    return np.array(pts)


def _plain(d: dict) -> dict:
    return {k: (v.label() if hasattr(v, "label") else v) for k, v in d.items()}


# sweeps ------------------------------------------------------------------------------------


@dataclass
class SweepResult:
    samples: list
    failures: list

    def to_json(self) -> dict:
        return {"samples": [s.to_json() for s in self.samples], "failures": self.failures, "version": __version__}


def gap_of(domain: PerforatedDomain, ev: Evaluation) -> float:
    return (EIGHT_PI if domain.base == "sphere" else TWO_PI) - ev.objective


def sweep(family: str, grid, optimize_each: bool = False, h: float = 0.15, balance_opts: dict | None = None,
          param_name: str | None = None, log=None) -> SweepResult:
    """One GapSample per grid point, with formula radii or balanced radii.

    Failures are collected and reported, never raised.
    """
    param_name = param_name or TOPOLOGY_PARAM.get(family, "n")
    samples, failures = [], []
    for point in grid:
        point = dict(point)
        try:
            if optimize_each:
                bal = balance_radius(family, point, h=h, **(balance_opts or {}))
                dom = build_family(family, **point, radius=bal.r)
                ev = bal.evaluation
                source = "balance"
                extra = {"r": bal.r, "evaluations": len(bal.iterations)}
            else:
                dom = build_family(family, **point)
                ev = evaluate(dom, h)
                source = "formula"
                extra = {"r": float(dom.radii.min()) if dom.holes else 0.0}
            extra.update(lam_d=ev.lam_d, lam_n=ev.lam_n, objective=ev.objective, h=h)
            s = GapSample(float(point.get(param_name, 0)), gap_of(dom, ev), dom.digest(), ev.margin, source,
                          family, _plain(extra) | {"params": _plain(point)})
            samples.append(s)
            if log:
                log(s.to_json())
        except Exception as exc:  # noqa: BLE001 - a failed grid point must not abort the sweep
            failures.append({"params": _plain(point), "error": f"{type(exc).__name__}: {exc}"})
            if log:
                log(failures[-1])
    return SweepResult(samples, failures)


def family_objective(family: str) -> str:
    return "mu-bar" if family_base(family) == "sphere" else "sigma-bar"
