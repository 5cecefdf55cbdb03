"""Command-line front end: construct, mesh, solve, verify, sweep, optimize, report.

Outputs go to ``--out`` (default: $PERFORATED_OUT, else ./perforated-out).  Every
JSON output carries a ``provenance`` block and every CSV starts with a
``# provenance:`` comment line.  The exit status is 1 when any check in the
run is violated, 2 on usage or input errors, 0 otherwise.
"""

from __future__ import annotations

import argparse
import inspect
import json
import math
import os
import sys
from pathlib import Path

from . import __version__

OUT_ENV = "PERFORATED_OUT"
EXIT_OK, EXIT_VIOLATED, EXIT_ERROR = 0, 1, 2


class CliError(Exception):
    pass


# helpers ------------------------------------------------------------------------------------


def _out_dir(args) -> Path:
    path = Path(args.out or os.environ.get(OUT_ENV) or "perforated-out")
    path.mkdir(parents=True, exist_ok=True)
    return path


def _provenance(args, **extra) -> dict:
    out = {"version": __version__, "seed": args.seed, "threads": args.threads}
    out.update({k: v for k, v in extra.items() if v is not None})
    return out


def _dump(path: Path, data) -> Path:
    path.write_text(json.dumps(data, indent=1, sort_keys=True) + "\n")
    return path


def _write_csv(path: Path, header: list, rows, prov: dict) -> Path:
    import csv
    import io

    buf = io.StringIO()
    buf.write("# provenance: " + json.dumps(prov, sort_keys=True) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    path.write_text(buf.getvalue())
    return path


def _load_domain(path):
    from .domain import PerforatedDomain

    if path in ("sphere", "disk"):
        from .domain import full_sphere, unit_disk

        return full_sphere() if path == "sphere" else unit_disk()
    p = Path(path)
    if not p.exists():
        raise CliError(f"blueprint not found: {path}")
    data = json.loads(p.read_text())
    return PerforatedDomain.from_json(data.get("domain", data))


def _parse_value(text: str):
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def _parse_assignments(items) -> dict:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise CliError(f"expected key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = _parse_value(v.strip())
    return out


# construct ----------------------------------------------------------------------------------


def _add_family_parsers(sub) -> None:
    from .constructions import FAMILIES

    for name, fn in FAMILIES.items():
        p = sub.add_parser(name, help=(fn.__doc__ or "").strip().splitlines()[0])
        for pname, par in inspect.signature(fn).parameters.items():
            flag = "--" + pname.replace("_", "-")
            default = par.default
            required = default is inspect.Parameter.empty
            if isinstance(default, bool):
                p.add_argument(flag, dest=pname, type=lambda s: _parse_value(s) is True, default=default,
                               metavar="BOOL")
            elif pname == "seed":
                p.add_argument(flag, dest=pname, type=int, required=True, help="mandatory: packing seed")
            elif isinstance(default, int):
                p.add_argument(flag, dest=pname, type=int, default=default)
            elif isinstance(default, float):
                p.add_argument(flag, dest=pname, type=float, default=default)
            elif pname == "group":
                p.add_argument(flag, dest=pname, required=required)
            elif pname in ("k", "n", "m", "i", "e_i", "a") or "int" in str(par.annotation):
                p.add_argument(flag, dest=pname, type=int, required=required, default=None)
            else:
                p.add_argument(flag, dest=pname, type=float, required=required, default=None)
        p.add_argument("--output", help="blueprint path")
        p.set_defaults(family=name, family_params=list(inspect.signature(fn).parameters))


def cmd_construct(args) -> int:
    from .constructions import build_family

    params = {k: getattr(args, k) for k in args.family_params if getattr(args, k, None) is not None}
    dom = build_family(args.family, **params)
    digest = dom.digest()
    prov = _provenance(args, hash=digest, family=args.family, params=params)
    path = Path(args.output) if args.output else _out_dir(args) / f"{args.family}-{digest}.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    _dump(path, {"domain": dom.to_json(), "provenance": prov})
    print(json.dumps({"path": str(path), "hash": digest, "holes": len(dom.holes)}, sort_keys=True))
    return EXIT_OK


# mesh ---------------------------------------------------------------------------------------


def _mesh_for(args, dom):
    from .meshing import mesh_domain, refine

    mesh = mesh_domain(dom, args.h, grading=args.grading, chamber_only=getattr(args, "chamber_only", False))
    for _ in range(getattr(args, "refine", 0) or 0):
        mesh = refine(mesh)
    return mesh


def cmd_mesh(args) -> int:
    from .meshing import write_off

    dom = _load_domain(args.blueprint)
    mesh = _mesh_for(args, dom)
    digest = dom.digest()
    path = Path(args.output) if args.output else _out_dir(args) / f"mesh-{digest}-h{args.h:g}.off"
    write_off(mesh, path)
    summary = {"path": str(path), "vertices": int(mesh.n_vertices), "triangles": int(len(mesh.triangles)),
               "euler_characteristic": int(mesh.euler_characteristic()), "min_angle": float(mesh.min_angle()),
               "provenance": _provenance(args, hash=digest, h=args.h, refine=args.refine, grading=args.grading)}
    _dump(Path(str(path) + ".summary.json"), summary)
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


# solve --------------------------------------------------------------------------------------


def cmd_solve(args) -> int:
    from .meshing import read_off, refine
    from .spectral import DIRICHLET, NEUMANN, STEKLOV, BoundaryCondition, certified, solve_laplace, solve_steklov

    if args.mesh:
        if not Path(args.mesh).exists():
            raise CliError(f"mesh not found: {args.mesh}")
        mesh = read_off(args.mesh)
        digest = mesh.info.get("digest", "")
    elif args.blueprint:
        dom = _load_domain(args.blueprint)
        mesh = _mesh_for(args, dom)
        digest = dom.digest()
    else:
        raise CliError("solve needs --mesh or --blueprint (use --blueprint sphere|disk for the plain bases)")
    holes = args.holes or (args.bc if args.bc != STEKLOV else NEUMANN)
    mirrors = args.mirrors or NEUMANN

    if args.bc == STEKLOV:
        def solve(m):
            bc = BoundaryCondition.build(m, holes=holes, outer=STEKLOV, mirrors=mirrors)
            return solve_steklov(m, bc, args.count, args.tol)
    else:
        def solve(m):
            bc = BoundaryCondition.build(m, holes=holes, outer=args.outer or NEUMANN, mirrors=mirrors)
            return solve_laplace(m, bc, args.count, args.tol)

    if args.bc not in (DIRICHLET, NEUMANN, STEKLOV):
        raise CliError(f"unknown --bc {args.bc!r}")
    result = certified(mesh, solve, refine) if args.extrapolate else solve(mesh)
    out = result.to_json()
    out["provenance"] = _provenance(args, hash=digest, h=args.h, refine=args.refine, tol=args.tol,
                                    extrapolate=args.extrapolate)
    path = Path(args.output) if args.output else _out_dir(args) / f"solve-{digest or 'mesh'}-{args.bc}.json"
    _dump(path, out)
    vals = result.best[: args.count]
    print(json.dumps({"path": str(path), "eigenvalues": [float(v) for v in vals]}, sort_keys=True))
    return EXIT_OK


# verify -------------------------------------------------------------------------------------


def _certified_pair(dom, h, kind):
    from .meshing import mesh_domain
    from .spectral import mu_bar, sigma_bar

    mesh = mesh_domain(dom, h)
    if kind == "sphere":
        return (mesh, *mu_bar(dom, mesh, 1e-8, True, count=6))
    return (mesh, *sigma_bar(dom, mesh, 1e-8, True, count=5))


def _north_cap(r):
    import numpy as np

    from .domain import HoleSpec, PerforatedDomain

    return PerforatedDomain("sphere", (HoleSpec(np.array([0.0, 0.0, 1.0]), r),))


def _check_leqpol(args, dom):
    from .analysis import leqpol_grid_check, leqpol_scale

    reports = []
    for e in range(4, 9):
        r = 10.0 ** -e
        reports += leqpol_grid_check(leqpol_scale(r), [r])
    return reports


def _neumann_sweep(args):
    out = []
    for r in args.radii or (0.02, 0.05, 0.1, 0.2):
        d = _north_cap(r)
        _, _, _, neu = _certified_pair(d, args.h, "sphere")
        out.append((d, neu))
    return out


def _check_neumann(args, dom, spread_limit: float = 3.0):
    """One row per cap: the bound with C fitted as the sweep maximum of C_emp."""
    from .analysis import VIOLATED, check_neumann_stability

    runs = _neumann_sweep(args)
    c_emp = [check_neumann_stability(d, neu).constants["C_emp"] for d, neu in runs]
    C = max(c_emp)
    spread = C / min(c_emp) if min(c_emp) > 0 else math.inf
    reports = []
    for d, neu in runs:
        rep = check_neumann_stability(d, neu, C=C)
        rep.details.update(spread=spread, spread_limit=spread_limit)
        if not spread < spread_limit:
            rep.verdict = VIOLATED
        reports.append(rep)
    return reports


def _check_neumann_floor(args, dom):
    from .analysis import empirical_eps0, neumann_fourth_floor

    runs = _neumann_sweep(args)
    reports = [neumann_fourth_floor(d, neu, slack=0.05) for d, neu in runs]
    eps0 = empirical_eps0([r.details["hole_area"] for r in reports], reports)
    for r in reports:
        r.constants["eps0"] = eps0
    return reports


def _check_steklov(args, dom):
    import numpy as np

    from .analysis import check_steklov_stability, steklov_fourth_floor
    from .domain import HoleSpec, PerforatedDomain

    reports = []
    for r in args.radii or (0.02, 0.05, 0.1, 0.2):
        d = PerforatedDomain("disk", (HoleSpec(np.array([0.0, 0.0]), r),))
        _, res, _, neu = _certified_pair(d, args.h, "disk")
        reports += [check_steklov_stability(d, neu), steklov_fourth_floor(d, neu)]
    return reports


def _check_threshold(args, dom):
    from .analysis import certify_threshold

    return certify_threshold(args.f0 or (30, 60), h=args.h, seed=args.seed or 0)


def _need_domain(dom, name):
    if dom is None:
        raise CliError(f"--check {name} needs --blueprint")
    return dom


def _check_stab(args, dom):
    from .analysis import stab_ineq_check

    dom = _need_domain(dom, "stab-ineq")
    if dom.base != "sphere":
        raise CliError("stab-ineq runs on sphere domains; use stek-stab for the disk")
    mesh, res, _, neu = _certified_pair(dom, args.h, "sphere")
    return stab_ineq_check(dom, mesh, neu, res.mu_bar, margin=max(res.margin_d, res.margin_n) * res.area)


def _check_stek_stab(args, dom):
    from .analysis import steklov_stab_check

    dom = _need_domain(dom, "stek-stab")
    if dom.base != "disk":
        raise CliError("stek-stab runs on disk domains")
    mesh, res, _, neu = _certified_pair(dom, args.h, "disk")
    return steklov_stab_check(dom, mesh, min(res.sig_d, res.sig_n), res.sigma_bar,
                              margin=max(res.margin_d, res.margin_n) * res.gamma1_length, provenance_result=neu)


def _check_lawson(args, dom):
    from .analysis import lawson_comparison, upper_sanity

    dom = _need_domain(dom, "lawson")
    _, res, _, _ = _certified_pair(dom, args.h, "sphere")
    margin = max(res.margin_d, res.margin_n) * res.area
    return [lawson_comparison(dom, res.mu_bar, margin), upper_sanity(dom, res.mu_bar, margin)]


def _check_gap_floor(args, dom):
    from .analysis import gap_floor_check

    if not args.samples:
        raise CliError("--check gap-floor needs --samples (a sweep directory or samples file)")
    reports = []
    for family, group in _by_family(_load_samples(args.samples)).items():
        rep = gap_floor_check(group, _topology(family))
        rep.check = f"gap-floor:{family}"
        reports.append(rep)
    return reports


def _by_family(samples) -> dict:
    out: dict = {}
    for s in samples:
        out.setdefault(s.family, []).append(s)
    return out


def _check_half_disk(args, dom):
    from .analysis import half_disk_check
    from .domain import PerforatedDomain
    from .groups import make_group
    from .meshing import mesh_domain
    from .spectral import DIRICHLET, STEKLOV, BoundaryCondition, certified, solve_steklov

    half = PerforatedDomain("disk", (), make_group("Z2", base="disk"))
    mesh = mesh_domain(half, args.h, chamber_only=True)
    res = certified(mesh, lambda m: solve_steklov(
        m, BoundaryCondition.build(m, outer=STEKLOV, mirrors=DIRICHLET), 3))
    return half_disk_check(res)


CHECKS = {
    "leqpol": _check_leqpol,
    "neumann-stability": _check_neumann,
    "neumann-floor": _check_neumann_floor,
    "steklov-stability": _check_steklov,
    "dirichlet-threshold": _check_threshold,
    "stab-ineq": _check_stab,
    "stek-stab": _check_stek_stab,
    "gap-floor": _check_gap_floor,
    "lawson": _check_lawson,
    "half-disk": _check_half_disk,
}


def cmd_verify(args) -> int:
    from .analysis import VIOLATED

    if args.check not in CHECKS:
        raise CliError(f"unknown check {args.check!r}; valid: {', '.join(CHECKS)}")
    dom = _load_domain(args.blueprint) if args.blueprint else None
    reports = CHECKS[args.check](args, dom)
    digest = dom.digest() if dom is not None else ""
    prov = _provenance(args, hash=digest or None, check=args.check, h=args.h, tol=1e-8)
    out = _out_dir(args)
    stem = f"verify-{args.check}" + (f"-{digest}" if digest else "")
    rows = [r.csv_row() for r in reports]
    from .analysis import CSV_HEADER

    _write_csv(out / f"{stem}.csv", CSV_HEADER, rows, prov)
    _dump(out / f"{stem}.json", {"reports": [r.to_json() for r in reports], "provenance": prov})
    for r in reports:
        print(f"{r.check}: {r.verdict} (lhs={r.lhs:.6g}, rhs={r.rhs:.6g}, margin={r.margin:.3g})")
    return EXIT_VIOLATED if any(r.verdict == VIOLATED for r in reports) else EXIT_OK


# sweep / optimize / report -----------------------------------------------------------------


def _topology(family: str) -> str:
    from .constructions import TOPOLOGY_PARAM

    return TOPOLOGY_PARAM.get(family, "n")


def _grid(args) -> list:
    if args.grid:
        p = Path(args.grid)
        data = json.loads(p.read_text()) if p.exists() else json.loads(args.grid)
        return [dict(g) for g in data]
    fixed = _parse_assignments(args.fixed)
    key = _topology(args.family)
    values = [_parse_value(v) for v in (args.values or "").split(",") if v]
    if not values:
        raise CliError("sweep needs --values or --grid")
    return [dict(fixed, **{key: v}) for v in values]


def _sweep_point(job):
    family, point, balance, h, opts = job
    from .optimize import sweep

    return sweep(family, [point], optimize_each=balance, h=h, balance_opts=opts)


def cmd_sweep(args) -> int:
    from .analysis import GapSample  # noqa: F401 - samples are rebuilt from JSON by report
    from .constructions import FAMILIES

    if args.family not in FAMILIES:
        raise CliError(f"unknown family {args.family!r}; valid: {', '.join(FAMILIES)}")
    grid = _grid(args)
    opts = {"tol": args.balance_tol}
    if args.r_bracket:
        lo, hi = (float(x) for x in args.r_bracket.split(","))
        opts["r_bracket"] = (lo, hi)
    jobs = [(args.family, p, args.balance, args.h, opts) for p in grid]
    if args.threads and args.threads > 1 and len(jobs) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=args.threads) as pool:
            parts = list(pool.map(_sweep_point, jobs))
    else:
        parts = [_sweep_point(j) for j in jobs]
    samples = [s for part in parts for s in part.samples]
    failures = [f for part in parts for f in part.failures]
    out = _out_dir(args) / (args.name or f"sweep-{args.family}")
    out.mkdir(parents=True, exist_ok=True)
    prov = _provenance(args, family=args.family, h=args.h, balance=args.balance, tol=1e-8,
                       balance_tol=args.balance_tol if args.balance else None)
    with open(out / "samples.jsonl", "w") as fh:
        for s in samples:
            fh.write(json.dumps(dict(s.to_json(), provenance=prov), sort_keys=True) + "\n")
    _dump(out / "failures.json", {"failures": failures, "provenance": prov})
    rows = [[s.param, repr(s.gap), repr(s.margin), s.source, s.domain_hash] for s in samples]
    _write_csv(out / "samples.csv", [_topology(args.family), "gap", "margin", "source", "hash"], rows, prov)
    print(json.dumps({"dir": str(out), "samples": len(samples), "failures": len(failures)}, sort_keys=True))
    return EXIT_OK if samples or not grid else EXIT_ERROR


def cmd_optimize(args) -> int:
    from .optimize import OptProblem, maximize

    p = Path(args.config)
    if not p.exists():
        raise CliError(f"config not found: {args.config}")
    cfg = json.loads(p.read_text())
    if args.seed is not None:
        cfg["seed"] = args.seed
    problem = OptProblem.from_json(cfg)
    out = _out_dir(args) / (args.name or f"optimize-{problem.family}")
    out.mkdir(parents=True, exist_ok=True)
    trace = maximize(problem)
    prov = _provenance(args, config=problem.to_json(), tol=problem.tol_schedule[-1], h=problem.h_schedule[-1])
    (out / "trace.jsonl").write_text(trace.to_jsonl())
    # a round metric with optimized holes only bounds the supremum over invariant metrics from below
    _dump(out / "best.json", dict(trace.to_json(), bound="lower", provenance=prov))
    best = trace.best
    from .analysis import EIGHT_PI, TWO_PI, GapSample
    from .constructions import build_family, family_base

    dom = build_family(problem.family, **problem.params_at(best["x"]))
    top = EIGHT_PI if family_base(problem.family) == "sphere" else TWO_PI
    sample = GapSample(float(problem.params_at(best["x"]).get(_topology(problem.family), 0)),
                       top - best["certified_objective"], dom.digest(), best["certified_margin"], "optimizer",
                       problem.family, {"params": best["params"]})
    with open(out / "samples.jsonl", "w") as fh:
        fh.write(json.dumps(dict(sample.to_json(), provenance=prov), sort_keys=True) + "\n")
    print(json.dumps({"dir": str(out), "objective": best["certified_objective"], "gap": sample.gap},
                     sort_keys=True))
    return EXIT_OK


def _load_samples(path) -> list:
    from .analysis import GapSample

    p = Path(path)
    files = sorted(p.rglob("samples.jsonl")) if p.is_dir() else [p] if p.exists() else []
    samples = []
    for f in files:
        for line in f.read_text().splitlines():
            if line.strip():
                data = json.loads(line)
                data.pop("provenance", None)
                samples.append(GapSample.from_json(data))
    if not samples:
        raise CliError(f"no samples under {path}")
    return samples


def cmd_report(args) -> int:
    from .analysis import MODELS, VIOLATED, fit_decay, gap_floor_check

    models = [args.model] if args.model else list(MODELS)
    root = _out_dir(args) / (args.name or "report")
    violated = False
    summary_all = {}
    for family, samples in sorted(_by_family(_load_samples(args.sweep_dir)).items()):
        samples.sort(key=lambda s: (s.param, s.source))
        fits = {}
        for model in models:
            try:
                fits[model] = fit_decay([s for s in samples if s.source != "optimizer"], model, args.min_samples)
            except ValueError as exc:
                fits[model] = str(exc)
        out = root / family
        out.mkdir(parents=True, exist_ok=True)
        prov = _provenance(args, family=family, sources=sorted({s.source for s in samples}),
                           hashes=[s.domain_hash for s in samples])
        header = ["x", "gap", "margin", "source"] + [f"fit_{m}" for m in models]
        rows = []
        for s in samples:
            row = [s.param, repr(s.gap), repr(s.margin), s.source]
            for m in models:
                f = fits[m]
                row.append(repr(float(f.predict([s.param])[0])) if not isinstance(f, str) else "")
            rows.append(row)
        _write_csv(out / "gap-fit.csv", header, rows, prov)
        floor = gap_floor_check(samples, _topology(family))
        violated |= floor.verdict == VIOLATED
        summary = {m: (f.to_json() if not isinstance(f, str) else {"error": f}) for m, f in fits.items()}
        _dump(out / "rates.json", {"fits": summary, "gap_floor": floor.to_json(), "provenance": prov})
        summary_all[family] = {"fits": summary, "gap_floor": floor.verdict}
    print(json.dumps(summary_all, sort_keys=True))
    return EXIT_VIOLATED if violated else EXIT_OK


# parser -------------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./perforated-out)")
    common.add_argument("--seed", type=int, default=None, help="seed for stochastic constructions")
    common.add_argument("--threads", type=int, default=1, help="worker processes for sweeps and BLAS threads")

    parser = argparse.ArgumentParser(prog="perforated", description=__doc__.splitlines()[0], parents=[common])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("construct", parents=[common], help="write a domain blueprint for a family")
    fam = p.add_subparsers(dest="family", required=True, metavar="FAMILY")
    _add_family_parsers(fam)
    p.set_defaults(func=cmd_construct)

    mesh_opts = argparse.ArgumentParser(add_help=False)
    mesh_opts.add_argument("--h", type=float, default=0.15, help="target edge length")
    mesh_opts.add_argument("--refine", type=int, default=0, help="uniform refinements after meshing")
    mesh_opts.add_argument("--grading", type=float, default=0.25)
    mesh_opts.add_argument("--chamber-only", action="store_true", help="mesh one fundamental chamber")

    p = sub.add_parser("mesh", parents=[common, mesh_opts], help="mesh a blueprint into OFF + sidecar")
    p.add_argument("blueprint", help="blueprint JSON, or 'sphere' / 'disk'")
    p.add_argument("--output")
    p.set_defaults(func=cmd_mesh)

    p = sub.add_parser("solve", parents=[common, mesh_opts], help="eigenvalues on a mesh or blueprint")
    p.add_argument("--mesh", help="OFF mesh written by the mesh command")
    p.add_argument("--blueprint", help="blueprint JSON, or 'sphere' / 'disk'")
    p.add_argument("--bc", choices=["dirichlet", "neumann", "steklov"], default="neumann")
    p.add_argument("--holes", choices=["dirichlet", "neumann"], help="condition on hole boundaries")
    p.add_argument("--outer", choices=["dirichlet", "neumann"], help="condition on the unit circle (Laplace)")
    p.add_argument("--mirrors", choices=["dirichlet", "neumann"], help="condition on chamber mirrors")
    p.add_argument("--count", type=int, default=5)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--extrapolate", action="store_true", help="solve on the refinement too and extrapolate")
    p.add_argument("--output")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("verify", parents=[common], help="run an analysis check and write BoundReports")
    p.add_argument("--check", required=True, help="one of: " + ", ".join(CHECKS))
    p.add_argument("--blueprint", help="domain for per-domain checks")
    p.add_argument("--samples", help="sweep directory or samples.jsonl (gap-floor)")
    p.add_argument("--h", type=float, default=0.15)
    p.add_argument("--radii", type=lambda s: [float(x) for x in s.split(",")], help="hole radii for sweeps")
    p.add_argument("--f0", type=lambda s: [float(x) for x in s.split(",")], help="densities (threshold check)")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("sweep", parents=[common], help="gap samples over a family grid")
    p.add_argument("family")
    p.add_argument("--values", help="comma-separated values of the topology parameter")
    p.add_argument("--fixed", nargs="*", help="extra family parameters as key=value")
    p.add_argument("--grid", help="JSON list of parameter dicts (inline or a file)")
    p.add_argument("--balance", action="store_true", help="balance the radius at every grid point")
    p.add_argument("--balance-tol", type=float, default=1e-2)
    p.add_argument("--r-bracket", help="lo,hi radius bracket for balancing")
    p.add_argument("--h", type=float, default=0.15)
    p.add_argument("--name", help="output subdirectory name")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("optimize", parents=[common], help="maximize mu_bar / sigma_bar from a JSON config")
    p.add_argument("config")
    p.add_argument("--name")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("report", parents=[common], help="fit gap decay over finished sweeps")
    p.add_argument("sweep_dir")
    p.add_argument("--model", choices=["exp-in-x", "exp-in-sqrt-x", "power"])
    p.add_argument("--min-samples", type=int, default=3)
    p.add_argument("--name")
    p.set_defaults(func=cmd_report)
    return parser


def _limit_threads(n: int) -> None:
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(max(1, n))


def main(argv=None) -> int:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--threads", type=int, default=1)
    known, _ = pre.parse_known_args(argv)
    if "numpy" not in sys.modules:
        _limit_threads(known.threads)
    parser = build_parser()
    args = parser.parse_args(argv)
    from .constructions import DomainError
    from .meshing import MeshError
    from .optimize import OptimizeError

    try:
        return args.func(args)
    except (CliError, DomainError, MeshError, OptimizeError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
