"""Command-line entry point.

Exit codes: 0 success, 2 validation failure (the report is still written),
1 usage or I/O error.
"""

from __future__ import annotations

import argparse
import csv
import io as _stdio
import math
import sys
import time

import numpy as np

from . import io
from .diagnostics import KINDS, ContainmentSpec, check_containment, check_convexity_and_zero, doubling_certificate
from .hamiltonian import ControlEvaluator, CRNHamiltonian, EigenError, TiltOverflowError, eval_H_control
from .hjb import (
    EvolutionConfig,
    Grid,
    GridFunction,
    StationaryConfig,
    solve_evolution,
    solve_stationary,
)
from .lagrangian import LegendreConfig, legendre, path_action, read_path_csv
from .model import (
    ControlHamiltonian,
    ModelError,
    builtin_michaelis_menten,
    check_conservation,
    check_irreducibility,
    check_product_form,
    enumerate_fast_states,
    load_any,
)


class UsageError(Exception):
    pass


class ValidationFailure(Exception):
    def __init__(self, payload):
        super().__init__("validation failed")
        self.payload = payload


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# --------------------------------------------------------------------------
# helpers


def _read_text(path) -> str:
    with open(path, encoding="utf-8") as fh:
        return fh.read()


def _load_model(path, strict=True):
    text = _read_text(path)
    return load_any(text, strict=strict), text


def _evaluator(model):
    return ControlEvaluator(model) if isinstance(model, ControlHamiltonian) else CRNHamiltonian(model)


def _vec(text, dim=None, name="vector"):
    try:
        v = io.parse_vector(text)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if dim is not None and v.size != dim:
        raise UsageError(f"{name} must have {dim} components, got {v.size}")
    return v


def _floats(text):
    return [float(t) for t in text.split(",") if t.strip()]


def _config(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("func",) and v is not None}


def _emit(args, payload: dict, model_text, argv, started, path=None):
    doc = dict(payload)
    doc["manifest"] = io.manifest(argv, _config(args), model_text, args.seed, time.perf_counter() - started)
    text = io.dumps(doc)
    target = path if path is not None else getattr(args, "out", None)
    if target:
        with open(target, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _write_csv_text(path, text):
    if path:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _grid_from_args(args, dim) -> Grid:
    cells = int(args.cells)
    return Grid((float(args.xmax),) * dim, (cells,) * dim)


# --------------------------------------------------------------------------
# subcommands


def cmd_model_mm(args, argv, started):
    k = _floats(args.k)
    if len(k) != 4 or any(v < 0 for v in k):
        raise UsageError("--k needs four nonnegative rate constants")
    if args.M < 1:
        raise UsageError("--M must be at least 1")
    net = builtin_michaelis_menten(*k, M=args.M)
    text = net.dumps()
    _emit(args, net.to_json(), text, argv, started)
    return 0


def _network_checks(net, points):
    fss = enumerate_fast_states(net.fast_dim, net.conservation)
    irr = [check_irreducibility(net, x, fss) for x in points]
    return {
        "conservation": check_conservation(net),
        "product_form": check_product_form(net),
        "irreducibility": {
            "pass": all(r["pass"] for r in irr),
            "samples": len(irr),
            "violations": [v for r in irr for v in r["violations"]],
        },
    }


def cmd_model_validate(args, argv, started):
    text = _read_text(args.path)
    try:
        model = load_any(text, strict=False)
    except ModelError as exc:
        payload = {"pass": False, "violations": [{"reaction": exc.reaction, "error": str(exc)}]}
        _emit(args, payload, text, argv, started)
        return 2
    if isinstance(model, ControlHamiltonian):
        payload = {"pass": True, "kind": "controls", "controls": len(model.controls), "violations": []}
        _emit(args, payload, text, argv, started)
        return 0
    points = [_vec(s, model.slow_dim, "--x") for s in args.x.split(";")] if args.x else [np.ones(model.slow_dim)]
    checks = _network_checks(model, points)
    ok = all(c["pass"] for c in checks.values())
    violations = [dict(v, check=name) for name, c in checks.items() for v in c["violations"]]
    payload = {"pass": ok, "kind": "network", "classes": model.classes, "checks": checks, "violations": violations}
    _emit(args, payload, text, argv, started)
    return 0 if ok else 2


def cmd_ham_eval(args, argv, started):
    model, text = _load_model(args.model)
    ham = _evaluator(model)
    x = _vec(args.x, ham.dim, "--x")
    p = _vec(args.p, ham.dim, "--p")
    if isinstance(model, ControlHamiltonian):
        val, label = eval_H_control(model, x, p)
        _, grad = ham.value_grad(x, p)
        payload = {"H": val, "argmax_label": label, "grad_p": grad}
    else:
        hv = ham.evaluate(x, p)
        payload = {"H": hv.value, "theta_star": hv.theta_star, "grad_p": hv.grad_p, "residual": hv.residual}
    _emit(args, payload, text, argv, started)
    return 0


def cmd_ham_table(args, argv, started):
    model, text = _load_model(args.model)
    ham = _evaluator(model)
    xs = [_vec(s, ham.dim, "--x") for s in args.x.split(";") if s.strip()]
    ps = [_vec(s, ham.dim, "--p") for s in args.p.split(";") if s.strip()]
    buf = _stdio.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    l = ham.dim
    wr.writerow([f"x_{i + 1}" for i in range(l)] + [f"p_{i + 1}" for i in range(l)] + ["H"])
    for x in xs:
        H, _ = ham.many(x[None, :], np.array(ps))
        for p, h in zip(ps, np.atleast_1d(H)):
            wr.writerow([format(v, ".17g") for v in [*x, *p, h]])
    _write_csv_text(args.out, buf.getvalue())
    if args.out:
        _emit(args, {"rows": len(xs) * len(ps), "csv": args.out}, text, argv, started, args.out + ".manifest.json")
    return 0


def _legendre_cfg(args):
    return LegendreConfig(p_radius=args.p_radius, tol=args.tol, max_iter=args.max_iter)


def cmd_lagrangian_eval(args, argv, started):
    model, text = _load_model(args.model)
    ham = _evaluator(model)
    x = _vec(args.x, ham.dim, "--x")
    v = _vec(args.v, ham.dim, "--v")
    res = legendre(ham, x, v, _legendre_cfg(args))
    payload = {"value": res.value, "flags": list(res.flags), "argmax_p": res.argmax_p,
               "iterations": res.iterations, "converged": res.converged}
    _emit(args, payload, text, argv, started)
    return 0


def cmd_action(args, argv, started):
    model, text = _load_model(args.model)
    ham = _evaluator(model)
    path = read_path_csv(args.path)
    if path.points.shape[1] != ham.dim:
        raise UsageError(f"path has {path.points.shape[1]} coordinates, model has {ham.dim}")
    res = path_action(ham, path, _legendre_cfg(args))
    payload = {"value": res.value if math.isfinite(res.value) else None, "flags": res.flags,
               "infinite": not math.isfinite(res.value)}
    _emit(args, payload, text, argv, started)
    return 0


def _input_grid_function(args, attr, const_attr, dim):
    path = getattr(args, attr)
    const = getattr(args, const_attr)
    if path:
        gf = GridFunction.read_csv(path)
        if gf.grid.dim != dim:
            raise UsageError(f"grid function has dimension {gf.grid.dim}, model has {dim}")
        return gf
    if const is None:
        raise UsageError(f"one of --{attr.replace('_', '-')} or --{const_attr.replace('_', '-')} is required")
    grid = _grid_from_args(args, dim)
    return GridFunction(grid, np.full(grid.size, float(const)))


def cmd_solve_stationary(args, argv, started):
    model, text = _load_model(args.model)
    ham = _evaluator(model)
    h = _input_grid_function(args, "h", "h_const", ham.dim)
    cfg = StationaryConfig(vgrid=args.vgrid, dt=args.dt, tol=args.tol, max_iter=args.max_iter,
                           v_radius=args.v_radius, p_radius=args.p_radius)
    f, report = solve_stationary(ham, h, args.lam, cfg)
    f.write_csv(args.out)
    _emit(args, {"report": report.to_json(), "output": args.out}, text, argv, started, args.report)
    return 0


def cmd_solve_evolution(args, argv, started):
    model, text = _load_model(args.model)
    ham = _evaluator(model)
    u0 = _input_grid_function(args, "u0", "u0_const", ham.dim)
    sigma = tuple(_floats(args.sigma)) if args.sigma else None
    snaps = tuple(_floats(args.snapshots)) if args.snapshots else ()
    cfg = EvolutionConfig(cfl=args.cfl, sigma=sigma, snapshots=snaps, dt=args.dt)
    outs, report = solve_evolution(ham, u0, args.T, cfg)
    files = []
    for t, gf in zip(report.info["times"], outs):
        name = f"{args.out}_t{format(t, '.6g')}.csv"
        gf.write_csv(name)
        files.append(name)
    _emit(args, {"report": report.to_json(), "outputs": files}, text, argv, started, args.report)
    return 0


def cmd_verify(args, argv, started):
    text = _read_text(args.path)
    try:
        model = load_any(text, strict=False)
    except ModelError as exc:
        _emit(args, {"pass": False, "error": str(exc)}, text, argv, started)
        return 2
    l = model.slow_dim
    grid = _grid_from_args(args, l)
    checks = {}
    h_ok = True
    if not isinstance(model, ControlHamiltonian):
        interior = grid.nodes()[grid.interior_mask()]
        extra = [_vec(s, l, "--samples") for s in args.samples.split(";")] if args.samples else []
        checks.update(_network_checks(model, list(interior) + extra))
        if extra:
            fss = enumerate_fast_states(model.fast_dim, model.conservation)
            checks["irreducibility"]["extra_samples"] = [
                {"x": x, "pass": check_irreducibility(model, x, fss)["pass"]} for x in extra
            ]
        h_ok = checks["conservation"]["pass"]
    if h_ok:
        ham = _evaluator(model)
        specs = {kind: check_containment(ham, ContainmentSpec(kind), grid) for kind in KINDS}
        checks["containment"] = {"pass": any(s["pass"] for s in specs.values()), "specs": specs}
        rng = np.random.default_rng(args.seed)
        dx = grid.spacing
        xs = rng.uniform(np.array(grid.lower) + dx, np.array(grid.upper) - dx, (args.convexity_points, l))
        checks["convexity_and_zero"] = check_convexity_and_zero(ham, xs, seed=args.seed)
    else:
        for name in ("containment", "convexity_and_zero"):
            checks[name] = {"pass": False, "skipped": "conservation law fails; the Hamiltonian is undefined"}
    ok = all(c["pass"] for c in checks.values())
    _emit(args, {"pass": ok, "checks": checks}, text, argv, started)
    return 0 if ok else 2


def cmd_doubling(args, argv, started):
    model, text = _load_model(args.model)
    ham = _evaluator(model)
    u = GridFunction.read_csv(args.u)
    v = GridFunction.read_csv(args.v)
    rep = doubling_certificate(u, v, ContainmentSpec(args.kind), _floats(args.eps), _floats(args.alpha), ham,
                               tol=args.tol)
    if args.csv:
        rep.write_csv(args.csv)
    _emit(args, rep.to_json(), text, argv, started)
    return 0 if rep.passed else 2


# --------------------------------------------------------------------------
# parser


def _common(p, out=True):
    p.add_argument("--seed", type=int, default=0, help="seed for every random draw (default 0)")
    if out:
        p.add_argument("--out", help="output file (default: stdout)")


def _legendre_flags(p):
    p.add_argument("--p-radius", type=float, default=10.0, help="momentum box radius")
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--max-iter", type=int, default=100)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="crnhjb", description="Hamiltonians, HJB solvers and certificates for "
                                                "two-time-scale reaction networks.")
    top = parser.add_subparsers(dest="group", required=True, metavar="command")

    model = top.add_parser("model", help="build or validate model files")
    msub = model.add_subparsers(dest="cmd", required=True)
    p = msub.add_parser("validate", help="parse a model and run the structural checks")
    p.add_argument("path")
    p.add_argument("--x", help="slow states for the irreducibility check, 'a,b;c,d' (default all ones)")
    _common(p)
    p.set_defaults(func=cmd_model_validate)
    p = msub.add_parser("mm", help="write the built-in Michaelis-Menten network")
    p.add_argument("--k", default="1,1,1,1", help="k0,k1,k2,k3")
    p.add_argument("--M", type=int, default=1, help="number of enzyme molecules")
    _common(p)
    p.set_defaults(func=cmd_model_mm)

    ham = top.add_parser("ham", help="evaluate the Hamiltonian")
    hsub = ham.add_subparsers(dest="cmd", required=True)
    p = hsub.add_parser("eval", help="H, optimizing measure and gradient at one point")
    p.add_argument("--model", required=True)
    p.add_argument("--x", required=True)
    p.add_argument("--p", required=True)
    _common(p)
    p.set_defaults(func=cmd_ham_eval)
    p = hsub.add_parser("table", help="CSV of H over all (x, p) combinations")
    p.add_argument("--model", required=True)
    p.add_argument("--x", required=True, help="'a,b;c,d'")
    p.add_argument("--p", required=True, help="'a,b;c,d'")
    _common(p)
    p.set_defaults(func=cmd_ham_table)

    lag = top.add_parser("lagrangian", help="Legendre dual of the Hamiltonian")
    lsub = lag.add_subparsers(dest="cmd", required=True)
    p = lsub.add_parser("eval", help="L(x, v)")
    p.add_argument("--model", required=True)
    p.add_argument("--x", required=True)
    p.add_argument("--v", required=True)
    _legendre_flags(p)
    _common(p)
    p.set_defaults(func=cmd_lagrangian_eval)

    p = top.add_parser("action", help="action of a sampled path (CSV t,x_1..x_l)")
    p.add_argument("--model", required=True)
    p.add_argument("--path", required=True)
    _legendre_flags(p)
    _common(p)
    p.set_defaults(func=cmd_action)

    solve = top.add_parser("solve", help="grid solvers")
    ssub = solve.add_subparsers(dest="cmd", required=True)
    p = ssub.add_parser("stationary", help="f - lambda H(x, Df) = h")
    p.add_argument("--model", required=True)
    p.add_argument("--h", help="grid function CSV for h")
    p.add_argument("--h-const", type=float, help="constant h on the --xmax/--cells grid")
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.add_argument("--xmax", type=float, default=10.0)
    p.add_argument("--cells", type=int, default=40)
    p.add_argument("--vgrid", type=int, default=3)
    p.add_argument("--dt", type=float)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--max-iter", type=int, default=200_000)
    p.add_argument("--v-radius", type=float, default=1.0, help="momentum radius for the velocity boxes")
    p.add_argument("--p-radius", type=float, default=10.0, help="momentum radius for the Legendre transform")
    p.add_argument("--out", required=True, help="CSV for the solution")
    p.add_argument("--report", help="JSON report file (default: stdout)")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_solve_stationary)
    p = ssub.add_parser("evolution", help="u_t = H(x, Du)")
    p.add_argument("--model", required=True)
    p.add_argument("--u0", help="grid function CSV for the initial datum")
    p.add_argument("--u0-const", type=float, help="constant initial datum on the --xmax/--cells grid")
    p.add_argument("--T", type=float, required=True)
    p.add_argument("--xmax", type=float, default=10.0)
    p.add_argument("--cells", type=int, default=40)
    p.add_argument("--cfl", type=float, default=0.5)
    p.add_argument("--sigma", help="dissipation per axis, comma separated")
    p.add_argument("--dt", type=float, help="force the time step (checked against the CFL bound)")
    p.add_argument("--snapshots", help="extra output times, comma separated")
    p.add_argument("--out", required=True, help="prefix for the snapshot CSVs")
    p.add_argument("--report", help="JSON report file (default: stdout)")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_solve_evolution)

    p = top.add_parser("verify", help="aggregate assumption report")
    p.add_argument("path")
    p.add_argument("--xmax", type=float, default=10.0)
    p.add_argument("--cells", type=int, default=40)
    p.add_argument("--samples", help="extra slow states for the irreducibility check, 'a,b;c,d'")
    p.add_argument("--convexity-points", type=int, default=20)
    _common(p)
    p.set_defaults(func=cmd_verify)

    p = top.add_parser("doubling", help="doubling-of-variables certificate for two grid functions")
    p.add_argument("--model", required=True)
    p.add_argument("--u", required=True)
    p.add_argument("--v", required=True)
    p.add_argument("--eps", default="0.1,0.01")
    p.add_argument("--alpha", default="1,10,100,1000,10000")
    p.add_argument("--kind", choices=KINDS, default="log-quadratic")
    p.add_argument("--tol", type=float, default=1e-2)
    p.add_argument("--csv", help="also write the rows as CSV")
    _common(p)
    p.set_defaults(func=cmd_doubling)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    started = time.perf_counter()
    try:
        args = build_parser().parse_args(argv)
        return args.func(args, argv, started)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:
        # --help exits through argparse
        return int(exc.code or 0)
    except OSError as exc:
        print(f"crnhjb: {exc}", file=sys.stderr)
        return 1
    except ModelError as exc:
        print(f"crnhjb: invalid model: {exc}", file=sys.stderr)
        return 2
    except (EigenError, TiltOverflowError, ValueError, RuntimeError) as exc:
        print(f"crnhjb: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
