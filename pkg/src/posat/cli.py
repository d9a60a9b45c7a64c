"""Command-line entry point: ``posat {solve,search,bounds,verify,gen}``.

Exit codes: 0 success / certified, 1 input error, 2 numerical
nonconvergence, 3 flow not certified (verify only).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from .analysis.bounds import deviation_ratio_bound, simple_posat_bound, zeta_bound
from .analysis.search import SearchSettings, curve_to_csv, default_threads, fmt, posat_curve
from .analysis.verify import check_necessary_condition, verify_asatue, verify_msatue
from .errors import MaxItersExceeded, MultipleOrigins, PosatError
from .instances import (
    gen_circular,
    gen_example1,
    gen_example2,
    gen_nine_node_asymmetric,
    read_demands_csv,
)
from .network import (
    Instance,
    aggregate_to_arcflow,
    load_instance,
    read_classflow_csv,
    save_instance,
    write_classflow_csv,
)
from .solvers import (
    LambdaField,
    kkt_certificate,
    solve_prue,
    solve_prue_diagonalization,
    solve_prue_fw,
    solve_so,
    solve_uepe,
)
from .solvers.report import as_lambda

log = logging.getLogger("posat")

EXIT_OK, EXIT_INPUT, EXIT_NONCONVERGED, EXIT_NOT_CERTIFIED = 0, 1, 2, 3


class InputError(Exception):
    pass


def _kappa_list(args) -> list[float]:
    if getattr(args, "kappa", None) is not None:
        return [float(args.kappa)]
    if getattr(args, "kappa_grid", None):
        try:
            return [float(k) for k in args.kappa_grid.split(",") if k.strip()]
        except ValueError:
            raise InputError(f"bad --kappa-grid {args.kappa_grid!r}") from None
    raise InputError("give --kappa or --kappa-grid")


def _load_lambda(path, instance: Instance) -> np.ndarray:
    """Multiplier file: JSON ``{"kappa": k, "values": [[...]] }`` or ``"per_arc": [...]``."""
    data = json.loads(Path(path).read_text())
    if "values" in data:
        vals = np.asarray(data["values"], dtype=float)
    elif "per_arc" in data:
        vals = np.broadcast_to(np.asarray(data["per_arc"], dtype=float), (instance.n_od, instance.n_arcs))
    else:
        raise InputError(f"{path}: expected 'values' or 'per_arc'")
    if "kappa" in data:
        return LambdaField(vals, float(data["kappa"])).values
    return as_lambda(vals, instance.n_od, instance.n_arcs)


def _write(text: str, out) -> None:
    if out in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _arcflow_csv(instance: Instance, v: np.ndarray) -> str:
    t = instance.cost.times(v)
    lines = ["arc,tail,head,flow,time"]
    for (a, tail, head), va, ta in zip(instance.network.arcs, v, t):
        lines.append(f"{a},{tail},{head},{fmt(va)},{fmt(ta)}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_solve(args) -> int:
    inst = load_instance(args.instance)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", MaxItersExceeded)
        if args.kind == "ue":
            method = args.method or ("fw" if inst.cost.integrable else "path")
            if method == "fw":
                rep = solve_prue_fw(inst, tol=args.tol or 1e-8, max_iters=args.max_iters)
            elif method == "diag":
                rep = solve_prue_diagonalization(inst, tol=args.tol or 1e-6, max_iters=args.max_iters)
            else:
                rep = solve_prue(inst, tol=args.tol or 1e-10, max_iters=args.max_iters)
        elif args.kind == "so":
            rep = solve_so(inst, tol=args.tol or 1e-8, max_iters=args.max_iters)
        else:
            if not args.lam:
                raise InputError("solve uepe needs --lambda")
            lam = _load_lambda(args.lam, inst)
            rep = solve_uepe(inst, lam, tol=args.tol or 1e-6, max_iters=args.max_iters, method=args.method or "path")
    report = rep.to_dict()
    if args.out:
        out = Path(args.out)
        out.write_text(json.dumps(report, indent=1) + "\n")
        out.with_name(out.stem + "_arcflow.csv").write_text(_arcflow_csv(inst, rep.v))
        write_classflow_csv(rep.x, out.with_name(out.stem + "_classflow.csv"))
    else:
        summary = {k: report[k] for k in ("method", "Z", "relative_gap", "iterations", "converged")}
        print(json.dumps(summary, indent=1))
    print(f"Z={fmt(rep.Z)} gap={fmt(rep.gap)} iterations={rep.iterations} converged={rep.converged}", file=sys.stderr)
    return EXIT_OK if rep.converged else EXIT_NONCONVERGED


def cmd_search(args) -> int:
    kappas = _kappa_list(args)
    if args.instance and args.circular_degree:
        raise InputError("give either --instance or --circular-degree, not both")
    if args.circular_degree:
        degree = args.circular_degree

        def source(k):
            return gen_circular(k, degree, ratio=args.circular_ratio)

    elif args.instance:
        source = load_instance(args.instance)
        degree = source.degree
    else:
        raise InputError("give --instance or --circular-degree")
    settings = SearchSettings()
    rows = posat_curve(
        source, kappas, starts=args.starts, seed=args.seed, budget=args.budget,
        threads=args.threads, settings=settings,
    )
    _write(curve_to_csv(kappas, rows, degree), args.out)
    if args.json:
        Path(args.json).write_text(json.dumps([None if r is None else r.to_dict() for r in rows], indent=1) + "\n")
    return EXIT_NONCONVERGED if any(r is None for r in rows) else EXIT_OK


def cmd_bounds(args) -> int:
    kappas = _kappa_list(args)
    if args.degree < 0:
        raise InputError("--degree must be >= 0")
    inst = load_instance(args.instance) if args.instance else None
    header = ["kappa", "zeta_bound", "simple_bound"] + (["deviation_bound"] if inst else [])
    lines = [",".join(header)]
    for k in kappas:
        row = [fmt(k), fmt(zeta_bound(k, args.degree)), fmt(simple_posat_bound(k, args.degree))]
        if inst is not None:
            row.append(fmt(deviation_ratio_bound(inst, k)))
        lines.append(",".join(row))
    _write("\n".join(lines) + "\n", args.out)
    return EXIT_OK


def cmd_verify(args) -> int:
    inst = load_instance(args.instance)
    x = read_classflow_csv(inst, args.flow)
    if args.epsilon_additive is not None:
        verdict = verify_asatue(inst, x, args.epsilon_additive, tol=args.tol)
        kappa_nc = None
    elif args.kappa is not None:
        verdict = verify_msatue(inst, x, args.kappa, tol=args.tol)
        kappa_nc = args.kappa
    else:
        raise InputError("give --kappa or --epsilon-additive")
    out = {"verdict": verdict.to_dict()}
    if kappa_nc is not None:
        nc = check_necessary_condition(inst, aggregate_to_arcflow(x), kappa_nc, tol=args.tol)
        out["necessary_condition"] = {"holds": nc.holds, "slack": nc.slack}
    if args.lam:
        cert = kkt_certificate(inst, _load_lambda(args.lam, inst), x, tol=args.kkt_tol, relative=args.relative)
        out["kkt"] = cert.to_dict()
    print(json.dumps(out, indent=1))
    ok = verdict.passed and ("kkt" not in out or out["kkt"]["passed"])
    return EXIT_OK if ok else EXIT_NOT_CERTIFIED


def cmd_gen(args) -> int:
    if args.type == "example1":
        inst = gen_example1(args.q)
    elif args.type == "example2":
        inst = gen_example2(args.q)
    elif args.type == "circular":
        if args.kappa is None or args.degree is None:
            raise InputError("circular needs --kappa and --degree")
        inst = gen_circular(args.kappa, args.degree, ratio=args.ratio)
    else:
        demands = read_demands_csv(args.demands) if args.demands else None
        inst = gen_nine_node_asymmetric(demands, omega=args.omega)
    if args.out:
        save_instance(inst, args.out)
    else:
        print(json.dumps(inst.to_dict(), indent=1))
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="posat", description="Price-of-satisficing tools for traffic equilibrium")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="solve an equilibrium or the system optimum")
    s.add_argument("kind", choices=["ue", "so", "uepe"])
    s.add_argument("--instance", required=True)
    s.add_argument("--lambda", dest="lam", help="multiplier JSON (uepe)")
    s.add_argument("--method", choices=["fw", "diag", "path", "msa"])
    s.add_argument("--tol", type=float)
    s.add_argument("--max-iters", type=int, default=50_000)
    s.add_argument("--out", help="report JSON; arc and class flow CSVs are written next to it")
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("search", help="worst-case PoSat search along a kappa grid")
    s.add_argument("--instance")
    s.add_argument("--circular-degree", type=int, help="regenerate the circular network per kappa")
    s.add_argument("--circular-ratio", choices=["kappa", "posat"], default="posat")
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--kappa", type=float)
    g.add_argument("--kappa-grid")
    s.add_argument("--starts", type=int, default=16)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--budget", type=int, help="ascent solver calls (default 50 |W| |A|)")
    s.add_argument("--threads", type=int, default=default_threads())
    s.add_argument("--out", help="CSV path (default stdout)")
    s.add_argument("--json", help="also write per-kappa details as JSON")
    s.set_defaults(func=cmd_search)

    s = sub.add_parser("bounds", help="analytical PoSat bounds")
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--kappa", type=float)
    g.add_argument("--kappa-grid")
    s.add_argument("--degree", type=int, required=True)
    s.add_argument("--instance", help="single-origin instance for the deviation bound")
    s.add_argument("--out")
    s.set_defaults(func=cmd_bounds)

    s = sub.add_parser("verify", help="certify a class flow as satisficing")
    s.add_argument("--instance", required=True)
    s.add_argument("--flow", required=True, help="class flow CSV with columns od,arc,flow")
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--kappa", type=float)
    g.add_argument("--epsilon-additive", type=float)
    s.add_argument("--lambda", dest="lam")
    s.add_argument("--tol", type=float, default=1e-6)
    s.add_argument("--kkt-tol", type=float, default=1e-8)
    s.add_argument("--relative", action="store_true", help="scale KKT residuals")
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("gen", help="write a generated instance as JSON")
    s.add_argument("--type", required=True, choices=["example1", "example2", "circular", "nine-node-asym"])
    s.add_argument("--q", type=float, default=1.0)
    s.add_argument("--kappa", type=float)
    s.add_argument("--degree", type=int)
    s.add_argument("--ratio", choices=["kappa", "posat"], default="kappa")
    s.add_argument("--demands", help="CSV origin,dest,q for the nine-node network")
    s.add_argument("--omega", type=float, default=0.5)
    s.add_argument("--out")
    s.set_defaults(func=cmd_gen)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (InputError, PosatError, OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"posat: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
