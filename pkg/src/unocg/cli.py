"""Command-line interface: ``unocg <subcommand> [flags]``.

Every subcommand prints one JSON summary on stdout.  Exit status is 0 on
success, 1 on usage errors and 2 on numerical failure (non-convergence or a
failed spectrum check).
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import container as _io
from .datagen import (DatasetSpec, canonical_loads, gen_dataset, gen_microstructure,
                      load_microstructure, load_symbol, load_weights, make_spec,
                      save_features, save_microstructure, save_weights)
from .grid import BoundaryCondition, RegularGrid, build_dof_map
from .physics import PhaseParams, matvec, mean_free
from .precond import (IdentityPreconditioner, JacobiPreconditioner, SymbolPreconditioner,
                      fans_symbol, spectrum_check)
from .solver import SolveConfig, estimate_condition, solve_spec
from .training import naive_train, newton_train, precompute_features, default_init
from .transform import AxisKind, TransformPlan, build_mode_set


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# --------------------------------------------------------------------------
# flag helpers
# --------------------------------------------------------------------------

def _dims(text: str) -> tuple[int, ...]:
    try:
        dims = tuple(int(t) for t in text.replace("x", ",").split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid dims {text!r}") from None
    if len(dims) not in (2, 3) or min(dims) < 2:
        raise argparse.ArgumentTypeError(f"dims must be 2 or 3 integers >= 2, got {text!r}")
    return dims


def _positive(text: str) -> float:
    val = float(text)
    if not val > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text!r}")
    return val


def _add_common(p: argparse.ArgumentParser, problem: bool = True) -> None:
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path)
    p.add_argument("--deterministic", action="store_true",
                   help="omit wall-clock times so repeated runs are byte-identical")
    if problem:
        p.add_argument("--physics", choices=("thermal", "elastic"), default="thermal")
        p.add_argument("--bc", default="periodic", help="periodic | dirichlet | mixed:<axes>")
        p.add_argument("--dims", type=_dims, default=(64, 64))
        p.add_argument("--contrast", type=_positive, default=None,
                       help="phase contrast (default 5 thermal, 10 elastic)")


def _add_solve(p: argparse.ArgumentParser) -> None:
    p.add_argument("--tol", type=_positive, default=1e-6)
    p.add_argument("--max-iter", type=int, default=None)
    p.add_argument("--absolute", action="store_true", help="absolute instead of relative tolerance")
    p.add_argument("--micro", type=Path, help="microstructure container (default: generated from --seed)")
    p.add_argument("--load", type=int, default=0, help="index of the canonical unit load")


def _params(args) -> PhaseParams:
    if args.physics == "thermal":
        return PhaseParams.thermal(1.0, 1.0 / (args.contrast or 5.0))
    return PhaseParams.elastic_young(1.0, 0.0, args.contrast or 10.0, 0.3)


def _bc(args) -> BoundaryCondition:
    try:
        return BoundaryCondition.parse(args.bc, len(args.dims))
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _problem(args):
    bc = _bc(args)
    if args.micro is not None:
        ind = load_microstructure(args.micro)
        if tuple(ind.shape) != tuple(args.dims):
            raise UsageError(f"microstructure has shape {ind.shape}, --dims is {args.dims}")
    else:
        ind = gen_microstructure(args.seed, args.dims)
    loads = canonical_loads(args.physics, len(args.dims))
    if not 0 <= args.load < len(loads):
        raise UsageError(f"--load must be in [0, {len(loads) - 1}]")
    return make_spec(args.physics, args.dims, bc, ind, _params(args), loads[args.load])


def _preconditioner(name: str, spec):
    if name == "none":
        return IdentityPreconditioner(spec.dmap.ndof)
    if name == "jacobi":
        return JacobiPreconditioner.from_spec(spec)
    if name == "fans":
        if not spec.dmap.bc.all_periodic:
            raise UsageError("fans requires --bc periodic")
        return SymbolPreconditioner(fans_symbol(spec.params, spec.dmap), name="fans")
    if name.startswith("uno:"):
        w = load_weights(name[4:])
        if w.modes.plan != TransformPlan.for_dofmap(spec.dmap) or w.c != spec.c:
            raise UsageError("UNO weights were trained for a different grid, physics or boundary condition")
        return w.preconditioner()
    raise UsageError(f"unknown preconditioner {name!r}")


def _cfg(args) -> SolveConfig:
    return SolveConfig(tol=args.tol, max_iter=args.max_iter, relative=not args.absolute)


def _emit(summary: dict) -> None:
    sys.stdout.write(json.dumps(summary, sort_keys=True) + "\n")


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("UNOCG_THREADS", os.cpu_count() or 1)))
    except ValueError:
        return 1


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_gen_micro(args) -> int:
    if not 0 < args.fraction < 1:
        raise UsageError("--fraction must lie in (0, 1)")
    ind = gen_microstructure(args.seed, args.dims, args.style, args.fraction)
    out = args.out or Path(f"micro_{'x'.join(map(str, args.dims))}_{args.seed}.bin")
    save_microstructure(out, ind, {"seed": args.seed, "style": args.style})
    _emit({"path": str(out), "dims": list(ind.shape), "fraction": float(ind.mean())})
    return 0


def cmd_gen_data(args) -> int:
    bc = _bc(args)
    ds = DatasetSpec(kind=args.physics, dims=tuple(args.dims), bc=bc.label, n_micro=args.n_micro,
                     params=_params(args), fraction=args.fraction, tol=args.ref_tol, seed=args.seed)
    cont = gen_dataset(ds)
    out = args.out or Path("dataset.bin")
    _io.write(out, cont)
    _emit({"path": str(out), "n_samples": int(cont.arrays["r"].shape[0]),
           "dropped": len(cont.meta["dropped"])})
    return 0


def _plan_for(meta: dict, override: str) -> tuple[TransformPlan, int]:
    dims = tuple(meta["dims"])
    bc = BoundaryCondition.parse(meta["bc"], len(dims))
    dmap = build_dof_map(RegularGrid(dims, c=int(meta["c"])), bc)
    plan = TransformPlan.for_dofmap(dmap)
    if override != "auto":
        plan = TransformPlan((AxisKind(override),) * plan.d, plan.lengths)
    return plan, int(meta["c"])


def cmd_train(args) -> int:
    cont = _io.read(args.data, "dataset")
    plan, c = _plan_for(cont.meta, args.transform)
    R, S = cont.arrays["r"], cont.arrays["s"]
    if args.samples:
        R, S = R[: args.samples], S[: args.samples]
    try:
        modes = build_mode_set(args.M, plan)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = args.out or Path("weights.bin")
    feats = precompute_features(R, S, plan, c)
    if args.features_out:
        save_features(args.features_out, feats)
    if args.method == "newton":
        weights, report = newton_train(feats, modes, epochs=args.epochs, warm=not args.cold)
    else:
        weights, report = naive_train(R, S, modes, c, default_init(feats, modes),
                                      epochs=args.epochs, lr=args.lr)
    if args.deterministic:
        report.wall_s = None
        for e in report.epochs:
            e.pop("elapsed_s", None)
    save_weights(out, weights, {"method": args.method, "n_samples": int(R.shape[0])})
    log_path = out.with_suffix(out.suffix + ".train.jsonl")
    log_path.write_text(report.to_jsonl())
    summary = {"path": str(out), "method": args.method, "M": args.M, "n_weights": weights.n_w,
               "epochs": len(report.epochs) - (1 if args.method == "newton" else 0),
               "final_loss": report.final_loss, "converged": report.converged,
               "message": report.message, "spectrum": report.spectrum, "log": str(log_path)}
    _emit(summary)
    return 0 if report.spectrum["passed"] else 2


def cmd_solve(args) -> int:
    spec = _problem(args)
    P = _preconditioner(args.precond, spec)
    u, rep = solve_spec(spec, P, _cfg(args))
    summary = {"precond": args.precond, "iterations": rep.iterations, "converged": rep.converged,
               "final_residual": rep.final_residual, "breakdown": rep.breakdown,
               "ndof": spec.dmap.ndof,
               "wall_ms": None if args.deterministic else 1e3 * rep.wall_time}
    if args.out:
        args.out.write_text(rep.to_csv())
        summary["history"] = str(args.out)
    _emit(summary)
    return 0 if rep.converged else 2


def _bench_one(name: str, spec, args):
    P = _preconditioner(name, spec)
    _, rep = solve_spec(spec, P, _cfg(args))
    cond = None
    if args.cond:
        Pc = _preconditioner(name, spec)
        project = (lambda x: mean_free(x, spec.dmap)) if spec.dmap.bc.all_periodic else None
        try:
            cond = estimate_condition(lambda x: matvec(spec, x), Pc, spec.dmap.ndof, seed=args.seed,
                                      max_steps=max(2 * rep.iterations + 20, 50), project=project).cond
        except RuntimeError:
            cond = None
    return name, rep, cond


def cmd_bench(args) -> int:
    spec = _problem(args)
    names = [p.strip() for p in args.precond.split(",") if p.strip()]
    if "none" not in names:
        names.insert(0, "none")
    for n in names:  # validate before any work
        _preconditioner(n, spec)
    with ThreadPoolExecutor(max_workers=min(_threads(), len(names))) as pool:
        results = list(pool.map(lambda n: _bench_one(n, spec, args), names))
    base = next(rep.iterations for n, rep, _ in results if n == "none")
    rows = []
    for name, rep, cond in results:
        rows.append({
            "preconditioner": name.split(":")[0] if name.startswith("uno:") else name,
            "iterations": rep.iterations,
            "final_residual": rep.final_residual,
            "cond_estimate": cond,
            "wall_ms": None if args.deterministic else 1e3 * rep.wall_time,
            "effectiveness": base / max(rep.iterations, 1),
            "converged": rep.converged,
        })
    out = args.out or Path("bench")
    out.parent.mkdir(parents=True, exist_ok=True)
    table = out.with_suffix(".csv")
    with table.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        cols = ["preconditioner", "iterations", "final_residual", "cond_estimate", "wall_ms", "effectiveness"]
        w.writerow(cols)
        for r in rows:
            w.writerow(["" if r[k] is None else r[k] for k in cols])
    svg = out.with_suffix(".svg")
    svg.write_text(convergence_svg([(r["preconditioner"], rep.residual_history)
                                    for r, (_, rep, _) in zip(rows, results)]))
    _emit({"table": str(table), "plot": str(svg), "results": rows})
    return 0 if all(r["converged"] for r in rows) else 2


def cmd_spectrum(args) -> int:
    if (args.weights is None) == (args.symbol is None):
        raise UsageError("pass exactly one of --weights or --symbol")
    sym = load_weights(args.weights).symbol() if args.weights else load_symbol(args.symbol)
    res = spectrum_check(sym, args.eps)
    _emit(res.to_dict())
    return 0 if res.passed else 2


# --------------------------------------------------------------------------
# plotting
# --------------------------------------------------------------------------

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def convergence_svg(series, width: int = 640, height: int = 400) -> str:
    """Self-contained SVG of ``log10`` residual against iteration."""
    left, right, top, bottom = 70, 150, 20, 50
    pw, ph = width - left - right, height - top - bottom
    data = []
    for name, hist in series:
        h = np.asarray(hist, dtype=float)
        h = np.where(h > 0, h, np.nan)
        data.append((name, np.log10(h / h[0]) if h.size and h[0] > 0 else np.log10(h)))
    xmax = max((d.size - 1 for _, d in data), default=1) or 1
    finite = np.concatenate([d[np.isfinite(d)] for _, d in data]) if data else np.zeros(1)
    ymin = math.floor(finite.min()) if finite.size else -1
    ymax = max(math.ceil(finite.max()), 0) if finite.size else 0
    if ymax == ymin:
        ymin -= 1

    def sx(x):
        return left + pw * x / xmax

    def sy(y):
        return top + ph * (ymax - y) / (ymax - ymin)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
           f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
           f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>']
    for y in range(ymin, ymax + 1):
        out.append(f'<line x1="{left}" y1="{sy(y):.1f}" x2="{left + pw}" y2="{sy(y):.1f}" '
                   f'stroke="#ddd"/>')
        out.append(f'<text x="{left - 6}" y="{sy(y) + 4:.1f}" text-anchor="end">1e{y}</text>')
    for k in range(6):
        x = round(xmax * k / 5)
        out.append(f'<text x="{sx(x):.1f}" y="{top + ph + 18}" text-anchor="middle">{x}</text>')
    out.append(f'<text x="{left + pw / 2:.1f}" y="{height - 10}" text-anchor="middle">iteration</text>')
    out.append(f'<text x="16" y="{top + ph / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 16 {top + ph / 2:.1f})">relative residual (max norm)</text>')
    for i, (name, d) in enumerate(data):
        color = _COLORS[i % len(_COLORS)]
        pts = " ".join(f"{sx(x):.1f},{sy(y):.1f}" for x, y in enumerate(d) if np.isfinite(y))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        ly = top + 16 + 18 * i
        out.append(f'<line x1="{left + pw + 10}" y1="{ly - 4}" x2="{left + pw + 30}" y2="{ly - 4}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw + 36}" y="{ly}">{_escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _escape(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="unocg", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-micro", help="generate a two-phase microstructure")
    _add_common(p, problem=False)
    p.add_argument("--dims", type=_dims, default=(64, 64))
    p.add_argument("--style", choices=("blobs", "inclusions"), default="blobs")
    p.add_argument("--fraction", type=float, default=0.3)
    p.set_defaults(func=cmd_gen_micro)

    p = sub.add_parser("gen-data", help="generate training pairs with reference solves")
    _add_common(p)
    p.add_argument("--n-micro", type=int, default=10)
    p.add_argument("--fraction", type=float, default=0.3)
    p.add_argument("--ref-tol", type=_positive, default=1e-10)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train UNO weights from a dataset")
    _add_common(p, problem=False)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--M", type=int, default=8)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--method", choices=("newton", "naive"), default="newton")
    p.add_argument("--lr", type=_positive, default=1e-3)
    p.add_argument("--samples", type=int, default=None, help="use only the first N pairs")
    p.add_argument("--cold", action="store_true", help="skip the convex warm start")
    p.add_argument("--transform", choices=("auto", "fourier", "sine"), default="auto",
                   help="override the transform inferred from the boundary condition")
    p.add_argument("--features-out", type=Path)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("solve", help="solve one problem with preconditioned CG")
    _add_common(p)
    _add_solve(p)
    p.add_argument("--precond", default="fans", help="none | jacobi | fans | uno:<weights>")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("bench", help="compare preconditioners on one problem")
    _add_common(p)
    _add_solve(p)
    p.add_argument("--precond", default="none,jacobi,fans", help="comma-separated list")
    p.add_argument("--no-cond", dest="cond", action="store_false", help="skip condition estimates")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("spectrum", help="safety check of a trained symbol")
    _add_common(p, problem=False)
    p.add_argument("--weights", type=Path)
    p.add_argument("--symbol", type=Path)
    p.add_argument("--eps", type=float, default=1e-14)
    p.set_defaults(func=cmd_spectrum)
    return parser


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except UsageError as exc:
        sys.stderr.write(f"unocg: usage error: {exc}\n")
        return 1
    except (_io.ContainerError, FileNotFoundError) as exc:
        sys.stderr.write(f"unocg: {exc}\n")
        return 1
    except (np.linalg.LinAlgError, FloatingPointError) as exc:
        sys.stderr.write(f"unocg: numerical failure: {exc}\n")
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
