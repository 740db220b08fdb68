"""Command-line experiment runner.

Subcommands ``nird``, ``baseline``, ``perfmodel`` and ``table`` write
plot-ready CSV (UTF-8, LF, ``%.16e`` floats) into ``--out``. ``--plots``
additionally renders PNGs with matplotlib.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys

import numpy as np

from . import metrics as M
from .fosls import dump_field
from .mesh import MeshForest, dump_mesh, unit_square_macro
from .orchestrator import NirdConfig, StageError, manifest, nird_run
from .perfmodel import PRESETS, sweep
from .problems import NAMES, ProblemId, instantiate
from .refine import ni_solve, write_trace
from .solver import SolverError

log = logging.getLogger("nird")

POU_CHOICES = ("discts", "c0", "cinf")
DEFAULT_SWEEP = tuple(2 ** k for k in range(1, 21))


class UsageError(ValueError):
    pass


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _add_problem_args(p):
    p.add_argument("--problem", required=True, choices=NAMES)
    p.add_argument("--rhs", choices=("smooth", "oscillatory"), default=None,
                   help="right-hand side variant for problems that have both")
    p.add_argument("--E", type=int, default=2000, help="leaf budget per rank")
    p.add_argument("--degree", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--functional", choices=("naive", "kernel"), default="kernel")
    p.add_argument("--preprocess", choices=("auto", "adaptive", "uniform"), default="auto")
    p.add_argument("--iters", type=int, default=2)
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--plots", action="store_true", help="also render PNG figures")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nird", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("nird", help="run NIRD on one problem")
    _add_problem_args(p)
    p.add_argument("--P", type=int, default=4)
    p.add_argument("--pou", choices=POU_CHOICES, default="discts")
    p.add_argument("--table1", action="store_true", help="also measure the Table-1 diagnostic set")
    p.add_argument("--dump", action="store_true", help="write per-rank mesh and field dumps")

    p = sub.add_parser("baseline", help="traditional adaptive NI solve")
    p.add_argument("--problem", required=True, choices=NAMES)
    p.add_argument("--rhs", choices=("smooth", "oscillatory"), default=None)
    p.add_argument("--P", type=int, default=16, help="only scales the oscillatory right-hand side")
    p.add_argument("--E", type=int, default=2000, help="leaf budget")
    p.add_argument("--degree", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--functional", choices=("naive", "kernel"), default="naive")
    p.add_argument("--out", default=".")
    p.add_argument("--plots", action="store_true")

    p = sub.add_parser("perfmodel", help="communication cost models over a P sweep")
    p.add_argument("--preset", choices=("easy", "hard", "both"), default="both")
    p.add_argument("--P", type=_int_list, default=None, help="processor counts (default 2..2^20)")
    p.add_argument("--E", type=float, default=None)
    p.add_argument("--iters", type=int, default=2, help="NIRD iterations alpha")
    p.add_argument("--out", default=None, help="directory for perfmodel.csv (default: stdout)")
    p.add_argument("--plots", action="store_true")

    p = sub.add_parser("table", help="metrics rows over partitions of unity and P")
    _add_problem_args(p)
    p.add_argument("--P", type=_int_list, default=[4, 16])
    p.add_argument("--pou", default="all", help="'all' or a comma list of discts,c0,cinf")
    return ap


# -- helpers --------------------------------------------------------------------------

def _problem(args, P):
    try:
        return instantiate(ProblemId(args.problem, P=P, seed=args.seed, rhs=args.rhs))
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _config(args, P, pou) -> NirdConfig:
    try:
        return NirdConfig(P=P, E=args.E, degree=args.degree, pou=pou, iterations=args.iters,
                          functional=args.functional, preprocess=args.preprocess, seed=args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _outdir(path):
    os.makedirs(path, exist_ok=True)
    return path


def _write(path, text):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _lsf_csv(run) -> str:
    lines = ["iteration,N_U,N_T,lsf"]
    for s in run.states:
        lines.append(f"{s.iteration},{s.n_union},{'' if s.n_total is None else s.n_total},{s.lsf:.16e}")
    return "\n".join(lines) + "\n"


# -- subcommands ----------------------------------------------------------------------

def cmd_nird(args) -> int:
    if args.iters < 0:
        raise UsageError("--iters must be >= 0")
    cfg = _config(args, args.P, args.pou)
    problem = _problem(args, args.P)
    out = _outdir(args.out)
    log.info("running %s with P=%d E=%d", args.problem, cfg.P, cfg.E)
    run = nird_run(problem, cfg, measure=True)
    if args.table1 and len(run.states) > 1:
        run.report.table1 = M.measure_table1(run)
    files = {"metrics": "metrics.csv", "lsf": "lsf.csv", "partition": "partition.csv"}
    M.write_rows([run.report.row()], os.path.join(out, files["metrics"]))
    _write(os.path.join(out, files["lsf"]), _lsf_csv(run))
    run.pre.partition.write_csv(os.path.join(out, files["partition"]))
    if run.report.table1 is not None:
        files["table1"] = "table1.csv"
        t1 = run.report.table1.as_dict()
        M.write_rows([t1], os.path.join(out, files["table1"]), columns=tuple(t1))
    if args.dump:
        for s in run.states[1:]:
            for r in s.ranks:
                name = f"rank{r.rank:04d}_iter{s.iteration}.txt"
                _write(os.path.join(out, name), dump_field(r.field))
                files[f"rank{r.rank}_iter{s.iteration}"] = name
        _write(os.path.join(out, "union.txt"), dump_field(run.final.field))
        files["union"] = "union.txt"
    if args.plots:
        from . import plotting
        plotting.plot_lsf_history([{"iteration": s.iteration, "lsf": s.lsf} for s in run.states],
                                  os.path.join(out, "lsf.png"))
        plotting.plot_mesh(run.pre.mesh, os.path.join(out, "partition.png"), run.pre.partition.owner,
                           "home domains")
        plotting.plot_mesh(run.final.mesh, os.path.join(out, "union_mesh.png"), title="union mesh")
        files.update(lsf_plot="lsf.png", partition_plot="partition.png", union_plot="union_mesh.png")
    man = manifest(run, files)
    man["metrics_note"] = run.report.note
    _write(os.path.join(out, "manifest.json"), json.dumps(man, indent=2, sort_keys=True) + "\n")
    print(M.write_rows([run.report.row()]), end="")
    return 0


def cmd_baseline(args) -> int:
    if args.E < 1:
        raise UsageError("--E must be positive")
    problem = _problem(args, args.P)
    start = MeshForest.from_macro(unit_square_macro(2))
    if args.E < start.nleaves:
        raise UsageError(f"--E must be at least {start.nleaves}")
    res = ni_solve(problem, start, args.E, args.degree, functional=args.functional)
    out = _outdir(args.out)
    write_trace(res.history, os.path.join(out, "trace.csv"))
    _write(os.path.join(out, "mesh.txt"), dump_mesh(res.mesh))
    if args.plots:
        from . import plotting
        n, v = res.series("lsf")
        plotting.plot_convergence(n, v, os.path.join(out, "convergence.png"))
        plotting.plot_mesh(res.mesh, os.path.join(out, "mesh.png"), title=f"{res.mesh.nleaves} elements")
    last = res.history[-1]
    print(f"level={last.level} N={last.n} lsf={last.lsf:.16e}")
    return 0


def cmd_perfmodel(args) -> int:
    Ps = args.P or list(DEFAULT_SWEEP)
    for P in Ps:
        if P < 1 or P & (P - 1):
            raise UsageError(f"P={P} is not a power of two")
    if args.iters < 1:
        raise UsageError("--iters must be >= 1")
    presets = ("easy", "hard") if args.preset == "both" else (args.preset,)
    lines = ["preset,P,C_T,C_N,ratio"]
    curves = {}
    for name in presets:
        base = PRESETS[name].with_(alpha=args.iters)
        if args.E is not None:
            base = base.with_(E=args.E)
        rows = sweep(base, Ps)
        curves[f"traditional NI ({name})"] = [{"P": r["P"], "value": r["C_T"]} for r in rows]
        for r in rows:
            ratio = "inf" if math.isinf(r["ratio"]) else f"{r['ratio']:.16e}"
            lines.append(f"{name},{r['P']},{r['C_T']:.16e},{r['C_N']:.16e},{ratio}")
        curves[f"NIRD (alpha={args.iters})"] = [{"P": r["P"], "value": r["C_N"]} for r in rows]
    text = "\n".join(lines) + "\n"
    if args.out is None:
        print(text, end="")
    else:
        out = _outdir(args.out)
        _write(os.path.join(out, "perfmodel.csv"), text)
        if args.plots:
            from . import plotting
            plotting.plot_perfmodel(curves, os.path.join(out, "perfmodel.png"))
        print(text, end="")
    return 0


def cmd_table(args) -> int:
    pous = POU_CHOICES if args.pou == "all" else tuple(p.strip() for p in args.pou.split(","))
    for p in pous:
        if p not in POU_CHOICES:
            raise UsageError(f"unknown --pou value {p!r}")
    configs = [(pou, P, _config(args, P, pou)) for P in args.P for pou in pous]
    out = _outdir(args.out)
    rows = []
    cache = {}
    for pou, P, cfg in configs:
        problem = _problem(args, P)
        log.info("table row %s P=%d", pou, P)
        run = nird_run(problem, cfg)
        rep = M.measure_run(run, cache=cache.setdefault(P, {}))
        rows.append(rep.row())
    text = M.write_rows(rows, os.path.join(out, "table.csv"))
    print(text, end="")
    return 0


COMMANDS = {"nird": cmd_nird, "baseline": cmd_baseline, "perfmodel": cmd_perfmodel, "table": cmd_table}


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        ap.print_usage(sys.stderr)
        print(f"{ap.prog}: error: {exc}", file=sys.stderr)
        return 2
    except StageError as exc:
        print(f"error {exc}", file=sys.stderr)
        return 1
    except (SolverError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"error [{args.command}] {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
