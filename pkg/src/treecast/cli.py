"""``treecast`` command-line front end.

Exit codes: 0 success, 1 verification failure, 2 argument or parameter error.
Randomized commands default to seed 0xC0FFEE.
"""
from __future__ import annotations

import argparse
import sys

import numpy as np

from . import io
from .errors import TreecastError
from .model import (
    BETA_STAR,
    bounds_report,
    contraction_crossing_k,
    derive_from_lambda,
    derive_from_omega,
    ks_lambda,
)
from .popdyn import run_decay, scan_threshold
from .posterior import (
    PosteriorMode,
    atom_recursion,
    enumeration_moments,
    likelihood_pass,
    magnetization_of,
    moments_from_laws,
    paper_posterior_recursion,
)
from .recursion import contraction_iterate
from .tree import Configuration, TreeShape, broadcast_probability, brute_force_posterior, sample_broadcast_batch
from .verify import cmd_verify

DEFAULT_SEED = 0xC0FFEE


def _int(text: str) -> int:
    return int(text, 0)


def _model_args(p: argparse.ArgumentParser, required: bool = True) -> None:
    p.add_argument("--k", type=int, required=True, help="children per vertex")
    g = p.add_mutually_exclusive_group(required=required)
    g.add_argument("--omega", type=float, help="broadcast weight omega")
    g.add_argument("--lambda", dest="lam", type=float, help="fugacity omega(1+omega)^k")


def _rng_args(p: argparse.ArgumentParser, pop: int | None = None) -> None:
    p.add_argument("--seed", type=_int, default=DEFAULT_SEED)
    p.add_argument("--workers", type=int, default=1)
    if pop is not None:
        p.add_argument("--pop", type=int, default=pop)


def _output_args(p: argparse.ArgumentParser, default: str = "json") -> None:
    p.add_argument("--format", choices=("csv", "json"), default=default)
    p.add_argument("--out", default="-", help="output path (default: stdout)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="treecast", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("params", help="derived model parameters")
    _model_args(p)
    _output_args(p)

    p = sub.add_parser("bounds", help="closed-form bounds at k")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--omega", type=float)
    p.add_argument("--beta", type=float, default=BETA_STAR)
    _output_args(p)

    p = sub.add_parser("broadcast", help="sample broadcast configurations")
    _model_args(p)
    p.add_argument("--depth", type=int, required=True)
    p.add_argument("--samples", type=int, default=1)
    p.add_argument("--root", choices=("free", "zero", "one"), default="free")
    _rng_args(p)
    _output_args(p, "csv")

    p = sub.add_parser("posterior", help="root posterior for one leaf pattern")
    _model_args(p)
    p.add_argument("--depth", type=int, required=True)
    p.add_argument("--leaves", required=True, help="0/1 string, breadth-first leaf order")
    p.add_argument("--mode", choices=("exact", "paper"), default="exact")
    p.add_argument("--brute-force", action="store_true", help="also run the enumeration oracle")
    _output_args(p)

    p = sub.add_parser("atoms", help="exact conditioned laws of Q and X")
    _model_args(p)
    p.add_argument("--depth", type=int, required=True)
    p.add_argument("--mode", choices=("exact", "paper"), default="exact")
    _output_args(p, "csv")

    p = sub.add_parser("moments", help="magnetization moments per depth")
    _model_args(p)
    p.add_argument("--depth", type=int, required=True)
    p.add_argument("--mode", choices=("exact", "paper"), default="exact")
    p.add_argument("--method", choices=("atoms", "enumeration", "popdyn"), default="atoms")
    _rng_args(p, pop=100_000)
    _output_args(p, "csv")

    p = sub.add_parser("decay", help="population-dynamics decay trace, or the contraction bound")
    _model_args(p)
    p.add_argument("--depth", type=int, default=30)
    p.add_argument("--bound", action="store_true",
                   help="iterate the second-moment bound instead of sampling")
    p.add_argument("--xbar-seed", type=float, help="starting X-bar for --bound (default omega/2)")
    _rng_args(p, pop=100_000)
    _output_args(p, "csv")

    p = sub.add_parser("scan", help="bracket the reconstruction threshold in lambda")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--lambda-min", type=float, required=True)
    p.add_argument("--lambda-max", type=float, required=True)
    p.add_argument("--steps", type=int, default=30)
    p.add_argument("--depth", type=int, default=30)
    p.add_argument("--eps-rec", type=float, default=1e-6)
    _rng_args(p, pop=100_000)
    _output_args(p)

    p = sub.add_parser("verify", help="run every identity and inequality check")
    _model_args(p)
    p.add_argument("--depth", type=int, default=3)
    p.add_argument("--samples", type=int, default=10_000)
    _rng_args(p, pop=20_000)
    _output_args(p)
    return parser


def _params(args):
    if args.lam is not None:
        return derive_from_lambda(args.k, args.lam)
    return derive_from_omega(args.k, args.omega)


def _emit(text: str, out: str) -> None:
    if out == "-":
        sys.stdout.write(text)
        sys.stdout.flush()
    else:
        with open(out, "w", newline="\n") as fh:
            fh.write(text)


def _kv_csv(d: dict) -> str:
    return io.to_csv(("key", "value"), ((k, v) for k, v in io.sanitize(d).items()
                                         if not isinstance(v, (list, dict))))


def _run(args) -> tuple[str, int]:
    cmd = args.command
    if cmd == "params":
        d = _params(args).as_dict()
        return (io.to_json(d) if args.format == "json" else _kv_csv(d)), 0

    if cmd == "bounds":
        rep = bounds_report(args.k, args.beta, args.omega).as_dict()
        rep["ks_lambda"] = ks_lambda(args.k)
        rep["contraction_crossing_k"] = contraction_crossing_k(args.beta)
        return (io.to_json(rep) if args.format == "json" else _kv_csv(rep)), 0

    if cmd == "broadcast":
        params = _params(args)
        shape = TreeShape(params.k, args.depth)
        rng = np.random.default_rng(args.seed)
        arr = sample_broadcast_batch(params, shape, args.samples, args.root, rng)
        rows = []
        for row in arr:
            c = Configuration(shape, tuple(int(x) for x in row))
            rows.append((c.to_string(), broadcast_probability(params, c, args.root)))
        if args.format == "csv":
            return io.to_csv(("config", "probability"), rows), 0
        return io.to_json({"params": params.as_dict(), "depth": args.depth, "seed": args.seed,
                           "root": args.root,
                           "configs": [{"config": c, "probability": q} for c, q in rows]}), 0

    if cmd == "posterior":
        params = _params(args)
        shape = TreeShape(params.k, args.depth)
        leaves = [int(c) for c in args.leaves.strip()]
        if PosteriorMode(args.mode) is PosteriorMode.EXACT:
            p1 = likelihood_pass(params, shape, leaves)
        else:
            p1 = 1.0 - paper_posterior_recursion(params, shape, leaves)
        rec = {"mode": args.mode, "leaves": args.leaves, "depth": args.depth,
               "p1": p1, "q0": 1.0 - p1, "x": magnetization_of(params, p1)}
        if args.brute_force:
            rec["p1_brute_force"] = brute_force_posterior(params, shape, leaves)
        return (io.to_json(rec) if args.format == "json" else _kv_csv(rec)), 0

    if cmd == "atoms":
        params = _params(args)
        laws = atom_recursion(params, args.depth, args.mode)
        if args.format == "csv":
            return io.atoms_csv(laws.all()), 0
        return io.to_json({"params": params.as_dict(), "laws": [
            {"quantity": d.quantity, "condition": d.condition, "depth": d.depth, "mode": d.mode,
             "atoms": [[v, q] for v, q in d.rows()]} for d in laws.all()]}), 0

    if cmd == "moments":
        params = _params(args)
        if args.method == "popdyn":
            moments = run_decay(params, args.depth, args.pop, args.seed, args.workers,
                                stop_below=0.0).moments
        elif args.method == "enumeration":
            moments = [enumeration_moments(params, d, args.mode) for d in range(args.depth + 1)]
        else:
            moments = [moments_from_laws(params, atom_recursion(params, d, args.mode))
                       for d in range(args.depth + 1)]
        if args.format == "csv":
            return io.to_csv(("depth", "xbar", "xbar1", "xbar0", "e1x", "e0x", "stderr"),
                             ((m.depth, m.xbar, m.xbar1, m.xbar0, m.e1x, m.e0x, m.stderr)
                              for m in moments)), 0
        return io.to_json({"params": params.as_dict(), "method": args.method, "mode": args.mode,
                           "moments": [m.as_dict() for m in moments]}), 0

    if cmd == "decay":
        params = _params(args)
        if args.bound:
            seed_x = params.omega / 2.0 if args.xbar_seed is None else args.xbar_seed
            trace = contraction_iterate(seed_x, params, args.depth)
            if args.format == "csv":
                return io.bound_trace_csv(trace), 0
            return io.to_json({**trace.verdict_record(), "trace": [list(r) for r in trace.rows()]}), 0
        trace = run_decay(params, args.depth, args.pop, args.seed, args.workers)
        if args.format == "csv":
            return io.decay_csv(trace), 0
        return io.to_json(trace.as_dict()), 0

    if cmd == "scan":
        if args.steps < 1 or args.lambda_max < args.lambda_min:
            raise _UsageError("need --steps >= 1 and --lambda-max >= --lambda-min")
        grid = np.linspace(args.lambda_min, args.lambda_max, args.steps)
        res = scan_threshold(args.k, grid, args.pop, args.depth, args.seed, args.eps_rec, args.workers)
        d = res.as_dict()
        d["martin_lambda"] = float(np.e - 1)
        d["ks_lambda"] = ks_lambda(args.k)
        return io.to_json(d), 0

    if cmd == "verify":
        params = _params(args)
        report = cmd_verify(params, args.depth, args.seed, args.samples, args.pop, args.workers)
        if args.format == "csv":
            text = io.to_csv(("name", "lhs", "rhs", "tolerance", "pass", "status", "reason"),
                             ((r.name, r.lhs, r.rhs, r.tolerance, r.passed, r.status, r.reason)
                              for r in report.records))
        else:
            text = io.to_json(report.as_dict())
        return text, 0 if report.passed else 1

    raise _UsageError(f"unknown command {cmd!r}")


class _UsageError(Exception):
    pass


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        text, code = _run(args)
    except (TreecastError, _UsageError) as exc:
        print(f"treecast: error: {exc}", file=sys.stderr)
        return 2
    _emit(text, args.out)
    return code


if __name__ == "__main__":
    sys.exit(main())
