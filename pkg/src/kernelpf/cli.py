"""Command-line front end.

``kernelpf <command> [options]`` writes a JSON report to ``--output`` (or
standard output).  Exit status is 0 on success, 2 for invalid input or
violated preconditions and 3 for numerically inconclusive results; errors
are printed to standard error as one line of JSON.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from pathlib import Path

import numpy as np

from . import asymptotics, invariant, series, sim
from .errors import KernelPFError, PreconditionError, SchemaError, UnsupportedVariantError
from .io import dumps, load_kernel, write_atomic
from .kernel import TOL_QUAD, parse_set, set_to_str

COMMANDS = ("classify", "invariants", "limit", "simulate", "decompose", "oracle")
SIM_HORIZON = 10


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kernelpf", description="Perron-Frobenius analysis of kernels with an atom")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--input", help="kernel specification (JSON)")
    p.add_argument("--output", help="report path; standard output if omitted")
    p.add_argument("--N", type=int, default=None, help=f"series truncation (default {series.DEFAULT_N}; "
                   f"simulation horizon {SIM_HORIZON})")
    p.add_argument("--nmax", type=int, default=asymptotics.DEFAULT_NMAX, help="length of the limit trace")
    p.add_argument("--replicates", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=None, help="identity tolerance (default: the kernel's)")
    p.add_argument("--tol-quad", type=float, default=None, help=f"quadrature tolerance (default {TOL_QUAD:g})")
    p.add_argument("--x", help="type for limit/decompose")
    p.add_argument("--set", dest="set_", default="all", help="set A: 'all', 'lo:hi' or comma-separated labels")
    p.add_argument("--s", type=float, help="argument s for decompose")
    p.add_argument("--cesaro", action="store_true", help="Cesaro-average the limit trace (periodic kernels)")
    p.add_argument("--preset", choices=sim.PRESETS, help="simulation preset")
    p.add_argument("--params", default="{}", help="preset parameters as a JSON object")
    p.add_argument("--records", help="line-delimited life-record file for simulate")
    return p


def _positive(args) -> None:
    for name in ("N", "nmax", "replicates", "tol", "tol_quad"):
        v = getattr(args, name)
        if v is not None and not v > 0:
            raise PreconditionError(f"--{name.replace('_', '-')} must be positive")


def _kernel(args):
    if not args.input:
        raise PreconditionError(f"{args.command} needs --input")
    try:
        K = load_kernel(args.input)
    except FileNotFoundError:
        raise PreconditionError(f"no such file: {args.input}") from None
    if args.tol_quad is not None:
        K.tol_quad = args.tol_quad
    return K


def _point(K, text: str | None):
    if text is None:
        raise PreconditionError("--x is required")
    if K.is_finite:
        return K.space.labels[K.space.require_index(text)]
    return float(text)


def _config(args, K=None) -> dict:
    cfg = {
        "command": args.command,
        "input": args.input,
        "N": args.N,
        "n_max": args.nmax,
        "tol": args.tol if args.tol is not None else (K.identity_tol if K is not None else None),
        "tol_quad": K.tol_quad if K is not None else (args.tol_quad or TOL_QUAD),
    }
    if K is not None:
        try:
            cfg["kernel"] = K.to_spec()
        except UnsupportedVariantError:
            cfg["kernel"] = None
    if args.command == "simulate":
        cfg.update(replicates=args.replicates, seed=args.seed, preset=args.preset)
    return cfg


def _sibling(output: str | None, suffix: str) -> Path | None:
    if output is None:
        return None
    out = Path(output)
    return out.with_name(out.stem + suffix)


def cmd_classify(args) -> dict:
    K = _kernel(args)
    args.N = args.N or series.DEFAULT_N
    rep = series.classify(K, args.N, tol=args.tol)
    return {"config": _config(args, K), "report": rep.to_dict()}


def cmd_invariants(args) -> dict:
    K = _kernel(args)
    args.N = args.N or series.DEFAULT_N
    pair = invariant.invariant_pair(K, args.N, tol=args.tol)
    out = {"config": _config(args, K), "report": pair.to_dict()}
    csv_path = _sibling(args.output, ".csv")
    if csv_path is not None:
        pair.write_csv(csv_path)
        out["csv"] = csv_path.name
    return out


def cmd_limit(args) -> dict:
    K = _kernel(args)
    args.N = args.N or series.DEFAULT_N
    x = _point(K, args.x)
    A = parse_set(args.set_, K.space)
    rep = asymptotics.perron_limit(K, x, A, n_max=args.nmax, N=args.N, tol=args.tol, cesaro=args.cesaro)
    out = {"config": _config(args, K) | {"x": x, "set": set_to_str(A)}, "report": rep.to_dict()}
    trace = _sibling(args.output, ".trace.csv")
    if trace is not None:
        rep.write_trace_csv(trace)
        out["trace_csv"] = trace.name
    return out


def cmd_decompose(args) -> dict:
    K = _kernel(args)
    args.N = args.N or series.DEFAULT_N
    if args.s is None:
        raise PreconditionError("decompose needs --s")
    x = _point(K, args.x)
    A = parse_set(args.set_, K.space)
    kw = {} if args.tol is None else {"tol": args.tol}
    rep = asymptotics.resolvent_decomposition(K, args.s, x, A, N=args.N, **kw)
    return {"config": _config(args, K) | {"x": x, "set": set_to_str(A), "s": args.s}, "report": rep.to_dict()}


def cmd_oracle(args) -> dict:
    K = _kernel(args)
    args.N = args.N or series.DEFAULT_N
    if not K.is_finite:
        raise UnsupportedVariantError("the eigen oracle needs a finite kernel")
    rep = series.classify(K, args.N, tol=args.tol)
    oracle = asymptotics.power_iteration_oracle(K)
    labels = list(K.space.labels)
    predicted = np.full((len(labels), len(labels)), np.nan)
    if rep.recurrence == series.RecurrenceClass.POSITIVE:
        pair = invariant.invariant_pair(K, args.N, report=rep)
        norm = rep.R**2 * rep.fpR
        predicted = np.outer(pair.h.values, pair.pi.masses) / norm
    v, u = oracle.right.values, oracle.left.masses
    expected = np.outer(v, u) / float(u @ v)
    with np.errstate(invalid="ignore", divide="ignore"):
        rel = np.abs(predicted - expected) / np.maximum(np.abs(expected), 1e-300)
    return {
        "config": _config(args, K),
        "report": {
            "R": rep.R,
            "rho": oracle.rho,
            "R_times_rho": rep.R * oracle.rho,
            "recurrence": rep.recurrence.value,
            "predicted_limit": predicted,
            "oracle_limit": expected,
            "max_relative_error": float(np.nanmax(rel)) if np.isfinite(rel).any() else None,
            "iterations": oracle.iterations,
        },
    }


def cmd_simulate(args) -> dict:
    if not args.preset:
        raise PreconditionError("simulate needs --preset")
    try:
        params = json.loads(args.params)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"--params is not JSON: {exc}") from None
    preset = sim.build_preset(args.preset, **params)
    args.N = args.N or SIM_HORIZON
    batch = sim.estimate_series(preset, args.replicates, args.N, args.seed)
    out = {"config": _config(args), "report": batch.to_dict()}
    if args.records:
        batch.write_records(args.records)
        out["records"] = args.records
    return out


HANDLERS = {
    "classify": cmd_classify,
    "invariants": cmd_invariants,
    "limit": cmd_limit,
    "decompose": cmd_decompose,
    "oracle": cmd_oracle,
    "simulate": cmd_simulate,
}


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _positive(args)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            result = HANDLERS[args.command](args)
        result["warnings"] = sorted({str(w.message) for w in caught})
        text = dumps(result)
        if args.output:
            write_atomic(args.output, text)
        else:
            sys.stdout.write(text)
        return 0
    except KernelPFError as exc:
        sys.stderr.write(json.dumps(exc.to_dict()) + "\n")
        return exc.exit_code
    except (ValueError, OSError) as exc:
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
