"""Command line front end.

Exit codes: 0 success, 1 usage error, 2 input or validation error,
3 non-convergence (fit outputs are still written).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from ._backend import BACKEND
from .data import DataError, SchemaError, SchemaSpec, encode_features, load_table, simulate_market
from .estimator import EstimatorConfig, fit, lambda_max
from .likelihood import FeaturePair
from .model_selection import CvPlan, cv_evaluate, select_lambda
from .ot_core import IPFPConvergenceError
from .reporting import (
    RunManifest,
    loadings_report,
    matrix_csv,
    rank_and_shares,
    read_matrix,
    sha256_file,
)

logger = logging.getLogger("lowrank_ot")

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_NONCONVERGED = 0, 1, 2, 3
CV_KEYS = ("k", "repeats", "seed", "lambda_grid")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _load_config(path) -> tuple[EstimatorConfig, dict]:
    """Split a JSON config into estimator settings and CV plan keys."""
    if path is None:
        return EstimatorConfig(), {}
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise ValueError("config file must hold a JSON object")
    cv = {k: raw.pop(k) for k in CV_KEYS if k in raw}
    return EstimatorConfig.from_dict(raw), cv


def _load_pair(x_path, y_path) -> tuple[FeaturePair, list[str], list[str]]:
    X, lx = read_matrix(x_path)
    Y, ly = read_matrix(y_path)
    if X.shape[0] != Y.shape[0]:
        raise ValueError(f"shape mismatch: X has {X.shape[0]} rows, Y has {Y.shape[0]}; rows must be matched pairs")
    lx = lx or [f"x{i + 1}" for i in range(X.shape[1])]
    ly = ly or [f"y{i + 1}" for i in range(Y.shape[1])]
    return FeaturePair(X, Y), lx, ly


class _Outputs:
    def __init__(self, out: str):
        self.dir = Path(out)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.files: list[str] = []

    def write(self, name: str, text: str) -> None:
        (self.dir / name).write_text(text, encoding="utf-8")
        self.files.append(name)

    def manifest(self, m: RunManifest) -> None:
        m.finished = _now()
        m.outputs = sorted(self.files + ["manifest.json"])
        m.write(self.dir / "manifest.json")


def _manifest(args, command, config: dict, inputs: list, seed=None) -> RunManifest:
    return RunManifest(
        command=command,
        argv=list(args.argv),
        config=config,
        inputs={str(p): sha256_file(p) for p in inputs},
        seed=seed,
        version=__version__,
        backend=BACKEND,
        started=_now(),
    )


def cmd_fit(args) -> int:
    config, _ = _load_config(args.config)
    if args.lam is not None:
        config = config.replace(lam=args.lam)
    data, lx, ly = _load_pair(args.x, args.y)
    manifest = _manifest(args, "fit", config.to_dict(), [args.x, args.y] + ([args.config] if args.config else []),
                         config.seed)
    out = _Outputs(args.out)
    result = fit(data, config)
    spectrum = rank_and_shares(result.S)
    table = loadings_report(result, lx, ly, top_k=args.top_k, decimals=args.decimals)
    out.write("A_hat.csv", matrix_csv(result.A_hat, lx, ly))
    out.write("U.csv", matrix_csv(result.U, lx, [f"U_{m}" for m in range(1, result.U.shape[1] + 1)]))
    out.write("V.csv", matrix_csv(result.V, ly, [f"V_{m}" for m in range(1, result.V.shape[1] + 1)]))
    out.write("svd.csv", spectrum.to_csv())
    out.write("loadings.csv", table.to_csv())
    out.write("loadings_full.csv", table.to_csv(rounded=False))
    kkt = {
        "lambda": config.lam,
        "converged": result.converged,
        "status": result.status,
        "iterations": result.iterations,
        "ipfp_iterations": result.ipfp_iterations,
        "objective": result.objective,
        "gradient_norm": result.gradient_norm,
        "rank": result.rank,
        "kkt_tol": config.kkt_tol,
        **result.kkt.to_dict(),
    }
    out.write("kkt.json", json.dumps(kkt, indent=2) + "\n")
    out.write("objective_trace.csv", "iteration,objective\n" + "".join(
        f"{i},{v!r}\n" for i, v in enumerate(result.objective_trace.tolist())))
    out.manifest(manifest)
    print(spectrum.headline())
    if not result.converged:
        print(f"fit did not converge: {result.status}", file=sys.stderr)
        return EXIT_NONCONVERGED
    return EXIT_OK


def _parse_grid(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise ValueError(f"cannot parse lambda list {text!r}") from None


def cmd_cv(args) -> int:
    config, cv_cfg = _load_config(args.config)
    grid = _parse_grid(args.lambdas) if args.lambdas else tuple(cv_cfg.get("lambda_grid", ()))
    plan = CvPlan(
        lambda_grid=grid,
        k=args.folds if args.folds is not None else cv_cfg.get("k", 5),
        repeats=args.repeats if args.repeats is not None else cv_cfg.get("repeats", 2),
        seed=args.seed if args.seed is not None else cv_cfg.get("seed", 0),
    )
    data, _, _ = _load_pair(args.x, args.y)
    snapshot = {**config.to_dict(), "k": plan.k, "repeats": plan.repeats, "seed": plan.seed,
                "lambda_grid": list(plan.lambda_grid)}
    manifest = _manifest(args, "cv", snapshot, [args.x, args.y] + ([args.config] if args.config else []), plan.seed)
    out = _Outputs(args.out)
    curve = cv_evaluate(data, plan, config, standardize=not args.no_standardize)
    out.write("cv_raw.csv", curve.raw_csv())
    out.write("cv_summary.csv", curve.summary_csv())
    sel = select_lambda(curve)
    out.write("selection.json", json.dumps(sel.to_dict(), indent=2) + "\n")
    out.manifest(manifest)
    print(f"selected lambda={sel.lam!r}")
    return EXIT_OK


def cmd_encode(args) -> int:
    schema = SchemaSpec.from_json(args.schema)
    raw = load_table(args.data, schema)
    enc = encode_features(raw, schema, standardize=not args.no_standardize)
    out = _Outputs(args.out)
    out.write("X.csv", matrix_csv(enc.pair.X, col_labels=enc.labels_x))
    out.write("Y.csv", matrix_csv(enc.pair.Y, col_labels=enc.labels_y))
    sidecar = {
        "labels_x": enc.labels_x,
        "labels_y": enc.labels_y,
        "n_rows": raw.n_rows,
        "dropped_rows": raw.dropped_rows,
        "warnings": enc.warnings,
        **enc.encoding.to_dict(),
    }
    out.write("encoding.json", json.dumps(sidecar, indent=2) + "\n")
    manifest = _manifest(args, "encode", {"standardize": not args.no_standardize}, [args.data, args.schema])
    out.manifest(manifest)
    print(f"encoded {raw.n_rows} rows: {len(enc.labels_x)} + {len(enc.labels_y)} features")
    return EXIT_OK


def cmd_simulate(args) -> int:
    A, _ = read_matrix(args.a_true)
    if args.n < 2:
        raise ValueError("--n must be at least 2")
    sim = simulate_market(A, args.n, sampler=args.sampler, seed=args.seed)
    out = _Outputs(args.out)
    out.write("X.csv", matrix_csv(sim.pair.X, col_labels=sim.labels_x))
    out.write("Y.csv", matrix_csv(sim.pair.Y, col_labels=sim.labels_y))
    manifest = _manifest(args, "simulate", {"n": args.n, "sampler": args.sampler}, [args.a_true], args.seed)
    out.manifest(manifest)
    return EXIT_OK


def cmd_lambda_max(args) -> int:
    config, _ = _load_config(args.config)
    data, _, _ = _load_pair(args.x, args.y)
    print(repr(lambda_max(data, config.ipfp)))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="lowrank-ot", description="Low-rank affinity estimation for matching data.")
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    f = sub.add_parser("fit", help="estimate the affinity matrix at one lambda")
    f.add_argument("--x", required=True)
    f.add_argument("--y", required=True)
    f.add_argument("--lambda", dest="lam", type=float)
    f.add_argument("--config")
    f.add_argument("--out", required=True)
    f.add_argument("--top-k", type=int, default=3)
    f.add_argument("--decimals", type=int, default=2)
    f.set_defaults(func=cmd_fit)

    c = sub.add_parser("cv", help="repeated k-fold cross-validation over a lambda grid")
    c.add_argument("--x", required=True)
    c.add_argument("--y", required=True)
    c.add_argument("--lambdas", help="comma-separated ascending grid")
    c.add_argument("--folds", type=int)
    c.add_argument("--repeats", type=int)
    c.add_argument("--seed", type=int)
    c.add_argument("--config")
    c.add_argument("--no-standardize", action="store_true",
                   help="do not re-standardize features within each training split")
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_cv)

    e = sub.add_parser("encode", help="encode a raw couples table")
    e.add_argument("--data", required=True)
    e.add_argument("--schema", required=True)
    e.add_argument("--no-standardize", action="store_true")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_encode)

    s = sub.add_parser("simulate", help="simulate matched pairs from a known affinity")
    s.add_argument("--a-true", required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--sampler", choices=("normal", "uniform"), default="normal")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    m = sub.add_parser("lambda-max", help="print the smallest lambda giving the zero estimate")
    m.add_argument("--x", required=True)
    m.add_argument("--y", required=True)
    m.add_argument("--config")
    m.set_defaults(func=cmd_lambda_max)
    return p


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"lowrank-ot: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except IPFPConvergenceError as exc:
        print(f"lowrank-ot: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED
    except (ValueError, FileNotFoundError, DataError, SchemaError, json.JSONDecodeError,
            np.linalg.LinAlgError, OSError) as exc:
        print(f"lowrank-ot: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
