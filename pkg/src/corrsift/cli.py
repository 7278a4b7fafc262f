"""Command-line interface: ``corrsift select | test | simulate``.

Variable indices are 1-based on the wire. Only the JSON payload goes to
stdout; logs go to stderr.

Exit codes: 0 success, 2 usage or input error, 3 too few observations for
inference, 4 group not selected at the threshold, 5 Monte Carlo budget
exhausted.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import re
import sys
from pathlib import Path

import numpy as np

from . import harness
from .cca import cca_decompose
from .errors import (CorrsiftError, InsufficientAcceptanceError,
                     InsufficientObservationsError, SelectionMismatchError)
from .linalg import DataMatrix, sample_covariance
from .nulldist import DEFAULT_B, NullSpec, RngStream, classical_p_value
from .pvalue import POLICIES, selective_p_value
from .selection import select_components

log = logging.getLogger("corrsift")

EXIT_OK, EXIT_USAGE, EXIT_DIMENSION, EXIT_MISMATCH, EXIT_MC = 0, 2, 3, 4, 5
SEED_ENV = "CORRSIFT_SEED"


class InputError(Exception):
    pass


def _mark_floats(obj):
    # floats become sentinel strings that dumps() unquotes after encoding
    if isinstance(obj, dict):
        return {k: _mark_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_mark_floats(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return f"\x00{format(float(obj), '.17g')}\x00"
    return obj


def dumps(payload) -> str:
    text = json.dumps(_mark_floats(payload), sort_keys=True)
    return re.sub(r'"\\u0000([^"\\]*)\\u0000"', r"\1", text)


def _emit(payload) -> None:
    sys.stdout.write(dumps(payload) + "\n")


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def read_table(path, delimiter: str | None = None) -> DataMatrix:
    """Rows are observations, columns variables; a non-numeric first row is a header."""
    path = Path(path)
    if delimiter in ("tab", "\\t"):
        delimiter = "\t"
    elif delimiter is None:
        delimiter = "\t" if path.suffix.lower() in (".tsv", ".tab") else ","
    try:
        with open(path, newline="") as fh:
            rows = [row for row in csv.reader(fh, delimiter=delimiter) if row]
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise InputError(f"{path} is empty")
    labels = None
    if not all(_is_number(x) for x in rows[0]):
        labels, rows = [x.strip() for x in rows[0]], rows[1:]
    width = len(labels) if labels is not None else len(rows[0]) if rows else 0
    for k, row in enumerate(rows):
        if len(row) != width:
            raise InputError(f"{path}: row {k + 1} has {len(row)} fields, expected {width}")
    try:
        values = np.array(rows, dtype=float).reshape(len(rows), width)
    except ValueError as exc:
        raise InputError(f"{path}: non-numeric entry ({exc})") from exc
    if values.shape[0] < 2:
        raise InputError(f"{path}: need at least two observations")
    if not np.all(np.isfinite(values)):
        raise InputError(f"{path}: missing or non-finite values")
    return DataMatrix(values, labels)


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get(SEED_ENV)
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise InputError(f"{SEED_ENV} must be an integer, got {env!r}")


def _parse_group(text: str, p: int) -> tuple[int, ...]:
    try:
        idx = sorted({int(tok) for tok in text.replace(" ", "").split(",") if tok})
    except ValueError:
        raise InputError(f"--group must be comma-separated integers, got {text!r}")
    if not idx or idx[0] < 1 or idx[-1] > p:
        raise InputError(f"--group indices must lie in 1..{p}")
    return tuple(i - 1 for i in idx)


def cmd_select(args) -> int:
    data = read_table(args.input, args.delimiter)
    if args.require_inference:
        data.validate_for_inference()
    part = select_components(sample_covariance(data), args.threshold, ordered=args.ordered)
    _emit({"groups": [[i + 1 for i in g] for g in part.groups],
           "threshold": args.threshold, "ordered": args.ordered})
    return EXIT_OK


def cmd_test(args) -> int:
    data = read_table(args.input, args.delimiter)
    data.validate_for_inference()
    seed = _seed(args)
    S = sample_covariance(data)
    group = _parse_group(args.group, data.p)
    try:
        sel = selective_p_value(S, data.n, group, args.threshold, policy=args.method, B=args.B,
                                rng=RngStream(seed, 0), rel_tol=args.rel_tol,
                                ordered=args.ordered)
    except SelectionMismatchError as exc:
        raise SelectionMismatchError(
            f"group {[i + 1 for i in group]} is not a selected component at threshold "
            f"{args.threshold}") from exc
    cca = cca_decompose(S, group)
    cls = classical_p_value(cca.lambdas, NullSpec(data.n, data.p, cca.r), B=args.B,
                            rng=RngStream(seed, 1))
    _emit({
        "group": [i + 1 for i in group],
        "r": cca.r,
        "lambdas_hat": [float(x) for x in cca.lambdas],
        "p_selective": sel.p,
        "p_classical": cls.p,
        "method": sel.method.value,
        "classical_method": cls.method.value,
        "diagnostics": sel.to_dict()["diagnostics"],
        "inputs_echo": {"n": data.n, "p": data.p, "c": args.threshold, "seed": seed},
    })
    return EXIT_OK


def _threshold(text: str):
    if text == "adaptive":
        return text
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"threshold must be a number or 'adaptive', got {text!r}")


def cmd_simulate(args) -> int:
    try:
        config = harness.SimConfig(
            p=args.p, n_factor=args.n_factor, reps=args.reps, c=args.threshold,
            alpha=args.alpha, seed=_seed(args), cap_mode=args.cap_mode, B=args.B,
            rel_tol=args.rel_tol, target_tested=args.target_tested, min_count=args.min_count,
            threads=args.threads, sigma_mode=args.sigma_mode)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.kind == "type1":
        result = harness.run_type1_experiment(config)
        columns = harness.TYPE1_COLUMNS
    else:
        result = harness.run_power_experiment(config)
        columns = harness.POWER_COLUMNS
    table = out / f"{args.prefix}{args.kind}.csv"
    harness.write_table(result.rows, columns, table)
    summary = dict(result.summary, table=str(table), cap_mode=config.cap_mode)
    summary_path = out / f"{args.prefix}{args.kind}_summary.json"
    summary_path.write_text(dumps(summary) + "\n")
    _emit(summary)
    return EXIT_OK


def _add_input(p: argparse.ArgumentParser) -> None:
    p.add_argument("--input", required=True, help="CSV/TSV file, rows = observations")
    p.add_argument("--delimiter", help="field delimiter (default from the file extension)")
    p.add_argument("--threshold", type=float, required=True, help="correlation threshold c in [0, 1)")
    p.add_argument("--ordered", action="store_true", help="keep only runs of consecutive variables")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="corrsift", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0, help="log to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sel = sub.add_parser("select", help="groups selected by thresholding correlations")
    _add_input(p_sel)
    p_sel.add_argument("--require-inference", action="store_true",
                       help="fail with exit 3 unless there are more observations than variables")
    p_sel.set_defaults(func=cmd_select)

    p_test = sub.add_parser("test", help="selective and classical p-values for one group")
    _add_input(p_test)
    p_test.add_argument("--group", required=True, help="1-based indices, e.g. 1,2,5")
    p_test.add_argument("--method", choices=POLICIES, default="auto")
    p_test.add_argument("--B", type=int, default=DEFAULT_B, help="Monte Carlo budget")
    p_test.add_argument("--rel-tol", type=float, default=None, help="integration tolerance")
    p_test.add_argument("--seed", type=int, default=None, help=f"RNG seed (fallback ${SEED_ENV})")
    p_test.set_defaults(func=cmd_test)

    p_sim = sub.add_parser("simulate", help="type-I and power experiments")
    p_sim.add_argument("kind", choices=("type1", "power"))
    p_sim.add_argument("--p", type=int, default=20)
    p_sim.add_argument("--n-factor", type=float, default=2.0)
    p_sim.add_argument("--reps", type=int, default=None,
                       help="datasets to simulate (2000 for type1, 10000 for power)")
    p_sim.add_argument("--threshold", type=_threshold, default=None,
                       help="number or 'adaptive' (0.2 for type1, adaptive for power)")
    p_sim.add_argument("--alpha", type=float, default=0.05)
    p_sim.add_argument("--seed", type=int, default=None, help=f"RNG seed (fallback ${SEED_ENV})")
    p_sim.add_argument("--cap-mode", choices=harness.CAP_MODES, default="min")
    p_sim.add_argument("--sigma-mode", choices=harness.SIGMA_MODES, default="random")
    p_sim.add_argument("--B", type=int, default=DEFAULT_B)
    p_sim.add_argument("--rel-tol", type=float, default=None)
    p_sim.add_argument("--target-tested", type=int, default=None,
                       help="draw datasets until this many were tested")
    p_sim.add_argument("--min-count", type=int, default=100, help="smallest reported power bin")
    p_sim.add_argument("--threads", type=int, default=1)
    p_sim.add_argument("--out-dir", default=".")
    p_sim.add_argument("--prefix", default="")
    p_sim.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s",
                        level=logging.WARNING - 10 * min(args.verbose, 2))
    if args.command == "simulate":
        if args.reps is None:
            args.reps = 2000 if args.kind == "type1" else 10000
        if args.threshold is None:
            args.threshold = 0.2 if args.kind == "type1" else "adaptive"
    try:
        return args.func(args)
    except InputError as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except SelectionMismatchError as exc:
        log.error("selection mismatch: %s", exc)
        return EXIT_MISMATCH
    except InsufficientAcceptanceError as exc:
        log.error("%s", exc)
        return EXIT_MC
    except InsufficientObservationsError as exc:
        log.error("%s", exc)
        return EXIT_DIMENSION
    except (CorrsiftError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
