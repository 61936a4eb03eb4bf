"""Command-line front end: ``gmschauder <subcommand> ...``.

Every subcommand writes a CSV with a header row (or JSON with ``--format
json``) to ``--out`` or standard output, with floats printed to 17
significant digits.  A manifest holding the resolved configuration and the
library version is written to ``<out>.manifest.json``, or to standard error
when the data go to standard output.

Exit codes: 0 success, 1 failure of a processing stage, 2 bad arguments.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from . import __version__
from .basis import SchauderBasis
from .errors import GMSError
from .fpt import FptQuery, first_passage
from .girsanov import ModelPair, determinant_limit, lift_matrix, reduce_common_diffusion, rn_derivative
from .interp import InterpolationProblem, optimal_interpolant
from .model import FlowCache, ProcessModel
from .partition import SupportTree
from .transforms import (
    SamplePath,
    assemble_delta_matrix,
    assemble_psi_matrix,
    coefficients,
    grid_covariance,
    refine,
    sample_paths,
)

THREADS_ENV = "GMS_THREADS"


class StageError(Exception):
    """A processing stage failed; carries the stage name for the diagnostic."""

    def __init__(self, stage: str, cause: BaseException) -> None:
        super().__init__(f"{stage}: {cause}")
        self.stage = stage


def _stage(name: str, fn: Callable[[], Any]) -> Any:
    try:
        return fn()
    except (GMSError, ValueError, IndexError, KeyError, OSError, np.linalg.LinAlgError) as exc:
        raise StageError(name, exc) from exc


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------

def _fmt(value: Any) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return "%.17g" % float(value)
    return str(value)


def _jsonable(value: Any) -> Any:
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return float(value) if np.isfinite(value) else None
    return value


def _render(header: Sequence[str], rows: Sequence[Sequence[Any]], fmt: str) -> str:
    if fmt == "json":
        records = [{k: _jsonable(v) for k, v in zip(header, row)} for row in rows]
        return json.dumps(records, indent=1) + "\n"
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(_fmt(v) for v in row) + "\n")
    return buf.getvalue()


def _emit(args: argparse.Namespace, header: Sequence[str], rows: Sequence[Sequence[Any]],
          summary: dict[str, Any] | None = None) -> None:
    text = _render(header, rows, args.format)
    manifest = {
        "library": "gmschauder",
        "version": __version__,
        "command": args.command,
        "config": _resolved_config(args),
        "columns": list(header),
        "rows": len(rows),
    }
    if summary:
        manifest["summary"] = {k: _jsonable(v) for k, v in summary.items()}
    manifest_text = json.dumps(manifest, indent=1, sort_keys=True) + "\n"
    if args.out:
        out = Path(args.out)
        _stage("write output", lambda: out.write_text(text))
        _stage("write manifest", lambda: Path(str(out) + ".manifest.json").write_text(manifest_text))
    else:
        sys.stdout.write(text)
        sys.stderr.write(manifest_text)


def _resolved_config(args: argparse.Namespace) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for key, value in sorted(vars(args).items()):
        if key in ("handler",):
            continue
        if isinstance(value, Path):
            value = str(value)
        out[key] = value
    for key in ("model", "alpha", "beta"):
        path = getattr(args, key, None)
        if path:
            try:
                out[f"{key}_definition"] = json.loads(Path(path).read_text())
            except (OSError, json.JSONDecodeError):
                pass
    return out


def _threads(args: argparse.Namespace) -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            value = int(env)
        except ValueError:
            raise StageError("configure threads", ValueError(f"{THREADS_ENV}={env!r} is not an integer")) from None
    else:
        value = args.threads if args.threads else (os.cpu_count() or 1)
    value = max(1, value)
    args.threads = value
    return value


# ---------------------------------------------------------------------------
# input helpers
# ---------------------------------------------------------------------------

def _load_model(path: str | None) -> ProcessModel:
    if path is None:
        return ProcessModel.wiener()
    return _stage("load model", lambda: ProcessModel.from_json(path))


def _flow_options(args: argparse.Namespace) -> dict[str, Any]:
    opts: dict[str, Any] = {}
    if getattr(args, "flow_steps", None):
        opts["flow_steps"] = args.flow_steps
    if getattr(args, "quadrature_order", None):
        opts["quadrature_order"] = args.quadrature_order
    return opts


def _basis(model: ProcessModel, depth: int, args: argparse.Namespace) -> SchauderBasis:
    def build() -> SchauderBasis:
        return SchauderBasis(FlowCache(model, **_flow_options(args)), SupportTree.build(max(depth - 1, 1)))

    return _stage("build basis", build)


def _read_table(path: str) -> tuple[list[str], np.ndarray]:
    def read() -> tuple[list[str], np.ndarray]:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise ValueError(f"{path} is empty")
        header = [h.strip() for h in rows[0]]
        data = np.array([[float(v) for v in row] for row in rows[1:] if row], dtype=float)
        if data.size == 0:
            data = np.zeros((0, len(header)))
        if data.shape[1] != len(header):
            raise ValueError(f"{path}: rows do not match the header")
        return header, data

    return _stage("read input", read)


def _value_columns(d: int) -> list[str]:
    return [f"x{i}" for i in range(d)]


def _read_values(path: str, d: int, with_paths: bool) -> dict[int, dict[float, np.ndarray]]:
    """Grid values from a long (``[path_id,]t,i,x_i``) or wide (``[path_id,]t,x0,...``) table."""
    header, data = _read_table(path)

    def column(name: str) -> int:
        try:
            return header.index(name)
        except ValueError:
            raise StageError("read input", ValueError(f"{path} lacks column {name!r}")) from None

    ti = column("t")
    pi = column("path_id") if with_paths else None
    out: dict[int, dict[float, np.ndarray]] = {}
    if "i" in header and "x_i" in header:
        ii, xi = column("i"), column("x_i")
        for row in data:
            comp = int(row[ii])
            if not 0 <= comp < d:
                raise StageError("read input", ValueError(f"component {comp} outside 0..{d - 1}"))
            pid = int(row[pi]) if pi is not None else 0
            out.setdefault(pid, {}).setdefault(float(row[ti]), np.full(d, np.nan))[comp] = row[xi]
    else:
        cols = [column(c) for c in _value_columns(d)]
        for row in data:
            pid = int(row[pi]) if pi is not None else 0
            out.setdefault(pid, {})[float(row[ti])] = row[cols]
    for values in out.values():
        for t, v in values.items():
            if np.any(np.isnan(v)):
                raise StageError("read input", ValueError(f"incomplete components at t={t}"))
    return out


def _data_map(path: str, d: int) -> dict[float, np.ndarray]:
    return _read_values(path, d, with_paths=False).get(0, {})


def _depth_of(count: int) -> int:
    """Path depth whose grid (including 0) has ``count`` points."""
    depth = 1
    while 2 ** (depth - 1) + 1 < count:
        depth += 1
    if 2 ** (depth - 1) + 1 != count:
        raise ValueError(f"{count} grid points do not form a complete dyadic grid")
    return depth


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_basis(args: argparse.Namespace) -> int:
    model = _load_model(args.model)
    basis = _basis(model, args.depth, args)
    t = np.linspace(0.0, 1.0, args.grid)
    d, m = model.d, model.m
    rows: list[list[Any]] = []

    def evaluate() -> None:
        for el in basis.elements(args.depth):
            psi = el.psi(t)
            phi = el.phi(t)
            for q, s in enumerate(t):
                for i in range(d):
                    for j in range(d):
                        rows.append([el.n, el.k, s, i, j, psi[q, i, j], phi[q, i, j] if i < m else ""])

    _stage("evaluate basis", evaluate)
    _emit(args, ["n", "k", "t", "i", "j", "psi_ij", "phi_ij"], rows)
    return 0


PATH_COLUMNS = ["path_id", "t", "i", "x_i"]


def _path_rows(times: np.ndarray, values: np.ndarray, ids: np.ndarray) -> list[list[Any]]:
    rows = []
    for p, pid in enumerate(ids):
        for j, s in enumerate(times):
            rows.extend([int(pid), s, i, v] for i, v in enumerate(values[p, j]))
    return rows


def cmd_simulate(args: argparse.Namespace) -> int:
    model = _load_model(args.model)
    basis = _basis(model, args.depth, args)
    threads = _threads(args)
    ids = np.arange(args.paths)

    def run(chunk: np.ndarray):
        return sample_paths(basis, args.seed, args.depth, path_ids=chunk)

    def simulate():
        if threads == 1 or len(ids) < 2 * threads:
            batch = run(ids)
            return batch.times, batch.values
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, np.array_split(ids, threads)))
        return parts[0].times, np.concatenate([p.values for p in parts])

    times, values = _stage("simulate", simulate)
    _emit(args, PATH_COLUMNS, _path_rows(times, values, ids))
    return 0


def _parse_targets(text: str) -> list[tuple[int, int]]:
    out = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        n, k = item.split(":")
        out.append((int(n), int(k)))
    return out


def cmd_refine(args: argparse.Namespace) -> int:
    model = _load_model(args.model)
    paths = _read_values(args.input, model.d, with_paths=True)
    if not paths:
        raise StageError("read input", ValueError("no paths in input"))
    depth = _stage("read input", lambda: _depth_of(len(next(iter(paths.values())))))
    final = depth + (0 if args.targets else args.levels)
    basis = _basis(model, max(final, depth + 1), args)
    rows: list[list[Any]] = []

    def run() -> None:
        for pid, values in sorted(paths.items()):
            xi_field = coefficients(basis, values, depth)
            path = SamplePath(basis, xi_field, dict(values), pid)
            if args.targets:
                path = refine(path, _parse_targets(args.targets), args.seed)
            else:
                for level in range(depth, final):
                    path = refine(path, [(level, k) for k in range(2 ** (level - 1))], args.seed)
            times, vals = path.grid_values()
            for s, v in zip(times, vals):
                rows.extend([pid, s, i, x] for i, x in enumerate(v))

    _stage("refine", run)
    _emit(args, PATH_COLUMNS, rows)
    return 0


def cmd_coeffs(args: argparse.Namespace) -> int:
    model = _load_model(args.model)
    basis = _basis(model, args.depth, args)
    data = _data_map(args.data, model.d)
    field = _stage("compute coefficients", lambda: coefficients(basis, data, args.depth))
    rows = [[n, k, i, v] for n, k in basis.indices(args.depth) for i, v in enumerate(field[(n, k)])]
    _emit(args, ["n", "k", "i", "xi_i"], rows)
    return 0


def cmd_interp(args: argparse.Namespace) -> int:
    model = _load_model(args.model)
    basis = _basis(model, args.depth, args)
    data = _data_map(args.data, model.d)
    t = np.linspace(0.0, 1.0, args.grid)

    def run() -> np.ndarray:
        path = optimal_interpolant(InterpolationProblem(basis, args.depth, data))
        return path(t)

    values = _stage("interpolate", run)
    _emit(args, ["t", "i", "x_i"], [[s, i, x] for s, v in zip(t, values) for i, x in enumerate(v)])
    return 0


def cmd_girsanov(args: argparse.Namespace) -> int:
    model_alpha = _load_model(args.alpha)
    model_beta = _load_model(args.beta)
    threads = _threads(args)

    def pair() -> ModelPair:
        if args.reduce:
            return reduce_common_diffusion(model_alpha, model_beta)
        return ModelPair(model_alpha, model_beta)

    model_pair = _stage("pair models", pair)
    lift = _stage("assemble lift", lambda: lift_matrix(model_pair, args.depth, **_flow_options(args)))
    ids = np.arange(args.paths)

    def weights(chunk: np.ndarray):
        batch = sample_paths(lift.basis_alpha, args.seed, args.depth, path_ids=chunk)
        return rn_derivative(lift, batch)

    def run():
        if threads == 1 or len(ids) < 2 * threads:
            return weights(ids)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(weights, np.array_split(ids, threads)))
        return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])

    log_w, w = _stage("weigh paths", run)
    summary = {
        "determinant": lift.determinant,
        "determinant_limit": determinant_limit(model_pair),
        "mean_weight": float(np.mean(w)) if len(w) else float("nan"),
        "standard_error": float(np.std(w, ddof=1) / np.sqrt(len(w))) if len(w) > 1 else float("nan"),
        "nu_sup": lift.nu_sup,
        "spectral_norm": lift.spectral_norm,
    }
    _emit(args, ["path_id", "log_weight", "weight"], [[i, a, b] for i, a, b in zip(ids, log_w, w)], summary)
    return 0


def cmd_fpt(args: argparse.Namespace) -> int:
    model = _load_model(args.model)
    basis = _basis(model, args.max_depth, args)
    threads = _threads(args)
    direction = [float(v) for v in args.direction.split(",")] if args.direction else None
    query = _stage("configure query", lambda: FptQuery(
        level=args.level, max_depth=args.max_depth, paths=args.paths, seed=args.seed,
        p_low=args.p_low, p_high=args.p_high, start_depth=min(args.start_depth, args.max_depth),
        direction=direction))
    result = _stage("first passage", lambda: first_passage(basis, query, threads=threads))
    rows = [[pid, bool(c), lo, hi] for pid, c, lo, hi in zip(result.path_ids, result.crossed, result.tau_lo, result.tau_hi)]
    summary = {
        "crossed_fraction": float(np.mean(result.crossed)) if len(result.crossed) else 0.0,
        "refined_nodes": result.refined_nodes,
        "coarse_nodes": result.coarse_nodes,
        "full_tree_nodes": result.full_tree_nodes,
        "refined_fraction": result.refined_fraction,
    }
    _emit(args, ["path_id", "crossed", "tau_lo", "tau_hi"], rows, summary)
    return 0


def selftest_checks(model: ProcessModel, depth: int, **flow_options) -> list[tuple[str, float, float]]:
    """``(name, measured error, tolerance)`` for the analytic identities."""
    basis = SchauderBasis(FlowCache(model, **flow_options), SupportTree.build(max(depth - 1, 1)))
    flow = basis.flow
    psi = assemble_psi_matrix(basis, depth)
    delta = assemble_delta_matrix(basis, depth)
    cov = grid_covariance(basis, depth)
    eye = np.eye(psi.shape[0])
    probes = [(0.1, 0.45, 0.8), (0.0, 0.3, 1.0), (0.25, 0.5, 0.75)]
    chain = max(float(np.max(np.abs(flow.flow(a, c) - flow.flow(b, c) @ flow.flow(a, b)))) for a, b, c in probes)
    additive = max(float(np.max(np.abs(flow.h_kernel(u, a, c) - flow.h_kernel(u, a, b) - flow.h_kernel(u, b, c))))
                   for (a, b, c), u in zip(probes, (0.0, 0.5, 1.0)))
    return [
        ("duality", float(np.max(np.abs(delta @ psi - eye))), 1e-8),
        ("cholesky", float(np.max(np.abs(psi @ psi.T - cov))), 1e-8),
        ("inverse_cholesky", float(np.max(np.abs(delta.T @ delta @ cov - eye))), 1e-6),
        ("chain_rule", chain, 1e-8),
        ("h_additivity", additive, 1e-10),
    ]


def cmd_selftest(args: argparse.Namespace) -> int:
    model = _load_model(args.model)
    checks = _stage("selftest", lambda: selftest_checks(model, args.depth, **_flow_options(args)))
    rows = [[name, err, tol, "PASS" if err <= tol else "FAIL"] for name, err, tol in checks]
    _emit(args, ["check", "error", "tolerance", "status"], rows)
    for name, err, tol in checks:
        print(f"{'PASS' if err <= tol else 'FAIL'} {name} error={err:.3g} tolerance={tol:g}", file=sys.stderr)
    return 0 if all(err <= tol for _, err, tol in checks) else 1


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return value


def _count(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError("must be a non-negative integer")
    return value


def _levels(text: str) -> int:
    try:
        value = int(text.lstrip("+"))
    except ValueError:
        raise argparse.ArgumentTypeError("expected a level count such as +1") from None
    if value < 0:
        raise argparse.ArgumentTypeError("must be non-negative")
    return value


def _probability(text: str) -> float:
    value = float(text)
    if not 0.0 < value < 1.0:
        raise argparse.ArgumentTypeError("must lie strictly between 0 and 1")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gmschauder", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="output file (default: standard output)")
    common.add_argument("--format", choices=("csv", "json"), default="csv")
    common.add_argument("--threads", type=_positive, default=None,
                        help=f"worker threads (default: all cores; {THREADS_ENV} overrides)")
    common.add_argument("--flow-steps", type=_positive, default=None, help="RK4 steps per unit time")
    common.add_argument("--quadrature-order", type=_positive, default=None, help="Gauss-Legendre nodes per interval")
    common.add_argument("--partition", choices=("dyadic",), default="dyadic", help="support tree kind")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("basis", parents=[common], help="tabulate psi and phi of every element")
    p.add_argument("--model")
    p.add_argument("--depth", type=_positive, required=True)
    p.add_argument("--grid", type=_positive, default=257)
    p.set_defaults(handler=cmd_basis)

    p = sub.add_parser("simulate", parents=[common], help="sample paths on the dyadic grid")
    p.add_argument("--model")
    p.add_argument("--depth", type=_positive, required=True)
    p.add_argument("--paths", type=_count, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("refine", parents=[common], help="add nodes to simulated paths")
    p.add_argument("--model")
    p.add_argument("--in", dest="input", required=True, help="paths CSV written by simulate or refine")
    p.add_argument("--seed", type=int, required=True, help="seed the paths were simulated with")
    p.add_argument("--levels", type=_levels, default=1, help="number of whole levels to add, e.g. +2 (default +1)")
    p.add_argument("--targets", help="comma-separated n:k nodes to add instead of whole levels")
    p.set_defaults(handler=cmd_refine)

    p = sub.add_parser("coeffs", parents=[common], help="coefficients of grid data")
    p.add_argument("--model")
    p.add_argument("--in", "--data", dest="data", required=True, help="CSV with columns t,i,x_i (or t,x0,...)")
    p.add_argument("--depth", type=_positive, required=True)
    p.set_defaults(handler=cmd_coeffs)

    p = sub.add_parser("interp", parents=[common], help="minimal-energy interpolant of grid data")
    p.add_argument("--model")
    p.add_argument("--data", required=True, help="CSV with columns t,i,x_i (or t,x0,...)")
    p.add_argument("--depth", type=_positive, required=True)
    p.add_argument("--grid", type=_positive, default=257)
    p.set_defaults(handler=cmd_interp)

    p = sub.add_parser("girsanov", parents=[common], help="likelihood ratios between two scalar models")
    p.add_argument("--alpha", required=True, help="model the paths are drawn from")
    p.add_argument("--beta", required=True, help="target model")
    p.add_argument("--depth", type=_positive, required=True)
    p.add_argument("--paths", type=_count, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--reduce", action="store_true", help="rescale beta to the diffusion of alpha first")
    p.set_defaults(handler=cmd_girsanov)

    p = sub.add_parser("fpt", parents=[common], help="first-passage brackets by adaptive refinement")
    p.add_argument("--model")
    p.add_argument("--level", type=float, required=True)
    p.add_argument("--direction", help="comma-separated half-space normal for d > 1")
    p.add_argument("--paths", type=_count, default=1000)
    p.add_argument("--max-depth", type=_positive, default=12)
    p.add_argument("--start-depth", type=_positive, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--p-low", type=_probability, default=1e-4)
    p.add_argument("--p-high", type=_probability, default=1.0 - 1e-4)
    p.set_defaults(handler=cmd_fpt)

    p = sub.add_parser("selftest", parents=[common], help="check the analytic identities")
    p.add_argument("--model")
    p.add_argument("--depth", type=_positive, default=5)
    p.set_defaults(handler=cmd_selftest)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    try:
        return args.handler(args)
    except StageError as exc:
        print(f"gmschauder {args.command}: stage '{exc.stage}' failed: {exc.__cause__}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
