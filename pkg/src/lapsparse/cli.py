"""Command-line front end: parse graphs, run the pipelines, emit reports.

Four subcommands: sparsify-patch, ultra, algconn, verify. Graphs travel as
text edge lists (header "n <count>", lines "u v w", blank lines and #
comments allowed) or as JSON documents {"n": ..., "edges": [[u, v, w], ...]}
chosen by file extension. Every command can emit a structured JSON report
(stdout by default, --report writes a file); all reals carry 17 significant
digits, and every certified claim in a report is recomputed from the files
actually written before the report is emitted. Exit codes: 0 success,
2 parse error, 3 precondition violation, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
import time

import numpy as np

from .core import (
    NumericalError,
    ParseError,
    PreconditionError,
    ToolkitError,
    WeightedGraph,
    eigvalsh,
    laplacian,
    pencil_eigenvalues,
)
from .connectivity import (
    ConnectivityInstance,
    brute_force_opt,
    lambda_k2_bound,
    round_solution,
    solve_fractional,
)
from .patch import sparsify_patch, verify_patch
from .ultra import build_ultrasparsifier

COHERENCE_TOL = 1e-9


# ---------------------------------------------------------------------------
# Graph file round-trip


def parse_graph_text(text: str, name: str) -> WeightedGraph:
    """Parse the text edge-list format, reporting 1-based line numbers."""
    n = None
    edges = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if n is None:
            if len(parts) != 2 or parts[0] != "n":
                raise ParseError(f"{name}:{lineno}: expected header 'n <count>', got {raw.strip()!r}")
            try:
                n = int(parts[1])
            except ValueError:
                raise ParseError(f"{name}:{lineno}: vertex count {parts[1]!r} is not an integer") from None
            continue
        if len(parts) != 3:
            raise ParseError(f"{name}:{lineno}: expected 'u v w', got {raw.strip()!r}")
        try:
            u, v, w = int(parts[0]), int(parts[1]), float(parts[2])
        except ValueError:
            raise ParseError(f"{name}:{lineno}: cannot parse edge line {raw.strip()!r}") from None
        edges.append((u, v, w, lineno))
    if n is None:
        raise ParseError(f"{name}: missing 'n <count>' header")
    for u, v, w, lineno in edges:
        try:
            WeightedGraph(max(n, 1), [(u, v, w)])
        except PreconditionError as exc:
            raise ParseError(f"{name}:{lineno}: {exc}") from None
    try:
        return WeightedGraph(n, [(u, v, w) for u, v, w, _ in edges])
    except PreconditionError as exc:
        raise ParseError(f"{name}: {exc}") from None


def parse_graph_json(text: str, name: str) -> WeightedGraph:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{name}: invalid JSON: {exc}") from None
    if not isinstance(doc, dict) or "n" not in doc or "edges" not in doc:
        raise ParseError(f"{name}: JSON graph needs keys 'n' and 'edges'")
    if not isinstance(doc["n"], int):
        raise ParseError(f"{name}: 'n' must be an integer")
    if not isinstance(doc["edges"], list):
        raise ParseError(f"{name}: 'edges' must be a list of [u, v, w]")
    edges = []
    for i, item in enumerate(doc["edges"]):
        if not isinstance(item, (list, tuple)) or len(item) != 3:
            raise ParseError(f"{name}: edges[{i}] must be [u, v, w]")
        u, v, w = item
        if not isinstance(u, int) or not isinstance(v, int) or not isinstance(w, (int, float)):
            raise ParseError(f"{name}: edges[{i}] must be [int, int, number]")
        edges.append((u, v, float(w)))
    try:
        return WeightedGraph(doc["n"], edges)
    except PreconditionError as exc:
        raise ParseError(f"{name}: {exc}") from None


def read_graph(path: str) -> WeightedGraph:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            text = handle.read()
    except OSError as exc:
        raise ParseError(f"{path}: cannot read: {exc}") from None
    if path.endswith(".json"):
        return parse_graph_json(text, path)
    return parse_graph_text(text, path)


def graph_to_text(g: WeightedGraph) -> str:
    lines = [f"n {g.n}"]
    for u, v, w in g.edges:
        lines.append(f"{u} {v} {format_float(w)}")
    return "\n".join(lines) + "\n"


def graph_to_json(g: WeightedGraph) -> str:
    return dumps_report({"n": g.n, "edges": [[u, v, w] for u, v, w in g.edges]}) + "\n"


def write_graph(path: str, g: WeightedGraph) -> None:
    text = graph_to_json(g) if path.endswith(".json") else graph_to_text(g)
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(text)


def sha256_file(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        digest.update(handle.read())
    return digest.hexdigest()


# ---------------------------------------------------------------------------
# Report serialization: JSON with 17-significant-digit reals


def format_float(x: float) -> str:
    x = float(x)
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    return format(x, ".17g")


def _emit(obj, out: list, indent: int) -> None:
    pad = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            out.append("{}")
            return
        out.append("{\n")
        items = list(obj.items())
        for i, (key, val) in enumerate(items):
            out.append(pad + "  " + json.dumps(str(key)) + ": ")
            _emit(val, out, indent + 1)
            out.append(",\n" if i < len(items) - 1 else "\n")
        out.append(pad + "}")
    elif isinstance(obj, (list, tuple)):
        if len(obj) == 0:
            out.append("[]")
            return
        out.append("[\n")
        for i, val in enumerate(obj):
            out.append(pad + "  ")
            _emit(val, out, indent + 1)
            out.append(",\n" if i < len(obj) - 1 else "\n")
        out.append(pad + "]")
    elif isinstance(obj, bool) or isinstance(obj, np.bool_):
        out.append("true" if obj else "false")
    elif isinstance(obj, (int, np.integer)):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        out.append(format_float(float(obj)))
    elif isinstance(obj, str):
        out.append(json.dumps(obj))
    elif obj is None:
        out.append("null")
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__} into a report")


def dumps_report(report: dict) -> str:
    out: list = []
    _emit(report, out, 0)
    return "".join(out)


# ---------------------------------------------------------------------------
# Shared report plumbing


def _input_block(**paths: str) -> dict:
    return {
        name: {"path": path, "sha256": sha256_file(path)} for name, path in paths.items()
    }


def _engine_trace_rows(result) -> list:
    return [
        {
            "q": rec.q,
            "index": rec.index,
            "t": rec.t,
            "slack": rec.slack,
            "l": rec.l,
            "u": rec.u,
            "lower_potential": rec.lower_potential,
            "upper_potential": rec.upper_potential,
            "lower_increase": rec.lower_increase,
            "upper_increase": rec.upper_increase,
        }
        for rec in result.trace
    ]


def _write_trace_csv(path: str, engine_results) -> None:
    columns = [
        "engine",
        "q",
        "index",
        "t",
        "slack",
        "l",
        "u",
        "lower_potential",
        "upper_potential",
        "lower_increase",
        "upper_increase",
    ]
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(columns)
        for engine_idx, result in enumerate(engine_results):
            for rec in result.trace:
                writer.writerow(
                    [
                        engine_idx,
                        rec.q,
                        rec.index,
                        format_float(rec.t),
                        format_float(rec.slack),
                        format_float(rec.l),
                        format_float(rec.u),
                        format_float(rec.lower_potential),
                        format_float(rec.upper_potential),
                        format_float(rec.lower_increase),
                        format_float(rec.upper_increase),
                    ]
                )


def _relative_deviation(a: float, b: float) -> float:
    if math.isinf(a) and math.isinf(b):
        return 0.0
    return abs(a - b) / max(1.0, abs(a), abs(b))


def _check_coherent(claims: list) -> float:
    """claims: (label, reported, recomputed) triples; raise if any disagree."""
    worst = 0.0
    for label, reported, recomputed in claims:
        dev = _relative_deviation(float(reported), float(recomputed))
        worst = max(worst, dev)
        if dev > COHERENCE_TOL:
            raise NumericalError(
                f"report-output coherence broken for {label}: reported {reported!r},"
                f" recomputed from the written output {recomputed!r}"
            )
    return worst


def _component_partition(g: WeightedGraph) -> list:
    labels = g.component_labels()
    first: dict = {}
    canon = []
    for v in range(g.n):
        lab = int(labels[v])
        if lab not in first:
            first[lab] = v
        canon.append(first[lab])
    return canon


# ---------------------------------------------------------------------------
# Commands


def cmd_sparsify_patch(
    g_path: str,
    w_path: str,
    k: int,
    out_path: str,
    n_budget: int | None = None,
    trace_csv: str | None = None,
) -> dict:
    t_start = time.perf_counter()
    g = read_graph(g_path)
    w = read_graph(w_path)
    result = sparsify_patch(g, w, k, n_budget)
    t_solve = time.perf_counter()
    write_graph(out_path, result.wk)
    if trace_csv is not None:
        _write_trace_csv(trace_csv, result.engine_results)

    wk_back = read_graph(out_path)
    gw = g.union(w) if w.edges else g
    gwk = g.union(wk_back) if wk_back.edges else g
    vals = pencil_eigenvalues(laplacian(gwk), laplacian(gw))
    re_lower, re_upper = float(vals[0]), float(vals[-1])
    re_weight = wk_back.weight_sum()
    worst = _check_coherent(
        [
            ("measured pencil lower", result.measured_lower, re_lower),
            ("measured pencil upper", result.measured_upper, re_upper),
            ("total selected weight", result.total_weight, re_weight),
        ]
    )
    if re_lower < result.certified_lower - 1e-9 or re_upper > result.certified_upper + 1e-9:
        raise NumericalError(
            f"written output violates the certified sandwich: measured"
            f" [{re_lower!r}, {re_upper!r}] vs certified"
            f" [{result.certified_lower!r}, {result.certified_upper!r}]"
        )
    t_end = time.perf_counter()

    return {
        "command": "sparsify-patch",
        "inputs": _input_block(g=g_path, w=w_path),
        "output": {"path": out_path, "edges": wk_back.num_edges},
        "parameters": {"k": k, "n_budget": result.n_budget},
        "patch": {
            "k": result.params.k,
            "t_patch": result.params.T_patch,
            "lambda_star": result.params.lambda_star,
        },
        "certified": {
            "pencil_lower": result.certified_lower,
            "pencil_upper": result.certified_upper,
            "weight_bound": result.weight_bound,
        },
        "measured": {
            "pencil_lower": result.measured_lower,
            "pencil_upper": result.measured_upper,
            "total_weight": result.total_weight,
            "support": result.wk.num_edges,
        },
        "potential_trace": [
            {"engine": i, "steps": _engine_trace_rows(res)}
            for i, res in enumerate(result.engine_results)
        ],
        "coherence": {
            "recomputed_from_output": True,
            "max_relative_deviation": worst,
        },
        "timings": {
            "solve_seconds": t_solve - t_start,
            "total_seconds": t_end - t_start,
        },
    }


def cmd_ultra(
    g_path: str,
    k: int,
    out_path: str,
    c1: float = 4.0,
    c3: float = 1.0,
    seed: int = 0,
    trace_csv: str | None = None,
) -> dict:
    t_start = time.perf_counter()
    g = read_graph(g_path)
    result = build_ultrasparsifier(g, k, c1=c1, c3=c3, seed=seed)
    t_solve = time.perf_counter()
    write_graph(out_path, result.u)
    engine_results = result.patch.engine_results if result.patch is not None else ()
    if trace_csv is not None:
        _write_trace_csv(trace_csv, engine_results)

    u_back = read_graph(out_path)
    vals_ug = pencil_eigenvalues(laplacian(u_back), laplacian(g))
    c_measured, kappa_upper = float(vals_ug[0]), float(vals_ug[-1])
    vals_gu = pencil_eigenvalues(laplacian(g), laplacian(u_back))
    worst = _check_coherent(
        [
            ("pencil (G, U) lower", result.gen_lower, float(vals_gu[0])),
            ("pencil (G, U) upper", result.gen_upper, float(vals_gu[-1])),
            ("measured kappa", result.kappa_measured, float(vals_gu[-1]) / float(vals_gu[0])),
            ("edge count", result.edge_count, u_back.num_edges),
        ]
    )
    if float(vals_gu[0]) < result.certified_lower - 1e-9:
        raise NumericalError(
            f"written output violates the certified floor: measured {float(vals_gu[0])!r}"
            f" vs certified {result.certified_lower!r}"
        )
    t_end = time.perf_counter()

    report = {
        "command": "ultra",
        "inputs": _input_block(g=g_path),
        "output": {"path": out_path, "edges": u_back.num_edges},
        "parameters": {"k": k, "c1": c1, "c3": c3, "seed": seed},
        "stretch": {
            "total": result.stretch.total,
            "trace_residual": result.trace_residual,
        },
        "certified": {
            "kappa_target": result.kappa_target,
            "pencil_lower_constant": result.certified_lower,
        },
        "measured": {
            "c": c_measured,
            "kappa": kappa_upper,
            "pencil_g_over_u_lower": result.gen_lower,
            "pencil_g_over_u_upper": result.gen_upper,
            "relative_condition_number": result.kappa_measured,
        },
        "potential_trace": [
            {"engine": i, "steps": _engine_trace_rows(res)}
            for i, res in enumerate(engine_results)
        ],
        "coherence": {
            "recomputed_from_output": True,
            "max_relative_deviation": worst,
        },
        "timings": {
            "solve_seconds": t_solve - t_start,
            "total_seconds": t_end - t_start,
        },
    }
    if result.patch is not None:
        report["patch"] = {
            "k": result.patch.params.k,
            "t_patch": result.patch.params.T_patch,
            "lambda_star": result.patch.params.lambda_star,
            "certified_pencil_lower": result.patch.certified_lower,
            "certified_pencil_upper": result.patch.certified_upper,
        }
    return report


def cmd_algconn(
    base_path: str,
    cand_path: str,
    k: int,
    out_path: str,
    tol: float = 1e-4,
    oracle: bool = False,
    trace_csv: str | None = None,
) -> dict:
    t_start = time.perf_counter()
    base = read_graph(base_path)
    cand_graph = read_graph(cand_path)
    if cand_graph.n != base.n:
        raise PreconditionError(
            f"candidate file has {cand_graph.n} vertices, base has {base.n}"
        )
    for u, v, w in cand_graph.edges:
        if w != 1.0:
            raise PreconditionError(
                f"candidate edge ({u},{v}) has weight {w!r}; candidates must be unit-weight"
            )
    inst = ConnectivityInstance(base, cand_graph.edge_pairs(), k)
    frac = solve_fractional(inst, tol=tol)
    rounded = round_solution(inst, frac)
    t_solve = time.perf_counter()
    selection = WeightedGraph(
        base.n, [(u, v, w) for (u, v), w in zip(rounded.selected, rounded.weights)]
    )
    write_graph(out_path, selection)
    engine_results = (rounded.engine,) if rounded.engine is not None else ()
    if trace_csv is not None:
        _write_trace_csv(trace_csv, engine_results)

    sel_back = read_graph(out_path)
    lap = laplacian(base) + laplacian(sel_back)
    re_lambda2 = float(eigvalsh(lap)[1])
    worst = _check_coherent(
        [
            ("achieved lambda_2 (weighted)", rounded.lambda2_weighted, re_lambda2),
            ("selected support", len(rounded.selected), sel_back.num_edges),
        ]
    )
    if re_lambda2 < rounded.floor * (1.0 - 1e-6) - 1e-12:
        raise NumericalError(
            f"written selection violates the certified floor: lambda_2 {re_lambda2!r}"
            f" vs floor {rounded.floor!r}"
        )
    t_end = time.perf_counter()

    report = {
        "command": "algconn",
        "inputs": _input_block(base=base_path, candidates=cand_path),
        "output": {"path": out_path, "edges": sel_back.num_edges},
        "parameters": {"k": k, "tol": tol, "delta": inst.delta},
        "fractional": {
            "lambda_sdp": frac.lambda_sdp,
            "iterations": frac.iterations,
            "gradient_norm": frac.gradient_norm,
            "converged": frac.converged,
            "weights": [float(x) for x in frac.weights],
        },
        "rounded": {
            "selected": [[u, v] for u, v in rounded.selected],
            "weights": [float(x) for x in rounded.weights],
            "lambda2_weighted": rounded.lambda2_weighted,
            "lambda2_unweighted": rounded.lambda2_unweighted,
            "lambda_k2": rounded.lambda_k2,
            "floor": rounded.floor,
        },
        "potential_trace": [
            {"engine": i, "steps": _engine_trace_rows(res)}
            for i, res in enumerate(engine_results)
        ],
        "coherence": {
            "recomputed_from_output": True,
            "max_relative_deviation": worst,
        },
        "timings": {
            "solve_seconds": t_solve - t_start,
            "total_seconds": t_end - t_start,
        },
    }
    if oracle:
        value, edges = brute_force_opt(inst)
        report["oracle"] = {
            "value": value,
            "edges": [[u, v] for u, v in edges],
            "within_sdp_upper": bool(value <= frac.lambda_sdp + 1e-3),
            "within_lambda_k2_upper": bool(value <= lambda_k2_bound(base, k) + 1e-9),
        }
    return report


def cmd_verify(g_path: str, h_path: str) -> dict:
    t_start = time.perf_counter()
    g = read_graph(g_path)
    h = read_graph(h_path)
    if g.n != h.n:
        raise PreconditionError(f"vertex counts differ: {g.n} vs {h.n}")
    if _component_partition(g) != _component_partition(h):
        raise PreconditionError(
            "connected components differ between the two graphs; the pencil"
            " range is only defined on a common image"
        )
    vals = pencil_eigenvalues(laplacian(h), laplacian(g))
    c, kappa = float(vals[0]), float(vals[-1])
    g2, h2 = read_graph(g_path), read_graph(h_path)
    vals2 = pencil_eigenvalues(laplacian(h2), laplacian(g2))
    worst = _check_coherent(
        [("c", c, float(vals2[0])), ("kappa", kappa, float(vals2[-1]))]
    )
    t_end = time.perf_counter()
    return {
        "command": "verify",
        "inputs": _input_block(g=g_path, h=h_path),
        "parameters": {},
        "measured": {
            "c": c,
            "kappa": kappa,
            "relative_condition_number": kappa / c if c > 0 else math.inf,
        },
        "coherence": {
            "recomputed_from_output": True,
            "max_relative_deviation": worst,
        },
        "timings": {"total_seconds": t_end - t_start},
    }


# ---------------------------------------------------------------------------
# Argument parsing and dispatch


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lapsparse",
        description="Spectral sparsification toolkit: patch sparsifiers,"
        " ultrasparsifiers, and algebraic-connectivity maximization.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("sparsify-patch", help="select few reweighted edges of W sandwiching G+W")
    p.add_argument("g", help="base graph file")
    p.add_argument("w", help="patch graph file")
    p.add_argument("out", help="output file for the selected edges")
    p.add_argument("--k", type=int, required=True, help="protected eigenvalue count")
    p.add_argument("--n-budget", type=int, default=None, help="edge budget N (default 8k+1)")
    p.add_argument("--report", default=None, help="write the JSON report here instead of stdout")
    p.add_argument("--trace-csv", default=None, help="write the per-step potential trace as CSV")

    p = sub.add_parser("ultra", help="build a spanning-tree-plus-few-edges approximation")
    p.add_argument("g", help="input graph file")
    p.add_argument("out", help="output file for the sparsifier")
    p.add_argument("--k", type=int, required=True, help="extra-edge budget parameter")
    p.add_argument("--c1", type=float, default=4.0, help="kappa_target = c1 * stretch / k")
    p.add_argument("--c3", type=float, default=1.0, help="patch scale = 1/(c3 * kappa_target)")
    p.add_argument("--seed", type=int, default=0, help="seed for the spanning-tree ensemble")
    p.add_argument("--report", default=None, help="write the JSON report here instead of stdout")
    p.add_argument("--trace-csv", default=None, help="write the per-step potential trace as CSV")

    p = sub.add_parser("algconn", help="maximize lambda_2 by adding at most k candidate edges")
    p.add_argument("base", help="base graph file")
    p.add_argument("candidates", help="candidate edges as a unit-weight graph file")
    p.add_argument("out", help="output file for the selected weighted edges")
    p.add_argument("--k", type=int, required=True, help="edge budget")
    p.add_argument("--tol", type=float, default=1e-4, help="fractional solver tolerance")
    p.add_argument("--oracle", action="store_true", help="also run the exhaustive oracle")
    p.add_argument("--report", default=None, help="write the JSON report here instead of stdout")
    p.add_argument("--trace-csv", default=None, help="write the per-step potential trace as CSV")

    p = sub.add_parser("verify", help="measure the tightest c L_G <= L_H <= kappa L_G")
    p.add_argument("g", help="reference graph file")
    p.add_argument("h", help="graph to compare against the reference")
    p.add_argument("--report", default=None, help="write the JSON report here instead of stdout")

    return parser


def _dispatch(args: argparse.Namespace) -> dict:
    if args.subcommand == "sparsify-patch":
        return cmd_sparsify_patch(
            args.g, args.w, args.k, args.out, n_budget=args.n_budget, trace_csv=args.trace_csv
        )
    if args.subcommand == "ultra":
        return cmd_ultra(
            args.g, args.k, args.out, c1=args.c1, c3=args.c3, seed=args.seed,
            trace_csv=args.trace_csv,
        )
    if args.subcommand == "algconn":
        return cmd_algconn(
            args.base, args.candidates, args.k, args.out, tol=args.tol,
            oracle=args.oracle, trace_csv=args.trace_csv,
        )
    if args.subcommand == "verify":
        return cmd_verify(args.g, args.h)
    raise AssertionError(f"unknown subcommand {args.subcommand!r}")


def main(argv: list | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        report = _dispatch(args)
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except PreconditionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (NumericalError, ToolkitError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    text = dumps_report(report) + "\n"
    if getattr(args, "report", None):
        with open(args.report, "w", encoding="utf-8") as handle:
            handle.write(text)
    else:
        sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
