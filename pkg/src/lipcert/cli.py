"""Command-line surface: generate, estimate, verify, bench.

Exit codes: 0 success, 2 parse/shape/argument problems, 3 numeric
failures, 4 certificate verification failures.  Benchmark grids run
concurrently up to the ``ECLIPSE_THREADS`` cap (default: CPU count) with
cooperative per-run timeouts checked between estimation stages; rows are
aggregated in grid order, never completion order.
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from . import cascade, estimators, netio, sdpsolve
from .errors import (
    EstimateTimeout,
    LipcertError,
    ParseError,
    ShapeError,
    SizeError,
    VerificationError,
)

CSV_HEADER = "depth,width,seed,algo,L,L_normalized,wall_time_s,status"

_CLI_ALGOS = ("fast", "sdp", "trivial", "joint-neuron", "joint-layer")


def _algo_key(name: str) -> str:
    return name.replace("-", "_")


@dataclass(frozen=True)
class BenchRecord:
    """One benchmark measurement: a (network, algorithm) cell."""

    depth: int
    width: int
    seed: int
    algo: str
    L: float
    L_normalized: float
    wall_time_s: float
    status: str  # "ok", "timeout", "error"


def _estimate_by_name(net, algo: str, tol: float, slack: float, verify: bool, deadline=None):
    opts = estimators.EstimateOptions(
        algo=_algo_key(algo), sdp_tol=tol, slack=slack, verify=verify
    )
    return estimators.estimate(net, opts, deadline=deadline)


def _protocol_dims(layers: int, neurons: int, input_dim: int, output_dim: int):
    if layers < 1:
        raise ValueError(f"need at least one layer, got {layers}")
    if layers > 1 and neurons < 1:
        raise ValueError(f"hidden width must be positive, got {neurons}")
    if input_dim < 1 or output_dim < 1:
        raise ValueError("input and output dimensions must be positive")
    return [input_dim] + [neurons] * (layers - 1) + [output_dim]


def cmd_generate(args) -> int:
    dims = _protocol_dims(args.layers, args.neurons, args.input_dim, args.output_dim)
    net = netio.random_network(
        args.layers, dims, args.seed, norm_range=(args.norm_lo, args.norm_hi)
    )
    netio.save_network(net, args.out, fmt=args.format)
    from .spectral import spectral_norm

    for i, la in enumerate(net.layers, start=1):
        print(f"layer {i}: shape {la.W.shape[0]}x{la.W.shape[1]} "
              f"spectral_norm={spectral_norm(la.W):.12f}")
    print(f"wrote {args.out}")
    return 0


def cmd_estimate(args) -> int:
    net = netio.load_network(args.net)
    t0 = time.perf_counter()
    cert = _estimate_by_name(net, args.algo, args.tol, args.slack, args.verify)
    dt = time.perf_counter() - t0
    print(f"L={cert.L:.6f}")
    print(f"time_s={dt:.3f}")
    if args.out:
        cascade.save_certificate(cert, args.out)
        print(f"wrote certificate {args.out}")
    return 0


def cmd_verify(args) -> int:
    net = netio.load_network(args.net)
    cert = cascade.load_certificate(args.cert)
    ok = True
    if args.mode in ("chain", "both"):
        report = cascade.verify_chain(net, cert, slack=args.slack)
        margins = " ".join(f"{m:.3e}" for m in report.min_eigs)
        print(f"chain: {'ok' if report.ok else 'FAIL'} stage_min_eigs=[{margins}]")
        ok = ok and report.ok
    if args.mode in ("monolithic", "both"):
        report = cascade.verify_monolithic(net, cert, slack=args.slack)
        print(
            f"monolithic: {'ok' if report.ok else 'FAIL'} "
            f"min_eig={report.min_eig:.3e} dim={report.dim}"
        )
        ok = ok and report.ok
    if not ok:
        raise VerificationError("certificate failed verification")
    return 0


def _parse_int_list(text: str):
    try:
        values = [int(tok) for tok in text.split(",") if tok.strip() != ""]
    except ValueError as exc:
        raise ValueError(f"expected comma-separated integers, got {text!r}") from exc
    if not values:
        raise ValueError(f"empty list argument {text!r}")
    return values


def _bench_cell(depth, width, seed, algos, timeout, tol, input_dim, output_dim):
    dims = _protocol_dims(depth, width, input_dim, output_dim)
    net = netio.random_network(depth, dims, seed)
    trivial_L = estimators.estimate_trivial(net).L
    records = []
    for algo in algos:
        deadline = time.monotonic() + timeout if timeout is not None else None
        t0 = time.perf_counter()
        status = "ok"
        L = math.nan
        try:
            cert = _estimate_by_name(net, algo, tol, 1e-6, False, deadline=deadline)
            L = cert.L
        except EstimateTimeout:
            status = "timeout"
        except (LipcertError, ValueError):
            status = "error"
        dt = time.perf_counter() - t0
        L_norm = L / trivial_L if math.isfinite(L) and trivial_L > 0 else math.nan
        records.append(
            BenchRecord(depth, width, seed, algo, L, L_norm, dt, status)
        )
    return records


def _write_csv(path, records):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER.split(","))
        for r in records:
            writer.writerow(
                [
                    r.depth,
                    r.width,
                    r.seed,
                    r.algo,
                    repr(r.L),
                    repr(r.L_normalized),
                    f"{r.wall_time_s:.6f}",
                    r.status,
                ]
            )


_SVG_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _svg_panel(out, x0, y0, w, h, title, ylabel, series):
    """One line-chart panel; series maps label -> sorted (x, y) points."""
    pts_all = [p for pts in series.values() for p in pts]
    if not pts_all:
        out.append(
            f'<text x="{x0 + w / 2}" y="{y0 + h / 2}" text-anchor="middle">no data</text>'
        )
        return
    xs = [p[0] for p in pts_all]
    ys = [p[1] for p in pts_all]
    xmin, xmax = min(xs), max(xs)
    ymin, ymax = min(ys), max(ys)
    if xmax == xmin:
        xmax = xmin + 1.0
    if ymax == ymin:
        ymax = ymin + 1.0
    ymin = min(ymin, 0.0)
    px = lambda x: x0 + 45 + (w - 60) * (x - xmin) / (xmax - xmin)
    py = lambda y: y0 + h - 35 - (h - 70) * (y - ymin) / (ymax - ymin)
    out.append(
        f'<rect x="{x0 + 45}" y="{y0 + 35}" width="{w - 60}" height="{h - 70}" '
        'fill="none" stroke="#999"/>'
    )
    out.append(
        f'<text x="{x0 + w / 2}" y="{y0 + 20}" text-anchor="middle" '
        f'font-size="13">{title}</text>'
    )
    out.append(
        f'<text x="{x0 + 12}" y="{y0 + h / 2}" font-size="11" text-anchor="middle" '
        f'transform="rotate(-90 {x0 + 12} {y0 + h / 2})">{ylabel}</text>'
    )
    for frac in (0.0, 0.5, 1.0):
        xv = xmin + frac * (xmax - xmin)
        yv = ymin + frac * (ymax - ymin)
        out.append(
            f'<text x="{px(xv):.1f}" y="{y0 + h - 18}" font-size="10" '
            f'text-anchor="middle">{xv:g}</text>'
        )
        out.append(
            f'<text x="{x0 + 40}" y="{py(yv):.1f}" font-size="10" '
            f'text-anchor="end">{yv:.3g}</text>'
        )
    for k, (label, pts) in enumerate(sorted(series.items())):
        color = _SVG_COLORS[k % len(_SVG_COLORS)]
        coords = " ".join(f"{px(x):.1f},{py(y):.1f}" for x, y in pts)
        out.append(
            f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="1.5"/>'
        )
        out.append(
            f'<text x="{x0 + 50}" y="{y0 + 48 + 13 * k}" font-size="10" '
            f'fill="{color}">{label}</text>'
        )


def _write_svg(path, records):
    """Two panels: normalized bound vs depth and wall time vs depth."""
    panel_w, panel_h = 420, 300
    bound_series: dict[str, list] = {}
    time_series: dict[str, list] = {}
    for r in sorted(records, key=lambda r: (r.algo, r.width, r.depth)):
        if r.status != "ok" or not math.isfinite(r.L):
            continue
        key = f"{r.algo} w={r.width}"
        bound_series.setdefault(key, []).append((r.depth, r.L_normalized))
        time_series.setdefault(key, []).append((r.depth, r.wall_time_s))
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{2 * panel_w + 20}" '
        f'height="{panel_h}" viewBox="0 0 {2 * panel_w + 20} {panel_h}">',
    ]
    _svg_panel(out, 0, 0, panel_w, panel_h, "bound / trivial bound vs depth",
               "L / L_trivial", bound_series)
    _svg_panel(out, panel_w + 20, 0, panel_w, panel_h, "wall time vs depth",
               "seconds", time_series)
    out.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(out) + "\n")


def cmd_bench(args) -> int:
    depths = _parse_int_list(args.depths)
    widths = _parse_int_list(args.widths)
    seeds = _parse_int_list(args.seeds)
    algos = [a.strip() for a in args.algos.split(",") if a.strip()]
    for algo in algos:
        if algo not in _CLI_ALGOS:
            raise ValueError(f"unknown algorithm {algo!r}; choose from {_CLI_ALGOS}")
    cells = [(d, w, s) for d in depths for w in widths for s in seeds]
    threads = os.environ.get("ECLIPSE_THREADS")
    max_workers = max(1, int(threads)) if threads else (os.cpu_count() or 1)

    def run_cell(cell):
        d, w, s = cell
        return _bench_cell(d, w, s, algos, args.timeout, args.tol,
                           args.input_dim, args.output_dim)

    records = []
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        for cell_records in pool.map(run_cell, cells):
            records.extend(cell_records)
    records.sort(key=lambda r: (r.depth, r.width, r.seed, r.algo))
    _write_csv(args.csv, records)
    print(f"wrote {len(records)} records to {args.csv}")
    if args.svg:
        _write_svg(args.svg, records)
        print(f"wrote {args.svg}")
    n_timeout = sum(1 for r in records if r.status == "timeout")
    n_error = sum(1 for r in records if r.status == "error")
    if n_timeout:
        print(f"warning: {n_timeout} runs timed out", file=sys.stderr)
    if n_error:
        print(f"warning: {n_error} runs errored", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lipcert",
        description="Certified Lipschitz upper bounds for feed-forward networks",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a seeded random network file")
    p.add_argument("--layers", type=int, required=True)
    p.add_argument("--neurons", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--norm-lo", type=float, default=0.4)
    p.add_argument("--norm-hi", type=float, default=1.8)
    p.add_argument("--input-dim", type=int, default=4)
    p.add_argument("--output-dim", type=int, default=1)
    p.add_argument("--format", choices=("json", "ecl-binary"), default="json")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("estimate", help="estimate a Lipschitz bound")
    p.add_argument("--net", required=True)
    p.add_argument("--algo", choices=_CLI_ALGOS, default="fast")
    p.add_argument("--out", default=None, help="write certificate JSON here")
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--slack", type=float, default=1e-6)
    p.add_argument("--verify", action="store_true",
                   help="replay the certificate before exiting")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("verify", help="replay a certificate against a network")
    p.add_argument("--net", required=True)
    p.add_argument("--cert", required=True)
    p.add_argument("--mode", choices=("chain", "monolithic", "both"), default="both")
    p.add_argument("--slack", type=float, default=1e-6)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("bench", help="run a benchmark grid, write CSV and SVG")
    p.add_argument("--depths", required=True, help="comma-separated layer counts")
    p.add_argument("--widths", required=True, help="comma-separated neuron counts")
    p.add_argument("--seeds", default="0")
    p.add_argument("--algos", default="fast,trivial")
    p.add_argument("--timeout", type=float, default=None, help="seconds per run")
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--input-dim", type=int, default=4)
    p.add_argument("--output-dim", type=int, default=1)
    p.add_argument("--csv", required=True)
    p.add_argument("--svg", default=None)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on bad flags; normalize to our parse/shape code
        return 2 if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except VerificationError as exc:
        print(f"verification failed: {exc}", file=sys.stderr)
        return 4
    except (ParseError, ShapeError, SizeError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except LipcertError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
