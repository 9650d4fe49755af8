"""Command-line entry point: gen / index / query / bench.

Exit codes: 0 success, 2 usage error, 3 I/O or corrupt-file error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from collections import defaultdict
from pathlib import Path

import numpy as np

from .core import QueryKind, QuerySpec
from .datafile import read_series, write_series
from .errors import CorruptIndex, InvalidSeries, KVMatchError
from .kvindex import DEFAULT_D, DEFAULT_GAMMA, KVIndex, build
from .matcher import match
from .segmenter import IndexFamily, match_dp
from .testkit import GeneratorConfig, generate

EXIT_USAGE = 2
EXIT_IO = 3

log = logging.getLogger("kvmatch")


class UsageError(Exception):
    pass


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected an integer >= 1, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kvmatch", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write a synthetic series as raw float64")
    p.add_argument("--length", type=_positive_int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("index", help="build one index or a doubling family of indexes")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--w", type=_positive_int)
    p.add_argument("--out", type=Path)
    p.add_argument("--family", action="store_true")
    p.add_argument("--wu", type=_positive_int, default=25)
    p.add_argument("--levels", type=_positive_int, default=5)
    p.add_argument("--out-dir", type=Path)
    p.add_argument("--d", type=float, default=DEFAULT_D)
    p.add_argument("--gamma", type=float, default=DEFAULT_GAMMA)
    p.add_argument("--cascade", action="store_true",
                   help="re-test merged rows against the next row")
    p.add_argument("--json", action="store_true")

    for name in ("query", "bench"):
        p = sub.add_parser(name)
        p.add_argument("--data", type=Path, required=True)
        p.add_argument("--index", required=True, help="index file, or comma-separated family with --dp")
        if name == "query":
            p.add_argument("--query", type=Path, required=True)
        else:
            p.add_argument("--queries", type=Path, required=True)
            p.add_argument("--selectivity-target", type=float)
        p.add_argument("--type", required=True, choices=[k.value for k in QueryKind])
        p.add_argument("--epsilon", type=float, required=(name == "query"))
        p.add_argument("--alpha", type=float)
        beta = p.add_mutually_exclusive_group()
        beta.add_argument("--beta", type=float)
        beta.add_argument("--beta-rel", type=float, help="beta as percent of the data range")
        rho = p.add_mutually_exclusive_group()
        rho.add_argument("--rho", type=int)
        rho.add_argument("--rho-rel", type=float, help="rho as percent of the query length")
        p.add_argument("--dp", action="store_true")
        p.add_argument("--order", choices=["natural", "estimate"], default="natural")
        p.add_argument("--max-windows", type=_positive_int)
        p.add_argument("--row-cache", action="store_true")
        p.add_argument("--no-lb", action="store_true")
        p.add_argument("--json", action="store_true")
    return parser


# -- gen / index -------------------------------------------------------------

def cmd_gen(args) -> int:
    x = generate(GeneratorConfig(args.length, seed=args.seed))
    write_series(args.out, x)
    print(f"n={x.size} min={x.min():.6f} max={x.max():.6f}")
    return 0


def _index_summary(idx: KVIndex, seconds: float, path: Path) -> dict:
    return {"path": str(path), "w": idx.w, "n": idx.n, "rows": idx.n_rows,
            "n_I": idx.total_intervals, "n_P": idx.total_positions,
            "bytes": path.stat().st_size, "build_seconds": round(seconds, 6)}


def cmd_index(args) -> int:
    x = read_series(args.data)
    if args.family:
        if args.out_dir is None:
            raise UsageError("--family needs --out-dir")
        args.out_dir.mkdir(parents=True, exist_ok=True)
        widths = [args.wu * 2 ** i for i in range(args.levels)]
        targets = [(w, args.out_dir / f"index_w{w}.kvmi") for w in widths]
    else:
        if args.w is None or args.out is None:
            raise UsageError("need --w and --out (or --family --out-dir)")
        targets = [(args.w, args.out)]
    summaries = []
    for w, path in targets:
        t0 = time.perf_counter()
        idx = build(x, w, args.d, args.gamma, cascade=args.cascade)
        seconds = time.perf_counter() - t0
        idx.save(path)
        summaries.append(_index_summary(idx, seconds, path))
    if args.json:
        print(json.dumps(summaries if args.family else summaries[0], indent=2))
    else:
        for s in summaries:
            print(f"{s['path']}: w={s['w']} rows={s['rows']} n_I={s['n_I']} n_P={s['n_P']} "
                  f"bytes={s['bytes']} build={s['build_seconds']:.3f}s")
    return 0


# -- query / bench -----------------------------------------------------------

def _spec_for(args, q: np.ndarray, x: np.ndarray, epsilon: float) -> QuerySpec:
    kind = QueryKind(args.type)
    kw = {}
    if kind.normalized:
        if args.alpha is None or (args.beta is None and args.beta_rel is None):
            raise UsageError(f"--type {kind.value} needs --alpha and one of --beta / --beta-rel")
        beta = args.beta
        if beta is None:
            beta = (float(np.max(x)) - float(np.min(x))) * args.beta_rel / 100.0
        kw.update(alpha=args.alpha, beta=beta)
    elif args.alpha is not None or args.beta is not None or args.beta_rel is not None:
        raise UsageError("--alpha / --beta only apply to cnsm-* queries")
    if kind.uses_dtw:
        if args.rho is None and args.rho_rel is None:
            raise UsageError(f"--type {kind.value} needs --rho or --rho-rel")
        kw["rho"] = args.rho if args.rho is not None else int(round(q.size * args.rho_rel / 100.0))
    elif args.rho is not None or args.rho_rel is not None:
        raise UsageError("--rho only applies to *-dtw queries")
    return QuerySpec(q, kind, epsilon, **kw)


class _Engine:
    def __init__(self, args):
        paths = [Path(p) for p in args.index.split(",") if p]
        if len(paths) > 1 and not args.dp:
            raise UsageError("several indexes need --dp")
        self.x = read_series(args.data)
        self.dp = args.dp
        if args.dp:
            self.family = IndexFamily.open(paths)
        else:
            self.index = KVIndex.open(paths[0])
        n = self.family.n if args.dp else self.index.n
        if n != self.x.size:
            raise CorruptIndex(f"index covers {n} values but data file has {self.x.size}")
        self.opts = dict(order=args.order, max_windows=args.max_windows,
                         row_cache=args.row_cache, lb=not args.no_lb)

    def run(self, spec: QuerySpec):
        t0 = time.perf_counter()
        if self.dp:
            results, stats, seg = match_dp(self.x, self.family, spec, **self.opts)
        else:
            (results, stats), seg = match(self.x, self.index, spec, **self.opts), None
        return results, stats, seg, time.perf_counter() - t0


def _report(results, stats, seg, seconds, spec: QuerySpec, n: int) -> dict:
    total = n - spec.m + 1
    return {
        "matches": [{"offset": r.offset, "distance": r.distance} for r in results],
        "stats": {
            "windows": [{"start": w.start, "length": w.length, "rows_scanned": w.rows_scanned,
                         "is_n_I": w.is_intervals, "is_n_P": w.is_positions,
                         "estimate_n_I": w.estimate, "scanned": w.scanned}
                        for w in stats.windows],
            "scans": stats.scans,
            "index_accesses": stats.index_accesses,
            "cs_n_I": stats.cs_intervals,
            "cs_n_P": stats.cs_positions,
            "candidates_verified": stats.candidates_verified,
            "lb_pruned": stats.lb_pruned,
            "matches": len(results),
            "pruning": stats.cs_positions / total if total > 0 else 0.0,
            "phase1_seconds": stats.probe_seconds,
            "phase2_seconds": stats.verify_seconds,
            "total_seconds": seconds,
        },
        "segmentation": None if seg is None else [list(w) for w in seg.windows],
        "query": {"type": spec.kind.value, "length": spec.m, "epsilon": spec.epsilon,
                  "alpha": spec.alpha, "beta": spec.beta, "rho": spec.rho},
    }


def cmd_query(args) -> int:
    engine = _Engine(args)
    q = read_series(args.query, mmap=False)
    spec = _spec_for(args, q, engine.x, args.epsilon)
    report = _report(*engine.run(spec), spec, engine.x.size)
    if args.json:
        print(json.dumps(report, indent=2))
        return 0
    out = sys.stdout
    for m in report["matches"]:
        out.write(f"{m['offset']}\t{m['distance']:.6f}\n")
    st = report["stats"]
    for key in ("matches", "scans", "index_accesses", "cs_n_I", "cs_n_P", "candidates_verified",
                "lb_pruned", "pruning", "phase1_seconds", "phase2_seconds", "total_seconds"):
        print(f"{key}: {st[key]}", file=sys.stderr)
    for w in st["windows"]:
        print(f"window start={w['start']} length={w['length']} rows={w['rows_scanned']} "
              f"n_I={w['is_n_I']} n_P={w['is_n_P']}", file=sys.stderr)
    if report["segmentation"] is not None:
        print(f"segmentation: {report['segmentation']}", file=sys.stderr)
    return 0


def calibrate_by_count(run, target_count: int, hi: float = 1.0, iters: int = 30) -> float:
    """Bisect epsilon until run(eps) returns about target_count matches."""
    lo = 0.0
    for _ in range(60):
        if len(run(hi)) >= target_count:
            break
        lo, hi = hi, hi * 2
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if len(run(mid)) >= target_count:
            hi = mid
        else:
            lo = mid
    return hi


def cmd_bench(args) -> int:
    if args.epsilon is None and args.selectivity_target is None:
        raise UsageError("bench needs --epsilon or --selectivity-target")
    engine = _Engine(args)
    files = sorted(p for p in args.queries.iterdir() if p.is_file()) if args.queries.is_dir() else None
    if files is None:
        raise OSError(f"{args.queries} is not a directory")
    buckets = defaultdict(list)
    for path in files:
        q = read_series(path, mmap=False)
        eps = args.epsilon
        if args.selectivity_target is not None:
            target = max(1, int(round(args.selectivity_target * (engine.x.size - q.size + 1))))
            eps = calibrate_by_count(
                lambda e: engine.run(_spec_for(args, q, engine.x, e))[0], target)
        spec = _spec_for(args, q, engine.x, eps)
        results, stats, seg, seconds = engine.run(spec)
        total = engine.x.size - spec.m + 1
        buckets[spec.m].append({
            "query": path.name, "epsilon": eps, "matches": len(results),
            "candidates": stats.cs_positions, "index_accesses": stats.index_accesses,
            "scans": stats.scans, "seconds": seconds, "pruning": stats.cs_positions / total,
            "selectivity": len(results) / total})
    table = []
    for m in sorted(buckets):
        rows = buckets[m]
        table.append({"query_length": m, "queries": len(rows),
                      **{f"mean_{k}": float(np.mean([r[k] for r in rows]))
                         for k in ("matches", "candidates", "index_accesses", "seconds",
                                   "pruning", "selectivity")}})
    if args.json:
        print(json.dumps({"table": table, "queries": dict(buckets)}, indent=2))
    else:
        cols = ["query_length", "queries", "mean_matches", "mean_candidates",
                "mean_index_accesses", "mean_seconds", "mean_pruning", "mean_selectivity"]
        print("\t".join(cols))
        for row in table:
            print("\t".join(f"{row[c]:.6g}" if isinstance(row[c], float) else str(row[c])
                            for c in cols))
    return 0


COMMANDS = {"gen": cmd_gen, "index": cmd_index, "query": cmd_query, "bench": cmd_bench}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"kvmatch: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, CorruptIndex, InvalidSeries) as exc:
        print(f"kvmatch: {exc}", file=sys.stderr)
        return EXIT_IO
    except (KVMatchError, ValueError) as exc:
        print(f"kvmatch: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
