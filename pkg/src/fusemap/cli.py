"""``fusemap`` command line.

Exit codes: 0 success, 1 input or usage error, 2 no feasible mapping.
Reports are JSON and plot series are CSV.  Wall-clock timings only appear in
CSV series so that JSON reports are byte-identical across reruns.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import time
from dataclasses import asdict
from fractions import Fraction
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from .arch import ArchSpec, load_arch, toy_arch
from .baselines import BASELINES, oracle
from .errors import BudgetExceeded, FusemapError, NoFeasibleMapping, SchemaError, SeedError
from .ffm import (OBJECTIVES, MappingResult, SearchConfig, TableWorkload, build_problem, map_problem,
                  resolve_threads, table_from_dict)
from .looptree import render
from .workload import Workload, load_workload, make_chain

EXIT_OK, EXIT_INPUT, EXIT_INFEASIBLE = 0, 1, 2


class UsageError(FusemapError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse would exit with 2, which means "infeasible" here
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _num(x: Fraction | int) -> int | str:
    x = Fraction(x)
    return int(x) if x.denominator == 1 else f"{x.numerator}/{x.denominator}"


# --------------------------------------------------------------------------
# Input


def _read_json(path: str, what: str) -> Any:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read {what} file {path!r}: {exc.strerror}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{what}: invalid JSON in {path!r} ({exc})") from exc


def load_inputs(args) -> tuple[Workload | TableWorkload, ArchSpec | None, dict, dict | None]:
    wdoc = _read_json(args.workload, "workload")
    if isinstance(wdoc, dict) and "table" in wdoc:
        workload: Workload | TableWorkload = table_from_dict(wdoc)
    else:
        workload = load_workload(wdoc)
    arch, adoc = None, None
    if args.arch:
        adoc = _read_json(args.arch, "arch")
        arch = load_arch(adoc)
    elif isinstance(workload, Workload):
        raise UsageError("--arch is required for Einsum workloads")
    return workload, arch, wdoc, adoc


def search_config(args) -> SearchConfig:
    return SearchConfig(
        objective=args.objective,
        max_loops_per_rank=args.max_loops_per_rank,
        max_loops=args.max_loops,
        explore_permutations=not args.no_permutations,
        max_pmappings=args.max_pmappings,
        threads=resolve_threads(args.threads),
        max_inner_copies=args.max_inner_copies,
        require_innermost=args.require_innermost,
    )


def _problem(workload, arch, cfg, capacity_prune: bool = True):
    if isinstance(workload, TableWorkload):
        return workload.problem()
    return build_problem(workload, arch, cfg, capacity_prune=capacity_prune)


# --------------------------------------------------------------------------
# Output


def _summary(workload, arch: ArchSpec | None) -> dict:
    if isinstance(workload, TableWorkload):
        w = {"kind": "table", "einsums": list(workload.einsums),
             "candidates": [len(r) for r in workload.entries]}
    else:
        w = {"kind": "einsums", "einsums": [e.name for e in workload.einsums],
             "ops": [workload.ops(e) for e in workload.einsums]}
    a = None
    if arch is not None:
        a = {"levels": [lv.name for lv in arch.levels],
             "capacities": [lv.capacity_bytes for lv in arch.levels]}
    return {"workload": w, "arch": a}


def result_dict(res: MappingResult, arch: ArchSpec | None, with_steps: bool = True) -> dict:
    out: dict[str, Any] = {
        "objective": res.objective,
        "value": _num(res.value),
        "energy": _num(res.energy),
        "latency": _num(res.latency),
        "edp": _num(res.edp),
        "choice": [int(c) for c in res.choice],
        "labels": list(res.labels),
    }
    if arch is not None:
        out["usage"] = {arch.levels[lv].name: int(b) for lv, b in sorted(res.usage.items())}
    if res.best_tree is not None and arch is not None:
        out["tree"] = render(res.best_tree.tree, [lv.name for lv in arch.levels]).splitlines()
    if res.best_cost is not None and arch is not None:
        out["cost"] = res.best_cost.to_dict(arch)
    if with_steps:
        out["steps"] = [{k: v for k, v in s.row().items() if k != "elapsed"} for s in res.per_step_stats]
        out["max_tracked_entries"] = res.max_tracked_entries
        out["bound_violations"] = res.bound_violations
    return out


def make_report(command: str, res: MappingResult | None, workload, arch, wdoc, adoc, cfg: SearchConfig,
                seed: int | None = None, extra: dict | None = None) -> dict:
    search = {k: v for k, v in asdict(cfg).items() if k != "threads"}
    rep = {
        "tool": "fusemap",
        "version": __version__,
        "command": command,
        "seed": seed,
        **_summary(workload, arch),
        "objective": cfg.objective,
        "config": {"workload": wdoc, "arch": adoc, "search": search},
        "best": None if res is None else result_dict(res, arch),
    }
    if extra:
        rep.update(extra)
    return rep


def _write(text: str, path: str | None) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _dump(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=False) + "\n"


def _csv(rows: Sequence[dict], fields: Sequence[str]) -> str:
    buf = io.StringIO()
    wr = csv.DictWriter(buf, fieldnames=list(fields), lineterminator="\n")
    wr.writeheader()
    for r in rows:
        wr.writerow(r)
    return buf.getvalue()


# --------------------------------------------------------------------------
# Series used by ablate and scaling


ABLATE_FIELDS = ("step", "einsum", "joins_with_skip", "joins_without_skip", "frontier_consolidated",
                 "frontier_unconsolidated", "ms_baseline", "ms_without_skip", "ms_without_consolidation")


def ablation_series(problem, objective: str, threads: int = 1) -> tuple[list[dict], dict[str, MappingResult]]:
    runs = {
        "baseline": map_problem(problem, objective, True, True, threads),
        "no_skip": map_problem(problem, objective, False, True, threads),
        "no_consolidation": map_problem(problem, objective, True, False, threads),
    }
    rows = []
    for k, (b, s, c) in enumerate(zip(runs["baseline"].per_step_stats, runs["no_skip"].per_step_stats,
                                      runs["no_consolidation"].per_step_stats)):
        rows.append({
            "step": k, "einsum": b.einsum,
            "joins_with_skip": b.joins_attempted, "joins_without_skip": s.joins_attempted,
            "frontier_consolidated": b.frontier_size, "frontier_unconsolidated": c.frontier_size,
            "ms_baseline": round(b.elapsed * 1e3, 3), "ms_without_skip": round(s.elapsed * 1e3, 3),
            "ms_without_consolidation": round(c.elapsed * 1e3, 3),
        })
    return rows, runs


SCALING_FIELDS = ("einsums", "step", "einsum", "join_ms", "frontier_size", "groups", "joins_attempted",
                  "enumerate_ms")


def scaling_series(lengths: Sequence[int], m: int, pattern: Sequence[tuple[int, int]], arch: ArchSpec,
                   cfg: SearchConfig) -> list[dict]:
    rows = []
    for n in lengths:
        w = make_chain(n, m, pattern)
        t0 = time.perf_counter()
        pb = build_problem(w, arch, cfg)
        t_enum = (time.perf_counter() - t0) * 1e3
        res = map_problem(pb, cfg.objective, threads=cfg.threads)
        for k, s in enumerate(res.per_step_stats):
            rows.append({"einsums": n, "step": k, "einsum": s.einsum, "join_ms": round(s.elapsed * 1e3, 3),
                         "frontier_size": s.frontier_size, "groups": s.groups,
                         "joins_attempted": s.joins_attempted, "enumerate_ms": round(t_enum, 3)})
    return rows


def warm_up() -> None:
    """Compile the numba kernels once so timings measure the search, not the JIT."""
    pb = build_problem(make_chain(2, 2, [(2, 2)]), toy_arch(64), SearchConfig(max_loops=1))
    map_problem(pb, "edp", threads=1)


def parse_pattern(text: str) -> list[tuple[int, int]]:
    try:
        out = []
        for part in text.split(","):
            n, k = part.lower().split("x")
            out.append((int(n), int(k)))
        return out
    except ValueError as exc:
        raise UsageError(f"--pattern expects NxK[,NxK...], got {text!r}") from exc


def parse_lengths(text: str) -> list[int]:
    try:
        vals = [int(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise UsageError(f"--einsums expects a comma-separated list of integers, got {text!r}") from exc
    if not vals or any(v < 1 for v in vals):
        raise UsageError("--einsums values must be positive")
    return vals


# --------------------------------------------------------------------------
# Commands


def cmd_map(args) -> int:
    workload, arch, wdoc, adoc = load_inputs(args)
    cfg = search_config(args)
    pb = _problem(workload, arch, cfg)
    res = map_problem(pb, cfg.objective, threads=cfg.threads)
    _write(_dump(make_report("map", res, workload, arch, wdoc, adoc, cfg)), args.out)
    if args.stats_csv:
        rows = [dict(step=k, **{**s.row(), "elapsed": round(s.elapsed * 1e3, 3)})
                for k, s in enumerate(res.per_step_stats)]
        _write(_csv(rows, ["step", "einsum", "groups", "frontier_size", "joins_attempted",
                           "joins_skipped", "elapsed"]), args.stats_csv)
    return EXIT_OK


def cmd_oracle(args) -> int:
    workload, arch, wdoc, adoc = load_inputs(args)
    cfg = search_config(args)
    res = oracle(workload, arch, cfg, limit=args.limit)
    extra = {"mapspace_size": res.mapspace_size, "feasible_count": res.feasible_count}
    _write(_dump(make_report("oracle", res.best, workload, arch, wdoc, adoc, cfg, extra=extra)), args.out)
    if res.best is None:
        raise NoFeasibleMapping("no mapping in the mapspace fits the capacities")
    return EXIT_OK


def cmd_baseline(args) -> int:
    if args.budget < 1:
        raise UsageError("--budget must be at least 1")
    workload, arch, wdoc, adoc = load_inputs(args)
    cfg = search_config(args)
    pb = _problem(workload, arch, cfg)
    try:
        res, trace = BASELINES[args.kind](workload, arch, cfg, budget=args.budget, seed=args.seed, problem=pb)
    except SeedError as exc:
        raise NoFeasibleMapping(str(exc)) from exc
    extra = {"baseline": args.kind, "budget": args.budget, "evaluations": trace.samples[-1][0] if trace.samples else 0}
    _write(_dump(make_report(f"baseline {args.kind}", res, workload, arch, wdoc, adoc, cfg, args.seed, extra)),
           args.out)
    if args.trace_csv:
        _write(trace.to_csv(), args.trace_csv)
    if res is None:
        raise NoFeasibleMapping(f"{args.kind} found no feasible mapping within {args.budget} evaluations")
    return EXIT_OK


def cmd_ablate(args) -> int:
    workload, arch, wdoc, adoc = load_inputs(args)
    cfg = search_config(args)
    pb = _problem(workload, arch, cfg)
    rows, runs = ablation_series(pb, cfg.objective, cfg.threads)
    same = all(r.same_mapping(runs["baseline"]) for r in runs.values())
    extra = {"ablation": {name: result_dict(r, arch) for name, r in runs.items()},
             "identical_best_mapping": same}
    _write(_dump(make_report("ablate", runs["baseline"], workload, arch, wdoc, adoc, cfg, extra=extra)),
           args.out)
    if args.csv:
        _write(_csv(rows, ABLATE_FIELDS), args.csv)
    return EXIT_OK


def cmd_scaling(args) -> int:
    lengths = parse_lengths(args.einsums)
    pattern = parse_pattern(args.pattern)
    if args.arch:
        arch = load_arch(_read_json(args.arch, "arch"))
    else:
        arch = toy_arch(args.glb, args.levels)
    cfg = search_config(args)
    warm_up()
    rows = scaling_series(lengths, args.m, pattern, arch, cfg)
    _write(_csv(rows, SCALING_FIELDS), args.csv or args.out)
    return EXIT_OK


def cmd_chain(args) -> int:
    w = make_chain(args.einsums, args.m, parse_pattern(args.pattern))
    _write(json.dumps(w.to_dict(), indent=2) + "\n", args.out)
    return EXIT_OK


# --------------------------------------------------------------------------
# Parser


def _search_flags(p: argparse.ArgumentParser, workload: bool = True) -> None:
    if workload:
        p.add_argument("--workload", required=True, help="workload or candidate-table JSON")
    p.add_argument("--arch", help="architecture JSON (optional for candidate tables)")
    p.add_argument("--objective", choices=OBJECTIVES, default="edp")
    p.add_argument("--max-loops", type=int, default=None, help="temporal loops per Einsum")
    p.add_argument("--max-loops-per-rank", type=int, default=1)
    p.add_argument("--max-inner-copies", type=int, default=None,
                   help="non-backing storage nodes per pmapping")
    p.add_argument("--require-innermost", action="store_true",
                   help="every operand must be staged in the innermost level")
    p.add_argument("--no-permutations", action="store_true", help="keep loops in rank order")
    p.add_argument("--max-pmappings", type=int, default=200_000)
    p.add_argument("--threads", type=int, default=None, help="overrides FUSEMAP_THREADS")
    p.add_argument("--out", default=None, help="report path (default: stdout)")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="fusemap", description="Fused-mapping search for Einsum cascades.")
    ap.add_argument("--version", action="version", version=f"fusemap {__version__}")
    sub = ap.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    p = sub.add_parser("map", help="optimal fused mapping")
    _search_flags(p)
    p.add_argument("--stats-csv", help="per-step statistics CSV")
    p.set_defaults(fn=cmd_map)

    p = sub.add_parser("oracle", help="exhaustive search (small mapspaces only)")
    _search_flags(p)
    p.add_argument("--limit", type=int, default=10**6)
    p.set_defaults(fn=cmd_oracle)

    p = sub.add_parser("baseline", help="random search, simulated annealing or genetic algorithm")
    p.add_argument("kind", choices=sorted(BASELINES))
    _search_flags(p)
    p.add_argument("--budget", type=int, default=1000, help="cost evaluations")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trace-csv", help="convergence trace CSV")
    p.set_defaults(fn=cmd_baseline)

    p = sub.add_parser("ablate", help="rerun with each search optimisation disabled")
    _search_flags(p)
    p.add_argument("--csv", help="per-step ablation CSV")
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("scaling", help="per-Einsum join time over matmul chains")
    _search_flags(p, workload=False)
    p.add_argument("--einsums", default="2,4,8,16")
    p.add_argument("--m", type=int, default=8)
    p.add_argument("--pattern", default="8x8", help="rotating NxK list, e.g. 8x8,2x8")
    p.add_argument("--glb", type=int, default=256, help="GLB bytes of the built-in toy arch")
    p.add_argument("--levels", type=int, choices=(2, 3), default=2)
    p.add_argument("--csv", help="CSV path (default: --out or stdout)")
    p.set_defaults(fn=cmd_scaling, max_loops=1)

    p = sub.add_parser("chain", help="write a matmul-chain workload JSON")
    p.add_argument("--einsums", type=int, required=True)
    p.add_argument("--m", type=int, default=8)
    p.add_argument("--pattern", default="8x8")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_chain)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "threads", None) is not None and args.threads < 1:
            raise UsageError("--threads must be positive")
        return args.fn(args)
    except NoFeasibleMapping as exc:
        print(f"fusemap: no feasible mapping: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except BudgetExceeded as exc:
        print(f"fusemap: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (FusemapError, ValueError, OSError) as exc:
        print(f"fusemap: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
