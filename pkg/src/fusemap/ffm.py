"""The fusion mapper: enumerate per-Einsum pmappings, then group, prune and join.

Every pmapping is reduced to a :class:`Candidate`: its energy and latency,
its consumer and producer compatibility keys, and its reservation vector
split at the gaps that matter for the join.  Prefix states keep summed
objectives plus a consolidated :class:`~fusemap.reservation.ReservationProfile`
per bounded level, stored as numpy arrays so a whole group pair joins in one
broadcast.
"""

from __future__ import annotations

import itertools
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Iterator, Mapping, Sequence

import numpy as np

from . import kernels
from .arch import ArchSpec
from .compat import compat_key_consumer, compat_key_producer
from .costmodel import CostBreakdown, evaluate, evaluate_path
from .errors import BudgetExceeded, NoFeasibleMapping, SchemaError
from .looptree import PathMapping, Placement, Pmapping, join_all
from .pareto import to_matrix
from .reservation import backing_sizes, join_states, partial_fold, path_vector, usage_by_level
from .workload import Einsum, Workload

OBJECTIVES = ("energy", "latency", "edp")
START = ("<start>",)


@dataclass(frozen=True)
class SearchConfig:
    objective: str = "edp"
    max_loops_per_rank: int = 1
    max_loops: int | None = None
    explore_permutations: bool = True
    max_pmappings: int = 200_000
    threads: int | None = None
    max_inner_copies: int | None = None
    require_innermost: bool = False     # operands must reach the innermost level

    def __post_init__(self) -> None:
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}")
        if self.max_loops_per_rank < 0 or (self.max_loops is not None and self.max_loops < 0):
            raise ValueError("loop limits must be nonnegative")


def resolve_threads(threads: int | None) -> int:
    if threads is None:
        env = os.environ.get("FUSEMAP_THREADS")
        threads = int(env) if env else (os.cpu_count() or 1)
    return max(1, threads)


# --------------------------------------------------------------------------
# Enumeration


def _divisors(n: int) -> list[int]:
    return [d for d in range(2, n + 1) if n % d == 0]


def loop_nests(e: Einsum, workload: Workload, cfg: SearchConfig) -> Iterator[tuple[tuple[str, int], ...]]:
    ranks = e.rank_vars
    limit = cfg.max_loops if cfg.max_loops is not None else cfg.max_loops_per_rank * len(ranks)

    def rec(prefix: tuple, residual: dict, used: dict, last: int) -> Iterator[tuple]:
        yield prefix
        if len(prefix) >= limit:
            return
        for ri, r in enumerate(ranks):
            if not cfg.explore_permutations and ri < last:
                continue
            if used[r] >= cfg.max_loops_per_rank:
                continue
            for d in _divisors(residual[r]):
                residual[r] //= d
                used[r] += 1
                yield from rec(prefix + ((r, d),), residual, used, ri)
                used[r] -= 1
                residual[r] *= d

    yield from rec((), {r: workload.extent(r) for r in ranks}, {r: 0 for r in ranks}, 0)


def _inner_copies(levels: Sequence[int], start_gap: int, depth: int) -> Iterator[tuple[tuple[int, int], ...]]:
    """Chains of ``(level, gap)`` with increasing level and non-decreasing gap."""
    yield ()
    for k, lv in enumerate(levels):
        for g in range(start_gap, depth + 1):
            for rest in _inner_copies(levels[k + 1:], g, depth):
                yield ((lv, g),) + rest


def tensor_placements(tensor: str, owners: tuple[str, ...], shared: bool, loops: tuple, workload: Workload,
                      n_levels: int) -> list[tuple[Placement, ...]]:
    depth = len(loops)
    ranks = set(workload.tensors[tensor].ranks)
    out = []
    backings: list[tuple[int, int]] = [(0, 0)]
    if shared:
        for lv in range(1, n_levels):
            for g in range(depth + 1):
                if all(r in ranks for r, _ in loops[:g]):
                    backings.append((lv, g))
    for lv, g in backings:
        back = Placement(g, lv, tensor, owners)
        inner_owner = (owners[0],) if not shared else None
        for chain in _inner_copies(list(range(lv + 1, n_levels)), g, depth):
            out.append((back,) + tuple(Placement(cg, cl, tensor, inner_owner or ("",)) for cl, cg in chain))
    return out


def _relevant(loops: tuple, placements: Sequence[Placement], workload: Workload) -> bool:
    for i, (r, _) in enumerate(loops):
        if not any(p.gap > i and r in workload.tensors[p.tensor].ranks for p in placements):
            return False
    return True


def enumerate_paths(e: Einsum | str, workload: Workload, arch: ArchSpec, cfg: SearchConfig = SearchConfig(),
                    capacity_prune: bool = True) -> list[PathMapping]:
    """Every structurally valid single-Einsum chain under the configured limits."""
    e = workload.einsum(e) if isinstance(e, str) else e
    i = workload.index(e.name)
    s_in, s_out = workload.neighbours(i)
    n_levels = len(arch.levels)
    out: list[PathMapping] = []
    for loops in loop_nests(e, workload, cfg):
        per_tensor = []
        for t in e.tensors:
            if t == s_in:
                owners = (workload.einsums[i - 1].name, e.name)
            elif t == s_out:
                owners = (e.name, workload.einsums[i + 1].name)
            else:
                owners = (e.name,)
            opts = tensor_placements(t, owners, t in (s_in, s_out), loops, workload, n_levels)
            # inner copies are private to this Einsum
            opts = [tuple(p if k == 0 else Placement(p.gap, p.level, p.tensor, (e.name,)) for k, p in enumerate(o))
                    for o in opts]
            per_tensor.append(opts)
        for combo in itertools.product(*per_tensor):
            if cfg.max_inner_copies is not None and sum(len(g) - 1 for g in combo) > cfg.max_inner_copies:
                continue
            if cfg.require_innermost and any(g[-1].level != n_levels - 1 for g in combo):
                continue
            placements = tuple(p for group in combo for p in group)
            if not _relevant(loops, placements, workload):
                continue
            path = PathMapping(e.name, loops, placements)
            if capacity_prune and not _fits_alone(path, workload, arch):
                continue
            out.append(path)
            if len(out) > cfg.max_pmappings:
                raise BudgetExceeded(f"more than {cfg.max_pmappings} pmappings for {e.name}")
    return out


def _fits_alone(path: PathMapping, workload: Workload, arch: ArchSpec) -> bool:
    from .reservation import storage_size

    for lv in arch.bounded_levels:
        total = sum(storage_size(workload, arch, p.tensor, path.loops[: p.gap])
                    for p in path.placements if p.level == lv.level_index)
        if total > lv.capacity_bytes:
            return False
    return True


# --------------------------------------------------------------------------
# Candidates


@dataclass
class Candidate:
    """A pmapping of one Einsum reduced to what the join needs."""

    einsum: int
    uid: int
    label: str
    energy: Fraction
    latency: Fraction
    ck: Any
    pk: Any
    p_in: int
    p_out: int | None
    vec: np.ndarray          # (resources, depth + 1) bytes per gap, shared backings excluded
    b_in: np.ndarray         # (resources,)
    b_out: np.ndarray        # (resources,)
    payload: Any = None

    @property
    def m(self) -> int:
        return self.p_in if self.p_out is None else max(self.p_in, self.p_out)

    def head_tail(self) -> tuple[np.ndarray, np.ndarray]:
        m = self.m
        r, width = self.vec.shape
        head = np.zeros((r, m), dtype=np.int64)
        k = min(m, width)
        head[:, :k] = self.vec[:, :k]
        tail = self.vec[:, m:].sum(axis=1) if width > m else np.zeros(r, dtype=np.int64)
        return head, tail.astype(np.int64)


class Problem:
    """What the search engine needs: candidates per Einsum plus capacities."""

    def __init__(self, names: Sequence[str], candidates: Sequence[Sequence[Candidate]],
                 capacities: Sequence[int], workload: Workload | None = None, arch: ArchSpec | None = None):
        self.names = list(names)
        self.candidates = [list(c) for c in candidates]
        self.capacities = np.array(capacities, dtype=np.int64)
        self.workload = workload
        self.arch = arch

    @property
    def resources(self) -> int:
        return len(self.capacities)

    def mapspace_size(self) -> int:
        """Number of compatible candidate combinations (ignoring capacity)."""
        counts: dict[Any, int] = {START: 1}
        for cands in self.candidates:
            nxt: dict[Any, int] = {}
            for c in cands:
                n = counts.get(c.ck, 0)
                if n:
                    nxt[c.pk] = nxt.get(c.pk, 0) + n
            counts = nxt
        return sum(counts.values())


def candidate_from_path(path: PathMapping, uid: int, workload: Workload, arch: ArchSpec) -> Candidate:
    i = workload.index(path.einsum)
    cost = evaluate_path(path, workload, arch)
    ck = compat_key_consumer(path, workload)
    pk = compat_key_producer(path, workload)
    levels = [lv.level_index for lv in arch.bounded_levels]
    vec = np.array([path_vector(path, workload, arch, lv) for lv in levels], dtype=np.int64).reshape(len(levels), -1)
    bs = [backing_sizes(path, workload, arch, lv) for lv in levels]
    return Candidate(
        einsum=i, uid=uid, label=f"{path.einsum}#{uid}", energy=cost.energy, latency=cost.latency_cycles,
        ck=START if ck is None else ck.match, pk=None if pk is None else pk.match,
        p_in=0 if ck is None else ck.gap, p_out=None if pk is None else pk.gap,
        vec=vec, b_in=np.array([b[1] for b in bs], dtype=np.int64),
        b_out=np.array([b[3] for b in bs], dtype=np.int64), payload=path,
    )


def build_problem(workload: Workload, arch: ArchSpec, cfg: SearchConfig = SearchConfig(),
                  capacity_prune: bool = True) -> Problem:
    cands = []
    for e in workload.einsums:
        paths = enumerate_paths(e, workload, arch, cfg, capacity_prune)
        cands.append([candidate_from_path(p, k, workload, arch) for k, p in enumerate(paths)])
    return Problem([e.name for e in workload.einsums], cands,
                   [lv.capacity_bytes for lv in arch.bounded_levels], workload, arch)


def enumerate_pmappings(e: Einsum | str, workload: Workload, arch: ArchSpec,
                        cfg: SearchConfig = SearchConfig()) -> list[Pmapping]:
    """Enumerated pmappings annotated with criteria, Pareto-pruned within each key group."""
    from .pareto import CriteriaVector

    e = workload.einsum(e) if isinstance(e, str) else e
    paths = enumerate_paths(e, workload, arch, cfg)
    cands = [candidate_from_path(p, k, workload, arch) for k, p in enumerate(paths)]
    groups: dict = {}
    for c in cands:
        groups.setdefault((c.ck, c.pk, c.p_in, c.p_out), []).append(c)
    keep = sorted(c.uid for grp in groups.values() for c in prune_candidates(grp))
    levels = [lv.level_index for lv in arch.bounded_levels]
    out = []
    for k in keep:
        c = cands[k]
        head, tail = c.head_tail()
        res = tuple(((lv, t), int(head[j, t])) for j, lv in enumerate(levels) for t in range(head.shape[1]))
        res += tuple(((lv, "tail"), int(tail[j])) for j, lv in enumerate(levels))
        out.append(Pmapping.single(c.payload, compat_key_producer(c.payload, workload),
                                   CriteriaVector(c.energy, c.latency, res)))
    return out


def prune_candidates(cands: Sequence[Candidate]) -> list[Candidate]:
    """Pareto-prune candidates sharing one (consumer key, producer key) pair."""
    if not cands:
        return []
    rows = []
    for c in cands:
        head, tail = c.head_tail()
        rows.append([c.energy, c.latency] + [int(x) for x in head.reshape(-1)] + [int(x) for x in tail])
    scale_e = _scale([c.energy for c in cands])
    scale_l = _scale([c.latency for c in cands])
    for row in rows:
        row[0] = int(row[0] * scale_e)
        row[1] = int(row[1] * scale_l)
    x = to_matrix(rows)
    keep = kernels.pareto_select(x, np.array([c.uid for c in cands], dtype=np.int64))
    return [cands[k] for k in keep]


# --------------------------------------------------------------------------
# Search engine


@dataclass
class StepStats:
    einsum: str
    groups: int
    frontier_size: int
    joins_attempted: int
    joins_skipped: int
    elapsed: float

    def row(self) -> dict:
        return {"einsum": self.einsum, "groups": self.groups, "frontier_size": self.frontier_size,
                "joins_attempted": self.joins_attempted, "joins_skipped": self.joins_skipped,
                "elapsed": self.elapsed}


@dataclass
class MappingResult:
    objective: str
    value: Fraction
    energy: Fraction
    latency: Fraction
    usage: dict[int, int]
    choice: tuple[int, ...]                  # candidate uid per Einsum
    labels: tuple[str, ...]
    best_tree: Pmapping | None
    best_cost: CostBreakdown | None
    per_step_stats: list[StepStats] = field(default_factory=list)
    max_tracked_entries: int = 0
    bound_violations: int = 0

    @property
    def edp(self) -> Fraction:
        return self.energy * self.latency

    def same_mapping(self, other: "MappingResult") -> bool:
        return (self.choice, self.value, self.energy, self.latency, self.usage) == \
            (other.choice, other.value, other.energy, other.latency, other.usage)


@dataclass
class _Group:
    key: Any
    p: int
    b: np.ndarray
    E: np.ndarray
    L: np.ndarray
    live: np.ndarray         # (n, r, p)
    closed: np.ndarray       # (n, r, p + 1)
    rank: np.ndarray         # (n,) global order of id tuples
    gid: np.ndarray          # (n,) index into the step's backpointer table
    raw: np.ndarray | None = None   # unconsolidated history (ablation only)

    @property
    def n(self) -> int:
        return len(self.E)


@dataclass
class _RightGroup:
    ck: Any
    pk: Any
    p_in: int
    p_out: int | None
    b_out: np.ndarray
    E: np.ndarray
    L: np.ndarray
    head: np.ndarray         # (n, r, m)
    tail: np.ndarray         # (n, r)
    uid: np.ndarray


def _scale(values: Sequence[Fraction]) -> int:
    return math.lcm(*(Fraction(v).denominator for v in values)) if values else 1


class Engine:
    def __init__(self, problem: Problem, objective: str = "edp", skip_incompatible: bool = True,
                 consolidate: bool = True, threads: int | None = 1):
        self.pb = problem
        self.objective = objective
        self.skip = skip_incompatible
        self._key_ids: dict = {}
        self.consolidate = consolidate
        self.threads = resolve_threads(threads)
        allc = [c for cs in problem.candidates for c in cs]
        self.e_scale = _scale([c.energy for c in allc])
        self.l_scale = _scale([c.latency for c in allc])
        n = len(problem.candidates)
        e_max = sum(max((int(c.energy * self.e_scale) for c in cs), default=0) for cs in problem.candidates)
        l_max = sum(max((int(c.latency * self.l_scale) for c in cs), default=0) for cs in problem.candidates)
        self.dtype = np.int64 if max(e_max, l_max, 1) < 2**62 // max(n, 1) else object
        self.max_uid = max((c.uid for c in allc), default=0) + 1
        self.max_entries = 0
        self.bound_violations = 0

    # -- candidate preparation -------------------------------------------

    def _ints(self, values: Sequence[int]) -> np.ndarray:
        if self.dtype is object:
            arr = np.empty(len(values), dtype=object)
            arr[:] = list(values)
            return arr
        return np.array(values, dtype=np.int64)

    def right_groups(self, i: int) -> list[_RightGroup]:
        cands = self.pb.candidates[i]
        groups: dict = {}
        for c in cands:
            groups.setdefault((c.ck, c.pk, c.p_in, c.p_out), []).append(c)
        out = []
        r = self.pb.resources
        for (ck, pk, p_in, p_out), cs in groups.items():
            E = self._ints([int(c.energy * self.e_scale) for c in cs])
            L = self._ints([int(c.latency * self.l_scale) for c in cs])
            ht = [c.head_tail() for c in cs]
            m = cs[0].m
            head = np.array([h for h, _ in ht], dtype=np.int64).reshape(len(cs), r, m)
            tail = np.array([t for _, t in ht], dtype=np.int64).reshape(len(cs), r)
            uid = np.array([c.uid for c in cs], dtype=np.int64)
            crit = _stack_cols([E, L, head.reshape(len(cs), -1), tail])
            keep = kernels.pareto_select_ranked(crit, uid)
            out.append(_RightGroup(ck, pk, p_in, p_out, cs[0].b_out, E[keep], L[keep], head[keep], tail[keep],
                                   uid[keep]))
        return out

    # -- main loop -------------------------------------------------------

    def run(self) -> MappingResult:
        pb = self.pb
        r = pb.resources
        start = _Group(START if self.consolidate else (START, ()), 0, np.zeros(r, dtype=np.int64), self._ints([0]), self._ints([0]),
                       np.zeros((1, r, 0), dtype=np.int64), np.zeros((1, r, 1), dtype=np.int64),
                       np.zeros(1, dtype=np.int64), np.zeros(1, dtype=np.int64),
                       np.zeros((1, 0), dtype=np.int64) if not self.consolidate else None)
        groups = [start]
        backptr: list[np.ndarray] = []       # per step: (n, 2) rows of (previous gid, uid)
        stats: list[StepStats] = []
        n_steps = len(pb.candidates)
        for i in range(n_steps):
            t0 = time.perf_counter()
            rights = self.right_groups(i)
            last = i == n_steps - 1
            pairs = []
            attempted = skipped = 0
            for lg in groups:
                for rg in rights:
                    if self.skip:
                        ok = self._compatible(lg, rg)
                        if not ok:
                            skipped += lg.n * len(rg.uid)
                            continue
                    else:
                        # no grouping shortcut: every pmapping pair is checked
                        ok = self._pairwise_compatible(lg, rg).any()
                    attempted += lg.n * len(rg.uid)
                    if ok:
                        pairs.append((lg, rg))
            if self.threads > 1 and len(pairs) > 1:
                with ThreadPoolExecutor(self.threads) as ex:
                    parts = list(ex.map(lambda pr: self._join(*pr, last), pairs))
            else:
                parts = [self._join(lg, rg, last) for lg, rg in pairs]
            groups, table = self._merge(parts)
            backptr.append(table)
            stats.append(StepStats(pb.names[i], len(groups), sum(g.n for g in groups), attempted, skipped,
                                   time.perf_counter() - t0))
            if not groups:
                raise NoFeasibleMapping(f"no feasible mapping after joining {pb.names[i]}")
        return self._finish(groups, backptr, stats)

    def _compatible(self, lg: _Group, rg: _RightGroup) -> bool:
        key = lg.key[0] if not self.consolidate else lg.key
        return rg.ck == key and rg.p_in == lg.p

    def _pairwise_compatible(self, lg: _Group, rg: _RightGroup) -> np.ndarray:
        """Per-pair key comparison, the work grouping normally avoids."""
        ids = self._key_ids
        lk = ids.setdefault((lg.key[0] if not self.consolidate else lg.key, lg.p), len(ids))
        rk = ids.setdefault((rg.ck, rg.p_in), len(ids))
        return np.full(lg.n, lk)[:, None] == np.full(len(rg.uid), rk)[None, :]

    def _join(self, lg: _Group, rg: _RightGroup, last: bool) -> dict | None:
        p, q = lg.p, rg.p_out
        live, closed = join_states(lg.live, lg.closed, lg.b, rg.head, rg.tail, rg.b_out, p, q)
        n1, n2 = lg.n, len(rg.uid)
        E = (lg.E[:, None] + rg.E[None, :]).reshape(-1)
        L = (lg.L[:, None] + rg.L[None, :]).reshape(-1)
        live = live.reshape(n1 * n2, live.shape[2], live.shape[3])
        closed = closed.reshape(n1 * n2, closed.shape[2], closed.shape[3])
        cap = self.pb.capacities
        if last:
            usage = closed[..., 0]
        else:
            usage = partial_fold(live, closed, rg.b_out[None, :])
        ok = (usage <= cap[None, :]).all(axis=1) if cap.size else np.ones(n1 * n2, dtype=bool)
        if not ok.any():
            return None
        entries = live.shape[2] + closed.shape[2]
        self.max_entries = max(self.max_entries, entries)
        if entries > 2 * live.shape[2] + 1:
            self.bound_violations += 1
        li = np.repeat(np.arange(n1), n2)[ok]
        ri = np.tile(np.arange(n2), n1)[ok]
        out = {
            "key": rg.pk, "p": q if q is not None else 0, "b": rg.b_out,
            "E": E[ok], "L": L[ok], "live": live[ok], "closed": closed[ok],
            "rank": lg.rank[li] * self.max_uid + rg.uid[ri],
            "prev": lg.gid[li], "uid": rg.uid[ri],
        }
        if not self.consolidate:
            hist = lg.key[1] + ((rg.p_in, rg.p_out),)
            out["key"] = (rg.pk, hist)
            # per-step own reservations plus the output backing, unconsolidated
            b_out = np.broadcast_to(rg.b_out, (n2, len(rg.b_out)))
            raw_r = np.concatenate([rg.head.reshape(n2, -1), rg.tail, b_out], axis=1)[ri]
            out["raw"] = np.concatenate([lg.raw[li], raw_r], axis=1)
        return out

    def _merge(self, parts: list[dict | None]) -> tuple[list[_Group], np.ndarray]:
        by_key: dict = {}
        for part in parts:
            if part is not None:
                by_key.setdefault(part["key"], []).append(part)
        merged = []
        for key, ps in by_key.items():
            cat = {k: np.concatenate([p[k] for p in ps]) for k in ("E", "L", "live", "closed", "rank", "prev", "uid")}
            if not self.consolidate:
                cat["raw"] = np.concatenate([p["raw"] for p in ps])
            n = len(cat["E"])
            if self.consolidate:
                res = [cat["live"].reshape(n, -1), cat["closed"].reshape(n, -1)]
            else:
                res = [cat["raw"]]
            crit = _stack_cols([cat["E"], cat["L"]] + res)
            keep = kernels.pareto_select_ranked(crit, cat["rank"])
            merged.append((ps[0]["key"], ps[0]["p"], ps[0]["b"], {k: v[keep] for k, v in cat.items()}))
        # global ordering of id tuples so later tie-breaks stay lexicographic
        all_rank = np.concatenate([d["rank"] for *_, d in merged]) if merged else np.zeros(0, dtype=np.int64)
        order = np.argsort(all_rank, kind="stable")
        new_rank = np.empty_like(order)
        new_rank[order] = np.arange(len(order))
        table = np.concatenate([np.stack([d["prev"], d["uid"]], axis=1) for *_, d in merged]) \
            if merged else np.zeros((0, 2), dtype=np.int64)
        groups = []
        off = 0
        for key, p, b, d in merged:
            n = len(d["E"])
            groups.append(_Group(key, p, b, d["E"], d["L"], d["live"], d["closed"], new_rank[off:off + n],
                                 np.arange(off, off + n), d.get("raw")))
            off += n
        return groups, table

    def _finish(self, groups: list[_Group], backptr: list[np.ndarray], stats: list[StepStats]) -> MappingResult:
        best = None
        for g in groups:
            for k in range(g.n):
                e = Fraction(int(g.E[k]), self.e_scale)
                lat = Fraction(int(g.L[k]), self.l_scale)
                obj = {"energy": e, "latency": lat, "edp": e * lat}[self.objective]
                usage = tuple(int(x) for x in g.closed[k, :, 0])
                key = (obj, e, lat, usage, int(g.rank[k]))
                if best is None or key < best[0]:
                    best = (key, int(g.gid[k]))
        assert best is not None
        (obj, e, lat, usage, _), gid = best
        choice = []
        for table in reversed(backptr):
            prev, uid = table[gid]
            choice.append(int(uid))
            gid = int(prev)
        choice.reverse()
        pb = self.pb
        chosen = [next(c for c in pb.candidates[i] if c.uid == u) for i, u in enumerate(choice)]
        tree = cost = None
        if pb.workload is not None:
            parts = [Pmapping.single(c.payload, compat_key_producer(c.payload, pb.workload)) for c in chosen]
            tree = join_all(parts, pb.workload)
            cost = evaluate(tree, pb.workload, pb.arch)
        levels = [lv.level_index for lv in pb.arch.bounded_levels] if pb.arch else []
        return MappingResult(self.objective, obj, e, lat, dict(zip(levels, usage)), tuple(choice),
                             tuple(c.label for c in chosen), tree, cost, stats, self.max_entries,
                             self.bound_violations)


def _stack_cols(cols: Sequence[np.ndarray]) -> np.ndarray:
    mats = [c.reshape(len(c), -1) if c.ndim > 1 else c[:, None] for c in cols]
    if any(m.dtype == object for m in mats):
        return np.concatenate([m.astype(object) for m in mats], axis=1)
    return np.concatenate(mats, axis=1).astype(np.int64)


# --------------------------------------------------------------------------
# Public entry points


def map_problem(problem: Problem, objective: str = "edp", skip_incompatible: bool = True,
                consolidate: bool = True, threads: int | None = 1) -> MappingResult:
    return Engine(problem, objective, skip_incompatible, consolidate, threads).run()


def map(workload: "Workload | TableWorkload", arch: ArchSpec | None = None,
        cfg: SearchConfig = SearchConfig()) -> MappingResult:  # noqa: A001 - mirrors the operation name
    """Optimal mapping of ``workload`` under ``cfg.objective``."""
    problem = workload.problem() if isinstance(workload, TableWorkload) else build_problem(workload, arch, cfg)
    return map_problem(problem, cfg.objective, threads=cfg.threads)


def map_ablated(workload: "Workload | TableWorkload", arch: ArchSpec | None = None,
                cfg: SearchConfig = SearchConfig(), disable: Sequence[str] = ()) -> MappingResult:
    """Run the mapper with ``skip_incompatible_joins`` and/or ``consolidate_reservations`` turned off."""
    unknown = set(disable) - {"skip_incompatible_joins", "consolidate_reservations"}
    if unknown:
        raise ValueError(f"unknown optimisation(s): {sorted(unknown)}")
    problem = workload.problem() if isinstance(workload, TableWorkload) else build_problem(workload, arch, cfg)
    return map_problem(problem, cfg.objective, "skip_incompatible_joins" not in disable,
                       "consolidate_reservations" not in disable, cfg.threads)


# --------------------------------------------------------------------------
# Abstract candidate tables


@dataclass(frozen=True)
class TableEntry:
    name: str
    latency: Fraction
    energy: Fraction
    consumes: str | None
    produces: str | None


@dataclass(frozen=True)
class TableWorkload:
    """Einsums described only by candidate pmappings with given costs and keys.

    Each candidate names the key it ``produces`` for the next Einsum and the
    key it ``consumes`` from the previous one; matching labels are compatible.
    """

    einsums: tuple[str, ...]
    entries: tuple[tuple[TableEntry, ...], ...]

    def problem(self) -> Problem:
        cands = []
        for i, entries in enumerate(self.entries):
            row = []
            for k, t in enumerate(entries):
                row.append(Candidate(
                    einsum=i, uid=k, label=t.name, energy=t.energy, latency=t.latency,
                    ck=START if i == 0 else ("label", t.consumes), pk=None if i == len(self.entries) - 1
                    else ("label", t.produces), p_in=0, p_out=None if i == len(self.entries) - 1 else 0,
                    vec=np.zeros((0, 1), dtype=np.int64), b_in=np.zeros(0, dtype=np.int64),
                    b_out=np.zeros(0, dtype=np.int64), payload=t))
            cands.append(row)
        return Problem(self.einsums, cands, [])


def table_from_dict(doc: Mapping[str, Any]) -> TableWorkload:
    rows = doc.get("table")
    if not isinstance(rows, list) or not rows:
        raise SchemaError("table: expected a non-empty list of Einsums")
    names, entries = [], []
    for i, row in enumerate(rows):
        where = f"table[{i}]"
        if "einsum" not in row:
            raise SchemaError(f"{where}: missing field 'einsum'")
        cands = row.get("candidates")
        if not isinstance(cands, list) or not cands:
            raise SchemaError(f"{where}.candidates: expected a non-empty list")
        es = []
        for k, c in enumerate(cands):
            w = f"{where}.candidates[{k}]"
            if "name" not in c:
                raise SchemaError(f"{w}: missing field 'name'")
            try:
                lat = Fraction(str(c.get("latency", 0)))
                en = Fraction(str(c.get("energy", 0)))
            except ValueError as exc:
                raise SchemaError(f"{w}: latency/energy must be numbers") from exc
            if lat < 0 or en < 0:
                raise SchemaError(f"{w}: latency/energy must be nonnegative")
            if i > 0 and "consumes" not in c:
                raise SchemaError(f"{w}: missing field 'consumes'")
            if i < len(rows) - 1 and "produces" not in c:
                raise SchemaError(f"{w}: missing field 'produces'")
            es.append(TableEntry(c["name"], lat, en, c.get("consumes"), c.get("produces")))
        names.append(row["einsum"])
        entries.append(tuple(es))
    return TableWorkload(tuple(names), tuple(entries))


def greedy_choice(table: TableWorkload, objective: str = "latency") -> list[TableEntry]:
    """Per-Einsum minimum, ignoring compatibility."""
    def val(t: TableEntry) -> Fraction:
        return {"latency": t.latency, "energy": t.energy, "edp": t.latency * t.energy}[objective]

    return [min(row, key=val) for row in table.entries]


def table_compatible(choice: Sequence[TableEntry]) -> bool:
    return all(a.produces == b.consumes for a, b in zip(choice, choice[1:]))


def full_usage(pmapping: Pmapping, workload: Workload, arch: ArchSpec) -> dict[int, int]:
    return usage_by_level(pmapping, workload, arch)
