"""Reference searchers over the same candidate pool as the mapper.

The oracle walks every compatible combination, assembles the full tree with
its own builder and evaluates it directly.  Random search, simulated annealing
and the genetic algorithm work on genomes of one candidate per Einsum and
score them with the incremental reservation profile.
"""

from __future__ import annotations

import csv
import io
import math
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Callable, Iterator, Sequence

from .arch import ArchSpec
from .costmodel import evaluate
from .errors import BudgetExceeded, NoFeasibleMapping, SeedError
from .ffm import START, Candidate, MappingResult, Problem, SearchConfig, build_problem
from .looptree import Loop, Node, PathMapping, Pmapping, Split, _stack, chain_below
from .reservation import EMPTY, ReservationProfile, consolidate_after_join, split_vector, usage_by_level
from .workload import Workload

ORACLE_LIMIT = 10**6


# --------------------------------------------------------------------------
# Independent full-tree construction


def share_depths(paths: Sequence[PathMapping], workload: Workload) -> list[int]:
    """Gap of the backing node shared by each consecutive pair (0 when nothing is shared)."""
    out = []
    for i in range(len(paths) - 1):
        s_out = workload.neighbours(i)[1]
        out.append(paths[i].backing(s_out).gap if s_out else 0)
    return out


def build_tree(paths: Sequence[PathMapping], workload: Workload) -> Node:
    """Assemble a full LoopTree directly from per-Einsum chains.

    Consecutive Einsums stay under common loops down to their share depth and
    split there; storage nodes of every Einsum at a shared gap merge into the
    common run.
    """
    shares = share_depths(paths, workload)

    def run_at(lo: int, hi: int, d: int) -> list:
        seen: dict = {}
        for j in range(lo, hi):
            for p in paths[j].run(d):
                seen.setdefault((p.level, p.tensor, p.owners), p)
        return list(seen.values())

    def segment(lo: int, hi: int, d: int) -> Node:
        if hi - lo == 1:
            return chain_below(paths[lo], d)
        rank, trip = paths[lo].loops[d]
        return Loop(rank, trip, build(lo, hi, d + 1))

    def build(lo: int, hi: int, d: int) -> Node:
        run = run_at(lo, hi, d)
        if hi - lo == 1:
            return _stack(run, chain_below(paths[lo], d))
        cuts = [lo] + [i + 1 for i in range(lo, hi - 1) if shares[i] == d] + [hi]
        if len(cuts) == 2:
            return _stack(run, segment(lo, hi, d))
        return _stack(run, Split(tuple(segment(a, b, d) for a, b in zip(cuts, cuts[1:]))))

    return build(0, len(paths), 0)


# --------------------------------------------------------------------------
# Shared helpers


class Pool:
    """Candidates of a problem indexed by compatibility keys."""

    def __init__(self, problem: Problem):
        self.pb = problem
        self.n = len(problem.candidates)
        self.by_ck: list[dict] = []
        self.by_pk: list[dict] = []
        self.by_both: list[dict] = []
        for cands in problem.candidates:
            ck, pk, both = {}, {}, {}
            for k, c in enumerate(cands):
                ck.setdefault(c.ck, []).append(k)
                pk.setdefault(c.pk, []).append(k)
                both.setdefault((c.ck, c.pk), []).append(k)
            self.by_ck.append(ck)
            self.by_pk.append(pk)
            self.by_both.append(both)
        # completions[i][k]: compatible completions from candidate k of Einsum i to the end
        self.completions: list[list[int]] = [[] for _ in range(self.n)]
        nxt: dict = {}
        for i in range(self.n - 1, -1, -1):
            cands = problem.candidates[i]
            row = [1 if i == self.n - 1 else nxt.get(c.pk, 0) for c in cands]
            self.completions[i] = row
            nxt = {}
            for k, c in enumerate(cands):
                nxt[c.ck] = nxt.get(c.ck, 0) + row[k]
        self.total = sum(w for k, w in enumerate(self.completions[0]) if problem.candidates[0][k].ck == START)

    def cand(self, i: int, k: int) -> Candidate:
        return self.pb.candidates[i][k]

    def compatible(self, genome: Sequence[int]) -> bool:
        return all(self.cand(i, genome[i]).pk == self.cand(i + 1, genome[i + 1]).ck for i in range(self.n - 1))

    def sample(self, rng: random.Random) -> tuple[int, ...]:
        """Uniform sample over compatible combinations."""
        if self.total == 0:
            raise NoFeasibleMapping("no compatible combination exists")
        k = _weighted(rng, range(len(self.completions[0])), self.completions[0])
        genome = [k]
        for i in range(1, self.n):
            opts = self.by_ck[i].get(self.cand(i - 1, genome[-1]).pk, [])
            genome.append(_weighted(rng, opts, [self.completions[i][j] for j in opts]))
        return tuple(genome)

    def repair(self, genome: list[int], i: int, rng: random.Random) -> list[int] | None:
        """Make ``genome`` compatible after position ``i`` changed, touching as few Einsums as possible."""
        g = list(genome)
        for j in range(i - 1, -1, -1):
            need = self.cand(j + 1, g[j + 1]).ck
            if self.cand(j, g[j]).pk == need:
                break
            old_ck = self.cand(j, g[j]).ck
            opts = self.by_both[j].get((old_ck, need)) or self.by_pk[j].get(need)
            if not opts:
                return None
            g[j] = rng.choice(opts)
        for j in range(i + 1, self.n):
            need = self.cand(j - 1, g[j - 1]).pk
            if self.cand(j, g[j]).ck == need:
                break
            old_pk = self.cand(j, g[j]).pk
            opts = self.by_both[j].get((need, old_pk)) or self.by_ck[j].get(need)
            if not opts:
                return None
            g[j] = rng.choice(opts)
        return g if self.compatible(g) else None


def _weighted(rng: random.Random, items: Sequence[int], weights: Sequence[int]) -> int:
    total = sum(weights)
    x = rng.randrange(total)
    for item, w in zip(items, weights):
        if x < w:
            return item
        x -= w
    raise AssertionError("unreachable")


class Scorer:
    """Objective of a genome via summed costs and incremental reservation profiles."""

    def __init__(self, problem: Problem, objective: str):
        self.pb = problem
        self.objective = objective
        self.evals = 0

    def usage(self, genome: Sequence[int]) -> tuple[int, ...]:
        cands = [self.pb.candidates[i][k] for i, k in enumerate(genome)]
        out = []
        for r in range(self.pb.resources):
            prof = ReservationProfile(r, (), (0,), 0)
            for c in cands:
                head, tail = split_vector(list(c.vec[r]), c.m)
                prof = consolidate_after_join(prof, c.p_in, head, tail, int(c.b_out[r]), c.p_out)
            out.append(prof.closed[0])
        return tuple(out)

    def score(self, genome: Sequence[int]) -> tuple[Fraction | None, Fraction, Fraction, tuple[int, ...]]:
        self.evals += 1
        cands = [self.pb.candidates[i][k] for i, k in enumerate(genome)]
        e = sum((c.energy for c in cands), Fraction(0))
        lat = sum((c.latency for c in cands), Fraction(0))
        use = self.usage(genome)
        ok = all(u <= cap for u, cap in zip(use, self.pb.capacities))
        obj = {"energy": e, "latency": lat, "edp": e * lat}[self.objective] if ok else None
        return obj, e, lat, use


@dataclass
class Trace:
    samples: list[tuple[int, Fraction]] = field(default_factory=list)

    def record(self, evals: int, best: Fraction | None) -> None:
        if best is not None:
            self.samples.append((evals, best))

    def monotone(self) -> bool:
        return all(b >= a for (_, b), (_, a) in zip(self.samples, self.samples[1:]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["evaluations", "best_objective"])
        for n, b in self.samples:
            w.writerow([n, float(b)])
        return buf.getvalue()


class _Best:
    def __init__(self):
        self.key = None
        self.genome: tuple[int, ...] | None = None
        self.info = None

    def offer(self, genome: Sequence[int], scored) -> None:
        obj, e, lat, use = scored
        if obj is None:
            return
        key = (obj, e, lat, use, tuple(genome))
        if self.key is None or key < self.key:
            self.key, self.genome, self.info = key, tuple(genome), scored

    @property
    def value(self) -> Fraction | None:
        return None if self.key is None else self.key[0]


def result_from_genome(problem: Problem, genome: Sequence[int], scored, objective: str) -> MappingResult:
    obj, e, lat, use = scored
    cands = [problem.candidates[i][k] for i, k in enumerate(genome)]
    tree = cost = None
    if problem.workload is not None:
        tree = Pmapping(tuple(problem.names), build_tree([c.payload for c in cands], problem.workload))
        cost = evaluate(tree, problem.workload, problem.arch)
    levels = [lv.level_index for lv in problem.arch.bounded_levels] if problem.arch else []
    return MappingResult(objective, obj, e, lat, dict(zip(levels, use)), tuple(c.uid for c in cands),
                         tuple(c.label for c in cands), tree, cost)


def _problem(workload, arch, cfg: SearchConfig, capacity_prune: bool = True) -> Problem:
    from .ffm import TableWorkload

    if isinstance(workload, TableWorkload):
        return workload.problem()
    return build_problem(workload, arch, cfg, capacity_prune)


# --------------------------------------------------------------------------
# Oracle


@dataclass
class OracleResult:
    best: MappingResult | None
    mapspace_size: int
    feasible_count: int


def mapspace(problem: Problem, pool: Pool | None = None) -> Iterator[tuple[int, ...]]:
    """Every compatible genome, depth first in candidate order."""
    pool = pool or Pool(problem)
    genome: list[int] = []

    def rec(i: int) -> Iterator[tuple[int, ...]]:
        if i == pool.n:
            yield tuple(genome)
            return
        key = START if i == 0 else pool.cand(i - 1, genome[-1]).pk
        for k in pool.by_ck[i].get(key, []):
            genome.append(k)
            yield from rec(i + 1)
            genome.pop()

    yield from rec(0)


def oracle_trees(workload: Workload, arch: ArchSpec, cfg: SearchConfig = SearchConfig(),
                 limit: int = ORACLE_LIMIT) -> Iterator[tuple[tuple[int, ...], list[PathMapping], Node]]:
    """The trees the oracle scores: ``(genome, per-Einsum chains, tree)``."""
    problem = _problem(workload, arch, cfg, capacity_prune=False)
    size = problem.mapspace_size()
    if size > limit:
        raise BudgetExceeded(f"mapspace has {size} mappings; the oracle handles at most {limit}")
    for g in mapspace(problem):
        paths = [problem.candidates[i][k].payload for i, k in enumerate(g)]
        yield g, paths, build_tree(paths, workload)


def oracle(workload, arch: ArchSpec | None = None, cfg: SearchConfig = SearchConfig(),
           limit: int = ORACLE_LIMIT) -> OracleResult:
    """Exhaustive search: build and evaluate every compatible full mapping."""
    return oracle_all(workload, arch, cfg, (cfg.objective,), limit)[cfg.objective]


def oracle_all(workload, arch: ArchSpec | None = None, cfg: SearchConfig = SearchConfig(),
               objectives: Sequence[str] = ("energy", "latency", "edp"),
               limit: int = ORACLE_LIMIT) -> dict[str, OracleResult]:
    """One exhaustive pass scoring several objectives."""
    problem = _problem(workload, arch, cfg, capacity_prune=False)
    size = problem.mapspace_size()
    if size > limit:
        raise BudgetExceeded(f"mapspace has {size} mappings; the oracle handles at most {limit}")
    pool = Pool(problem)
    bests = {o: _Best() for o in objectives}
    feasible = 0
    table = problem.workload is None

    def visit(genome: list[int]) -> None:
        nonlocal feasible
        cands = [problem.candidates[i][k] for i, k in enumerate(genome)]
        if table:
            e = sum((c.energy for c in cands), Fraction(0))
            lat = sum((c.latency for c in cands), Fraction(0))
            use: tuple = ()
        else:
            tree = build_tree([c.payload for c in cands], problem.workload)
            cost = evaluate(tree, problem.workload, problem.arch)
            by_level = usage_by_level(tree, problem.workload, problem.arch)
            use = tuple(by_level[lv.level_index] for lv in problem.arch.bounded_levels)
            if any(u > lv.capacity_bytes for u, lv in zip(use, problem.arch.bounded_levels)):
                return
            e, lat = cost.energy, cost.latency_cycles
        feasible += 1
        for o, best in bests.items():
            obj = {"energy": e, "latency": lat, "edp": e * lat}[o]
            best.offer(genome, (obj, e, lat, use))

    for genome in mapspace(problem, pool):
        visit(list(genome))
    out = {}
    for o, best in bests.items():
        res = None if best.genome is None else result_from_genome(problem, best.genome, best.info, o)
        out[o] = OracleResult(res, size, feasible)
    return out


# --------------------------------------------------------------------------
# Random search


def random_search(workload, arch: ArchSpec | None = None, cfg: SearchConfig = SearchConfig(), budget: int = 1000,
                  seed: int = 0, distinct: bool = False, problem: Problem | None = None
                  ) -> tuple[MappingResult | None, Trace]:
    """Sample compatible combinations uniformly; ``distinct`` avoids repeats."""
    if budget < 1:
        raise ValueError("budget must be at least 1")
    problem = problem or _problem(workload, arch, cfg)
    pool = Pool(problem)
    scorer = Scorer(problem, cfg.objective)
    rng = random.Random(seed)
    best, trace = _Best(), Trace()
    seen: set = set()
    while scorer.evals < budget:
        if distinct and len(seen) >= pool.total:
            break
        g = pool.sample(rng)
        if distinct:
            if g in seen:
                continue
            seen.add(g)
        best.offer(g, scorer.score(g))
        trace.record(scorer.evals, best.value)
    return _finish(problem, best, cfg.objective), trace


def _finish(problem: Problem, best: _Best, objective: str) -> MappingResult | None:
    if best.genome is None:
        return None
    return result_from_genome(problem, best.genome, best.info, objective)


# --------------------------------------------------------------------------
# Simulated annealing


def accept(delta: float, temperature: float, rng: random.Random) -> bool:
    """Metropolis rule: always take improvements, worse moves with probability exp(-delta/T)."""
    if delta <= 0:
        return True
    if temperature <= 0:
        return False
    return rng.random() < math.exp(-delta / temperature)


def _as_float(obj: Fraction | None) -> float:
    return math.inf if obj is None else float(obj)


def simulated_annealing(workload, arch: ArchSpec | None = None, cfg: SearchConfig = SearchConfig(),
                        budget: int = 1000, seed: int = 0, t0: float | None = None, rate: float = 0.98,
                        restart_after: int | None = 200, problem: Problem | None = None
                        ) -> tuple[MappingResult | None, Trace]:
    """Anneal over genomes; a move re-picks one Einsum and repairs its neighbours.

    ``t0`` defaults to the objective of the random start; the temperature is
    multiplied by ``rate`` every step.  With ``restart_after`` set, a run that
    has not improved its best for that many steps restarts from a fresh
    random sample at the initial temperature.
    """
    if budget < 1:
        raise ValueError("budget must be at least 1")
    problem = problem or _problem(workload, arch, cfg)
    pool = Pool(problem)
    scorer = Scorer(problem, cfg.objective)
    rng = random.Random(seed)
    best, trace = _Best(), Trace()

    def start():
        g = list(pool.sample(rng))
        s = scorer.score(g)
        best.offer(g, s)
        trace.record(scorer.evals, best.value)
        return g, s

    cur, cur_s = start()
    temp0 = t0 if t0 is not None else (_as_float(cur_s[0]) if cur_s[0] is not None else 1.0)
    temp = temp0
    stale = 0
    while scorer.evals < budget:
        i = rng.randrange(pool.n)
        g = list(cur)
        g[i] = rng.randrange(len(problem.candidates[i]))
        g2 = pool.repair(g, i, rng)
        if g2 is None:
            temp *= rate
            continue
        before = best.value
        s = scorer.score(g2)
        best.offer(g2, s)
        trace.record(scorer.evals, best.value)
        delta = _as_float(s[0]) - _as_float(cur_s[0])
        if math.isnan(delta):
            delta = 0.0
        if accept(delta, temp, rng):
            cur, cur_s = g2, s
        temp *= rate
        stale = 0 if best.value != before else stale + 1
        if restart_after is not None and stale >= restart_after and scorer.evals < budget:
            cur, cur_s = start()
            temp, stale = temp0, 0
    return _finish(problem, best, cfg.objective), trace


# --------------------------------------------------------------------------
# Genetic algorithm


def crossover(a: Sequence[int], b: Sequence[int], pool: Pool, rng: random.Random) -> list[int] | None:
    """One-point crossover at an Einsum boundary, then repair right of the cut."""
    if pool.n < 2:
        return list(a)
    cut = rng.randrange(1, pool.n)
    child = list(a[:cut]) + list(b[cut:])
    if pool.compatible(child):
        return child
    need = pool.cand(cut - 1, child[cut - 1]).pk
    opts = pool.by_both[cut].get((need, pool.cand(cut, child[cut]).pk)) or pool.by_ck[cut].get(need)
    if not opts:
        return None
    child[cut] = rng.choice(opts)
    return pool.repair(child, cut, rng)


def mutate(g: Sequence[int], pool: Pool, rng: random.Random) -> list[int] | None:
    i = rng.randrange(pool.n)
    h = list(g)
    h[i] = rng.randrange(len(pool.pb.candidates[i]))
    return pool.repair(h, i, rng)


def genetic_algorithm(workload, arch: ArchSpec | None = None, cfg: SearchConfig = SearchConfig(),
                      budget: int = 5000, seed: int = 0, population: int = 104, crossover_rate: float = 0.7,
                      mutation_rate: float = 0.2, tournament: int = 2, seed_retries: int = 1000,
                      initial: Sequence[Sequence[int]] | None = None, problem: Problem | None = None
                      ) -> tuple[MappingResult | None, Trace]:
    """Generational GA with tournament selection and elitism of one."""
    if budget < 1:
        raise ValueError("budget must be at least 1")
    if population < 2:
        raise ValueError("population must be at least 2")
    problem = problem or _problem(workload, arch, cfg)
    pool = Pool(problem)
    scorer = Scorer(problem, cfg.objective)
    rng = random.Random(seed)
    best, trace = _Best(), Trace()

    def fitness(s) -> tuple:
        return (_as_float(s[0]),)

    pop: list[tuple[list[int], Any]] = []
    if initial is not None:
        for g in initial:
            s = scorer.score(g)
            best.offer(g, s)
            trace.record(scorer.evals, best.value)
            pop.append((list(g), s))
    else:
        for _ in range(population):
            for _attempt in range(seed_retries):
                if pool.total == 0:
                    raise SeedError("no compatible genome exists")
                g = list(pool.sample(rng))
                s = scorer.score(g)
                best.offer(g, s)
                trace.record(scorer.evals, best.value)
                if s[0] is not None:
                    pop.append((g, s))
                    break
            else:
                raise SeedError(f"no capacity-feasible genome found in {seed_retries} samples")
            if scorer.evals >= budget:
                break

    def pick() -> list[int]:
        contenders = [pop[rng.randrange(len(pop))] for _ in range(tournament)]
        return min(contenders, key=lambda gs: fitness(gs[1]))[0]

    while scorer.evals < budget:
        elite = min(pop, key=lambda gs: fitness(gs[1]))
        nxt = [elite]
        while len(nxt) < len(pop) and scorer.evals < budget:
            a, b = pick(), pick()
            child = crossover(a, b, pool, rng) if rng.random() < crossover_rate else list(a)
            if child is None:
                child = list(a)
            if rng.random() < mutation_rate:
                child = mutate(child, pool, rng) or child
            s = scorer.score(child)
            best.offer(child, s)
            trace.record(scorer.evals, best.value)
            nxt.append((child, s))
        pop = nxt
    return _finish(problem, best, cfg.objective), trace


BASELINES: dict[str, Callable] = {
    "random": random_search,
    "sa": simulated_annealing,
    "ga": genetic_algorithm,
}
