import math
import random

import pytest

from fusemap.arch import toy_arch
from fusemap.baselines import (Pool, Scorer, _problem, accept, crossover, genetic_algorithm, oracle,
                               random_search, simulated_annealing)
from fusemap.errors import BudgetExceeded
from fusemap.ffm import SearchConfig, map
from fusemap.workload import make_chain

W3 = make_chain(3, 4, [(4, 4)])
A = toy_arch(64)
CFG = SearchConfig(max_loops=1, max_inner_copies=2, require_innermost=True, threads=1)


@pytest.fixture(scope="module")
def problem():
    return _problem(W3, A, CFG)


@pytest.fixture(scope="module")
def optimum():
    return map(W3, A, CFG).value


@pytest.mark.parametrize("fn", [random_search, simulated_annealing, genetic_algorithm])
def test_budget_zero_rejected(fn):
    with pytest.raises(ValueError):
        fn(W3, A, CFG, budget=0)


def test_budget_one_on_single_pmapping_workload():
    w = make_chain(1, 2, [(2, 2)])
    cfg = SearchConfig(max_loops=0, require_innermost=False, max_inner_copies=0)
    res, trace = random_search(w, toy_arch(64), cfg, budget=1)
    assert res is not None and res.value == map(w, toy_arch(64), cfg).value


@pytest.mark.parametrize("fn, budget", [(random_search, 400), (simulated_annealing, 400), (genetic_algorithm, 400)])
def test_never_below_optimum_and_monotone(problem, optimum, fn, budget):
    for seed in range(5):
        res, trace = fn(W3, A, CFG, budget=budget, seed=seed, problem=problem)
        assert res is None or res.value >= optimum
        assert trace.monotone()
        assert trace.to_csv().startswith("evaluations,best_objective")


def test_seeded_runs_are_reproducible(problem):
    a, ta = simulated_annealing(W3, A, CFG, budget=300, seed=4, problem=problem)
    b, tb = simulated_annealing(W3, A, CFG, budget=300, seed=4, problem=problem)
    assert a.choice == b.choice and ta.samples == tb.samples


def test_distinct_random_search_reaches_optimum():
    w = make_chain(3, 2, [(2, 2)])
    cfg = SearchConfig(max_loops=1, max_inner_copies=2, require_innermost=True, threads=1)
    pb = _problem(w, toy_arch(64), cfg)
    size = pb.mapspace_size()
    res, _ = random_search(w, toy_arch(64), cfg, budget=size * 10, seed=0, distinct=True, problem=pb)
    assert res.value == map(w, toy_arch(64), cfg).value


def test_metropolis_acceptance_rate():
    rng = random.Random(0)
    delta, temp, n = 1.0, 2.0, 10_000
    hits = sum(accept(delta, temp, rng) for _ in range(n))
    p = math.exp(-delta / temp)
    assert abs(hits - n * p) <= 3 * math.sqrt(n * p * (1 - p))
    assert accept(-1.0, 0.0, rng) and not accept(1.0, 0.0, rng)


def test_zero_temperature_is_hill_climbing(problem):
    res, trace = simulated_annealing(W3, A, CFG, budget=300, seed=1, t0=0.0, restart_after=None, problem=problem)
    assert res is not None and trace.monotone()


def test_crossover_preserves_validity(problem):
    pool = Pool(problem)
    rng = random.Random(2)
    made = 0
    for _ in range(10_000):
        child = crossover(pool.sample(rng), pool.sample(rng), pool, rng)
        if child is not None:
            assert pool.compatible(child)
            made += 1
    assert made > 9000


def test_identical_population_without_mutation_stagnates(problem):
    pool = Pool(problem)
    scorer = Scorer(problem, CFG.objective)
    rng = random.Random(9)
    g = next(s for s in (pool.sample(rng) for _ in range(1000)) if scorer.score(s)[0] is not None)
    res, trace = genetic_algorithm(W3, A, CFG, budget=300, seed=0, initial=[g] * 10, mutation_rate=0.0,
                                   problem=problem)
    assert res.choice == tuple(g)
    assert {b for _, b in trace.samples} == {scorer.score(g)[0]}


def test_defaults():
    import inspect
    sig = inspect.signature(genetic_algorithm).parameters
    assert sig["crossover_rate"].default == 0.7 and sig["mutation_rate"].default == 0.2
    assert sig["population"].default == 104
    assert inspect.signature(simulated_annealing).parameters["rate"].default == 0.98


def test_oracle_refuses_large_mapspaces():
    with pytest.raises(BudgetExceeded, match="at most"):
        oracle(make_chain(4, 4, [(4, 4)]), toy_arch(64), SearchConfig(max_loops=1, require_innermost=True))
