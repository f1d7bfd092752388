import random

import pytest

from fusemap.arch import toy_arch
from fusemap.baselines import Pool, build_tree
from fusemap.ffm import SearchConfig, build_problem
from fusemap.workload import make_chain


@pytest.fixture(scope="session", autouse=True)
def _compile_kernels():
    # keep numba compilation out of the timed tests
    from fusemap.cli import warm_up
    warm_up()


def sampled_trees(n=3, ext=4, levels=3, count=100, seed=1, ic=1):
    """(workload, arch, problem, genome, paths, tree) for random compatible full mappings."""
    w = make_chain(n, ext, [(ext, ext)])
    a = toy_arch(64, levels)
    pb = build_problem(w, a, SearchConfig(max_loops=1, max_inner_copies=ic), capacity_prune=False)
    pool = Pool(pb)
    rng = random.Random(seed)
    for _ in range(count):
        g = pool.sample(rng)
        paths = [pb.candidates[i][k].payload for i, k in enumerate(g)]
        yield w, a, pb, g, paths, build_tree(paths, w)


@pytest.fixture
def chain3():
    return make_chain(3, 4, [(4, 4)])


@pytest.fixture
def arch2():
    return toy_arch(64, 2)


# --------------------------------------------------------------------------
# Acceptance summary: one PASS/FAIL line per criterion at the end of the run

ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record(criterion: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[criterion] = (bool(ok), detail)
    print(f"criterion {criterion}: {'PASS' if ok else 'FAIL'} - {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'} - {detail}")
