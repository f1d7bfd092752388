import pytest

from conftest import sampled_trees
from fusemap.arch import toy_arch
from fusemap.compat import compat_key_producer
from fusemap.looptree import PathMapping, Placement, Pmapping, join_all
from fusemap.reservation import (ReservationProfile, consolidate_after_join, feasible, fold, max_usage,
                                 peak_from_timesteps, profile_of, simulate_timesteps, split_vector,
                                 storage_size, timesteps_csv, usage_by_level)
from fusemap.workload import make_chain


def _two_einsum_fused():
    w = make_chain(2, 4, [(4, 4)])
    a = PathMapping("E0", (("m", 2),), (
        Placement(0, 0, "T0", ("E0",)), Placement(0, 0, "W0", ("E0",)), Placement(1, 1, "T0", ("E0",)),
        Placement(1, 1, "T1", ("E0", "E1"))))
    b = PathMapping("E1", (("m", 2),), (
        Placement(1, 1, "T1", ("E0", "E1")), Placement(0, 0, "W1", ("E1",)), Placement(0, 0, "T2", ("E1",)),
        Placement(1, 1, "W1", ("E1",))))
    parts = [Pmapping.single(p, compat_key_producer(p, w)) for p in (a, b)]
    return w, join_all(parts, w)


def test_sum_within_branch_max_across():
    w, pm = _two_einsum_fused()
    arch = toy_arch(64)
    t0 = storage_size(w, arch, "T0", [("m", 2)])   # 2x4 tile
    t1 = storage_size(w, arch, "T1", [("m", 2)])
    w1 = storage_size(w, arch, "W1", [("m", 2)])   # m irrelevant: whole 4x4
    assert (t0, t1, w1) == (8, 8, 16)
    assert max_usage(pm, w, arch, 1) == max(t1 + t0, t1 + w1)
    assert usage_by_level(pm, w, arch) == {1: 24}
    assert feasible(pm, w, toy_arch(24)) and not feasible(pm, w, toy_arch(23))


def test_timestep_simulation_confirms_peak():
    w, pm = _two_einsum_fused()
    arch = toy_arch(64)
    rows = simulate_timesteps(pm, w, arch)
    assert peak_from_timesteps(rows) == {1: 24}
    assert timesteps_csv(rows, arch).splitlines()[0] == "timestep,level,bytes"


def test_fold():
    assert fold([], [], 5) == 5
    assert fold([3], [10], 4) == 10
    assert fold([3], [1], 4) == 7


def test_profile_invariants():
    prof = ReservationProfile(1, (4, 2), (0, 0, 6), 3)
    assert prof.spine == 2 and prof.entries == 5 and prof.within_bound()
    assert prof.final_usage() == 12 and prof.partial_usage() == 12
    with pytest.raises(ValueError):
        consolidate_after_join(prof, 1, [0], 0, 0, 0)


def test_incremental_profile_matches_tree_and_bound():
    for w, a, pb, g, paths, tree in sampled_trees(count=150, seed=11):
        cands = [pb.candidates[i][k] for i, k in enumerate(g)]
        parts = [Pmapping.single(p, compat_key_producer(p, w)) for p in paths]
        for r, lv in enumerate(a.bounded_levels):
            prof = ReservationProfile(lv.level_index, (), (0,), 0)
            for i, c in enumerate(cands):
                head, tail = split_vector(list(c.vec[r]), c.m)
                prof = consolidate_after_join(prof, c.p_in, head, tail, int(c.b_out[r]), c.p_out)
                assert prof.within_bound()
                ref = profile_of(join_all(parts[: i + 1], w), w, a, lv.level_index)
                assert (ref.live, ref.closed, ref.backing) == (prof.live, prof.closed, prof.backing)
            mu = max_usage(tree, w, a, lv.level_index)
            assert prof.closed == (mu,)
            assert peak_from_timesteps(simulate_timesteps(tree, w, a)).get(lv.level_index, 0) == mu
