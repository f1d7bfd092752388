"""Buffer reservations: peak usage of full trees and incremental profiles of prefixes.

A storage node reserves its tile at its level.  Nodes above a loop (or the
compute leaf) stay reserved for everything below them.  Nodes in the run
directly above a split are reserved only in the branches from the first to
the last branch holding one of their owners, so a shared tensor spans its
producer and consumer branches and nothing else.

Prefix profiles keep, per bounded level and for an open spine of ``N`` loops,
``live[0..N-1]`` (reservations in the last branch at each gap) and
``closed[0..N]`` (peak usage of finished branches hanging at each gap): 2N+1
numbers.  The open backing size is implied by the compatibility key.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .arch import ArchSpec
from .looptree import Compute, Loop, Node, PathMapping, Pmapping, Split, Storage, leaf_paths, leaves, split_run, tile_shape
from .workload import Workload


def storage_size(workload: Workload, arch: ArchSpec, tensor: str, loops_above: Sequence[tuple[str, int]]) -> int:
    ranks = workload.tensors[tensor].ranks
    extents = {r: workload.extent(r) for r in ranks}
    return math.prod(tile_shape(loops_above, ranks, extents).values()) * arch.datum_bytes


# --------------------------------------------------------------------------
# ReservationTree


@dataclass(frozen=True)
class Reservation:
    level: int
    size: int
    tensor: str
    child: "RNode"


RNode = object  # Reservation | Loop | Split | Compute with Reservation children


def _branch_of(branches: Sequence[Node]) -> dict[str, int]:
    where = {}
    for i, b in enumerate(branches):
        for leaf in leaves(b):
            where[leaf.einsum] = i
    return where


def to_reservation_tree(tree: Node, workload: Workload, arch: ArchSpec) -> RNode:
    """Replace storage nodes by reservations, spreading split-adjacent ones over their lifetime."""

    def conv(node: Node, loops: tuple) -> RNode:
        if isinstance(node, Compute):
            return node
        if isinstance(node, Loop):
            return Loop(node.rank, node.trip, conv(node.child, loops + ((node.rank, node.trip),)))
        if isinstance(node, Split):
            return Split(tuple(conv(b, loops) for b in node.branches))
        run, rest = split_run(node)
        sized = [(s, storage_size(workload, arch, s.tensor, loops)) for s in run]
        if isinstance(rest, Split):
            where = _branch_of(rest.branches)
            per_branch: list[list] = [[] for _ in rest.branches]
            for s, size in sized:
                idx = [where[o] for o in s.owners if o in where]
                lo, hi = min(idx), max(idx)
                for i in range(lo, hi + 1):
                    per_branch[i].append((s, size))
            out: RNode = Split(tuple(_wrap(per_branch[i], conv(b, loops)) for i, b in enumerate(rest.branches)))
            return out
        return _wrap(sized, conv(rest, loops))

    return conv(tree, ())


def _wrap(sized: list, child: RNode) -> RNode:
    for s, size in reversed(sized):
        child = Reservation(s.level, size, s.tensor, child)
    return child


def _usage(node: RNode, level: int) -> int:
    if isinstance(node, Compute):
        return 0
    if isinstance(node, Reservation):
        return (node.size if node.level == level else 0) + _usage(node.child, level)
    if isinstance(node, Loop):
        return _usage(node.child, level)
    return max(_usage(b, level) for b in node.branches)


def _tree(p: Pmapping | PathMapping | Node) -> Node:
    if isinstance(p, PathMapping):
        return p.to_tree()
    return p.tree if isinstance(p, Pmapping) else p


def max_usage(p: Pmapping | PathMapping | Node, workload: Workload, arch: ArchSpec, level: int) -> int:
    """Peak bytes reserved at ``level``: sum along a branch, max across branches."""
    return _usage(to_reservation_tree(_tree(p), workload, arch), level)


def usage_by_level(p, workload: Workload, arch: ArchSpec) -> dict[int, int]:
    rt = to_reservation_tree(_tree(p), workload, arch)
    return {lv.level_index: _usage(rt, lv.level_index) for lv in arch.bounded_levels}


def feasible(p, workload: Workload, arch: ArchSpec) -> bool:
    use = usage_by_level(p, workload, arch)
    return all(use[lv.level_index] <= lv.capacity_bytes for lv in arch.bounded_levels)


# --------------------------------------------------------------------------
# Timestep simulation


def simulate_timesteps(p, workload: Workload, arch: ArchSpec, limit: int = 10**6) -> list[tuple[int, int, int]]:
    """Execute the tree and record reserved bytes per bounded level at every compute step.

    Returns ``(timestep, level, bytes)`` rows.  A tile is allocated when its
    node is entered (or, for nodes directly above a split, when its first
    owner's branch starts) and freed when the matching scope ends.
    """
    tree = _tree(p)
    bounded = [lv.level_index for lv in arch.bounded_levels]
    live = {lv: 0 for lv in bounded}
    rows: list[tuple[int, int, int]] = []
    step = [0]

    def alloc(level: int, size: int, sign: int) -> None:
        if level in live:
            live[level] += sign * size

    def run(node: Node, loops: tuple) -> None:
        if isinstance(node, Compute):
            if step[0] >= limit:
                raise ValueError(f"more than {limit} timesteps")
            for lv in bounded:
                rows.append((step[0], lv, live[lv]))
            step[0] += 1
        elif isinstance(node, Loop):
            for _ in range(node.trip):
                run(node.child, loops + ((node.rank, node.trip),))
        elif isinstance(node, Split):
            for b in node.branches:
                run(b, loops)
        else:
            stor, rest = split_run(node)
            sized = [(s, storage_size(workload, arch, s.tensor, loops)) for s in stor]
            if isinstance(rest, Split):
                where = _branch_of(rest.branches)
                spans = []
                for s, size in sized:
                    idx = [where[o] for o in s.owners if o in where]
                    spans.append((min(idx), max(idx), s.level, size))
                for i, b in enumerate(rest.branches):
                    for lo, _, level, size in spans:
                        if lo == i:
                            alloc(level, size, +1)
                    run(b, loops)
                    for _, hi, level, size in spans:
                        if hi == i:
                            alloc(level, size, -1)
            else:
                for s, size in sized:
                    alloc(s.level, size, +1)
                run(rest, loops)
                for s, size in sized:
                    alloc(s.level, size, -1)

    run(tree, ())
    return rows


def peak_from_timesteps(rows: Sequence[tuple[int, int, int]]) -> dict[int, int]:
    peak: dict[int, int] = {}
    for _, level, b in rows:
        peak[level] = max(peak.get(level, 0), b)
    return peak


def timesteps_csv(rows: Sequence[tuple[int, int, int]], arch: ArchSpec) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["timestep", "level", "bytes"])
    for t, level, b in rows:
        w.writerow([t, arch.levels[level].name, b])
    return buf.getvalue()


# --------------------------------------------------------------------------
# Incremental profiles


@dataclass(frozen=True)
class ReservationProfile:
    level: int
    live: tuple[int, ...]
    closed: tuple[int, ...]
    backing: int = 0

    @property
    def spine(self) -> int:
        return len(self.live)

    @property
    def entries(self) -> int:
        return len(self.live) + len(self.closed)

    def within_bound(self) -> bool:
        return len(self.closed) == self.spine + 1 and self.entries <= 2 * self.spine + 1

    def partial_usage(self) -> int:
        """Lower bound on the final usage of any completion of this prefix."""
        return fold(self.live, self.closed, max(self.closed[-1], self.backing))

    def final_usage(self) -> int:
        return fold(self.live, self.closed, self.closed[-1])


EMPTY = ReservationProfile(-1, (), (0,), 0)


def fold(live: Sequence[int], closed: Sequence[int], bottom: int) -> int:
    u = bottom
    for t in range(len(live) - 1, -1, -1):
        u = max(closed[t], live[t] + u)
    return u


def path_vector(path: PathMapping, workload: Workload, arch: ArchSpec, level: int) -> list[int]:
    """Per-gap bytes at ``level`` of a chain, excluding shared backings."""
    vec = [0] * (path.depth + 1)
    for p in path.placements:
        if p.level == level and len(p.owners) == 1:
            vec[p.gap] += storage_size(workload, arch, p.tensor, path.loops[: p.gap])
    return vec


def backing_sizes(path: PathMapping, workload: Workload, arch: ArchSpec, level: int) -> tuple[int, int, int, int]:
    """``(consumer gap, consumer backing bytes, producer gap, producer backing bytes)`` at ``level``."""
    i = workload.index(path.einsum)
    s_in, s_out = workload.neighbours(i)
    out = []
    for t in (s_in, s_out):
        if t is None:
            out += [0, 0]
            continue
        node = path.backing(t)
        size = storage_size(workload, arch, t, path.loops[: node.gap]) if node.level == level else 0
        out += [node.gap, size]
    return tuple(out)  # type: ignore[return-value]


def split_vector(vec: Sequence[int], m: int) -> tuple[list[int], int]:
    """Keep the first ``m`` gaps individually and sum the rest."""
    head = list(vec[:m]) + [0] * max(0, m - len(vec))
    return head, sum(vec[m:])


def consolidate_after_join(prof: ReservationProfile, attach_position: int, head: Sequence[int], tail: int,
                           b_next: int, p_next: int | None) -> ReservationProfile:
    """Fold a new Einsum (attached at ``attach_position``) into ``prof``.

    ``head``/``tail`` describe the Einsum's own reservations (see
    :func:`split_vector` with ``m = max(p, p_next)``), ``b_next`` its output
    backing at gap ``p_next``; ``p_next`` is ``None`` for the last Einsum,
    which returns a profile with an empty spine holding the final usage.
    """
    p = attach_position
    if prof.spine != p:
        raise ValueError(f"profile spine {prof.spine} does not match attach gap {p}")
    b = prof.backing
    live = [prof.live[t] + head[t] for t in range(p)]
    closed = list(prof.closed)
    if p_next is None:
        u = max(closed[p], b + tail)
        return ReservationProfile(prof.level, (), (fold(live, closed[:p], u),), 0)
    q = p_next
    if q > p:
        live.append(b + head[p])
        for t in range(p + 1, q):
            live.append(head[t])
            closed.append(0)
        closed.append(b_next + tail)
    elif q == p:
        closed[p] = max(closed[p], b + b_next + tail)
    else:
        u = max(closed[p], b + tail)
        for t in range(p - 1, q, -1):
            u = max(closed[t], live[t] + u)
        closed = closed[: q + 1]
        closed[q] = max(closed[q], live[q] + b_next + u)
        live = live[:q]
    return ReservationProfile(prof.level, tuple(live), tuple(closed), b_next)


def profile_of(p: Pmapping | Node, workload: Workload, arch: ArchSpec, level: int) -> ReservationProfile:
    """Profile read directly off a prefix tree (independent of the incremental rule)."""
    tree = p.tree if isinstance(p, Pmapping) else p
    order = [leaf.einsum for leaf in leaves(tree)]
    last = order[-1]
    i = workload.index(last)
    s_out = workload.neighbours(i)[1]
    last_path = [lp for lp in leaf_paths(tree) if lp.einsum == last][0]
    if s_out is None:
        return ReservationProfile(level, (), (max_usage(tree, workload, arch, level),), 0)
    bnode = last_path.backing(s_out)
    gap = bnode.gap
    b = storage_size(workload, arch, s_out, last_path.loops[:gap]) if bnode.level == level else 0

    live: list[int] = []
    closed: list[int] = []
    node: Node = tree
    loops: tuple = ()
    for t in range(gap + 1):
        run, rest = split_run(node)
        if t == gap:
            closed.append(_usage(_subtree_usage(run, rest, loops, workload, arch), level))
            break
        sized = [(s, storage_size(workload, arch, s.tensor, loops)) for s in run]
        if isinstance(rest, Split):
            where = _branch_of(rest.branches)
            nb = len(rest.branches)
            totals = [0] * nb
            for s, size in sized:
                if s.level != level:
                    continue
                idx = [where[o] for o in s.owners if o in where]
                hi = max(idx) if len(idx) == len(s.owners) else nb - 1
                for k in range(min(idx), hi + 1):
                    totals[k] += size
            best = 0
            for k, br in enumerate(rest.branches[:-1]):
                best = max(best, totals[k] + _usage(_conv_at(br, loops, workload, arch), level))
            closed.append(best)
            live.append(totals[-1])
            cont = rest.branches[-1]
        else:
            closed.append(0)
            live.append(sum(size for s, size in sized if s.level == level))
            cont = rest
        assert isinstance(cont, Loop)
        loops = loops + ((cont.rank, cont.trip),)
        node = cont.child
    return ReservationProfile(level, tuple(live), tuple(closed), b)


def _conv_at(node: Node, loops: tuple, workload: Workload, arch: ArchSpec) -> RNode:
    """Reservation tree of a subtree whose position lies below ``loops``."""
    wrapped: Node = node
    for rank, trip in reversed(loops):
        wrapped = Loop(rank, trip, wrapped)
    rt = to_reservation_tree(wrapped, workload, arch)
    for _ in loops:
        rt = rt.child  # type: ignore[attr-defined]
    return rt


def _subtree_usage(run: list[Storage], rest: Node, loops: tuple, workload: Workload, arch: ArchSpec) -> RNode:
    node: Node = rest
    for s in reversed(run):
        node = Storage(s.level, s.tensor, s.owners, node)
    return _conv_at(node, loops, workload, arch)


# --------------------------------------------------------------------------
# Vectorised join of many profiles at once (used by the mapper)


def join_states(live: np.ndarray, closed: np.ndarray, b: np.ndarray, head: np.ndarray, tail: np.ndarray,
                b_next: np.ndarray, p: int, q: int | None) -> tuple[np.ndarray, np.ndarray]:
    """Cross join ``n1`` prefix states with ``n2`` Einsum vectors.

    Shapes: ``live (n1, r, p)``, ``closed (n1, r, p+1)``, ``b (r,)``,
    ``head (n2, r, m)``, ``tail (n2, r)``, ``b_next (r,)``.  Returns arrays of
    shape ``(n1, n2, r, ...)``.  For the last Einsum (``q is None``) ``live``
    is empty and ``closed`` holds the final usage in its single column.
    """
    n1, r = live.shape[0], live.shape[1]
    n2 = head.shape[0]
    L = live[:, None] + head[None, :, :, :p]                     # (n1, n2, r, p)
    C = np.broadcast_to(closed[:, None], (n1, n2, r, p + 1))
    bb = b[None, None, :]
    tl = tail[None, :, :]
    if q is None:
        u = np.maximum(C[..., p], bb + tl)
        for t in range(p - 1, -1, -1):
            u = np.maximum(C[..., t], L[..., t] + u)
        return L[..., :0], u[..., None]
    bn = b_next[None, None, :]
    if q > p:
        extra_live = [np.broadcast_to(bb + head[None, :, :, p], (n1, n2, r))]
        extra_live += [np.broadcast_to(head[None, :, :, t], (n1, n2, r)) for t in range(p + 1, q)]
        zeros = np.zeros((n1, n2, r), dtype=closed.dtype)
        extra_closed = [zeros] * (q - p - 1) + [np.broadcast_to(bn + tl, (n1, n2, r))]
        L = np.concatenate([L] + [x[..., None] for x in extra_live], axis=-1)
        C = np.concatenate([C] + [x[..., None] for x in extra_closed], axis=-1)
        return L, C
    if q == p:
        C = C.copy()
        C[..., p] = np.maximum(C[..., p], bb + bn + tl)
        return L, C
    u = np.maximum(C[..., p], bb + tl)
    for t in range(p - 1, q, -1):
        u = np.maximum(C[..., t], L[..., t] + u)
    C = C[..., : q + 1].copy()
    C[..., q] = np.maximum(C[..., q], L[..., q] + bn + u)
    return L[..., :q], C


def partial_fold(live: np.ndarray, closed: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Vectorised :meth:`ReservationProfile.partial_usage`; reduces the last axis."""
    u = np.maximum(closed[..., -1], b)
    for t in range(live.shape[-1] - 1, -1, -1):
        u = np.maximum(closed[..., t], live[..., t] + u)
    return u
