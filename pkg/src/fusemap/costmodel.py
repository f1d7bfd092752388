"""Analytical access, energy and latency model for LoopTree mappings.

Every iteration of a loop above a storage node refills that node's tile.
Inputs are filled from the next-outer storage node of the same tensor,
outputs are drained to it, and an output tile that was drained before is read
back first (partial sums).  Compute touches the innermost node of each tensor
once per operation.  Backing nodes (no outer node) move nothing.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable

from .arch import ArchSpec
from .looptree import Compute, Loop, Node, PathMapping, Pmapping, Split, Storage, leaf_paths, tile_shape
from .workload import Workload


@dataclass(frozen=True)
class CostBreakdown:
    per_level_bytes_moved: tuple[int, ...]
    ops: int
    energy: Fraction
    latency_cycles: Fraction
    accesses: dict = field(default_factory=dict, compare=False, hash=False)

    @property
    def edp(self) -> Fraction:
        return self.energy * self.latency_cycles

    def objective(self, name: str) -> Fraction:
        if name == "energy":
            return self.energy
        if name == "latency":
            return self.latency_cycles
        if name == "edp":
            return self.edp
        raise ValueError(f"unknown objective {name!r}")

    def __add__(self, other: "CostBreakdown") -> "CostBreakdown":
        acc = dict(self.accesses)
        for k, v in other.accesses.items():
            acc[k] = acc.get(k, 0) + v
        return CostBreakdown(
            tuple(a + b for a, b in zip(self.per_level_bytes_moved, other.per_level_bytes_moved)),
            self.ops + other.ops,
            self.energy + other.energy,
            self.latency_cycles + other.latency_cycles,
            acc,
        )

    def to_dict(self, arch: ArchSpec) -> dict:
        return {
            "per_level_bytes_moved": {lv.name: b for lv, b in zip(arch.levels, self.per_level_bytes_moved)},
            "ops": self.ops,
            "energy": str(self.energy),
            "latency_cycles": str(self.latency_cycles),
            "edp": str(self.edp),
        }


def _role(workload: Workload, einsum: str, tensor: str) -> str:
    return "output" if workload.einsum(einsum).output == tensor else "input"


def path_accesses(path: PathMapping, workload: Workload) -> dict[tuple[str, int, str], int]:
    """Closed-form element counts keyed by ``(tensor, level, kind)``.

    ``kind`` is one of ``fill``, ``drain``, ``readback``, ``compute``; each
    transfer is attributed to the child node's level.
    """
    e = workload.einsum(path.einsum)
    extents = {r: workload.extent(r) for r in e.rank_vars}
    ops = workload.ops(e)
    out: dict[tuple[str, int, str], int] = {}
    for t in e.tensors:
        nodes = sorted((p for p in path.placements if p.tensor == t), key=lambda p: (p.level, p.gap))
        if not nodes:
            raise ValueError(f"{t} has no storage node in {path.einsum}")
        ranks = workload.tensors[t].ranks
        role = _role(workload, path.einsum, t)
        for child in nodes[1:]:
            above = path.loops[: child.gap]
            tile = math.prod(tile_shape(above, ranks, extents).values())
            res = math.prod(k for _, k in above)
            if role == "input":
                out[(t, child.level, "fill")] = tile * res
            else:
                distinct = math.prod(k for r, k in above if r in ranks)
                out[(t, child.level, "drain")] = tile * res
                out[(t, child.level, "readback")] = tile * (res - distinct)
        out[(t, nodes[-1].level, "compute")] = ops
    return out


def _level_traffic(path: PathMapping, counts: dict[tuple[str, int, str], int],
                   n_levels: int) -> list[int]:
    """Elements read or written at each level."""
    traffic = [0] * n_levels
    parents: dict[tuple[str, int], int] = {}
    for t in {k[0] for k in counts}:
        levels = sorted(p.level for p in path.placements if p.tensor == t)
        for a, b in zip(levels, levels[1:]):
            parents[(t, b)] = a
    for (t, level, kind), n in counts.items():
        traffic[level] += n
        if kind != "compute":
            traffic[parents[(t, level)]] += n
    return traffic


def _roll_up(traffic_elems: list[int], ops: int, arch: ArchSpec, accesses: dict) -> CostBreakdown:
    bytes_ = tuple(n * arch.datum_bytes for n in traffic_elems)
    energy = sum((b * lv.energy_per_byte for b, lv in zip(bytes_, arch.levels)), Fraction(0))
    energy += ops * arch.mac_energy
    latency = Fraction(ops, arch.parallelism)
    for b, lv in zip(bytes_, arch.levels):
        latency = max(latency, b / lv.bandwidth_bytes_per_cycle)
    return CostBreakdown(bytes_, ops, energy, latency, accesses)


def evaluate_path(path: PathMapping, workload: Workload, arch: ArchSpec) -> CostBreakdown:
    counts = path_accesses(path, workload)
    for p in path.placements:
        if p.level >= len(arch.levels):
            raise ValueError(f"storage node references unknown level {p.level}")
    traffic = _level_traffic(path, counts, len(arch.levels))
    return _roll_up(traffic, workload.ops(path.einsum), arch,
                    {(path.einsum,) + k: v for k, v in counts.items()})


def evaluate(p: Pmapping | PathMapping | Node, workload: Workload, arch: ArchSpec) -> CostBreakdown:
    """Cost of a pmapping; a multi-Einsum tree costs the sum of its Einsum branches."""
    if isinstance(p, PathMapping):
        return evaluate_path(p, workload, arch)
    tree = p.tree if isinstance(p, Pmapping) else p
    total: CostBreakdown | None = None
    for path in leaf_paths(tree):
        c = evaluate_path(path, workload, arch)
        total = c if total is None else total + c
    assert total is not None
    return total


def cost_scales(arch: ArchSpec) -> tuple[int, int]:
    """Integer multipliers that make every energy and latency value integral."""
    e_scale = math.lcm(arch.mac_energy.denominator, *(lv.energy_per_byte.denominator for lv in arch.levels))
    l_terms = [Fraction(1, arch.parallelism)] + [arch.datum_bytes / lv.bandwidth_bytes_per_cycle
                                                 for lv in arch.levels]
    l_scale = math.lcm(*(f.denominator for f in l_terms))
    return e_scale, l_scale


# --------------------------------------------------------------------------
# Datum-level trace, used as an oracle for the closed form.


class TraceTooLarge(ValueError):
    pass


def trace_accesses(p: Pmapping | PathMapping | Node, workload: Workload, arch: ArchSpec,
                   limit: int = 10**6) -> tuple[dict[tuple[str, str, int, str], int], tuple[int, ...]]:
    """Simulate the loop nest element by element.

    Returns counts keyed by ``(einsum, tensor, level, kind)`` and the bytes
    moved per level.
    """
    tree = p.to_tree() if isinstance(p, PathMapping) else (p.tree if isinstance(p, Pmapping) else p)
    total_iters = sum(workload.ops(path.einsum) for path in leaf_paths(tree))
    if total_iters > limit:
        raise TraceTooLarge(f"iteration space {total_iters} exceeds {limit}")

    counts: dict[tuple[str, str, int, str], int] = {}
    traffic = [0] * len(arch.levels)
    written: dict[tuple, set] = {}
    offset: dict[str, int] = {}
    residual: dict[str, int] = {r: rk.extent for r, rk in workload.ranks.items()}
    active: dict[tuple[str, str], list[tuple[tuple, Storage]]] = {}

    def bump(key: tuple, n: int, *levels: int) -> None:
        counts[key] = counts.get(key, 0) + n
        for lv in levels:
            traffic[lv] += n

    def tile(tensor: str) -> set:
        ranges = [range(offset.get(r, 0), offset.get(r, 0) + residual[r]) for r in workload.tensors[tensor].ranks]
        return set(itertools.product(*ranges))

    def run(node: Node, pos: tuple) -> None:
        if isinstance(node, Loop):
            r = node.rank
            saved_off, saved_res = offset.get(r, 0), residual[r]
            sub = saved_res // node.trip
            residual[r] = sub
            for i in range(node.trip):
                offset[r] = saved_off + i * sub
                run(node.child, pos + ("loop",))
            offset[r], residual[r] = saved_off, saved_res
        elif isinstance(node, Storage):
            t = node.tensor
            drains = []
            for owner in node.owners:
                stack = active.setdefault((owner, t), [])
                if stack:
                    parent = stack[-1][1]
                    elems = tile(t)
                    if _role(workload, owner, t) == "input":
                        bump((owner, t, node.level, "fill"), len(elems), node.level, parent.level)
                    else:
                        seen = written.setdefault(pos, set())
                        bump((owner, t, node.level, "readback"), len(elems & seen), node.level, parent.level)
                        drains.append((owner, parent, elems, seen))
                stack.append((pos, node))
            run(node.child, pos + ("s",))
            for owner in node.owners:
                active[(owner, t)].pop()
            for owner, parent, elems, seen in drains:
                bump((owner, t, node.level, "drain"), len(elems), node.level, parent.level)
                seen |= elems
        elif isinstance(node, Split):
            for i, b in enumerate(node.branches):
                run(b, pos + (("b", i),))
        else:
            e = workload.einsum(node.einsum)
            ranges = [range(residual[r]) for r in e.rank_vars]
            inner = {t: active[(e.name, t)][-1][1].level for t in e.tensors}
            for _ in itertools.product(*ranges):
                for t in e.tensors:
                    bump((e.name, t, inner[t], "compute"), 1, inner[t])

    run(tree, ())
    return counts, tuple(n * arch.datum_bytes for n in traffic)


def per_einsum(cost_items: Iterable[CostBreakdown]) -> CostBreakdown:
    items = list(cost_items)
    total = items[0]
    for c in items[1:]:
        total = total + c
    return total
