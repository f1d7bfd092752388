"""LoopTree mappings: loop, storage, split and compute nodes, and pmapping joins.

A single-Einsum pmapping is a chain.  Storage nodes sit in *gaps*: gap ``t``
is the slot below the first ``t`` loops of the chain.  Storage nodes in the
same gap are degenerate in order and are kept sorted by
``(level, tensor, owners)`` so that structural equality is meaningful.

Joining grafts a new chain onto the rightmost (open) path of a tree: the new
chain's storage nodes in gaps above the attach gap merge into the runs of the
spine, and a split is placed under the run of the attach gap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterator, Mapping, Sequence, Union

from .errors import IncompatibleJoin

if TYPE_CHECKING:
    from .compat import CompatKey
    from .pareto import CriteriaVector
    from .workload import Workload


@dataclass(frozen=True)
class Compute:
    einsum: str


@dataclass(frozen=True)
class Loop:
    rank: str
    trip: int
    child: "Node"


@dataclass(frozen=True)
class Storage:
    level: int
    tensor: str
    owners: tuple[str, ...]
    child: "Node"

    @property
    def sort_key(self) -> tuple:
        return (self.level, self.tensor, self.owners)


@dataclass(frozen=True)
class Split:
    branches: tuple["Node", ...]

    def __post_init__(self) -> None:
        if len(self.branches) < 2:
            raise ValueError("a split needs at least two branches")


Node = Union[Compute, Loop, Storage, Split]

# Aliases matching the node vocabulary used in reports.
LoopNode, StorageNode, SplitNode, ComputeNode = Loop, Storage, Split, Compute


@dataclass(frozen=True, order=True)
class Placement:
    """A storage node of a single-Einsum chain, located by its gap."""

    gap: int
    level: int
    tensor: str
    owners: tuple[str, ...]


@dataclass(frozen=True)
class PathMapping:
    """A single-Einsum pmapping: loops top-down plus storage placements."""

    einsum: str
    loops: tuple[tuple[str, int], ...]
    placements: tuple[Placement, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "placements", tuple(sorted(self.placements)))

    @property
    def depth(self) -> int:
        return len(self.loops)

    def run(self, gap: int) -> list[Placement]:
        return [p for p in self.placements if p.gap == gap]

    def backing(self, tensor: str) -> Placement:
        """Outermost storage node of ``tensor``."""
        nodes = [p for p in self.placements if p.tensor == tensor]
        if not nodes:
            raise KeyError(f"{tensor} has no storage node in {self.einsum}")
        return min(nodes, key=lambda p: (p.level, p.gap))

    def shared_backing(self, other: str) -> Placement | None:
        """The backing node this chain shares with Einsum ``other``, if any."""
        for p in self.placements:
            if other in p.owners and self.einsum in p.owners and len(p.owners) > 1:
                return p
        return None

    def loops_above(self, gap: int) -> tuple[tuple[str, int], ...]:
        return self.loops[:gap]

    def to_tree(self) -> Node:
        return chain_tree(self, 0)


def _stack(storages: Sequence[Storage | Placement], bottom: Node) -> Node:
    node = bottom
    for s in sorted(storages, key=lambda s: (s.level, s.tensor, s.owners), reverse=True):
        node = Storage(s.level, s.tensor, s.owners, node)
    return node


def chain_tree(path: PathMapping, from_gap: int) -> Node:
    """Chain of ``path`` starting at the run of ``from_gap``."""
    node: Node = Compute(path.einsum)
    for gap in range(path.depth, from_gap - 1, -1):
        node = _stack(path.run(gap), node)
        if gap > from_gap:
            rank, trip = path.loops[gap - 1]
            node = Loop(rank, trip, node)
    return node


def chain_below(path: PathMapping, gap: int) -> Node:
    """What hangs below the run of ``gap``: the next loop onward, or the compute leaf."""
    if gap >= path.depth:
        return Compute(path.einsum)
    rank, trip = path.loops[gap]
    return Loop(rank, trip, chain_tree(path, gap + 1))


def split_run(node: Node) -> tuple[list[Storage], Node]:
    run: list[Storage] = []
    while isinstance(node, Storage):
        run.append(node)
        node = node.child
    return run, node


def _merge_run(run: Sequence[Storage], extra: Sequence[Placement]) -> list[Storage | Placement]:
    merged: dict[tuple, Storage | Placement] = {s.sort_key if isinstance(s, Storage) else
                                               (s.level, s.tensor, s.owners): s for s in run}
    for p in extra:
        merged.setdefault((p.level, p.tensor, p.owners), p)
    return list(merged.values())


def join_trees(left: Node, right: PathMapping, attach_gap: int) -> Node:
    """Graft ``right`` onto the open spine of ``left`` with a split under gap ``attach_gap``."""

    def graft(node: Node, t: int) -> Node:
        run, rest = split_run(node)
        merged = _merge_run(run, right.run(t))
        if t < attach_gap:
            if t >= right.depth:
                raise IncompatibleJoin("right chain is shallower than the attach gap")
            rank, trip = right.loops[t]
            if isinstance(rest, Split):
                cont = rest.branches[-1]
                if not (isinstance(cont, Loop) and (cont.rank, cont.trip) == (rank, trip)):
                    raise IncompatibleJoin(f"loop mismatch at gap {t}")
                new_rest: Node = Split(rest.branches[:-1] + (Loop(rank, trip, graft(cont.child, t + 1)),))
            elif isinstance(rest, Loop) and (rest.rank, rest.trip) == (rank, trip):
                new_rest = Loop(rank, trip, graft(rest.child, t + 1))
            else:
                raise IncompatibleJoin(f"loop mismatch at gap {t}")
        else:
            tail = chain_below(right, attach_gap)
            if isinstance(rest, Split):
                new_rest = Split(rest.branches + (tail,))
            else:
                new_rest = Split((rest, tail))
        return _stack(merged, new_rest)

    return graft(left, 0)


@dataclass(frozen=True)
class Pmapping:
    """A mapping fragment covering a contiguous prefix of Einsums (or one Einsum)."""

    einsums: tuple[str, ...]
    tree: Node
    open_key: "CompatKey | None" = None
    criteria: "CriteriaVector | None" = None

    @classmethod
    def single(cls, path: PathMapping, open_key: "CompatKey | None" = None,
               criteria: "CriteriaVector | None" = None) -> "Pmapping":
        return cls((path.einsum,), path.to_tree(), open_key, criteria)

    @property
    def path(self) -> PathMapping:
        paths = leaf_paths(self.tree)
        if len(paths) != 1:
            raise ValueError("pmapping covers more than one Einsum")
        return paths[0]


def join(left: Pmapping, right: Pmapping, workload: "Workload") -> Pmapping:
    """Merge the compatible shared portion of ``left`` and ``right`` and split beneath it."""
    from .compat import compat_key_consumer, compat_key_producer, compatible

    rpath = right.path
    i = workload.index(rpath.einsum)
    if i == 0 or left.einsums[-1] != workload.einsums[i - 1].name:
        raise IncompatibleJoin(f"{rpath.einsum} does not follow {left.einsums[-1]}")
    ckey = compat_key_consumer(rpath, workload)
    if left.open_key is None or not compatible(left.open_key, ckey):
        raise IncompatibleJoin(f"keys differ: {left.open_key} vs {ckey}")
    tree = join_trees(left.tree, rpath, len(ckey.loops_above))
    return Pmapping(left.einsums + (rpath.einsum,), tree, compat_key_producer(rpath, workload))


def leaves(tree: Node) -> Iterator[Compute]:
    if isinstance(tree, Compute):
        yield tree
    elif isinstance(tree, Split):
        for b in tree.branches:
            yield from leaves(b)
    else:
        yield from leaves(tree.child)


def leaf_paths(tree: Node) -> list[PathMapping]:
    """Per-Einsum chains in left-to-right leaf order."""
    out: list[PathMapping] = []

    def walk(node: Node, loops: tuple, placements: tuple) -> None:
        if isinstance(node, Compute):
            mine = [p for p in placements if node.einsum in p.owners]
            out.append(PathMapping(node.einsum, loops, tuple(mine)))
        elif isinstance(node, Loop):
            walk(node.child, loops + ((node.rank, node.trip),), placements)
        elif isinstance(node, Storage):
            walk(node.child, loops, placements + (Placement(len(loops), node.level, node.tensor, node.owners),))
        else:
            for b in node.branches:
                walk(b, loops, placements)

    walk(tree, (), ())
    return out


def decompose(full: Pmapping, workload: "Workload") -> list[Pmapping]:
    """Split a full mapping into per-Einsum single pmappings."""
    from .compat import compat_key_producer

    return [Pmapping.single(p, compat_key_producer(p, workload)) for p in leaf_paths(full.tree)]


def join_all(parts: Sequence[Pmapping], workload: "Workload") -> Pmapping:
    acc = parts[0]
    for nxt in parts[1:]:
        acc = join(acc, nxt, workload)
    return acc


def tile_shape(loops_above: Sequence[tuple[str, int]], tensor_ranks: Sequence[str],
               extents: Mapping[str, int]) -> dict[str, int]:
    """Residual extent of each rank of a tensor below ``loops_above``."""
    shape = {}
    for r in tensor_ranks:
        div = math.prod(trip for rank, trip in loops_above if rank == r)
        if extents[r] % div:
            raise ValueError(f"loops over {r} do not divide its extent {extents[r]}")
        shape[r] = extents[r] // div
    return shape


def tile_count(loops_above: Sequence[tuple[str, int]]) -> int:
    """Number of tile residencies below ``loops_above`` (every iteration refills)."""
    return math.prod(trip for _, trip in loops_above)


def render(tree: Node, level_names: Sequence[str] | None = None, indent: str = "  ") -> str:
    """Deterministic indented text, one node per line."""
    lines: list[str] = []

    def name(level: int) -> str:
        return level_names[level] if level_names else f"L{level}"

    def walk(node: Node, depth: int) -> None:
        pad = indent * depth
        if isinstance(node, Compute):
            lines.append(f"{pad}compute {node.einsum}")
        elif isinstance(node, Loop):
            lines.append(f"{pad}for {node.rank} in [0,{node.trip})")
            walk(node.child, depth + 1)
        elif isinstance(node, Storage):
            lines.append(f"{pad}{name(node.level)}: {node.tensor} ({','.join(node.owners)})")
            walk(node.child, depth)
        else:
            lines.append(f"{pad}split")
            for b in node.branches:
                walk(b, depth + 1)

    walk(tree, 0)
    return "\n".join(lines)


def count_nodes(tree: Node) -> int:
    if isinstance(tree, Compute):
        return 1
    if isinstance(tree, Split):
        return 1 + sum(count_nodes(b) for b in tree.branches)
    return 1 + count_nodes(tree.child)
