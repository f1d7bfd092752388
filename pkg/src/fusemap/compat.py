"""Compatibility criteria of pmappings and grouping by them."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Hashable, Iterable, TypeVar

from .looptree import PathMapping, Pmapping
from .workload import Workload

T = TypeVar("T")


@dataclass(frozen=True)
class CompatKey:
    """How a shared tensor is exchanged: backing level plus the ordered loops above it.

    ``tensor`` is ``None`` when neighbouring Einsums share nothing; such keys
    always match with zero loops (the split lands at the top of the tree).
    """

    tensor: str | None
    backing_level: int | None
    loops_above: tuple[tuple[str, int], ...]
    direction: str

    @property
    def gap(self) -> int:
        return len(self.loops_above)

    @property
    def match(self) -> tuple:
        """Direction-free identity used to pair producer and consumer groups."""
        return (self.tensor, self.backing_level, self.loops_above)

    def render(self, level_names=None) -> str:
        if self.tensor is None:
            return f"<none>/{self.direction}"
        lvl = level_names[self.backing_level] if level_names else f"L{self.backing_level}"
        loops = ",".join(f"{r}:{k}" for r, k in self.loops_above)
        return f"{self.tensor}@{lvl}[{loops}]/{self.direction}"


def _path(p: PathMapping | Pmapping) -> PathMapping:
    return p if isinstance(p, PathMapping) else p.path


def _key(path: PathMapping, shared: str | None, direction: str) -> CompatKey:
    if shared is None:
        return CompatKey(None, None, (), direction)
    node = path.backing(shared)
    return CompatKey(shared, node.level, path.loops[: node.gap], direction)


def compat_key_producer(p: PathMapping | Pmapping, workload: Workload) -> CompatKey | None:
    """Key of the tensor this Einsum hands to the next one (``None`` for the last Einsum)."""
    path = _path(p)
    i = workload.index(path.einsum)
    if i + 1 >= len(workload.einsums):
        return None
    return _key(path, workload.neighbours(i)[1], "producer")


def compat_key_consumer(p: PathMapping | Pmapping, workload: Workload) -> CompatKey | None:
    """Key of the tensor this Einsum receives from the previous one (``None`` for the first)."""
    path = _path(p)
    i = workload.index(path.einsum)
    if i == 0:
        return None
    return _key(path, workload.neighbours(i)[0], "consumer")


def compatible(a: CompatKey | None, b: CompatKey | None) -> bool:
    if a is None or b is None:
        return False
    return a.match == b.match and {a.direction, b.direction} == {"producer", "consumer"}


def group_by_key(pmaps: Iterable[T], key: Callable[[T], Hashable] | None = None) -> dict:
    """Partition ``pmaps`` by compatibility key, preserving input order within groups."""
    if key is None:
        key = lambda p: p.open_key  # noqa: E731
    groups: dict = {}
    for p in pmaps:
        groups.setdefault(key(p), []).append(p)
    return groups
