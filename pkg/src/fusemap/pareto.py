"""Criteria vectors and Pareto-frontier pruning."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Any, Sequence

import numpy as np

from . import kernels


@dataclass(frozen=True, order=True)
class CriteriaVector:
    """Objective components plus tagged reservation components.

    Two vectors compare only when their reservation tags are identical.
    """

    energy: Fraction
    latency: Fraction
    reservations: tuple[tuple[Any, int], ...] = ()

    @property
    def tags(self) -> tuple:
        return tuple(t for t, _ in self.reservations)

    @property
    def values(self) -> tuple:
        return (self.energy, self.latency) + tuple(v for _, v in self.reservations)


class IncomparableVectors(ValueError):
    pass


def _values(v: CriteriaVector | Sequence) -> tuple:
    return v.values if isinstance(v, CriteriaVector) else tuple(v)


def _check(a, b) -> None:
    if isinstance(a, CriteriaVector) and isinstance(b, CriteriaVector):
        if a.tags != b.tags:
            raise IncomparableVectors(f"reservation tags differ: {a.tags} vs {b.tags}")
    elif len(_values(a)) != len(_values(b)):
        raise IncomparableVectors("vectors have different lengths")


def dominates(a: CriteriaVector | Sequence, b: CriteriaVector | Sequence) -> bool:
    """True iff ``a`` is no worse than ``b`` everywhere and better somewhere."""
    _check(a, b)
    va, vb = _values(a), _values(b)
    return all(x <= y for x, y in zip(va, vb)) and any(x < y for x, y in zip(va, vb))


def frontier(items: Sequence[tuple[CriteriaVector | Sequence, Any]], payload_id=None,
             backend: str | None = None) -> list[tuple[Any, Any]]:
    """Non-dominated items, sorted by (vector, payload id); duplicates keep the first.

    ``payload_id`` maps a payload to a sortable id (default: input position).
    """
    if not items:
        return []
    for v, _ in items[1:]:
        _check(items[0][0], v)
    ids = [payload_id(p) if payload_id else i for i, (_, p) in enumerate(items)]
    order = sorted(range(len(items)), key=lambda i: (_values(items[i][0]), ids[i]))
    rows = [_values(items[i][0]) for i in order]
    x = to_matrix(rows)
    keep = kernels.pareto_mask_sorted(x, backend)
    return [items[order[k]] for k in range(len(order)) if keep[k]]


def to_matrix(rows: Sequence[Sequence]) -> np.ndarray:
    """int64 matrix when every entry is an integer that fits, object array otherwise."""
    if not rows:
        return np.zeros((0, 0), dtype=np.int64)
    flat = [x for r in rows for x in r]
    if all(isinstance(x, (int, np.integer)) or (isinstance(x, Fraction) and x.denominator == 1) for x in flat):
        ints = [int(x) for x in flat]
        if all(-(2**62) < x < 2**62 for x in ints):
            return np.array(ints, dtype=np.int64).reshape(len(rows), -1)
    arr = np.empty((len(rows), len(rows[0])), dtype=object)
    for i, r in enumerate(rows):
        for j, x in enumerate(r):
            arr[i, j] = x
    return arr


def brute_force_frontier(items: Sequence[tuple[Any, Any]]) -> list[tuple[Any, Any]]:
    """Quadratic reference filter (first duplicate in input order survives)."""
    out = []
    for i, (v, p) in enumerate(items):
        bad = False
        for j, (w, _) in enumerate(items):
            if j == i:
                continue
            if dominates(w, v) or (_values(w) == _values(v) and j < i):
                bad = True
                break
        if not bad:
            out.append((v, p))
    return out
