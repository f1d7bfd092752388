"""Einsum workloads: ranks, tensors, Einsum cascades and their dependency order."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

from .errors import SchemaError

ROLES = ("input", "intermediate", "output")


@dataclass(frozen=True)
class Rank:
    name: str
    extent: int


@dataclass(frozen=True)
class Tensor:
    name: str
    ranks: tuple[str, ...]
    role: str = "input"


@dataclass(frozen=True)
class Einsum:
    name: str
    output: str
    inputs: tuple[str, ...]
    projection: Mapping[str, tuple[str, ...]] = field(hash=False, compare=True)

    @property
    def tensors(self) -> tuple[str, ...]:
        return self.inputs + (self.output,)

    @property
    def rank_vars(self) -> tuple[str, ...]:
        """Rank variables in first-appearance order (output first)."""
        seen: list[str] = []
        for t in (self.output,) + self.inputs:
            for r in self.projection[t]:
                if r not in seen:
                    seen.append(r)
        return tuple(seen)

    @property
    def summed_rank_vars(self) -> tuple[str, ...]:
        out = set(self.projection[self.output])
        return tuple(r for r in self.rank_vars if r not in out)


@dataclass(frozen=True)
class Workload:
    ranks: Mapping[str, Rank] = field(hash=False)
    tensors: Mapping[str, Tensor] = field(hash=False)
    einsums: tuple[Einsum, ...]

    def einsum(self, name: str) -> Einsum:
        for e in self.einsums:
            if e.name == name:
                return e
        raise KeyError(name)

    def index(self, name: str) -> int:
        for i, e in enumerate(self.einsums):
            if e.name == name:
                return i
        raise KeyError(name)

    def extent(self, rank: str) -> int:
        return self.ranks[rank].extent

    def tensor_size(self, tensor: str) -> int:
        return math.prod(self.extent(r) for r in self.tensors[tensor].ranks)

    def ops(self, einsum: Einsum | str) -> int:
        e = self.einsum(einsum) if isinstance(einsum, str) else einsum
        return math.prod(self.extent(r) for r in e.rank_vars)

    def producer(self, tensor: str) -> Einsum | None:
        for e in self.einsums:
            if e.output == tensor:
                return e
        return None

    def consumers(self, tensor: str) -> list[Einsum]:
        return [e for e in self.einsums if tensor in e.inputs]

    def shared_tensor(self, prev: Einsum | str, nxt: Einsum | str) -> Tensor | None:
        return shared_tensor(self, prev, nxt)

    def neighbours(self, i: int) -> tuple[str | None, str | None]:
        """Names of the tensors shared with the previous and next Einsum."""
        e = self.einsums[i]
        s_in = shared_tensor(self, self.einsums[i - 1], e) if i > 0 else None
        s_out = shared_tensor(self, e, self.einsums[i + 1]) if i + 1 < len(self.einsums) else None
        return (s_in.name if s_in else None, s_out.name if s_out else None)

    def to_dict(self) -> dict[str, Any]:
        return {
            "ranks": {r.name: r.extent for r in self.ranks.values()},
            "tensors": [
                {"name": t.name, "ranks": list(t.ranks), "role": t.role}
                for t in self.tensors.values()
            ],
            "einsums": [
                {
                    "name": e.name,
                    "output": e.output,
                    "inputs": list(e.inputs),
                    "projections": {t: list(rs) for t, rs in e.projection.items()},
                }
                for e in self.einsums
            ],
        }


def shared_tensor(w: Workload, prev: Einsum | str, nxt: Einsum | str) -> Tensor | None:
    """The unique intermediate tensor produced by ``prev`` and read by ``nxt``."""
    prev = w.einsum(prev) if isinstance(prev, str) else prev
    nxt = w.einsum(nxt) if isinstance(nxt, str) else nxt
    if prev.name == nxt.name:
        raise ValueError(f"cannot pair Einsum {prev.name!r} with itself")
    shared = [t for t in nxt.inputs if t == prev.output and w.tensors[t].role == "intermediate"]
    if not shared:
        return None
    if len(shared) > 1:
        raise ValueError(f"Einsums {prev.name} and {nxt.name} share more than one tensor")
    return w.tensors[shared[0]]


def _require(doc: Mapping[str, Any], key: str, where: str) -> Any:
    if key not in doc:
        raise SchemaError(f"{where}: missing field {key!r}")
    return doc[key]


def workload_from_dict(doc: Mapping[str, Any]) -> Workload:
    if not isinstance(doc, Mapping):
        raise SchemaError("workload: document must be an object")
    raw_ranks = _require(doc, "ranks", "workload")
    if not isinstance(raw_ranks, Mapping):
        raise SchemaError("workload.ranks: must be an object of name -> extent")
    ranks: dict[str, Rank] = {}
    for name, extent in raw_ranks.items():
        if not isinstance(extent, int) or isinstance(extent, bool) or extent < 1:
            raise SchemaError(f"workload.ranks.{name}: extent must be a positive integer")
        ranks[name] = Rank(name, extent)

    tensors: dict[str, Tensor] = {}
    for i, t in enumerate(_require(doc, "tensors", "workload")):
        where = f"workload.tensors[{i}]"
        name = _require(t, "name", where)
        trs = tuple(_require(t, "ranks", where))
        role = t.get("role", "input")
        if role not in ROLES:
            raise SchemaError(f"{where}.role: must be one of {ROLES}")
        if not trs or len(set(trs)) != len(trs):
            raise SchemaError(f"{where}.ranks: must be non-empty and duplicate-free")
        for r in trs:
            if r not in ranks:
                raise SchemaError(f"{where}.ranks: unknown rank {r!r}")
        if name in tensors:
            raise SchemaError(f"{where}.name: duplicate tensor {name!r}")
        tensors[name] = Tensor(name, trs, role)

    einsums: list[Einsum] = []
    for i, e in enumerate(_require(doc, "einsums", "workload")):
        where = f"workload.einsums[{i}]"
        name = _require(e, "name", where)
        out = _require(e, "output", where)
        ins = tuple(_require(e, "inputs", where))
        proj_doc = e.get("projections")
        proj: dict[str, tuple[str, ...]] = {}
        for t in (out,) + ins:
            if t not in tensors:
                raise SchemaError(f"{where}: unknown tensor {t!r}")
            if proj_doc is not None and t in proj_doc:
                proj[t] = tuple(proj_doc[t])
            else:
                proj[t] = tensors[t].ranks
            if tuple(proj[t]) != tensors[t].ranks:
                raise SchemaError(
                    f"{where}.projections.{t}: {list(proj[t])} does not match tensor ranks "
                    f"{list(tensors[t].ranks)}"
                )
        einsums.append(Einsum(name, out, ins, proj))
    if not einsums:
        raise SchemaError("workload.einsums: at least one Einsum required")
    if len({e.name for e in einsums}) != len(einsums):
        raise SchemaError("workload.einsums: duplicate Einsum names")

    ordered = _topological(einsums, tensors)
    w = Workload(ranks, tensors, tuple(ordered))
    _check_cascade(w)
    return w


def _topological(einsums: list[Einsum], tensors: Mapping[str, Tensor]) -> list[Einsum]:
    producers: dict[str, list[Einsum]] = {}
    for e in einsums:
        producers.setdefault(e.output, []).append(e)
    for t in tensors.values():
        prods = producers.get(t.name, [])
        if t.role == "intermediate":
            if len(prods) != 1:
                raise SchemaError(
                    f"intermediate tensor {t.name!r} has {len(prods)} producers (need exactly 1)"
                )
            if not any(t.name in e.inputs for e in einsums):
                raise SchemaError(f"intermediate tensor {t.name!r} has no consumer")
        elif t.role == "input" and prods:
            raise SchemaError(f"input tensor {t.name!r} is produced by {prods[0].name!r}")
        elif t.role == "output" and len(prods) != 1:
            raise SchemaError(f"output tensor {t.name!r} needs exactly one producer")

    # Kahn's algorithm, stable w.r.t. document order.
    deps = {
        e.name: {producers[t][0].name for t in e.inputs if t in producers} for e in einsums
    }
    done: list[Einsum] = []
    remaining = list(einsums)
    while remaining:
        ready = [e for e in remaining if deps[e.name] <= {d.name for d in done}]
        if not ready:
            raise SchemaError("workload: cyclic dependency between Einsums")
        done.append(ready[0])
        remaining.remove(ready[0])
    return done


def _check_cascade(w: Workload) -> None:
    for i, e in enumerate(w.einsums):
        for t in e.inputs:
            if w.tensors[t].role != "intermediate":
                continue
            prod = w.producer(t)
            if prod is None or w.index(prod.name) != i - 1:
                raise SchemaError(
                    f"tensor {t!r} read by {e.name!r} is not produced by the preceding Einsum; "
                    "only cascade workloads are supported"
                )
        if w.tensors[e.output].role == "intermediate":
            cons = w.consumers(e.output)
            if [w.index(c.name) for c in cons] != [i + 1]:
                raise SchemaError(
                    f"intermediate {e.output!r} must be consumed by exactly the next Einsum"
                )


def load_workload(document: str | Mapping[str, Any]) -> Workload:
    """Parse and validate a workload from JSON text or an already-decoded mapping."""
    if isinstance(document, str):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"workload: invalid JSON ({exc})") from exc
    return workload_from_dict(document)


def make_chain(num_einsums: int, m: int, nk_pattern: Sequence[tuple[int, int]]) -> Workload:
    """A chain of matmuls where matmul ``i`` feeds the left operand of matmul ``i+1``.

    ``nk_pattern`` rotates through ``(N, K)`` pairs; for matmul ``i`` the contracted
    extent is the previous output width, so K of matmul 0 and N of every matmul
    come from the pattern.
    """
    if num_einsums < 1:
        raise ValueError("num_einsums must be >= 1")
    if m < 1 or not nk_pattern or any(n < 1 or k < 1 for n, k in nk_pattern):
        raise ValueError("all extents must be >= 1")
    ranks = {"m": m}
    tensors: list[dict[str, Any]] = []
    einsums: list[dict[str, Any]] = []
    n0, k0 = nk_pattern[0]
    ranks["n0"] = k0
    tensors.append({"name": "T0", "ranks": ["m", "n0"], "role": "input"})
    for i in range(num_einsums):
        n, _ = nk_pattern[i % len(nk_pattern)]
        ranks[f"n{i + 1}"] = n
        last = i == num_einsums - 1
        tensors.append({"name": f"W{i}", "ranks": [f"n{i}", f"n{i + 1}"], "role": "input"})
        tensors.append(
            {"name": f"T{i + 1}", "ranks": ["m", f"n{i + 1}"],
             "role": "output" if last else "intermediate"}
        )
        einsums.append({"name": f"E{i}", "output": f"T{i + 1}", "inputs": [f"T{i}", f"W{i}"]})
    return workload_from_dict({"ranks": ranks, "tensors": tensors, "einsums": einsums})

