"""Accelerator description: a memory hierarchy plus an aggregate compute array."""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from typing import Any, Mapping

from .errors import SchemaError


def _rational(value: Any, where: str) -> Fraction:
    if isinstance(value, bool):
        raise SchemaError(f"{where}: expected a number")
    if isinstance(value, str):
        try:
            return Fraction(value)
        except ValueError as exc:
            raise SchemaError(f"{where}: {value!r} is not a rational number") from exc
    if isinstance(value, (int, Fraction)):
        return Fraction(value)
    if isinstance(value, float):
        return Fraction(value).limit_denominator(10**9)
    raise SchemaError(f"{where}: expected a number")


def _to_json_number(x: Fraction) -> int | str:
    return int(x) if x.denominator == 1 else str(x)


@dataclass(frozen=True)
class MemLevel:
    name: str
    capacity_bytes: int | None
    bandwidth_bytes_per_cycle: Fraction
    energy_per_byte: Fraction
    level_index: int

    @property
    def bounded(self) -> bool:
        return self.capacity_bytes is not None


@dataclass(frozen=True)
class ArchSpec:
    levels: tuple[MemLevel, ...]
    mac_energy: Fraction
    parallelism: int
    frequency_hz: Fraction
    datum_bytes: int

    @property
    def bounded_levels(self) -> tuple[MemLevel, ...]:
        return tuple(lv for lv in self.levels if lv.bounded)

    def level(self, name_or_index: str | int) -> MemLevel:
        if isinstance(name_or_index, int):
            return self.levels[name_or_index]
        for lv in self.levels:
            if lv.name == name_or_index:
                return lv
        raise KeyError(name_or_index)

    def to_dict(self) -> dict[str, Any]:
        return {
            "levels": [
                {
                    "name": lv.name,
                    "capacity_bytes": lv.capacity_bytes,
                    "bandwidth_bytes_per_cycle": _to_json_number(lv.bandwidth_bytes_per_cycle),
                    "energy_per_byte": _to_json_number(lv.energy_per_byte),
                }
                for lv in self.levels
            ],
            "mac_energy": _to_json_number(self.mac_energy),
            "parallelism": self.parallelism,
            "frequency_hz": _to_json_number(self.frequency_hz),
            "datum_bytes": self.datum_bytes,
        }


def arch_from_dict(doc: Mapping[str, Any]) -> ArchSpec:
    if not isinstance(doc, Mapping):
        raise SchemaError("arch: document must be an object")
    raw_levels = doc.get("levels")
    if not isinstance(raw_levels, list) or len(raw_levels) < 2:
        raise SchemaError("arch.levels: need a list of at least two memory levels")
    levels = []
    for i, lv in enumerate(raw_levels):
        where = f"arch.levels[{i}]"
        if "name" not in lv:
            raise SchemaError(f"{where}: missing field 'name'")
        cap = lv.get("capacity_bytes")
        if cap is not None:
            if not isinstance(cap, int) or isinstance(cap, bool) or cap <= 0:
                raise SchemaError(f"{where}.capacity_bytes: must be a positive integer or null")
        if "bandwidth_bytes_per_cycle" not in lv:
            raise SchemaError(f"{where}: missing field 'bandwidth_bytes_per_cycle'")
        bw = _rational(lv["bandwidth_bytes_per_cycle"], f"{where}.bandwidth_bytes_per_cycle")
        if bw <= 0:
            raise SchemaError(f"{where}.bandwidth_bytes_per_cycle: must be positive")
        epb = _rational(lv.get("energy_per_byte", 0), f"{where}.energy_per_byte")
        if epb < 0:
            raise SchemaError(f"{where}.energy_per_byte: must be nonnegative")
        levels.append(MemLevel(lv["name"], cap, bw, epb, i))
    if levels[0].capacity_bytes is not None:
        raise SchemaError("arch.levels[0].capacity_bytes: the outermost level must be unbounded (null)")
    if any(lv.capacity_bytes is None for lv in levels[1:]):
        raise SchemaError("arch.levels: only the outermost level may be unbounded")
    if len({lv.name for lv in levels}) != len(levels):
        raise SchemaError("arch.levels: duplicate level names")

    mac = _rational(doc.get("mac_energy", 0), "arch.mac_energy")
    if mac < 0:
        raise SchemaError("arch.mac_energy: must be nonnegative")
    par = doc.get("parallelism", 1)
    if not isinstance(par, int) or isinstance(par, bool) or par < 1:
        raise SchemaError("arch.parallelism: must be a positive integer")
    freq = _rational(doc.get("frequency_hz", 1), "arch.frequency_hz")
    if freq <= 0:
        raise SchemaError("arch.frequency_hz: must be positive")
    datum = doc.get("datum_bytes", 1)
    if not isinstance(datum, int) or isinstance(datum, bool) or datum < 1:
        raise SchemaError("arch.datum_bytes: must be a positive integer")
    return ArchSpec(tuple(levels), mac, par, freq, datum)


def load_arch(document: str | Mapping[str, Any]) -> ArchSpec:
    """Parse and validate an architecture from JSON text or a decoded mapping."""
    if isinstance(document, str):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"arch: invalid JSON ({exc})") from exc
    return arch_from_dict(document)


def dump_arch(spec: ArchSpec) -> str:
    return json.dumps(spec.to_dict(), indent=2)


def tpuv4i_like(local_buffer: bool = False) -> ArchSpec:
    """TPUv4i-like accelerator: 128 MiB global buffer, 4x128x128 MACs, 614 GB/s DRAM at 1.05 GHz.

    Energies are abstract units; only their ordering matters to the search.
    """
    freq = Fraction(105, 100) * 10**9
    levels = [
        {"name": "DRAM", "capacity_bytes": None,
         "bandwidth_bytes_per_cycle": str(Fraction(614 * 10**9) / freq), "energy_per_byte": 100},
        {"name": "GLB", "capacity_bytes": 128 * 2**20,
         "bandwidth_bytes_per_cycle": 2048, "energy_per_byte": 6},
    ]
    if local_buffer:
        levels.append({"name": "LB", "capacity_bytes": 4 * 4 * 2**20,
                       "bandwidth_bytes_per_cycle": 8192, "energy_per_byte": 2})
    return arch_from_dict({
        "levels": levels, "mac_energy": 1, "parallelism": 4 * 128 * 128,
        "frequency_hz": str(freq), "datum_bytes": 1,
    })


def toy_arch(glb_bytes: int = 64, levels: int = 2) -> ArchSpec:
    """Small two- or three-level hierarchy used by the test fixtures."""
    docs = [
        {"name": "DRAM", "capacity_bytes": None, "bandwidth_bytes_per_cycle": 2, "energy_per_byte": 20},
        {"name": "GLB", "capacity_bytes": glb_bytes, "bandwidth_bytes_per_cycle": 8, "energy_per_byte": 3},
    ]
    if levels == 3:
        docs.append({"name": "RF", "capacity_bytes": max(1, glb_bytes // 4),
                     "bandwidth_bytes_per_cycle": 16, "energy_per_byte": 1})
    return arch_from_dict({"levels": docs, "mac_energy": 1, "parallelism": 1,
                           "frequency_hz": 10**9, "datum_bytes": 1})
