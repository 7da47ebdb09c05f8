"""Discrete-variable record schema and sparse binary encoding.

A visit record is a set of coded integer values, one per schema variable
(the diagnosis variable may carry several codes at once). Encoding expands
each variable to a one-hot (or multi-hot) block and concatenates the blocks
into a single sparse binary vector; missing values become all-zero blocks.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping

import numpy as np

log = logging.getLogger(__name__)

TEXT_COLUMN = "chief_complaint"
DIAGNOSIS_SEP = ";"


class SchemaError(ValueError):
    """Schema config is malformed or a value violates it."""


@dataclass(frozen=True)
class VariableSpec:
    """One coded variable: `cardinality` distinct values in [0, cardinality)."""

    name: str
    cardinality: int
    multi_valued: bool = False
    allow_missing: bool = False

    def __post_init__(self) -> None:
        if self.cardinality < 1:
            raise SchemaError(f"variable {self.name!r}: cardinality must be >= 1")


@dataclass(frozen=True)
class RecordSchema:
    """Ordered variables with their block offsets in the concatenated vector."""

    variables: tuple[VariableSpec, ...]
    offsets: tuple[int, ...]
    total_dim: int

    @classmethod
    def from_variables(cls, variables: Iterable[VariableSpec]) -> "RecordSchema":
        variables = tuple(variables)
        seen = set()
        for v in variables:
            if v.name in seen:
                raise SchemaError(f"duplicate variable name {v.name!r}")
            seen.add(v.name)
        offsets = []
        total = 0
        for v in variables:
            offsets.append(total)
            total += v.cardinality
        return cls(variables=variables, offsets=tuple(offsets), total_dim=total)

    def variable(self, name: str) -> VariableSpec:
        for v in self.variables:
            if v.name == name:
                return v
        raise SchemaError(f"unknown variable {name!r}")

    def offset(self, name: str) -> int:
        for v, off in zip(self.variables, self.offsets):
            if v.name == name:
                return off
        raise SchemaError(f"unknown variable {name!r}")

    def block(self, name: str) -> slice:
        v = self.variable(name)
        off = self.offset(name)
        return slice(off, off + v.cardinality)

    @property
    def names(self) -> list[str]:
        return [v.name for v in self.variables]


@dataclass(frozen=True)
class RawRecord:
    """Coded values per variable.

    Single-valued variables map to an int or None (missing). Multi-valued
    variables map to a tuple of ints in listed order; the first entry is
    treated as the primary code downstream, while bit encoding ignores order.
    """

    values: Mapping[str, int | tuple[int, ...] | None] = field(default_factory=dict)

    def get(self, name: str):
        return self.values.get(name)

    def primary_code(self, name: str) -> int | None:
        v = self.values.get(name)
        if isinstance(v, tuple):
            return v[0] if v else None
        return v


def load_schema(source: str | Path | Mapping) -> RecordSchema:
    """Build a schema from a JSON config file (or an already-parsed mapping)."""
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8") as f:
            doc = json.load(f)
    else:
        doc = source
    try:
        entries = doc["variables"]
    except (KeyError, TypeError):
        raise SchemaError("schema config must contain a 'variables' list")
    variables = []
    for e in entries:
        variables.append(
            VariableSpec(
                name=e["name"],
                cardinality=int(e["cardinality"]),
                multi_valued=bool(e.get("multi_valued", False)),
                allow_missing=bool(e.get("allow_missing", False)),
            )
        )
    return RecordSchema.from_variables(variables)


def _check_value(var: VariableSpec, value: int) -> None:
    if not 0 <= value < var.cardinality:
        raise SchemaError(
            f"variable {var.name!r}: coded value {value} out of range [0, {var.cardinality})"
        )


def encode_record(raw: RawRecord, schema: RecordSchema) -> np.ndarray:
    """Expand a raw record to its sparse binary vector (uint8, length total_dim)."""
    bits = np.zeros(schema.total_dim, dtype=np.uint8)
    for var, off in zip(schema.variables, schema.offsets):
        value = raw.values.get(var.name)
        if value is None or (isinstance(value, tuple) and len(value) == 0):
            if not var.allow_missing:
                raise SchemaError(f"variable {var.name!r} is required but missing")
            continue
        if var.multi_valued:
            if not isinstance(value, tuple):
                value = (int(value),)
            for code in value:
                _check_value(var, code)
                bits[off + code] = 1
        else:
            if isinstance(value, tuple):
                raise SchemaError(f"variable {var.name!r} is single-valued")
            _check_value(var, value)
            bits[off + value] = 1
    return bits


def decode_bits(bits: np.ndarray, schema: RecordSchema) -> RawRecord:
    """Invert encode_record (diagnosis code order is not recoverable: codes
    come back sorted ascending)."""
    if len(bits) != schema.total_dim:
        raise SchemaError(f"bit vector length {len(bits)} != total_dim {schema.total_dim}")
    values: dict[str, int | tuple[int, ...] | None] = {}
    for var in schema.variables:
        block = np.flatnonzero(bits[schema.block(var.name)])
        if var.multi_valued:
            values[var.name] = tuple(int(i) for i in block)
        elif len(block) == 0:
            values[var.name] = None
        elif len(block) == 1:
            values[var.name] = int(block[0])
        else:
            raise SchemaError(f"variable {var.name!r}: multiple bits set in single-valued block")
    return RawRecord(values=values)


def set_bit_indices(bits: np.ndarray) -> list[int]:
    return [int(i) for i in np.flatnonzero(bits)]


def bits_from_indices(indices: Iterable[int], total_dim: int) -> np.ndarray:
    bits = np.zeros(total_dim, dtype=np.uint8)
    for i in indices:
        bits[i] = 1
    return bits


def _parse_cell(var: VariableSpec, cell: str, row_num: int):
    cell = cell.strip()
    if cell == "":
        return () if var.multi_valued else None
    if var.multi_valued:
        codes = []
        for part in cell.split(DIAGNOSIS_SEP):
            part = part.strip()
            if part == "":
                continue
            codes.append(int(part))
        for c in codes:
            _check_value(var, c)
        return tuple(codes)
    value = int(cell)
    _check_value(var, value)
    return value


def ingest_csv(path: str | Path, schema: RecordSchema) -> Iterator[tuple[RawRecord, str]]:
    """Yield (record, chief-complaint text) pairs from a CSV file.

    Header must name every schema variable plus `chief_complaint`. Empty cells
    are missing; multi-valued cells are semicolon-separated. Rows that fail
    validation are skipped with a logged diagnostic naming the row number.
    Lines starting with '#' are ignored.
    """
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(line for line in f if not line.startswith("#"))
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty CSV")
        missing = [n for n in schema.names + [TEXT_COLUMN] if n not in header]
        if missing:
            raise SchemaError(f"{path}: missing required column(s) {missing}")
        col = {name: header.index(name) for name in schema.names}
        text_col = header.index(TEXT_COLUMN)
        for row_num, row in enumerate(reader, start=2):
            try:
                values = {
                    var.name: _parse_cell(var, row[col[var.name]], row_num)
                    for var in schema.variables
                }
                raw = RawRecord(values=values)
                # surfacing required-but-missing early, same path as encode
                encode_record(raw, schema)
            except (SchemaError, ValueError, IndexError) as exc:
                log.warning("%s: row %d rejected: %s", path, row_num, exc)
                continue
            yield raw, row[text_col]


def write_csv(path: str | Path, pairs: Iterable[tuple[RawRecord, str]], schema: RecordSchema) -> int:
    """Write (record, text) pairs in the format ingest_csv reads. Returns row count."""
    n = 0
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(schema.names + [TEXT_COLUMN])
        for raw, text in pairs:
            row = []
            for var in schema.variables:
                value = raw.values.get(var.name)
                if value is None:
                    row.append("")
                elif isinstance(value, tuple):
                    row.append(DIAGNOSIS_SEP.join(str(c) for c in value))
                else:
                    row.append(str(value))
            row.append(text)
            writer.writerow(row)
            n += 1
    return n
