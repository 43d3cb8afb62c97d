"""Tabular ingestion and cleaning.

A :class:`FeatureTable` keeps missingness in a boolean mask; the value at a
missing cell is ``nan`` and nothing downstream is allowed to read it.
Every transform returns a new table.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

NUMERIC, BINARY, CATEGORICAL = "numeric", "binary", "categorical"
KINDS = (NUMERIC, BINARY, CATEGORICAL)


class DataError(ValueError):
    """Malformed input data or a table that violates its invariants."""


@dataclass(frozen=True)
class FeatureTable:
    column_names: list[str]
    column_kinds: list[str]
    values: np.ndarray
    missing_mask: np.ndarray
    outcome: np.ndarray | None = None
    # category labels for categorical columns; cell value = index into the list
    categories: dict[str, list[str]] = field(default_factory=dict)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            values = values.reshape(len(values), -1) if values.size else np.zeros((0, len(self.column_names)))
        mask = np.asarray(self.missing_mask, dtype=bool).reshape(values.shape)
        values = np.where(mask, np.nan, values)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "missing_mask", mask)
        if self.outcome is not None:
            object.__setattr__(self, "outcome", np.asarray(self.outcome, dtype=int))
        self.validate()

    def validate(self) -> None:
        names = self.column_names
        if len(set(names)) != len(names):
            dup = sorted({n for n in names if names.count(n) > 1})
            raise DataError(f"duplicate column: {', '.join(dup)}")
        if len(self.column_kinds) != len(names) or self.values.shape[1] != len(names):
            raise DataError("column names, kinds and value width disagree")
        for kind in self.column_kinds:
            if kind not in KINDS:
                raise DataError(f"unknown column kind {kind!r}")
        for j, kind in enumerate(self.column_kinds):
            if kind == BINARY:
                col = self.values[~self.missing_mask[:, j], j]
                if not np.all((col == 0) | (col == 1)):
                    raise DataError(f"binary column {names[j]!r} has values outside {{0,1}}")
        if self.outcome is not None:
            if self.outcome.shape != (self.n_rows,):
                raise DataError("outcome length does not match row count")
            if not np.all((self.outcome == 0) | (self.outcome == 1)):
                raise DataError("outcome must be binary")

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_cols(self) -> int:
        return self.values.shape[1]

    def index(self, name: str) -> int:
        try:
            return self.column_names.index(name)
        except ValueError:
            raise DataError(f"column not found: {name!r}") from None

    def kind(self, name: str) -> str:
        return self.column_kinds[self.index(name)]

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.index(name)]

    def select_columns(self, names) -> "FeatureTable":
        idx = [self.index(n) for n in names]
        return replace(
            self,
            column_names=[self.column_names[i] for i in idx],
            column_kinds=[self.column_kinds[i] for i in idx],
            values=self.values[:, idx],
            missing_mask=self.missing_mask[:, idx],
            categories={n: c for n, c in self.categories.items() if n in names},
        )

    def drop_columns(self, names) -> "FeatureTable":
        names = set(names)
        return self.select_columns([n for n in self.column_names if n not in names])

    def take_rows(self, rows) -> "FeatureTable":
        rows = np.asarray(rows, dtype=int)
        return replace(
            self,
            values=self.values[rows],
            missing_mask=self.missing_mask[rows],
            outcome=None if self.outcome is None else self.outcome[rows],
        )

    def matrix(self) -> np.ndarray:
        """Values as a dense float matrix; refuses tables with missing cells."""
        if self.missing_mask.any():
            raise DataError("table still has missing cells")
        return self.values.copy()


@dataclass(frozen=True)
class SeverityRule:
    died_column: str
    icu_column: str
    ventilation_column: str

    @property
    def columns(self):
        return [self.died_column, self.icu_column, self.ventilation_column]


@dataclass(frozen=True)
class Split:
    train_indices: list[int]
    test_indices: list[int]
    seed: int
    train_fraction: float

    def to_dict(self):
        return {"seed": self.seed, "train_fraction": self.train_fraction,
                "train_indices": list(self.train_indices), "test_indices": list(self.test_indices)}

    @classmethod
    def from_dict(cls, d):
        return cls(list(d["train_indices"]), list(d["test_indices"]), int(d["seed"]), float(d["train_fraction"]))


# ---------------------------------------------------------------- io

def read_schema(path) -> dict[str, str]:
    """Parse a schema file of ``name,kind`` lines."""
    schema = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataError(f"cannot read schema {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        name, sep, kind = line.rpartition(",")
        if not sep:
            raise DataError(f"schema line {lineno}: expected 'name,kind'")
        name, kind = name.strip(), kind.strip()
        if kind not in KINDS:
            raise DataError(f"schema line {lineno}: unknown kind {kind!r}")
        if name in schema:
            raise DataError(f"duplicate column: {name}")
        schema[name] = kind
    return schema


def write_schema(table: FeatureTable, path, outcome_column: str | None = None) -> None:
    lines = [f"{n},{k}" for n, k in zip(table.column_names, table.column_kinds)]
    if outcome_column is not None and table.outcome is not None:
        lines.append(f"{outcome_column},{BINARY}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_table(path, schema: dict[str, str], outcome_column: str | None = None) -> FeatureTable:
    """Read a comma-separated file with a header row; empty cells are missing.

    ``schema`` maps every header name to a kind.  If ``outcome_column`` is
    given it is pulled out of the features into ``FeatureTable.outcome``.
    """
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise DataError(f"{path}: missing header row")
    header = [h.strip() for h in rows[0]]
    if len(set(header)) != len(header):
        dup = sorted({h for h in header if header.count(h) > 1})
        raise DataError(f"duplicate column: {', '.join(dup)}")
    missing_in_schema = [h for h in header if h not in schema]
    extra_in_schema = [h for h in schema if h not in header]
    if missing_in_schema or extra_in_schema:
        raise DataError(f"header/schema mismatch: not in schema {missing_in_schema}, "
                        f"not in header {extra_in_schema}")
    if outcome_column is not None and outcome_column not in header:
        raise DataError(f"outcome column {outcome_column!r} not in header")

    body = rows[1:]
    n, d = len(body), len(header)
    values = np.full((n, d), np.nan)
    mask = np.zeros((n, d), dtype=bool)
    categories: dict[str, list[str]] = {}
    cat_index: dict[str, dict[str, int]] = {}
    for i, row in enumerate(body):
        if not row and d == 1:
            row = [""]   # csv yields [] for a blank line: one missing cell
        if len(row) != d:
            raise DataError(f"row {i + 1}: expected {d} cells, found {len(row)}")
        for j, cell in enumerate(row):
            cell = cell.strip()
            name = header[j]
            if cell == "":
                mask[i, j] = True
                continue
            if schema[name] == CATEGORICAL:
                lookup = cat_index.setdefault(name, {})
                if cell not in lookup:
                    lookup[cell] = len(lookup)
                    categories.setdefault(name, []).append(cell)
                values[i, j] = lookup[cell]
            else:
                try:
                    values[i, j] = float(cell)
                except ValueError:
                    raise DataError(f"non-numeric cell {cell!r} at row {i + 1}, column {name!r}") from None
                if not math.isfinite(values[i, j]):
                    raise DataError(f"non-finite cell {cell!r} at row {i + 1}, column {name!r}")

    outcome = None
    if outcome_column is not None:
        j = header.index(outcome_column)
        if mask[:, j].any():
            raise DataError(f"outcome column {outcome_column!r} has missing values")
        outcome = values[:, j].astype(int)
        keep = [k for k in range(d) if k != j]
        header = [header[k] for k in keep]
        values, mask = values[:, keep], mask[:, keep]
    return FeatureTable(header, [schema[h] for h in header], values, mask, outcome, categories)


def _format_cell(v: float) -> str:
    if float(v).is_integer():
        return str(int(v))
    return repr(float(v))


def write_table(table: FeatureTable, path, outcome_column: str | None = None) -> None:
    """Write ``table`` in the same CSV dialect :func:`load_table` reads."""
    header = list(table.column_names)
    with_outcome = outcome_column is not None and table.outcome is not None
    if with_outcome:
        header.append(outcome_column)
    lines = [",".join(header)]
    for i in range(table.n_rows):
        cells = []
        for j, name in enumerate(table.column_names):
            if table.missing_mask[i, j]:
                cells.append("")
            elif table.column_kinds[j] == CATEGORICAL:
                cells.append(table.categories[name][int(table.values[i, j])])
            else:
                cells.append(_format_cell(table.values[i, j]))
        if with_outcome:
            cells.append(str(int(table.outcome[i])))
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------- cleaning

def merge_columns(table: FeatureTable, sources: list[str], target: str, sep: str = "_") -> FeatureTable:
    """Concatenate the labels of several columns into one categorical column."""
    idx = [table.index(s) for s in sources]
    n = table.n_rows
    labels, miss = [], np.zeros(n, dtype=bool)
    for i in range(n):
        if table.missing_mask[i, idx].any():
            miss[i] = True
            labels.append(None)
            continue
        parts = []
        for j in idx:
            name = table.column_names[j]
            v = table.values[i, j]
            parts.append(table.categories[name][int(v)] if table.column_kinds[j] == CATEGORICAL else _format_cell(v))
        labels.append(sep.join(parts))
    cats = []
    for lab in labels:
        if lab is not None and lab not in cats:
            cats.append(lab)
    col = np.array([np.nan if lab is None else cats.index(lab) for lab in labels], dtype=float)
    out = table.drop_columns(sources)
    if target in out.column_names:
        raise DataError(f"duplicate column: {target}")
    return replace(
        out,
        column_names=out.column_names + [target],
        column_kinds=out.column_kinds + [CATEGORICAL],
        values=np.column_stack([out.values, col]) if n else np.zeros((0, out.n_cols + 1)),
        missing_mask=np.column_stack([out.missing_mask, miss]) if n else np.zeros((0, out.n_cols + 1), bool),
        categories={**out.categories, target: cats},
    )


def keep_last_by_key(table: FeatureTable, key: str) -> FeatureTable:
    """Keep the last row (file order) for each key value; rows lacking the key pass through."""
    j = table.index(key)
    last = {}
    for i in range(table.n_rows):
        if not table.missing_mask[i, j]:
            last[table.values[i, j]] = i
    keep = [i for i in range(table.n_rows)
            if table.missing_mask[i, j] or last[table.values[i, j]] == i]
    return table.take_rows(keep)


def one_hot_encode(table: FeatureTable, columns: list[str]) -> FeatureTable:
    """Replace each categorical column by ``<col>=<category>`` indicator columns.

    Indicators are appended where the source column stood, in order of first
    appearance of each category.  Missing source cells stay missing in every
    derived indicator.
    """
    for c in columns:
        if table.kind(c) != CATEGORICAL:
            raise DataError(f"column {c!r} is not categorical")
    targets = set(columns)
    names, kinds, cols, masks = [], [], [], []
    categories = {k: v for k, v in table.categories.items() if k not in targets}
    for j, name in enumerate(table.column_names):
        if name not in targets:
            names.append(name)
            kinds.append(table.column_kinds[j])
            cols.append(table.values[:, j])
            masks.append(table.missing_mask[:, j])
            continue
        miss = table.missing_mask[:, j]
        present = table.values[~miss, j].astype(int)
        labels = table.categories.get(name, [])
        for code in sorted(set(present.tolist())):
            new = f"{name}={labels[code]}"
            names.append(new)
            kinds.append(BINARY)
            cols.append((table.values[:, j] == code).astype(float))
            masks.append(miss.copy())
    n = table.n_rows
    values = np.column_stack(cols) if cols else np.zeros((n, 0))
    mask = np.column_stack(masks) if masks else np.zeros((n, 0), dtype=bool)
    return FeatureTable(names, kinds, values, mask, table.outcome, categories)


def derive_severity(table: FeatureTable, rule: SeverityRule) -> FeatureTable:
    """Outcome = OR of the rule's three binary columns, which are then removed."""
    cols = []
    for name in rule.columns:
        j = table.index(name)
        if table.column_kinds[j] != BINARY:
            raise DataError(f"severity column {name!r} must be binary")
        if table.missing_mask[:, j].any():
            rows = np.flatnonzero(table.missing_mask[:, j])
            raise DataError(f"severity column {name!r} has missing values at rows {rows.tolist()}")
        cols.append(table.values[:, j].astype(int))
    outcome = np.zeros(table.n_rows, dtype=int)
    for c in cols:
        outcome |= c
    return replace(table.drop_columns(rule.columns), outcome=outcome)


def normalize_unit_range(table: FeatureTable) -> tuple[FeatureTable, dict[str, dict[str, float]]]:
    """Min-max scale numeric columns into [0, 1].

    Returns the new table and a ``{column: {"min", "max"}}`` record that
    :func:`apply_normalization` can replay.  Constant columns map to zero
    with a warning.
    """
    record = {}
    for j, name in enumerate(table.column_names):
        if table.column_kinds[j] != NUMERIC:
            continue
        col = table.values[~table.missing_mask[:, j], j]
        if col.size == 0:
            lo = hi = 0.0
        else:
            lo, hi = float(col.min()), float(col.max())
        if lo == hi:
            warnings.warn(f"column {name!r} is constant; normalized to zeros", stacklevel=2)
        record[name] = {"min": lo, "max": hi}
    return apply_normalization(table, record), record


def apply_normalization(table: FeatureTable, record: dict[str, dict[str, float]]) -> FeatureTable:
    values = table.values.copy()
    for name, mm in record.items():
        j = table.index(name)
        lo, hi = mm["min"], mm["max"]
        if hi == lo:
            values[:, j] = 0.0
        else:
            values[:, j] = (values[:, j] - lo) / (hi - lo)
    return replace(table, values=values)


def drop_rows_with_missing(table: FeatureTable) -> FeatureTable:
    keep = np.flatnonzero(~table.missing_mask.any(axis=1))
    if keep.size == 0:
        raise DataError("empty table: every row has a missing cell")
    return table.take_rows(keep)


def split_train_test(table: FeatureTable, fraction: float, seed: int) -> Split:
    """Seeded shuffle, then cut at ``round(fraction * n)``; no stratification."""
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must lie in (0, 1), got {fraction}")
    if table.outcome is None:
        raise DataError("split requires a table with an outcome")
    n = table.n_rows
    if n < 2:
        raise DataError("need at least 2 rows to split")
    order = np.random.default_rng(seed).permutation(n)
    cut = int(round(fraction * n))
    if cut == 0 or cut == n:
        raise DataError(f"split of {n} rows at fraction {fraction} leaves one side empty")
    return Split(sorted(order[:cut].tolist()), sorted(order[cut:].tolist()), int(seed), float(fraction))


def save_normalization(record, path) -> None:
    Path(path).write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
