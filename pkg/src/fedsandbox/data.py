"""Dataset ingestion: schema files, CSV cleaning, balanced splits and sharding.

Tables are immutable numeric matrices. Categorical values are stored as the
index of their label in the column's category list, so every column of
``Table.rows`` is float64.
"""

from __future__ import annotations

import csv
import gzip
import io
import logging
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigurationError, InsufficientDataError, ParseError, SchemaError

log = logging.getLogger(__name__)

MISSING_TOKENS = frozenset({"", "?"})
DATA_DIR_ENV = "FEDSANDBOX_DATA_DIR"
DATASETS = ("heart", "framingham", "adult", "brfss")


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    kind: str
    bounds: tuple[float, float] | None = None
    categories: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.kind == "numeric":
            if self.bounds is None or not self.bounds[0] < self.bounds[1]:
                raise SchemaError(f"numeric column {self.name!r} needs bounds lo < hi")
        elif self.kind == "categorical":
            if self.categories is None or len(self.categories) < 2:
                raise SchemaError(f"categorical column {self.name!r} needs >= 2 categories")
            if len(set(self.categories)) != len(self.categories):
                raise SchemaError(f"categorical column {self.name!r} has repeated labels")
        else:
            raise SchemaError(f"unknown column kind {self.kind!r}")

    @property
    def numeric(self) -> bool:
        return self.kind == "numeric"

    @property
    def span(self) -> float:
        lo, hi = self.bounds
        return hi - lo

    def parse(self, raw: str) -> float:
        if self.numeric:
            lo, hi = self.bounds
            return min(max(float(raw), lo), hi)
        try:
            return float(self.categories.index(raw))
        except ValueError:
            pass
        # "1.0" matches label "1" in exports that write integers as floats
        try:
            value = float(raw)
            for i, label in enumerate(self.categories):
                if float(label) == value:
                    return float(i)
        except ValueError:
            pass
        raise SchemaError(f"unknown category {raw!r} for column {self.name!r}")


@dataclass(frozen=True)
class Schema:
    name: str
    columns: tuple[ColumnSpec, ...]
    target: str
    file: str = ""
    select: str = "auto"
    delta: float = 1e-5
    missing: dict[str, frozenset[str]] = field(default_factory=dict)
    subsample: int | None = None

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate column names in schema")
        if self.target not in names:
            raise SchemaError(f"target {self.target!r} not among columns")
        tgt = self.column(self.target)
        if tgt.kind != "categorical" or len(tgt.categories) != 2:
            raise SchemaError("target must be categorical with exactly 2 classes")
        if self.select != "auto" and not self.column(self.select).numeric:
            raise SchemaError(f"selected column {self.select!r} must be numeric")

    def column(self, name: str) -> ColumnSpec:
        for c in self.columns:
            if c.name == name:
                return c
        raise SchemaError(f"no column {name!r} in schema {self.name!r}")

    def missing_tokens(self, name: str) -> frozenset[str]:
        return MISSING_TOKENS | self.missing.get("*", frozenset()) | self.missing.get(name, frozenset())


def _split_labels(value: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in value.split("|"))


def parse_schema(text: str) -> Schema:
    """Parse the line-oriented ``key = value`` schema format.

    Keys are either plain settings (``name``, ``file``, ``target``, ``select``,
    ``delta``, ``subsample``) or ``<kind> <column>`` where kind is
    ``numeric`` (value ``lo hi``), ``categorical`` (``a | b | ...``) or
    ``missing`` (extra missing-value tokens; column ``*`` applies to all).
    """
    settings: dict[str, str] = {}
    columns: list[ColumnSpec] = []
    missing: dict[str, set[str]] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ParseError("expected 'key = value'", lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        parts = key.split()
        if len(parts) == 1:
            settings[key] = value
        elif len(parts) == 2 and parts[0] == "numeric":
            try:
                lo, hi = (float(v) for v in value.split())
            except ValueError:
                raise ParseError(f"numeric bounds must be 'lo hi', got {value!r}", lineno) from None
            columns.append(ColumnSpec(parts[1], "numeric", bounds=(lo, hi)))
        elif len(parts) == 2 and parts[0] == "categorical":
            columns.append(ColumnSpec(parts[1], "categorical", categories=_split_labels(value)))
        elif len(parts) == 2 and parts[0] == "missing":
            missing.setdefault(parts[1], set()).update(_split_labels(value))
        else:
            raise ParseError(f"unrecognised key {key!r}", lineno)
    for required in ("name", "target"):
        if required not in settings:
            raise SchemaError(f"schema lacks {required!r}")
    return Schema(
        name=settings["name"],
        columns=tuple(columns),
        target=settings["target"],
        file=settings.get("file", ""),
        select=settings.get("select", "auto"),
        delta=float(settings.get("delta", 1e-5)),
        missing={k: frozenset(v) for k, v in missing.items()},
        subsample=int(settings["subsample"]) if "subsample" in settings else None,
    )


@dataclass(frozen=True)
class Table:
    columns: tuple[ColumnSpec, ...]
    rows: np.ndarray
    target: str
    raw_count: int | None = field(default=None, compare=False)

    def __post_init__(self):
        rows = np.array(self.rows, dtype=float)
        if rows.ndim != 2 or rows.shape[1] != len(self.columns):
            raise SchemaError("row matrix does not match column list")
        rows.flags.writeable = False
        object.__setattr__(self, "rows", rows)

    def __len__(self) -> int:
        return self.rows.shape[0]

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    def index(self, name: str) -> int:
        for i, c in enumerate(self.columns):
            if c.name == name:
                return i
        raise SchemaError(f"no column {name!r}")

    def spec(self, name: str) -> ColumnSpec:
        return self.columns[self.index(name)]

    def column(self, name: str) -> np.ndarray:
        return self.rows[:, self.index(name)]

    @property
    def labels(self) -> np.ndarray:
        """Target as an int array of class indices 0/1."""
        return self.column(self.target).astype(int)

    def class_counts(self) -> tuple[int, int]:
        y = self.labels
        return int(np.sum(y == 0)), int(np.sum(y == 1))

    def take(self, idx: Sequence[int] | np.ndarray) -> Table:
        return Table(self.columns, self.rows[np.asarray(idx, dtype=int)], self.target)


def _open_text(path: Path) -> io.TextIOBase:
    if path.suffix == ".gz":
        return io.TextIOWrapper(gzip.open(path, "rb"), encoding="utf-8", newline="")
    return open(path, encoding="utf-8", newline="")


def load_csv(
    path: str | os.PathLike,
    schema: Schema,
    subsample: int | None = None,
    seed: int = 0,
) -> Table:
    """Read a CSV into a cleaned Table.

    Rows with a missing token in any schema column are dropped, numeric values
    are clamped to their bounds and exact duplicate rows (after clamping) are
    dropped, keeping the first occurrence. If ``subsample`` is set and smaller
    than the cleaned row count, that many rows are drawn without replacement.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    with _open_text(path) as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError("empty file", 1) from None
        wanted = {c.name for c in schema.columns}
        if set(header) != wanted or len(header) != len(wanted):
            extra = sorted(set(header) - wanted)
            absent = sorted(wanted - set(header))
            raise SchemaError(f"header mismatch: unexpected {extra}, missing {absent}")
        positions = [header.index(c.name) for c in schema.columns]
        tokens = [schema.missing_tokens(c.name) for c in schema.columns]
        parsed: list[list[float]] = []
        raw_count = 0
        for record in reader:
            lineno = reader.line_num
            if not record or (len(record) == 1 and not record[0].strip()):
                continue
            raw_count += 1
            if len(record) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(record)}", lineno)
            values = [record[p].strip() for p in positions]
            if any(v in tok for v, tok in zip(values, tokens)):
                continue
            row = []
            for spec, v in zip(schema.columns, values):
                try:
                    row.append(spec.parse(v))
                except ValueError:
                    raise ParseError(f"column {spec.name!r}: not a number: {v!r}", lineno) from None
                except SchemaError as exc:
                    raise SchemaError(f"line {lineno}: {exc}") from None
            parsed.append(row)
    rows = np.array(parsed, dtype=float).reshape(-1, len(schema.columns))
    if len(rows):
        _, first = np.unique(rows, axis=0, return_index=True)
        rows = rows[np.sort(first)]
    if subsample is not None and subsample < len(rows):
        pick = np.random.default_rng(seed).choice(len(rows), size=subsample, replace=False)
        rows = rows[np.sort(pick)]
    log.debug("%s: %d raw rows, %d after cleaning", path.name, raw_count, len(rows))
    return Table(schema.columns, rows, schema.target, raw_count=raw_count)


def _bundled(name: str) -> Path:
    return Path(str(resources.files("fedsandbox") / "datasets" / name))


def data_dir() -> Path | None:
    value = os.environ.get(DATA_DIR_ENV)
    return Path(value) if value else None


def find_file(name: str) -> Path:
    """Locate a dataset or schema file: ``$FEDSANDBOX_DATA_DIR`` first, then bundled data."""
    candidates = []
    if data_dir() is not None:
        candidates.append(data_dir() / name)
    candidates.append(_bundled(name))
    for c in candidates:
        if c.exists():
            return c
    where = ", ".join(str(c.parent) for c in candidates)
    raise FileNotFoundError(f"{name} not found (looked in {where}); set {DATA_DIR_ENV}")


def load_schema(dataset: str) -> Schema:
    return parse_schema(find_file(f"{dataset}.schema").read_text())


def load_dataset(dataset: str, subsample: int | None = None, seed: int = 0) -> tuple[Table, Schema]:
    schema = load_schema(dataset)
    if subsample is None:
        subsample = schema.subsample
    return load_csv(find_file(schema.file), schema, subsample=subsample, seed=seed), schema


@dataclass(frozen=True)
class SplitSpec:
    train: Table
    test: Table
    seed: int


MIN_CLASS_ROWS = 10


def balanced_split(t: Table, seed: int) -> SplitSpec:
    """Balanced train/test split with test:train = 1:5 relative to the minority class.

    Each class contributes ``round(m / 5)`` test rows and ``m - round(m / 5)``
    train rows, where ``m`` is the minority class count. Surplus majority rows
    are discarded.
    """
    y = t.labels
    counts = t.class_counts()
    if min(counts) < MIN_CLASS_ROWS:
        raise InsufficientDataError(f"class counts {counts}: need >= {MIN_CLASS_ROWS} rows per class")
    m = min(counts)
    n_test = int(round(m / 5))
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for cls in (0, 1):
        idx = rng.permutation(np.flatnonzero(y == cls))[:m]
        test_idx.append(idx[:n_test])
        train_idx.append(idx[n_test:])
    return SplitSpec(
        train=t.take(np.sort(np.concatenate(train_idx))),
        test=t.take(np.sort(np.concatenate(test_idx))),
        seed=seed,
    )


@dataclass(frozen=True)
class Shards:
    node_tables: tuple[Table, ...]
    origin: Table

    def __len__(self) -> int:
        return len(self.node_tables)

    def __iter__(self):
        return iter(self.node_tables)

    @property
    def sizes(self) -> list[int]:
        return [len(s) for s in self.node_tables]


def shard(t: Table, k: int, seed: int) -> Shards:
    """Deal rows at random into ``k`` shards whose sizes differ by at most one."""
    if not 1 <= k <= len(t):
        raise ConfigurationError(f"cannot split {len(t)} rows over {k} nodes")
    if k == 1:
        return Shards((t,), t)
    perm = np.random.default_rng(seed).permutation(len(t))
    parts = np.array_split(perm, k)
    return Shards(tuple(t.take(np.sort(p)) for p in parts), t)


def rank_features(t: Table) -> list[tuple[str, float]]:
    """Numeric columns ranked by |Cohen's d| between the two target classes.

    A column with zero overall variance scores 0. A column that varies only
    between classes (zero pooled within-class spread) scores ``inf``.
    """
    numeric = [c for c in t.columns if c.numeric and c.name != t.target]
    if not numeric:
        raise SchemaError("table has no numeric columns")
    y = t.labels
    scores = []
    for c in numeric:
        x = t.column(c.name)
        a, b = x[y == 0], x[y == 1]
        if len(a) < 2 or len(b) < 2 or np.var(x) == 0:
            scores.append((c.name, 0.0))
            continue
        pooled = ((len(a) - 1) * a.var(ddof=1) + (len(b) - 1) * b.var(ddof=1)) / (len(a) + len(b) - 2)
        diff = abs(a.mean() - b.mean())
        scores.append((c.name, float(diff / np.sqrt(pooled)) if pooled > 0 else float("inf")))
    # stable sort keeps column order among ties
    return sorted(scores, key=lambda s: -s[1])


def selected_column(schema: Schema, t: Table) -> str:
    if schema.select != "auto":
        return schema.select
    return rank_features(t)[0][0]


def encode(t: Table) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """Design matrix for learning.

    Numeric columns are min-max scaled with their schema bounds; categorical
    columns are one-hot encoded with the first category dropped. The target is
    returned separately as 0/1.
    """
    blocks, names = [], []
    for i, c in enumerate(t.columns):
        if c.name == t.target:
            continue
        x = t.rows[:, i]
        if c.numeric:
            lo, hi = c.bounds
            blocks.append(((x - lo) / (hi - lo))[:, None])
            names.append(c.name)
        else:
            codes = x.astype(int)
            for j, label in enumerate(c.categories[1:], start=1):
                blocks.append((codes == j).astype(float)[:, None])
                names.append(f"{c.name}={label}")
    X = np.hstack(blocks) if blocks else np.empty((len(t), 0))
    return X, t.labels.astype(float), names


def table_from_records(columns: Iterable[ColumnSpec], records: Sequence[Sequence[float]], target: str) -> Table:
    """Build a Table directly from already-coded values (handy for tests and synthetic data)."""
    columns = tuple(columns)
    return Table(columns, np.asarray(records, dtype=float).reshape(-1, len(columns)), target)
