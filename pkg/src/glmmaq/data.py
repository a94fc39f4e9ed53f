"""Grouped datasets: in-memory model, strict CSV ingestion, bundled data.

A dataset is an ordered collection of groups; each group carries its
responses (scalar y, or (time, status) pairs for survival models), an
m_i x d fixed-effect design X and an m_i x p random-effect design V.
Groups appear in first-occurrence order of their id in the source file,
and a built dataset is immutable, so reductions over groups are
reproducible.

CSV parsing is strict: every referenced cell must parse as a float and
problems are reported with the offending row and column. The reserved
column name ``intercept`` (or ``1``) in a design column list synthesizes
a constant-one column instead of reading one from the file.
"""

from __future__ import annotations

import csv
import importlib.resources
from dataclasses import dataclass, field

import numpy as np

INTERCEPT_NAMES = ("intercept", "1")


class DataFormatError(ValueError):
    """Raised when a CSV file does not match the declared schema."""


@dataclass(frozen=True)
class Group:
    id: str
    y: np.ndarray  # (m,) scalar responses, or (m, 2) time/status pairs
    X: np.ndarray  # (m, d)
    V: np.ndarray  # (m, p)

    def __post_init__(self) -> None:
        for arr in (self.y, self.X, self.V):
            arr.setflags(write=False)
        m = self.y.shape[0]
        if m < 1:
            raise ValueError(f"group {self.id!r} has no observations")
        if self.X.shape[0] != m or self.V.shape[0] != m:
            raise ValueError(f"group {self.id!r} has mismatched design row counts")

    @property
    def size(self) -> int:
        return self.y.shape[0]

    @property
    def survival(self) -> bool:
        return self.y.ndim == 2


@dataclass(frozen=True)
class GroupedDataset:
    groups: tuple[Group, ...]
    x_names: tuple[str, ...] = ()
    v_names: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.groups:
            raise ValueError("a dataset needs at least one group")
        d = {g.X.shape[1] for g in self.groups}
        p = {g.V.shape[1] for g in self.groups}
        surv = {g.survival for g in self.groups}
        if len(d) > 1 or len(p) > 1 or len(surv) > 1:
            raise ValueError("groups disagree on column counts or response kind")
        if not self.x_names:
            object.__setattr__(self, "x_names", tuple(f"x{i}" for i in range(self.d)))
        if not self.v_names:
            object.__setattr__(self, "v_names", tuple(f"v{i}" for i in range(self.p)))

    @property
    def M(self) -> int:
        return len(self.groups)

    @property
    def n(self) -> int:
        return sum(g.size for g in self.groups)

    @property
    def sizes(self) -> np.ndarray:
        return np.array([g.size for g in self.groups])

    @property
    def m_min(self) -> int:
        return min(g.size for g in self.groups)

    @property
    def d(self) -> int:
        return self.groups[0].X.shape[1]

    @property
    def p(self) -> int:
        return self.groups[0].V.shape[1]

    @property
    def survival(self) -> bool:
        return self.groups[0].survival


def summary(dataset: GroupedDataset) -> dict:
    """Exact group-size counts, as consumed by the point-count advisor."""
    sizes = dataset.sizes
    return {
        "M": dataset.M,
        "n": dataset.n,
        "m_min": int(sizes.min()),
        "m_max": int(sizes.max()),
        "group_sizes": {g.id: g.size for g in dataset.groups},
    }


@dataclass(frozen=True)
class CsvSchema:
    """Column mapping for :func:`read_csv`.

    response_cols is one column name for scalar-response families and
    (time, status) for survival data. Design lists may use the reserved
    name ``intercept``/``1`` for a synthesized constant column; an empty
    raneff_cols defaults to a random intercept.
    """

    group_col: str
    response_cols: tuple[str, ...]
    fixed_cols: tuple[str, ...] = ()
    raneff_cols: tuple[str, ...] = field(default=("intercept",))

    def __post_init__(self) -> None:
        if len(self.response_cols) not in (1, 2):
            raise ValueError("response_cols must name one column, or (time, status)")
        if not self.raneff_cols:
            object.__setattr__(self, "raneff_cols", ("intercept",))


def _parse_cell(raw: str, row: int, col: str) -> float:
    text = raw.strip()
    if text == "":
        raise DataFormatError(f"row {row}: missing value in column {col!r}")
    try:
        return float(text)
    except ValueError:
        raise DataFormatError(f"row {row}: non-numeric value {raw!r} in column {col!r}") from None


def read_csv(path, schema: CsvSchema) -> GroupedDataset:
    """Read a header-bearing CSV into a GroupedDataset.

    Rows are grouped by ``schema.group_col`` preserving first-appearance
    order. Row numbers in error messages are 1-based and count the
    header as row 1.
    """
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: file is empty") from None
        header = [h.strip() for h in header]
        col_index: dict[str, int] = {}
        for i, h in enumerate(header):
            col_index.setdefault(h, i)
        needed = [schema.group_col, *schema.response_cols]
        needed += [c for c in schema.fixed_cols if c not in INTERCEPT_NAMES]
        needed += [c for c in schema.raneff_cols if c not in INTERCEPT_NAMES]
        for col in needed:
            if col not in col_index:
                raise DataFormatError(f"{path}: column {col!r} not found in header {header}")

        order: list[str] = []
        rows_by_group: dict[str, list[tuple[list[float], list[float], list[float]]]] = {}
        for rownum, row in enumerate(reader, start=2):
            if not row or all(cell.strip() == "" for cell in row):
                continue
            if len(row) != len(header):
                raise DataFormatError(
                    f"row {rownum}: expected {len(header)} cells, found {len(row)}"
                )

            def cell(col: str) -> float:
                return _parse_cell(row[col_index[col]], rownum, col)

            gid = row[col_index[schema.group_col]].strip()
            resp = [cell(c) for c in schema.response_cols]
            xs = [1.0 if c in INTERCEPT_NAMES else cell(c) for c in schema.fixed_cols]
            vs = [1.0 if c in INTERCEPT_NAMES else cell(c) for c in schema.raneff_cols]
            if gid not in rows_by_group:
                order.append(gid)
                rows_by_group[gid] = []
            rows_by_group[gid].append((resp, xs, vs))

    if not order:
        raise DataFormatError(f"{path}: no data rows")
    groups = []
    for gid in order:
        rows = rows_by_group[gid]
        resp = np.array([r[0] for r in rows])
        y = resp[:, 0] if len(schema.response_cols) == 1 else resp
        X = np.array([r[1] for r in rows]).reshape(len(rows), len(schema.fixed_cols))
        V = np.array([r[2] for r in rows]).reshape(len(rows), len(schema.raneff_cols))
        groups.append(Group(id=gid, y=y, X=X, V=V))
    return GroupedDataset(
        groups=tuple(groups),
        x_names=tuple(schema.fixed_cols),
        v_names=tuple(schema.raneff_cols),
    )


def write_csv(dataset: GroupedDataset, path) -> CsvSchema:
    """Write a dataset back out; returns the schema that reads it back.

    Numeric cells use 17 significant digits, so float64 values round
    trip exactly.
    """
    response_cols = ("time", "status") if dataset.survival else ("y",)
    x_cols = tuple(dataset.x_names)
    v_cols = tuple(dataset.v_names)
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["group", *response_cols, *x_cols, *v_cols])
        for g in dataset.groups:
            y2 = g.y.reshape(g.size, -1)
            for i in range(g.size):
                cells = [g.id]
                cells += [f"{v:.17g}" for v in y2[i]]
                cells += [f"{v:.17g}" for v in g.X[i]]
                cells += [f"{v:.17g}" for v in g.V[i]]
                writer.writerow(cells)
    return CsvSchema(
        group_col="group",
        response_cols=response_cols,
        fixed_cols=x_cols,
        raneff_cols=v_cols,
    )


def load_kidney() -> GroupedDataset:
    """The bundled two-kidney infection-recurrence dataset.

    38 patients, two recurrence times each, with age, sex (1 = male,
    2 = female) and three disease-type indicator columns (gn, an, pkd;
    the omitted category is 'other').
    """
    resource = importlib.resources.files("glmmaq.datasets").joinpath("kidney.csv")
    schema = CsvSchema(
        group_col="patient",
        response_cols=("time", "status"),
        fixed_cols=("age", "sex", "gn", "an", "pkd"),
    )
    with importlib.resources.as_file(resource) as path:
        return read_csv(path, schema)


# --------------------------------------------------------------------------
# flat, group-contiguous layout used by the vectorized evaluators
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PackedData:
    """Concatenated per-observation arrays with group offsets."""

    y: np.ndarray  # (n,) or (n, 2)
    X: np.ndarray  # (n, d)
    V: np.ndarray  # (n, p)
    ptr: np.ndarray  # (M + 1,) group slice offsets
    group_index: np.ndarray  # (n,) group of each row
    sizes: np.ndarray  # (M,)


def pack(dataset: GroupedDataset) -> PackedData:
    sizes = dataset.sizes
    ptr = np.concatenate([[0], np.cumsum(sizes)])
    return PackedData(
        y=np.concatenate([g.y for g in dataset.groups]),
        X=np.concatenate([g.X for g in dataset.groups]),
        V=np.concatenate([g.V for g in dataset.groups]),
        ptr=ptr,
        group_index=np.repeat(np.arange(dataset.M), sizes),
        sizes=sizes,
    )
