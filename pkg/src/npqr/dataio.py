"""Tabular input and design-matrix assembly.

Rows of the design are ``(Z(w_i)', v_i')'``: the series terms for the treatment
first, then an optional intercept, then the expanded controls.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy import linalg

from npqr.basis import BasisSpec, eval_basis
from npqr.errors import ConfigError, DataError, RankDeficiencyError

PIVOT_TOL = 1e-10


@dataclass(frozen=True)
class Factor:
    """A factor column: observed labels and the ordered level set."""

    values: tuple[str, ...]
    levels: tuple[str, ...]

    def codes(self) -> np.ndarray:
        index = {lv: k for k, lv in enumerate(self.levels)}
        return np.array([index[v] for v in self.values], dtype=np.intp)


@dataclass(frozen=True)
class ModelSpec:
    """Which columns play the roles of outcome, treatment and controls.

    ``control_terms`` is an ordered sequence of ``(column, kind)`` with kind
    ``"numeric"`` or ``"factor"``. ``intercept=None`` means automatic: an
    intercept is added only when the series basis does not already span the
    constants. ``factor_levels`` optionally declares the level order of factor
    columns; the first declared level is the reference level.
    """

    outcome_name: str
    treatment_name: str
    control_terms: tuple[tuple[str, str], ...] = ()
    intercept: bool | None = None
    factor_levels: Mapping[str, tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self):
        terms = tuple((str(c), str(k)) for c, k in self.control_terms)
        object.__setattr__(self, "control_terms", terms)
        object.__setattr__(self, "factor_levels",
                           {str(k): tuple(str(v) for v in lv) for k, lv in dict(self.factor_levels).items()})
        names = [self.outcome_name, self.treatment_name] + [c for c, _ in terms]
        if len(set(names)) != len(names):
            raise ConfigError(f"column names in the model must be unique: {names}", module="dataio")
        for col, kind in terms:
            if kind not in ("numeric", "factor"):
                raise ConfigError(f"control {col!r} has unknown kind {kind!r}", module="dataio")

    @property
    def columns(self) -> list[str]:
        return [self.outcome_name, self.treatment_name] + [c for c, _ in self.control_terms]


@dataclass(frozen=True)
class Dataset:
    outcome: np.ndarray
    treatment: np.ndarray
    controls: Mapping[str, np.ndarray | Factor]

    @property
    def n(self) -> int:
        return int(self.outcome.size)

    def take(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        ctrl = {}
        for name, col in self.controls.items():
            if isinstance(col, Factor):
                ctrl[name] = Factor(tuple(col.values[i] for i in rows), col.levels)
            else:
                ctrl[name] = col[rows]
        return Dataset(self.outcome[rows], self.treatment[rows], ctrl)


@dataclass(frozen=True)
class ControlBlock:
    name: str
    kind: str
    start: int
    stop: int
    levels: tuple[str, ...] = ()


@dataclass(frozen=True)
class DesignMatrix:
    """Regressor matrix; columns ``[0, split)`` are the series terms."""

    values: np.ndarray
    column_names: tuple[str, ...]
    split: int
    intercept: bool = False
    blocks: tuple[ControlBlock, ...] = ()

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def m(self) -> int:
        return self.values.shape[1]


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    a.setflags(write=False)
    return a


def _parse_number(text: str, row: int, col: str) -> float:
    try:
        val = float(text)
    except ValueError:
        raise DataError(f"cannot parse {text!r} as a number at row {row}, column {col!r}") from None
    if not math.isfinite(val):
        raise DataError(f"non-finite value {text!r} at row {row}, column {col!r}")
    return val


def load_csv(path, model_spec: ModelSpec) -> Dataset:
    """Read the columns named in ``model_spec`` from a CSV file with a header."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"data file {str(path)!r} does not exist")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"data file {str(path)!r} is empty") from None
        rows = [r for r in reader if r]
    for col in model_spec.columns:
        if col not in header:
            raise DataError(f"column {col!r} not found in {str(path)!r}")
    if not rows:
        raise DataError(f"data file {str(path)!r} has a header but no rows")
    pos = {name: header.index(name) for name in model_spec.columns}
    raw = {name: [] for name in model_spec.columns}
    for lineno, r in enumerate(rows, start=2):
        if len(r) != len(header):
            raise DataError(f"row {lineno} has {len(r)} fields, expected {len(header)}")
        for name, k in pos.items():
            raw[name].append(r[k])

    def numeric(name):
        return np.array([_parse_number(v, i + 2, name) for i, v in enumerate(raw[name])])

    controls = {}
    for name, kind in model_spec.control_terms:
        if kind == "numeric":
            controls[name] = _frozen(numeric(name))
        else:
            for i, v in enumerate(raw[name]):
                if v == "" or v == "NA":
                    raise DataError(f"missing factor value at row {i + 2}, column {name!r}")
            controls[name] = Factor(tuple(raw[name]),
                                    model_spec.factor_levels.get(name) or tuple(sorted(set(raw[name]))))
    ds = Dataset(_frozen(numeric(model_spec.outcome_name)), _frozen(numeric(model_spec.treatment_name)),
                 controls)
    validate_dataset(ds)
    return ds


def validate_dataset(ds: Dataset) -> None:
    if ds.n < 2:
        raise DataError("need at least 2 observations")
    if ds.treatment.size != ds.n:
        raise DataError("treatment and outcome lengths differ")
    if np.unique(ds.treatment).size < 2:
        raise DataError("treatment must take at least 2 distinct values")
    for name, col in ds.controls.items():
        if isinstance(col, Factor):
            if len(col.values) != ds.n:
                raise DataError(f"control {name!r} has the wrong length")
            unknown = set(col.values) - set(col.levels)
            if unknown:
                raise DataError(f"factor {name!r} has values outside its level set: {sorted(unknown)}")
        elif np.asarray(col).size != ds.n:
            raise DataError(f"control {name!r} has the wrong length")


def make_dataset(outcome, treatment, controls: Mapping | None = None,
                 factor_levels: Mapping[str, Sequence[str]] | None = None) -> Dataset:
    """Build a validated Dataset from in-memory arrays.

    Control values that are strings become factors.
    """
    factor_levels = dict(factor_levels or {})
    ctrl = {}
    for name, col in (controls or {}).items():
        if isinstance(col, Factor):
            ctrl[name] = col
            continue
        arr = np.asarray(col)
        if arr.dtype.kind in "USO":
            vals = tuple(str(v) for v in arr)
            ctrl[name] = Factor(vals, tuple(factor_levels.get(name) or sorted(set(vals))))
        else:
            ctrl[name] = _frozen(arr)
    ds = Dataset(_frozen(np.asarray(outcome, dtype=float)), _frozen(np.asarray(treatment, dtype=float)), ctrl)
    validate_dataset(ds)
    return ds


def write_csv(ds: Dataset, path, model_spec: ModelSpec) -> None:
    """Write a Dataset back to CSV; floats use their shortest round-trip repr."""
    cols = model_spec.columns
    data = {model_spec.outcome_name: ds.outcome, model_spec.treatment_name: ds.treatment}
    data.update(ds.controls)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(cols)
        for i in range(ds.n):
            row = []
            for c in cols:
                col = data[c]
                row.append(col.values[i] if isinstance(col, Factor) else repr(float(col[i])))
            wr.writerow(row)


def expand_factors(ds: Dataset, model_spec: ModelSpec) -> tuple[np.ndarray, list[str], list[ControlBlock]]:
    """Numeric control block: factors become drop-first indicator columns.

    Returns the ``n x k`` matrix, its column names (``"<col>=<level>"`` for
    indicators) and the block layout (offsets relative to the control block).
    """
    cols, names, blocks = [], [], []
    for name, kind in model_spec.control_terms:
        if name not in ds.controls:
            raise DataError(f"control {name!r} missing from the dataset")
        col = ds.controls[name]
        start = len(names)
        if kind == "numeric":
            if isinstance(col, Factor):
                raise DataError(f"control {name!r} is declared numeric but holds labels")
            cols.append(np.asarray(col, dtype=float)[:, None])
            names.append(name)
            blocks.append(ControlBlock(name, "numeric", start, start + 1))
            continue
        if not isinstance(col, Factor):
            labels = tuple(repr(float(v)) for v in col)
            col = Factor(labels, tuple(sorted(set(labels))))
        if len(col.levels) < 2:
            raise DataError(f"factor {name!r} has a single level; it is collinear with the intercept")
        codes = col.codes()
        ind = (codes[:, None] == np.arange(1, len(col.levels))[None, :]).astype(float)
        cols.append(ind)
        names.extend(f"{name}={lv}" for lv in col.levels[1:])
        blocks.append(ControlBlock(name, "factor", start, start + ind.shape[1], col.levels))
    mat = np.hstack(cols) if cols else np.zeros((ds.n, 0))
    return mat, names, blocks


def check_rank(values: np.ndarray, names: Sequence[str], tol: float = PIVOT_TOL) -> None:
    """Raise RankDeficiencyError naming the dependent columns, if any."""
    n, m = values.shape
    if m >= n:
        raise RankDeficiencyError(f"design has m={m} columns but only n={n} rows (need m < n)",
                                  module="dataio")
    _, R, piv = linalg.qr(values, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    if d.size == 0 or d[0] == 0:
        raise RankDeficiencyError("design matrix is zero", list(names), module="dataio")
    rank = int(np.sum(d > tol * d[0]))
    if rank < m:
        dependent = [names[k] for k in sorted(piv[rank:])]
        raise RankDeficiencyError(f"design is rank deficient (rank {rank} < {m}); dependent columns: "
                                  f"{dependent}", dependent, module="dataio")


def build_design(ds: Dataset, model_spec: ModelSpec, basis: BasisSpec) -> DesignMatrix:
    """Assemble ``Z(x) = (Z(w)', v')'`` for every observation."""
    Zw = eval_basis(basis, ds.treatment, 0)
    if Zw.ndim == 1:
        Zw = Zw[None, :]
    ctrl, ctrl_names, blocks = expand_factors(ds, model_spec)
    intercept = model_spec.intercept
    if intercept is None:
        intercept = not basis.spans_constants
    parts = [Zw]
    names = [f"Z{k + 1}" for k in range(Zw.shape[1])]
    offset = Zw.shape[1]
    if intercept:
        parts.append(np.ones((ds.n, 1)))
        names.append("(Intercept)")
        offset += 1
    parts.append(ctrl)
    names.extend(ctrl_names)
    blocks = [ControlBlock(b.name, b.kind, b.start + offset, b.stop + offset, b.levels) for b in blocks]
    values = np.hstack(parts)
    check_rank(values, names)
    return DesignMatrix(_frozen(values), tuple(names), Zw.shape[1], bool(intercept), tuple(blocks))
