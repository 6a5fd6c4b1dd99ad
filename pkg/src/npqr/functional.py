"""Load vectors mapping QR coefficients to linear functionals.

A row ``l`` of a load matrix turns ``beta(tau)`` into an estimand ``l' beta(tau)``:
the conditional quantile at a point (``deriv=0``), a partial derivative in
``w`` (``deriv=1, 2``), or the average of either over a measure on ``W``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from npqr.basis import BasisSpec, eval_basis
from npqr.dataio import Dataset, DesignMatrix, Factor
from npqr.errors import ConfigError
from npqr.qrfit import QrProcessFit


@dataclass(frozen=True)
class LoadSpec:
    """What to estimate.

    ``eval_points=None`` means the sorted distinct sample values of ``W``.
    ``measure`` is ``"observations"`` (uniform over all n rows), ``"distinct"``
    (uniform over distinct W values) or an explicit nonnegative weight vector
    over observations. ``control_profile=None`` uses the sample mean of
    numeric controls and the sample mode of factors.
    """

    deriv: int = 0
    average: bool = False
    eval_points: tuple[float, ...] | None = None
    control_profile: tuple[float, ...] | None = None
    measure: str | tuple[float, ...] = "observations"

    def __post_init__(self):
        if self.deriv not in (0, 1, 2):
            raise ConfigError("deriv must be 0, 1 or 2", module="functional")


@dataclass(frozen=True)
class LoadMatrix:
    """``p x m`` load rows with labels.

    For averaged loads ``per_observation`` keeps the ``n x m`` rows before
    averaging and ``measure`` the averaging weights; both feed the
    unconditional standard-error correction.
    """

    rows: np.ndarray
    labels: tuple[str, ...]
    eval_points: np.ndarray | None = None
    per_observation: np.ndarray | None = None
    measure: np.ndarray | None = None

    @property
    def averaged(self) -> bool:
        return self.per_observation is not None

    def to_csv(self, path, column_names=None) -> None:
        m = self.rows.shape[1]
        names = list(column_names) if column_names is not None else [f"col{k}" for k in range(m)]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh)
            wr.writerow(["label"] + names)
            for lab, row in zip(self.labels, self.rows):
                wr.writerow([lab] + [repr(float(v)) for v in row])


def control_profile(ds: Dataset, design: DesignMatrix) -> np.ndarray:
    """Controls block at the sample mean (numeric) / sample mode (factors).

    Mode ties go to the lowest-ordered level; the intercept entry is 1.
    """
    prof = np.zeros(design.m - design.split)
    off = design.split
    if design.intercept:
        prof[0] = 1.0
    for blk in design.blocks:
        col = ds.controls[blk.name]
        if blk.kind == "numeric":
            prof[blk.start - off] = float(np.mean(col))
            continue
        if isinstance(col, Factor):
            codes = col.codes()
        else:
            labels = [repr(float(v)) for v in col]
            codes = np.array([blk.levels.index(v) for v in labels])
        counts = np.bincount(codes, minlength=len(blk.levels))
        mode = int(np.argmax(counts))
        if mode > 0:
            prof[blk.start - off + mode - 1] = 1.0
    return prof


def measure_weights(spec_measure, w: np.ndarray) -> np.ndarray:
    n = w.size
    if isinstance(spec_measure, str):
        if spec_measure == "observations":
            return np.full(n, 1.0 / n)
        if spec_measure == "distinct":
            _, inv, counts = np.unique(w, return_inverse=True, return_counts=True)
            return 1.0 / (counts.size * counts[inv])
        raise ConfigError(f"unknown measure {spec_measure!r}", module="functional")
    pi = np.asarray(spec_measure, dtype=float)
    if pi.size != n or np.any(pi < 0) or pi.sum() <= 0:
        raise ConfigError("measure weights must be nonnegative, one per observation", module="functional")
    return pi / pi.sum()


def build_load(spec: LoadSpec, basis: BasisSpec, ds: Dataset, design: DesignMatrix) -> LoadMatrix:
    """Load matrix for the requested functional."""
    if spec.deriv > 0 and not basis.supports_derivatives:
        raise ConfigError("derivative undefined for indicator basis", module="functional")
    m_ctrl = design.m - design.split
    if spec.deriv == 0:
        prof = control_profile(ds, design) if spec.control_profile is None \
            else np.asarray(spec.control_profile, dtype=float)
        if prof.size != m_ctrl:
            raise ConfigError(f"control profile has {prof.size} entries, design has {m_ctrl} control "
                              "columns", module="functional")
    else:
        prof = np.zeros(m_ctrl)

    def rows_at(points):
        Zw = np.atleast_2d(eval_basis(basis, np.asarray(points, dtype=float), spec.deriv))
        return np.hstack([Zw, np.broadcast_to(prof, (Zw.shape[0], m_ctrl))])

    if spec.average:
        per_obs = rows_at(ds.treatment)
        pi = measure_weights(spec.measure, ds.treatment)
        row = pi @ per_obs
        return LoadMatrix(row[None, :], ("average",), None, per_obs, pi)
    pts = np.unique(ds.treatment) if spec.eval_points is None else np.asarray(spec.eval_points, dtype=float)
    return LoadMatrix(rows_at(pts), tuple(repr(float(v)) for v in pts), pts)


def apply_load(load: LoadMatrix | np.ndarray, fit: QrProcessFit | np.ndarray) -> np.ndarray:
    """Estimates ``l_j' beta(tau_t)`` as a ``p x len(taus)`` matrix."""
    L = load.rows if isinstance(load, LoadMatrix) else np.atleast_2d(np.asarray(load, dtype=float))
    betas = fit.betas if isinstance(fit, QrProcessFit) else np.asarray(fit, dtype=float)
    if L.shape[1] != betas.shape[0]:
        raise ConfigError(f"load has {L.shape[1]} columns but coefficients have length {betas.shape[0]}",
                          module="functional")
    # fixed left-to-right summation over coefficients
    out = np.zeros((L.shape[0], betas.shape[1]))
    for k in range(L.shape[1]):
        out += L[:, k:k + 1] * betas[k:k + 1, :]
    return out
