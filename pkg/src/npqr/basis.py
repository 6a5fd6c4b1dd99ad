"""Series bases for the nonparametric part of the model.

Each basis maps the treatment variable ``w`` to a vector ``Z(w)`` and supplies
its first and second derivatives analytically. Four families are available:
clamped B-splines, sample-orthonormal polynomials, Fourier series and the
saturated indicator basis.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from npqr import kernels
from npqr.errors import ConfigError, DataError

MAX_DERIV = 2


def _as_points(w) -> tuple[np.ndarray, bool]:
    arr = np.asarray(w, dtype=float)
    return np.atleast_1d(arr).ravel(), arr.ndim == 0


def _check_deriv(deriv: int) -> int:
    if deriv not in (0, 1, 2):
        raise ConfigError(f"derivative order must be 0, 1 or 2, got {deriv!r}", module="basis")
    return int(deriv)


@dataclass(frozen=True)
class BSplineBasis:
    """Clamped B-spline basis on the given breakpoints.

    The basis has ``len(breakpoints) + degree - 1`` functions and is a partition
    of unity on ``[breakpoints[0], breakpoints[-1]]``. Knot spans are half-open
    except the last, which is closed on the right.
    """

    degree: int
    breakpoints: tuple[float, ...]
    breaks_probs: tuple[float, ...] | None = field(default=None, compare=False)

    def __post_init__(self):
        br = np.asarray(self.breakpoints, dtype=float)
        if self.degree < 1:
            raise ConfigError("B-spline degree must be >= 1", module="basis")
        if br.size < 2 or np.any(np.diff(br) <= 0):
            raise ConfigError("B-spline breakpoints must be strictly increasing with >= 2 entries",
                              module="basis")
        object.__setattr__(self, "breakpoints", tuple(float(b) for b in br))

    @property
    def knots(self) -> np.ndarray:
        br = np.asarray(self.breakpoints)
        p = self.degree
        return np.concatenate([np.repeat(br[0], p), br, np.repeat(br[-1], p)])

    @property
    def nbasis(self) -> int:
        return len(self.breakpoints) + self.degree - 1

    @property
    def domain(self) -> tuple[float, float]:
        return self.breakpoints[0], self.breakpoints[-1]

    spans_constants = True
    supports_derivatives = True

    def evaluate(self, w: np.ndarray, deriv: int) -> np.ndarray:
        lo, hi = self.domain
        bad = (w < lo) | (w > hi) | ~np.isfinite(w)
        if np.any(bad):
            raise DataError(f"w={w[bad][0]!r} outside the knot span [{lo}, {hi}]", module="basis")
        return kernels.bspline_design(self.knots, self.degree, w, deriv)

    def to_config(self) -> dict:
        out = {"type": "bspline", "degree": self.degree}
        if self.breaks_probs is not None:
            out["breaks_probs"] = list(self.breaks_probs)
        else:
            out["breakpoints"] = list(self.breakpoints)
        return out


@dataclass(frozen=True)
class PolynomialBasis:
    """Polynomial basis orthonormal over a fitted sample.

    Column ``k`` equals ``sum_j coef[j, k] * t**j`` with ``t = (w - center) / scale``,
    so derivatives are exact. Built by :func:`fit_polynomial_basis`.
    """

    degree: int
    center: float
    scale: float
    coef: np.ndarray = field(repr=False)

    spans_constants = False
    supports_derivatives = True

    @property
    def nbasis(self) -> int:
        return self.degree

    @property
    def domain(self) -> tuple[float, float]:
        return -math.inf, math.inf

    def evaluate(self, w: np.ndarray, deriv: int) -> np.ndarray:
        if not np.all(np.isfinite(w)):
            raise DataError("non-finite w passed to polynomial basis", module="basis")
        t = (w - self.center) / self.scale
        powers = np.arange(self.degree + 1)
        V = np.zeros((t.size, self.degree + 1))
        for j in powers[deriv:]:
            falling = math.perm(int(j), deriv)
            V[:, j] = falling * t ** (j - deriv)
        return (V @ self.coef) / self.scale**deriv

    def to_config(self) -> dict:
        return {"type": "polynomial", "degree": self.degree}


@dataclass(frozen=True)
class FourierBasis:
    """Fourier basis: a constant, then sine/cosine pairs of increasing frequency.

    Normalised to be orthonormal over one period: ``1/sqrt(P)`` for the
    constant and ``sqrt(2/P) * sin|cos(2*pi*j*w/P)`` for the pairs.
    """

    nbasis: int
    period: float
    range: tuple[float, float]

    spans_constants = True
    supports_derivatives = True

    def __post_init__(self):
        if self.nbasis < 3 or self.nbasis % 2 == 0:
            raise ConfigError("Fourier nbasis must be an odd integer >= 3", module="basis")
        if not self.period > 0:
            raise ConfigError("Fourier period must be positive", module="basis")
        lo, hi = (float(v) for v in self.range)
        if not lo < hi:
            raise ConfigError("Fourier range must satisfy lo < hi", module="basis")
        object.__setattr__(self, "range", (lo, hi))

    @property
    def domain(self) -> tuple[float, float]:
        return self.range

    def evaluate(self, w: np.ndarray, deriv: int) -> np.ndarray:
        lo, hi = self.range
        bad = (w < lo) | (w > hi) | ~np.isfinite(w)
        if np.any(bad):
            raise DataError(f"w={w[bad][0]!r} outside the Fourier range [{lo}, {hi}]", module="basis")
        P = self.period
        out = np.zeros((w.size, self.nbasis))
        if deriv == 0:
            out[:, 0] = 1.0 / math.sqrt(P)
        amp = math.sqrt(2.0 / P)
        phase = deriv * math.pi / 2
        for j in range(1, (self.nbasis - 1) // 2 + 1):
            freq = 2.0 * math.pi * j / P
            arg = freq * w + phase
            out[:, 2 * j - 1] = amp * freq**deriv * np.sin(arg)
            out[:, 2 * j] = amp * freq**deriv * np.cos(arg)
        return out

    def to_config(self) -> dict:
        return {"type": "fourier", "nbasis": self.nbasis, "period": self.period}


@dataclass(frozen=True)
class IndicatorBasis:
    """Saturated dummies: one column per distinct treatment value."""

    levels: tuple[float, ...]

    spans_constants = True
    supports_derivatives = False

    def __post_init__(self):
        lv = np.asarray(self.levels, dtype=float)
        if lv.size == 0:
            raise ConfigError("indicator basis needs at least one level", module="basis")
        if np.any(np.diff(lv) <= 0):
            raise ConfigError("indicator levels must be sorted and distinct", module="basis")
        object.__setattr__(self, "levels", tuple(float(v) for v in lv))

    @property
    def nbasis(self) -> int:
        return len(self.levels)

    @property
    def domain(self) -> tuple[float, float]:
        return self.levels[0], self.levels[-1]

    def evaluate(self, w: np.ndarray, deriv: int) -> np.ndarray:
        if deriv != 0:
            raise ConfigError("derivative undefined for indicator basis", module="basis")
        lv = np.asarray(self.levels)
        idx = np.searchsorted(lv, w)
        idx_c = np.minimum(idx, lv.size - 1)
        found = lv[idx_c] == w
        if not np.all(found):
            raise DataError(f"w={w[~found][0]!r} is not a level of the indicator basis", module="basis")
        out = np.zeros((w.size, lv.size))
        out[np.arange(w.size), idx_c] = 1.0
        return out

    def to_config(self) -> dict:
        return {"type": "indicator"}


BasisSpec = Union[BSplineBasis, PolynomialBasis, FourierBasis, IndicatorBasis]


def eval_basis(spec: BasisSpec, w, deriv: int = 0) -> np.ndarray:
    """Evaluate ``d^k Z(w) / dw^k``.

    A scalar ``w`` gives a vector of length ``spec.nbasis``; an array of points
    gives a matrix with one row per point.
    """
    deriv = _check_deriv(deriv)
    pts, scalar = _as_points(w)
    out = spec.evaluate(pts, deriv)
    return out[0] if scalar else out


def quantile_breakpoints(w_values, probs) -> np.ndarray:
    """Empirical quantiles of ``w_values`` at ``probs``, deduplicated.

    Uses the linear-interpolation definition (order statistics with linear
    interpolation between neighbours).
    """
    w = np.asarray(w_values, dtype=float).ravel()
    probs = np.asarray(probs, dtype=float).ravel()
    if w.size == 0:
        raise DataError("cannot compute breakpoints of an empty sample", module="basis")
    if probs.size == 0 or np.any(np.diff(probs) < 0) or probs[0] < 0 or probs[-1] > 1:
        raise ConfigError("breakpoint probabilities must be sorted within [0, 1]", module="basis")
    q = np.unique(np.quantile(w, probs, method="linear"))
    if q.size < 2:
        raise DataError("breakpoints collapse to fewer than 2 distinct values "
                        "(treatment is constant over the requested quantiles)", module="basis")
    return q


def fit_polynomial_basis(w_values, degree: int) -> PolynomialBasis:
    """Polynomial basis of the given degree, orthonormal over ``w_values``.

    Columns are orthogonal to the constant, have unit Euclidean norm over the
    sample, and are mutually orthogonal. Each column has a positive leading
    coefficient.
    """
    w = np.asarray(w_values, dtype=float).ravel()
    if degree < 1:
        raise ConfigError("polynomial degree must be >= 1", module="basis")
    ndistinct = np.unique(w).size
    if degree >= ndistinct:
        raise DataError(f"polynomial degree {degree} needs more than {degree} distinct w values "
                        f"(have {ndistinct})", module="basis")
    center = 0.5 * (w.min() + w.max())
    scale = 0.5 * (w.max() - w.min())
    t = (w - center) / scale
    V = np.vander(t, degree + 1, increasing=True)
    # Gram-Schmidt via QR, then one re-orthogonalisation pass
    _, R = np.linalg.qr(V)
    C = np.linalg.solve(R, np.eye(degree + 1))
    for _ in range(2):
        Q = V @ C
        _, R2 = np.linalg.qr(Q)
        C = C @ np.linalg.solve(R2, np.eye(degree + 1))
    C = C[:, 1:]
    C = C * np.sign(C[np.arange(1, degree + 1), np.arange(degree)])[None, :]
    return PolynomialBasis(degree=int(degree), center=float(center), scale=float(scale), coef=C)


def basis_from_config(cfg: dict, w_values) -> BasisSpec:
    """Build a basis from a config mapping (keys ``type``, ``degree``,
    ``breaks_probs``, ``nbasis``, ``period``) and the sample of ``w``."""
    kind = str(cfg.get("type", "bspline")).lower()
    w = np.asarray(w_values, dtype=float)
    if kind == "bspline":
        degree = int(cfg.get("degree", 3))
        if cfg.get("breakpoints") is not None:
            return BSplineBasis(degree, tuple(cfg["breakpoints"]))
        probs = tuple(float(p) for p in cfg.get("breaks_probs", np.arange(11) / 10))
        return BSplineBasis(degree, tuple(quantile_breakpoints(w, probs)), breaks_probs=probs)
    if kind == "polynomial":
        return fit_polynomial_basis(w, int(cfg.get("degree", 3)))
    if kind == "fourier":
        return FourierBasis(int(cfg.get("nbasis", 9)), float(cfg.get("period", w.max() - w.min())),
                            (float(w.min()), float(w.max())))
    if kind == "indicator":
        return IndicatorBasis(tuple(np.unique(w)))
    raise ConfigError(f"unknown basis type {kind!r}", module="basis")


@dataclass(frozen=True)
class TauGrid:
    """Quantile indices to estimate, plus the subset to print."""

    taus: tuple[float, ...]
    print_taus: tuple[float, ...] = ()

    def __post_init__(self):
        t = np.asarray(self.taus, dtype=float).ravel()
        if t.size == 0:
            raise ConfigError("tau grid is empty", module="basis")
        if np.any(t <= 0) or np.any(t >= 1):
            raise ConfigError("every tau must lie in the open interval (0, 1)", module="basis")
        if np.any(np.diff(t) <= 0):
            raise ConfigError("taus must be strictly increasing (no duplicates)", module="basis")
        object.__setattr__(self, "taus", tuple(float(v) for v in t))
        pt = np.asarray(self.print_taus if len(self.print_taus) else t, dtype=float).ravel()
        snapped = []
        for v in pt:
            k = int(np.argmin(np.abs(t - v)))
            if abs(t[k] - v) > 1e-12:
                warnings.warn(f"print tau {v} is not on the grid; using nearest grid point {t[k]}",
                              stacklevel=3)
            if t[k] not in snapped:
                snapped.append(float(t[k]))
        object.__setattr__(self, "print_taus", tuple(snapped))

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.taus)

    @property
    def print_index(self) -> list[int]:
        return [self.taus.index(v) for v in self.print_taus]

    def __len__(self) -> int:
        return len(self.taus)


def make_tau_grid(taus: Sequence[float], print_taus: Sequence[float] = ()) -> TauGrid:
    return TauGrid(tuple(taus), tuple(print_taus))
