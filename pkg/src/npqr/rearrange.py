"""Monotone rearrangement of estimate surfaces.

Rows of an estimate matrix index evaluation points (ascending), columns index
quantile indices (ascending). Sorting along a dimension is the rearrangement
in that dimension; for both dimensions the two sequential orders are averaged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from npqr.errors import ConfigError, DataError

DIMS = ("quantile", "var", "both")


@dataclass(frozen=True)
class RearrangeSpec:
    dims: str = "both"
    enabled: bool = True
    bands: bool = True
    order: str = "average"

    def __post_init__(self):
        if self.dims not in DIMS:
            raise ConfigError(f"rearrangement dims must be one of {DIMS}", module="rearrange")
        if self.order not in ("average", "quantile-first", "var-first"):
            raise ConfigError("order must be 'average', 'quantile-first' or 'var-first'", module="rearrange")


def _sort_quantile(E):
    return np.sort(E, axis=1)


def _sort_var(E):
    return np.sort(E, axis=0)


def rearrange_estimates(est, spec: RearrangeSpec | str = "both") -> np.ndarray:
    """Monotonise a ``p x T`` matrix over quantiles, eval points or both."""
    if isinstance(spec, str):
        spec = RearrangeSpec(spec)
    E = np.array(est, dtype=float, ndmin=2)
    if np.any(np.isnan(E)):
        raise DataError("cannot rearrange a matrix containing NaN", module="rearrange")
    if not spec.enabled:
        return E
    if spec.dims == "quantile":
        return _sort_quantile(E)
    if spec.dims == "var":
        return _sort_var(E)
    q_first = _sort_var(_sort_quantile(E))
    v_first = _sort_quantile(_sort_var(E))
    if spec.order == "quantile-first":
        return q_first
    if spec.order == "var-first":
        return v_first
    return 0.5 * (q_first + v_first)


def is_monotone(E, dims: str = "both") -> bool:
    E = np.atleast_2d(E)
    ok = True
    if dims in ("quantile", "both"):
        ok &= bool(np.all(np.diff(E, axis=1) >= 0))
    if dims in ("var", "both"):
        ok &= bool(np.all(np.diff(E, axis=0) >= 0))
    return ok
