"""Pure NumPy implementations of the hot kernels.

These mirror the compiled routines in ``_ckernels.pyx`` and are used when the
extension is not built (or when ``NPQR_PURE_PYTHON=1``). The B-spline routine
deliberately uses a different algorithm (full-array Cox-de Boor recursion over
all knot intervals) from the compiled one (local de Boor derivative table), so
the two back-ends double as cross-checks of each other.
"""

from __future__ import annotations

import numpy as np


def _safe_ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    # 0/0 terms of the recursion are zero by convention
    out = np.zeros(np.broadcast(num, den).shape)
    nz = den != 0
    np.divide(num, den, out=out, where=np.broadcast_to(nz, out.shape))
    return out


def bspline_design(knots, degree, x, deriv):
    """Evaluate all B-spline basis functions (or a derivative) at points.

    Parameters
    ----------
    knots : ndarray
        Clamped (augmented) knot vector of length ``nbasis + degree + 1``.
    degree : int
        Spline degree.
    x : ndarray of shape (npts,)
        Evaluation points; must lie in ``[knots[degree], knots[-degree-1]]``.
    deriv : int
        Derivative order.

    Returns
    -------
    ndarray of shape (npts, nbasis)
    """
    t = np.ascontiguousarray(knots, dtype=float)
    x = np.ascontiguousarray(x, dtype=float)
    p = int(degree)
    nb = t.size - p - 1
    if deriv > p:
        return np.zeros((x.size, nb))

    # degree-0 indicators on half-open intervals; right end closed
    lo, hi = t[:-1], t[1:]
    B = ((x[:, None] >= lo[None, :]) & (x[:, None] < hi[None, :])).astype(float)
    at_end = x == t[nb]
    if np.any(at_end):
        B[at_end] = 0.0
        B[at_end, nb - 1] = 1.0

    for q in range(1, p - deriv + 1):
        ni = t.size - q - 1
        left = _safe_ratio(x[:, None] - t[None, :ni], (t[q:q + ni] - t[:ni])[None, :])
        right = _safe_ratio(t[None, q + 1:q + 1 + ni] - x[:, None], (t[q + 1:q + 1 + ni] - t[1:1 + ni])[None, :])
        B = left * B[:, :ni] + right * B[:, 1:ni + 1]

    for j in range(p - deriv + 1, p + 1):
        ni = t.size - j - 1
        a = _safe_ratio(B[:, :ni], (t[j:j + ni] - t[:ni])[None, :])
        b = _safe_ratio(B[:, 1:ni + 1], (t[j + 1:j + 1 + ni] - t[1:1 + ni])[None, :])
        B = j * (a - b)
    return B[:, :nb]


def score_process(Z, U, taus):
    """Sum of ``Z_i * (tau - 1{U_i <= tau})`` over observations, for every tau.

    Parameters
    ----------
    Z : ndarray of shape (n, m)
    U : ndarray of shape (n,) or (B, n)
        Uniform draws; a 2-D array gives one score path per row.
    taus : ndarray of shape (T,)
        Strictly increasing quantile indices.

    Returns
    -------
    ndarray of shape (m, T), or (B, m, T) for 2-D ``U``.
    """
    Z = np.ascontiguousarray(Z, dtype=float)
    taus = np.ascontiguousarray(taus, dtype=float)
    U = np.asarray(U, dtype=float)
    if U.ndim == 2:
        return np.stack([score_process(Z, u, taus) for u in U])
    n, m = Z.shape
    T = taus.size
    # 1{U_i <= tau_t} is 1 exactly for t >= k_i
    k = np.searchsorted(taus, U, side="left")
    acc = np.empty((T + 1, m))
    for j in range(m):
        acc[:, j] = np.bincount(k, weights=Z[:, j], minlength=T + 1)
    below = np.cumsum(acc[:T], axis=0)
    total = Z.sum(axis=0)
    return (taus[:, None] * total[None, :] - below).T
