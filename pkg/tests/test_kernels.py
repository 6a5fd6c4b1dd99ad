"""Compiled and NumPy back-ends must agree."""

from __future__ import annotations

import numpy as np
import pytest

from npqr import _pykernels, kernels
from npqr.basis import BSplineBasis

ck = pytest.importorskip("npqr._ckernels", reason="compiled extension not built")


def test_backend_selected():
    assert kernels.BACKEND in ("cython", "python")


@pytest.mark.parametrize("degree", [1, 2, 3, 5])
@pytest.mark.parametrize("deriv", [0, 1, 2])
def test_bspline_parity(degree, deriv):
    rng = np.random.default_rng(degree)
    br = np.concatenate([[0.0], np.sort(rng.random(6)), [1.0]])
    knots = BSplineBasis(degree, tuple(br)).knots
    x = np.concatenate([rng.random(500), br])
    a = ck.bspline_design(knots, degree, x, deriv)
    b = _pykernels.bspline_design(knots, degree, x, deriv)
    np.testing.assert_allclose(a, b, atol=1e-11, rtol=1e-11)


def test_score_parity_and_ties():
    rng = np.random.default_rng(1)
    Z = np.ascontiguousarray(rng.normal(size=(300, 4)))
    taus = np.array([0.1, 0.25, 0.5, 0.75, 0.9])
    U = rng.random((7, 300))
    U[:, :5] = 0.5  # exactly on a grid point
    a = ck.score_process(Z, U, taus)
    b = _pykernels.score_process(Z, U, taus)
    np.testing.assert_allclose(a, b, atol=1e-12)
    direct = np.einsum("ik,bit->bkt", Z, taus[None, None, :] - (U[:, :, None] <= taus))
    np.testing.assert_allclose(a, direct, atol=1e-10)


def test_score_single_draw_shape():
    Z = np.ones((10, 2))
    out = _pykernels.score_process(Z, np.full(10, 0.3), np.array([0.2, 0.4]))
    assert out.shape == (2, 2)
    np.testing.assert_allclose(out[:, 0], 10 * 0.2)
    np.testing.assert_allclose(out[:, 1], 10 * (0.4 - 1))
