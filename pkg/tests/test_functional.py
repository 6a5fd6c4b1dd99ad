from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from npqr.basis import BSplineBasis, IndicatorBasis, eval_basis, make_tau_grid
from npqr.dataio import ModelSpec, build_design, make_dataset
from npqr.errors import ConfigError
from npqr.functional import LoadSpec, apply_load, build_load, control_profile
from npqr.qrfit import fit_process

SPEC = ModelSpec("y", "w", (("x", "numeric"), ("g", "factor")))


@pytest.fixture
def model():
    rng = np.random.default_rng(4)
    n = 120
    w = rng.random(n)
    g = np.array(["a"] * 50 + ["b"] * 40 + ["c"] * 30)
    ds = make_dataset(w + rng.normal(size=n), w, {"x": rng.normal(size=n), "g": g})
    basis = BSplineBasis(3, (0.0, 0.5, 1.0))
    return ds, basis, build_design(ds, SPEC, basis)


def test_control_profile_mean_and_mode(model):
    ds, _, design = model
    prof = control_profile(ds, design)
    assert prof[0] == pytest.approx(np.mean(ds.controls["x"]))
    np.testing.assert_array_equal(prof[1:], [0.0, 0.0])  # mode is the reference level "a"


def test_mode_ties_go_to_lowest_level():
    w = np.linspace(0, 1, 8)
    ds = make_dataset(w, w, {"g": np.array(["b", "c"] * 4)})
    design = build_design(ds, ModelSpec("y", "w", (("g", "factor"),)), BSplineBasis(1, (0.0, 1.0)))
    np.testing.assert_array_equal(control_profile(ds, design), [0.0])


def test_value_load_at_points(model):
    ds, basis, design = model
    load = build_load(LoadSpec(eval_points=(0.25, 0.75)), basis, ds, design)
    assert load.rows.shape == (2, design.m)
    np.testing.assert_allclose(load.rows[:, :design.split], eval_basis(basis, np.array([0.25, 0.75])))
    assert load.labels == ("0.25", "0.75")
    assert not load.averaged


def test_derivative_load_zero_controls(model):
    ds, basis, design = model
    load = build_load(LoadSpec(deriv=1, eval_points=(0.3,)), basis, ds, design)
    np.testing.assert_array_equal(load.rows[0, design.split:], 0.0)


def test_average_load_is_mean_of_rows(model):
    ds, basis, design = model
    avg = build_load(LoadSpec(deriv=1, average=True), basis, ds, design)
    assert avg.averaged and avg.labels == ("average",)
    np.testing.assert_allclose(avg.rows[0], avg.per_observation.mean(axis=0), atol=1e-14)


def test_distinct_measure_weights():
    w = np.array([0.0, 0.0, 1.0, 0.5])
    ds = make_dataset(w, w)
    basis = BSplineBasis(1, (0.0, 1.0))
    design = build_design(ds, ModelSpec("y", "w"), basis)
    load = build_load(LoadSpec(average=True, measure="distinct"), basis, ds, design)
    np.testing.assert_allclose(load.measure, [1 / 6, 1 / 6, 1 / 3, 1 / 3])


def test_indicator_derivative_rejected():
    w = np.array([1.0, 2.0, 3.0, 1.0, 2.0, 3.0])
    ds = make_dataset(np.arange(6.0), w)
    basis = IndicatorBasis((1.0, 2.0, 3.0))
    design = build_design(ds, ModelSpec("y", "w"), basis)
    with pytest.raises(ConfigError, match="derivative undefined"):
        build_load(LoadSpec(deriv=1), basis, ds, design)


def test_profile_length_checked(model):
    ds, basis, design = model
    with pytest.raises(ConfigError):
        build_load(LoadSpec(control_profile=(1.0,)), basis, ds, design)


def test_apply_load_matches_fit(model):
    ds, basis, design = model
    fit = fit_process(design, ds.outcome, make_tau_grid([0.25, 0.5, 0.75]))
    load = build_load(LoadSpec(eval_points=(0.5,)), basis, ds, design)
    np.testing.assert_allclose(apply_load(load, fit), load.rows @ fit.betas, atol=1e-12)
    with pytest.raises(ConfigError):
        apply_load(np.ones((1, 2)), fit)


@settings(max_examples=50, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.integers(0, 1000))
def test_apply_load_linear(a, b, seed):
    rng = np.random.default_rng(seed)
    L1, L2 = rng.normal(size=(2, 3, 6))
    betas = rng.normal(size=(6, 4))
    lhs = apply_load(a * L1 + b * L2, betas)
    rhs = a * apply_load(L1, betas) + b * apply_load(L2, betas)
    np.testing.assert_allclose(lhs, rhs, atol=1e-11)
