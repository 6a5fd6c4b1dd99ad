from __future__ import annotations

import numpy as np
import pytest

from npqr.basis import BSplineBasis, fit_polynomial_basis
from npqr.dataio import (Factor, ModelSpec, build_design, check_rank, expand_factors, load_csv, make_dataset,
                         write_csv)
from npqr.errors import ConfigError, DataError, RankDeficiencyError

SPEC = ModelSpec("y", "w", (("x1", "numeric"), ("sex", "factor")))


def test_load_csv_roundtrip(csv_dataset, tmp_path):
    path, _ = csv_dataset
    ds = load_csv(path, SPEC)
    assert ds.n == 300
    assert isinstance(ds.controls["sex"], Factor)
    assert ds.controls["sex"].levels == ("F", "M")
    out = tmp_path / "copy.csv"
    write_csv(ds, out, SPEC)
    again = load_csv(out, SPEC)
    np.testing.assert_array_equal(again.outcome, ds.outcome)
    np.testing.assert_array_equal(again.controls["x1"], ds.controls["x1"])
    assert again.controls["sex"] == ds.controls["sex"]


def test_loaded_arrays_are_read_only(csv_dataset):
    ds = load_csv(csv_dataset[0], SPEC)
    with pytest.raises(ValueError):
        ds.outcome[0] = 1.0


@pytest.mark.parametrize("text, match", [
    ("y,w\n1,2\n", "'x1' not found"),
    ("y,w,x1,sex\n1,0.5,abc,F\n2,0.6,1,M\n", "row 2, column 'x1'"),
    ("y,w,x1,sex\n1,0.5,inf,F\n2,0.6,1,M\n", "non-finite"),
    ("y,w,x1,sex\n1,0.5,1,NA\n2,0.6,1,M\n", "missing factor value"),
    ("", "empty"),
])
def test_load_csv_errors(tmp_path, text, match):
    p = tmp_path / "bad.csv"
    p.write_text(text)
    with pytest.raises(DataError, match=match):
        load_csv(p, SPEC)


def test_missing_file():
    with pytest.raises(DataError, match="does not exist"):
        load_csv("/nonexistent/file.csv", SPEC)


def test_model_spec_unique_columns():
    with pytest.raises(ConfigError):
        ModelSpec("y", "y")


def test_expand_factors_drop_first():
    ds = make_dataset([1, 2, 3, 4], [0.1, 0.2, 0.3, 0.4], {"g": np.array(["a", "b", "c", "a"])})
    mat, names, blocks = expand_factors(ds, ModelSpec("y", "w", (("g", "factor"),)))
    assert names == ["g=b", "g=c"]
    np.testing.assert_array_equal(mat, [[0, 0], [1, 0], [0, 1], [0, 0]])
    assert blocks[0].levels == ("a", "b", "c")


def test_declared_levels_set_reference():
    ds = make_dataset([1, 2, 3], [0.1, 0.2, 0.3], {"g": np.array(["a", "b", "a"])}, {"g": ("b", "a")})
    _, names, _ = expand_factors(ds, ModelSpec("y", "w", (("g", "factor"),)))
    assert names == ["g=a"]


def test_single_level_factor_errors():
    ds = make_dataset([1, 2, 3], [0.1, 0.2, 0.3], {"g": np.array(["a", "a", "a"])})
    with pytest.raises(DataError, match="single level"):
        expand_factors(ds, ModelSpec("y", "w", (("g", "factor"),)))


def test_rank_deficiency_names_columns():
    rng = np.random.default_rng(0)
    x = rng.normal(size=50)
    ds = make_dataset(rng.normal(size=50), rng.random(50), {"a": x, "b": 2 * x})
    with pytest.raises(RankDeficiencyError) as err:
        build_design(ds, ModelSpec("y", "w", (("a", "numeric"), ("b", "numeric"))), BSplineBasis(3, (0, 1)))
    assert set(err.value.dependent) & {"a", "b"}


def test_more_columns_than_rows():
    with pytest.raises(RankDeficiencyError, match="m < n"):
        check_rank(np.ones((3, 3)), ["a", "b", "c"])


def test_intercept_rule():
    rng = np.random.default_rng(1)
    w = rng.random(60)
    ds = make_dataset(rng.normal(size=60), w, {"x": rng.normal(size=60)})
    spec = ModelSpec("y", "w", (("x", "numeric"),))
    d_bs = build_design(ds, spec, BSplineBasis(3, (0.0, 0.5, 1.0)))
    assert not d_bs.intercept
    d_poly = build_design(ds, spec, fit_polynomial_basis(w, 3))
    assert d_poly.intercept
    assert d_poly.column_names == ("Z1", "Z2", "Z3", "(Intercept)", "x")
    assert d_poly.split == 3
    with pytest.raises(RankDeficiencyError):
        build_design(ds, ModelSpec("y", "w", (("x", "numeric"),), intercept=True), BSplineBasis(3, (0.0, 1.0)))
