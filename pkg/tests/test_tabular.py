import numpy as np
import pytest

from itepred.errors import (HierarchyViolation, IndexOutOfRange, LengthMismatch, MissingValue,
                            NonBinary, SchemaMismatch)
from itepred.tabular import (Dataset, DesignSpec, Scaling, build_design, load_covariates,
                             load_csv, save_csv, unstandardize_coefficients)

from conftest import random_trial

SCHEMA = {"treatment": "a", "outcome": "y"}


def write(tmp_path, text, name="d.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_load_three_rows(tmp_path):
    data = load_csv(write(tmp_path, "x,a,y\n1.5,0,1\n2,1,0\n-3,1,1\n"), SCHEMA)
    assert (data.n, data.p) == (3, 1)
    np.testing.assert_array_equal(data.covariates[:, 0], [1.5, 2, -3])
    np.testing.assert_array_equal(data.treatment, [0, 1, 1])
    np.testing.assert_array_equal(data.outcome, [1, 0, 1])


def test_non_binary_outcome(tmp_path):
    with pytest.raises(NonBinary):
        load_csv(write(tmp_path, "x,a,y\n1,0,2\n"), SCHEMA)


@pytest.mark.parametrize("cell", ["", "NA", "nan"])
def test_missing_value(tmp_path, cell):
    with pytest.raises(MissingValue):
        load_csv(write(tmp_path, f"x,a,y\n1,0,1\n{cell},1,0\n"), SCHEMA)


def test_schema_mismatch(tmp_path):
    with pytest.raises(SchemaMismatch):
        load_csv(write(tmp_path, "x,a,y\n1,0,1\n"), {"treatment": "t", "outcome": "y"})
    with pytest.raises(SchemaMismatch):
        load_csv(write(tmp_path, "x,a,y\n1,0\n"), SCHEMA)


def test_categorical_dummies_first_level_reference(tmp_path):
    text = "grp,a,y\nmid,0,1\nlow,1,0\nmid,1,1\nhigh,0,0\nlow,0,1\n"
    data = load_csv(write(tmp_path, text), SCHEMA)
    # reference "mid"; dummies for "low" then "high" in order of appearance
    expected = np.array([[0, 0], [1, 0], [0, 0], [0, 1], [1, 0]], dtype=float)
    np.testing.assert_array_equal(data.covariates, expected)
    assert data.column_names == ("grp=low", "grp=high")


def test_declared_categorical_numeric_codes(tmp_path):
    text = "g,a,y\n3,0,1\n1,1,0\n3,1,1\n"
    data = load_csv(write(tmp_path, text), dict(SCHEMA, categorical=["g"]))
    np.testing.assert_array_equal(data.covariates[:, 0], [0, 1, 0])


def test_covariates_for_new_rows_use_training_encoding(tmp_path):
    train = load_csv(write(tmp_path, "g,x,a,y\nb,1,0,1\nc,2,1,0\n"), SCHEMA)
    X = load_covariates(write(tmp_path, "x,g\n5,c\n6,b\n", "new.csv"), train.encoding)
    np.testing.assert_array_equal(X, [[1, 5], [0, 6]])
    with pytest.raises(SchemaMismatch):
        load_covariates(write(tmp_path, "x,g\n5,zzz\n", "bad.csv"), train.encoding)


def test_save_load_round_trip(tmp_path):
    data = random_trial(40, 3, seed=2)
    path = tmp_path / "rt.csv"
    save_csv(data, path)
    back = load_csv(path, {"treatment": "treatment", "outcome": "outcome"})
    np.testing.assert_array_equal(back.treatment, data.treatment)
    np.testing.assert_array_equal(back.outcome, data.outcome)
    np.testing.assert_allclose(back.covariates, data.covariates, rtol=0, atol=1e-12)
    assert back.column_names == data.column_names


def test_dataset_invariants():
    with pytest.raises(LengthMismatch):
        Dataset(np.zeros((3, 1)), [0, 1], [0, 1, 1], ("x",))
    with pytest.raises(NonBinary):
        Dataset(np.zeros((2, 1)), [0, 2], [0, 1], ("x",))
    with pytest.raises(MissingValue):
        Dataset(np.array([[np.nan], [1.0]]), [0, 1], [0, 1], ("x",))


def test_design_without_interactions_unstandardized():
    data = random_trial(10, 3)
    d = build_design(data, DesignSpec((0, 1, 2), (), standardize=False))
    expected = np.column_stack([np.ones(10), data.treatment, data.covariates])
    np.testing.assert_array_equal(d.matrix, expected)


def test_design_full_interactions():
    data = random_trial(20, 4)
    d = build_design(data, DesignSpec.full(4))
    assert d.n_columns == 2 + 2 * 4
    for k in range(4):
        np.testing.assert_array_equal(d.raw[:, 6 + k], data.treatment * data.covariates[:, k])
    assert d.roles == ("intercept", "treatment") + ("main",) * 4 + ("interaction",) * 4


def test_standardized_columns():
    data = random_trial(50, 3, seed=4)
    d = build_design(data, DesignSpec.full(3))
    S = d.std[:, 1:]
    np.testing.assert_allclose(S.mean(axis=0), 0, atol=1e-12)
    np.testing.assert_allclose(S.std(axis=0), 1, atol=1e-12)
    np.testing.assert_array_equal(d.std[:, 0], 1.0)
    back = d.std * d.scaling.scale + d.scaling.center
    np.testing.assert_allclose(back, d.raw, atol=1e-12)


def test_design_errors():
    data = random_trial(10, 3)
    with pytest.raises(IndexOutOfRange):
        build_design(data, DesignSpec((0, 5), ()))
    with pytest.raises(HierarchyViolation):
        DesignSpec((0,), (1,))
    with pytest.raises(HierarchyViolation):
        DesignSpec((0,), (0,), include_treatment=False)
    with pytest.raises(LengthMismatch):
        build_design(data, DesignSpec((0,), (), offset=np.zeros(3)))


def test_offset_passed_through():
    data = random_trial(10, 2)
    off = np.linspace(-1, 1, 10)
    d = build_design(data, DesignSpec((0,), (), offset=off))
    np.testing.assert_array_equal(d.offset, off)


def test_unstandardize_identity_scaling():
    roles = ("intercept", "treatment", "main")
    s = Scaling(np.zeros(3), np.ones(3), roles)
    c = unstandardize_coefficients([0.3, -1.0, 2.0], s)
    np.testing.assert_array_equal(c.as_vector(), [0.3, -1.0, 2.0])


def test_unstandardize_single_column():
    m, sd, b, b0 = 2.5, 0.5, 1.2, -0.4
    s = Scaling(np.array([0.0, m]), np.array([1.0, sd]), ("intercept", "main"))
    c = unstandardize_coefficients([b0, b], s)
    assert c.beta_m[0] == pytest.approx(b / sd, abs=1e-15)
    assert c.beta0 == pytest.approx(b0 - b * m / sd, abs=1e-15)


def test_unstandardize_linear_predictor_equal():
    data = random_trial(60, 5, seed=8)
    d = build_design(data, DesignSpec.full(5))
    beta_std = np.random.default_rng(0).standard_normal(d.n_columns)
    coefs = unstandardize_coefficients(beta_std, d.scaling)
    np.testing.assert_allclose(d.raw @ coefs.as_vector(), d.std @ beta_std, atol=1e-10)
    with pytest.raises(LengthMismatch):
        unstandardize_coefficients(beta_std[:-1], d.scaling)


def test_subset_restandardizes():
    data = random_trial(40, 2, seed=3)
    d = build_design(data, DesignSpec.full(2))
    sub = d.subset(np.arange(15))
    np.testing.assert_allclose(sub.std[:, 1:].mean(axis=0), 0, atol=1e-12)
    np.testing.assert_array_equal(sub.raw, d.raw[:15])


def test_with_treatment_rebuilds_interactions():
    data = random_trial(12, 3)
    d = build_design(data, DesignSpec.full(3))
    m1 = d.with_treatment(1)
    np.testing.assert_array_equal(m1[:, 1], 1.0)
    np.testing.assert_array_equal(m1[:, 5:], data.covariates)
    np.testing.assert_array_equal(d.with_treatment(0)[:, 5:], 0.0)


def test_spec_dict_round_trip():
    spec = DesignSpec((0, 2, 3), (2,), standardize=False)
    assert DesignSpec.from_dict(spec.to_dict()) == spec
