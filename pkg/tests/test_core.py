import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from momentbayes.core import (
    DataError,
    Dataset,
    Hyperparameters,
    MomentModel,
    ThetaBox,
    ThetaPrior,
    load_dataset,
    make_interval_mean_model,
    make_interval_regression_model,
    make_mean_bounds_model,
    make_missing_data_model,
    sample_moment_mean,
    save_dataset,
)
from momentbayes.experiments import gen_example_5_2


def test_dataset_invariants():
    with pytest.raises(DataError):
        Dataset(np.array([[1.0, np.nan]]), ("a", "b"))
    with pytest.raises(DataError):
        Dataset(np.ones((2, 2)), ("a", "a"))
    with pytest.raises(DataError):
        Dataset(np.ones((0, 2)), ("a", "b"))
    d = Dataset(np.arange(6.0).reshape(3, 2), ("a", "b"))
    assert (d.n, d.q) == (3, 2)
    assert np.array_equal(d.column("b"), [1.0, 3.0, 5.0])
    with pytest.raises(ValueError):
        d.values[0, 0] = 9.0


def test_box_and_prior():
    with pytest.raises(DataError):
        ThetaBox([1.0], [1.0])
    box = ThetaBox([0.0, -1.0], [2.0, 1.0])
    flat = ThetaPrior.flat(box)
    assert flat.logpdf([1.0, 0.0]) == pytest.approx(-np.log(4.0))
    assert flat.logpdf([3.0, 0.0]) == -np.inf
    with pytest.raises(DataError):
        ThetaPrior.normal(box, [0, 0], [1.0, 0.0])


def test_truncated_normal_prior_integrates_to_one():
    box = ThetaBox([-1.0], [3.0])
    prior = ThetaPrior.normal(box, [0.5], [0.7])
    x = np.linspace(-1, 3, 40001)
    dens = np.exp(prior.logpdf(x[:, None]))
    assert np.trapezoid(dens, x) == pytest.approx(1.0, abs=1e-6)


def test_hyperparameter_invariants():
    with pytest.raises(DataError):
        Hyperparameters([0.1, 0.0], np.eye(2))
    with pytest.raises(DataError):
        Hyperparameters([0.1, 0.1], [[1.0, 0.5], [0.4, 1.0]])
    with pytest.raises(DataError):
        Hyperparameters([0.1, 0.1], [[1.0, 2.0], [2.0, 1.0]])
    h = Hyperparameters.identity([0.1, 0.5])
    assert h.is_diagonal and h.p == 2


def test_load_dataset_three_rows(tmp_path):
    f = tmp_path / "d.csv"
    f.write_text("y1,y2\n0,1\n1,2\n2,3\n")
    d = load_dataset(f, ["y1", "y2"])
    assert (d.n, d.q) == (3, 2)
    assert np.array_equal(d.values[:, 0], [0, 1, 2])


def test_load_dataset_errors(tmp_path):
    with pytest.raises(DataError, match="no such file"):
        load_dataset(tmp_path / "missing.csv")
    f = tmp_path / "d.csv"
    f.write_text("y1,y2\n0,1\n1,NaN\n")
    with pytest.raises(DataError, match=r"row 2, column 'y2'"):
        load_dataset(f)
    f.write_text("y1,y2\n0,abc\n")
    with pytest.raises(DataError, match=r"row 1, column 'y2'"):
        load_dataset(f)
    with pytest.raises(DataError, match="header"):
        load_dataset(f, ["a", "b"])


def test_generated_example_5_2_round_trip(tmp_path):
    data = gen_example_5_2(200, 4)
    save_dataset(data, tmp_path / "g.csv")
    back = load_dataset(tmp_path / "g.csv", ["y1", "y2", "x1", "x2", "z1", "z2"])
    assert back.q == 6
    assert np.array_equal(back.values, data.values)


def test_interval_mean_moment_mean():
    data = Dataset(np.array([[-1.0, 4.0], [1.0, 6.0]]), ("y1", "y2"))
    model = make_interval_mean_model()
    assert np.allclose(sample_moment_mean(model, data, [2.5]), [2.5, 2.5])


def test_affine_at_zero_is_bbar():
    data = gen_example_5_2(100, 1)
    model = make_interval_regression_model(2, 2)
    A, b = model.averaged_terms(data)
    assert np.allclose(sample_moment_mean(model, data, [0.0, 0.0]), b)


def test_example_5_2_moment_mean_matches_loop_oracle():
    data = gen_example_5_2(500, 11)
    model = make_interval_regression_model(2, 2)
    theta = np.array([1.0, 1.0])
    acc = np.zeros(4)
    for row in data.values:
        y1, y2, x1, x2, z1, z2 = row
        xt = x1 * theta[0] + x2 * theta[1]
        acc += [z1 * (xt - y1), z1 * (y2 - xt), z2 * (xt - y1), z2 * (y2 - xt)]
    assert np.allclose(sample_moment_mean(model, data, theta), acc / data.n, rtol=0, atol=1e-12)


def test_builders_plug_in():
    one = Dataset(np.array([[1.0, 3.0]]), ("y1", "y2"))
    assert np.allclose(make_interval_mean_model().moments(one, [2.0]), [[1.0, 1.0]])
    miss = Dataset(np.array([[0.4, 1.0]]), ("zy", "z"))
    assert np.allclose(make_missing_data_model().moments(miss, [0.4]), [[0.0, 0.0]])
    reg = make_interval_regression_model(2, 2)
    assert (reg.p, reg.d) == (4, 2)
    with pytest.raises((DataError, ValueError)):
        make_interval_regression_model(0, 2)


def test_mean_bounds_model_orientation():
    model = make_mean_bounds_model([("y1", "upper"), ("y2", "lower")])
    data = Dataset(np.array([[-1.0, 1.0]]), ("y1", "y2"))
    # upper: E y >= theta -> y - theta; lower: E y <= theta -> theta - y
    assert np.allclose(model.moments(data, [0.5]), [[-1.5, -0.5]])


def test_generic_model_matches_affine():
    affine = make_interval_mean_model()
    generic = MomentModel(2, 1, ("y1", "y2"), "generic",
                          evaluator=lambda c, th: np.column_stack([c["y2"] - th[0], th[0] - c["y1"]]))
    data = Dataset(np.random.default_rng(0).normal(size=(20, 2)), ("y1", "y2"))
    assert np.allclose(generic.moments(data, [0.3]), affine.moments(data, [0.3]))


def test_dimension_mismatch():
    data = Dataset(np.ones((3, 2)), ("y1", "y2"))
    with pytest.raises(DataError):
        sample_moment_mean(make_interval_mean_model(), data, [1.0, 2.0])


theta2 = st.lists(st.floats(-50, 50), min_size=2, max_size=2)


@given(theta2, theta2, st.floats(-3, 3))
def test_affine_superposition(t1, t2, c):
    data = gen_example_5_2(30, 0)
    model = make_interval_regression_model(2, 2)
    t1, t2 = np.array(t1), np.array(t2)
    lhs = model.moments(data, c * t1 + (1 - c) * t2)
    rhs = c * model.moments(data, t1) + (1 - c) * model.moments(data, t2)
    scale = 1.0 + np.abs(lhs).max() + abs(c) * np.abs(model.moments(data, t1)).max()
    assert np.allclose(lhs, rhs, rtol=0, atol=1e-12 * scale * 10)


@given(st.integers(0, 2**32 - 1))
def test_moment_mean_permutation_invariant(seed):
    data = gen_example_5_2(40, 3)
    perm = np.random.default_rng(seed).permutation(data.n)
    model = make_interval_regression_model(2, 2)
    a = sample_moment_mean(model, data, [0.7, -0.2])
    b = sample_moment_mean(model, data.take(perm), [0.7, -0.2])
    assert np.allclose(a, b, rtol=0, atol=1e-12)
