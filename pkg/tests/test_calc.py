import numpy as np
import pandas as pd
import pytest

from errors import ValidationError
from indicators.calc import expected_counts, smr


def test_expected_counts_preserve_column_totals():
    rng = np.random.default_rng(0)
    observed = rng.poisson(30, size=(12, 3)).astype(float)
    population = rng.uniform(1e3, 1e5, size=(12, 3))
    expected = expected_counts(observed, population)
    np.testing.assert_allclose(expected.sum(axis=0), observed.sum(axis=0), rtol=1e-9)
    rates = expected / population
    np.testing.assert_allclose(rates, np.broadcast_to(rates[0], rates.shape), rtol=1e-12)


def test_missing_observations_take_no_part_in_the_rate():
    observed = np.array([[10.0, 1.0], [np.nan, 3.0], [30.0, 4.0]])
    population = np.array([[100.0, 10.0], [1e6, 10.0], [100.0, 20.0]])
    expected = expected_counts(observed, population)
    assert expected[0, 0] == pytest.approx(20.0)
    assert expected[1, 0] == pytest.approx(0.2 * 1e6)
    np.testing.assert_allclose(expected[:, 1], [2.0, 2.0, 4.0])


def test_data_frames_keep_their_labels():
    observed = pd.DataFrame({"74": [1.0, 3.0], "79": [2.0, 2.0]}, index=["a", "b"])
    population = pd.DataFrame({"74": [10.0, 10.0], "79": [5.0, 15.0]}, index=["a", "b"])
    expected = expected_counts(observed, population)
    assert list(expected.columns) == ["74", "79"]
    assert list(expected.index) == ["a", "b"]
    np.testing.assert_allclose(expected.to_numpy(), [[2.0, 1.0], [2.0, 3.0]])


def test_zero_population_is_rejected():
    with pytest.raises(ValidationError):
        expected_counts(np.array([[1.0], [2.0]]), np.array([[0.0], [5.0]]))
    with pytest.raises(ValidationError):
        expected_counts(np.ones((2, 2)), np.ones((3, 2)))


def test_smr_is_the_ratio():
    rng = np.random.default_rng(1)
    observed = rng.poisson(5, size=(4, 2)).astype(float)
    expected = rng.uniform(1, 10, size=(4, 2))
    np.testing.assert_array_equal(smr(observed, expected), observed / expected)
