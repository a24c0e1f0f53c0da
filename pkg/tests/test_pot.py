import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gpdgam.pot import (
    CsvFormatError,
    EmptySampleError,
    RawTable,
    ThresholdSpec,
    apply_threshold,
    read_raw_csv,
    write_raw_csv,
)


def table(y, p=1, d=1, **extra):
    y = np.asarray(y, float)
    n = y.size
    return RawTable(y, np.zeros((n, p)), np.full((n, d), 0.5), {k: np.asarray(v, float) for k, v in extra.items()})


def test_constant_threshold():
    s = apply_threshold(table([1.0, 2.0, 3.0]), ThresholdSpec("constant", 1.5))
    np.testing.assert_array_equal(s.y, [0.5, 1.5])
    assert (s.n, s.N) == (2, 3)
    np.testing.assert_array_equal(s.x[:, 0], 1.0)


def test_quantile_threshold_count():
    y = np.random.default_rng(0).normal(size=1000)
    s = apply_threshold(table(y), ThresholdSpec.parse("quantile:0.9"))
    assert abs(s.n - 100) <= 1
    assert s.diagnostics() == []


def test_column_threshold():
    y = np.linspace(1, 5, 9)
    s = apply_threshold(table(y, tau=y - 1), ThresholdSpec.parse("column:tau"))
    np.testing.assert_allclose(s.y, 1.0)
    assert s.n == s.N


def test_strict_exceedances():
    s = apply_threshold(table([1.0, 2.0, 2.0, 3.0]), ThresholdSpec("constant", 2.0))
    np.testing.assert_array_equal(s.y, [1.0])


def test_empty():
    with pytest.raises(EmptySampleError):
        apply_threshold(table([1.0, 2.0]), ThresholdSpec("constant", 5.0))


def test_low_threshold_warning():
    s = apply_threshold(table(np.arange(10.0)), ThresholdSpec("constant", 0.5))
    assert s.exceedance_fraction == 0.9
    assert "n/N" in s.diagnostics()[0]


@pytest.mark.parametrize("text", ["quantile:1.2", "constant:-1", "median:3", "quantile", "column:"])
def test_bad_specs(text):
    with pytest.raises(ValueError):
        ThresholdSpec.parse(text)


@given(arrays(float, st.integers(5, 60), elements=st.floats(0, 100)), st.floats(0, 50), st.floats(0, 50))
def test_fraction_monotone_and_positive(y, w1, w2):
    lo, hi = sorted((w1, w2))
    fr = []
    for w in (lo, hi):
        try:
            s = apply_threshold(table(y), ThresholdSpec("constant", w))
        except EmptySampleError:
            fr.append(0.0)
            continue
        assert np.all(s.y > 0)
        fr.append(s.exceedance_fraction)
    assert fr[1] <= fr[0]


def test_csv_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    raw = RawTable(rng.exponential(size=20), rng.normal(size=(20, 2)), rng.uniform(size=(20, 3)),
                   {"tau": np.full(20, 0.1)})
    path = tmp_path / "d.csv"
    write_raw_csv(path, raw)
    back = read_raw_csv(path)
    np.testing.assert_array_equal(back.y, raw.y)
    np.testing.assert_array_equal(back.x, raw.x)
    np.testing.assert_array_equal(back.z, raw.z)
    np.testing.assert_array_equal(back.extra["tau"], raw.extra["tau"])


@pytest.mark.parametrize("body, needle", [
    ("x_1,z_1\n1,0.5\n", "missing required column 'y'"),
    ("y,z_1\n1,0.5\n2,oops\n", "line 3, column 'z_1'"),
    ("y,z_1\n1,0.5,7\n", "line 2"),
    ("y,x_1\n1,0.5\n", "z_1"),
    ("y,z_2\n1,0.5\n", "z_1"),
    ("y,z_1\n1,nan\n", "non-finite"),
    ("", "empty"),
])
def test_csv_errors(tmp_path, body, needle):
    path = tmp_path / "bad.csv"
    path.write_text(body)
    with pytest.raises(CsvFormatError, match=needle):
        read_raw_csv(path)
