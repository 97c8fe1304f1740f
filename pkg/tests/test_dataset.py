"""CSV ingestion and standardization contracts."""

import numpy as np
import pytest

from thingp.dataset import CsvSchema, Dataset, destandardize, load_csv, standardize
from thingp.errors import DataError


def write(tmp_path, text, name="d.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


class TestLoadCsv:
    def test_time_defaults_to_row_number(self, tmp_path):
        path = write(tmp_path, "speed,power\n1.0,10\n2.0,20\n3.0,30\n")
        ds = load_csv(path, CsvSchema(response="power"))
        np.testing.assert_array_equal(ds.t, [1.0, 2.0, 3.0])
        assert ds.time_synthesized

    def test_constant_column_dropped(self, tmp_path):
        path = write(tmp_path, "a,Ts,y\n1,5,1\n2,5,2\n3,5,4\n")
        with pytest.warns(UserWarning, match="Ts"):
            ds = load_csv(path, CsvSchema(response="y"))
        assert ds.colnames == ("a",)
        assert ds.d == 1

    def test_missing_response_row_dropped(self, tmp_path):
        path = write(tmp_path, "a,y\n1,1\n2,\n3,4\n")
        ds = load_csv(path, CsvSchema(response="y"))
        assert ds.n == 2
        assert ds.dropped_rows == 1

    def test_na_token_is_missing(self, tmp_path):
        path = write(tmp_path, "a,y\n1,1\nNA,2\n3,4\n")
        ds = load_csv(path, CsvSchema(response="y"))
        assert ds.n == 2

    def test_missing_column_is_schema_error(self, tmp_path):
        path = write(tmp_path, "a,y\n1,1\n2,3\n")
        with pytest.raises(DataError, match="absent"):
            load_csv(path, CsvSchema(response="power"))

    def test_zero_usable_rows(self, tmp_path):
        path = write(tmp_path, "a,y\n,\n,\n")
        with pytest.raises(DataError, match="no usable rows"):
            load_csv(path, CsvSchema(response="y"))

    def test_rows_sorted_by_time(self, tmp_path):
        path = write(tmp_path, "a,y,tt\n9,90,3\n7,70,1\n8,80,2\n")
        ds = load_csv(path, CsvSchema(response="y", time="tt"))
        np.testing.assert_array_equal(ds.x[:, 0], [7, 8, 9])
        np.testing.assert_array_equal(ds.t, [1, 2, 3])

    def test_duplicate_times_become_ranks(self, tmp_path):
        path = write(tmp_path, "a,y,tt\n7,70,1\n8,80,1\n9,90,2\n")
        ds = load_csv(path, CsvSchema(response="y", time="tt"))
        np.testing.assert_array_equal(ds.t, [1.0, 2.0, 3.0])
        np.testing.assert_array_equal(ds.x[:, 0], [7, 8, 9])  # stable over ties

    def test_sort_preserves_row_association(self, tmp_path):
        rng = np.random.default_rng(3)
        n = 200
        t = rng.permutation(n).astype(float)
        a = rng.normal(size=n)
        y = 2.0 * a + t
        lines = ["a,y,tt"] + [f"{a[i]},{y[i]},{t[i]}" for i in range(n)]
        ds = load_csv(write(tmp_path, "\n".join(lines) + "\n"), CsvSchema(response="y", time="tt"))
        np.testing.assert_allclose(ds.y, 2.0 * ds.x[:, 0] + ds.t, rtol=1e-12)


class TestStandardize:
    def test_two_point_response(self):
        ds = Dataset(x=np.array([[0.0], [1.0]]), y=np.array([1.0, 3.0]), t=np.array([1.0, 2.0]))
        out, _ = standardize(ds)
        np.testing.assert_allclose(out.y, [-0.7071067811865475, 0.7071067811865475], rtol=1e-15)

    def test_idempotent_within_tolerance(self):
        rng = np.random.default_rng(8)
        ds = Dataset(x=rng.normal(size=(50, 2)), y=rng.normal(size=50),
                     t=np.arange(1.0, 51.0))
        once, _ = standardize(ds)
        twice, _ = standardize(once)
        np.testing.assert_allclose(twice.x, once.x, atol=1e-12)
        np.testing.assert_allclose(twice.y, once.y, atol=1e-12)

    def test_zero_variance_column_dropped(self):
        ds = Dataset(x=np.array([[2.0, 1.0], [2.0, 2.0], [2.0, 4.0]]),
                     y=np.array([1.0, 2.0, 3.0]), t=np.array([1.0, 2.0, 3.0]))
        with pytest.warns(UserWarning):
            out, _ = standardize(ds)
        assert out.d == 1

    def test_round_trip(self):
        rng = np.random.default_rng(21)
        ds = Dataset(x=rng.normal(size=(64, 3)) * 5 + 2, y=rng.normal(size=64) * 10 - 4,
                     t=np.arange(1.0, 65.0))
        std_ds, std = standardize(ds)
        back = destandardize(std_ds, std)
        np.testing.assert_allclose(back.x, ds.x, rtol=1e-10)
        np.testing.assert_allclose(back.y, ds.y, rtol=1e-10)

    def test_mean_zero_sd_one(self):
        rng = np.random.default_rng(2)
        ds = Dataset(x=rng.normal(size=(100, 4)) * 3, y=rng.normal(size=100) * 7,
                     t=np.arange(1.0, 101.0))
        out, _ = standardize(ds)
        np.testing.assert_allclose(out.x.mean(axis=0), 0.0, atol=1e-12)
        np.testing.assert_allclose(out.x.std(axis=0, ddof=1), 1.0, rtol=1e-12)
        assert out.y.mean() == pytest.approx(0.0, abs=1e-12)
        assert out.y.std(ddof=1) == pytest.approx(1.0, rel=1e-12)


class TestDatasetInvariants:
    def test_arrays_read_only(self):
        ds = Dataset(x=np.array([[1.0]]), y=np.array([2.0]), t=np.array([1.0]))
        with pytest.raises(ValueError):
            ds.y[0] = 5.0

    def test_nonfinite_rejected(self):
        with pytest.raises(DataError):
            Dataset(x=np.array([[np.nan]]), y=np.array([1.0]), t=np.array([1.0]))

    def test_nonincreasing_time_rejected(self):
        with pytest.raises(DataError):
            Dataset(x=np.array([[1.0], [2.0]]), y=np.array([1.0, 2.0]),
                    t=np.array([2.0, 1.0]))
