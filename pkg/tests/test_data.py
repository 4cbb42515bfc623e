import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pdml.data import CrossFit, Dataset, SingleSplit, load_csv, save_csv, split
from pdml.errors import ConfigError, ContractError, CsvParseError, SchemaError
from pdml.seeds import generator


def make_csv(tmp_path, text, name="data.csv"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


class TestDataset:
    def test_basic_construction(self):
        ds = Dataset(y=np.arange(4.0), d=np.ones(4), x=np.ones((4, 2)))
        assert ds.n == 4 and ds.p == 2

    def test_too_few_rows(self):
        with pytest.raises(ContractError):
            Dataset(y=np.ones(3), d=np.ones(3), x=np.ones((3, 1)))

    def test_row_mismatch(self):
        with pytest.raises(ContractError):
            Dataset(y=np.ones(4), d=np.ones(5), x=np.ones((4, 1)))

    def test_nonfinite_rejected(self):
        y = np.ones(4)
        y[2] = np.nan
        with pytest.raises(ContractError):
            Dataset(y=y, d=np.ones(4), x=np.ones((4, 1)))

    def test_immutable(self):
        ds = Dataset(y=np.arange(4.0), d=np.ones(4), x=np.ones((4, 2)))
        with pytest.raises(ValueError):
            ds.y[0] = 7.0


class TestLoadCsv:
    def test_four_row_file(self, tmp_path):
        path = make_csv(tmp_path, "y,d,x1,x2\n1,0,0.5,2\n2,1,0.25,3\n3,0,0.1,4\n4,1,0.9,5\n")
        ds = load_csv(path, "y", "d")
        assert ds.n == 4 and ds.p == 2
        assert ds.labels == ("x1", "x2")
        np.testing.assert_array_equal(ds.y, [1, 2, 3, 4])
        np.testing.assert_array_equal(ds.x[:, 1], [2, 3, 4, 5])

    def test_missing_y_column(self, tmp_path):
        path = make_csv(tmp_path, "a,d,x1\n1,0,2\n")
        with pytest.raises(SchemaError, match="'y'"):
            load_csv(path, "y", "d")

    def test_na_cell_cites_row(self, tmp_path):
        path = make_csv(tmp_path, "y,d,x1\n1,0,2\n2,1,3\nNA,0,4\n5,1,6\n")
        with pytest.raises(CsvParseError, match="row 3"):
            load_csv(path, "y", "d")

    def test_column_order_preserved(self, tmp_path):
        path = make_csv(tmp_path, "x2,y,x1,d\n9,1,8,0\n7,2,6,1\n5,3,4,0\n3,4,2,1\n")
        ds = load_csv(path, "y", "d")
        assert ds.labels == ("x2", "x1")
        np.testing.assert_array_equal(ds.x[0], [9, 8])

    def test_round_trip_exact(self, tmp_path, rng):
        ds = Dataset(
            y=rng.standard_normal(8) * 1e3,
            d=rng.standard_normal(8) / 1e7,
            x=rng.standard_normal((8, 3)),
        )
        out = tmp_path / "roundtrip.csv"
        save_csv(ds, out)
        back = load_csv(out, "y", "d")
        np.testing.assert_array_equal(back.y, ds.y)
        np.testing.assert_array_equal(back.d, ds.d)
        np.testing.assert_array_equal(back.x, ds.x)


class TestSplit:
    def test_single_split_even(self, rng):
        fs = split(10, SingleSplit(), rng)
        assert [len(f) for f in fs.folds] == [5, 5]

    def test_single_split_odd_extra_to_eval(self, rng):
        fs = split(11, SingleSplit(), rng)
        assert [len(f) for f in fs.folds] == [6, 5]

    def test_crossfit_sizes(self, rng):
        fs = split(9, CrossFit(3), rng)
        assert sorted(len(f) for f in fs.folds) == [3, 3, 3]

    def test_determinism(self):
        a = split(20, CrossFit(4), generator(7))
        b = split(20, CrossFit(4), generator(7))
        for fa, fb in zip(a.folds, b.folds):
            np.testing.assert_array_equal(fa, fb)

    def test_too_many_folds(self, rng):
        with pytest.raises(ConfigError):
            split(5, CrossFit(3), rng)

    @given(n=st.integers(4, 60), k=st.integers(2, 5), seed=st.integers(0, 2**20))
    @settings(max_examples=60, deadline=None)
    def test_partition_property(self, n, k, seed):
        if n < 2 * k:
            return
        fs = split(n, CrossFit(k), generator(seed))
        merged = np.sort(np.concatenate(fs.folds))
        np.testing.assert_array_equal(merged, np.arange(n))

    def test_complement(self, rng):
        fs = split(10, CrossFit(2), rng)
        np.testing.assert_array_equal(
            np.sort(np.concatenate([fs.folds[0], fs.complement(0)])), np.arange(10)
        )
