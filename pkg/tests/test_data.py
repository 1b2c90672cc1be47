import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from socketplug.data import (ETT_RATIOS, RawSeries, SynthSpec, ZScoreScaler, default_ratios,
                             generate_synthetic, load_csv, make_windows, prepare_dataset,
                             read_tensor, save_csv, split_chronological, write_tensor)
from socketplug.exceptions import ConfigError, FormatError, IngestionError

ETTH1_ROWS = 17420  # hourly rows in the public ETTh1 file


class TestLoadCsv:
    def test_shape(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text("date,x,y\n2020-01-01,1.0,2\n2020-01-02,3,4.5\n2020-01-03,5,6\n")
        s = load_csv(p)
        assert s.values.shape == (3, 2)
        assert s.variable_names == ["x", "y"]
        assert s.timestamps[0] == "2020-01-01"
        assert s.name == "a"

    def test_without_time_column(self, tmp_path):
        p = tmp_path / "b.csv"
        p.write_text("x,y\n1,2\n3,4\n")
        assert load_csv(p).values.tolist() == [[1, 2], [3, 4]]

    def test_nan_cell_named(self, tmp_path):
        p = tmp_path / "c.csv"
        p.write_text("x,y\n1,2\n3,nan\n")
        with pytest.raises(IngestionError, match="y"):
            load_csv(p)

    def test_non_numeric_cell(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("x,y\n1,2\n3,abc\n")
        with pytest.raises(IngestionError, match="abc"):
            load_csv(p)

    def test_ragged_row(self, tmp_path):
        p = tmp_path / "e.csv"
        p.write_text("x,y\n1,2\n3\n")
        with pytest.raises(IngestionError):
            load_csv(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(IngestionError):
            load_csv(tmp_path / "nope.csv")

    def test_round_trip(self, tmp_path):
        s = generate_synthetic(SynthSpec([24, 48], [0.1, 0.2], length=50))
        save_csv(s, tmp_path / "s.csv")
        back = load_csv(tmp_path / "s.csv")
        assert np.array_equal(back.values, s.values)


class TestSplit:
    def test_seventy_ten_twenty(self):
        r = split_chronological(100, (0.7, 0.1, 0.2))
        assert r == {"train": (0, 70), "val": (70, 80), "test": (80, 100)}

    def test_ratios_must_sum_to_one(self):
        with pytest.raises(ConfigError):
            split_chronological(100, (0.6, 0.1, 0.2))

    def test_ett_convention(self):
        assert default_ratios("ETTh1") == ETT_RATIOS
        assert default_ratios("weather") == (0.7, 0.1, 0.2)

    def test_ett_sized_split_admits_windows(self):
        r = split_chronological(ETTH1_ROWS, ETT_RATIOS, 96, 96)
        counts = {k: (b - a) - 192 + 1 for k, (a, b) in r.items()}
        assert counts == {"train": 10261, "val": 3293, "test": 3293}

    def test_short_split(self):
        with pytest.raises(ConfigError, match="T\\+S"):
            split_chronological(100, (0.7, 0.1, 0.2), T=8, S=4)

    @given(st.integers(50, 5000), st.floats(0.3, 0.8), st.floats(0.05, 0.15))
    def test_contiguous_cover(self, n, a, b):
        r = split_chronological(n, (a, b, 1 - a - b))
        assert r["train"][0] == 0 and r["test"][1] == n
        assert r["train"][1] == r["val"][0] and r["val"][1] == r["test"][0]


class TestWindows:
    def test_count(self):
        assert len(make_windows(np.zeros((10, 1)), 3, 2)) == 6

    def test_exact_length(self):
        assert len(make_windows(np.zeros((5, 2)), 3, 2)) == 1

    @given(st.integers(5, 80), st.integers(1, 6), st.integers(1, 6), st.integers(1, 4))
    def test_count_formula_and_contiguity(self, n, T, S, stride):
        if n < T + S:
            return
        vals = np.arange(n, dtype=np.float64)[:, None]
        w = make_windows(vals, T, S, stride)
        assert len(w) == (n - T - S) // stride + 1
        # Y starts right after X
        assert np.array_equal(w.Y[:, 0, 0], w.X[:, 0, -1] + 1)

    def test_too_short(self):
        with pytest.raises(ConfigError):
            make_windows(np.zeros((4, 1)), 3, 2)

    def test_ramp_normalization(self):
        s = RawSeries(["r"], np.arange(100.0)[:, None], name="ramp")
        ds = prepare_dataset(s, T=3, S=2)
        mean, std = 34.5, np.sqrt((70 ** 2 - 1) / 12)  # rows 0..69 form the train split
        first = ds.windows["train"][0]
        np.testing.assert_allclose(first.X[0], (np.array([0, 1, 2]) - mean) / std, rtol=1e-6)
        np.testing.assert_allclose(first.Y[0], (np.array([3, 4]) - mean) / std, rtol=1e-6)

    def test_windows_stay_inside_splits(self):
        s = RawSeries(["r"], np.arange(200.0)[:, None], name="ramp")
        ds = prepare_dataset(s, T=5, S=3)
        for split, (a, b) in ds.ranges.items():
            w = ds.windows[split]
            assert w.origins.min() == a
            assert w.origins.max() + 8 == b


class TestScaler:
    @settings(max_examples=30, deadline=None)
    @given(hnp.arrays(np.float64, (60, 3), elements=st.floats(-100, 100)))
    def test_train_split_standardized(self, X):
        if (X.std(axis=0) < 1e-3).any():
            return
        Z = ZScoreScaler().fit(X).transform(X)
        assert np.abs(Z.mean(axis=0)).max() < 1e-6
        assert np.abs(Z.std(axis=0) - 1).max() < 1e-4

    def test_constant_column_rejected(self):
        X = np.ones((10, 2))
        X[:, 0] = np.arange(10)
        with pytest.raises(ConfigError, match="constant"):
            ZScoreScaler().fit(X)

    def test_inverse(self, rng):
        X = rng.normal(3, 2, (20, 4))
        sc = ZScoreScaler().fit(X)
        np.testing.assert_allclose(sc.inverse_transform(sc.transform(X)), X)


class TestSynthetic:
    def test_pure_sinusoids(self):
        s = generate_synthetic(SynthSpec([24, 48], [0.0, 0.0], length=480))
        v = s.values
        np.testing.assert_allclose(v[24:, 0], v[:-24, 0], atol=1e-12)
        np.testing.assert_allclose(v[48:, 1], v[:-48, 1], atol=1e-12)

    def test_deterministic(self):
        spec = SynthSpec([24, 32], [0.3, 0.1], rho=0.2, length=300, seed=9)
        assert np.array_equal(generate_synthetic(spec).values, generate_synthetic(spec).values)

    def test_noise_std(self):
        sds = [0.05, 0.4, 1.0]
        n = 100_000
        s = generate_synthetic(SynthSpec([24, 24, 24], sds, length=n, seed=2))
        t = np.arange(n)
        resid = s.values - np.sin(2 * np.pi * t / 24)[:, None]
        np.testing.assert_allclose(resid.std(axis=0), sds, rtol=0.02)

    @pytest.mark.parametrize("kw", [dict(periods=[1], noise_std=[0.1]),
                                    dict(periods=[4], noise_std=[-0.1]),
                                    dict(periods=[4], noise_std=[0.1], rho=1.0),
                                    dict(periods=[4, 5], noise_std=[0.1])])
    def test_invalid_spec(self, kw):
        with pytest.raises(ConfigError):
            SynthSpec(**kw)


class TestTensorFile:
    @settings(max_examples=30, deadline=None)
    @given(hnp.arrays(np.float32, hnp.array_shapes(min_dims=1, max_dims=4, max_side=5),
                      elements=st.floats(-1e6, 1e6, width=32)))
    def test_round_trip(self, tmp_path_factory, arr):
        p = tmp_path_factory.mktemp("t") / "a.sopt"
        write_tensor(p, arr)
        back = read_tensor(p)
        assert back.dtype == np.float32 and back.shape == arr.shape
        assert back.tobytes() == arr.tobytes()

    def test_file_size(self, tmp_path):
        p = tmp_path / "k.sopt"
        write_tensor(p, np.full((2, 3), 7.0, np.float32))
        assert p.stat().st_size == 16 + 2 * 4 + 24

    def test_little_endian_layout(self, tmp_path):
        p = tmp_path / "k.sopt"
        write_tensor(p, np.array([[1.0, 2.0]], np.float32))
        blob = p.read_bytes()
        assert blob[:4] == b"SOPT"
        assert struct.unpack_from("<III", blob, 4)[:2] == (1, 2)
        assert struct.unpack_from("<II", blob, 16) == (1, 2)
        assert struct.unpack_from("<2f", blob, 24) == (1.0, 2.0)

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "k.sopt"
        write_tensor(p, np.zeros(3, np.float32))
        p.write_bytes(b"XXXX" + p.read_bytes()[4:])
        with pytest.raises(FormatError):
            read_tensor(p)

    def test_bad_version(self, tmp_path):
        p = tmp_path / "k.sopt"
        write_tensor(p, np.zeros(3, np.float32))
        blob = bytearray(p.read_bytes())
        blob[4] = 9
        p.write_bytes(bytes(blob))
        with pytest.raises(FormatError):
            read_tensor(p)

    def test_truncated(self, tmp_path):
        p = tmp_path / "k.sopt"
        write_tensor(p, np.zeros((4, 4), np.float32))
        p.write_bytes(p.read_bytes()[:-3])
        with pytest.raises(FormatError):
            read_tensor(p)
