import math

import numpy as np
import pytest

from dstcgcn import data as dio
from dstcgcn.errors import ContractError, DataError, ParseError


def write(tmp_path, text, name="series.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_load_csv_shape(tmp_path):
    path = write(tmp_path, "a,b\n1,2\n3,4\n5,6\n")
    raw = dio.load_csv(path)
    assert raw.values.shape == (3, 2, 1)
    assert raw.node_ids == ["a", "b"]


def test_load_csv_missing_cell_marked(tmp_path):
    path = write(tmp_path, "a,b\n1,\n3,4\n")
    raw = dio.load_csv(path)
    assert np.isnan(raw.values[0, 1, 0])
    assert raw.values[1, 0, 0] == 3.0


def test_load_csv_nan_literal_marked(tmp_path):
    path = write(tmp_path, "a\nNaN\n2\n")
    raw = dio.load_csv(path)
    assert np.isnan(raw.values[0, 0, 0])


def test_load_csv_header_only_fails(tmp_path):
    path = write(tmp_path, "a,b\n")
    with pytest.raises(ParseError, match="no data rows"):
        dio.load_csv(path)


def test_load_csv_ragged_row_names_line(tmp_path):
    path = write(tmp_path, "a,b\n1,2\n3\n")
    with pytest.raises(ParseError, match=":3"):
        dio.load_csv(path)


def test_save_load_round_trip(tmp_path, rng):
    raw = dio.RawSeries(rng.normal(size=(7, 3, 1)), node_ids=["x", "y", "z"])
    path = tmp_path / "rt.csv"
    dio.save_csv(raw, path)
    back = dio.load_csv(path)
    assert np.array_equal(back.values, raw.values)


def test_interpolate_midpoint():
    raw = dio.RawSeries(np.array([[1.0], [np.nan], [3.0]]), node_ids=["a"])
    out = dio.interpolate_missing(raw)
    assert out.values[:, 0, 0].tolist() == [1.0, 2.0, 3.0]


def test_interpolate_edges_extend():
    raw = dio.RawSeries(np.array([[np.nan], [5.0], [6.0]]), node_ids=["a"])
    out = dio.interpolate_missing(raw)
    assert out.values[:, 0, 0].tolist() == [5.0, 5.0, 6.0]


def test_interpolate_equal_spacing():
    raw = dio.RawSeries(np.array([[1.0], [np.nan], [np.nan], [4.0]]),
                        node_ids=["a"])
    out = dio.interpolate_missing(raw)
    assert np.allclose(out.values[:, 0, 0], [1.0, 2.0, 3.0, 4.0])


def test_interpolate_fully_missing_names_node():
    raw = dio.RawSeries(np.array([[np.nan, 1.0], [np.nan, 2.0]]),
                        node_ids=["bad", "good"])
    with pytest.raises(DataError, match="bad"):
        dio.interpolate_missing(raw)


def test_zscore_hand_computed():
    values = np.array([[1.0], [2.0], [3.0]])[:, :, None]
    stats = dio.fit_zscore(values)
    assert stats.mean[0, 0] == 2.0
    assert abs(stats.std[0, 0] - math.sqrt(2.0 / 3.0)) < 1e-15
    normalized = dio.apply_zscore(values, stats)
    expected = (np.array([1.0, 2.0, 3.0]) - 2.0) / math.sqrt(2.0 / 3.0)
    assert np.allclose(normalized[:, 0, 0], expected, atol=1e-12)


def test_zscore_constant_series_clamped():
    values = np.full((4, 1, 1), 5.0)
    stats = dio.fit_zscore(values)
    assert np.array_equal(dio.apply_zscore(values, stats), np.zeros((4, 1, 1)))


def test_zscore_round_trip(rng):
    values = rng.normal(size=(50, 4, 2)) * 13.0 + 7.0
    stats = dio.fit_zscore(values)
    back = dio.invert_zscore(dio.apply_zscore(values, stats), stats)
    assert np.all(np.abs(back - values) <= 1e-10)


@pytest.mark.parametrize("total,ratios,lengths", [
    (100, (6, 2, 2), (60, 20, 20)),
    (100, (7, 1, 2), (70, 10, 20)),
    (10, (6, 2, 2), (6, 2, 2)),
])
def test_chronological_split_lengths(rng, total, ratios, lengths):
    raw = dio.RawSeries(rng.normal(size=(total, 2, 1)), node_ids=["a", "b"])
    segments = dio.chronological_split(raw, ratios)
    assert tuple(s.n_steps for s in segments) == lengths
    joined = np.concatenate([s.values for s in segments])
    assert np.array_equal(joined, raw.values)


def test_chronological_split_too_short():
    raw = dio.RawSeries(np.zeros((30, 1, 1)), node_ids=["a"])
    with pytest.raises(DataError, match="segment too short"):
        dio.chronological_split(raw, (6, 2, 2), min_segment=24)


@pytest.mark.parametrize("length,expected", [(30, 7), (24, 1)])
def test_window_count(rng, length, expected):
    segment = rng.normal(size=(length, 3, 1))
    batches = list(dio.window_dataset(segment, 12, 12, batch_size=100))
    n = sum(b.inputs.shape[0] for b in batches)
    assert n == expected


def test_window_too_short():
    with pytest.raises(DataError, match="segment too short"):
        list(dio.window_dataset(np.zeros((20, 2, 1)), 12, 12, 4))


def test_windows_do_not_leak(rng):
    segment = rng.normal(size=(40, 2, 1))
    for batch in dio.window_dataset(segment, 5, 3, 8):
        for i, s in enumerate(batch.window_start_indices):
            assert np.array_equal(batch.inputs[i], segment[s:s + 5])
            assert np.array_equal(batch.targets[i], segment[s + 5:s + 8])


def test_window_shuffle_deterministic(rng):
    segment = rng.normal(size=(60, 2, 1))
    a = [b.window_start_indices.tolist()
         for b in dio.window_dataset(segment, 5, 3, 8, shuffle_seed=4)]
    b = [b.window_start_indices.tolist()
         for b in dio.window_dataset(segment, 5, 3, 8, shuffle_seed=4)]
    assert a == b
    c = [b.window_start_indices.tolist()
         for b in dio.window_dataset(segment, 5, 3, 8, shuffle_seed=5)]
    assert a != c


def test_train_windows_end_before_validation(rng):
    raw = dio.RawSeries(rng.normal(size=(200, 2, 1)), node_ids=["a", "b"])
    segments = dio.chronological_split(raw, (6, 2, 2))
    offsets = dio.split_offsets(200, (6, 2, 2))
    t_in, horizon = 12, 12
    last = max(
        int(b.window_start_indices.max())
        for b in dio.window_dataset(segments[0].values, t_in, horizon, 16,
                                    start_offset=offsets[0]))
    assert last + t_in + horizon <= offsets[1]


def test_synth_deterministic():
    a = dio.synth_generate(5, 600, seed=9)
    b = dio.synth_generate(5, 600, seed=9)
    assert np.array_equal(a.values, b.values)
    c = dio.synth_generate(5, 600, seed=10)
    assert not np.array_equal(a.values, c.values)


def test_synth_pure_sinusoid_is_periodic():
    cfg = dio.SynthConfig(noise=0.0, coupling=0.0)
    raw = dio.synth_generate(4, 900, seed=3, config=cfg)
    assert np.allclose(raw.values[:900 - 288], raw.values[288:], atol=1e-9)


def test_synth_lag_recovery_by_brute_force_correlation():
    # amplitude 0 isolates the AR(1) component; the coupled copy of the
    # source node's noise makes the lagged correlation peak at the set lag
    cfg = dio.SynthConfig(amplitude=0.0, noise=1.0, ar=0.7, coupling=0.5, lag=2)
    raw = dio.synth_generate(6, 3000, seed=21, config=cfg)
    rng_check = np.random.default_rng(21)
    rng_check.uniform(20.0, 50.0, size=6)           # amps draw
    rng_check.uniform(0.0, 2.0 * np.pi, size=6)     # phases draw
    sources = np.array([rng_check.choice([m for m in range(6) if m != n])
                        for n in range(6)])
    x = raw.values[:, :, 0] - raw.values[:, :, 0].mean(axis=0)
    node = 0
    src = int(sources[node])
    best_lag, best_corr = None, -np.inf
    for lag in range(0, 6):
        a = x[lag:, node]
        b = x[:x.shape[0] - lag, src]
        corr = float(np.mean(a * b))
        if corr > best_corr:
            best_lag, best_corr = lag, corr
    assert best_lag == 2


def test_synth_rejects_tiny_inputs():
    with pytest.raises(ContractError):
        dio.synth_generate(1, 600, seed=0)
    with pytest.raises(ContractError):
        dio.synth_generate(5, 100, seed=0)
