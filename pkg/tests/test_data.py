"""Augmentation, windowing, sampling, dropping, scaling, the synthetic
generator, and CSV round trips, each checked by brute-force scans."""

import numpy as np
import pytest

from precede.data import (AugmentSpec, RawSequence, SynthConfig, augment,
                          augment_with_ids, denormalize, drop_observations, drop_samples,
                          generate_synthetic, load_csv, make_batch_samples, normalize,
                          save_csv, window_split)
from precede.spline import InputError, TimeSeriesWindow


def flat_sequence(n, n_channels=2, seed=0, flags=None):
    rng = np.random.default_rng(seed)
    return RawSequence(times=np.arange(n, dtype=float),
                       values=rng.normal(size=(n, n_channels)),
                       anomaly_flags=flags, source_name="test")


def is_subsequence(original: np.ndarray, augmented: np.ndarray) -> bool:
    i = 0
    for row in augmented:
        if i < len(original) and np.array_equal(row, original[i]):
            i += 1
    return i == len(original)


# ---------------------------------------------------------------------------
# augmentation


def test_augment_gamma_zero_is_identity():
    seq = flat_sequence(600)
    out = augment(seq, AugmentSpec(gamma=0.0, seed=1))
    np.testing.assert_array_equal(out.values, seq.values)
    np.testing.assert_array_equal(out.times, seq.times)
    assert not out.anomaly_flags.any()


def test_augment_ratio_lands_in_target_band():
    # ratio like the 55-channel flight dataset: about 10.72% implanted
    gamma, t_total = 0.1072, 10000
    seq = flat_sequence(t_total)
    out = augment(seq, AugmentSpec(gamma=gamma, seed=2))
    ratio = (out.n_obs - t_total) / t_total
    assert gamma < ratio <= gamma + 500 / t_total


def test_augment_flags_lengths_and_conservation():
    seq = flat_sequence(10000, seed=3)
    out, ids = augment_with_ids(seq, AugmentSpec(gamma=0.1, seed=3))
    ratio = (out.n_obs - seq.n_obs) / seq.n_obs
    assert ratio > 0.1
    # flags mark exactly the implants; originals stay unflagged
    np.testing.assert_array_equal(out.anomaly_flags, ids > 0)
    lengths = np.bincount(ids)[1:]
    assert lengths.min() >= 100 and lengths.max() <= 500
    # the original observations survive as a subsequence
    np.testing.assert_array_equal(out.values[ids == 0], seq.values)
    assert is_subsequence(seq.values, out.values)
    # every implanted row is a copy of some original row
    originals = {row.tobytes() for row in seq.values}
    assert all(row.tobytes() in originals for row in out.values[ids > 0])


def test_augment_times_stay_strictly_increasing_with_original_spacing():
    seq = flat_sequence(2000, seed=4)
    out = augment(seq, AugmentSpec(gamma=0.2, min_len=50, max_len=200, seed=4))
    diffs = np.diff(out.times)
    assert np.all(diffs > 0)
    np.testing.assert_allclose(diffs, 1.0)  # regular input keeps unit spacing


def test_augment_rejects_labeled_or_short_input():
    flagged = flat_sequence(900, flags=np.arange(900) % 7 == 0)
    with pytest.raises(InputError):
        augment(flagged, AugmentSpec(gamma=0.1))
    with pytest.raises(InputError):
        augment(flat_sequence(300), AugmentSpec(gamma=0.1))  # shorter than max_len
    with pytest.raises(InputError):
        AugmentSpec(gamma=1.0)


def test_augment_is_seed_deterministic():
    seq = flat_sequence(3000, seed=5)
    a = augment(seq, AugmentSpec(gamma=0.15, seed=77))
    b = augment(seq, AugmentSpec(gamma=0.15, seed=77))
    np.testing.assert_array_equal(a.values, b.values)
    np.testing.assert_array_equal(a.anomaly_flags, b.anomaly_flags)


# ---------------------------------------------------------------------------
# windowing and samples


def test_window_split_counts():
    assert len(window_split(flat_sequence(300), 30)) == 10
    assert len(window_split(flat_sequence(305), 30)) == 10  # trailing 5 dropped
    with pytest.raises(InputError):
        window_split(flat_sequence(100), 1)


def test_window_split_partition_and_labels():
    flags = np.zeros(300, dtype=bool)
    flags[95] = True  # inside window 3
    seq = flat_sequence(300, flags=flags, seed=6)
    windows = window_split(seq, 30)
    rebuilt = np.concatenate([w.values for w in windows])
    np.testing.assert_array_equal(rebuilt, seq.values[:300])
    for i, w in enumerate(windows):
        assert w.window_index == i
        assert w.label == int(flags[i * 30:(i + 1) * 30].any())
    assert [w.label for w in windows] == [0, 0, 0, 1, 0, 0, 0, 0, 0, 0]


def test_make_batch_samples_counts_and_teachers():
    seq = flat_sequence(300, seed=7)
    windows = window_split(seq, 30)
    samples = make_batch_samples(windows, poa_horizon=10)
    assert len(samples) == 9  # last window has no successor
    for i, s in enumerate(samples):
        assert s.window.window_index == i
        assert s.teacher_window.n_obs == 10
        np.testing.assert_array_equal(s.teacher_window.values, windows[i + 1].values[:10])
        # the teacher picks up exactly where the input window ends
        assert s.teacher_window.times[0] > s.window.times[-1]


def test_make_batch_samples_full_horizon_equals_next_window():
    windows = window_split(flat_sequence(120, seed=8), 30)
    samples = make_batch_samples(windows, poa_horizon=30)
    for i, s in enumerate(samples):
        np.testing.assert_array_equal(s.teacher_window.values, windows[i + 1].values)


def test_poa_labels_match_flag_scan():
    rng = np.random.default_rng(9)
    flags = rng.random(300) < 0.05
    seq = flat_sequence(300, flags=flags, seed=9)
    windows = window_split(seq, 30)
    p = 10
    samples = make_batch_samples(windows, p)
    for i, s in enumerate(samples):
        assert s.poa_label == int(flags[(i + 1) * 30:(i + 1) * 30 + p].any())
        assert s.label == int(flags[i * 30:(i + 1) * 30].any())


def test_horizon_one_keeps_a_valid_teacher_path():
    windows = window_split(flat_sequence(90, seed=10), 30)
    samples = make_batch_samples(windows, poa_horizon=1)
    assert all(s.teacher_window.n_obs == 2 for s in samples)


# ---------------------------------------------------------------------------
# dropping


def test_drop_zero_is_identity():
    w = window_split(flat_sequence(60, seed=11), 30)[0]
    assert drop_observations(w, 0.0, 1) is w


def test_drop_counts_and_order():
    w = TimeSeriesWindow(np.arange(60.0), np.random.default_rng(12).normal(size=(60, 2)))
    out = drop_observations(w, 0.5, seed=12)
    assert out.n_obs == 30
    assert np.all(np.diff(out.times) > 0)
    survivors = set(out.times.tolist())
    assert survivors <= set(w.times.tolist())


def test_drop_flags_travel_and_labels_recompute():
    flags = np.zeros(30, dtype=bool)
    flags[4] = True
    w = TimeSeriesWindow(np.arange(30.0), np.ones((30, 1)), anomaly_flags=flags)
    for seed in range(30):
        out = drop_observations(w, 0.7, seed=seed)
        kept_flagged = 4.0 in out.times
        assert out.label == int(kept_flagged)
        assert out.anomaly_flags.sum() == int(kept_flagged)


def test_drop_leaves_at_least_two():
    w = TimeSeriesWindow(np.arange(3.0), np.zeros((3, 1)))
    with pytest.raises(InputError):
        drop_observations(w, 0.7, seed=0)
    with pytest.raises(InputError):
        drop_observations(w, 1.0, seed=0)


def test_drop_samples_recomputes_poa_labels():
    flags = np.zeros(300, dtype=bool)
    flags[150:155] = True
    seq = flat_sequence(300, flags=flags, seed=13)
    samples = make_batch_samples(window_split(seq, 30), 10)
    dropped = drop_samples(samples, 0.5, seed=13)
    assert len(dropped) == len(samples)
    for s in dropped:
        assert s.window.n_obs == 15
        assert s.teacher_window.n_obs == 5
        assert s.label == s.window.label
        assert s.poa_label == int(bool(s.teacher_window.anomaly_flags.any()))


# ---------------------------------------------------------------------------
# scaling


def test_normalize_trivial_and_constant_channels():
    train = RawSequence(times=np.arange(3.0),
                        values=np.array([[0.0, 7.0], [5.0, 7.0], [10.0, 7.0]]))
    [out], _, stats = normalize([train], [])
    np.testing.assert_allclose(out.values[:, 0], [0.0, 0.5, 1.0])
    np.testing.assert_allclose(out.values[:, 1], [0.5, 0.5, 0.5])


def test_normalize_roundtrip():
    rng = np.random.default_rng(14)
    train = flat_sequence(200, n_channels=3, seed=14)
    apply = flat_sequence(50, n_channels=3, seed=15)
    [tr], [ap], stats = normalize([train], [apply])
    np.testing.assert_allclose(denormalize(tr.values, stats), train.values, atol=1e-12)
    np.testing.assert_allclose(denormalize(ap.values, stats), apply.values, atol=1e-12)


def test_normalize_uses_training_statistics_only():
    train = RawSequence(times=np.arange(2.0), values=np.array([[0.0], [10.0]]))
    apply = RawSequence(times=np.arange(2.0), values=np.array([[-10.0], [20.0]]))
    _, [ap], _ = normalize([train], [apply])
    np.testing.assert_allclose(ap.values[:, 0], [-1.0, 2.0])  # extrapolates, unclamped


# ---------------------------------------------------------------------------
# synthetic generator


def test_synthetic_no_anomalies():
    seq = generate_synthetic(SynthConfig(T=2000, n_channels=2, anomaly_count=0, seed=0))
    assert not seq.anomaly_flags.any()


def test_synthetic_ratio_and_segment_lengths():
    cfg = SynthConfig(T=20000, n_channels=3, anomaly_count=10, precursor_len=25, seed=1)
    seq = generate_synthetic(cfg)
    flags = seq.anomaly_flags
    # brute-force run scan
    runs = []
    start = None
    for i, f in enumerate(flags):
        if f and start is None:
            start = i
        elif not f and start is not None:
            runs.append((start, i - start))
            start = None
    if start is not None:
        runs.append((start, len(flags) - start))
    assert len(runs) == 10
    assert all(100 <= ln <= 500 for _, ln in runs)
    expected = 10 * 300 / 20000
    assert abs(flags.mean() - expected) <= 0.02


def test_synthetic_ramps_precede_every_anomaly():
    cfg = SynthConfig(T=20000, n_channels=3, anomaly_count=8, precursor_len=25, seed=2)
    seq = generate_synthetic(cfg)
    flags = seq.anomaly_flags
    starts = np.flatnonzero(flags & ~np.roll(flags, 1))
    p = cfg.precursor_len
    # base-signal mean slopes over p-length windows, well clear of anomalies
    base = generate_synthetic(SynthConfig(T=20000, n_channels=3, anomaly_count=0,
                                          precursor_len=25, seed=2))
    base_slopes = np.abs(base.values[p:] - base.values[:-p]).max(axis=1) / p
    q99 = np.quantile(base_slopes, 0.99)
    for s in starts:
        ramp = seq.values[s - p:s]
        mean_slope = np.abs(ramp[-1] - ramp[0]).max() / p
        assert mean_slope > q99


def test_synthetic_is_seed_deterministic():
    a = generate_synthetic(SynthConfig(T=5000, anomaly_count=3, seed=5))
    b = generate_synthetic(SynthConfig(T=5000, anomaly_count=3, seed=5))
    np.testing.assert_array_equal(a.values, b.values)
    np.testing.assert_array_equal(a.anomaly_flags, b.anomaly_flags)


def test_synthetic_infeasible_spacing_rejected():
    with pytest.raises(InputError):
        generate_synthetic(SynthConfig(T=3000, anomaly_count=10, precursor_len=25, seed=0))


# ---------------------------------------------------------------------------
# CSV interchange


def test_load_csv_minimal(tmp_path):
    path = tmp_path / "mini.csv"
    path.write_text("a,b\n1.0,2.0\n3.0,4.0\n")
    seq = load_csv(path)
    assert seq.n_obs == 2 and seq.n_channels == 2
    assert seq.anomaly_flags is None
    np.testing.assert_array_equal(seq.times, [0.0, 1.0])
    assert seq.channel_names == ("a", "b")


def test_load_csv_with_timestamp_and_label(tmp_path):
    path = tmp_path / "full.csv"
    path.write_text("timestamp,x,label\n0.5,1.0,0\n1.5,2.0,1\n")
    seq = load_csv(path)
    np.testing.assert_array_equal(seq.times, [0.5, 1.5])
    np.testing.assert_array_equal(seq.anomaly_flags, [False, True])


def test_csv_roundtrip_is_lossless(tmp_path):
    rng = np.random.default_rng(16)
    seq = RawSequence(times=np.cumsum(rng.uniform(0.5, 1.5, size=40)),
                      values=rng.normal(size=(40, 3)) * 1e3,
                      anomaly_flags=rng.random(40) < 0.2,
                      source_name="roundtrip")
    path = tmp_path / "roundtrip.csv"
    save_csv(path, seq)
    back = load_csv(path)
    np.testing.assert_array_equal(back.times, seq.times)
    np.testing.assert_array_equal(back.values, seq.values)
    np.testing.assert_array_equal(back.anomaly_flags, seq.anomaly_flags)


def test_load_csv_errors_carry_line_numbers(tmp_path):
    ragged = tmp_path / "ragged.csv"
    ragged.write_text("a,b\n1.0,2.0\n3.0\n")
    with pytest.raises(InputError, match="line 3"):
        load_csv(ragged)

    bad_cell = tmp_path / "cell.csv"
    bad_cell.write_text("a,b\n1.0,2.0\n3.0,oops\n")
    with pytest.raises(InputError, match="line 3"):
        load_csv(bad_cell)

    bad_label = tmp_path / "label.csv"
    bad_label.write_text("a,label\n1.0,0\n2.0,2\n")
    with pytest.raises(InputError, match="line 3"):
        load_csv(bad_label)

    bad_times = tmp_path / "times.csv"
    bad_times.write_text("timestamp,a\n1.0,1.0\n1.0,2.0\n")
    with pytest.raises(InputError, match="increasing"):
        load_csv(bad_times)
