"""Dataset plumbing: ingestion, windowing, labeling, augmentation, dropping.

Training data for anomaly detection usually carries no labels, so normal
sequences are augmented by splicing in copies of their own segments until a
target fraction of the observations is implanted; the copies are flagged
anomalous (the anomaly is the contextual discontinuity at the splice
boundaries, not the copied values themselves).  Windowing, label scanning,
random observation dropping and a synthetic benchmark generator with
built-in precursor ramps round out the pipeline.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, replace

import numpy as np

from .spline import InputError, TimeSeriesWindow


@dataclass(frozen=True)
class RawSequence:
    """A full multivariate series: times (T,), values (T, N), optional flags."""

    times: np.ndarray
    values: np.ndarray
    anomaly_flags: np.ndarray | None = None
    source_name: str = ""
    channel_names: tuple[str, ...] | None = None

    def __post_init__(self):
        times = np.asarray(self.times, dtype=np.float64)
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or times.ndim != 1 or times.shape[0] != values.shape[0]:
            raise InputError(f"inconsistent sequence shapes: times {times.shape}, values {values.shape}")
        if times.shape[0] >= 2 and not np.all(np.diff(times) > 0):
            raise InputError("sequence times must be strictly increasing")
        flags = self.anomaly_flags
        if flags is not None:
            flags = np.asarray(flags, dtype=bool)
            if flags.shape != times.shape:
                raise InputError("anomaly_flags length does not match times")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "anomaly_flags", flags)

    @property
    def n_obs(self) -> int:
        return self.times.shape[0]

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]

    def anomaly_ratio(self) -> float:
        return 0.0 if self.anomaly_flags is None else float(self.anomaly_flags.mean())

    def slice(self, start: int, stop: int, source_suffix: str = "") -> "RawSequence":
        flags = None if self.anomaly_flags is None else self.anomaly_flags[start:stop]
        return replace(self, times=self.times[start:stop], values=self.values[start:stop],
                       anomaly_flags=flags,
                       source_name=self.source_name + source_suffix)


@dataclass(frozen=True)
class AugmentSpec:
    """Target implant ratio and segment length range for self-supervision."""

    gamma: float
    min_len: int = 100
    max_len: int = 500
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise InputError("gamma must lie in [0, 1)")
        if not 0 < self.min_len <= self.max_len:
            raise InputError("need 0 < min_len <= max_len")


def augment_with_ids(seq: RawSequence, spec: AugmentSpec) -> tuple[RawSequence, np.ndarray]:
    """Implant copied segments until the implant ratio exceeds gamma.

    Repeatedly takes a random segment of the *original* sequence (length
    uniform in [min_len, max_len]) and splices it into a random interior
    position of the growing sequence, flagging only the copies.  Timestamps
    are rebuilt by splicing the inter-observation gaps the same way, so the
    original spacing pattern carries over and times stay strictly
    increasing.  The final implant ratio lands in (gamma, gamma + max_len/T].
    With gamma = 0 the sequence is returned unchanged.

    Also returns an id per observation (0 for originals, k for the k-th
    implant), which identifies every implant even after later splices cut
    through earlier ones.
    """
    if seq.anomaly_flags is not None and seq.anomaly_flags.any():
        raise InputError("augmentation expects unlabeled or all-normal training data")
    if spec.gamma == 0.0:
        out = replace(seq, anomaly_flags=np.zeros(seq.n_obs, dtype=bool))
        return out, np.zeros(seq.n_obs, dtype=np.int64)
    t_orig = seq.n_obs
    if t_orig < spec.max_len:
        raise InputError(f"sequence length {t_orig} is shorter than max_len {spec.max_len}")

    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0xA06]))
    orig_values = seq.values
    orig_diffs = np.diff(seq.times)
    values = seq.values.copy()
    diffs = orig_diffs.copy()
    ids = np.zeros(t_orig, dtype=np.int64)
    implant_no = 0

    while (len(values) - t_orig) / t_orig <= spec.gamma:
        implant_no += 1
        length = int(rng.integers(spec.min_len, spec.max_len + 1))
        r = int(rng.integers(0, t_orig - length + 1))
        s = int(rng.integers(1, len(values)))
        # gap layout: keep the gap that was at the splice point on the left
        # of the implant and give the implant's own trailing gap on the right
        seg_diffs = orig_diffs[r:r + length - 1]
        left_gap = diffs[s - 1]
        right_gap = orig_diffs[min(r + length - 1, t_orig - 2)]
        values = np.concatenate([values[:s], orig_values[r:r + length], values[s:]])
        ids = np.concatenate([ids[:s], np.full(length, implant_no, dtype=np.int64), ids[s:]])
        diffs = np.concatenate([diffs[:s - 1], [left_gap], seg_diffs, [right_gap], diffs[s:]])

    times = seq.times[0] + np.concatenate([[0.0], np.cumsum(diffs)])
    out = replace(seq, times=times, values=values, anomaly_flags=ids > 0,
                  source_name=seq.source_name + "+augmented")
    return out, ids


def augment(seq: RawSequence, spec: AugmentSpec) -> RawSequence:
    """See :func:`augment_with_ids`; drops the implant bookkeeping."""
    return augment_with_ids(seq, spec)[0]


# ---------------------------------------------------------------------------
# windowing and samples


def window_split(seq: RawSequence, window_size: int) -> list[TimeSeriesWindow]:
    """Consecutive disjoint windows of exactly *window_size* observations.

    A trailing partial window is dropped so every window has the same
    geometry.
    """
    if window_size < 2:
        raise InputError("window_size must be at least 2")
    n_windows = seq.n_obs // window_size
    windows = []
    for i in range(n_windows):
        lo, hi = i * window_size, (i + 1) * window_size
        flags = None if seq.anomaly_flags is None else seq.anomaly_flags[lo:hi]
        windows.append(TimeSeriesWindow(seq.times[lo:hi], seq.values[lo:hi],
                                        anomaly_flags=flags, window_index=i))
    return windows


@dataclass(frozen=True)
class BatchSample:
    """One training unit: a window, the observations that follow it, and labels.

    ``teacher_window`` holds the next ``poa_horizon`` observations (the
    beginning of the following window); ``poa_label`` is 1 iff any of those
    is flagged.  ``label`` is the window's own anomaly label.
    """

    window: TimeSeriesWindow
    teacher_window: TimeSeriesWindow
    label: int
    poa_label: int


def make_batch_samples(windows: list[TimeSeriesWindow], poa_horizon: int) -> list[BatchSample]:
    """Pair each window with the head of its successor.

    The last window has no successor and yields no sample.  The precursor
    label scans exactly the first ``poa_horizon`` flags of the successor;
    the teacher window always carries at least 2 observations so it remains
    a valid path domain even for a horizon of 1.
    """
    if poa_horizon < 1:
        raise InputError("poa_horizon must be positive")
    for a, b in zip(windows[:-1], windows[1:]):
        if b.window_index != a.window_index + 1:
            raise InputError("windows must be consecutive")
    samples = []
    for w, w_next in zip(windows[:-1], windows[1:]):
        p = min(poa_horizon, w_next.n_obs)
        head = max(p, 2)
        flags = None if w_next.anomaly_flags is None else w_next.anomaly_flags[:head]
        teacher = TimeSeriesWindow(w_next.times[:head], w_next.values[:head],
                                   anomaly_flags=flags, window_index=w_next.window_index)
        poa_label = 0
        if w_next.anomaly_flags is not None:
            poa_label = int(bool(w_next.anomaly_flags[:p].any()))
        samples.append(BatchSample(window=w, teacher_window=teacher,
                                   label=w.label, poa_label=poa_label))
    return samples


# ---------------------------------------------------------------------------
# irregular subsampling


def drop_observations(window: TimeSeriesWindow, ratio: float, seed) -> TimeSeriesWindow:
    """Keep a uniformly random ceil((1-ratio) * n_obs) subset, order preserved.

    Timestamps and flags travel with their observations; the window label
    is recomputed from the surviving flags.  ratio 0 is the identity.
    """
    if not 0.0 <= ratio < 1.0:
        raise InputError("drop ratio must lie in [0, 1)")
    if ratio == 0.0:
        return window
    keep = math.ceil((1.0 - ratio) * window.n_obs)
    if keep < 2:
        raise InputError(f"dropping {ratio:.0%} of {window.n_obs} observations leaves fewer than 2")
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(window.n_obs, size=keep, replace=False))
    flags = None if window.anomaly_flags is None else window.anomaly_flags[idx]
    return TimeSeriesWindow(window.times[idx], window.values[idx],
                            anomaly_flags=flags, window_index=window.window_index)


def drop_samples(samples: list[BatchSample], ratio: float, seed: int) -> list[BatchSample]:
    """Apply observation dropping to every input and teacher window.

    Both labels are recomputed from surviving flags, so the ground truth
    stays consistent with what a detector can actually see.
    """
    if ratio == 0.0:
        return samples
    streams = np.random.SeedSequence([seed, 0xD209]).spawn(2 * len(samples))
    out = []
    for i, s in enumerate(samples):
        w = drop_observations(s.window, ratio, streams[2 * i])
        t = drop_observations(s.teacher_window, ratio, streams[2 * i + 1])
        poa_label = 0 if t.anomaly_flags is None else int(bool(t.anomaly_flags.any()))
        out.append(BatchSample(window=w, teacher_window=t, label=w.label, poa_label=poa_label))
    return out


# ---------------------------------------------------------------------------
# scaling


@dataclass(frozen=True)
class NormStats:
    """Per-channel min/max computed on training data only."""

    minimum: np.ndarray
    maximum: np.ndarray

    def to_dict(self) -> dict:
        return {"minimum": self.minimum.tolist(), "maximum": self.maximum.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(np.asarray(d["minimum"], dtype=np.float64),
                   np.asarray(d["maximum"], dtype=np.float64))


def apply_normalization(values: np.ndarray, stats: NormStats) -> np.ndarray:
    span = stats.maximum - stats.minimum
    out = np.empty_like(values)
    const = span == 0.0
    out[:, const] = 0.5
    out[:, ~const] = (values[:, ~const] - stats.minimum[~const]) / span[~const]
    return out


def normalize(train_seqs: list[RawSequence],
              apply_seqs: list[RawSequence]) -> tuple[list[RawSequence], list[RawSequence], NormStats]:
    """Min-max scale every sequence using training statistics only.

    Constant training channels map to 0.5 everywhere.  Returns the scaled
    training sequences, the scaled extra sequences, and the statistics to
    persist for inference.
    """
    if not train_seqs:
        raise InputError("normalize needs at least one training sequence")
    stacked = np.concatenate([s.values for s in train_seqs], axis=0)
    stats = NormStats(minimum=stacked.min(axis=0), maximum=stacked.max(axis=0))
    train_out = [replace(s, values=apply_normalization(s.values, stats)) for s in train_seqs]
    apply_out = [replace(s, values=apply_normalization(s.values, stats)) for s in apply_seqs]
    return train_out, apply_out, stats


def denormalize(values: np.ndarray, stats: NormStats) -> np.ndarray:
    """Inverse of the min-max map; constant channels return their constant."""
    return stats.minimum + values * (stats.maximum - stats.minimum)


# ---------------------------------------------------------------------------
# synthetic benchmark with precursor structure


@dataclass(frozen=True)
class SynthConfig:
    """Sinusoid-plus-noise base with implanted, ramp-preceded anomalies."""

    T: int = 20000
    n_channels: int = 4
    anomaly_count: int = 14
    precursor_len: int = 25
    seed: int = 0
    min_len: int = 100
    max_len: int = 500
    noise_sigma: float = 0.015
    ramp_height: float = 1.5
    shift_height: float = 3.0
    burst_amp: float = 2.5

    def __post_init__(self):
        if self.T < 2 or self.n_channels < 1 or self.anomaly_count < 0:
            raise InputError("need T >= 2, n_channels >= 1, anomaly_count >= 0")
        if self.precursor_len < 1:
            raise InputError("precursor_len must be positive")


def generate_synthetic(cfg: SynthConfig) -> RawSequence:
    """Multichannel base signal with flagged anomaly segments.

    Anomalies alternate between level shifts and amplitude bursts, each
    100-500 points long, and every one is preceded by a deterministic
    rising ramp of ``precursor_len`` unflagged points whose mean slope
    clearly exceeds anything in the base signal.  Raises
    :class:`~precede.spline.InputError` if the requested count cannot be
    spaced out with the required precursor gaps.
    """
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x517E]))
    t = np.arange(cfg.T, dtype=np.float64)
    values = np.empty((cfg.T, cfg.n_channels))
    for j in range(cfg.n_channels):
        amp = rng.uniform(0.8, 1.2)
        period = rng.uniform(200.0, 400.0)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        values[:, j] = amp * np.sin(2.0 * np.pi * t / period + phase)
    values += rng.normal(0.0, cfg.noise_sigma, size=values.shape)
    flags = np.zeros(cfg.T, dtype=bool)

    if cfg.anomaly_count > 0:
        margin = cfg.precursor_len + 2
        slot = (cfg.T - 2 * margin) // cfg.anomaly_count
        if slot < cfg.max_len + cfg.precursor_len + 2:
            raise InputError(
                f"cannot place {cfg.anomaly_count} anomalies of up to {cfg.max_len} points "
                f"with {cfg.precursor_len}-point precursors in T={cfg.T}")
        for k in range(cfg.anomaly_count):
            length = int(rng.integers(cfg.min_len, cfg.max_len + 1))
            jitter_room = slot - length - cfg.precursor_len - 2
            start = margin + k * slot + cfg.precursor_len + int(rng.integers(0, jitter_room + 1))
            ramp = cfg.ramp_height * (np.arange(1, cfg.precursor_len + 1) / cfg.precursor_len)
            values[start - cfg.precursor_len:start] += ramp[:, None]
            seg = np.arange(length, dtype=np.float64)
            if k % 2 == 0:  # level shift
                values[start:start + length] += cfg.shift_height
            else:  # amplitude burst around a raised level
                burst = cfg.burst_amp * np.sin(2.0 * np.pi * seg / 12.0) + cfg.ramp_height
                values[start:start + length] += burst[:, None]
            flags[start:start + length] = True

    return RawSequence(times=t, values=values, anomaly_flags=flags,
                       source_name=f"synthetic-seed{cfg.seed}")


# ---------------------------------------------------------------------------
# CSV interchange


def load_csv(path) -> RawSequence:
    """Read a sequence from CSV.

    The header names the channels; the optional columns ``timestamp`` and
    ``label`` are recognized by name (labels must be 0/1).  Without a
    timestamp column, times are 0, 1, 2, ...  Parse failures report the
    offending line number.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InputError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        ts_col = header.index("timestamp") if "timestamp" in header else None
        label_col = header.index("label") if "label" in header else None
        value_cols = [i for i in range(len(header)) if i not in (ts_col, label_col)]
        if not value_cols:
            raise InputError(f"{path}: no channel columns in header")

        times, rows, labels = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise InputError(f"{path}: line {lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                rows.append([float(row[i]) for i in value_cols])
                if ts_col is not None:
                    times.append(float(row[ts_col]))
                if label_col is not None:
                    lab = row[label_col].strip()
                    if lab not in ("0", "1"):
                        raise ValueError(f"label must be 0 or 1, got {lab!r}")
                    labels.append(lab == "1")
            except ValueError as err:
                raise InputError(f"{path}: line {lineno}: {err}") from None

    values = np.asarray(rows, dtype=np.float64)
    t = np.asarray(times) if ts_col is not None else np.arange(len(rows), dtype=np.float64)
    if len(t) >= 2 and not np.all(np.diff(t) > 0):
        bad = int(np.flatnonzero(np.diff(t) <= 0)[0])
        raise InputError(f"{path}: line {bad + 3}: timestamps not strictly increasing")
    flags = np.asarray(labels, dtype=bool) if label_col is not None else None
    names = tuple(header[i] for i in value_cols)
    return RawSequence(times=t, values=values, anomaly_flags=flags,
                       source_name=os.path.splitext(os.path.basename(str(path)))[0],
                       channel_names=names)


def save_csv(path, seq: RawSequence) -> None:
    """Write a sequence as CSV with full float64 round-trip precision."""
    names = seq.channel_names or tuple(f"ch{j}" for j in range(seq.n_channels))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        header = ["timestamp", *names]
        if seq.anomaly_flags is not None:
            header.append("label")
        writer.writerow(header)
        for i in range(seq.n_obs):
            row = [repr(float(seq.times[i]))] + [repr(float(v)) for v in seq.values[i]]
            if seq.anomaly_flags is not None:
                row.append("1" if seq.anomaly_flags[i] else "0")
            writer.writerow(row)
