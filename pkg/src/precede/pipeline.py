"""End-to-end flows shared by the CLI and the test suites.

File-based commands (train/eval/sweep) wrap the in-memory functions here;
tests call the in-memory forms directly.  Every artifact embeds the
resolved config snapshot and metric JSON carries no timestamps, so a rerun
with the same seed reproduces the files byte for byte.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, replace

import numpy as np

from . import report as rpt
from .config import RunConfig
from .data import (BatchSample, NormStats, RawSequence, apply_normalization, augment,
                   drop_observations, drop_samples, generate_synthetic, load_csv,
                   make_batch_samples, normalize, save_csv, window_split)
from .metrics import EvalReport, evaluate
from .model import ModelParameters, init_parameters, load_checkpoint, save_checkpoint
from .spline import InputError, TimeSeriesWindow
from .training import FitResult, fit, predict_probs


@dataclass
class PreparedData:
    train_samples: list[BatchSample]
    val_samples: list[BatchSample]
    stats: NormStats
    n_channels: int


@dataclass
class TrainingArtifacts:
    params: ModelParameters
    stats: NormStats
    result: FitResult
    checkpoint_path: str | None = None


def split_sequence(seq: RawSequence, fraction: float) -> tuple[RawSequence, RawSequence]:
    """Time-ordered head/tail split."""
    cut = int(seq.n_obs * fraction)
    if cut < 2 or seq.n_obs - cut < 2:
        raise InputError(f"split fraction {fraction} leaves an unusable piece")
    return seq.slice(0, cut, "[head]"), seq.slice(cut, seq.n_obs, "[tail]")


def prepare_training_data(seq: RawSequence, cfg: RunConfig) -> PreparedData:
    """Normalize, optionally implant anomalies, window, and split off validation.

    Labeled training data is used as-is; unlabeled (or all-normal) data
    requires ``augment.gamma > 0`` so the self-supervised implants provide
    the labels.  A nonzero ``drop`` irregularizes the training windows after
    windowing and labeling, mirroring the irregular evaluation protocol.
    """
    has_labels = seq.anomaly_flags is not None and bool(seq.anomaly_flags.any())
    if cfg.augment.gamma > 0.0:
        if has_labels:
            raise InputError("augmentation expects unlabeled or all-normal training data")
        seq = augment(seq, cfg.augment.build(cfg.seed))
    elif not has_labels:
        raise InputError("training data has no anomaly labels; set augment.gamma > 0 "
                         "to implant self-supervised anomalies")
    [seq_n], _, stats = normalize([seq], [])
    windows = window_split(seq_n, cfg.train.window_size)
    samples = make_batch_samples(windows, cfg.train.poa_horizon)
    if not samples:
        raise InputError("not enough windows for training; lower window_size")
    if cfg.drop > 0.0:
        samples = drop_samples(samples, cfg.drop, cfg.seed)
    n_val = int(len(samples) * cfg.train.val_fraction)
    train_samples = samples[: len(samples) - n_val]
    val_samples = samples[len(samples) - n_val:]
    return PreparedData(train_samples=train_samples, val_samples=val_samples,
                        stats=stats, n_channels=seq.n_channels)


def train_on_sequence(seq: RawSequence, cfg: RunConfig, log_fn=None) -> TrainingArtifacts:
    prepared = prepare_training_data(seq, cfg)
    model_cfg = cfg.model.build(prepared.n_channels)
    params = init_parameters(model_cfg, cfg.seed)
    train_cfg = cfg.train.build(cfg.solver.build(), cfg.seed)
    result = fit(prepared.train_samples, prepared.val_samples, params, train_cfg,
                 n_threads=cfg.threads, log_fn=log_fn)
    return TrainingArtifacts(params=result.best_params, stats=prepared.stats, result=result)


def _eval_windows(seq: RawSequence, stats: NormStats, window_size: int, poa_horizon: int,
                  drop: float, seed: int) -> tuple[list[TimeSeriesWindow], list[BatchSample]]:
    """Windows and samples of an evaluation sequence, dropped consistently.

    The input windows used for the anomaly task and the ones inside the
    precursor samples are the same (dropped-once) objects, so both reports
    describe one irregular view of the data.
    """
    seq_n = replace(seq, values=apply_normalization(seq.values, stats))
    windows = window_split(seq_n, window_size)
    samples = make_batch_samples(windows, poa_horizon)
    if drop > 0.0:
        streams = np.random.SeedSequence([seed, 0xE7A1]).spawn(len(windows) + len(samples))
        windows = [drop_observations(w, drop, streams[i]) for i, w in enumerate(windows)]
        rebuilt = []
        for i, s in enumerate(samples):
            teacher = drop_observations(s.teacher_window, drop, streams[len(windows) + i])
            poa_label = 0 if teacher.anomaly_flags is None else int(bool(teacher.anomaly_flags.any()))
            rebuilt.append(BatchSample(window=windows[i], teacher_window=teacher,
                                       label=windows[i].label, poa_label=poa_label))
        samples = rebuilt
    return windows, samples


def evaluate_params(params: ModelParameters, stats: NormStats, seq: RawSequence,
                    cfg: RunConfig, window_size: int, poa_horizon: int,
                    drop: float = 0.0, threshold: float = 0.5) -> tuple[EvalReport, EvalReport]:
    """(anomaly report, precursor report) on a labeled sequence."""
    if seq.anomaly_flags is None:
        raise InputError("evaluation data must carry a label column")
    windows, samples = _eval_windows(seq, stats, window_size, poa_horizon, drop, cfg.seed)
    solver_cfg = cfg.solver.build()
    p_anom = predict_probs(windows, params, solver_cfg, "anomaly")
    rep_a = evaluate(p_anom, [w.label for w in windows], threshold, task="anomaly")
    p_poa = predict_probs([s.window for s in samples], params, solver_cfg, "poa")
    rep_p = evaluate(p_poa, [s.poa_label for s in samples], threshold, task="poa")
    return rep_a, rep_p


# ---------------------------------------------------------------------------
# file-based command bodies


def _ensure_out(cfg: RunConfig) -> str:
    os.makedirs(cfg.out_dir, exist_ok=True)
    return cfg.out_dir


def cmd_synth(cfg: RunConfig) -> dict:
    """Generate the synthetic benchmark and write train/test CSV files."""
    out = _ensure_out(cfg)
    seq = generate_synthetic(cfg.synth.build(cfg.seed))
    train_seq, test_seq = split_sequence(seq, cfg.train.train_fraction)
    train_path = os.path.join(out, "synthetic_train.csv")
    test_path = os.path.join(out, "synthetic_test.csv")
    save_csv(train_path, train_seq)
    save_csv(test_path, test_seq)
    meta = {
        "config": cfg.snapshot(),
        "train_path": train_path,
        "test_path": test_path,
        "n_observations": seq.n_obs,
        "anomaly_ratio": seq.anomaly_ratio(),
    }
    rpt.write_json(os.path.join(out, "synth_meta.json"), meta)
    return meta


def cmd_augment(cfg: RunConfig, in_path: str, out_path: str | None = None) -> dict:
    out = _ensure_out(cfg)
    seq = load_csv(in_path)
    spec = cfg.augment.build(cfg.seed)
    augmented = augment(seq, spec)
    out_path = out_path or os.path.join(out, "augmented.csv")
    save_csv(out_path, augmented)
    meta = {
        "config": cfg.snapshot(),
        "input": str(in_path),
        "output": out_path,
        "original_length": seq.n_obs,
        "augmented_length": augmented.n_obs,
        "implant_ratio": (augmented.n_obs - seq.n_obs) / seq.n_obs,
    }
    rpt.write_json(os.path.join(out, "augment_meta.json"), meta)
    return meta


def cmd_train(cfg: RunConfig, data_path: str | None = None, log_fn=None) -> dict:
    out = _ensure_out(cfg)
    path = data_path or cfg.data_path
    if not path:
        raise InputError("no training data; pass --data or set data_path")
    seq = load_csv(path)
    rows: list[dict] = []

    def tee(row):
        rows.append(row)
        if log_fn:
            log_fn(row)

    artifacts = train_on_sequence(seq, cfg, log_fn=tee)
    checkpoint_path = os.path.join(out, "checkpoint.json")
    save_checkpoint(checkpoint_path, artifacts.params, extra={
        "normalization": artifacts.stats.to_dict(),
        "config": cfg.snapshot(),
    })
    log_path = os.path.join(out, "train_log.jsonl")
    with open(log_path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
    rpt.render_training_curves(os.path.join(out, "training_curves.png"), rows)
    return {
        "checkpoint": checkpoint_path,
        "log": log_path,
        "best_epoch": artifacts.result.best_epoch,
        "best_score": artifacts.result.best_score,
    }


def cmd_eval(cfg: RunConfig, checkpoint_path: str, data_path: str,
             drop: float = 0.0, threshold: float = 0.5) -> dict:
    out = _ensure_out(cfg)
    params, extras = load_checkpoint(checkpoint_path)
    stats = NormStats.from_dict(extras["normalization"])
    train_snapshot = extras.get("config", {}).get("train", {})
    window_size = train_snapshot.get("window_size", cfg.train.window_size)
    poa_horizon = train_snapshot.get("poa_horizon", cfg.train.poa_horizon)
    seq = load_csv(data_path)
    rep_a, rep_p = evaluate_params(params, stats, seq, cfg, window_size, poa_horizon,
                                   drop=drop, threshold=threshold)
    payload_common = {"config": cfg.snapshot(), "drop": drop, "threshold": threshold,
                      "checkpoint": str(checkpoint_path), "data": str(data_path)}
    for rep, name in ((rep_a, "anomaly"), (rep_p, "poa")):
        rpt.write_json(os.path.join(out, f"report_{name}.json"),
                       {**payload_common, "report": rep.to_dict()})
        rpt.write_probability_csv(os.path.join(out, f"probabilities_{name}.csv"), rep)
        rpt.render_probability_figure(os.path.join(out, f"probabilities_{name}.png"), rep)
    with open(os.path.join(out, "report.txt"), "w", encoding="utf-8") as fh:
        fh.write(rpt.metrics_table([rep_a, rep_p]))
    return {
        "anomaly": {"precision": rep_a.precision, "recall": rep_a.recall, "f1": rep_a.f1},
        "poa": {"precision": rep_p.precision, "recall": rep_p.recall, "f1": rep_p.f1},
    }


def cmd_sweep(cfg: RunConfig, p_values: list[int], train_path: str,
              test_path: str) -> list[tuple[int, float]]:
    """Retrain per output length and report the precursor F1 on test data."""
    out = _ensure_out(cfg)
    train_seq = load_csv(train_path)
    test_seq = load_csv(test_path)
    rows: list[tuple[int, float]] = []
    for p in p_values:
        cfg_p = replace(cfg, train=replace(cfg.train, poa_horizon=p))
        artifacts = train_on_sequence(train_seq, cfg_p)
        _, rep_p = evaluate_params(artifacts.params, artifacts.stats, test_seq, cfg_p,
                                   cfg_p.train.window_size, p,
                                   threshold=cfg_p.train.threshold)
        rows.append((p, rep_p.f1))
    rpt.write_sweep_csv(os.path.join(out, "sweep.csv"), rows)
    rpt.render_sweep_figure(os.path.join(out, "sweep.png"), rows)
    rpt.write_json(os.path.join(out, "sweep.json"),
                   {"config": cfg.snapshot(), "rows": [[p, f1] for p, f1 in rows]})
    return rows
