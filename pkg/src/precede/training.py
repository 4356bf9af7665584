"""Multi-task training: anomaly loss, distillation loss, alternating updates.

Each iteration makes three optimizer applications in a fixed order:

1. the anomaly branch (own field, init map, head) trains on labeled windows;
2. the precursor branch trains to match the anomaly branch's prediction on
   the observations that immediately follow each window (the teacher runs
   without a tape, so no gradient leaks into it);
3. the shared field parameters train on the sum of both losses.

Groups with no gradient path in a sub-step are left untouched, including
their optimizer moments, so the task-specific branches stay isolated.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field as dataclass_field

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .data import BatchSample
from .metrics import evaluate
from .model import ModelParameters, forward_batch
from .solver import SolverConfig
from .spline import InputError, TimeSeriesWindow


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 300
    batch_size: int = 256
    learning_rate: float = 1e-2
    weight_decay: float = 1e-4
    window_size: int = 30
    poa_horizon: int = 10
    solver: SolverConfig = dataclass_field(default_factory=SolverConfig)
    seed: int = 0
    threshold: float = 0.5

    def __post_init__(self):
        if self.poa_horizon < 1:
            raise ValueError("poa_horizon must be positive")
        if self.window_size < 2:
            raise ValueError("window_size must be at least 2")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")


# ---------------------------------------------------------------------------
# losses


def loss_anomaly(p_anomaly, y) -> Tensor:
    """Cross-entropy of predicted anomaly probability against hard labels."""
    return ad.mean_all(ad.bce(np.asarray(y, dtype=np.float64), p_anomaly))


def loss_kd(teacher_p, student_p) -> Tensor:
    """Cross-entropy with the teacher's probability as a soft target.

    The teacher side is plain data: gradients flow only into the student.
    """
    t = teacher_p.data if isinstance(teacher_p, Tensor) else np.asarray(teacher_p, dtype=np.float64)
    return ad.mean_all(ad.bce(t, student_p))


# ---------------------------------------------------------------------------
# optimizer: adaptive moments with decoupled weight decay


class AdamOptimizer:
    """Bias-corrected first/second moments, decoupled weight decay.

    Moment state is keyed per parameter tensor and advances only when that
    tensor is part of an update, so the alternating sub-steps each see a
    consistent step count for their own groups.
    """

    def __init__(self, learning_rate: float, weight_decay: float = 0.0,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self._state: dict[int, tuple[np.ndarray, np.ndarray, int]] = {}

    def step(self, tensors: list[Tensor], grads: list[np.ndarray], group: str = "") -> None:
        for t, g in zip(tensors, grads):
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient in group {group or '<unnamed>'}")
            m, v, k = self._state.get(t.node_id, (np.zeros_like(t.data), np.zeros_like(t.data), 0))
            k += 1
            m = self.beta1 * m + (1.0 - self.beta1) * g
            v = self.beta2 * v + (1.0 - self.beta2) * g * g
            m_hat = m / (1.0 - self.beta1 ** k)
            v_hat = v / (1.0 - self.beta2 ** k)
            t.data -= self.learning_rate * (m_hat / (np.sqrt(v_hat) + self.eps)
                                            + self.weight_decay * t.data)
            self._state[t.node_id] = (m, v, k)


def optimizer_step(tensors: list[Tensor], grads: list[np.ndarray], learning_rate: float,
                   weight_decay: float = 0.0, optimizer: AdamOptimizer | None = None,
                   group: str = "") -> AdamOptimizer:
    """One adaptive update on the named subset; returns the optimizer so
    moment state can be carried across calls."""
    if optimizer is None:
        optimizer = AdamOptimizer(learning_rate, weight_decay)
    optimizer.step(tensors, grads, group=group)
    return optimizer


# ---------------------------------------------------------------------------
# batched passes


def predict_probs(windows: list[TimeSeriesWindow], params: ModelParameters,
                  solver_cfg: SolverConfig, branch: str) -> np.ndarray:
    """Probabilities with no gradient recording."""
    res = forward_batch(windows, params, solver_cfg, branch=branch)
    out = res.p_anomaly if branch == "anomaly" else res.p_poa
    return out.data


def _shard_bounds(n: int, n_shards: int) -> list[tuple[int, int]]:
    n_shards = max(1, min(n_shards, n))
    base, rem = divmod(n, n_shards)
    bounds, start = [], 0
    for i in range(n_shards):
        size = base + (1 if i < rem else 0)
        bounds.append((start, start + size))
        start += size
    return bounds


def _grad_pass(
    windows: list[TimeSeriesWindow],
    params: ModelParameters,
    solver_cfg: SolverConfig,
    branch: str,
    update_tensors: list[Tensor],
    anomaly_targets: np.ndarray | None = None,
    kd_targets: np.ndarray | None = None,
    n_threads: int = 1,
):
    """Mean losses over the batch and their gradients w.r.t. *update_tensors*.

    The batch may be sharded; shard results are reduced in shard order, so
    the outcome is independent of scheduling.
    """
    n = len(windows)
    bounds = _shard_bounds(n, n_threads)

    def run_shard(lo: int, hi: int):
        with Tape() as tape:
            res = forward_batch(windows[lo:hi], params, solver_cfg, branch=branch)
            parts = []
            sums = [0.0, 0.0]
            if anomaly_targets is not None:
                la = ad.sum_all(ad.bce(anomaly_targets[lo:hi], res.p_anomaly))
                sums[0] = float(la.data)
                parts.append(la)
            if kd_targets is not None:
                lk = ad.sum_all(ad.bce(kd_targets[lo:hi], res.p_poa))
                sums[1] = float(lk.data)
                parts.append(lk)
            total = parts[0] if len(parts) == 1 else ad.add(parts[0], parts[1])
            tape.backward(total)
            return sums, [tape.grad(t) for t in update_tensors]

    if len(bounds) == 1:
        shard_results = [run_shard(*bounds[0])]
    else:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=len(bounds)) as pool:
            shard_results = list(pool.map(lambda b: run_shard(*b), bounds))

    loss_a = sum(r[0][0] for r in shard_results) / n
    loss_k = sum(r[0][1] for r in shard_results) / n
    grads = [np.zeros_like(t.data) for t in update_tensors]
    for _, shard_grads in shard_results:  # fixed shard order
        for acc, g in zip(grads, shard_grads):
            acc += g
    for g in grads:
        g /= n
    return loss_a, loss_k, grads


def _group_tensors(params: ModelParameters, groups: list[str]) -> list[Tensor]:
    out: list[Tensor] = []
    for g in groups:
        out.extend(params.tensors(g))
    return out


def train_iteration(
    batch: list[BatchSample],
    params: ModelParameters,
    train_cfg: TrainConfig,
    optimizer: AdamOptimizer,
    n_threads: int = 1,
    audit=None,
) -> tuple[float, float]:
    """Three alternating updates on one batch; returns the batch-mean
    anomaly and distillation losses measured before their updates.

    ``audit(sub_step, params)`` is invoked after each sub-step for callers
    that verify group isolation.
    """
    if not batch:
        raise InputError("train_iteration needs a non-empty batch")
    inputs = [s.window for s in batch]
    teachers = [s.teacher_window for s in batch]
    labels = np.array([s.label for s in batch], dtype=np.float64)
    shared = "field_shared" in params.groups

    # (1) anomaly branch on the input windows
    tensors_1 = _group_tensors(params, ["field_anomaly", "init_anomaly", "head_anomaly"])
    l_a, _, grads = _grad_pass(inputs, params, train_cfg.solver, "anomaly", tensors_1,
                               anomaly_targets=labels, n_threads=n_threads)
    optimizer.step(tensors_1, grads, group="anomaly-branch")
    if audit:
        audit(1, params)

    # (2) precursor branch distilled toward the teacher's view of the future;
    # the teacher runs once: sub-step (2) touches no parameter on its path,
    # so its output is identical before sub-steps (2) and (3)
    teacher_p = predict_probs(teachers, params, train_cfg.solver, "anomaly")
    tensors_2 = _group_tensors(params, ["field_poa", "init_poa", "head_poa"])
    _, l_kd, grads = _grad_pass(inputs, params, train_cfg.solver, "poa", tensors_2,
                                kd_targets=teacher_p, n_threads=n_threads)
    optimizer.step(tensors_2, grads, group="poa-branch")
    if audit:
        audit(2, params)

    # (3) shared field parameters on both losses
    if shared:
        tensors_3 = _group_tensors(params, ["field_shared"])
        _, _, grads = _grad_pass(inputs, params, train_cfg.solver, "both", tensors_3,
                                 anomaly_targets=labels, kd_targets=teacher_p,
                                 n_threads=n_threads)
        optimizer.step(tensors_3, grads, group="shared-branch")
    if audit:
        audit(3, params)

    return l_a, l_kd


@dataclass
class FitResult:
    best_params: ModelParameters
    log: list[dict]
    best_epoch: int
    best_score: float


def validation_scores(samples: list[BatchSample], params: ModelParameters,
                      solver_cfg: SolverConfig, threshold: float) -> tuple[float, float]:
    """(anomaly F1, precursor F1) on a labeled sample set."""
    windows = [s.window for s in samples]
    p_a = predict_probs(windows, params, solver_cfg, "anomaly")
    p_p = predict_probs(windows, params, solver_cfg, "poa")
    rep_a = evaluate(p_a, [s.label for s in samples], threshold, task="anomaly")
    rep_p = evaluate(p_p, [s.poa_label for s in samples], threshold, task="poa")
    return rep_a.f1, rep_p.f1


def fit(
    train_samples: list[BatchSample],
    val_samples: list[BatchSample],
    params: ModelParameters,
    train_cfg: TrainConfig,
    n_threads: int = 1,
    log_fn=None,
) -> FitResult:
    """Epoch loop with validation-based best-parameter tracking.

    After each epoch the summed validation F1 of both tasks is scored; the
    snapshot with the highest sum wins, earlier epochs winning ties.
    """
    if not train_samples:
        raise InputError("fit needs a non-empty training set")
    optimizer = AdamOptimizer(train_cfg.learning_rate, train_cfg.weight_decay)
    rng = np.random.default_rng(np.random.SeedSequence([train_cfg.seed, 0x5EED]))
    best = FitResult(best_params=params.copy(), log=[], best_epoch=-1, best_score=-np.inf)

    for epoch in range(train_cfg.epochs):
        t_start = time.perf_counter()
        order = rng.permutation(len(train_samples))
        sum_a = sum_k = 0.0
        for lo in range(0, len(order), train_cfg.batch_size):
            batch = [train_samples[i] for i in order[lo:lo + train_cfg.batch_size]]
            l_a, l_kd = train_iteration(batch, params, train_cfg, optimizer,
                                        n_threads=n_threads)
            sum_a += l_a * len(batch)
            sum_k += l_kd * len(batch)
        f1_a, f1_p = validation_scores(val_samples, params, train_cfg.solver,
                                       train_cfg.threshold) if val_samples else (0.0, 0.0)
        row = {
            "epoch": epoch,
            "L_a": sum_a / len(train_samples),
            "L_KD": sum_k / len(train_samples),
            "val_f1_anomaly": f1_a,
            "val_f1_poa": f1_p,
            "wall_ms": (time.perf_counter() - t_start) * 1000.0,
        }
        best.log.append(row)
        if log_fn:
            log_fn(row)
        if f1_a + f1_p > best.best_score:
            best.best_score = f1_a + f1_p
            best.best_epoch = epoch
            best.best_params = params.copy()
    return best
