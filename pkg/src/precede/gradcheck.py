"""Finite-difference verification of the end-to-end gradients.

The reference is a central difference of the full discrete forward map
(spline, fixed-step integration, heads, loss), evaluated coordinate by
coordinate.  Errors are floored relative errors: |a - f| / max(|a|, |f|,
floor), so coordinates whose true gradient is essentially zero are judged
on an absolute scale where difference noise lives.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tape
from .model import ModelConfig, ModelParameters, forward_batch, init_parameters
from .solver import SolverConfig
from .spline import TimeSeriesWindow


@dataclass(frozen=True)
class GradCheckReport:
    max_rel_err: float
    tolerance: float
    per_group: dict[str, float]
    n_coordinates: int

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tolerance

    def summary(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return f"{verdict} max_rel_err {self.max_rel_err:.3e} (tolerance {self.tolerance:.1e})"


def finite_difference(loss_fn, tensor, h: float = 1e-5) -> np.ndarray:
    """Central differences of loss_fn() w.r.t. every coordinate of *tensor*."""
    flat = tensor.data.ravel()
    out = np.empty_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = loss_fn()
        flat[i] = orig - h
        down = loss_fn()
        flat[i] = orig
        out[i] = (up - down) / (2.0 * h)
    return out.reshape(tensor.data.shape)


def check_gradients(loss_fn, params: ModelParameters, h: float = 1e-5,
                    tolerance: float = 1e-4, floor: float = 1e-6) -> GradCheckReport:
    """Compare tape gradients of loss_fn against central differences.

    ``loss_fn()`` must rebuild the loss from the current parameter values;
    it is called under a fresh tape for the analytic side and without one
    for every finite-difference probe.
    """
    with Tape() as tape:
        loss = loss_fn()
        tape.backward(loss)
    per_group: dict[str, float] = {}
    worst = 0.0
    n_coords = 0
    for group, tensors in params.groups.items():
        group_worst = 0.0
        for t in tensors:
            analytic = tape.grad(t)
            numeric = finite_difference(lambda: float(loss_fn().data), t, h)
            scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
            rel = np.abs(analytic - numeric) / scale
            group_worst = max(group_worst, float(rel.max()))
            n_coords += t.data.size
        per_group[group] = group_worst
        worst = max(worst, group_worst)
    return GradCheckReport(max_rel_err=worst, tolerance=tolerance,
                           per_group=per_group, n_coordinates=n_coords)


def tiny_setup(seed: int = 7):
    """The canonical small configuration used for gradient verification:
    3 channels, hidden size 4, an 8-observation window, 16 rk4 steps."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x6C]))
    config = ModelConfig(n_channels=3, hidden_dim=4, width_f=4, width_g=4, width_c=4,
                         n_hidden_layers_f=1, n_hidden_layers_g=1, n_hidden_layers_c=1)
    params = init_parameters(config, seed)
    times = np.arange(8, dtype=np.float64)
    values = np.cumsum(rng.normal(0.0, 0.3, size=(8, 3)), axis=0)
    window = TimeSeriesWindow(times, values)
    solver_cfg = SolverConfig(scheme="rk4", steps_per_window=16, knot_aligned=False)

    def loss_fn():
        res = forward_batch([window], params, solver_cfg, branch="both")
        # fixed hard/soft targets touch every parameter group
        l_a = ad.sum_all(ad.bce(np.array([1.0]), res.p_anomaly))
        l_p = ad.sum_all(ad.bce(np.array([0.3]), res.p_poa))
        return ad.add(l_a, l_p)

    return params, window, solver_cfg, loss_fn


def run_tiny_gradcheck(seed: int = 7, h: float = 1e-5, tolerance: float = 1e-4) -> GradCheckReport:
    params, _, _, loss_fn = tiny_setup(seed)
    return check_gradients(loss_fn, params, h=h, tolerance=tolerance)
