"""Fixed-step explicit integrators recorded on the gradient tape.

Two entry points share the same Butcher steps:

* :func:`integrate` — generic initial value problems with a time-dependent
  field, stepping on a uniform or knot-aligned grid.
* :func:`integrate_controlled` — controlled dynamics whose field takes the
  control derivative directly; stage values of dX/dt are precomputed data,
  which lets a whole batch of windows integrate in lockstep.

Backpropagating through the recorded stages differentiates the discrete
trajectory exactly, so gradient checks against finite differences of the
same discrete map are well-posed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .autodiff import Tensor, add, mul, scale


class DivergenceError(RuntimeError):
    """The integration produced a non-finite state."""

    def __init__(self, step: int, detail: str = ""):
        self.step = step
        super().__init__(f"non-finite state at step {step}{detail}")


@dataclass(frozen=True)
class SolverConfig:
    """Scheme and step layout for one window.

    With ``knot_aligned`` the grid subdivides each inter-knot interval into
    ``steps_per_window`` uniform substeps, so no stage ever straddles a knot
    of the piecewise-cubic control path; otherwise ``steps_per_window`` is
    the total number of uniform steps across [t0, t1].
    """

    scheme: str = "rk4"
    steps_per_window: int = 4
    knot_aligned: bool = True

    def __post_init__(self):
        if self.scheme not in ("euler", "rk4"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.steps_per_window < 1:
            raise ValueError("steps_per_window must be >= 1")


def build_grid(t0: float, t1: float, config: SolverConfig, knots: np.ndarray | None = None) -> np.ndarray:
    """Monotone grid of step boundaries from t0 to t1 (inclusive)."""
    if not t1 > t0:
        raise ValueError(f"need t1 > t0, got [{t0}, {t1}]")
    if config.knot_aligned and knots is not None and len(knots) > 2:
        pieces = [np.array([t0])]
        inner = np.asarray(knots, dtype=np.float64)
        inner = inner[(inner > t0) & (inner <= t1)]
        prev = t0
        for k in list(inner) + ([t1] if (len(inner) == 0 or inner[-1] < t1) else []):
            pieces.append(np.linspace(prev, k, config.steps_per_window + 1)[1:])
            prev = k
        return np.concatenate(pieces)
    return np.linspace(t0, t1, config.steps_per_window + 1)


def _check_state(data: np.ndarray, step: int) -> None:
    if not np.all(np.isfinite(data)):
        raise DivergenceError(step)


def integrate(
    field: Callable[[Tensor, float], Tensor],
    state0: Tensor,
    t0: float,
    t1: float,
    config: SolverConfig,
    knots: np.ndarray | None = None,
) -> Tensor:
    """Advance ``d state/dt = field(state, t)`` from t0 to t1.

    All stage evaluations run through tape-recorded tensor ops, so a
    surrounding :class:`~precede.autodiff.Tape` captures the full trajectory.
    Raises :class:`DivergenceError` naming the step if the state leaves the
    finite range.
    """
    grid = build_grid(t0, t1, config, knots)
    y = state0
    for i in range(len(grid) - 1):
        ta, tb = float(grid[i]), float(grid[i + 1])
        dt = tb - ta
        if config.scheme == "euler":
            y = add(y, scale(field(y, ta), dt))
        else:
            half = 0.5 * dt
            k1 = field(y, ta)
            k2 = field(add(y, scale(k1, half)), ta + half)
            k3 = field(add(y, scale(k2, half)), ta + half)
            k4 = field(add(y, scale(k3, dt)), tb)
            incr = add(add(k1, scale(k2, 2.0)), add(scale(k3, 2.0), k4))
            y = add(y, scale(incr, dt / 6.0))
        _check_state(y.data, i)
    return y


def integrate_controlled(
    field: Callable[[Tensor, np.ndarray], Tensor],
    state0: Tensor,
    control_stages: np.ndarray,
    dt: np.ndarray,
    scheme: str = "rk4",
) -> Tensor:
    """Advance a batch of controlled systems over precomputed stages.

    ``field(state, ctrl)`` maps a (B, D) state and (B, C) control derivative
    to (B, D).  ``control_stages`` holds dX/dt per step and stage point,
    shape (B, n_steps, 3, C) for rk4 (start / midpoint / end) or
    (B, n_steps, 1, C) for euler; ``dt`` is (B, n_steps) since windows of a
    batch may carry their own clocks.
    """
    n_steps = control_stages.shape[1]
    y = state0
    for i in range(n_steps):
        di = dt[:, i:i + 1]  # (B, 1), broadcasts over state columns
        if scheme == "euler":
            y = add(y, mul(field(y, control_stages[:, i, 0]), di))
        else:
            stages = control_stages[:, i]
            half = di * 0.5
            k1 = field(y, stages[:, 0])
            k2 = field(add(y, mul(k1, half)), stages[:, 1])
            k3 = field(add(y, mul(k2, half)), stages[:, 1])
            k4 = field(add(y, mul(k3, di)), stages[:, 2])
            incr = add(add(k1, scale(k2, 2.0)), add(scale(k3, 2.0), k4))
            y = add(y, mul(incr, di / 6.0))
        _check_state(y.data, i)
    return y
