"""Natural cubic spline control paths over windows of observations.

Each window of timestamped multivariate observations is interpolated
per channel by a natural cubic spline (second derivative zero at both
ends), giving a C2 path X(t) whose analytic derivative dX/dt drives the
controlled dynamics.  With exactly two knots the spline degenerates to
the linear interpolant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class InputError(ValueError):
    """Malformed observations (ordering, shape, or count)."""


class DomainError(ValueError):
    """Evaluation time outside the fitted interval."""


@dataclass(frozen=True)
class TimeSeriesWindow:
    """One window of observations: times (n,), values (n, channels).

    ``anomaly_flags`` is None for unlabeled inference data.  Times must be
    strictly increasing and at least two observations are required.
    """

    times: np.ndarray
    values: np.ndarray
    anomaly_flags: np.ndarray | None = None
    window_index: int = 0

    def __post_init__(self):
        times = np.asarray(self.times, dtype=np.float64)
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise InputError(f"values must be 2-D (n_obs, n_channels), got {values.shape}")
        if times.ndim != 1 or times.shape[0] != values.shape[0]:
            raise InputError(f"times {times.shape} do not match values {values.shape}")
        if times.shape[0] < 2:
            raise InputError("a window needs at least 2 observations")
        if not np.all(np.diff(times) > 0):
            raise InputError("times must be strictly increasing")
        flags = self.anomaly_flags
        if flags is not None:
            flags = np.asarray(flags, dtype=bool)
            if flags.shape != times.shape:
                raise InputError(f"anomaly_flags {flags.shape} do not match times {times.shape}")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "anomaly_flags", flags)

    @property
    def n_obs(self) -> int:
        return self.times.shape[0]

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]

    @property
    def label(self) -> int:
        """1 if any observation in the window is flagged anomalous."""
        return int(self.anomaly_flags is not None and bool(self.anomaly_flags.any()))


@dataclass(frozen=True)
class CubicSplinePath:
    """Piecewise cubic X(t) = a + b s + c s^2 + d s^3, s = t - knot.

    Coefficient arrays have shape (n_intervals, n_channels); the path is
    defined on [knot_times[0], knot_times[-1]] and immutable once fitted.
    """

    knot_times: np.ndarray
    coeff_a: np.ndarray
    coeff_b: np.ndarray
    coeff_c: np.ndarray
    coeff_d: np.ndarray

    @property
    def domain(self) -> tuple[float, float]:
        return float(self.knot_times[0]), float(self.knot_times[-1])

    @property
    def n_channels(self) -> int:
        return self.coeff_a.shape[1]

    def _locate(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        lo, hi = self.domain
        if np.any(t < lo) or np.any(t > hi):
            raise DomainError(f"t outside spline domain [{lo}, {hi}]")
        idx = np.searchsorted(self.knot_times, t, side="right") - 1
        return np.clip(idx, 0, len(self.knot_times) - 2)

    def eval(self, t: float) -> np.ndarray:
        """Path value at time t, shape (n_channels,)."""
        return self.eval_many(np.array([t]))[0]

    def eval_derivative(self, t: float) -> np.ndarray:
        """Analytic dX/dt at time t, shape (n_channels,)."""
        return self.eval_derivative_many(np.array([t]))[0]

    def eval_many(self, ts: np.ndarray) -> np.ndarray:
        """Vectorized eval: (m,) times -> (m, n_channels) values."""
        idx = self._locate(ts)
        s = (np.asarray(ts, dtype=np.float64) - self.knot_times[idx])[:, None]
        return self.coeff_a[idx] + s * (self.coeff_b[idx] + s * (self.coeff_c[idx] + s * self.coeff_d[idx]))

    def eval_derivative_many(self, ts: np.ndarray) -> np.ndarray:
        idx = self._locate(ts)
        s = (np.asarray(ts, dtype=np.float64) - self.knot_times[idx])[:, None]
        return self.coeff_b[idx] + s * (2.0 * self.coeff_c[idx] + s * 3.0 * self.coeff_d[idx])

    def eval_second_derivative(self, t: float) -> np.ndarray:
        idx = self._locate(np.array([t]))
        s = t - self.knot_times[idx][:, None]
        return (2.0 * self.coeff_c[idx] + 6.0 * s * self.coeff_d[idx])[0]


def _solve_tridiagonal(lower, diag, upper, rhs):
    """Thomas algorithm; rhs may be (n,) or (n, k).  O(n); the spline system
    is strictly diagonally dominant, so no pivoting is needed."""
    n = diag.shape[0]
    dp = np.array(diag, dtype=np.float64)
    xp = np.array(rhs, dtype=np.float64)
    for i in range(1, n):
        w = lower[i - 1] / dp[i - 1]
        dp[i] -= w * upper[i - 1]
        xp[i] -= w * xp[i - 1]
    out = xp
    out[n - 1] = xp[n - 1] / dp[n - 1]
    for i in range(n - 2, -1, -1):
        out[i] = (xp[i] - upper[i] * out[i + 1]) / dp[i]
    return out


def fit_natural_cubic_spline(window: TimeSeriesWindow) -> CubicSplinePath:
    """Interpolating natural cubic spline, fitted per channel.

    Solves the standard tridiagonal system for the knot second derivatives
    (zero at both boundaries) with the Thomas algorithm, then converts to
    per-interval polynomial coefficients.
    """
    t = window.times
    y = window.values
    n = t.shape[0]
    h = np.diff(t)  # (n-1,), all > 0 by the window invariant

    if n == 2:
        m = np.zeros((2, y.shape[1]))
    else:
        slope = np.diff(y, axis=0) / h[:, None]
        rhs = 6.0 * np.diff(slope, axis=0)  # (n-2, C)
        diag = 2.0 * (h[:-1] + h[1:])
        m = np.zeros((n, y.shape[1]))
        m[1:-1] = _solve_tridiagonal(h[1:-1], diag, h[1:-1], rhs)

    hi = h[:, None]
    a = y[:-1]
    b = np.diff(y, axis=0) / hi - hi * (2.0 * m[:-1] + m[1:]) / 6.0
    c = m[:-1] / 2.0
    d = (m[1:] - m[:-1]) / (6.0 * hi)
    return CubicSplinePath(knot_times=t.copy(), coeff_a=a.copy(), coeff_b=b, coeff_c=c, coeff_d=d)
