"""Adaptive Dormand-Prince 5(4) integrator with dense output.

The stepping loop is compiled with numba and accepts any jitted right-hand
side ``f(t, y, args) -> dy/dt`` over 1-D float arrays. Plain Python
callables are jitted on first use.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numba as nb
import numpy as np
from numba.core.registry import CPUDispatcher
from scipy.interpolate import CubicHermiteSpline

from .model import STATE_LABELS, ModelParams, SystemState, model_rhs


class IntegrationError(RuntimeError):
    """Step size underflow or non-finite state; ``t_last`` is the last good time."""

    def __init__(self, message: str, t_last: float):
        super().__init__(f"{message} (last good time t={t_last!r})")
        self.t_last = t_last


@dataclass(frozen=True)
class IntegratorConfig:
    rel_tol: float = 1e-8
    abs_tol: float = 1e-8
    max_step: float = 1.0
    method: str = "dopri5"

    def __post_init__(self):
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ValueError("tolerances must be positive")
        if not self.max_step > 0:
            raise ValueError("max_step must be positive")
        if self.method != "dopri5":
            raise ValueError(f"unsupported method {self.method!r}")


# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0])
_A = np.array(
    [
        [0.0, 0.0, 0.0, 0.0, 0.0],
        [1 / 5, 0.0, 0.0, 0.0, 0.0],
        [3 / 40, 9 / 40, 0.0, 0.0, 0.0],
        [44 / 45, -56 / 15, 32 / 9, 0.0, 0.0],
        [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729, 0.0],
        [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    ]
)
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
# fifth-order minus embedded fourth-order weights, 7 stages (FSAL)
_E = np.array([-71 / 57600, 0.0, 71 / 16695, -71 / 1920, 17253 / 339200, -22 / 525, 1 / 40])
# Shampine's fourth-order continuous extension: y(t + s*h) = y + h * K^T P [s, s^2, s^3, s^4]
_P = np.array(
    [
        [1.0, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
        [0.0, 0.0, 0.0, 0.0],
        [0.0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
        [0.0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
        [0.0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
        [0.0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
        [0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
    ]
)

_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 10.0

_OK = 0
_UNDERFLOW = 1
_NONFINITE = 2


@nb.njit(cache=True)
def _rms_norm(x, scale):
    acc = 0.0
    for i in range(x.size):
        r = x[i] / scale[i]
        acc += r * r
    return math.sqrt(acc / x.size)


@nb.njit(cache=True)
def _initial_step(f, t0, y0, f0, args, direction_span, rtol, atol, max_step):
    # Hairer, Norsett & Wanner, Solving ODEs I, II.4
    scale = atol + np.abs(y0) * rtol
    d0 = _rms_norm(y0, scale)
    d1 = _rms_norm(f0, scale)
    if d0 < 1e-5 or d1 < 1e-5:
        h0 = 1e-6
    else:
        h0 = 0.01 * d0 / d1
    h0 = min(h0, direction_span, max_step)
    y1 = y0 + h0 * f0
    f1 = f(t0 + h0, y1, args)
    d2 = _rms_norm(f1 - f0, scale) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100 * h0, h1, direction_span, max_step)


@nb.njit(cache=True)
def _dopri_kernel(f, t0, y0, t_end, args, rtol, atol, max_step, t_eval, keep_dense):
    n = y0.size
    n_eval = t_eval.size
    y_eval = np.empty((n_eval, n))
    cap = 64 if keep_dense else 1
    step_t = np.empty(cap + 1)
    step_y = np.empty((cap + 1, n))
    step_q = np.empty((cap, n, 4))
    n_steps = 0

    t = t0
    y = y0.copy()
    fy = f(t, y, args)
    step_t[0] = t
    step_y[0] = y
    k = np.empty((7, n))
    ys = np.empty(n)
    y_new = np.empty(n)
    q = np.empty((n, 4))
    factor = 1.0
    t_new = t0
    f_new = fy
    j_eval = 0
    while j_eval < n_eval and t_eval[j_eval] <= t0:
        y_eval[j_eval] = y
        j_eval += 1

    h = _initial_step(f, t0, y0, fy, args, t_end - t0, rtol, atol, max_step)
    eps = np.finfo(np.float64).eps
    status = 0
    while t < t_end:
        min_step = 10.0 * eps * max(abs(t), 1.0)
        h = min(h, max_step)
        if h < min_step:
            status = 1
            break
        last = False
        if t + h >= t_end:
            h = t_end - t
            last = True

        accepted = False
        while not accepted:
            if h < min_step:
                status = 1
                break
            k[0] = fy
            for st in range(1, 6):
                for i in range(n):
                    acc = y[i]
                    for j in range(st):
                        acc += h * _A[st, j] * k[j, i]
                    ys[i] = acc
                k[st] = f(t + _C[st] * h, ys, args)
            for i in range(n):
                acc = y[i]
                for j in range(6):
                    acc += h * _B[j] * k[j, i]
                y_new[i] = acc
            t_new = t_end if last else t + h
            f_new = f(t_new, y_new, args)
            k[6] = f_new

            err_acc = 0.0
            for i in range(n):
                e = 0.0
                for j in range(7):
                    e += _E[j] * k[j, i]
                sc = atol + max(abs(y[i]), abs(y_new[i])) * rtol
                r = h * e / sc
                err_acc += r * r
            err_norm = math.sqrt(err_acc / n)
            if not np.isfinite(err_norm):
                status = 2
                break
            if err_norm <= 1.0:
                accepted = True
                if err_norm == 0.0:
                    factor = _MAX_FACTOR
                else:
                    factor = min(_MAX_FACTOR, _SAFETY * err_norm ** -0.2)
            else:
                factor = max(_MIN_FACTOR, _SAFETY * err_norm ** -0.2)
                h *= factor
                last = False
                if t + h >= t_end:
                    h = t_end - t
                    last = True
        if status != 0:
            break

        # dense output coefficients for [t, t_new]
        for i in range(n):
            for m in range(4):
                acc = 0.0
                for j in range(7):
                    acc += _P[j, m] * k[j, i]
                q[i, m] = acc
        h_step = t_new - t
        while j_eval < n_eval and t_eval[j_eval] <= t_new:
            if t_eval[j_eval] == t_new:
                y_eval[j_eval] = y_new
            else:
                frac = (t_eval[j_eval] - t) / h_step
                for i in range(n):
                    poly = frac * (q[i, 0] + frac * (q[i, 1] + frac * (q[i, 2] + frac * q[i, 3])))
                    y_eval[j_eval, i] = y[i] + h_step * poly
            j_eval += 1

        if keep_dense:
            if n_steps == cap:
                cap *= 2
                grown_t = np.empty(cap + 1)
                grown_t[: n_steps + 1] = step_t[: n_steps + 1]
                step_t = grown_t
                grown_y = np.empty((cap + 1, n))
                grown_y[: n_steps + 1] = step_y[: n_steps + 1]
                step_y = grown_y
                grown_q = np.empty((cap, n, 4))
                grown_q[:n_steps] = step_q[:n_steps]
                step_q = grown_q
            step_q[n_steps] = q
            step_t[n_steps + 1] = t_new
            step_y[n_steps + 1] = y_new
        n_steps += 1

        t = t_new
        y, y_new = y_new, y
        fy = f_new
        h = h * factor

    if keep_dense:
        m = n_steps
    else:
        m = 0
    return status, t, y_eval, j_eval, n_steps, step_t[: m + 1], step_y[: m + 1], step_q[:m]


@dataclass(frozen=True)
class Solution:
    """Raw output of :func:`solve_ivp`; ``t`` and ``y`` are the requested samples."""

    t: np.ndarray
    y: np.ndarray
    n_steps: int
    step_t: np.ndarray
    step_y: np.ndarray
    step_q: np.ndarray

    def dense(self, times) -> np.ndarray:
        """Evaluate the continuous extension at arbitrary times inside the span."""
        times = np.atleast_1d(np.asarray(times, dtype=np.float64))
        if self.step_q.shape[0] == 0:
            raise ValueError("solution was computed without dense output")
        idx = np.searchsorted(self.step_t, times, side="right") - 1
        idx = np.clip(idx, 0, self.step_q.shape[0] - 1)
        t_left = self.step_t[idx]
        h = self.step_t[idx + 1] - t_left
        s = ((times - t_left) / h)[:, None]
        q = self.step_q[idx]
        poly = q[:, :, 0] * s + q[:, :, 1] * s**2 + q[:, :, 2] * s**3 + q[:, :, 3] * s**4
        return self.step_y[idx] + h[:, None] * poly


def _as_jitted(fun):
    if isinstance(fun, CPUDispatcher):
        return fun
    return nb.njit(fun)


def solve_ivp(fun, t0: float, y0, t_end: float, config: IntegratorConfig | None = None,
              t_eval=None, args=None, dense: bool = True) -> Solution:
    """Integrate ``dy/dt = fun(t, y, args)`` from ``t0`` to ``t_end``.

    ``t_eval`` defaults to ``[t0, t_end]``. Raises :class:`IntegrationError`
    if the step size underflows or the state stops being finite.
    """
    config = config or IntegratorConfig()
    if not t_end > t0:
        raise ValueError(f"t_end ({t_end}) must exceed t0 ({t0})")
    y0 = np.ascontiguousarray(np.atleast_1d(np.asarray(y0, dtype=np.float64)))
    t_eval = np.array([t0, t_end] if t_eval is None else t_eval, dtype=np.float64)
    if t_eval.size and (t_eval[0] < t0 or t_eval[-1] > t_end or np.any(np.diff(t_eval) <= 0)):
        raise ValueError("t_eval must be strictly increasing and inside [t0, t_end]")
    args = np.zeros(0) if args is None else np.ascontiguousarray(args, dtype=np.float64)

    status, t_last, y_eval, n_done, n_steps, step_t, step_y, step_q = _dopri_kernel(
        _as_jitted(fun), float(t0), y0, float(t_end), args,
        config.rel_tol, config.abs_tol, config.max_step, t_eval, dense,
    )
    if status == _UNDERFLOW:
        raise IntegrationError("step size underflow", t_last)
    if status == _NONFINITE:
        raise IntegrationError("non-finite state encountered", t_last)
    return Solution(t_eval, y_eval, n_steps, step_t, step_y, step_q)


def daily_grid(t0: float, t_end: float) -> np.ndarray:
    """Every whole day from ``t0`` up to ``t_end``; ``t_end`` appended if fractional."""
    grid = t0 + np.arange(int(math.floor(t_end - t0)) + 1, dtype=np.float64)
    if grid[-1] < t_end:
        grid = np.append(grid, float(t_end))
    return grid


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Daily samples of the six compartments plus whatever is needed to
    interpolate between them."""

    times: np.ndarray
    values: np.ndarray
    labels: tuple = STATE_LABELS
    slopes: np.ndarray | None = None
    solution: Solution | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.times.ndim != 1 or self.values.shape[0] != self.times.size:
            raise ValueError("times and values disagree in length")
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("trajectory times must be strictly increasing")
        self.times.setflags(write=False)
        self.values.setflags(write=False)

    def __len__(self):
        return self.times.size

    def column(self, label: str) -> np.ndarray:
        return self.values[:, self.labels.index(label)]

    def state(self, i: int) -> SystemState:
        return SystemState.from_array(self.values[i])

    @property
    def states(self) -> list[SystemState]:
        return [SystemState.from_array(row) for row in self.values]

    def interpolate(self, times) -> np.ndarray:
        """Values at arbitrary in-span times, exact at stored grid points."""
        times = np.atleast_1d(np.asarray(times, dtype=np.float64))
        lo, hi = self.times[0], self.times[-1]
        bad = (times < lo) | (times > hi)
        if np.any(bad):
            raise ValueError(f"time {times[bad][0]!r} outside trajectory span [{lo}, {hi}]")
        out = np.empty((times.size, self.values.shape[1]))
        idx = np.searchsorted(self.times, times)
        idx_c = np.minimum(idx, self.times.size - 1)
        on_grid = self.times[idx_c] == times
        out[on_grid] = self.values[idx_c[on_grid]]
        off = ~on_grid
        if np.any(off):
            if self.solution is not None and self.solution.step_q.shape[0]:
                dense = self.solution.dense(times[off])
                out[off] = np.maximum(dense, 0.0) if self.labels == STATE_LABELS else dense
            else:
                slopes = self.slopes
                if slopes is None:
                    slopes = np.gradient(self.values, self.times, axis=0)
                spline = CubicHermiteSpline(self.times, self.values, slopes, axis=0)
                out[off] = spline(times[off])
        return out

    def to_csv(self, path) -> None:
        write_series_csv(path, ["time", *self.labels], self.times, self.values)

    @classmethod
    def read_csv(cls, path) -> "Trajectory":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            expected = ["time", *STATE_LABELS]
            if header != expected:
                raise ValueError(f"{path}: header must be {','.join(expected)}, got {header}")
            rows = [[float(x) for x in row] for row in reader if row]
        data = np.array(rows, dtype=np.float64).reshape(-1, 7)
        return cls(data[:, 0].copy(), data[:, 1:].copy())


def format_number(x: float) -> str:
    return format(float(x), ".17g")


def write_series_csv(path, header, times, columns) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for t, row in zip(times, columns):
            writer.writerow([format_number(t), *(format_number(v) for v in row)])


def integrate(params: ModelParams, initial: SystemState, t0: float, t_end: float,
              config: IntegratorConfig | None = None) -> Trajectory:
    """Integrate the two-host model and sample it at every whole day.

    Negative values caused by round-off are clamped to zero in the returned
    samples; the integration itself never sees the clamp.
    """
    initial.check(params)
    p = params.as_array()
    grid = daily_grid(t0, t_end)
    sol = solve_ivp(model_rhs, t0, initial.as_array(), t_end, config, t_eval=grid, args=p)
    values = np.maximum(sol.y, 0.0)
    slopes = np.array([model_rhs(t, row, p) for t, row in zip(grid, values)])
    return Trajectory(grid, values, STATE_LABELS, slopes, sol)


def sample_at(traj: Trajectory, times) -> list:
    """Interpolated states at ``times``; SystemState objects for model trajectories."""
    rows = traj.interpolate(times)
    if traj.labels == STATE_LABELS:
        return [SystemState.from_array(r) for r in rows]
    return list(rows)
