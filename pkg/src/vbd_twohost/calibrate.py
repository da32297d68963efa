"""Least-squares calibration of the two-host model to observed infected series.

The objective is the variance-normalised sum of squared residuals over the
two observed series,

    L = sum_t (obs_I_MD - I_MD)^2 / var(obs_I_MD) + (obs_I_M - I_M)^2 / var(obs_I_M)

minimised by bounded quasi-Newton (L-BFGS-B) from Latin-hypercube start
points, with central finite-difference gradients.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.stats import qmc

from .datagen import Dataset
from .integrator import IntegrationError, IntegratorConfig, solve_ivp, write_series_csv
from .model import ModelParams, ParameterError, SystemState, model_rhs

log = logging.getLogger(__name__)

PENALTY = 1e12

# initial infected fractions, one per population
INITIAL_FRACTIONS = {"i_md0": ("n_d", 1), "i_m0": ("n_nd", 3), "i_v0": ("n_v", 5)}
FREE_PARAMETERS = ("a_mean", "a_amp", "gamma_md", "gamma_nd", *INITIAL_FRACTIONS)

DEFAULT_BOUNDS = {
    "a_mean": (0.01, 0.5),
    "a_amp": (0.0, 0.95),
    "gamma_md": (1 / 365, 1 / 7),
    "gamma_nd": (1 / 365, 1 / 7),
    "i_md0": (0.0, 0.2),
    "i_m0": (0.0, 0.2),
    "i_v0": (0.0, 0.2),
}


class CalibrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class Tolerances:
    gtol: float = 1e-8
    step_tol: float = 1e-10
    max_iter: int = 500


@dataclass(frozen=True)
class FitSpec:
    free: tuple = ("a_mean", "a_amp", "gamma_md", "gamma_nd")
    bounds: dict = field(default_factory=dict)  # overrides of DEFAULT_BOUNDS
    n_starts: int = 16
    seed: int = 0
    tolerances: Tolerances = Tolerances()
    integrator: IntegratorConfig = IntegratorConfig()

    def __post_init__(self):
        object.__setattr__(self, "free", tuple(self.free))
        if not self.free:
            raise ValueError("at least one free parameter is required")
        if len(set(self.free)) != len(self.free):
            raise ValueError("free parameters must be distinct")
        for name in self.free:
            if name not in FREE_PARAMETERS:
                raise ValueError(f"{name!r} cannot be fitted; choose from {FREE_PARAMETERS}")
        for name in self.bounds:
            if name not in FREE_PARAMETERS:
                raise ValueError(f"bounds given for unknown parameter {name!r}")
        for name in self.free:
            lo, hi = self.bound(name)
            if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
                raise ValueError(f"bounds for {name} must be finite with lower < upper, got {(lo, hi)}")
        if self.n_starts < 1:
            raise ValueError("n_starts must be >= 1")

    def bound(self, name: str) -> tuple:
        return tuple(self.bounds.get(name, DEFAULT_BOUNDS[name]))

    @property
    def lower(self) -> np.ndarray:
        return np.array([self.bound(n)[0] for n in self.free], dtype=np.float64)

    @property
    def upper(self) -> np.ndarray:
        return np.array([self.bound(n)[1] for n in self.free], dtype=np.float64)


def apply_theta(theta, fixed: ModelParams, initial: SystemState, free) -> tuple[ModelParams, SystemState]:
    """Substitute fitted values into the fixed parameters and initial state."""
    rates = {}
    y0 = initial.as_array()
    for name, value in zip(free, theta):
        if name in INITIAL_FRACTIONS:
            size_field, idx = INITIAL_FRACTIONS[name]
            size = getattr(fixed, size_field)
            y0[idx] = value * size
            y0[idx - 1] = size - y0[idx]
        else:
            rates[name] = float(value)
    params = fixed.with_values(**rates) if rates else fixed
    return params, SystemState.from_array(y0)


class Objective:
    """Callable loss over a dataset; counts evaluations that fell back to the penalty."""

    def __init__(self, dataset: Dataset, fixed: ModelParams, spec: FitSpec,
                 initial: SystemState | None = None):
        if len(dataset) < 2:
            raise CalibrationError("dataset must contain at least two rows")
        self.dataset = dataset
        self.fixed = fixed
        self.spec = spec
        self.initial = initial or SystemState.from_array(dataset.model_values[0])
        self.times = np.ascontiguousarray(dataset.times)
        self.obs_md = dataset["obs_I_MD"]
        self.obs_m = dataset["obs_I_M"]
        self.var_md = float(np.var(self.obs_md)) or 1.0
        self.var_m = float(np.var(self.obs_m)) or 1.0
        self.n_evals = 0
        self.n_failures = 0
        self.last_failure: str | None = None

    def curves(self, theta) -> tuple[np.ndarray, np.ndarray]:
        params, y0 = apply_theta(theta, self.fixed, self.initial, self.spec.free)
        sol = solve_ivp(model_rhs, self.times[0], y0.as_array(), self.times[-1],
                        self.spec.integrator, t_eval=self.times, args=params.as_array(), dense=False)
        y = np.maximum(sol.y, 0.0)
        return y[:, 1], y[:, 3]

    def __call__(self, theta) -> float:
        self.n_evals += 1
        try:
            fit_md, fit_m = self.curves(theta)
        except (IntegrationError, ParameterError, ValueError) as exc:
            self.n_failures += 1
            self.last_failure = str(exc)
            return PENALTY
        value = (np.sum((self.obs_md - fit_md) ** 2) / self.var_md
                 + np.sum((self.obs_m - fit_m) ** 2) / self.var_m)
        if not math.isfinite(value):
            self.n_failures += 1
            self.last_failure = "non-finite loss"
            return PENALTY
        return float(value)


def loss(theta, dataset: Dataset, fixed: ModelParams, spec: FitSpec,
         initial: SystemState | None = None) -> float:
    theta = np.asarray(theta, dtype=np.float64)
    if np.any(theta < spec.lower) or np.any(theta > spec.upper):
        raise ValueError(f"theta {theta} outside bounds")
    return Objective(dataset, fixed, spec, initial)(theta)


def fd_step(theta: np.ndarray) -> np.ndarray:
    return np.maximum(1e-7, 1e-7 * np.abs(theta))


def fd_gradient(objective, theta, lower, upper, f0=None) -> np.ndarray:
    """Central differences, with the stencil pulled inside the box near a bound."""
    theta = np.asarray(theta, dtype=np.float64)
    h = fd_step(theta)
    grad = np.empty_like(theta)
    for i in range(theta.size):
        up = theta.copy()
        dn = theta.copy()
        up[i] = min(theta[i] + h[i], upper[i])
        dn[i] = max(theta[i] - h[i], lower[i])
        f_up = objective(up)
        f_dn = objective(dn)
        grad[i] = (f_up - f_dn) / (up[i] - dn[i])
    return grad


def projected_gradient(theta, grad, lower, upper) -> np.ndarray:
    return np.clip(theta - grad, lower, upper) - theta


@dataclass
class LocalResult:
    theta: np.ndarray
    loss: float
    iterations: int
    n_evals: int
    pg_norm: float
    reason: str
    success: bool


def local_optimize(objective, theta0, bounds, tolerances: Tolerances | None = None) -> LocalResult:
    """Bounded quasi-Newton descent from ``theta0``.

    ``bounds`` is a pair of arrays (lower, upper). The search runs on the
    unit box so parameters of very different magnitude are equally scaled;
    gradients are taken in the original coordinates.
    """
    tol = tolerances or Tolerances()
    lower = np.asarray(bounds[0], dtype=np.float64)
    upper = np.asarray(bounds[1], dtype=np.float64)
    theta0 = np.asarray(theta0, dtype=np.float64)
    if np.any(theta0 < lower) or np.any(theta0 > upper):
        raise ValueError("theta0 must lie within bounds")
    span = upper - lower
    f0 = objective(theta0)
    if not math.isfinite(f0):
        return LocalResult(theta0, math.inf, 0, 1, math.nan, "objective not finite at start", False)

    n_evals = 1

    def to_theta(u):
        return np.clip(lower + u * span, lower, upper)

    def fun(u):
        nonlocal n_evals
        theta = to_theta(u)
        f = objective(theta)
        g = fd_gradient(objective, theta, lower, upper)
        n_evals += 1 + 2 * theta.size
        return f, g * span

    res = minimize(
        fun,
        (theta0 - lower) / span,
        jac=True,
        method="L-BFGS-B",
        bounds=[(0.0, 1.0)] * theta0.size,
        options={"maxiter": tol.max_iter, "gtol": tol.gtol, "ftol": tol.step_tol, "maxls": 40},
    )
    theta = to_theta(res.x)
    f = float(res.fun)
    if f > f0:
        theta, f = theta0, f0
    grad = fd_gradient(objective, theta, lower, upper)
    pg = float(np.linalg.norm(projected_gradient(theta, grad, lower, upper)))
    reason = res.message if isinstance(res.message, str) else res.message.decode()
    return LocalResult(theta, f, int(res.nit), n_evals, pg, reason, bool(res.success))


@dataclass
class StartRecord:
    start: list
    converged: list
    loss: float
    iterations: int
    reason: str


@dataclass
class Bands:
    times: np.ndarray
    fit_md: np.ndarray
    lo_md: np.ndarray
    hi_md: np.ndarray
    fit_m: np.ndarray
    lo_m: np.ndarray
    hi_m: np.ndarray

    def to_csv(self, path) -> None:
        header = ["time", "fit_I_MD", "lo_I_MD", "hi_I_MD", "fit_I_M", "lo_I_M", "hi_I_M"]
        cols = np.column_stack([self.fit_md, self.lo_md, self.hi_md, self.fit_m, self.lo_m, self.hi_m])
        write_series_csv(path, header, self.times, cols)

    def coverage(self, dataset: Dataset) -> tuple[float, float]:
        md = dataset["obs_I_MD"]
        m = dataset["obs_I_M"]
        inside_md = np.mean((md >= self.lo_md) & (md <= self.hi_md))
        inside_m = np.mean((m >= self.lo_m) & (m <= self.hi_m))
        return float(inside_md), float(inside_m)


@dataclass
class FitResult:
    free: tuple
    theta: np.ndarray
    loss: float
    starts: list
    params: ModelParams
    initial: SystemState
    residual_sd: dict = field(default_factory=dict)
    bands: Bands | None = None
    seed: int = 0

    @property
    def values(self) -> dict:
        return {name: float(v) for name, v in zip(self.free, self.theta)}

    def to_dict(self) -> dict:
        return {
            "free": list(self.free),
            "fitted": self.values,
            "loss": self.loss,
            "seed": self.seed,
            "residual_sd": self.residual_sd,
            "band_method": "fitted curve +- 1.96 x residual standard deviation (homoscedastic)",
            "params": self.params.to_dict(),
            "initial": asdict(self.initial),
            "starts": [asdict(s) for s in self.starts],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def latin_hypercube_starts(spec: FitSpec) -> np.ndarray:
    sampler = qmc.LatinHypercube(d=len(spec.free), rng=np.random.default_rng(spec.seed))
    return qmc.scale(sampler.random(spec.n_starts), spec.lower, spec.upper)


def multi_start_calibrate(dataset: Dataset, fixed: ModelParams, spec: FitSpec | None = None,
                          initial: SystemState | None = None, starts=None) -> FitResult:
    """Run :func:`local_optimize` from each start point and keep the best.

    ``starts`` overrides the Latin-hypercube design (one row per start).
    """
    spec = spec or FitSpec()
    if len(dataset) == 0:
        raise CalibrationError("dataset has no rows")
    span = dataset.times[-1] - dataset.times[0]
    if span < 2 * fixed.period_months * fixed.days_per_month:
        warnings.warn("dataset covers fewer than two seasonal periods; amplitude may be unidentifiable",
                      stacklevel=2)
    objective = Objective(dataset, fixed, spec, initial)
    lower, upper = spec.lower, spec.upper
    points = latin_hypercube_starts(spec) if starts is None else np.atleast_2d(np.asarray(starts, float))

    records = []
    results = []
    for k, theta0 in enumerate(points):
        res = local_optimize(objective, theta0, (lower, upper), spec.tolerances)
        log.info("start %d: loss %.6g after %d iterations (%s)", k, res.loss, res.iterations, res.reason)
        records.append(StartRecord(theta0.tolist(), res.theta.tolist(), res.loss, res.iterations, res.reason))
        results.append(res)

    ok = [i for i, r in enumerate(results) if math.isfinite(r.loss) and r.loss < PENALTY]
    if not ok:
        detail = "; ".join(f"start {i}: {r.reason}" for i, r in enumerate(results))
        raise CalibrationError(f"all {len(results)} starts failed: {detail}")
    best = min(ok, key=lambda i: (results[i].loss, i))
    theta = results[best].theta
    params, y0 = apply_theta(theta, fixed, objective.initial, spec.free)
    fit = FitResult(spec.free, theta, results[best].loss, records, params, y0, seed=spec.seed)
    fit.bands = confidence_bands(fit, dataset, fixed, objective=objective)
    return fit


def confidence_bands(fit: FitResult, dataset: Dataset, fixed: ModelParams,
                     objective: Objective | None = None) -> Bands:
    """Fitted curves with +-1.96 residual-SD bands for both observed series."""
    n = len(dataset)
    if n < 10:
        raise CalibrationError(f"need at least 10 residuals for a band, have {n}")
    if objective is None:
        objective = Objective(dataset, fixed, FitSpec(free=fit.free), fit.initial)
    fit_md, fit_m = objective.curves(fit.theta)
    dof = max(n - len(fit.free), 1)
    sd_md = math.sqrt(np.sum((dataset["obs_I_MD"] - fit_md) ** 2) / dof)
    sd_m = math.sqrt(np.sum((dataset["obs_I_M"] - fit_m) ** 2) / dof)
    fit.residual_sd = {"I_MD": sd_md, "I_M": sd_m}
    half_md, half_m = 1.96 * sd_md, 1.96 * sd_m
    return Bands(dataset.times.copy(), fit_md, fit_md - half_md, fit_md + half_md,
                 fit_m, fit_m - half_m, fit_m + half_m)
