"""Two-host (diabetic / non-diabetic) vector-borne SIS model with seasonal biting.

Humans are split into a diabetic group (S_D, I_MD) and a non-diabetic group
(S_ND, I_M); mosquitoes into S_V, I_V. Human groups are closed, the vector
population is held constant by recruitment at rate ``mu_v * n_v``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numba as nb
import numpy as np

STATE_LABELS = ("S_D", "I_MD", "S_ND", "I_M", "S_V", "I_V")


class ParameterError(ValueError):
    """Raised for an invalid model parameter; ``field`` names the culprit."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass(frozen=True)
class ModelParams:
    # populations (individuals)
    n_d: int = 80_000
    n_nd: int = 920_000
    n_v: int = 2_000_000
    # vector -> human transmission probabilities
    b_d: float = 0.65
    b_nd: float = 0.50
    # human -> vector transmission probabilities
    c_d: float = 0.75
    c_nd: float = 0.50
    # per-day rates
    gamma_md: float = 1 / 120
    gamma_nd: float = 1 / 60
    mu_v: float = 1 / 14
    # seasonal biting rate
    a_mean: float = 0.1
    a_amp: float = 0.8
    phase_offset: float = 10.0
    period_months: float = 12.0
    days_per_month: float = 30.4

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("n_d", "n_nd", "n_v"):
            value = getattr(self, name)
            if isinstance(value, bool) or not float(value).is_integer():
                raise ParameterError(name, f"population must be an integer, got {value!r}")
            if value < 0:
                raise ParameterError(name, f"population must be non-negative, got {value!r}")
        if self.n_v <= 0:
            raise ParameterError("n_v", "vector population must be positive")
        if self.n_d + self.n_nd <= 0:
            raise ParameterError("n_nd", "total human population must be positive")
        for name in ("b_d", "b_nd", "c_d", "c_nd"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ParameterError(name, f"probability must lie in [0, 1], got {value!r}")
        for name in ("gamma_md", "gamma_nd", "mu_v", "period_months", "days_per_month"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ParameterError(name, f"must be finite and > 0, got {value!r}")
        if not (math.isfinite(self.a_mean) and self.a_mean >= 0):
            raise ParameterError("a_mean", f"must be finite and >= 0, got {self.a_mean!r}")
        if not 0.0 <= self.a_amp < 1.0:
            raise ParameterError("a_amp", f"must lie in [0, 1), got {self.a_amp!r}")
        if not math.isfinite(self.phase_offset):
            raise ParameterError("phase_offset", "must be finite")

    @property
    def n_h_total(self) -> int:
        return self.n_d + self.n_nd

    def with_values(self, **changes) -> "ModelParams":
        return replace(self, **changes)

    def as_array(self) -> np.ndarray:
        """Pack into the flat float vector consumed by the compiled RHS."""
        return np.array([getattr(self, f.name) for f in fields(self)], dtype=np.float64)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelParams":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ParameterError(unknown[0], "unknown parameter")
        values = {}
        for key, value in data.items():
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ParameterError(key, f"expected a number, got {value!r}")
            values[key] = value
        return cls(**values)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ModelParams":
        data = json.loads(text)
        if not isinstance(data, dict):
            raise ParameterError("<root>", "parameter document must be a JSON object")
        return cls.from_dict(data)

    @classmethod
    def load(cls, path) -> "ModelParams":
        return cls.from_json(Path(path).read_text())

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")


# index of each ModelParams field in ``as_array``
_P = {f.name: i for i, f in enumerate(fields(ModelParams))}
_N_D, _N_ND, _N_V = _P["n_d"], _P["n_nd"], _P["n_v"]
_B_D, _B_ND, _C_D, _C_ND = _P["b_d"], _P["b_nd"], _P["c_d"], _P["c_nd"]
_G_MD, _G_ND, _MU_V = _P["gamma_md"], _P["gamma_nd"], _P["mu_v"]
_A_MEAN, _A_AMP = _P["a_mean"], _P["a_amp"]
_PHASE, _PERIOD, _DPM = _P["phase_offset"], _P["period_months"], _P["days_per_month"]


@dataclass(frozen=True)
class SystemState:
    s_d: float
    i_md: float
    s_nd: float
    i_m: float
    s_v: float
    i_v: float

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.s_d, self.i_md, self.s_nd, self.i_m, self.s_v, self.i_v], dtype=np.float64
        )

    @classmethod
    def from_array(cls, values) -> "SystemState":
        return cls(*(float(v) for v in values))

    @classmethod
    def disease_free(cls, params: ModelParams) -> "SystemState":
        return cls(float(params.n_d), 0.0, float(params.n_nd), 0.0, float(params.n_v), 0.0)

    @classmethod
    def from_infected(cls, params: ModelParams, i_md: float, i_m: float, i_v: float) -> "SystemState":
        """Build a state from infected counts, filling susceptibles by conservation."""
        return cls(params.n_d - i_md, i_md, params.n_nd - i_m, i_m, params.n_v - i_v, i_v)

    def check(self, params: ModelParams, rel_tol: float = 1e-6) -> None:
        """Raise ValueError if the state is negative or breaks conservation."""
        values = self.as_array()
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise ValueError(f"compartments must be finite and non-negative: {self}")
        for label, total, expected in (
            ("diabetic", self.s_d + self.i_md, params.n_d),
            ("non-diabetic", self.s_nd + self.i_m, params.n_nd),
            ("vector", self.s_v + self.i_v, params.n_v),
        ):
            if abs(total - expected) > rel_tol * max(expected, 1.0):
                raise ValueError(f"{label} compartments sum to {total}, expected {expected}")


# Same six components as SystemState, in individuals per day.
StateDerivative = SystemState


def biting_rate(t: float, params: ModelParams) -> float:
    """Seasonal biting rate a(t) in bites per day.

    ``t`` is in days; it is converted to months with ``days_per_month`` and
    the cosine peaks when ``t / days_per_month == phase_offset`` (mod period).
    """
    months = t / params.days_per_month - params.phase_offset
    return params.a_mean * (1.0 + params.a_amp * math.cos(2.0 * math.pi * months / params.period_months))


def force_of_infection_human(a: float, i_v: float, n_v: float) -> float:
    if n_v <= 0:
        raise ValueError("vector population must be positive")
    return a * i_v / n_v


def force_of_infection_vector(a: float, c: float, i_host: float, n_h_total: float) -> float:
    if n_h_total <= 0:
        raise ValueError("human population must be positive")
    return a * c * i_host / n_h_total


def derivatives(t: float, state: SystemState, params: ModelParams) -> StateDerivative:
    a = biting_rate(t, params)
    lam_h = force_of_infection_human(a, state.i_v, params.n_v)
    lam_vd = force_of_infection_vector(a, params.c_d, state.i_md, params.n_h_total)
    lam_vnd = force_of_infection_vector(a, params.c_nd, state.i_m, params.n_h_total)

    new_md = lam_h * params.b_d * state.s_d
    rec_md = params.gamma_md * state.i_md
    new_m = lam_h * params.b_nd * state.s_nd
    rec_m = params.gamma_nd * state.i_m
    new_v = (lam_vd + lam_vnd) * state.s_v

    # d(s_v) written as -(new_v + mu*i_v) so each pair cancels exactly;
    # algebraically equal to mu*N_v - new_v - mu*s_v when s_v + i_v = N_v.
    d_iv = new_v - params.mu_v * state.i_v
    return StateDerivative(
        s_d=-new_md + rec_md,
        i_md=new_md - rec_md,
        s_nd=-new_m + rec_m,
        i_m=new_m - rec_m,
        s_v=-d_iv,
        i_v=d_iv,
    )


@nb.njit(cache=True)
def model_rhs(t, y, p):
    """Compiled right-hand side on flat arrays (``y`` as ``STATE_LABELS``,
    ``p`` as ``ModelParams.as_array``). Mirrors :func:`derivatives`."""
    months = t / p[_DPM] - p[_PHASE]
    a = p[_A_MEAN] * (1.0 + p[_A_AMP] * np.cos(2.0 * np.pi * months / p[_PERIOD]))
    n_h = p[_N_D] + p[_N_ND]
    lam_h = a * y[5] / p[_N_V]
    lam_v = a * (p[_C_D] * y[1] + p[_C_ND] * y[3]) / n_h

    new_md = lam_h * p[_B_D] * y[0]
    rec_md = p[_G_MD] * y[1]
    new_m = lam_h * p[_B_ND] * y[2]
    rec_m = p[_G_ND] * y[3]
    d_iv = lam_v * y[4] - p[_MU_V] * y[5]

    out = np.empty(6)
    out[0] = rec_md - new_md
    out[1] = new_md - rec_md
    out[2] = rec_m - new_m
    out[3] = new_m - rec_m
    out[4] = -d_iv
    out[5] = d_iv
    return out
