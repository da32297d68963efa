"""Basic reproduction number for the two-host model.

Two quantities are reported side by side:

* ``r0_effective`` collapses the two host groups into one using
  population-weighted transmission and recovery parameters and takes the
  geometric mean of the host->vector and vector->host numbers.
* ``r0_ngm`` is the spectral radius of the next-generation matrix F V^-1
  built at the disease-free equilibrium.

They coincide for homogeneous hosts. With heterogeneous groups the weighted
average of recovery *rates* understates the mean infectious period, so
``r0_ngm`` is the larger of the two.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .model import ModelParams, biting_rate


@dataclass(frozen=True)
class EffectiveParams:
    b_eff: float
    c_eff: float
    gamma_eff: float


@dataclass(frozen=True)
class NgmMatrices:
    """New-infection (F) and transition (V) matrices, ordered I_MD, I_M, I_V."""

    F: np.ndarray
    V: np.ndarray

    @property
    def next_generation(self) -> np.ndarray:
        return self.F @ np.linalg.inv(self.V)


@dataclass(frozen=True)
class R0Effective:
    value: float
    host_to_vector: float
    vector_to_host: float


def effective_params(params: ModelParams) -> EffectiveParams:
    w_d = params.n_d / params.n_h_total
    w_nd = params.n_nd / params.n_h_total
    return EffectiveParams(
        b_eff=w_d * params.b_d + w_nd * params.b_nd,
        c_eff=w_d * params.c_d + w_nd * params.c_nd,
        gamma_eff=w_d * params.gamma_md + w_nd * params.gamma_nd,
    )


def r0_effective_parts(params: ModelParams, a: float) -> R0Effective:
    """Directional factors whose geometric mean is the effective R0."""
    if a < 0:
        raise ValueError("biting rate must be non-negative")
    eff = effective_params(params)
    n_h, n_v = params.n_h_total, params.n_v
    hv = a * eff.c_eff * n_v / (params.mu_v * n_h)
    vh = a * eff.b_eff * n_h / (eff.gamma_eff * n_v)
    # closed form rather than sqrt(hv * vh) so the result is exactly linear in a
    value = a * math.sqrt(eff.b_eff * eff.c_eff / (params.mu_v * eff.gamma_eff))
    return R0Effective(value, hv, vh)


def r0_effective(params: ModelParams, a: float) -> float:
    return r0_effective_parts(params, a).value


def ngm_matrices(params: ModelParams, a: float) -> NgmMatrices:
    n_h, n_v = params.n_h_total, params.n_v
    F = np.zeros((3, 3))
    F[0, 2] = a * params.b_d * params.n_d / n_v
    F[1, 2] = a * params.b_nd * params.n_nd / n_v
    F[2, 0] = a * params.c_d * n_v / n_h
    F[2, 1] = a * params.c_nd * n_v / n_h
    V = np.diag([params.gamma_md, params.gamma_nd, params.mu_v])
    return NgmMatrices(F, V)


def r0_ngm(params: ModelParams, a: float) -> float:
    """Spectral radius of F V^-1.

    The matrix has the block form [[0, u], [w^T, 0]] so its non-zero
    eigenvalues are +-sqrt(w . u); no general eigensolver is needed.
    """
    if a < 0:
        raise ValueError("biting rate must be non-negative")
    load = (
        params.b_d * params.c_d * params.n_d / params.gamma_md
        + params.b_nd * params.c_nd * params.n_nd / params.gamma_nd
    )
    return a * math.sqrt(load / (params.mu_v * params.n_h_total))


@dataclass(frozen=True)
class SeasonalR0:
    times: np.ndarray
    biting: np.ndarray
    r0_effective: np.ndarray
    r0_ngm: np.ndarray

    def summary(self) -> dict:
        return {
            "r0_effective": _stats(self.r0_effective),
            "r0_ngm": _stats(self.r0_ngm),
        }

    def to_csv(self, path) -> None:
        from .integrator import format_number

        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["time", "a_t", "r0_effective", "r0_ngm"])
            for row in zip(self.times, self.biting, self.r0_effective, self.r0_ngm):
                writer.writerow([format_number(x) for x in row])


def _stats(x: np.ndarray) -> dict:
    return {"min": float(x.min()), "max": float(x.max()), "mean": float(x.mean())}


def r0_seasonal_series(params: ModelParams, t0: float, t_end: float, step: float = 1.0) -> SeasonalR0:
    """Both R0 variants at a(t) on the half-open grid ``t0, t0 + step, ... < t_end``."""
    if not t_end > t0:
        raise ValueError("t_end must exceed t0")
    if not step > 0:
        raise ValueError("step must be positive")
    n = int(math.ceil((t_end - t0) / step - 1e-9))
    times = t0 + step * np.arange(n)
    a = np.array([biting_rate(t, params) for t in times])
    # both variants are linear in a
    eff_unit = r0_effective(params, 1.0)
    ngm_unit = r0_ngm(params, 1.0)
    return SeasonalR0(times, a, a * eff_unit, a * ngm_unit)
