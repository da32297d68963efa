"""Synthetic observation datasets: a model trajectory plus noisy infected counts.

Noise is multiplicative Gaussian, ``obs = max(0, I * (1 + sigma * z))``.
Randomness comes from numpy's PCG64. The seed is expanded with
``SeedSequence(seed).spawn(2)``: child 0 drives ``obs_I_MD``, child 1
drives ``obs_I_M``. Both streams therefore stay fixed whatever the other
column's settings.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .integrator import IntegratorConfig, format_number, integrate
from .model import STATE_LABELS, ModelParams, SystemState

GENERATOR_VERSION = "vbd_twohost.datagen/1"
COLUMNS = ("time", *STATE_LABELS, "obs_I_MD", "obs_I_M")

# Reference ranges of the published dataset description. Exceeding them is
# flagged, never rejected.
REFERENCE_RANGES = {
    "S_D": (75_000, 80_000),
    "I_MD": (0, 5_000),
    "S_ND": (870_000, 920_000),
    "I_M": (0, 50_000),
    "S_V": (1_900_000, 2_000_000),
    "I_V": (0, 100_000),
    "obs_I_MD": (0, 5_000),
    "obs_I_M": (0, 50_000),
}


class DatasetFormatError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseConfig:
    sigma_diabetic: float = 0.15
    sigma_nondiabetic: float = 0.20
    seed: int = 0

    def __post_init__(self):
        for name in ("sigma_diabetic", "sigma_nondiabetic"):
            value = getattr(self, name)
            if not 0.0 <= value < 1.0:
                raise ValueError(f"{name} must lie in [0, 1), got {value!r}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")


def default_initial_state(params: ModelParams) -> SystemState:
    """2.5% of each human group infected (2,000 diabetics at the default
    sizes) and 1% of vectors."""
    return SystemState.from_infected(
        params,
        i_md=0.025 * params.n_d,
        i_m=0.025 * params.n_nd,
        i_v=0.01 * params.n_v,
    )


@dataclass(frozen=True, eq=False)
class Dataset:
    """Daily rows in ``COLUMNS`` order, plus a provenance dict."""

    table: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.table.ndim != 2 or self.table.shape[1] != len(COLUMNS):
            raise DatasetFormatError(f"expected {len(COLUMNS)} columns, got shape {self.table.shape}")
        self.table.setflags(write=False)

    def __len__(self):
        return self.table.shape[0]

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return np.array_equal(self.table, other.table) and self.provenance == other.provenance

    def __getitem__(self, column: str) -> np.ndarray:
        return self.table[:, COLUMNS.index(column)]

    @property
    def times(self) -> np.ndarray:
        return self["time"]

    @property
    def model_values(self) -> np.ndarray:
        return self.table[:, 1:7]

    def range_flags(self) -> dict:
        """Columns whose values leave the reference ranges, with their extremes."""
        flags = {}
        if not len(self):
            return flags
        for name, (lo, hi) in REFERENCE_RANGES.items():
            col = self[name]
            if col.min() < lo or col.max() > hi:
                flags[name] = [float(col.min()), float(col.max())]
        return flags


def _noisy(values: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    z = rng.standard_normal(values.size)
    if sigma == 0.0:
        return values.copy()
    return np.maximum(0.0, values * (1.0 + sigma * z))


def generate_dataset(params: ModelParams, initial: SystemState | None = None, duration_days: int = 1080,
                     noise: NoiseConfig | None = None, config: IntegratorConfig | None = None) -> Dataset:
    if duration_days < 1 or int(duration_days) != duration_days:
        raise ValueError("duration_days must be a positive whole number")
    noise = noise or NoiseConfig()
    initial = initial or default_initial_state(params)
    traj = integrate(params, initial, 0.0, float(duration_days), config)

    stream_md, stream_m = (np.random.Generator(np.random.PCG64(s))
                           for s in np.random.SeedSequence(noise.seed).spawn(2))
    i_md = traj.column("I_MD")
    i_m = traj.column("I_M")
    obs_md = _noisy(i_md, noise.sigma_diabetic, stream_md)
    obs_m = _noisy(i_m, noise.sigma_nondiabetic, stream_m)

    table = np.column_stack([traj.times, traj.values, obs_md, obs_m])
    provenance = {
        "generator": GENERATOR_VERSION,
        "params": params.to_dict(),
        "initial": asdict(initial),
        "duration_days": int(duration_days),
        "noise": asdict(noise),
        "rng": "PCG64 via SeedSequence(seed).spawn(2): [obs_I_MD, obs_I_M]",
    }
    dataset = Dataset(table, provenance)
    provenance["range_flags"] = dataset.range_flags()
    return dataset


def dataset_from_trajectory(traj, provenance: dict | None = None) -> Dataset:
    """Noise-free dataset whose observed columns copy the model's infected series."""
    table = np.column_stack([traj.times, traj.values, traj.column("I_MD"), traj.column("I_M")])
    return Dataset(table, dict(provenance or {}))


def meta_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".meta.json")


def write_csv(dataset: Dataset, path, meta: bool = True) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(COLUMNS)
        for row in dataset.table:
            writer.writerow([format_number(x) for x in row])
    if meta:
        meta_path(path).write_text(json.dumps(dataset.provenance, indent=2, sort_keys=True) + "\n")


def read_csv(path) -> Dataset:
    """Parse a dataset CSV; the sibling ``.meta.json`` is loaded when present."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != COLUMNS:
            raise DatasetFormatError(f"{path}: header must be exactly {','.join(COLUMNS)}; got {header}")
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(COLUMNS):
                raise DatasetFormatError(f"{path}: row {line_no} has {len(row)} cells, expected {len(COLUMNS)}")
            parsed = []
            for name, cell in zip(COLUMNS, row):
                try:
                    value = float(cell)
                except ValueError:
                    raise DatasetFormatError(
                        f"{path}: row {line_no}, column {name}: non-numeric value {cell!r}"
                    ) from None
                if not math.isfinite(value):
                    raise DatasetFormatError(f"{path}: row {line_no}, column {name}: non-finite value")
                parsed.append(value)
            if rows and parsed[0] <= rows[-1][0]:
                raise DatasetFormatError(f"{path}: row {line_no}, column time: times must be strictly increasing")
            rows.append(parsed)
    table = np.array(rows, dtype=np.float64).reshape(-1, len(COLUMNS))
    provenance = {}
    if meta_path(path).exists():
        provenance = json.loads(meta_path(path).read_text())
    return Dataset(table, provenance)
