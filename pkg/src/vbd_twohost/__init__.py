"""Two-host (diabetic / non-diabetic) vector-borne disease model with seasonal
biting, reproduction-number analysis, synthetic data and calibration."""

from .analysis import aor_series, correlation_matrix, prevalence_series, summarize
from .calibrate import FitSpec, loss, local_optimize, multi_start_calibrate, confidence_bands
from .datagen import Dataset, NoiseConfig, generate_dataset, read_csv, write_csv
from .integrator import IntegrationError, IntegratorConfig, Trajectory, integrate, sample_at
from .model import (
    ModelParams,
    ParameterError,
    SystemState,
    biting_rate,
    derivatives,
    force_of_infection_human,
    force_of_infection_vector,
)
from .reproduction import effective_params, r0_effective, r0_ngm, r0_seasonal_series

__version__ = "0.1.0"
