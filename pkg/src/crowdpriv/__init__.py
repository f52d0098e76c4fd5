"""Privacy-preserving state estimation for linear systems with crowd sensors."""

from .adversary import DetectionReport, detection_rate, map_detect, threshold_detect
from .covariance import (
    CovarianceTrace,
    error_cov_step,
    noise_gain_matrix,
    performance,
    steady_state_cov,
)
from .errors import (
    ConfigError,
    NoConvergenceError,
    NotSchurError,
    NumericalError,
    PoolSizeUnsupportedError,
    SingularArgumentError,
    ValidationError,
)
from .harness import ExperimentConfig, SweepRow, load_config, two_room_example, run_sweep, write_rows
from .leakage import (
    CalibrationResult,
    LeakageBoundResult,
    asymptotic_floor,
    calibrate_noise,
    leakage_bound,
)
from .model import (
    ObserverConfig,
    Sensor,
    SensorPool,
    SystemModel,
    ValidationReport,
    mean_sensor_stats,
    validate,
)
from .simulate import EnsembleStats, Trajectory, monte_carlo, simulate_run

__version__ = "0.1.0"

__all__ = [
    "asymptotic_floor",
    "calibrate_noise",
    "CalibrationResult",
    "ConfigError",
    "CovarianceTrace",
    "detection_rate",
    "DetectionReport",
    "EnsembleStats",
    "error_cov_step",
    "ExperimentConfig",
    "leakage_bound",
    "LeakageBoundResult",
    "load_config",
    "map_detect",
    "mean_sensor_stats",
    "monte_carlo",
    "NoConvergenceError",
    "noise_gain_matrix",
    "NotSchurError",
    "NumericalError",
    "ObserverConfig",
    "two_room_example",
    "performance",
    "PoolSizeUnsupportedError",
    "run_sweep",
    "Sensor",
    "SensorPool",
    "simulate_run",
    "SingularArgumentError",
    "steady_state_cov",
    "SweepRow",
    "SystemModel",
    "threshold_detect",
    "Trajectory",
    "validate",
    "ValidationError",
    "ValidationReport",
    "write_rows",
]
