"""Physics-coupled spatio-temporal active learning on regular grids."""

__version__ = "0.1.0"

from .grid import GridSpec, FieldState, Observation, ObservationSet, positional_encoding, neighbors
from .wave import WaveParams, Trajectory, simulate, step
from .gp import Hyperparams, GpModel
from .physics import PdeCoefficients, estimate_coefficients
from .kriging import kriging_mse, select_top_n
from .forecast import FnConfig, FnParams, ForecastModel
from .active import ActiveConfig, StepMetrics, run

__all__ = [
    "GridSpec", "FieldState", "Observation", "ObservationSet", "positional_encoding", "neighbors",
    "WaveParams", "Trajectory", "simulate", "step", "Hyperparams", "GpModel",
    "PdeCoefficients", "estimate_coefficients", "kriging_mse", "select_top_n",
    "FnConfig", "FnParams", "ForecastModel", "ActiveConfig", "StepMetrics", "run",
]
