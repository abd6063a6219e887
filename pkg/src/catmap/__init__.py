"""MAP estimation for logistic regression under catalytic priors.

Finite-sample fitting, the high-dimensional scalar systems describing the
estimator, and the inference, tuning and selection tools built on them.
"""

__version__ = "0.1.0"

from .asymptotics import ScalingParams, limit_metrics, solve, solve_3eq, solve_4eq, solve_minfty
from .datagen import AuxiliarySpec, CoefficientSpec, DesignSpec, gen_logistic_data, gen_synthetic
from .fitting import MapFit, NewtonOptions, fit_map, fit_map_population
from .glm import Dataset

__all__ = [
    "AuxiliarySpec", "CoefficientSpec", "Dataset", "DesignSpec", "MapFit", "NewtonOptions",
    "ScalingParams", "fit_map", "fit_map_population", "gen_logistic_data", "gen_synthetic",
    "limit_metrics", "solve", "solve_3eq", "solve_4eq", "solve_minfty",
]
