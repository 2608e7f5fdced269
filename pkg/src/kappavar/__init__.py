"""Kappa coefficients with unbiased expected indices, their variances, and a simulation harness."""

from .coefficients import (
    CoefficientEstimate,
    ContingencyTable,
    Family,
    MultiRaterTable,
    TransformationError,
    UndefinedCoefficientError,
    cohen_kappa,
    crossover_kappa,
    fleiss_kappa,
    krippendorff_alpha,
    scott_pi,
    to_unbiased,
    transform_derivative,
    unbiased_expected_index,
)
from .model import (
    MultinomialModel,
    SampleStream,
    Scenario,
    build_scenario,
    enumerate_tables,
    population_summaries,
    sample_table,
)
from .simulation import SimConfig, SimulationCell, SimulationReport, run_cell, run_grid
from .variance import (
    SmoothFunctional,
    VarianceEstimate,
    bootstrap_variance,
    delta_variance,
    empirical_variance,
    fleiss_cohen_everitt_variance,
    plugin_variance,
    va_transform,
)

__version__ = "0.1.0"
