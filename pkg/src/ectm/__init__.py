"""Equivalent-circuit electro-thermal model of battery surface temperature.

Simulate the lumped RC thermal model with polynomial heat generation,
identify its linear parameters from one cycle by least squares, and
predict temperature profiles of later cycles.
"""

__version__ = "0.1.0"

from .errors import (
    DataIOError,
    ECTMError,
    IllConditionedError,
    ModelMismatchError,
    NonConvergenceError,
    NonInvertibleError,
    SchemaError,
)
from .model import (
    CycleData,
    LinearParams,
    Mode,
    PhysicalParams,
    Polynomial,
    Sample,
    SocSeries,
    feature_row,
    heat_generation,
    invert_linear,
    linear_to_physical,
    params_to_linear,
    poly_eval,
    simulate_cycle,
    soc_profile,
    step_linear,
    step_physical,
)
from .identify import (
    BoxConstraints,
    DesignMatrix,
    FitReport,
    build_design_matrix,
    fit_one_shot,
    solve_box_constrained,
    solve_ols,
)
from .datasets import ColumnMap, IngestReport, capacity_fade, ingest_csv, resample_uniform
from .evaluation import EvalResult, SynthSpec, evaluate_cycle, export_profiles, rmse, synth_generate
