"""Semi-Lagrangian schemes on simplicial meshes for transport and conservative equations
with one-sided Lipschitz drift."""

from .chain import EndpointEscaped, TransitionOperators, make_rng, step_operator, transition_row, walk
from .conservative import (
    DiscreteMeasure,
    MeasurePath,
    PiecewiseConstantDensity,
    duality_gap,
    project_initial,
    solve_forward,
    step_forward,
)
from .fields import (
    Coefficients,
    ConfigError,
    DiffusionField,
    MollifierSpec,
    TimeGrid,
    VelocityField,
    check_oslc,
    mollified_drift,
)
from .mesh import GridFunction, Mesh, MeshError, OutsideHullError, import_triangle_mesh, read_triangle_files
from .metrics import ConvergenceTable, center_of_mass, linf_gap, second_moment, wasserstein1_1d
from .transport import TransportSolution, evaluate, monte_carlo_value, solve_backward

__version__ = "0.1.0"
