"""edgelab: scalar curvature of singular metrics on structured grids."""

from .grids import (
    Axis,
    ChartSpec,
    MetricField,
    Region,
    ScalarField,
    TensorField,
    box_chart,
    chart_1d,
    polar_chart,
    torus_chart,
)
from .curvature import (
    conformal_transform,
    integrate,
    laplace_beltrami,
    linearized_scalar_curvature,
    linearized_scalar_curvature_formula,
    ricci,
    scalar_curvature,
    uniform_equivalence,
    volume,
)

__version__ = "0.1.0"
