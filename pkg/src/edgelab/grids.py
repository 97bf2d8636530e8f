"""Structured charts and sampled fields.

A chart is a tensor-product grid on a box, with a periodic or clamped
boundary per axis.  Two coordinate styles are supported:

* ``cartesian`` -- nothing special is assumed about the axes;
* ``polar`` -- the first two axes are (r, theta) around a codimension-2
  axis, theta is periodic and r stays strictly positive.  The axis r = 0
  is never sampled; a cartesian companion patch covers it when needed.

Scalar fields store one value per node, tensor fields one symmetric
matrix per node.  All derivative stencils live in :mod:`edgelab.curvature`;
this module only knows about sampling, trapezoidal weights and masks.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

CARTESIAN = "cartesian"
POLAR = "polar"


@dataclass(frozen=True)
class Axis:
    """One coordinate axis of a chart."""

    lower: float
    upper: float
    count: int
    periodic: bool = False

    def __post_init__(self):
        if not np.isfinite(self.lower) or not np.isfinite(self.upper):
            raise ValueError("axis bounds must be finite")
        if self.upper <= self.lower:
            raise ValueError(f"axis needs upper > lower, got [{self.lower}, {self.upper}]")
        if self.count < 5:
            raise ValueError(f"axis needs at least 5 samples, got {self.count}")

    @property
    def spacing(self) -> float:
        # Periodic axes identify upper with lower, so the last node sits one
        # spacing below the identified endpoint.
        if self.periodic:
            return (self.upper - self.lower) / self.count
        return (self.upper - self.lower) / (self.count - 1)

    @property
    def nodes(self) -> np.ndarray:
        if self.periodic:
            return self.lower + self.spacing * np.arange(self.count)
        return np.linspace(self.lower, self.upper, self.count)


@dataclass(frozen=True)
class ChartSpec:
    """Tensor-product grid with per-axis boundary kind.

    For ``style="polar"`` the axes are ordered (r, theta, y^1, ..., y^{n-2});
    theta must be periodic and the r range must exclude 0.
    """

    axes: tuple[Axis, ...]
    style: str = CARTESIAN

    def __post_init__(self):
        if len(self.axes) < 1:
            raise ValueError("chart needs at least one axis")
        if self.style not in (CARTESIAN, POLAR):
            raise ValueError(f"unknown chart style {self.style!r}")
        if self.style == POLAR:
            if len(self.axes) < 2:
                raise ValueError("polar chart needs (r, theta) axes")
            if self.axes[0].periodic:
                raise ValueError("polar r-axis cannot be periodic")
            if self.axes[0].lower <= 0.0:
                raise ValueError("polar charts never sample r = 0; need r-lower > 0")
            if not self.axes[1].periodic:
                raise ValueError("polar theta-axis must be periodic")

    @property
    def dimension(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(ax.count for ax in self.axes)

    @property
    def node_count(self) -> int:
        return int(np.prod(self.shape))

    @property
    def spacings(self) -> tuple[float, ...]:
        return tuple(ax.spacing for ax in self.axes)

    def coords(self, axis: int) -> np.ndarray:
        return self.axes[axis].nodes

    def meshgrid(self) -> tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*(ax.nodes for ax in self.axes), indexing="ij"))

    def is_closed(self) -> bool:
        """True when every axis is periodic (no boundary at all)."""
        return all(ax.periodic for ax in self.axes)

    def quadrature_weights(self) -> np.ndarray:
        """Trapezoidal node weights (coordinate volume per node)."""
        w = np.ones(self.shape)
        for k, ax in enumerate(self.axes):
            wk = np.full(ax.count, ax.spacing)
            if not ax.periodic:
                wk[0] *= 0.5
                wk[-1] *= 0.5
            shape = [1] * self.dimension
            shape[k] = ax.count
            w = w * wk.reshape(shape)
        return w

    def interior(self, margin: int = 2) -> "Region":
        """Nodes at least ``margin`` nodes away from every clamped boundary."""
        mask = np.ones(self.shape, dtype=bool)
        for k, ax in enumerate(self.axes):
            if ax.periodic:
                continue
            idx = [slice(None)] * self.dimension
            idx[k] = slice(0, margin)
            mask[tuple(idx)] = False
            idx[k] = slice(ax.count - margin, ax.count)
            mask[tuple(idx)] = False
        return Region(self, mask)

    def full(self) -> "Region":
        return Region(self, np.ones(self.shape, dtype=bool))


def chart_1d(lower: float, upper: float, count: int, periodic: bool = False) -> ChartSpec:
    return ChartSpec((Axis(lower, upper, count, periodic),))


def torus_chart(counts: Sequence[int], lengths: Sequence[float] | float = 1.0) -> ChartSpec:
    """Flat-torus chart: every axis periodic on [0, L)."""
    counts = tuple(int(c) for c in counts)
    if np.isscalar(lengths):
        lengths = [float(lengths)] * len(counts)
    axes = tuple(Axis(0.0, L, c, periodic=True) for c, L in zip(counts, lengths))
    return ChartSpec(axes, CARTESIAN)


def box_chart(bounds: Sequence[tuple[float, float]], counts: Sequence[int]) -> ChartSpec:
    axes = tuple(Axis(lo, hi, int(c)) for (lo, hi), c in zip(bounds, counts))
    return ChartSpec(axes, CARTESIAN)


def polar_chart(
    r_range: tuple[float, float],
    r_count: int,
    theta_count: int,
    y_axes: Sequence[Axis] = (),
) -> ChartSpec:
    """Polar-product chart (r, theta, y...) with theta on the full circle."""
    axes = [Axis(r_range[0], r_range[1], r_count)]
    axes.append(Axis(0.0, 2.0 * np.pi, theta_count, periodic=True))
    axes.extend(y_axes)
    return ChartSpec(tuple(axes), POLAR)


@dataclass
class ScalarField:
    """One real value per chart node.  NaN marks not-computed nodes."""

    chart: ChartSpec
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.chart.shape:
            raise ValueError(
                f"value shape {self.values.shape} does not match chart {self.chart.shape}"
            )

    def check_finite(self, region: "Region | None" = None) -> None:
        vals = self.values if region is None else self.values[region.mask]
        if not np.all(np.isfinite(vals)):
            raise ValueError("scalar field has non-finite values in the checked region")

    def computed(self) -> "Region":
        """Region where the field actually holds values (non-NaN)."""
        return Region(self.chart, np.isfinite(self.values))

    @classmethod
    def from_function(cls, chart: ChartSpec, fn: Callable) -> "ScalarField":
        mesh = chart.meshgrid()
        return cls(chart, np.asarray(fn(*mesh), dtype=float) + np.zeros(chart.shape))


@dataclass
class TensorField:
    """Rank-2 covariant tensor sampled per node, stored as (..., n, n)."""

    chart: ChartSpec
    values: np.ndarray
    rank: int = 2

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        n = self.chart.dimension
        if self.rank != 2:
            raise ValueError("only rank-2 tensor fields are supported")
        if self.values.shape != self.chart.shape + (n, n):
            raise ValueError(
                f"tensor shape {self.values.shape} does not match chart "
                f"{self.chart.shape + (n, n)}"
            )

    def check_symmetric(self) -> None:
        if not np.array_equal(self.values, np.swapaxes(self.values, -1, -2)):
            raise ValueError("tensor field is not exactly symmetric")

    def check_finite(self) -> None:
        if not np.all(np.isfinite(self.values)):
            raise ValueError("tensor field has non-finite entries")

    @classmethod
    def from_function(cls, chart: ChartSpec, fn: Callable) -> "TensorField":
        """Sample ``fn(*coords) -> (n, n) array`` on every node."""
        mesh = chart.meshgrid()
        n = chart.dimension
        out = np.asarray(fn(*mesh), dtype=float)
        if out.shape == (n, n) + chart.shape:
            out = np.moveaxis(out, (0, 1), (-2, -1))
        expected = chart.shape + (n, n)
        out = np.broadcast_to(out, expected).copy()
        return cls(chart, out)


class MetricField:
    """Pointwise symmetric positive-definite rank-2 tensor."""

    def __init__(self, chart: ChartSpec, values: np.ndarray, validate: bool = True):
        self.tensor = TensorField(chart, np.asarray(values, dtype=float))
        self.tensor.check_symmetric()
        if validate:
            self.tensor.check_finite()
            self.check_positive_definite()

    @property
    def chart(self) -> ChartSpec:
        return self.tensor.chart

    @property
    def values(self) -> np.ndarray:
        return self.tensor.values

    @property
    def dimension(self) -> int:
        return self.chart.dimension

    def check_positive_definite(self) -> None:
        eigs = np.linalg.eigvalsh(self.values)
        lam_min = eigs[..., 0]
        if np.any(lam_min <= 0.0):
            node = np.unravel_index(int(np.argmin(lam_min)), self.chart.shape)
            raise ValueError(
                f"metric is not positive definite at node {node} "
                f"(min eigenvalue {lam_min[node]:.3e})"
            )

    def min_eigenvalue(self) -> float:
        return float(np.min(np.linalg.eigvalsh(self.values)[..., 0]))

    def inverse(self) -> np.ndarray:
        return np.linalg.inv(self.values)

    def sqrt_det(self) -> np.ndarray:
        return np.sqrt(np.linalg.det(self.values))

    @classmethod
    def from_function(cls, chart: ChartSpec, fn: Callable, validate: bool = True) -> "MetricField":
        t = TensorField.from_function(chart, fn)
        sym = 0.5 * (t.values + np.swapaxes(t.values, -1, -2))
        return cls(chart, sym, validate=validate)

    @classmethod
    def flat(cls, chart: ChartSpec, scale: float | np.ndarray = 1.0) -> "MetricField":
        n = chart.dimension
        vals = np.zeros(chart.shape + (n, n))
        idx = np.arange(n)
        vals[..., idx, idx] = scale
        return cls(chart, vals, validate=False)


@dataclass
class Region:
    """Boolean node mask over a chart."""

    chart: ChartSpec
    mask: np.ndarray = field(default=None)

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.mask.shape != self.chart.shape:
            raise ValueError("region mask shape does not match chart")

    def __and__(self, other: "Region") -> "Region":
        self._check(other)
        return Region(self.chart, self.mask & other.mask)

    def __or__(self, other: "Region") -> "Region":
        self._check(other)
        return Region(self.chart, self.mask | other.mask)

    def __invert__(self) -> "Region":
        return Region(self.chart, ~self.mask)

    def _check(self, other: "Region") -> None:
        if other.chart is not self.chart and other.chart != self.chart:
            raise ValueError("regions live on different charts")

    @property
    def node_count(self) -> int:
        return int(np.count_nonzero(self.mask))

    @classmethod
    def from_predicate(cls, chart: ChartSpec, pred: Callable) -> "Region":
        mesh = chart.meshgrid()
        return cls(chart, np.asarray(pred(*mesh), dtype=bool) & np.ones(chart.shape, dtype=bool))


def same_chart(*objects) -> ChartSpec:
    """Assert that fields/regions share one chart and return it."""
    charts = [obj.chart for obj in objects if obj is not None]
    first = charts[0]
    for c in charts[1:]:
        if c is not first and c != first:
            raise ValueError("fields do not share a chart")
    return first
