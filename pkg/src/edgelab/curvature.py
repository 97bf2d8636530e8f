"""Finite-difference tensor calculus on structured charts.

Everything is second-order centered: first derivatives by the two-point
centered stencil, second derivatives by the three-point stencil, mixed
second derivatives by nested centered differences.  On clamped axes the
stencil is simply not applied near the boundary and those nodes carry NaN;
one-sided stencils are rejected by design so that the convergence order of
every downstream quantity stays predictable.

Curvature conventions:

    Gamma^k_ij = (1/2) g^{kl} (d_i g_lj + d_j g_li - d_l g_ij)
    Ric_ij     = d_k Gamma^k_ij - d_j Gamma^k_ki
                 + Gamma^k_kl Gamma^l_ij - Gamma^k_jl Gamma^l_ki
    R          = g^{ij} Ric_ij

so the unit round 2-sphere has R = +2 and the scalar curvature of
u^{4/(n-2)} g obeys

    R(u^{4/(n-2)} g) = u^{-(n+2)/(n-2)} ( -(4(n-1)/(n-2)) Lap_g u + R(g) u ).

The linearization of R at g in direction h is computed by a complex-step
derivative through the discrete curvature pipeline, which makes it the
exact derivative of the discrete R (no subtractive cancellation); the
classical formula -Lap tr h + div div h - <h, Ric> is provided alongside
as an independent discretization.
"""

from __future__ import annotations

import numpy as np

from .grids import ChartSpec, MetricField, Region, ScalarField, TensorField, same_chart

__all__ = [
    "scalar_curvature",
    "ricci",
    "laplace_beltrami",
    "conformal_transform",
    "linearized_scalar_curvature",
    "linearized_scalar_curvature_formula",
    "integrate",
    "volume",
    "uniform_equivalence",
    "grid_partial",
]


# ---------------------------------------------------------------------------
# stencils
# ---------------------------------------------------------------------------

def _nan_like(values: np.ndarray) -> np.ndarray:
    out = np.empty_like(values)
    out.fill(np.nan)
    return out


def _diff1(values: np.ndarray, axis: int, h: float, periodic: bool) -> np.ndarray:
    """Centered first difference along a grid axis; NaN at clamped edges."""
    if periodic:
        return (np.roll(values, -1, axis=axis) - np.roll(values, 1, axis=axis)) / (2.0 * h)
    out = _nan_like(values)
    mid = [slice(None)] * values.ndim
    plus = [slice(None)] * values.ndim
    minus = [slice(None)] * values.ndim
    mid[axis] = slice(1, -1)
    plus[axis] = slice(2, None)
    minus[axis] = slice(0, -2)
    out[tuple(mid)] = (values[tuple(plus)] - values[tuple(minus)]) / (2.0 * h)
    return out


def _diff2(values: np.ndarray, axis: int, h: float, periodic: bool) -> np.ndarray:
    """Centered second difference along one axis; NaN at clamped edges."""
    if periodic:
        return (
            np.roll(values, -1, axis=axis) - 2.0 * values + np.roll(values, 1, axis=axis)
        ) / (h * h)
    out = _nan_like(values)
    mid = [slice(None)] * values.ndim
    plus = [slice(None)] * values.ndim
    minus = [slice(None)] * values.ndim
    mid[axis] = slice(1, -1)
    plus[axis] = slice(2, None)
    minus[axis] = slice(0, -2)
    out[tuple(mid)] = (
        values[tuple(plus)] - 2.0 * values[tuple(mid)] + values[tuple(minus)]
    ) / (h * h)
    return out


def grid_partial(chart: ChartSpec, values: np.ndarray, axis: int) -> np.ndarray:
    """Public centered first derivative along chart axis ``axis``."""
    ax = chart.axes[axis]
    return _diff1(np.asarray(values), axis, ax.spacing, ax.periodic)


def _check_margin(chart: ChartSpec, margin: int = 2) -> None:
    for ax in chart.axes:
        if not ax.periodic and ax.count < 2 * margin + 1:
            raise ValueError(
                f"chart too coarse for centered stencils: clamped axis with {ax.count} "
                f"nodes leaves no interior at margin {margin}"
            )


# ---------------------------------------------------------------------------
# curvature pipeline (dtype-agnostic core, reused by the complex step)
# ---------------------------------------------------------------------------

def _metric_derivatives(chart: ChartSpec, g: np.ndarray) -> np.ndarray:
    """dg[..., k, i, j] = d_k g_ij."""
    layers = [
        _diff1(g, k, ax.spacing, ax.periodic) for k, ax in enumerate(chart.axes)
    ]
    return np.stack(layers, axis=-3)


def _christoffel(chart: ChartSpec, g: np.ndarray) -> np.ndarray:
    ginv = np.linalg.inv(g)
    dg = _metric_derivatives(chart, g)
    t1 = np.einsum("...kl,...ilj->...kij", ginv, dg)
    t2 = np.einsum("...kl,...jli->...kij", ginv, dg)
    t3 = np.einsum("...kl,...lij->...kij", ginv, dg)
    return 0.5 * (t1 + t2 - t3)


def _ricci_values(chart: ChartSpec, g: np.ndarray) -> np.ndarray:
    gamma = _christoffel(chart, g)
    dgamma = np.stack(
        [_diff1(gamma, m, ax.spacing, ax.periodic) for m, ax in enumerate(chart.axes)],
        axis=-4,
    )
    t1 = np.einsum("...kkij->...ij", dgamma)
    t2 = np.einsum("...jkki->...ij", dgamma)
    trg = np.einsum("...kkl->...l", gamma)
    t3 = np.einsum("...l,...lij->...ij", trg, gamma)
    t4 = np.einsum("...kjl,...lki->...ij", gamma, gamma)
    ric = t1 - t2 + t3 - t4
    return 0.5 * (ric + np.swapaxes(ric, -1, -2))


def _scalar_values(chart: ChartSpec, g: np.ndarray) -> np.ndarray:
    ric = _ricci_values(chart, g)
    ginv = np.linalg.inv(g)
    return np.einsum("...ij,...ij->...", ginv, ric)


def scalar_curvature(g: MetricField) -> ScalarField:
    """Scalar curvature R(g) at stencil-interior nodes (NaN elsewhere)."""
    _check_margin(g.chart)
    g.check_positive_definite()
    return ScalarField(g.chart, _scalar_values(g.chart, g.values))


def ricci(g: MetricField) -> TensorField:
    """Ricci tensor of g; its g-trace matches scalar_curvature to O(h^2)."""
    _check_margin(g.chart)
    g.check_positive_definite()
    return TensorField(g.chart, _ricci_values(g.chart, g.values))


def _hessian(chart: ChartSpec, u: np.ndarray) -> np.ndarray:
    n = chart.dimension
    first = [
        _diff1(u, k, ax.spacing, ax.periodic) for k, ax in enumerate(chart.axes)
    ]
    hess = np.empty(u.shape + (n, n), dtype=u.dtype)
    for i, axi in enumerate(chart.axes):
        for j, axj in enumerate(chart.axes):
            if i == j:
                hess[..., i, i] = _diff2(u, i, axi.spacing, axi.periodic)
            elif j > i:
                hess[..., i, j] = _diff1(first[i], j, axj.spacing, axj.periodic)
            else:
                hess[..., i, j] = hess[..., j, i]
    return hess, np.stack(first, axis=-1)


def _laplace_values(chart: ChartSpec, g: np.ndarray, u: np.ndarray) -> np.ndarray:
    ginv = np.linalg.inv(g)
    gamma = _christoffel(chart, g)
    hess, grad = _hessian(chart, u)
    lap = np.einsum("...ij,...ij->...", ginv, hess)
    lap -= np.einsum("...ij,...kij,...k->...", ginv, gamma, grad)
    return lap


def laplace_beltrami(g: MetricField, u: ScalarField) -> ScalarField:
    """Lap_g u = g^{ij} (d_i d_j u - Gamma^k_ij d_k u)."""
    same_chart(g, u)
    _check_margin(g.chart, margin=1)
    return ScalarField(g.chart, _laplace_values(g.chart, g.values, u.values))


# ---------------------------------------------------------------------------
# conformal transforms
# ---------------------------------------------------------------------------

def conformal_transform(
    g: MetricField,
    u: ScalarField,
    scalar_curv: ScalarField | None = None,
) -> tuple[MetricField, ScalarField]:
    """Return (u^{4/(n-2)} g, its scalar curvature by the conformal formula).

    The curvature is computed from the transformation identity, not from
    stencils on the new metric; callers cross-check against
    :func:`scalar_curvature` of the returned metric when they want the
    dual-path test.
    """
    same_chart(g, u)
    n = g.dimension
    if n < 3:
        raise ValueError("conformal transform needs dimension >= 3")
    if np.any(u.values <= 0.0) or not np.all(np.isfinite(u.values)):
        node = np.unravel_index(int(np.argmin(u.values)), g.chart.shape)
        raise ValueError(f"conformal factor must be positive; offending node {node}")
    a = 4.0 * (n - 1) / (n - 2)
    if scalar_curv is None:
        scalar_curv = scalar_curvature(g)
    lap = _laplace_values(g.chart, g.values, u.values)
    r_new = u.values ** (-(n + 2.0) / (n - 2.0)) * (
        -a * lap + scalar_curv.values * u.values
    )
    factor = u.values ** (4.0 / (n - 2.0))
    g_new = MetricField(g.chart, factor[..., None, None] * g.values, validate=False)
    return g_new, ScalarField(g.chart, r_new)


# ---------------------------------------------------------------------------
# linearized scalar curvature
# ---------------------------------------------------------------------------

def _check_compact_support(chart: ChartSpec, h: np.ndarray, margin: int = 3) -> None:
    for k, ax in enumerate(chart.axes):
        if ax.periodic:
            continue
        idx = [slice(None)] * h.ndim
        idx[k] = list(range(margin)) + list(range(ax.count - margin, ax.count))
        if np.any(h[tuple(idx)] != 0.0):
            raise ValueError(
                "perturbation support touches a non-periodic boundary; "
                "shrink the support or use a periodic chart"
            )


def linearized_scalar_curvature(g: MetricField, h: TensorField) -> ScalarField:
    """Derivative t -> R(g + t h) at t = 0 of the discrete curvature.

    Complex-step differentiation through the stencil pipeline: exact to
    machine precision, and by construction it matches symmetric finite
    differences (R(g + t h) - R(g - t h)) / 2t up to O(t^2).
    """
    same_chart(g, h)
    h.check_symmetric()
    _check_margin(g.chart)
    _check_compact_support(g.chart, h.values)
    step = 1e-100
    g_c = g.values.astype(complex) + 1j * step * h.values
    r_c = _scalar_values(g.chart, g_c)
    return ScalarField(g.chart, np.imag(r_c) / step)


def linearized_scalar_curvature_formula(g: MetricField, h: TensorField) -> ScalarField:
    """delta R(g){h} = -Lap_g tr_g h + div_g div_g h - <h, Ric(g)>_g."""
    same_chart(g, h)
    h.check_symmetric()
    _check_margin(g.chart)
    chart = g.chart
    gvals = g.values
    ginv = np.linalg.inv(gvals)
    gamma = _christoffel(chart, gvals)
    hvals = h.values

    tr_h = np.einsum("...ij,...ij->...", ginv, hvals)
    lap_tr = _laplace_values(chart, gvals, tr_h)

    # div div h  =  nabla^i nabla^j h_ij  computed as two covariant divergences
    # of the (0,2) tensor: first V_j = nabla^i h_ij, then nabla^j V_j.
    h_up = np.einsum("...ia,...jb,...ab->...ij", ginv, ginv, hvals)
    dh_up = np.stack(
        [_diff1(h_up, k, ax.spacing, ax.periodic) for k, ax in enumerate(chart.axes)],
        axis=-3,
    )
    # nabla_k h^{ij} = d_k h^{ij} + Gamma^i_kl h^{lj} + Gamma^j_kl h^{il}
    cov_dh = (
        dh_up
        + np.einsum("...ikl,...lj->...kij", gamma, h_up)
        + np.einsum("...jkl,...il->...kij", gamma, h_up)
    )
    v_up = np.einsum("...kkj->...j", cov_dh)  # V^j = nabla_i h^{ij}
    dv = np.stack(
        [_diff1(v_up, k, ax.spacing, ax.periodic) for k, ax in enumerate(chart.axes)],
        axis=-2,
    )
    div_div = np.einsum("...kk->...", dv) + np.einsum("...kkl,...l->...", gamma, v_up)

    ric = _ricci_values(chart, gvals)
    h_dot_ric = np.einsum("...ij,...ij->...", h_up, ric)
    return ScalarField(chart, -lap_tr + div_div - h_dot_ric)


# ---------------------------------------------------------------------------
# quadrature and equivalence constants
# ---------------------------------------------------------------------------

def integrate(
    field: ScalarField,
    g: MetricField,
    region: Region | None = None,
    p: float = 1.0,
) -> float:
    """L^p norm of ``field`` over ``region`` against dVol_g; p = inf for max.

    Trapezoidal weights, fixed summation order, exact on constants; masked
    nodes contribute nothing, so the quadrature is additive over disjoint
    regions.
    """
    chart = same_chart(field, g, region)
    if p != np.inf and p < 1.0:
        raise ValueError("integrate needs p >= 1 or p = inf")
    mask = np.ones(chart.shape, dtype=bool) if region is None else region.mask
    vals = np.where(mask, field.values, 0.0)
    if not np.all(np.isfinite(vals)):
        raise ValueError("field has non-finite values inside the integration region")
    if p == np.inf:
        if not np.any(mask):
            return 0.0
        return float(np.max(np.abs(vals[mask])))
    w = chart.quadrature_weights() * g.sqrt_det()
    total = float(np.sum(np.abs(vals) ** p * np.where(mask, w, 0.0)))
    return total ** (1.0 / p)


def volume(g: MetricField, region: Region | None = None) -> float:
    ones = ScalarField(g.chart, np.ones(g.chart.shape))
    return integrate(ones, g, region=region, p=1.0)


def uniform_equivalence(
    g1: MetricField,
    g2: MetricField,
    region: Region | None = None,
) -> float:
    """Smallest c >= 1 with c^{-1} g1 <= g2 <= c g1 at every node.

    Computed from the extreme generalized eigenvalues of the pencil
    (g2, g1), reduced per node by a Cholesky congruence.
    """
    chart = same_chart(g1, g2, region)
    a = g1.values
    b = g2.values
    if region is not None:
        a = a[region.mask]
        b = b[region.mask]
        if a.size == 0:
            raise ValueError("empty region for uniform_equivalence")
    else:
        a = a.reshape(-1, chart.dimension, chart.dimension)
        b = b.reshape(-1, chart.dimension, chart.dimension)
    try:
        chol = np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise ValueError("reference metric is not positive definite") from exc
    x = np.linalg.solve(chol, b)
    m = np.linalg.solve(chol, np.swapaxes(x, -1, -2))
    m = 0.5 * (m + np.swapaxes(m, -1, -2))
    eigs = np.linalg.eigvalsh(m)
    lam_min = float(np.min(eigs[..., 0]))
    lam_max = float(np.max(eigs[..., -1]))
    if lam_min <= 0.0:
        raise ValueError("comparison metric is not positive definite")
    return max(lam_max, 1.0 / lam_min, 1.0)


def convergence_order(errors, factors=2.0) -> float:
    """Mean observed order from a sequence of errors under grid refinement."""
    errors = np.asarray(errors, dtype=float)
    if np.isscalar(factors):
        factors = np.full(len(errors) - 1, float(factors))
    orders = np.log(errors[:-1] / errors[1:]) / np.log(np.asarray(factors))
    return float(np.mean(orders))
