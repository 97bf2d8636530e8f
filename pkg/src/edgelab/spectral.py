"""Principal eigenvalue of the conformal Laplacian and the positivity budget.

For a closed chart the operator

    L u = -(4(n-1)/(n-2)) Lap_g u + chi u

is discretized in divergence form with metric-weighted fluxes: the energy

    E(u) = int ( a |grad u|_g^2 + chi u^2 ) dVol_g,     a = 4(n-1)/(n-2),

is assembled exactly as a quadratic form (compact 3-point fluxes for the
diagonal of g^{-1}, centered differences for its off-diagonal part), so
the discrete operator is self-adjoint with respect to the discrete volume
inner product and the whole variational toolkit survives discretely:
Rayleigh monotonicity in chi, the exact shift identity, and the lower
bound

    lambda >= c0^{-2} Vol^{-1} ( int chi_+ - c0^4 int chi_- ),

with c0 = sup u / inf u of the positive principal eigenfunction.

The truncation phi(.; s) caps scalar curvature at 2s while keeping
phi(x) = x below s, and the tube weight zeta(.; eps) raises the cap to
eps^{-2/q} near the singular set; together they turn the eps^{-2}
curvature concentration of the smoothing into a positive budget term of
order eps^{2 - 2/q} that beats the negative-part allowance for small
tolerances.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .curvature import integrate, scalar_curvature, volume
from .desingularize import SmoothingParams, ring_torus_metric
from .grids import ChartSpec, MetricField, Region, ScalarField

__all__ = [
    "TruncationSpec",
    "SpectralResult",
    "BudgetReport",
    "truncate_phi",
    "weight_zeta",
    "assemble_conformal_operator",
    "principal_eigenpair",
    "eigen_lower_bound",
    "positivity_budget",
    "RingModel",
    "psc_pipeline",
    "PscResult",
]


# ---------------------------------------------------------------------------
# truncation and tube weight
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TruncationSpec:
    """Cap profile: identity below s, constant 2s above 3s, monotone cubic
    s(1 + 2t - t^2) with t = (x - s)/(2s) in between (tangent to the
    identity at s, flat at 3s, and <= x everywhere)."""

    s: float = 1.0

    def __post_init__(self):
        if not self.s > 0.0:
            raise ValueError("truncation scale must be positive")


def truncate_phi(x, s=1.0):
    """phi(x; s): nondecreasing, phi(x) <= x, = x below s, = 2s above 3s.

    Both arguments broadcast, so ``s`` may be the tube weight field."""
    x_arr = np.asarray(x, dtype=float)
    s_arr = np.asarray(s, dtype=float) + np.zeros_like(x_arr)
    if np.any(s_arr <= 0.0):
        raise ValueError("truncation scale must be positive")
    t = np.clip((x_arr - s_arr) / (2.0 * s_arr), 0.0, 1.0)
    mid = s_arr * (1.0 + 2.0 * t - t * t)
    out = np.where(x_arr <= s_arr, x_arr, np.where(x_arr >= 3.0 * s_arr, 2.0 * s_arr, mid))
    return float(out) if np.isscalar(x) and np.isscalar(s) else out


def weight_zeta(dist, epsilon: float, q: float):
    """Tube weight: 1 outside B_{2 eps}, eps^{-2/q} inside B_eps, monotone
    C^1 interpolation in between (values stay within [1, eps^{-2/q}])."""
    if not 0.0 < epsilon <= 1.0:
        raise ValueError("tube weight needs epsilon in (0, 1]")
    d = np.asarray(dist, dtype=float)
    cap = epsilon ** (-2.0 / q)
    t = np.clip((2.0 * epsilon - d) / epsilon, 0.0, 1.0)
    ramp = t * t * (3.0 - 2.0 * t)
    out = 1.0 + (cap - 1.0) * ramp
    return float(out) if np.isscalar(dist) else out


# ---------------------------------------------------------------------------
# operator assembly
# ---------------------------------------------------------------------------

def _shift_matrix(shape: tuple[int, ...], axis: int, step: int) -> sp.csr_matrix:
    n = int(np.prod(shape))
    idx = np.arange(n).reshape(shape)
    rolled = np.roll(idx, -step, axis=axis).ravel()
    return sp.csr_matrix((np.ones(n), (np.arange(n), rolled)), shape=(n, n))


def assemble_conformal_operator(
    g: MetricField, chi: ScalarField
) -> tuple[sp.csr_matrix, np.ndarray]:
    """Stiffness-plus-potential matrix L and volume weights w.

    L is symmetric with L = a K + diag(chi w); the generalized problem
    L u = lambda diag(w) u realizes the Rayleigh quotient of the energy.
    """
    chart = g.chart
    if not chart.is_closed():
        raise ValueError("principal eigenvalue solve needs a closed (all-periodic) chart")
    if not np.all(np.isfinite(chi.values)):
        raise ValueError("potential chi must be bounded")
    n = chart.dimension
    a = 4.0 * (n - 1) / (n - 2)
    shape = chart.shape
    nn = chart.node_count
    cellvol = float(np.prod(chart.spacings))
    sqrtg = g.sqrt_det()
    ginv = g.inverse()
    w = (sqrtg * cellvol).ravel()

    K = sp.csr_matrix((nn, nn))
    eye = sp.identity(nn, format="csr")
    for ax in range(n):
        h = chart.spacings[ax]
        coeff = sqrtg * ginv[..., ax, ax]
        half = 0.5 * (coeff + np.roll(coeff, -1, axis=ax))
        diff = _shift_matrix(shape, ax, 1) - eye
        K = K + diff.T @ sp.diags(half.ravel() * cellvol / (h * h)) @ diff
    for ax in range(n):
        for bx in range(n):
            if ax == bx:
                continue
            coeff = sqrtg * ginv[..., ax, bx] * cellvol
            da = (_shift_matrix(shape, ax, 1) - _shift_matrix(shape, ax, -1)) * (
                1.0 / (2.0 * chart.spacings[ax])
            )
            db = (_shift_matrix(shape, bx, 1) - _shift_matrix(shape, bx, -1)) * (
                1.0 / (2.0 * chart.spacings[bx])
            )
            K = K + da.T @ sp.diags(coeff.ravel()) @ db

    L = a * K + sp.diags(chi.values.ravel() * w)
    L = 0.5 * (L + L.T)
    return L.tocsr(), w


@dataclass
class SpectralResult:
    lam: float
    u: ScalarField
    harnack_c0: float
    iterations: int
    residual: float
    converged: bool
    cg_iterations: list[int] = field(default_factory=list)


def principal_eigenpair(
    g: MetricField,
    chi: ScalarField,
    tol: float = 1e-10,
    max_iter: int = 200,
) -> SpectralResult:
    """Smallest eigenpair of -(4(n-1)/(n-2)) Lap_g + chi by shifted inverse
    power iteration with conjugate-gradient inner solves.

    Deterministic start vector (all ones); the eigenfunction is returned
    positive with unit discrete L^2(dVol_g) norm.
    """
    L, w = assemble_conformal_operator(g, chi)
    sqrt_w = np.sqrt(w)
    scale = sp.diags(1.0 / sqrt_w)
    B = (scale @ L @ scale).tocsr()
    B = 0.5 * (B + B.T)

    shift = float(np.min(chi.values)) - 1.0
    C = (B - shift * sp.identity(B.shape[0], format="csr")).tocsr()
    precond = spla.LinearOperator(
        C.shape, matvec=lambda v: v / C.diagonal()
    )

    v = sqrt_w / np.linalg.norm(sqrt_w)
    lam_old = np.inf
    lam = np.inf
    iters = 0
    cg_iters = []
    converged = False
    for iters in range(1, max_iter + 1):
        counter = {"n": 0}

        def cb(_xk):
            counter["n"] += 1

        sol, info = spla.cg(C, v, rtol=1e-12, atol=0.0, maxiter=8000, M=precond, callback=cb)
        cg_iters.append(counter["n"])
        if info != 0:
            break
        v = sol / np.linalg.norm(sol)
        lam = float(v @ (B @ v))
        if abs(lam - lam_old) < tol * (1.0 + abs(lam)):
            converged = True
            break
        lam_old = lam

    u_vals = v / sqrt_w
    if np.sum(u_vals) < 0:
        u_vals = -u_vals
    norm = np.sqrt(float(np.sum(u_vals * u_vals * w)))
    u_vals = u_vals / norm
    resid = float(np.linalg.norm(L @ u_vals - lam * w * u_vals) / np.linalg.norm(w * u_vals))
    u_field = ScalarField(g.chart, u_vals.reshape(g.chart.shape))
    u_min, u_max = float(np.min(u_vals)), float(np.max(u_vals))
    if u_min <= 0.0:
        converged = False
    c0 = u_max / u_min if u_min > 0 else np.inf
    return SpectralResult(lam, u_field, c0, iters, resid, converged, cg_iters)


def eigen_lower_bound(
    chi: ScalarField, c0: float, g: MetricField, region: Region | None = None
) -> float:
    """lambda >= c0^{-2} Vol^{-1} ( int chi_+ dVol - c0^4 int chi_- dVol )."""
    if c0 < 1.0:
        raise ValueError("Harnack ratio must satisfy c0 >= 1")
    pos = ScalarField(chi.chart, np.maximum(chi.values, 0.0))
    neg = ScalarField(chi.chart, np.maximum(-chi.values, 0.0))
    vol = volume(g, region)
    int_pos = integrate(pos, g, region)
    int_neg = integrate(neg, g, region)
    return (int_pos - c0**4 * int_neg) / (c0**2 * vol)


# ---------------------------------------------------------------------------
# positivity budget
# ---------------------------------------------------------------------------

@dataclass
class BudgetReport:
    epsilon: float
    q: float
    c0: float
    gamma: float
    positive_integral: float
    negative_integral: float
    weighted_negative: float
    allowance: float
    vol_tube: float

    @property
    def net(self) -> float:
        return self.positive_integral - self.weighted_negative

    @property
    def conservative_net(self) -> float:
        return self.positive_integral - self.allowance

    @property
    def gamma_threshold(self) -> float:
        """Largest input tolerance for which the conservative net stays > 0."""
        base = self.allowance / self.gamma if self.gamma > 0 else np.nan
        return self.positive_integral / base if base and np.isfinite(base) else np.inf


def positivity_budget(
    ghat: MetricField,
    dist: ScalarField,
    params: SmoothingParams,
    c0: float,
    gamma: float | None = None,
    curv: ScalarField | None = None,
    tube_scale: float | None = None,
) -> BudgetReport:
    """Both sides of the truncated-curvature budget for one epsilon.

    The positive column is the measured integral of phi(R; zeta)_+; the
    negative side carries the measured integral (weighted by c0^4) and the
    allowance c0^4 gamma Vol(B_eps)^{(q-1)/q} that the estimate chain uses
    for an input tolerance gamma.  With gamma omitted, the measured
    L^q norm of R_- plays that role.  ``tube_scale`` converts the
    dimensionless tube fraction into the physical tube radius used by the
    weight; it defaults to params.epsilon when the distance field is
    already expressed in tube fractions.
    """
    eps, q = params.epsilon, params.q
    if curv is None:
        curv = scalar_curvature(ghat)
    eps_dist = tube_scale if tube_scale is not None else eps
    zeta = weight_zeta(dist.values, eps_dist, q)
    chi = truncate_phi(curv.values, zeta)
    chi_pos = ScalarField(ghat.chart, np.maximum(chi, 0.0))
    chi_neg = ScalarField(ghat.chart, np.maximum(-chi, 0.0))
    pos = integrate(chi_pos, ghat, p=1.0)
    neg = integrate(chi_neg, ghat, p=1.0)
    if gamma is None:
        rneg = ScalarField(ghat.chart, np.maximum(-curv.values, 0.0))
        gamma = integrate(rneg, ghat, p=q)
    tube = Region(ghat.chart, dist.values <= eps_dist)
    vol_tube = volume(ghat, tube)
    allowance = c0**4 * gamma * vol_tube ** ((q - 1.0) / q)
    return BudgetReport(
        epsilon=eps,
        q=q,
        c0=c0,
        gamma=gamma,
        positive_integral=pos,
        negative_integral=neg,
        weighted_negative=c0**4 * neg,
        allowance=allowance,
        vol_tube=vol_tube,
    )


@dataclass
class BudgetSweep:
    rows: list[BudgetReport] = field(default_factory=list)
    positive_exponent: float = np.nan
    allowance_exponent: float = np.nan
    gamma_threshold: float = np.nan

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(row, name) for row in self.rows])


def budget_sweep(
    beta: float,
    eps_sweep: Sequence[float],
    q: float = 1.6,
    rho: float = 0.5,
    c0: float = 1.0,
    gamma: float = 0.1,
    n_per_band: int = 24,
    n_y: int = 24,
) -> BudgetSweep:
    """Tube-model budget columns across an epsilon sweep.

    On the tube the cone is exact outside the smoothing band, so the
    scalar curvature of the smoothed metric vanishes there identically and
    both budget terms are pure band quantities: the capped positive
    integral and the negative-part allowance each scale as eps^{2 - 2/q},
    which the sweep fits and compares.
    """
    from .desingularize import (
        _DEFAULT_CUTOFF,
        SmoothingParams,
        _profile_values,
        _axis_distance,
        _tube_chart,
        smoothed_metric,
    )
    from .edge_models import EdgeData

    data = EdgeData(eta=0.9, beta=beta, rho=rho, link_dim=1)
    sweep = BudgetSweep()
    for eps in sorted(eps_sweep, reverse=True):
        params = SmoothingParams(eps, q)
        chart = _tube_chart(data, eps, n_per_band, n_y)
        ghat = smoothed_metric(data, params, chart)
        mesh = chart.meshgrid()
        r, ys = mesh[0], list(mesh[2:])
        f, rdf, _, _ = _profile_values(data, params, r, ys, _DEFAULT_CUTOFF)
        # exact curvature of the rotationally symmetric smoothed tube
        rvals = (2.0 * rdf / (r * r * f**3)) / (beta + 1.0) ** 2
        dist = _axis_distance(chart, f)
        eps_phys = eps * rho
        zeta = weight_zeta(dist, eps_phys, q)
        chi = truncate_phi(rvals, zeta)
        chi_pos = ScalarField(chart, np.maximum(chi, 0.0))
        chi_neg = ScalarField(chart, np.maximum(-chi, 0.0))
        pos = integrate(chi_pos, ghat, p=1.0)
        neg = integrate(chi_neg, ghat, p=1.0)
        tube = Region(chart, dist <= eps_phys)
        vol_tube = volume(ghat, tube)
        allowance = c0**4 * gamma * vol_tube ** ((q - 1.0) / q)
        sweep.rows.append(
            BudgetReport(eps, q, c0, gamma, pos, neg, c0**4 * neg, allowance, vol_tube)
        )
    eps_arr = sweep.column("epsilon")
    sweep.positive_exponent = float(
        np.polyfit(np.log(eps_arr), np.log(sweep.column("positive_integral")), 1)[0]
    )
    sweep.allowance_exponent = float(
        np.polyfit(np.log(eps_arr), np.log(sweep.column("allowance")), 1)[0]
    )
    thresholds = [
        row.positive_integral / (row.allowance / row.gamma) for row in sweep.rows
    ]
    sweep.gamma_threshold = float(np.min(thresholds))
    return sweep


# ---------------------------------------------------------------------------
# end-to-end pipeline on the ring torus
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RingModel:
    """Cone ring of angle 2 pi (beta+1) along a circle in a flat 3-torus."""

    beta: float
    rho0: float = 0.22
    center: tuple[float, float] = (0.51, 0.52)
    resolution: int = 48

    def __post_init__(self):
        if not -1.0 < self.beta <= 0.0:
            raise ValueError("pipeline needs cone angles in (0, 2 pi], i.e. beta in (-1, 0]")


@dataclass
class PscResult:
    metric: MetricField | None
    spectral: SpectralResult | None
    min_curvature: float
    min_curvature_stencil: float
    budget: BudgetReport | None
    declined: bool
    reason: str


def psc_pipeline(
    model: RingModel,
    params: SmoothingParams,
    gamma: float | None = None,
) -> PscResult:
    """Smooth, truncate, solve, and conformally transform the ring model.

    Succeeds when the principal eigenvalue is positive; the transformed
    metric u^{4/(n-2)} ghat_eps then has

        R = u^{-4/(n-2)} (R(ghat) - chi + lambda) >= lambda (sup u)^{-4/(n-2)}

    pointwise, because chi = phi(R; zeta) never exceeds R.  A nonpositive
    net budget is reported as a failure with the budget attached.

    On a periodic chart the underlying manifold is a torus, which carries
    no metric of positive scalar curvature; a cone ring must pay its
    deficit back in a negative-curvature transition annulus somewhere on
    the chart, and an honest solve therefore ends with lambda <= 0.  The
    pipeline quantifies exactly how the budget refuses; a success would
    require a closed chart of positive Yamabe type, which structured
    single-patch grids cannot represent.
    """
    from .grids import torus_chart

    if model.beta == 0.0:
        return PscResult(
            None, None, np.nan, np.nan, None, True,
            "flat model: scalar curvature vanishes and the cone angle is 2 pi; "
            "the positivity mechanism has nothing to work with",
        )
    chart = torus_chart([model.resolution] * 3)
    ghat, dist = ring_torus_metric(
        model.beta, chart, model.center, model.rho0, params=params
    )
    curv = scalar_curvature(ghat)
    eps_phys = params.epsilon * model.rho0
    zeta = weight_zeta(dist.values, eps_phys, params.q)
    chi = ScalarField(chart, truncate_phi(curv.values, zeta))
    spectral = principal_eigenpair(ghat, chi)
    budget = positivity_budget(
        ghat, dist, params, spectral.harnack_c0, gamma=gamma, curv=curv,
        tube_scale=eps_phys,
    )
    if spectral.lam <= 0.0 or budget.net <= 0.0:
        return PscResult(
            None, spectral, np.nan, np.nan, budget, False,
            f"net budget {budget.net:.4g} / eigenvalue {spectral.lam:.4g} not positive",
        )
    n = chart.dimension
    u = spectral.u
    exponent = 4.0 / (n - 2.0)
    g_new = MetricField(
        chart, (u.values**exponent)[..., None, None] * ghat.values, validate=False
    )
    identity_r = u.values ** (-exponent) * (curv.values - chi.values + spectral.lam)
    min_identity = float(np.min(identity_r))

    from .curvature import _laplace_values  # stencil cross-check path

    a = 4.0 * (n - 1) / (n - 2)
    lap = _laplace_values(chart, ghat.values, u.values)
    stencil_r = u.values ** (-(n + 2.0) / (n - 2.0)) * (
        -a * lap + curv.values * u.values
    )
    min_stencil = float(np.min(stencil_r))
    return PscResult(g_new, spectral, min_identity, min_stencil, budget, False, "ok")
