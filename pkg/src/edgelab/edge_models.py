"""Constructors and validators for singular model metrics.

The models all live near a codimension-2 set: two-dimensional cones

    g = dr^2 + (beta+1)^2 r^2 dtheta^2,          cone angle 2 pi (beta+1),

and their higher-dimensional edge version along a flat link manifold N
(a circle for n = 3, a flat 2-torus for n = 4),

    g = dr^2 + (beta+1)^2 r^2 (dtheta + sigma)^2 + omega + r^{1+eta} h,

together with the computationally simpler "simple form"

    g~ = f^2 dr^2 + r^2 (dtheta + sigma)^2 + omega~ .

At desk scale the link data (beta, sigma, rho, omega) are closed-form
expressions of the link coordinates, so the structural sup-norms that the
smoothing estimates consume have sharp sampled values.  The tensor h is
given in polar-product frame components; callers are responsible for
choosing h so that it is C^2 across the axis in transversal Euclidean
coordinates (profiles in r^2 and pure link-direction components are safe).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .grids import POLAR, ChartSpec, MetricField, ScalarField

__all__ = [
    "ConeSpec",
    "EdgeData",
    "Skeleton",
    "SkeletonPiece",
    "StructuralReport",
    "cone_metric_2d",
    "edge_metric",
    "simple_form_metric",
    "validate_structural_bounds",
    "build_skeleton",
]


def _as_fn(value) -> Callable:
    if callable(value):
        return value
    const = float(value)
    return lambda *ys: const * np.ones(np.broadcast(*ys).shape) if ys else const


def _sample_link(fn: Callable, ys: Sequence[np.ndarray]) -> np.ndarray:
    out = fn(*ys)
    return np.asarray(out, dtype=float) + np.zeros(np.broadcast(*ys).shape)


@dataclass(frozen=True)
class ConeSpec:
    """Two-dimensional cone of angle 2 pi (beta+1)."""

    beta: float

    def __post_init__(self):
        if not self.beta > -1.0:
            raise ValueError(f"cone parameter must satisfy beta > -1, got {self.beta}")

    @property
    def angle(self) -> float:
        return 2.0 * np.pi * (self.beta + 1.0)


@dataclass
class EdgeData:
    """Data (eta, beta, sigma, omega, rho, h) of an edge metric along N.

    ``beta``, ``rho`` are scalars or callables of the link coordinates;
    ``sigma`` is a tuple of callables (one per link axis) or None;
    ``omega`` is a constant flat metric on N given as an (n-2, n-2) matrix
    or a scalar multiple of the identity; ``h_pert`` is a callable
    ``(r, theta, *y) -> (..., n, n)`` of polar-product frame components,
    or None.
    """

    eta: float
    beta: Callable | float
    rho: Callable | float = 1.0
    sigma: tuple | None = None
    omega: np.ndarray | float = 1.0
    h_pert: Callable | None = None
    link_dim: int = 1

    def __post_init__(self):
        if not self.eta > 0.0:
            raise ValueError("edge regularity exponent eta must be positive")
        if self.link_dim < 1:
            raise ValueError("link manifold must have dimension >= 1")
        if self.sigma is not None and len(self.sigma) != self.link_dim:
            raise ValueError("sigma needs one component per link axis")

    @property
    def dimension(self) -> int:
        return self.link_dim + 2

    def omega_matrix(self) -> np.ndarray:
        if np.isscalar(self.omega):
            return float(self.omega) * np.eye(self.link_dim)
        om = np.asarray(self.omega, dtype=float)
        if om.shape != (self.link_dim, self.link_dim):
            raise ValueError("omega matrix shape does not match link dimension")
        return om

    def beta_values(self, ys) -> np.ndarray:
        vals = _sample_link(_as_fn(self.beta), ys)
        if np.any(vals <= -1.0):
            raise ValueError("beta must stay > -1 on the link")
        return vals

    def rho_values(self, ys) -> np.ndarray:
        vals = _sample_link(_as_fn(self.rho), ys)
        if np.any(vals <= 0.0):
            raise ValueError("tube radius rho must be positive")
        return vals

    def sigma_values(self, ys) -> list[np.ndarray]:
        if self.sigma is None:
            return [np.zeros(np.broadcast(*ys).shape) for _ in range(self.link_dim)]
        return [_sample_link(_as_fn(s), ys) for s in self.sigma]

    def min_rho(self, samples: int = 512) -> float:
        if np.isscalar(self.rho) or not callable(self.rho):
            return float(self.rho)
        ys = [np.linspace(0.0, 2.0 * np.pi, samples, endpoint=False)] * self.link_dim
        grid = np.meshgrid(*ys, indexing="ij")
        return float(np.min(self.rho_values(grid)))


def _polar_mesh(chart: ChartSpec, expected_dim: int):
    if chart.style != POLAR:
        raise ValueError("edge-model constructors need a polar-product chart")
    if chart.dimension != expected_dim:
        raise ValueError(
            f"chart dimension {chart.dimension} does not match model dimension {expected_dim}"
        )
    mesh = chart.meshgrid()
    return mesh[0], mesh[1], list(mesh[2:])


def cone_metric_2d(spec: ConeSpec, chart: ChartSpec) -> MetricField:
    """Exact sampled cone metric dr^2 + (beta+1)^2 r^2 dtheta^2."""
    r, _, _ = _polar_mesh(chart, 2)
    c2 = (spec.beta + 1.0) ** 2
    vals = np.zeros(chart.shape + (2, 2))
    vals[..., 0, 0] = 1.0
    vals[..., 1, 1] = c2 * r * r
    return MetricField(chart, vals, validate=False)


def edge_metric(data: EdgeData, chart: ChartSpec) -> MetricField:
    """Sampled edge metric assembled term by term on a polar-product chart."""
    n = data.dimension
    r, theta, ys = _polar_mesh(chart, n)
    if chart.axes[0].upper > data.min_rho() + 1e-12:
        raise ValueError(
            f"chart r-range [{chart.axes[0].lower}, {chart.axes[0].upper}] exceeds "
            f"the tube radius {data.min_rho()}"
        )
    beta = data.beta_values(ys) if ys else data.beta_values([theta * 0.0])
    sig = data.sigma_values(ys)
    om = data.omega_matrix()
    c2 = (beta + 1.0) ** 2

    vals = np.zeros(chart.shape + (n, n))
    vals[..., 0, 0] = 1.0
    vals[..., 1, 1] = c2 * r * r
    for i in range(data.link_dim):
        vals[..., 1, 2 + i] = c2 * r * r * sig[i]
        vals[..., 2 + i, 1] = vals[..., 1, 2 + i]
        for j in range(data.link_dim):
            vals[..., 2 + i, 2 + j] = om[i, j] + c2 * r * r * sig[i] * sig[j]
    if data.h_pert is not None:
        hloc = np.asarray(data.h_pert(r, theta, *ys), dtype=float)
        hloc = np.broadcast_to(hloc, chart.shape + (n, n))
        vals = vals + (r ** (1.0 + data.eta))[..., None, None] * hloc
    vals = 0.5 * (vals + np.swapaxes(vals, -1, -2))
    return MetricField(chart, vals, validate=False)


def simple_form_metric(
    f,
    sigma,
    omega_t,
    chart: ChartSpec,
) -> MetricField:
    """Metric f^2 dr^2 + r^2 (dtheta + sigma)^2 + omega~ on a polar chart.

    ``f`` is a ScalarField on the chart or a callable (r, *y); ``omega_t``
    is a constant flat matrix on the link axes.
    """
    n = chart.dimension
    r, theta, ys = _polar_mesh(chart, n)
    link_dim = n - 2
    if isinstance(f, ScalarField):
        fvals = f.values
    else:
        fvals = np.asarray(f(r, *ys), dtype=float) + np.zeros(chart.shape)
    if np.any(fvals <= 0.0):
        raise ValueError("simple-form coefficient f must be positive")
    if np.isscalar(omega_t):
        om = float(omega_t) * np.eye(link_dim)
    else:
        om = np.asarray(omega_t, dtype=float)
    sig = [np.zeros(chart.shape)] * link_dim
    if sigma is not None:
        sig = [np.asarray(_as_fn(s)(*ys), dtype=float) + np.zeros(chart.shape) for s in sigma]

    vals = np.zeros(chart.shape + (n, n))
    vals[..., 0, 0] = fvals * fvals
    vals[..., 1, 1] = r * r
    for i in range(link_dim):
        vals[..., 1, 2 + i] = r * r * sig[i]
        vals[..., 2 + i, 1] = vals[..., 1, 2 + i]
        for j in range(link_dim):
            vals[..., 2 + i, 2 + j] = om[i, j] + r * r * sig[i] * sig[j]
    return MetricField(chart, vals, validate=False)


# ---------------------------------------------------------------------------
# structural bounds
# ---------------------------------------------------------------------------

@dataclass
class StructuralRow:
    name: str
    value: float
    bound: float
    passed: bool


@dataclass
class StructuralReport:
    rows: list[StructuralRow] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(row.passed for row in self.rows)

    def add(self, name: str, value: float, bound: float, passed: bool | None = None):
        if passed is None:
            passed = np.isfinite(value) and value <= bound
        self.rows.append(StructuralRow(name, float(value), float(bound), bool(passed)))

    def row(self, name: str) -> StructuralRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)


def _link_samples(data: EdgeData, samples: int = 1024):
    """Dense periodic sampling of the link with FD derivative machinery."""
    if data.link_dim == 2:
        samples = 128
    axes = [np.linspace(0.0, 2.0 * np.pi, samples, endpoint=False)] * data.link_dim
    mesh = np.meshgrid(*axes, indexing="ij")
    hstep = 2.0 * np.pi / samples
    return mesh, hstep


def _sup_derivatives(values: np.ndarray, hstep: float) -> tuple[float, float, float]:
    """(sup|v|, sup|dv|, sup|d^2 v|) by periodic centered differences."""
    sup0 = float(np.max(np.abs(values)))
    d1, d2 = [], []
    for ax in range(values.ndim):
        d1.append((np.roll(values, -1, ax) - np.roll(values, 1, ax)) / (2 * hstep))
        d2.append((np.roll(values, -1, ax) - 2 * values + np.roll(values, 1, ax)) / hstep**2)
    sup1 = float(max(np.max(np.abs(d)) for d in d1))
    sup2 = float(max(np.max(np.abs(d)) for d in d2))
    # mixed second derivatives
    for a in range(values.ndim):
        for b in range(a + 1, values.ndim):
            m = (np.roll(d1[a], -1, b) - np.roll(d1[a], 1, b)) / (2 * hstep)
            sup2 = max(sup2, float(np.max(np.abs(m))))
    return sup0, sup1, sup2


def validate_structural_bounds(data: EdgeData, lambda_cap: float) -> StructuralReport:
    """Report every structural quantity of the edge data against a cap.

    The tube-radius second-derivative norm carries two normalizations,
    rho^{-eta} d^2 rho and rho^{-1-eta} d^2 rho; the two appear in
    different places of the source material and do not agree, so both are
    reported rather than silently choosing one.
    """
    report = StructuralReport()
    n = data.dimension
    mesh, hstep = _link_samples(data)

    eta_margin = data.eta - 2.0 + 4.0 / n
    if eta_margin <= 0.0:
        report.add("eta_supercritical_margin_inv", np.inf, lambda_cap, passed=False)
        report.notes.append(
            f"eta = {data.eta} is at or below the critical threshold 2 - 4/n = {2 - 4 / n:.6g}"
        )
    else:
        report.add("eta_supercritical_margin_inv", 1.0 / eta_margin, lambda_cap)

    beta = data.beta_values(mesh)
    angle = 2.0 * np.pi * (beta + 1.0)
    report.add(
        "cone_angle_inf",
        float(np.min(angle)),
        lambda_cap,
        passed=bool(np.min(angle) >= 1.0 / lambda_cap),
    )
    report.add(
        "cone_angle_sup",
        float(np.max(angle)),
        2.0 * np.pi,
        passed=bool(np.max(angle) <= 2.0 * np.pi + 1e-12),
    )

    b0, b1, b2 = _sup_derivatives(beta, hstep)
    report.add("beta_sup", b0, lambda_cap)
    report.add("beta_d1_sup", b1, lambda_cap)
    report.add("beta_d2_sup", b2, lambda_cap)

    rho = data.rho_values(mesh)
    r0, r1, r2 = _sup_derivatives(rho, hstep)
    report.add("rho_sup", r0, lambda_cap)
    report.add("rho_d1_sup", r1, lambda_cap)
    rho_min = float(np.min(rho))
    report.add("rho_d2_over_rho_eta", r2 / rho_min**data.eta, lambda_cap)
    report.add("rho_d2_over_rho_1plus_eta", r2 / rho_min ** (1.0 + data.eta), lambda_cap)

    for i, sig in enumerate(data.sigma_values(mesh)):
        s0, s1, s2 = _sup_derivatives(sig, hstep)
        report.add(f"sigma{i}_c2_sup", s0 + s1 + s2, lambda_cap)

    om = data.omega_matrix()
    det = float(np.linalg.det(om))
    if det <= 0.0:
        report.add("det_omega_inv_sup", np.inf, lambda_cap, passed=False)
    else:
        report.add("det_omega_inv_sup", 1.0 / det, lambda_cap)
    report.add("omega_c2_sup", float(np.max(np.abs(om))), lambda_cap)

    if data.h_pert is not None:
        rr = np.linspace(rho_min * 1e-3, rho_min, 64)
        th = np.linspace(0.0, 2 * np.pi, 16, endpoint=False)
        ys = [np.linspace(0.0, 2 * np.pi, 64, endpoint=False)] * data.link_dim
        grids = np.meshgrid(rr, th, *ys, indexing="ij")
        hvals = np.asarray(data.h_pert(grids[0], grids[1], *grids[2:]), dtype=float)
        report.add("h_sup", float(np.max(np.abs(hvals))), lambda_cap)

    return report


# ---------------------------------------------------------------------------
# skeletons
# ---------------------------------------------------------------------------

@dataclass
class SkeletonPiece:
    """A sampled curve piece with boundary markers.

    ``points`` is an (m, d) polyline; ``closed`` pieces have no boundary.
    Endpoint inner tangents are derived from the sampling unless supplied.
    """

    points: np.ndarray
    closed: bool = False
    inner_tangents: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        if self.points.ndim != 2 or self.points.shape[0] < 2:
            raise ValueError("skeleton piece needs an (m >= 2, d) polyline")
        if not self.closed and self.inner_tangents is None:
            t0 = self.points[1] - self.points[0]
            t1 = self.points[-2] - self.points[-1]
            self.inner_tangents = np.stack(
                [t0 / np.linalg.norm(t0), t1 / np.linalg.norm(t1)]
            )

    @property
    def endpoints(self) -> np.ndarray:
        if self.closed:
            return np.empty((0, self.points.shape[1]))
        return np.stack([self.points[0], self.points[-1]])


@dataclass
class Skeleton:
    pieces: list[SkeletonPiece]
    junctions: np.ndarray
    singular_points: np.ndarray
    nondegenerate: bool

    def distance(self, query: np.ndarray) -> np.ndarray:
        """Euclidean distance from query points (..., d) to the skeleton."""
        q = np.asarray(query, dtype=float)
        flat = q.reshape(-1, q.shape[-1])
        best = np.full(flat.shape[0], np.inf)
        for piece in self.pieces:
            pts = piece.points
            if piece.closed:
                segs_a, segs_b = pts, np.roll(pts, -1, axis=0)
            else:
                segs_a, segs_b = pts[:-1], pts[1:]
            d = _point_segment_distance(flat, segs_a, segs_b)
            best = np.minimum(best, d)
        return best.reshape(q.shape[:-1])


def _point_segment_distance(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    denom = np.maximum(np.einsum("sd,sd->s", ab, ab), 1e-300)
    ap = p[:, None, :] - a[None, :, :]
    t = np.clip(np.einsum("psd,sd->ps", ap, ab) / denom[None, :], 0.0, 1.0)
    proj = a[None, :, :] + t[..., None] * ab[None, :, :]
    return np.min(np.linalg.norm(p[:, None, :] - proj, axis=-1), axis=1)


def build_skeleton(pieces: Sequence[SkeletonPiece], tol: float = 1e-9) -> Skeleton:
    """Assemble pieces, detect junctions, and test nondegeneracy.

    Pieces may only meet at endpoints; any interior intersection is
    rejected.  The skeleton is degenerate when two inner-pointing endpoint
    tangents at a shared junction coincide.
    """
    pieces = list(pieces)
    endpoints = [piece.endpoints for piece in pieces]

    # interior-intersection scan
    for i, pi in enumerate(pieces):
        for j in range(i + 1, len(pieces)):
            pj = pieces[j]
            d = _pairwise_polyline_distance(pi, pj)
            if d["min"] < tol:
                if not d["at_endpoints"]:
                    raise ValueError(
                        f"pieces {i} and {j} intersect away from their endpoints"
                    )

    # junction collection: endpoints shared by more than one piece-end
    all_ends = []
    for idx, piece in enumerate(pieces):
        for e_idx, pt in enumerate(piece.endpoints):
            all_ends.append((idx, e_idx, pt))
    junctions = []
    used = set()
    for a in range(len(all_ends)):
        group = [a]
        for b in range(a + 1, len(all_ends)):
            if np.linalg.norm(all_ends[a][2] - all_ends[b][2]) < tol:
                group.append(b)
        if len(group) > 1 and a not in used:
            junctions.append(group)
            used.update(group)

    nondegenerate = True
    junction_pts = []
    for group in junctions:
        junction_pts.append(all_ends[group[0]][2])
        tangents = []
        for k in group:
            idx, e_idx, _ = all_ends[k]
            tangents.append(pieces[idx].inner_tangents[e_idx])
        for a in range(len(tangents)):
            for b in range(a + 1, len(tangents)):
                if np.linalg.norm(tangents[a] - tangents[b]) < 1e-8:
                    nondegenerate = False

    sing = [all_ends[k][2] for k in range(len(all_ends))]
    sing_arr = np.array(sing) if sing else np.empty((0, pieces[0].points.shape[1]))
    junc_arr = (
        np.array(junction_pts) if junction_pts else np.empty((0, pieces[0].points.shape[1]))
    )
    return Skeleton(pieces, junc_arr, sing_arr, nondegenerate)


def _pairwise_polyline_distance(pa: SkeletonPiece, pb: SkeletonPiece) -> dict:
    """Min distance between two polylines and whether it occurs at endpoints."""
    besta = pa.points
    d = _point_segment_distance(
        besta,
        pb.points[:-1] if not pb.closed else pb.points,
        pb.points[1:] if not pb.closed else np.roll(pb.points, -1, axis=0),
    )
    dmin = float(np.min(d))
    at_ends = False
    if dmin < 1e-9:
        close_pts = besta[d < 1e-9]
        at_ends = all(
            any(np.linalg.norm(cp - e) < 1e-9 for e in np.vstack([pa.endpoints, pb.endpoints]))
            for cp in close_pts
        ) and len(close_pts) > 0
    return {"min": dmin, "at_endpoints": at_ends}
