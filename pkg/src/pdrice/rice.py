"""Right-hand sides of Rice-type formulas for continuous crossing intensities.

Every evaluator integrates ``|<n, mu>| p`` over (part of) a surface. The
hyperplane evaluator builds its own nodes so that it can be checked against
the general surface integral.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import stats

from .crossing import ratio_estimate
from .errors import DivergentNormalizer, OutOfBox, TangentialError, ZeroSlice
from .flow import VectorField
from .surface import GraphPatch, Hyperplane, PushedForward, QuadratureSpec, Sphere, Surface, surface_integral

__all__ = [
    "RiceResult",
    "rhs_general",
    "rhs_1d",
    "rhs_grouped",
    "rhs_hyperplane",
    "drift_modulated_density",
    "conditional_palm",
    "rhs_factored",
    "discrepancy_z",
    "ratio_trend_test",
]


@dataclass
class RiceResult:
    value: float
    quad_error: float
    tail_bound: float
    surface_id: str = ""
    density_id: str = ""
    mc_error: float = 0.0
    caveat: str = ""

    @property
    def total_error(self) -> float:
        return math.sqrt(self.quad_error**2 + self.tail_bound**2 + self.mc_error**2)

    def to_dict(self):
        return {
            "value": self.value,
            "quad_error": self.quad_error,
            "tail_bound": self.tail_bound,
            "mc_error": self.mc_error,
            "surface_id": self.surface_id,
            "density_id": self.density_id,
            "caveat": self.caveat,
        }


def _density_id(density) -> str:
    return getattr(density, "id", type(density).__name__)


def _indicator(B, x):
    if B is None:
        return np.ones(np.shape(x)[:-1])
    return np.asarray(B(x), dtype=float)


def _widened(surface: Surface, factor: float = 2.0) -> Optional[Surface]:
    """The same surface on a window ``factor`` times larger, or None if compact."""
    if isinstance(surface, Sphere):
        return None
    if isinstance(surface, PushedForward):
        base = _widened(surface.base, factor)
        return None if base is None else PushedForward(base, surface.field, surface.u, surface.step, surface.method)
    if isinstance(surface, (Hyperplane, GraphPatch)):
        if surface.param_dim == 0:
            return None
        lo, hi = surface.param_window()
        c, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
        lo2, hi2 = c - factor * half, c + factor * half
        if isinstance(surface, GraphPatch) and surface.kind == "cumulative":
            # the graph ends at an asymptote; move the upper edge halfway towards it
            cap = np.log(surface.level) / surface.beta[:-1]
            hi2 = hi + 0.5 * (cap - hi)
            while np.sum(np.exp(surface.beta[:-1] * hi2)) >= surface.level:
                hi2 = 0.5 * (hi + hi2)
        return surface.with_window(lo2, hi2)
    return None


def rhs_general(surface: Surface, field: VectorField, density, B=None, quad: Optional[QuadratureSpec] = None,
                tail: bool = True) -> RiceResult:
    """``int_{S cap B} |<n, mu>| p dH^{d-1}`` with quadrature and window-tail estimates.

    The tail is the extra mass picked up when the window is doubled; compact
    surfaces have none. Densities that cannot be evaluated on the doubled
    window get a zero tail and a caveat.
    """
    quad = quad or QuadratureSpec()

    def integrand(x):
        mu = field(x)
        n = surface.normal(x)
        return np.abs(np.sum(n * mu, axis=-1)) * density(x) * _indicator(B, x)

    value, err = surface_integral(surface, integrand, quad, return_error=True)
    tail_bound, caveat = 0.0, ""
    wide = _widened(surface) if tail else None
    if wide is not None:
        try:
            wq = QuadratureSpec(quad.rule, quad.order, 2 * quad.panels, quad.flow_step)

            def wide_integrand(x):
                return np.abs(np.sum(wide.normal(x) * field(x), axis=-1)) * density(x) * _indicator(B, x)

            tail_bound = max(surface_integral(wide, wide_integrand, wq) - value, 0.0)
        except OutOfBox:
            caveat = "density undefined beyond the window; tail not assessed"
    return RiceResult(max(value, 0.0), err, tail_bound, surface.describe(), _density_id(density), caveat=caveat)


def rhs_grouped(surface: Surface, field: VectorField, kde, B=None, quad: Optional[QuadratureSpec] = None):
    """Per-group Rice integrals for a grouped KDE and the combined value with its standard error.

    The integrand is linear in the density, so the integral of group ``g``
    uses that group's kernel sums normalised by its own path time. Returns
    ``(value, std_error, per_group_values, group_times)``.
    """
    quad = quad or QuadratureSpec()
    if surface.param_dim == 0:
        pts = surface.point(np.zeros((1, 0)))
        nrm = surface.normal(pts)
        wts = np.ones(1)
    else:
        pts, nrm, wts = surface.quadrature_nodes(quad)
    weight = wts * np.abs(np.sum(nrm * field(pts), axis=-1)) * _indicator(B, pts)
    sums = kde.kernel_sums(pts) @ weight
    totals = np.asarray(kde.group_totals if kde.group_totals is not None else [kde.total_weight], dtype=float)
    value, se = ratio_estimate(sums, totals)
    return value, se, sums / totals, totals


def rhs_1d(u: float, field: VectorField, density) -> float:
    """``|mu(u)| p(u)`` for a one-dimensional process at level ``u``."""
    x = np.array([[float(u)]])
    mu = float(field(x)[0, 0])
    if mu == 0.0:
        raise TangentialError(f"drift vanishes at the level u={u}")
    return abs(mu) * float(np.asarray(density(x)).reshape(-1)[0])


def _hyperplane_nodes(dim, axis, u, window, quad):
    rest = [j for j in range(dim) if j != axis]
    if window is None:
        lo, hi = np.zeros(0), np.zeros(0)
    else:
        lo, hi = (np.atleast_1d(np.asarray(w, dtype=float)) for w in window)
    w, wts = quad.nodes(lo, hi)
    x = np.empty((w.shape[0], dim))
    x[:, axis] = u
    x[:, rest] = w
    return x, wts


def rhs_hyperplane(u: float, axis: int, field: VectorField, density, B=None, quad: Optional[QuadratureSpec] = None,
                   window=None, dim: Optional[int] = None) -> RiceResult:
    """``int 1_B |mu_axis| p`` over the slice ``{x_axis = u}`` restricted to ``window``.

    ``window`` is ``(lower, upper)`` over the remaining coordinates (ordered
    as in the full vector with ``axis`` removed); d=1 needs none.
    """
    quad = quad or QuadratureSpec()
    dim = dim if dim is not None else field.dim
    if dim > 1 and window is None:
        raise ValueError("a window over the remaining coordinates is required for d > 1")

    def once(q):
        x, wts = _hyperplane_nodes(dim, axis, u, window, q)
        mu = field(x)[:, axis]
        if np.any(mu == 0.0):
            raise TangentialError(f"drift component {axis} vanishes on the slice x[{axis}]={u}")
        return float(np.sum(wts * np.abs(mu) * density(x) * _indicator(B, x)))

    value = once(quad)
    coarse = once(quad.halved()) if quad.order > 1 and dim > 1 else value
    err = abs(value - coarse) + 64 * np.finfo(float).eps * abs(value)
    return RiceResult(max(value, 0.0), err, 0.0, f"slice(x[{axis}]={u:g})", _density_id(density))


@dataclass
class DriftModulated:
    """``x -> |mu_k(x)| p(x)`` on a box and its integral there."""

    func: Callable
    normalizer: float
    degenerate: bool

    def pdf(self, x):
        if self.degenerate:
            raise ZeroSlice("drift-modulated density has zero mass on the box")
        return self.func(x) / self.normalizer


def drift_modulated_density(field: VectorField, density, axis: int, box, quad: Optional[QuadratureSpec] = None,
                            rel_tol: float = 1e-3) -> DriftModulated:
    """Unnormalised ``|mu_axis| p`` and its integral over ``box`` (``(lower, upper)``).

    The integral is computed at two quadrature orders; a non-finite value or a
    disagreement beyond ``rel_tol`` is reported as divergence.
    """
    quad = quad or QuadratureSpec(order=48, panels=4)
    lo, hi = (np.atleast_1d(np.asarray(b, dtype=float)) for b in box)

    def func(x):
        x = np.asarray(x, dtype=float)
        return np.abs(field(x)[..., axis]) * density(x)

    def integral(q):
        w, wts = q.nodes(lo, hi)
        return float(np.sum(wts * func(w)))

    z = integral(quad)
    z2 = integral(quad.doubled())
    if not (math.isfinite(z) and math.isfinite(z2)):
        raise DivergentNormalizer("drift-modulated mass is not finite on the box")
    if abs(z2 - z) > rel_tol * max(abs(z2), 1e-300):
        raise DivergentNormalizer(f"drift-modulated mass not resolved: {z:.6g} vs {z2:.6g}")
    return DriftModulated(func, z2, z2 == 0.0)


@dataclass
class ConditionalPalm:
    """Distribution of the other coordinates at a crossing of ``{x_axis = u}``."""

    u: float
    axis: int
    edges: list
    probs: np.ndarray
    normalizer: float
    pdf: Callable

    def to_dict(self):
        return {"u": self.u, "axis": self.axis, "edges": [np.asarray(e).tolist() for e in self.edges],
                "probs": self.probs.tolist(), "normalizer": self.normalizer}


def conditional_palm(u: float, axis: int, field: VectorField, density, edges, window,
                     quad: Optional[QuadratureSpec] = None) -> ConditionalPalm:
    """Slice ``|mu_axis(x^u)| p(x^u)`` normalised over ``window``, binned on ``edges``.

    ``edges`` has one array per remaining coordinate, inside the window.
    """
    quad = quad or QuadratureSpec(order=24)
    dim = field.dim
    total = rhs_hyperplane(u, axis, field, density, None, QuadratureSpec(order=64, panels=8), window, dim).value
    if total <= 0.0:
        raise ZeroSlice(f"no crossing intensity on the slice x[{axis}]={u}")
    edges = [np.asarray(e, dtype=float) for e in edges]
    sizes = [e.size - 1 for e in edges]
    probs = np.zeros(sizes)
    for idx in np.ndindex(*sizes):
        lo = [edges[i][j] for i, j in enumerate(idx)]
        hi = [edges[i][j + 1] for i, j in enumerate(idx)]
        probs[idx] = rhs_hyperplane(u, axis, field, density, None, quad, (lo, hi), dim).value / total

    rest = [j for j in range(dim) if j != axis]

    def pdf(y):
        y = np.atleast_2d(np.asarray(y, dtype=float))
        x = np.empty((y.shape[0], dim))
        x[:, axis] = u
        x[:, rest] = y
        return np.abs(field(x)[:, axis]) * density(x) / total

    return ConditionalPalm(float(u), axis, edges, probs.reshape(-1), total, pdf)


def rhs_factored(surface: Surface, field: VectorField, cond_density: Callable, y_samples,
                 B=None, quad: Optional[QuadratureSpec] = None) -> RiceResult:
    """Monte Carlo over ``Y_0`` of the inner Rice integral on ``surface`` in the first k coordinates.

    ``cond_density(x, y)`` is the density of the first ``k`` coordinates given
    the remaining ones; ``y_samples`` has shape ``(m, d - k)``.
    """
    quad = quad or QuadratureSpec()
    y_samples = np.asarray(y_samples, dtype=float)
    if y_samples.ndim == 1:
        y_samples = y_samples[:, None]
    k = surface.dim
    pts, nrm, wts = surface.quadrature_nodes(quad)
    inner = np.empty(y_samples.shape[0])
    for i, y in enumerate(y_samples):
        full = np.concatenate([pts, np.broadcast_to(y, (pts.shape[0], y.shape[0]))], axis=1)
        mu = field(full)[:, :k]
        vals = np.abs(np.sum(nrm * mu, axis=-1)) * cond_density(pts, y) * _indicator(B, full)
        inner[i] = float(np.sum(wts * vals))
    m = inner.shape[0]
    value = float(inner.mean())
    mc = float(inner.std(ddof=1) / math.sqrt(m)) if m > 1 else 0.0
    return RiceResult(value, 0.0, 0.0, surface.describe(), "conditional", mc_error=mc)


def discrepancy_z(estimate: float, std_error: float, rice: RiceResult, rhs_se: float = 0.0) -> float:
    """``(estimate - rhs) / sqrt(SE^2 + quad^2 + tail^2 + rhs_se^2)``."""
    scale = math.sqrt(std_error**2 + rice.total_error**2 + rhs_se**2)
    diff = estimate - rice.value
    if scale == 0.0:
        return 0.0 if diff == 0.0 else math.copysign(math.inf, diff)
    return diff / scale


def ratio_trend_test(levels, ratios, std_errors):
    """Weighted least-squares slope of ``ratios`` against ``levels``.

    Returns ``(slope, slope_se, p_value)`` with a two-sided normal p-value;
    the weights use the known standard errors.
    """
    u = np.asarray(levels, dtype=float)
    r = np.asarray(ratios, dtype=float)
    w = 1.0 / np.asarray(std_errors, dtype=float) ** 2
    ubar = np.sum(w * u) / np.sum(w)
    rbar = np.sum(w * r) / np.sum(w)
    sxx = np.sum(w * (u - ubar) ** 2)
    slope = float(np.sum(w * (u - ubar) * (r - rbar)) / sxx)
    se = float(1.0 / math.sqrt(sxx))
    p = float(2.0 * stats.norm.sf(abs(slope / se)))
    return slope, se, p
