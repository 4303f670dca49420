"""Oriented (d-1)-surfaces, their flow-parallel copies, and surface quadrature.

Every surface carries an explicit parametrization ``w -> z(w)`` over a box
window ``W`` in R^(d-1) plus a signed defining function whose zero set is the
surface and whose gradient points along the oriented normal. Axis indices are
0-based throughout.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from dataclasses import field as dc_field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .errors import DegenerateFrame, DomainExit, OutOfWindow
from .flow import VectorField, field_from_dict, flow_map

__all__ = [
    "Surface",
    "Hyperplane",
    "GraphPatch",
    "Sphere",
    "PushedForward",
    "QuadratureSpec",
    "signed_value",
    "normal_at",
    "cofactor_normal",
    "gram_weight",
    "transversality_margin",
    "parallel_surface",
    "working_u0",
    "surface_integral",
    "jacobian_identity_check",
    "surface_from_dict",
]

_DEFAULT_HALF_WIDTH = 10.0


@dataclass(frozen=True)
class QuadratureSpec:
    """Tensor quadrature over a parameter window.

    ``rule='gauss'`` uses ``order`` Gauss-Legendre nodes on each of ``panels``
    equal sub-intervals per axis; ``rule='midpoint'`` uses ``order`` midpoints
    per panel. ``flow_step`` is the RK4 step used when pushed-forward nodes
    must be integrated numerically.
    """

    rule: str = "gauss"
    order: int = 32
    panels: int = 1
    flow_step: float = 1e-2

    def __post_init__(self):
        if self.rule not in ("gauss", "midpoint"):
            raise ValueError(f"unknown quadrature rule {self.rule!r}")
        if self.order < 1 or self.panels < 1:
            raise ValueError("order and panels must be positive")

    def halved(self) -> "QuadratureSpec":
        return replace(self, order=max(1, self.order // 2))

    def doubled(self) -> "QuadratureSpec":
        return replace(self, order=2 * self.order)

    def nodes_1d(self, lo: float, hi: float):
        if self.rule == "gauss":
            ref, wref = np.polynomial.legendre.leggauss(self.order)
            ref = 0.5 * (ref + 1.0)
            wref = 0.5 * wref
        else:
            ref = (np.arange(self.order) + 0.5) / self.order
            wref = np.full(self.order, 1.0 / self.order)
        edges = np.linspace(lo, hi, self.panels + 1)
        width = np.diff(edges)
        pts = (edges[:-1, None] + width[:, None] * ref).ravel()
        wts = (width[:, None] * wref).ravel()
        return pts, wts

    def nodes(self, lower, upper):
        """Tensor nodes ``(N, k)`` and weights ``(N,)`` on the box [lower, upper]."""
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        upper = np.atleast_1d(np.asarray(upper, dtype=float))
        k = lower.shape[0]
        if k == 0:
            return np.zeros((1, 0)), np.ones(1)
        axes = [self.nodes_1d(lo, hi) for lo, hi in zip(lower, upper)]
        grids = np.meshgrid(*[a[0] for a in axes], indexing="ij")
        wgrids = np.meshgrid(*[a[1] for a in axes], indexing="ij")
        pts = np.stack([g.ravel() for g in grids], axis=-1)
        wts = np.prod(np.stack([g.ravel() for g in wgrids], axis=-1), axis=-1)
        return pts, wts

    def to_dict(self) -> dict:
        return {"rule": self.rule, "order": self.order, "panels": self.panels, "flow_step": self.flow_step}


def cofactor_normal(T: np.ndarray) -> np.ndarray:
    """Generalized cross product of ``d-1`` tangent vectors (rows of ``T``).

    The result ``c`` satisfies ``det([T; v]) = <c, v>`` for every ``v`` and
    ``|c| = sqrt(det(T T^t))``.
    """
    T = np.asarray(T, dtype=float)
    d = T.shape[-1]
    if d == 1:
        return np.ones(T.shape[:-2] + (1,))
    cols = []
    for i in range(d):
        minor = np.delete(T, i, axis=-1)
        cols.append((-1.0) ** (d - 1 + i) * np.linalg.det(minor))
    return np.stack(cols, axis=-1)


def gram_weight(T: np.ndarray) -> np.ndarray:
    """Surface element ``H = sqrt(det(<t_i, t_j>))`` of a tangent frame."""
    T = np.asarray(T, dtype=float)
    G = T @ np.swapaxes(T, -1, -2)
    det = np.linalg.det(G) if G.shape[-1] else np.ones(G.shape[:-2])
    return np.sqrt(np.maximum(det, 0.0))


class Surface:
    """Common behaviour for the built-in surface variants."""

    dim: int
    orientation: int

    # -- geometry supplied by subclasses -------------------------------------------
    def signed_value(self, x) -> np.ndarray:
        raise NotImplementedError

    def normal(self, x) -> np.ndarray:
        raise NotImplementedError

    def point(self, w) -> np.ndarray:
        raise NotImplementedError

    def tangents(self, w) -> np.ndarray:
        raise NotImplementedError

    def param_of(self, x) -> np.ndarray:
        raise NotImplementedError

    def param_window(self):
        """Finite parameter window ``(lower, upper)`` used for quadrature."""
        raise NotImplementedError

    def in_window(self, x) -> np.ndarray:
        return np.ones(np.shape(x)[:-1], dtype=bool)

    def may_cross_box(self, lo, hi) -> np.ndarray:
        """False only where the box ``[lo, hi]`` is certainly disjoint from the surface."""
        return np.ones(np.shape(lo)[:-1], dtype=bool)

    def flipped(self) -> "Surface":
        return replace(self, orientation=-self.orientation)

    def describe(self) -> str:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError

    @property
    def param_dim(self) -> int:
        return self.dim - 1

    # -- derived -------------------------------------------------------------------
    def frame(self, w):
        """Points, tangent frames and oriented unit normals at parameters ``w``."""
        w = np.atleast_2d(np.asarray(w, dtype=float))
        pts = self.point(w)
        return pts, self.tangents(w), self.normal(pts)

    def quadrature_nodes(self, quad: QuadratureSpec):
        """Nodes on the surface, unit normals there, and weights including ``H``."""
        lo, hi = self.param_window()
        w, wts = quad.nodes(lo, hi)
        pts, T, nrm = self.frame(w)
        H = gram_weight(T)
        if np.any(H <= 1e-14 * max(1.0, float(np.max(H, initial=0.0)))):
            raise DegenerateFrame(f"degenerate tangent frame on {self.describe()}")
        return pts, nrm, wts * H


def _window_arrays(window, k):
    if window is None:
        return None
    lo, hi = window
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    if lo.shape != (k,) or hi.shape != (k,) or np.any(hi <= lo):
        raise ValueError(f"window must be a nonempty box in R^{k}")
    return lo, hi


@dataclass(frozen=True, eq=False)
class Hyperplane(Surface):
    """``{x : x[axis] = level}``; normal ``+e_axis`` for orientation +1.

    ``window`` optionally truncates the remaining ``d-1`` coordinates.
    """

    dim: int
    axis: int
    level: float
    window: Optional[tuple] = None
    orientation: int = 1

    def __post_init__(self):
        if not 0 <= self.axis < self.dim:
            raise ValueError("axis out of range")
        object.__setattr__(self, "window", _window_arrays(self.window, self.dim - 1))
        object.__setattr__(self, "_rest", [j for j in range(self.dim) if j != self.axis])

    def signed_value(self, x):
        x = np.asarray(x, dtype=float)
        return self.orientation * (x[..., self.axis] - self.level)

    def normal(self, x):
        x = np.asarray(x, dtype=float)
        n = np.zeros(x.shape)
        n[..., self.axis] = self.orientation
        return n

    def point(self, w):
        w = np.asarray(w, dtype=float)
        x = np.empty(w.shape[:-1] + (self.dim,))
        x[..., self.axis] = self.level
        x[..., self._rest] = w
        return x

    def tangents(self, w):
        w = np.asarray(w, dtype=float)
        T = np.zeros(w.shape[:-1] + (self.dim - 1, self.dim))
        for i, j in enumerate(self._rest):
            T[..., i, j] = 1.0
        return T

    def param_of(self, x):
        return np.asarray(x, dtype=float)[..., self._rest]

    def param_window(self):
        if self.window is not None:
            return self.window
        k = self.dim - 1
        return np.full(k, -_DEFAULT_HALF_WIDTH), np.full(k, _DEFAULT_HALF_WIDTH)

    def in_window(self, x):
        if self.window is None:
            return np.ones(np.shape(x)[:-1], dtype=bool)
        w = self.param_of(x)
        return np.all((w >= self.window[0]) & (w <= self.window[1]), axis=-1)

    def may_cross_box(self, lo, hi):
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        return (lo[..., self.axis] <= self.level) & (hi[..., self.axis] >= self.level)

    def with_window(self, lower, upper) -> "Hyperplane":
        return replace(self, window=(lower, upper))

    def describe(self):
        return f"hyperplane(x[{self.axis}]={self.level:g})"

    def to_dict(self):
        win = None if self.window is None else [self.window[0].tolist(), self.window[1].tolist()]
        return {
            "type": "hyperplane",
            "dim": self.dim,
            "axis": self.axis,
            "level": self.level,
            "window": win,
            "orientation": self.orientation,
        }


@dataclass(frozen=True, eq=False)
class GraphPatch(Surface):
    """Graph ``x_d = h(x_1..x_{d-1})`` over a window ``W``.

    ``kind='affine'``: ``h(w) = intercept + <coef, w>``.
    ``kind='cumulative'``: the level set ``sum_j exp(beta_j x_j) = level``,
    i.e. ``h(w) = log(level - sum_{j<d} exp(beta_j w_j)) / beta_d``.
    Normals point to the ``+x_d`` side for orientation +1.
    """

    dim: int
    kind: str
    window: tuple
    coef: Optional[np.ndarray] = None
    intercept: float = 0.0
    beta: Optional[np.ndarray] = None
    level: float = 1.0
    orientation: int = 1

    def __post_init__(self):
        k = self.dim - 1
        if self.dim < 2:
            raise ValueError("graph patches need d >= 2")
        object.__setattr__(self, "window", _window_arrays(self.window, k))
        if self.kind == "affine":
            coef = np.zeros(k) if self.coef is None else np.atleast_1d(np.asarray(self.coef, dtype=float))
            object.__setattr__(self, "coef", coef)
        elif self.kind == "cumulative":
            beta = np.broadcast_to(np.asarray(1.0 if self.beta is None else self.beta, dtype=float), (self.dim,)).copy()
            if np.any(beta <= 0) or self.level <= 0:
                raise ValueError("cumulative-intensity surfaces need beta > 0 and level > 0")
            object.__setattr__(self, "beta", beta)
            top = np.sum(np.exp(beta[:-1] * self.window[1]))
            if top >= self.level:
                raise ValueError("window reaches past the asymptote of the cumulative-intensity graph")
        else:
            raise ValueError(f"unknown graph kind {self.kind!r}")

    def height(self, w):
        w = np.asarray(w, dtype=float)
        if self.kind == "affine":
            return self.intercept + w @ self.coef
        rest = self.level - np.sum(np.exp(self.beta[:-1] * w), axis=-1)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.log(rest) / self.beta[-1]

    def height_grad(self, w):
        w = np.asarray(w, dtype=float)
        if self.kind == "affine":
            return np.broadcast_to(self.coef, w.shape).copy()
        e = np.exp(self.beta[:-1] * w)
        rest = self.level - np.sum(e, axis=-1, keepdims=True)
        return -(self.beta[:-1] * e) / (self.beta[-1] * rest)

    def signed_value(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "affine":
            return self.orientation * (x[..., -1] - self.height(x[..., :-1]))
        z = self.beta * x
        zmax = np.max(z, axis=-1, keepdims=True)
        lse = zmax[..., 0] + np.log(np.sum(np.exp(z - zmax), axis=-1))
        return self.orientation * (lse - math.log(self.level))

    def normal(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "affine":
            g = np.concatenate([-np.broadcast_to(self.coef, x.shape[:-1] + (self.dim - 1,)), np.ones(x.shape[:-1] + (1,))], axis=-1)
        else:
            z = self.beta * x
            g = self.beta * np.exp(z - np.max(z, axis=-1, keepdims=True))
        return self.orientation * g / np.linalg.norm(g, axis=-1, keepdims=True)

    def point(self, w):
        w = np.asarray(w, dtype=float)
        return np.concatenate([w, self.height(w)[..., None]], axis=-1)

    def tangents(self, w):
        w = np.asarray(w, dtype=float)
        k = self.dim - 1
        grad = self.height_grad(w)
        T = np.zeros(w.shape[:-1] + (k, self.dim))
        for i in range(k):
            T[..., i, i] = 1.0
            T[..., i, -1] = grad[..., i]
        return T

    def param_of(self, x):
        return np.asarray(x, dtype=float)[..., :-1]

    def param_window(self):
        return self.window

    def in_window(self, x):
        w = self.param_of(x)
        return np.all((w >= self.window[0]) & (w <= self.window[1]), axis=-1)

    def may_cross_box(self, lo, hi):
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        if self.kind == "affine":
            a, b = lo[..., :-1] * self.coef, hi[..., :-1] * self.coef
            gmin = lo[..., -1] - np.sum(np.maximum(a, b), axis=-1) - self.intercept
            gmax = hi[..., -1] - np.sum(np.minimum(a, b), axis=-1) - self.intercept
            return (gmin <= 0) & (gmax >= 0)
        # log-sum-exp is increasing in every coordinate
        gmin = self.orientation * self.signed_value(lo)
        gmax = self.orientation * self.signed_value(hi)
        return (gmin <= 0) & (gmax >= 0)

    def with_window(self, lower, upper) -> "GraphPatch":
        return replace(self, window=(lower, upper))

    def describe(self):
        if self.kind == "affine":
            return f"graph(affine, d={self.dim})"
        return f"graph(sum exp(beta x)={self.level:g})"

    def to_dict(self):
        out = {
            "type": "graph",
            "dim": self.dim,
            "kind": self.kind,
            "window": [self.window[0].tolist(), self.window[1].tolist()],
            "orientation": self.orientation,
        }
        if self.kind == "affine":
            out.update(coef=self.coef.tolist(), intercept=self.intercept)
        else:
            out.update(beta=self.beta.tolist(), level=self.level)
        return out


@dataclass(frozen=True, eq=False)
class Sphere(Surface):
    """Circle (d=2) or sphere (d=3); outward normal for orientation +1.

    Parameters: the angle in ``[0, 2 pi)`` for circles; polar angle in
    ``[0, pi]`` and azimuth in ``[0, 2 pi)`` for spheres.
    """

    center: np.ndarray
    radius: float
    orientation: int = 1

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.center, dtype=float))
        if c.shape[0] not in (2, 3):
            raise ValueError("spheres are supported in d = 2 or 3")
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        object.__setattr__(self, "center", c)

    @property
    def dim(self) -> int:
        return self.center.shape[0]

    def signed_value(self, x):
        x = np.asarray(x, dtype=float)
        return self.orientation * (np.linalg.norm(x - self.center, axis=-1) - self.radius)

    def normal(self, x):
        v = np.asarray(x, dtype=float) - self.center
        r = np.linalg.norm(v, axis=-1, keepdims=True)
        if np.any(r == 0):
            raise DegenerateFrame("normal undefined at the sphere centre")
        return self.orientation * v / r

    def point(self, w):
        w = np.asarray(w, dtype=float)
        r = self.radius
        if self.dim == 2:
            th = w[..., 0]
            return self.center + r * np.stack([np.cos(th), np.sin(th)], axis=-1)
        th, ph = w[..., 0], w[..., 1]
        return self.center + r * np.stack(
            [np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)], axis=-1
        )

    def tangents(self, w):
        w = np.asarray(w, dtype=float)
        r = self.radius
        if self.dim == 2:
            th = w[..., 0]
            return (r * np.stack([-np.sin(th), np.cos(th)], axis=-1))[..., None, :]
        th, ph = w[..., 0], w[..., 1]
        t1 = r * np.stack([np.cos(th) * np.cos(ph), np.cos(th) * np.sin(ph), -np.sin(th)], axis=-1)
        t2 = r * np.stack([-np.sin(th) * np.sin(ph), np.sin(th) * np.cos(ph), np.zeros_like(th)], axis=-1)
        return np.stack([t1, t2], axis=-2)

    def may_cross_box(self, lo, hi):
        lo = np.asarray(lo, dtype=float) - self.center
        hi = np.asarray(hi, dtype=float) - self.center
        dmin = np.linalg.norm(np.clip(0.0, lo, hi), axis=-1)
        dmax = np.linalg.norm(np.maximum(np.abs(lo), np.abs(hi)), axis=-1)
        return (dmin <= self.radius) & (dmax >= self.radius)

    def param_of(self, x):
        v = np.asarray(x, dtype=float) - self.center
        if self.dim == 2:
            return np.mod(np.arctan2(v[..., 1], v[..., 0]), 2 * np.pi)[..., None]
        r = np.linalg.norm(v, axis=-1)
        th = np.arccos(np.clip(v[..., 2] / r, -1.0, 1.0))
        ph = np.mod(np.arctan2(v[..., 1], v[..., 0]), 2 * np.pi)
        return np.stack([th, ph], axis=-1)

    def param_window(self):
        if self.dim == 2:
            return np.array([0.0]), np.array([2 * np.pi])
        return np.array([0.0, 0.0]), np.array([np.pi, 2 * np.pi])

    def describe(self):
        return f"sphere(r={self.radius:g})"

    def to_dict(self):
        return {"type": "sphere", "center": self.center.tolist(), "radius": self.radius, "orientation": self.orientation}


@dataclass(frozen=True, eq=False)
class PushedForward(Surface):
    """The parallel surface ``{q(x, u) : x in base}``.

    The signed function is the base's signed function composed with the
    backward flow, so crossings of the pushed surface are located exactly as
    for the base. Orientation follows the base.
    """

    base: Surface
    field: VectorField
    u: float
    step: float = 1e-2
    method: str = "auto"
    _cache: dict = dc_field(default_factory=dict, repr=False, compare=False)

    @property
    def dim(self) -> int:
        return self.base.dim

    @property
    def orientation(self) -> int:
        return self.base.orientation

    def flipped(self) -> "PushedForward":
        return replace(self, base=self.base.flipped(), _cache={})

    def _flow(self, x, t):
        return flow_map(self.field, x, t, step=self.step, method=self.method)

    def pull_back(self, x):
        return self._flow(np.asarray(x, dtype=float), -self.u)

    def signed_value(self, x):
        return self.base.signed_value(self.pull_back(x))

    def point(self, w):
        return self._flow(self.base.point(w), self.u)

    def _flow_jacobian(self, z, h=1e-6):
        z = np.atleast_2d(z)
        n, d = z.shape
        eye = np.eye(d)
        plus = (z[:, None, :] + h * eye).reshape(-1, d)
        minus = (z[:, None, :] - h * eye).reshape(-1, d)
        fp = self._flow(plus, self.u).reshape(n, d, d)
        fm = self._flow(minus, self.u).reshape(n, d, d)
        return np.swapaxes((fp - fm) / (2 * h), -1, -2)

    def tangents(self, w):
        w = np.atleast_2d(np.asarray(w, dtype=float))
        z = self.base.point(w)
        J = self._flow_jacobian(z)
        return self.base.tangents(w) @ np.swapaxes(J, -1, -2)

    def _normals_from(self, w):
        z = self.base.point(w)
        J = self._flow_jacobian(z)
        T = self.base.tangents(w) @ np.swapaxes(J, -1, -2)
        c = cofactor_normal(T)
        norm = np.linalg.norm(c, axis=-1, keepdims=True)
        if np.any(norm <= 1e-14):
            raise DegenerateFrame("pushed tangent frame is degenerate")
        pushed = np.linalg.solve(np.swapaxes(J, -1, -2), self.base.normal(z)[..., None])[..., 0]
        sgn = np.sign(np.sum(c * pushed, axis=-1, keepdims=True))
        return T, sgn * c / norm

    def normal(self, x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        w = self.base.param_of(self.pull_back(np.atleast_2d(x)))
        _, n = self._normals_from(w)
        return n[0] if single else n

    def frame(self, w):
        w = np.atleast_2d(np.asarray(w, dtype=float))
        T, n = self._normals_from(w)
        return self.point(w), T, n

    def quadrature_nodes(self, quad: QuadratureSpec):
        if quad not in self._cache:
            self._cache[quad] = Surface.quadrature_nodes(self, quad)
        return self._cache[quad]

    def param_of(self, x):
        return self.base.param_of(self.pull_back(x))

    def param_window(self):
        return self.base.param_window()

    def in_window(self, x):
        return self.base.in_window(self.pull_back(x))

    def describe(self):
        return f"pushed({self.base.describe()}, u={self.u:g})"

    def to_dict(self):
        return {"type": "pushed", "base": self.base.to_dict(), "field": self.field.to_dict(), "u": self.u}


def surface_from_dict(spec: dict) -> Surface:
    kind = spec["type"]
    orient = int(spec.get("orientation", 1))
    if kind == "hyperplane":
        win = spec.get("window")
        return Hyperplane(int(spec["dim"]), int(spec["axis"]), float(spec["level"]),
                          None if win is None else tuple(win), orient)
    if kind == "graph":
        return GraphPatch(
            int(spec["dim"]), spec["kind"], tuple(spec["window"]),
            coef=spec.get("coef"), intercept=float(spec.get("intercept", 0.0)),
            beta=spec.get("beta"), level=float(spec.get("level", 1.0)), orientation=orient,
        )
    if kind == "sphere":
        return Sphere(spec["center"], float(spec["radius"]), orient)
    if kind == "pushed":
        return PushedForward(surface_from_dict(spec["base"]), field_from_dict(spec["field"]), float(spec["u"]))
    raise ValueError(f"unknown surface type {kind!r}")


# -- module-level operations -----------------------------------------------------


def signed_value(surface: Surface, x, strict: bool = False) -> np.ndarray:
    """Signed defining function; with ``strict`` points outside the window raise."""
    if strict and not np.all(surface.in_window(x)):
        raise OutOfWindow(f"point outside the window of {surface.describe()}")
    return surface.signed_value(x)


def normal_at(surface: Surface, x) -> np.ndarray:
    return surface.normal(x)


def _sample_params(surface: Surface, samples: int) -> np.ndarray:
    lo, hi = surface.param_window()
    k = len(lo)
    if k == 0:
        return np.zeros((1, 0))
    per_axis = max(1, int(math.ceil(samples ** (1.0 / k))))
    quad = QuadratureSpec(rule="midpoint", order=per_axis)
    return quad.nodes(lo, hi)[0]


def transversality_margin(surface: Surface, field: VectorField, samples: int = 256) -> float:
    """Minimum of ``|<n(x), mu(x)>|`` over a midpoint grid of the surface window."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    pts, _, nrm = surface.frame(_sample_params(surface, samples))
    return float(np.min(np.abs(np.sum(nrm * field(pts), axis=-1))))


def parallel_surface(base: Surface, field: VectorField, u: float, step: float = 1e-2,
                     method: str = "auto", samples: int = 256) -> PushedForward:
    """``S_u``; raises :class:`DomainExit` if sampled nodes leave the field domain."""
    if u < 0:
        raise ValueError("u must be nonnegative")
    pushed = PushedForward(base, field, float(u), step=step, method=method)
    if field.domain is not None:
        pts = pushed.point(_sample_params(base, samples))
        if not np.all(field.in_domain(pts)):
            raise DomainExit(f"flowing {base.describe()} for u={u} leaves the field domain")
    return pushed


def working_u0(base: Surface, field: VectorField, u_max: float, n_grid: int = 20,
               samples: int = 256, step: float = 1e-2) -> float:
    """Largest grid ``u <= u_max`` keeping the transversality margin of every
    ``S_u`` on ``[0, u]`` above half the margin of ``S``."""
    m0 = transversality_margin(base, field, samples)
    best = 0.0
    for u in np.linspace(0.0, u_max, n_grid + 1)[1:]:
        try:
            surf = parallel_surface(base, field, u, step=step, samples=samples)
            m = transversality_margin(surf, field, samples)
        except (DomainExit, DegenerateFrame):
            break
        if m < 0.5 * m0:
            break
        best = float(u)
    return best


def surface_integral(surface: Surface, integrand: Callable[[np.ndarray], np.ndarray],
                     quad: Optional[QuadratureSpec] = None, return_error: bool = False):
    """``int_S integrand dH^{d-1}`` by parametrized tensor quadrature.

    The error estimate is the change against the rule of half the order, with
    a round-off floor.
    """
    quad = quad or QuadratureSpec()

    def once(q):
        pts, _, wts = surface.quadrature_nodes(q)
        return float(np.sum(wts * np.asarray(integrand(pts), dtype=float)))

    value = once(quad)
    if not return_error:
        return value
    coarse = once(quad.halved()) if quad.order > 1 else value
    err = abs(value - coarse) + 64 * np.finfo(float).eps * max(abs(value), 1e-300)
    return value, err


def jacobian_identity_check(base: Surface, field: VectorField, w, u: float,
                            h: float = 1e-5, step: float = 1e-2, method: str = "auto"):
    """Compare ``|det D psi|`` (finite differences of ``psi(w, u) = q(z(w), u)``)
    with ``|<n_u, mu>| H`` computed from the pushed tangent frame."""
    w = np.atleast_1d(np.asarray(w, dtype=float))
    d = base.dim

    def psi(wv, uv):
        return flow_map(field, base.point(wv), uv, step=step, method=method)

    cols = []
    for i in range(d - 1):
        e = np.zeros_like(w)
        e[i] = h
        cols.append((psi(w + e, u) - psi(w - e, u)) / (2 * h))
    cols.append((psi(w, u + h) - psi(w, u - h)) / (2 * h))
    lhs = abs(float(np.linalg.det(np.stack(cols))))

    pushed = PushedForward(base, field, u, step=step, method=method)
    x, T, n = pushed.frame(w[None, :])
    H = gram_weight(T)[0]
    if H <= 1e-14:
        raise DegenerateFrame("degenerate frame in Jacobian check")
    rhs = abs(float(np.dot(n[0], field(x[0])))) * float(H)
    return lhs, rhs
