"""Drift vector fields, their integral curves, and event localization along them.

Points are numpy arrays whose last axis is the spatial dimension ``d``; most
functions accept a single point of shape ``(d,)`` or a batch ``(n, d)``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.linalg import expm

from .errors import DomainError, GrazingWarning, StepError

__all__ = [
    "Box",
    "VectorField",
    "Constant",
    "Affine",
    "SoftIdle",
    "StressDrift",
    "FlowResult",
    "evaluate_field",
    "rk4_step",
    "rk4_flow",
    "flow_map",
    "integrate_flow",
    "flow_jacobian",
    "hitting_time",
    "locate_sign_changes",
    "field_from_dict",
]


@dataclass(frozen=True, eq=False)
class Box:
    """Open axis-aligned box ``{x : lower < x < upper}``."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or np.any(hi <= lo):
            raise ValueError("box must be nonempty with matching bounds")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.all((x > self.lower) & (x < self.upper), axis=-1)

    def closest(self, x) -> np.ndarray:
        return np.clip(x, self.lower, self.upper)

    def to_dict(self) -> dict:
        return {"lower": self.lower.tolist(), "upper": self.upper.tolist()}


class VectorField:
    """A C^1 drift ``mu`` on an open domain (all of R^d when ``domain`` is None).

    Subclasses implement ``__call__`` (vectorized over leading axes) and may
    provide a closed-form flow through ``exact_flow``.
    """

    dim: int
    domain: Optional[Box] = None
    has_exact_flow = False

    @property
    def componentwise_monotone(self) -> bool:
        """True when every coordinate of every integral curve is monotone in t.

        The bounding box of a flow piece is then spanned by its two endpoints.
        """
        return False

    def __call__(self, x) -> np.ndarray:
        raise NotImplementedError

    def exact_flow(self, x, t) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__} has no closed-form flow")

    def in_domain(self, x) -> np.ndarray:
        if self.domain is None:
            return np.ones(np.shape(x)[:-1], dtype=bool)
        return self.domain.contains(x)

    def clock(self, x0, x1) -> np.ndarray:
        """Travel time ``int_{x0}^{x1} dx / mu(x)`` of a 1-d flow.

        Only meaningful when ``mu`` does not vanish between the endpoints.
        The generic version uses 32-point Gauss-Legendre quadrature.
        """
        self._require_1d()
        x0 = np.asarray(x0, dtype=float)
        x1 = np.asarray(x1, dtype=float)
        nodes, weights = _gauss_legendre(32)
        half = 0.5 * (x1 - x0)
        mid = 0.5 * (x1 + x0)
        pts = mid[..., None] + half[..., None] * nodes
        vals = 1.0 / self(pts[..., None])[..., 0]
        return half * np.sum(weights * vals, axis=-1)

    def _require_1d(self):
        if self.dim != 1:
            raise ValueError("clock is defined for one-dimensional fields only")

    def to_dict(self) -> dict:
        raise NotImplementedError


def _domain_dict(domain):
    return None if domain is None else domain.to_dict()


@dataclass(frozen=True, eq=False)
class Constant(VectorField):
    """``mu(x) = c``."""

    c: np.ndarray
    domain: Optional[Box] = None
    has_exact_flow = True

    def __post_init__(self):
        object.__setattr__(self, "c", np.atleast_1d(np.asarray(self.c, dtype=float)))

    @property
    def dim(self) -> int:
        return self.c.shape[0]

    componentwise_monotone = True

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(self.c, x.shape).copy()

    def exact_flow(self, x, t):
        return np.asarray(x, dtype=float) + np.asarray(t, dtype=float) * self.c

    def clock(self, x0, x1):
        self._require_1d()
        return (np.asarray(x1, dtype=float) - np.asarray(x0, dtype=float)) / self.c[0]

    def to_dict(self):
        return {"type": "constant", "c": self.c.tolist(), "domain": _domain_dict(self.domain)}


@dataclass(frozen=True, eq=False)
class StressDrift(Constant):
    """Constant tectonic loading drift ``mu(x) = rho``."""

    def to_dict(self):
        return {"type": "stress_drift", "rho": self.c.tolist(), "domain": _domain_dict(self.domain)}


@dataclass(frozen=True, eq=False)
class Affine(VectorField):
    """``mu(x) = A x + b``."""

    A: np.ndarray
    b: Optional[np.ndarray] = None
    domain: Optional[Box] = None
    has_exact_flow = True

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        if A.shape[0] != A.shape[1]:
            raise ValueError("A must be square")
        b = np.zeros(A.shape[0]) if self.b is None else np.atleast_1d(np.asarray(self.b, dtype=float))
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        diag = np.allclose(A, np.diag(np.diag(A)), rtol=0.0, atol=0.0)
        object.__setattr__(self, "_diag", diag)
        if not diag:
            lam, vec = np.linalg.eig(A)
            ok = np.all(lam != 0) and np.linalg.cond(vec) < 1e8
            object.__setattr__(self, "_eig", (lam, vec, np.linalg.inv(vec)) if ok else None)

    @property
    def dim(self) -> int:
        return self.A.shape[0]

    @property
    def componentwise_monotone(self) -> bool:
        return self._diag

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return x @ self.A.T + self.b

    def exact_flow(self, x, t):
        x = np.asarray(x, dtype=float)
        t = np.asarray(t, dtype=float)
        if self._diag:
            a = np.diag(self.A)
            ea = np.exp(a * t)
            with np.errstate(divide="ignore", invalid="ignore"):
                phi = np.where(a != 0.0, np.expm1(a * t) / np.where(a != 0.0, a, 1.0), t)
            return x * ea + self.b * phi
        if t.ndim == 0:
            M = self._expm_aug(float(t))
            return x @ M[:-1, :-1].T + M[:-1, -1]
        if self._eig is not None:
            lam, vec, inv = self._eig
            shift = np.linalg.solve(self.A, self.b)
            y = (x + shift) @ inv.T
            y = y * np.exp(lam * t)
            return np.real(y @ vec.T) - shift
        tt = np.broadcast_to(t, x.shape[:-1] + (1,))
        out = np.empty(np.broadcast_shapes(x.shape, tt.shape))
        for idx in np.ndindex(out.shape[:-1]):
            M = self._expm_aug(float(tt[idx][0]))
            out[idx] = M[:-1, :-1] @ x[idx] + M[:-1, -1]
        return out

    def _expm_aug(self, t: float) -> np.ndarray:
        d = self.dim
        M = np.zeros((d + 1, d + 1))
        M[:d, :d] = self.A
        M[:d, d] = self.b
        return expm(M * t)

    def clock(self, x0, x1):
        self._require_1d()
        a, b = self.A[0, 0], self.b[0]
        x0 = np.asarray(x0, dtype=float)
        x1 = np.asarray(x1, dtype=float)
        if a == 0.0:
            return (x1 - x0) / b
        return np.log((a * x1 + b) / (a * x0 + b)) / a

    def to_dict(self):
        return {
            "type": "affine",
            "A": self.A.tolist(),
            "b": self.b.tolist(),
            "domain": _domain_dict(self.domain),
        }


def _log_abs_sinh(y):
    ay = np.abs(y)
    with np.errstate(divide="ignore"):
        return ay + np.log1p(-np.exp(-2.0 * ay)) - math.log(2.0)


@dataclass(frozen=True, eq=False)
class SoftIdle(VectorField):
    """Workload drift ``mu_i(x) = -c_i tanh(x_i + a_i)``.

    Negative near zero when ``a_i > 0``; every component relaxes towards the
    fixed point ``-a_i``. The flow solves ``sinh(x_i + a_i)`` decaying like
    ``exp(-c_i t)``.
    """

    c: np.ndarray
    a: np.ndarray
    domain: Optional[Box] = None
    has_exact_flow = True

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.c, dtype=float))
        a = np.atleast_1d(np.asarray(self.a, dtype=float))
        c, a = np.broadcast_arrays(c, a)
        if np.any(c <= 0):
            raise ValueError("SoftIdle rates must be positive")
        object.__setattr__(self, "c", c.copy())
        object.__setattr__(self, "a", a.copy())

    @property
    def dim(self) -> int:
        return self.c.shape[0]

    componentwise_monotone = True

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return -self.c * np.tanh(x + self.a)

    def exact_flow(self, x, t):
        y = np.asarray(x, dtype=float) + self.a
        t = np.asarray(t, dtype=float)
        L = _log_abs_sinh(y) - self.c * t
        with np.errstate(over="ignore"):
            small = np.arcsinh(np.exp(np.minimum(L, 20.0)))
            large = L + np.log1p(np.sqrt(1.0 + np.exp(-2.0 * np.maximum(L, 20.0))))
        mag = np.where(L < 20.0, small, large)
        return np.sign(y) * mag - self.a

    def clock(self, x0, x1):
        self._require_1d()
        y0 = np.asarray(x0, dtype=float) + self.a[0]
        y1 = np.asarray(x1, dtype=float) + self.a[0]
        return -(_log_abs_sinh(y1) - _log_abs_sinh(y0)) / self.c[0]

    def to_dict(self):
        return {
            "type": "soft_idle",
            "c": self.c.tolist(),
            "a": self.a.tolist(),
            "domain": _domain_dict(self.domain),
        }


def field_from_dict(spec: dict) -> VectorField:
    """Build a field from its JSON-style description."""
    kind = spec["type"]
    dom = spec.get("domain")
    domain = None if dom is None else Box(dom["lower"], dom["upper"])
    if kind == "constant":
        return Constant(spec["c"], domain=domain)
    if kind == "stress_drift":
        return StressDrift(spec["rho"], domain=domain)
    if kind == "affine":
        return Affine(spec["A"], spec.get("b"), domain=domain)
    if kind == "soft_idle":
        return SoftIdle(spec["c"], spec["a"], domain=domain)
    raise ValueError(f"unknown field type {kind!r}")


@dataclass
class FlowResult:
    endpoint: np.ndarray
    exited_domain: bool
    steps_used: int


_GL_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _gauss_legendre(m: int):
    if m not in _GL_CACHE:
        _GL_CACHE[m] = np.polynomial.legendre.leggauss(m)
    return _GL_CACHE[m]


def evaluate_field(field: VectorField, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if not np.all(field.in_domain(x)):
        raise DomainError(f"point {x} lies outside the field domain")
    return field(x)


def rk4_step(field: Callable, x: np.ndarray, h) -> np.ndarray:
    """One classical Runge-Kutta step; ``h`` may be a scalar or per-row array."""
    h = np.asarray(h, dtype=float)
    if h.ndim == 1 and x.ndim == 2:
        h = h[:, None]
    k1 = field(x)
    k2 = field(x + 0.5 * h * k1)
    k3 = field(x + 0.5 * h * k2)
    k4 = field(x + h * k3)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4_flow(field: VectorField, x, t, step: float = 1e-2) -> np.ndarray:
    """Fixed-step RK4 approximation of ``q(x, t)``; batched over rows of ``x``.

    Each row uses ``ceil(|t| / step)`` equal substeps, so the result is a smooth
    function of ``x`` for fixed ``t``.
    """
    x = np.array(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    t = np.asarray(t, dtype=float)
    if t.ndim == 2:
        t = t[:, 0]
    t = np.broadcast_to(t, X.shape[:1]).copy()
    nsteps = np.ceil(np.abs(t) / step).astype(np.int64)
    h = np.where(nsteps > 0, t / np.maximum(nsteps, 1), 0.0)
    for k in range(int(nsteps.max(initial=0))):
        rows = np.flatnonzero(nsteps > k)
        X[rows] = rk4_step(field, X[rows], h[rows])
    if not np.all(np.isfinite(X)):
        raise StepError("non-finite state during RK4 integration")
    return X[0] if single else X


def flow_map(field: VectorField, x, t, step: float = 1e-2, method: str = "auto") -> np.ndarray:
    """``q(x, t)`` by closed form when available (``method='auto'``) or RK4."""
    if method not in ("auto", "exact", "rk4"):
        raise ValueError(f"unknown flow method {method!r}")
    if method != "rk4" and field.has_exact_flow:
        x = np.asarray(x, dtype=float)
        t = np.asarray(t, dtype=float)
        if t.ndim == 1 and x.ndim == 2:
            t = t[:, None]
        return field.exact_flow(x, t)
    if method == "exact":
        raise NotImplementedError(f"{type(field).__name__} has no closed-form flow")
    return rk4_flow(field, x, t, step)


def integrate_flow(field: VectorField, x, t: float, step: float = 1e-2, tol: float = 1e-10) -> FlowResult:
    """Integrate the flow from ``x`` for time ``t`` (negative = backward) with RK4.

    If the path leaves a box domain the exit point is localized by bisection
    to within ``tol`` in time and returned with ``exited_domain=True``.
    """
    x = np.asarray(x, dtype=float)
    if not field.in_domain(x):
        raise DomainError(f"start point {x} lies outside the field domain")
    n = int(math.ceil(abs(t) / step))
    if n == 0:
        return FlowResult(x.copy(), False, 0)
    h = t / n
    cur = x.copy()
    for k in range(n):
        nxt = rk4_step(field, cur, h)
        if not np.all(np.isfinite(nxt)):
            raise StepError(f"non-finite state after {k + 1} steps")
        if not field.in_domain(nxt):
            lo, hi = 0.0, abs(h)
            sgn = math.copysign(1.0, h)
            while hi - lo > tol:
                mid = 0.5 * (lo + hi)
                if field.in_domain(rk4_step(field, cur, sgn * mid)):
                    lo = mid
                else:
                    hi = mid
            exit_pt = field.domain.closest(rk4_step(field, cur, sgn * lo))
            return FlowResult(exit_pt, True, k + 1)
        cur = nxt
    return FlowResult(cur, False, n)


def flow_jacobian(field: VectorField, x, t: float, h: float = 1e-5, step: float = 1e-2) -> np.ndarray:
    """Central-difference approximation of ``dq(x, t)/dx`` (RK4 flow)."""
    x = np.asarray(x, dtype=float)
    d = x.shape[0]
    pts = np.concatenate([x + h * np.eye(d), x - h * np.eye(d)])
    out = rk4_flow(field, pts, t, step)
    return ((out[:d] - out[d:]) / (2.0 * h)).T


def locate_sign_changes(
    field: VectorField,
    signed: Callable[[np.ndarray], np.ndarray],
    starts,
    durations,
    step: float = 1e-2,
    tol: float = 1e-10,
    method: str = "auto",
):
    """Find every sign change of ``signed`` along many flow pieces at once.

    Piece ``i`` is the integral curve from ``starts[i]`` for time
    ``durations[i]``. Sign changes are bracketed between consecutive points of
    a fixed grid of spacing ``step`` and refined by bisection to ``tol``.

    Returns ``(piece, offset, location, side)`` arrays: the piece index, time
    since the piece start, the localized point and the sign of ``signed``
    before the change.
    """
    X = np.array(np.atleast_2d(starts), dtype=float)
    dur = np.asarray(durations, dtype=float).reshape(-1)
    n, d = X.shape

    def advance(pts, h):
        if method != "rk4" and field.has_exact_flow:
            return field.exact_flow(pts, h[:, None])
        return rk4_step(field, pts, h)

    sprev = np.sign(signed(X))
    elapsed = np.zeros(n)
    active = np.flatnonzero(dur > 0)
    b_idx, b_t, b_x, b_s, b_h = [], [], [], [], []
    while active.size:
        h = np.minimum(step, dur[active] - elapsed[active])
        Xa = X[active]
        Xn = advance(Xa, h)
        if not np.all(np.isfinite(Xn)):
            raise StepError("non-finite state while scanning for crossings")
        sn = np.sign(signed(Xn))
        sp = sprev[active]
        change = (sp != 0) & (sn != sp)
        if np.any(change):
            b_idx.append(active[change])
            b_t.append(elapsed[active][change])
            b_x.append(Xa[change])
            b_s.append(sp[change])
            b_h.append(h[change])
        new_sign = np.where(sn != 0, sn, -sp)
        sprev[active] = np.where(sp == 0, sn, new_sign)
        X[active] = Xn
        elapsed[active] += h
        active = active[elapsed[active] < dur[active] - 1e-15 * np.maximum(1.0, dur[active])]

    if not b_idx:
        return np.zeros(0, dtype=np.int64), np.zeros(0), np.zeros((0, d)), np.zeros(0)
    idx = np.concatenate(b_idx)
    t_left = np.concatenate(b_t)
    x_left = np.concatenate(b_x)
    side = np.concatenate(b_s)
    hi = np.concatenate(b_h)
    lo = np.zeros_like(hi)
    while np.max(hi - lo) > tol:
        mid = 0.5 * (lo + hi)
        same = np.sign(signed(advance(x_left, mid))) == side
        lo = np.where(same, mid, lo)
        hi = np.where(same, hi, mid)
    s = 0.5 * (lo + hi)
    loc = advance(x_left, s)
    order = np.lexsort((t_left + s, idx))
    return idx[order], (t_left + s)[order], loc[order], side[order]


def hitting_time(
    field: VectorField,
    x,
    surface,
    t_max: float,
    tol: float = 1e-10,
    step: float = 1e-2,
    floor: float = 1e-6,
    method: str = "rk4",
) -> Optional[float]:
    """First time in ``(0, t_max]`` at which the flow from ``x`` meets ``surface``.

    Returns None when no sign change of the surface's signed function is seen.
    Warns with :class:`GrazingWarning` when ``|<n, mu>|`` at the hit is below
    ``floor``.
    """
    x = np.asarray(x, dtype=float)
    if not field.in_domain(x):
        raise DomainError(f"point {x} lies outside the field domain")
    idx, off, loc, _ = locate_sign_changes(
        field, surface.signed_value, x[None, :], [t_max], step=step, tol=tol, method=method
    )
    if idx.size == 0:
        return None
    hit = loc[0]
    margin = abs(float(np.dot(surface.normal(hit), field(hit))))
    if margin < floor:
        warnings.warn(f"grazing hit at {hit}: |<n, mu>| = {margin:.3g}", GrazingWarning, stacklevel=2)
    return float(off[0])
