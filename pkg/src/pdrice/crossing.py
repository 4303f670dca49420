"""Continuous crossings of a surface and the estimators built on them.

Crossings are sign changes of the surface's signed function along flow
pieces of a trajectory. A piece runs between consecutive nontrivial jumps, so
a crossing that coincides with a trivial jump is kept while the discontinuous
passage at a nontrivial jump is never seen.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import GrazingWarning, InsufficientData, ResolutionError, TooFewEvents
from .flow import VectorField, flow_map, locate_sign_changes
from .pdmp import Trajectory
from .surface import PushedForward, Surface, parallel_surface

Region = Optional[Callable[[np.ndarray], np.ndarray]]


def _in_region(B: Region, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if B is None:
        return np.ones(x.shape[:-1], dtype=bool)
    return np.asarray(B(x), dtype=bool)


@dataclass(eq=False)
class CrossingSet:
    """Continuous crossings of one surface by one trajectory.

    ``directions`` is the sign of ``<n, mu>`` at each crossing and
    ``segments`` the index of the flow segment (jump interval) holding it.
    """

    times: np.ndarray
    locations: np.ndarray
    directions: np.ndarray
    segments: np.ndarray
    horizon: float
    surface_id: str = ""
    trajectory_id: str = ""
    n_outside_window: int = 0
    n_grazing: int = 0
    n_at_jumps: int = 0

    @property
    def n_events(self) -> int:
        return int(self.times.shape[0])

    @property
    def dim(self) -> int:
        return int(self.locations.shape[1])

    def restricted(self, B: Region) -> "CrossingSet":
        keep = _in_region(B, self.locations)
        return CrossingSet(self.times[keep], self.locations[keep], self.directions[keep], self.segments[keep],
                           self.horizon, self.surface_id, self.trajectory_id, self.n_outside_window,
                           self.n_grazing, self.n_at_jumps)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["s"] + [f"x{i + 1}" for i in range(self.dim)] + ["direction"])
            for s, x, dr in zip(self.times, self.locations, self.directions):
                w.writerow([repr(float(s)), *[repr(float(v)) for v in x], int(dr)])


def _unwrap_pushed(surface: Surface):
    shift = 0.0
    field_ = None
    while isinstance(surface, PushedForward):
        if field_ is not None and surface.field is not field_:
            raise ValueError("nested parallel surfaces must share one field")
        field_ = surface.field
        shift += surface.u
        surface = surface.base
    return surface, shift


def _candidate_pieces(field: VectorField, surface: Surface, starts, durations, step, method):
    if not field.componentwise_monotone:
        return np.ones(starts.shape[0], dtype=bool)
    ends = flow_map(field, starts, durations[:, None], step=step, method=method)
    return surface.may_cross_box(np.minimum(starts, ends), np.maximum(starts, ends))


def _crossings_along(field, surface, starts, durations, step, tol, method):
    """Sign changes of ``surface`` along many pieces, pre-filtered when possible."""
    cand = np.flatnonzero(_candidate_pieces(field, surface, starts, durations, step, method) & (durations > 0))
    if cand.size == 0:
        d = starts.shape[1]
        return np.zeros(0, dtype=np.int64), np.zeros(0), np.zeros((0, d)), np.zeros(0)
    idx, off, loc, side = locate_sign_changes(
        field, surface.signed_value, starts[cand], durations[cand], step=step, tol=tol, method=method
    )
    return cand[idx], off, loc, side


def detect_crossings(traj: Trajectory, surface: Surface, field: Optional[VectorField] = None,
                     step: float = 1e-2, tol: float = 1e-10, method: str = "auto",
                     floor: float = 1e-6, trajectory_id: str = "") -> CrossingSet:
    """All continuous crossings of ``surface`` along ``traj`` inside its window.

    Parallel surfaces are handled by pulling every flow piece back through the
    flow and detecting crossings of the base surface, then pushing the
    locations forward again.
    """
    field = traj.field if field is None else field
    t0, t1, x0, _ = traj.flow_pieces()
    dur = t1 - t0
    base, shift = _unwrap_pushed(surface)
    starts = x0 if shift == 0.0 else flow_map(field, x0, -shift, step=step, method=method)
    idx, off, loc, side = _crossings_along(field, base, starts, dur, step, tol, method)

    at_jump = off >= dur[idx] - tol
    n_at_jumps = int(np.sum(at_jump & (t1[idx] < traj.horizon)))
    keep = ~at_jump
    idx, off, loc, side = idx[keep], off[keep], loc[keep], side[keep]

    inside = base.in_window(loc) if loc.shape[0] else np.zeros(0, dtype=bool)
    n_outside = int(np.sum(~inside))
    idx, off, loc, side = idx[inside], off[inside], loc[inside], side[inside]

    n_grazing = 0
    if loc.shape[0]:
        margin = np.abs(np.sum(base.normal(loc) * field(loc), axis=-1))
        n_grazing = int(np.sum(margin < floor))
        if n_grazing:
            warnings.warn(f"{n_grazing} crossings of {surface.describe()} with |<n, mu>| below {floor:g}",
                          GrazingWarning, stacklevel=2)
    if shift != 0.0 and loc.shape[0]:
        loc = flow_map(field, loc, shift, step=step, method=method)
    times = t0[idx] + off
    segments = np.searchsorted(traj.jump_times, times, side="right")
    # the signed function goes from `side` to -side, so it increases iff side < 0
    directions = (-side).astype(np.int8)
    return CrossingSet(times, loc.reshape(-1, traj.dim), directions, segments, traj.horizon,
                       surface.describe(), trajectory_id, n_outside, n_grazing, n_at_jumps)


def return_time_bound(surface: Surface, field: VectorField, samples: int = 64, t_max: float = 50.0,
                      step: float = 1e-2, lift: float = 1e-7) -> float:
    """Smallest observed return time of the flow to ``surface`` from on-surface points.

    Points are lifted ``lift`` time units along the flow first so that the start
    is strictly off the surface. Returns ``inf`` when no sample returns within
    ``t_max``.
    """
    lo, hi = surface.param_window()
    k = len(lo)
    n_side = max(2, int(round(samples ** (1.0 / k)))) if k else 1
    if k:
        axes = [lo[i] + (np.arange(n_side) + 0.5) * (hi[i] - lo[i]) / n_side for i in range(k)]
        w = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, k)
    else:
        w = np.zeros((1, 0))
    pts = flow_map(field, surface.point(w), lift, step=step)
    idx, off, _, _ = locate_sign_changes(field, surface.signed_value, pts, np.full(pts.shape[0], t_max), step=step)
    if idx.size == 0:
        return math.inf
    first = np.full(pts.shape[0], np.inf)
    np.minimum.at(first, idx, off)
    return float(np.min(first) + lift)


# -- intensity estimates -----------------------------------------------------------


@dataclass
class IntensityEstimate:
    value: float
    std_error: float
    n_events: int
    horizon: float
    region: str = "all"
    n_batches: int = 0

    def to_dict(self):
        return {
            "value": self.value,
            "std_error": self.std_error,
            "n_events": self.n_events,
            "horizon": self.horizon,
            "region": self.region,
            "n_batches": self.n_batches,
        }


def ratio_estimate(sums, lengths):
    """``sum(sums) / sum(lengths)`` with its batch-means standard error."""
    sums = np.asarray(sums, dtype=float)
    lengths = np.asarray(lengths, dtype=float)
    k = sums.shape[0]
    total = float(lengths.sum())
    value = float(sums.sum()) / total
    if k < 2:
        return value, float("nan")
    resid = sums - value * lengths
    se = math.sqrt(float(np.sum(resid**2)) / (k * (k - 1))) / (total / k)
    return value, se


def batch_sums(times, weights, horizon: float, n_splits: int):
    """Sum ``weights`` over ``n_splits`` equal sub-intervals of ``[0, horizon]``."""
    times = np.asarray(times, dtype=float)
    b = np.minimum((times / horizon * n_splits).astype(np.int64), n_splits - 1)
    out = np.zeros(n_splits)
    np.add.at(out, b, np.broadcast_to(np.asarray(weights, dtype=float), times.shape))
    return out, np.full(n_splits, horizon / n_splits)


def _batched(per_set, horizons, n_batches):
    """Batch sums and lengths: one per set when there are enough sets, otherwise time splits.

    ``per_set`` holds ``(times, weights)`` pairs.
    """
    R = len(per_set)
    if R >= n_batches:
        sums = np.array([float(np.sum(w)) for _, w in per_set])
        return sums, np.asarray(horizons, dtype=float)
    k = int(math.ceil(n_batches / R))
    s, l = zip(*(batch_sums(t, w, h, k) for (t, w), h in zip(per_set, horizons)))
    return np.concatenate(s), np.concatenate(l)


def estimate_nu_c(sets: Sequence[CrossingSet], B: Region = None, n_batches: int = 20,
                  region: str = "") -> IntensityEstimate:
    """Crossings per unit time landing in ``B`` with a batch-means standard error."""
    if isinstance(sets, CrossingSet):
        sets = [sets]
    if len(sets) == 0:
        raise ValueError("need at least one crossing set")
    per_set = []
    n = 0
    for cs in sets:
        m = _in_region(B, cs.locations) if cs.n_events else np.zeros(0, dtype=bool)
        per_set.append((cs.times[m], np.ones(int(m.sum()))))
        n += int(m.sum())
    horizons = [cs.horizon for cs in sets]
    sums, lengths = _batched(per_set, horizons, n_batches)
    value, se = ratio_estimate(sums, lengths)
    return IntensityEstimate(value, se, n, float(np.sum(horizons)), region or ("all" if B is None else "B"), len(sums))


# -- Kac and coarea ----------------------------------------------------------------


def _band_overlap(fa, fb, u, delta):
    lo = np.minimum(fa, fb)
    hi = np.maximum(fa, fb)
    return np.clip(np.minimum(hi, u + delta) - np.maximum(lo, u - delta), 0.0, None)


def kac_count(t, f, u: float, delta: float, check: bool = True) -> float:
    """Kac's band count ``(1/2 delta) int |f'| 1{|f - u| < delta} dt`` for sampled ``f``.

    ``f`` is taken piecewise linear between the samples, so on every cell the
    integral is the length of the cell's range inside the band.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    f = np.asarray(f, dtype=float)
    fa, fb = f[:-1], f[1:]
    ov = _band_overlap(fa, fb, u, delta)
    if check:
        near = (np.maximum(fa, fb) > u - delta) & (np.minimum(fa, fb) < u + delta)
        if np.any(np.abs(fb - fa)[near] >= delta / 2):
            raise ResolutionError("grid too coarse: f changes by at least delta/2 within a cell near the band")
    return float(np.sum(ov)) / (2.0 * delta)


def kac_estimate(traj: Trajectory, observable: Callable[[np.ndarray], np.ndarray], u: float, delta: float,
                 dt: float = 1e-3, step: float = 1e-2, method: str = "auto") -> float:
    """Kac band count along the flow segments of ``traj``, per unit time."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    t_start, t_end, x_start = traj.segments()
    dur = t_end - t_start
    n_cells = np.maximum(np.ceil(dur / dt).astype(np.int64), 1)
    total = 0.0
    # chunk over segments to bound memory
    bounds = np.concatenate([[0], np.cumsum(n_cells + 1)])
    chunk = 1 << 21
    lo = 0
    while lo < dur.size:
        hi = int(np.searchsorted(bounds, bounds[lo] + chunk, side="right")) - 1
        hi = max(hi, lo + 1)
        counts = n_cells[lo:hi] + 1
        seg = np.repeat(np.arange(lo, hi), counts)
        first = np.repeat(np.cumsum(counts) - counts, counts)
        j = np.arange(seg.size) - first
        offs = dur[seg] * j / n_cells[seg]
        pts = flow_map(traj.field, x_start[seg], offs[:, None], step=step, method=method)
        f = np.asarray(observable(pts), dtype=float).reshape(-1)
        same = seg[1:] == seg[:-1]
        fa, fb = f[:-1][same], f[1:][same]
        near = (np.maximum(fa, fb) > u - delta) & (np.minimum(fa, fb) < u + delta)
        if np.any(np.abs(fb - fa)[near] >= delta / 2):
            raise ResolutionError("dt too coarse for delta: observable changes by delta/2 within one cell")
        total += float(np.sum(_band_overlap(fa, fb, u, delta)))
        lo = hi
    return total / (2.0 * delta) / traj.horizon


BUILTIN_FUNCTIONS = {
    "identity": (lambda t: np.asarray(t, dtype=float), lambda t: np.ones_like(np.asarray(t, dtype=float))),
    "sine": (lambda t: np.sin(2 * np.pi * np.asarray(t, dtype=float)),
             lambda t: 2 * np.pi * np.cos(2 * np.pi * np.asarray(t, dtype=float))),
}


def coarea_check(f, g: Optional[Callable] = None, n_grid: int = 200_001, n_levels: int = 20_000):
    """Both sides of the one-dimensional coarea identity on ``[0, 1]``.

    ``lhs = int g |f'| dt`` (trapezoid on the grid); ``rhs`` sums ``g`` over
    the level set of every level bin centre, with roots linearly interpolated,
    times the bin width.
    """
    if isinstance(f, str):
        f, fprime = BUILTIN_FUNCTIONS[f]
    else:
        fprime = None
    g = (lambda t: np.ones_like(t)) if g is None else g
    t = np.linspace(0.0, 1.0, n_grid)
    ft = f(t)
    gt = np.asarray(g(t), dtype=float)
    slope = np.abs(fprime(t)) if fprime is not None else np.abs(np.gradient(ft, t))
    lhs = float(np.trapezoid(gt * slope, t))

    fmin, fmax = float(ft.min()), float(ft.max())
    if fmax == fmin:
        return lhs, 0.0
    width = (fmax - fmin) / n_levels
    levels = fmin + (np.arange(n_levels) + 0.5) * width
    fa, fb = ft[:-1], ft[1:]
    lo = np.minimum(fa, fb)
    hi = np.maximum(fa, fb)
    first = np.searchsorted(levels, lo, side="left")
    last = np.searchsorted(levels, hi, side="left")
    counts = last - first
    cell = np.repeat(np.arange(fa.size), counts)
    start = np.repeat(np.cumsum(counts) - counts, counts)
    lev = levels[np.repeat(first, counts) + np.arange(cell.size) - start]
    frac = (lev - fa[cell]) / (fb[cell] - fa[cell])
    roots = t[cell] + frac * (t[cell + 1] - t[cell])
    rhs = float(np.sum(np.asarray(g(roots), dtype=float))) * width
    return lhs, rhs


# -- Palm measures -----------------------------------------------------------------


@dataclass(eq=False)
class PalmJumpMeasure:
    """Empirical measure of ``(x_before, x_after)`` over nontrivial jumps.

    Every jump carries weight ``1 / total_horizon``.
    """

    before: np.ndarray
    after: np.ndarray
    total_horizon: float
    n_jumps: int
    rep_counts: np.ndarray = field(default_factory=lambda: np.zeros(0))
    rep_horizons: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def weight(self) -> float:
        return 1.0 / self.total_horizon

    @property
    def mass(self) -> float:
        return self.before.shape[0] / self.total_horizon

    @property
    def jump_rate(self) -> float:
        """Empirical intensity of all jumps, trivial ones included."""
        return self.n_jumps / self.total_horizon

    def mass_se(self) -> float:
        return ratio_estimate(self.rep_counts, self.rep_horizons)[1]


def palm_jump_measure(trajs: Sequence[Trajectory]) -> PalmJumpMeasure:
    if isinstance(trajs, Trajectory):
        trajs = [trajs]
    if len(trajs) == 0:
        raise ValueError("need at least one trajectory")
    before, after, counts = [], [], []
    for tr in trajs:
        m = tr.nontrivial
        before.append(tr.x_before[m])
        after.append(tr.x_after[m])
        counts.append(int(m.sum()))
    horizons = np.array([tr.horizon for tr in trajs], dtype=float)
    return PalmJumpMeasure(np.concatenate(before), np.concatenate(after), float(horizons.sum()),
                           int(sum(tr.n_jumps for tr in trajs)), np.asarray(counts, dtype=float), horizons)


def check_jump_condition(palm: PalmJumpMeasure, surface: Surface, eps: float):
    """Masses of jumps landing in / departing from the ``eps``-shell of ``surface``.

    A jump lands in the shell when it ends inside and starts outside, and
    departs when it starts inside and ends outside.
    """
    if eps < 0:
        raise ValueError("shell width must be nonnegative")
    if eps == 0 or palm.before.shape[0] == 0:
        return 0.0, 0.0
    sb = np.abs(surface.signed_value(palm.before)) < eps
    sa = np.abs(surface.signed_value(palm.after)) < eps
    sb &= surface.in_window(palm.before)
    sa &= surface.in_window(palm.after)
    into = float(np.sum(sa & ~sb)) * palm.weight
    outof = float(np.sum(sb & ~sa)) * palm.weight
    return into, outof


@dataclass
class ShellFit:
    slope: float
    intercept: float
    r2: float
    vanishes: bool

    def to_dict(self):
        return {"slope": self.slope, "intercept": self.intercept, "r2": self.r2, "vanishes": self.vanishes}


@dataclass
class JumpConditionReport:
    eps: list
    into: list
    outof: list
    into_fit: ShellFit
    outof_fit: ShellFit

    @property
    def passed(self) -> bool:
        return self.into_fit.vanishes or self.outof_fit.vanishes

    def to_dict(self):
        return {
            "eps": self.eps,
            "into": self.into,
            "outof": self.outof,
            "into_fit": self.into_fit.to_dict(),
            "outof_fit": self.outof_fit.to_dict(),
            "passed": self.passed,
        }


def _shell_fit(eps, mass, r2_min=0.95, intercept_frac=0.1) -> ShellFit:
    e = np.asarray(eps, dtype=float)
    y = np.asarray(mass, dtype=float)
    if np.all(y == 0):
        return ShellFit(0.0, 0.0, 1.0, True)
    slope, intercept = np.polyfit(e, y, 1)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    ss_res = float(np.sum((y - (slope * e + intercept)) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 0.0
    vanishes = bool(slope > 0 and r2 > r2_min and abs(intercept) <= intercept_frac * y[np.argmax(e)])
    return ShellFit(float(slope), float(intercept), float(r2), vanishes)


def jump_condition_diagnostic(palm: PalmJumpMeasure, surface: Surface,
                              eps_list=(0.1, 0.05, 0.025)) -> JumpConditionReport:
    """Fit shell masses linearly in ``eps``; a side passes when it vanishes linearly."""
    into, outof = zip(*(check_jump_condition(palm, surface, e) for e in eps_list))
    return JumpConditionReport(list(eps_list), list(into), list(outof),
                               _shell_fit(eps_list, into), _shell_fit(eps_list, outof))


def _param_bins(surface: Surface, n_bins):
    lo, hi = surface.param_window()
    k = len(lo)
    n = np.broadcast_to(np.asarray(n_bins), (k,)) if k else np.zeros(0, dtype=int)
    return [np.linspace(lo[i], hi[i], int(n[i]) + 1) for i in range(k)]


def _bin_index(edges, w):
    """Flat bin index of parameter points; edge points are clipped inward."""
    if not edges:
        return np.zeros(w.shape[0], dtype=np.int64), 1
    idx = np.zeros(w.shape[0], dtype=np.int64)
    size = 1
    for i, e in enumerate(edges):
        b = np.clip(np.searchsorted(e, w[:, i], side="right") - 1, 0, e.size - 2)
        idx = idx * (e.size - 1) + b
        size *= e.size - 1
    return idx, size


def _bin_centres(edges):
    if not edges:
        return np.zeros((1, 0))
    mids = [0.5 * (e[1:] + e[:-1]) for e in edges]
    return np.stack(np.meshgrid(*mids, indexing="ij"), axis=-1).reshape(-1, len(edges))


def campbell_check(sets: Sequence[CrossingSet], surface: Surface, g: Callable, n_bins=32):
    """Both sides of the refined Campbell identity on a parameter-bin mesh.

    ``lhs`` averages ``g`` over the crossing points per unit time; ``rhs``
    integrates ``g`` against the binned intensity estimate, using the value of
    ``g`` at each bin centre.
    """
    if isinstance(sets, CrossingSet):
        sets = [sets]
    H = float(sum(cs.horizon for cs in sets))
    locs = np.concatenate([cs.locations for cs in sets]) if sets else np.zeros((0, surface.dim))
    if locs.shape[0] == 0:
        return 0.0, 0.0
    lhs = float(np.sum(np.asarray(g(locs), dtype=float))) / H
    edges = _param_bins(surface, n_bins)
    idx, size = _bin_index(edges, surface.param_of(locs).reshape(locs.shape[0], -1))
    counts = np.bincount(idx, minlength=size)
    centres = surface.point(_bin_centres(edges))
    rhs = float(np.sum(np.asarray(g(centres), dtype=float) * counts)) / H
    return lhs, rhs


@dataclass
class PalmHistogram:
    """Fractions of crossings per parameter bin with multinomial standard errors."""

    edges: list
    probs: np.ndarray
    std_errors: np.ndarray
    counts: np.ndarray
    n_events: int
    n_outside: int

    def to_dict(self):
        return {
            "edges": [np.asarray(e).tolist() for e in self.edges],
            "probs": self.probs.tolist(),
            "std_errors": self.std_errors.tolist(),
            "counts": self.counts.tolist(),
            "n_events": self.n_events,
            "n_outside": self.n_outside,
        }


def palm_crossing_distribution(sets: Sequence[CrossingSet], surface: Surface, edges,
                               min_events: int = 100) -> PalmHistogram:
    """Distribution of the crossing location over bins of the surface parameters.

    ``edges`` is one edge array per parameter coordinate (may end in ``inf``).
    Fractions are relative to all crossings, so mass outside the bins shows
    up as ``n_outside``.
    """
    if isinstance(sets, CrossingSet):
        sets = [sets]
    locs = np.concatenate([cs.locations for cs in sets])
    n = locs.shape[0]
    if n < min_events:
        raise TooFewEvents(f"{n} crossings, need at least {min_events}")
    edges = [np.asarray(e, dtype=float) for e in edges]
    w = surface.param_of(locs).reshape(n, -1)
    if edges:
        inside = np.ones(n, dtype=bool)
        for i, e in enumerate(edges):
            inside &= (w[:, i] >= e[0]) & (w[:, i] < e[-1])
        idx, size = _bin_index(edges, w[inside])
        counts = np.bincount(idx, minlength=size)
    else:
        inside = np.ones(n, dtype=bool)
        counts = np.array([n])
    p = counts / n
    se = np.sqrt(p * (1 - p) / n)
    return PalmHistogram(edges, p, se, counts, n, int(n - inside.sum()))


# -- tube identity -----------------------------------------------------------------


@dataclass
class TubeResult:
    v: float
    lhs: float
    lhs_se: float
    rhs: float
    rhs_se: float
    z: float
    paired_z: float
    u_nodes: list = field(default_factory=list)
    nu_u: list = field(default_factory=list)

    def to_dict(self):
        return {k: (float(v) if isinstance(v, (float, np.floating)) else v) for k, v in self.__dict__.items()}


def _merge_intervals(piece, a, e):
    """Union of intervals grouped by piece.

    All intervals come from equal-length windows clipped to the piece, so
    sorting by start also sorts the ends and a new group starts exactly where
    an interval begins after the previous end.
    """
    if a.size == 0:
        return piece, a, e
    order = np.lexsort((a, piece))
    piece, a, e = piece[order], a[order], e[order]
    new = np.ones(a.size, dtype=bool)
    new[1:] = (piece[1:] != piece[:-1]) | (a[1:] > e[:-1])
    gid = np.cumsum(new) - 1
    starts = a[new]
    ends = np.zeros(starts.size)
    np.maximum.at(ends, gid, e)
    return piece[new], starts, ends


def _tube_occupation(traj: Trajectory, base: Surface, field: VectorField, v: float, B: Region,
                     step: float, tol: float, method: str, b_dt: float):
    """Time intervals (as ``(times, lengths)``) during which ``X_t`` lies in the tube over ``(0, v)``.

    ``X_t`` is in the tube when its backward flow meets ``base`` (inside the
    window) within time ``(0, v)``. Along a flow piece starting at ``x0`` this
    is read off the crossings of ``base`` by the extended curve ``q(x0, s)``,
    ``s in [-v, duration]``.
    """
    t0, t1, x0, _ = traj.flow_pieces()
    dur = t1 - t0
    ext = flow_map(field, x0, -v, step=step, method=method)
    idx, off, loc, _ = _crossings_along(field, base, ext, dur + v, step, tol, method)
    ok = base.in_window(loc) if loc.shape[0] else np.zeros(0, dtype=bool)
    idx, c = idx[ok], off[ok] - v
    a = np.clip(c, 0.0, dur[idx])
    e = np.clip(c + v, 0.0, dur[idx])
    pos = e > a
    piece, a, e = _merge_intervals(idx[pos], a[pos], e[pos])
    if B is None:
        return t0[piece] + 0.5 * (a + e), e - a
    m = np.maximum(np.ceil((e - a) / b_dt).astype(np.int64), 1)
    rep = np.repeat(np.arange(a.size), m)
    j = np.arange(rep.size) - np.repeat(np.cumsum(m) - m, m)
    h = (e - a)[rep] / m[rep]
    s = a[rep] + (j + 0.5) * h
    pts = flow_map(field, x0[piece[rep]], s[:, None], step=step, method=method)
    inB = _in_region(B, pts)
    return t0[piece[rep]] + s, h * inB


def tube_identity_check(trajs: Sequence[Trajectory], base: Surface, field: Optional[VectorField] = None,
                        v: float = 0.1, n_u: int = 11, B: Region = None, step: float = 1e-2,
                        tol: float = 1e-10, method: str = "auto", n_batches: int = 20,
                        b_dt: float = 1e-3) -> TubeResult:
    """Integrated crossing intensity of the parallel surfaces vs tube occupation.

    ``lhs`` is the trapezoid rule over ``n_u`` equally spaced ``u`` in
    ``[0, v]`` of the crossing intensity of ``S_u`` in ``B``; ``rhs`` is the
    fraction of time the path spends in the tube ``S_(0,v)`` and in ``B``.
    """
    if isinstance(trajs, Trajectory):
        trajs = [trajs]
    field = trajs[0].field if field is None else field
    if v == 0:
        return TubeResult(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    if v < 0:
        raise ValueError("v must be nonnegative")
    parallel_surface(base, field, v, step=step, method=method)
    us = np.linspace(0.0, v, n_u)
    wts = np.full(n_u, us[1] - us[0] if n_u > 1 else v)
    wts[0] *= 0.5
    wts[-1] *= 0.5
    horizons = [tr.horizon for tr in trajs]
    lhs_sets, rhs_sets, nu_counts = [], [], np.zeros(n_u)
    for tr in trajs:
        times, weights = [], []
        for i, u in enumerate(us):
            surf = base if u == 0 else PushedForward(base, field, float(u), step=step, method=method)
            cs = detect_crossings(tr, surf, field, step=step, tol=tol, method=method)
            if B is not None:
                cs = cs.restricted(B)
            times.append(cs.times)
            weights.append(np.full(cs.n_events, wts[i]))
            nu_counts[i] += cs.n_events
        lhs_sets.append((np.concatenate(times), np.concatenate(weights)))
        rhs_sets.append(_tube_occupation(tr, base, field, v, B, step, tol, method, b_dt))
    ls, ll = _batched(lhs_sets, horizons, n_batches)
    rs, rl = _batched(rhs_sets, horizons, n_batches)
    lhs, lhs_se = ratio_estimate(ls, ll)
    rhs, rhs_se = ratio_estimate(rs, rl)
    z = (lhs - rhs) / math.hypot(lhs_se, rhs_se) if math.hypot(lhs_se, rhs_se) > 0 else 0.0 if lhs == rhs else math.inf
    diff, dse = ratio_estimate(ls - rs, ll)
    paired = diff / dse if dse > 0 else (0.0 if diff == 0 else math.inf)
    total = float(np.sum(horizons))
    return TubeResult(float(v), lhs, lhs_se, rhs, rhs_se, float(z), float(paired), us.tolist(),
                      (nu_counts / total).tolist())
