"""Stationary densities: the Gamma law of linear shot noise and occupation estimates.

Occupation estimates are time averages along simulated paths. Histograms in
d=1 use exact time-in-bin from the flow clock; everything else samples the
path on a regular time grid, each sample standing for ``dt`` time units.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .errors import InsufficientData, OutOfBox
from .flow import Box, flow_map
from .pdmp import Exponential, ShotNoise, Trajectory, sample_path

__all__ = [
    "GammaShotNoise",
    "Histogram",
    "KDE",
    "evaluate",
    "fit_occupation",
    "silverman_bandwidth",
    "bin_probabilities",
    "chi2_distance",
    "export_grid",
]


@dataclass(frozen=True, eq=False)
class GammaShotNoise:
    """Product of Gamma(shape ``lam[i]``, rate ``eta[i]``) laws across axes."""

    lam: np.ndarray
    eta: np.ndarray

    def __post_init__(self):
        lam = np.atleast_1d(np.asarray(self.lam, dtype=float))
        eta = np.broadcast_to(np.asarray(self.eta, dtype=float), lam.shape).copy()
        if np.any(lam <= 0) or np.any(eta <= 0):
            raise ValueError("shape and rate must be positive")
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "eta", eta)

    @classmethod
    def from_model(cls, model: ShotNoise) -> "GammaShotNoise":
        if not all(isinstance(m, Exponential) for m in model.jump):
            raise ValueError("the Gamma law needs exponential marks")
        return cls(model.rate, np.array([m.rate for m in model.jump]))

    @property
    def dim(self) -> int:
        return self.lam.shape[0]

    @property
    def id(self) -> str:
        return f"gamma(lam={self.lam.tolist()}, eta={self.eta.tolist()})"

    def marginal(self, axis: int):
        return stats.gamma(a=self.lam[axis], scale=1.0 / self.eta[axis])

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.ones(x.shape[:-1])
        for i in range(self.dim):
            out = out * self.marginal(i).pdf(x[..., i])
        return out

    def box_mass(self, lower, upper) -> float:
        lower = np.broadcast_to(np.asarray(lower, dtype=float), (self.dim,))
        upper = np.broadcast_to(np.asarray(upper, dtype=float), (self.dim,))
        m = 1.0
        for i in range(self.dim):
            g = self.marginal(i)
            m *= g.cdf(upper[i]) - g.cdf(lower[i])
        return float(m)

    def to_dict(self):
        return {"type": "gamma_shot_noise", "lam": self.lam.tolist(), "eta": self.eta.tolist()}


@dataclass(eq=False)
class Histogram:
    """Piecewise-constant density: ``counts`` are occupation times per bin."""

    edges: list
    counts: np.ndarray
    total_time: float

    def __post_init__(self):
        self.edges = [np.asarray(e, dtype=float) for e in self.edges]
        self.counts = np.asarray(self.counts, dtype=float)

    @property
    def dim(self) -> int:
        return len(self.edges)

    @property
    def id(self) -> str:
        return f"histogram({'x'.join(str(e.size - 1) for e in self.edges)} bins)"

    @property
    def box(self) -> Box:
        return Box([e[0] for e in self.edges], [e[-1] for e in self.edges])

    def volumes(self) -> np.ndarray:
        widths = [np.diff(e) for e in self.edges]
        return np.prod(np.stack(np.meshgrid(*widths, indexing="ij")), axis=0)

    def densities(self) -> np.ndarray:
        return self.counts / (self.total_time * self.volumes())

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        idx = []
        for i, e in enumerate(self.edges):
            xi = x[..., i]
            if np.any((xi < e[0]) | (xi > e[-1])):
                raise OutOfBox(f"point outside the histogram box along axis {i}")
            idx.append(np.clip(np.searchsorted(e, xi, side="right") - 1, 0, e.size - 2))
        return self.densities()[tuple(idx)]

    def to_dict(self):
        return {"type": "histogram", "edges": [e.tolist() for e in self.edges], "total_time": self.total_time}


def _weighted_quantiles(x, w, qs):
    order = np.argsort(x)
    cw = np.cumsum(w[order])
    return np.interp(np.asarray(qs) * cw[-1], cw, x[order])


def silverman_bandwidth(points, weights=None, scale: float = 0.8) -> np.ndarray:
    """Per-axis Silverman rule ``sigma_i (4 / ((d + 2) n))^(1/(d + 4))`` times ``scale``.

    ``sigma_i`` is the robust spread ``min(std, IQR / 1.349)``, which keeps a
    skewed or spiky marginal from inflating the bandwidth.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n, d = pts.shape
    if n < 2:
        raise InsufficientData("need at least two points for a bandwidth")
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    sigma = np.sqrt(np.cov(pts, rowvar=False, aweights=w).reshape(d, d).diagonal())
    for i in range(d):
        q1, q3 = _weighted_quantiles(pts[:, i], w, [0.25, 0.75])
        if q3 > q1:
            sigma[i] = min(sigma[i], (q3 - q1) / 1.349)
    return scale * sigma * (4.0 / ((d + 2) * n)) ** (1.0 / (d + 4))


@dataclass(eq=False)
class KDE:
    """Gaussian product-kernel estimate from weighted path samples.

    The normaliser is ``total_weight`` (total path time), not the sum of the
    stored weights, so a shell-restricted sample still estimates the full
    stationary density inside the shell. ``groups`` labels the samples by
    replication (or time batch) so the estimate can be split for error bars.
    """

    points: np.ndarray
    weights: np.ndarray
    bandwidth: np.ndarray
    total_weight: float
    box: Optional[Box] = None
    groups: Optional[np.ndarray] = None
    group_totals: Optional[np.ndarray] = None

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.weights = np.asarray(self.weights, dtype=float)
        self.bandwidth = np.broadcast_to(np.asarray(self.bandwidth, dtype=float), (self.points.shape[1],)).copy()
        # sorted by the first coordinate so evaluation can skip far-away samples
        order = np.argsort(self.points[:, 0], kind="stable")
        self.points = self.points[order]
        self.weights = self.weights[order]
        if self.groups is not None:
            self.groups = np.asarray(self.groups)[order]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def id(self) -> str:
        return f"kde(h={np.round(self.bandwidth, 5).tolist()}, n={self.points.shape[0]})"

    def kernel_sums(self, x, chunk: int = 1 << 22) -> np.ndarray:
        """``sum_i w_i K_h(x - p_i)`` for each query point, split by group when grouped."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        h = self.bandwidth
        norm = 1.0 / (np.prod(h) * (2 * np.pi) ** (self.dim / 2))
        n_groups = 1 if self.groups is None else int(self.group_totals.shape[0])
        out = np.zeros((n_groups, x.shape[0]))
        p, w, g = self.points, self.weights, self.groups
        reach = 8.0 * h[0]
        lo = np.searchsorted(p[:, 0], x[:, 0] - reach)
        hi = np.searchsorted(p[:, 0], x[:, 0] + reach)
        for q in range(x.shape[0]):
            a, b = lo[q], hi[q]
            for s in range(a, b, chunk):
                e = min(b, s + chunk)
                z = (p[s:e] - x[q]) / h
                k = w[s:e] * np.exp(-0.5 * np.sum(z * z, axis=1))
                if g is None:
                    out[0, q] += k.sum()
                else:
                    out[:, q] += np.bincount(g[s:e], weights=k, minlength=n_groups)
        return out * norm

    def _check_box(self, x):
        if self.box is not None and not np.all(self.box.closest(x) == x):
            raise OutOfBox("point outside the KDE support box")

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        self._check_box(x)
        flat = x.reshape(-1, self.dim)
        vals = self.kernel_sums(flat).sum(axis=0) / self.total_weight
        return vals.reshape(x.shape[:-1])

    def split(self) -> list:
        """One KDE per group, sharing this bandwidth and normalised by the group's time."""
        if self.groups is None:
            return [self]
        out = []
        for k, tot in enumerate(self.group_totals):
            m = self.groups == k
            out.append(KDE(self.points[m], self.weights[m], self.bandwidth, float(tot), self.box))
        return out

    def to_dict(self):
        return {"type": "kde", "bandwidth": self.bandwidth.tolist(), "n_points": int(self.points.shape[0]),
                "total_weight": self.total_weight}


def evaluate(density, x) -> np.ndarray:
    """Density value(s) at ``x`` (last axis = coordinates)."""
    return density(x)


def _exact_hist_1d(trajs, edges):
    counts = np.zeros(edges.size - 1)
    for tr in trajs:
        t0, t1, x0 = tr.segments()
        xe = flow_map(tr.field, x0, (t1 - t0)[:, None])
        a, b = x0[:, 0], xe[:, 0]
        lo_s, hi_s = np.minimum(a, b), np.maximum(a, b)
        for i in range(edges.size - 1):
            ca = np.clip(a, edges[i], edges[i + 1])
            cb = np.clip(b, edges[i], edges[i + 1])
            hit = (hi_s > edges[i]) & (lo_s < edges[i + 1]) & (ca != cb)
            if np.any(hit):
                counts[i] += float(np.sum(np.abs(tr.field.clock(ca[hit], cb[hit]))))
    return counts


def fit_occupation(trajs: Sequence[Trajectory], box: Box, bins=None, bandwidth=None, kind: str = "histogram",
                   dt: Optional[float] = None, shell=None, scale: float = 0.8, n_groups: int = 20,
                   exact_1d: bool = True):
    """Occupation-measure density estimate over ``box``.

    ``shell`` is an optional ``(surface, width)``: only samples with
    ``|signed_value| < width`` are kept, which is all a Rice evaluation on the
    surface needs. The bandwidth rule always uses the unrestricted sample.
    """
    if isinstance(trajs, Trajectory):
        trajs = [trajs]
    if not trajs or all(tr.horizon <= 0 for tr in trajs):
        raise InsufficientData("no trajectories to fit")
    if all(tr.n_jumps == 0 for tr in trajs):
        raise InsufficientData("trajectories without jumps carry no stationary information")
    d = trajs[0].dim
    total = float(sum(tr.horizon for tr in trajs))
    if kind == "histogram":
        nb = 50 if bins is None else bins
        edges = [np.linspace(box.lower[i], box.upper[i], int(np.broadcast_to(nb, (d,))[i]) + 1) for i in range(d)]
        if d == 1 and exact_1d:
            return Histogram(edges, _exact_hist_1d(trajs, edges[0]), total)
        dt = dt if dt is not None else 1e-2
        counts = np.zeros([e.size - 1 for e in edges])
        for tr in trajs:
            _, xs = sample_path(tr, dt)
            h, _ = np.histogramdd(xs, bins=edges)
            counts += h * dt
        return Histogram(edges, counts, total)
    if kind != "kde":
        raise ValueError(f"unknown estimator {kind!r}")
    dt = dt if dt is not None else 5e-2
    pts, grp, g_tot = [], [], []
    R = len(trajs)
    per = 1 if R >= n_groups else int(math.ceil(n_groups / R))
    all_pts = []
    for r, tr in enumerate(trajs):
        times, xs = sample_path(tr, dt)
        all_pts.append(xs)
        label = r * per + np.minimum((times / tr.horizon * per).astype(np.int64), per - 1)
        keep = box.contains(xs) if box is not None else np.ones(xs.shape[0], dtype=bool)
        if shell is not None:
            surf, width = shell
            keep &= np.abs(surf.signed_value(xs)) < width
        pts.append(xs[keep])
        grp.append(label[keep])
        g_tot.extend([tr.horizon / per] * per)
    if sum(p.shape[0] for p in all_pts) < 2:
        raise InsufficientData("too few path samples")
    if bandwidth is None:
        bandwidth = silverman_bandwidth(np.concatenate(all_pts), scale=scale)
    points = np.concatenate(pts)
    if points.shape[0] == 0:
        raise InsufficientData("no path samples inside the box or shell")
    return KDE(points, np.full(points.shape[0], dt), bandwidth, total, box, np.concatenate(grp), np.asarray(g_tot))


def bin_probabilities(density, edges) -> np.ndarray:
    """Probabilities of histogram cells under ``density`` (exact for Gamma products)."""
    edges = [np.asarray(e, dtype=float) for e in edges]
    if isinstance(density, GammaShotNoise):
        probs = [np.diff(density.marginal(i).cdf(e)) for i, e in enumerate(edges)]
        out = probs[0]
        for p in probs[1:]:
            out = np.multiply.outer(out, p)
        return out
    mids = [0.5 * (e[1:] + e[:-1]) for e in edges]
    grid = np.stack(np.meshgrid(*mids, indexing="ij"), axis=-1)
    widths = [np.diff(e) for e in edges]
    vol = np.prod(np.stack(np.meshgrid(*widths, indexing="ij")), axis=0)
    return density(grid) * vol


def chi2_distance(hist: Histogram, reference) -> float:
    """``sum (p_hat - p)^2 / p`` over cells with positive reference probability."""
    p = bin_probabilities(reference, hist.edges)
    p_hat = hist.counts / hist.total_time
    m = p > 0
    return float(np.sum((p_hat[m] - p[m]) ** 2 / p[m]))


def export_grid(density, path, box: Box, n: int = 100) -> None:
    """Write density values on a regular grid over ``box`` as CSV (``x1..xd, density``)."""
    d = box.lower.shape[0]
    axes = [np.linspace(box.lower[i], box.upper[i], n) for i in range(d)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    vals = density(grid)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i + 1}" for i in range(d)] + ["density"])
        for x, v in zip(grid, vals):
            w.writerow([*x.tolist(), float(v)])
