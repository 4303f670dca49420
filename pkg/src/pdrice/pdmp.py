"""Simulation of stationary piecewise-deterministic processes.

A path follows the drift between jump times and jumps according to its model.
Poisson-driven models (shot noise, the soft-idle workload network) draw their
jump clocks up front; the stress-release network uses Ogata thinning against an
explicit per-window majorant.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .errors import DomainError, ExplosionGuard, InsufficientData, MajorantViolation
from .flow import Affine, Constant, SoftIdle, StressDrift, VectorField, flow_map

__all__ = [
    "Exponential",
    "Deterministic",
    "ShotNoise",
    "StressReleaseNetwork",
    "SoftIdleNetwork",
    "OnSurfaceJumps",
    "Trajectory",
    "replication_rng",
    "simulate",
    "state_at",
    "thinning_majorant",
    "stationarity_diagnostic",
    "StationarityReport",
    "model_from_dict",
]


# -- marks -------------------------------------------------------------------------


@dataclass(frozen=True)
class Exponential:
    """Exponential marks with rate ``eta`` (mean ``1/eta``)."""

    rate: float

    def __post_init__(self):
        if self.rate <= 0:
            raise ValueError("exponential rate must be positive")

    @property
    def mean(self) -> float:
        return 1.0 / self.rate

    def sample(self, rng: np.random.Generator, size=None):
        return rng.exponential(1.0 / self.rate, size)

    def to_dict(self):
        return {"type": "exponential", "rate": self.rate}


@dataclass(frozen=True)
class Deterministic:
    """Every mark equals ``value``."""

    value: float

    @property
    def mean(self) -> float:
        return self.value

    def sample(self, rng: np.random.Generator, size=None):
        if size is None:
            return float(self.value)
        return np.full(size, float(self.value))

    def to_dict(self):
        return {"type": "deterministic", "value": self.value}


Mark = Union[Exponential, Deterministic]


def mark_from_dict(spec: dict) -> Mark:
    if spec["type"] == "exponential":
        return Exponential(float(spec["rate"]))
    if spec["type"] == "deterministic":
        return Deterministic(float(spec["value"]))
    raise ValueError(f"unknown mark distribution {spec['type']!r}")


def _per_axis(value, d, name):
    arr = np.broadcast_to(np.asarray(value, dtype=float), (d,)).copy()
    if arr.shape != (d,):
        raise ValueError(f"{name} must have {d} components")
    return arr


def _marks_per_axis(jump, d) -> tuple:
    if isinstance(jump, (list, tuple)):
        if len(jump) != d:
            raise ValueError(f"need {d} mark distributions")
        return tuple(jump)
    return (jump,) * d


# -- models ------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ShotNoise:
    """Linear decay ``dx/dt = -x`` with independent upward jumps per axis.

    Axis ``i`` receives jumps at Poisson rate ``rate[i]`` with marks from
    ``jump[i]``; with exponential marks of rate ``eta_i`` the stationary law of
    axis ``i`` is Gamma(shape ``rate[i]``, rate ``eta_i``).
    """

    dim: int
    rate: np.ndarray
    jump: Union[Mark, Sequence[Mark]] = Exponential(1.0)
    name: str = "shot_noise"

    def __post_init__(self):
        rate = _per_axis(self.rate, self.dim, "rate")
        if np.any(rate <= 0):
            raise ValueError("rates must be positive")
        object.__setattr__(self, "rate", rate)
        object.__setattr__(self, "jump", _marks_per_axis(self.jump, self.dim))
        object.__setattr__(self, "_field", Affine(-np.eye(self.dim), np.zeros(self.dim)))

    @property
    def field(self) -> VectorField:
        return self._field

    def default_start(self) -> np.ndarray:
        return np.zeros(self.dim)

    def nominal_rate(self) -> float:
        return float(self.rate.sum())

    def draw_jumps(self, rng, n):
        """Increments of ``n`` jumps (state independent)."""
        p = self.rate / self.rate.sum()
        axes = rng.choice(self.dim, size=n, p=p) if self.dim > 1 else np.zeros(n, dtype=np.int64)
        marks = np.empty(n)
        for i in range(self.dim):
            sel = axes == i
            marks[sel] = self.jump[i].sample(rng, int(sel.sum()))
        inc = np.zeros((n, self.dim))
        inc[np.arange(n), axes] = marks
        return axes, marks, inc

    def to_dict(self):
        return {
            "type": "shot_noise",
            "dim": self.dim,
            "rate": self.rate.tolist(),
            "jump": [m.to_dict() for m in self.jump],
        }


@dataclass(frozen=True, eq=False)
class SoftIdleNetwork:
    """Workload network with the C^1 soft-idle drift.

    Customers arrive at Poisson rate ``rate`` and join node ``j`` with
    probability ``node_probs[j]``, bringing Exponential(``eta``) work. The work
    is added to node ``j`` and, through the sub-stochastic ``routing`` matrix,
    the fraction ``routing[j, i]`` of it to downstream node ``i``.
    """

    c: np.ndarray
    a: np.ndarray
    rate: float
    node_probs: np.ndarray
    eta: float = 1.0
    routing: Optional[np.ndarray] = None
    name: str = "soft_idle_network"

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.c, dtype=float))
        d = c.shape[0]
        a = _per_axis(self.a, d, "a")
        probs = _per_axis(self.node_probs, d, "node_probs")
        if not math.isclose(probs.sum(), 1.0, rel_tol=1e-12) or np.any(probs < 0):
            raise ValueError("node_probs must be a probability vector")
        R = np.zeros((d, d)) if self.routing is None else np.asarray(self.routing, dtype=float)
        if R.shape != (d, d) or np.any(R < 0) or np.any(R.sum(axis=1) > 1 + 1e-12):
            raise ValueError("routing must be a nonnegative sub-stochastic matrix")
        if self.rate <= 0 or self.eta <= 0:
            raise ValueError("rate and eta must be positive")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "node_probs", probs)
        object.__setattr__(self, "routing", R)
        object.__setattr__(self, "_field", SoftIdle(c, a))

    @property
    def dim(self) -> int:
        return self.c.shape[0]

    @property
    def field(self) -> VectorField:
        return self._field

    def default_start(self) -> np.ndarray:
        return np.zeros(self.dim)

    def nominal_rate(self) -> float:
        return float(self.rate)

    def draw_jumps(self, rng, n):
        nodes = rng.choice(self.dim, size=n, p=self.node_probs)
        marks = rng.exponential(1.0 / self.eta, n)
        spread = np.eye(self.dim) + self.routing
        return nodes, marks, marks[:, None] * spread[nodes]

    def to_dict(self):
        return {
            "type": "soft_idle_network",
            "c": self.c.tolist(),
            "a": self.a.tolist(),
            "rate": self.rate,
            "node_probs": self.node_probs.tolist(),
            "eta": self.eta,
            "routing": self.routing.tolist(),
        }


@dataclass(frozen=True, eq=False)
class OnSurfaceJumps:
    """Unit upward drift whose jumps start or end exactly on ``{x = level}``.

    A deliberately non-compliant diagnostic model in d=1. Poisson events at
    rate ``rate`` move a state below ``level`` onto the level and a state at or
    above it to 0; reaching the level from below by the drift forces an
    immediate jump to 0. Jumps therefore both land on and depart from the
    level with positive intensity.
    """

    rate: float
    level: float = 1.0
    name: str = "on_surface_jumps"

    def __post_init__(self):
        if self.rate <= 0 or self.level <= 0:
            raise ValueError("rate and level must be positive")
        object.__setattr__(self, "_field", Constant(np.ones(1)))

    @property
    def dim(self) -> int:
        return 1

    @property
    def field(self) -> VectorField:
        return self._field

    def default_start(self) -> np.ndarray:
        return np.zeros(1)

    def nominal_rate(self) -> float:
        return float(self.rate + 1.0 / self.level)

    def to_dict(self):
        return {"type": "on_surface_jumps", "rate": self.rate, "level": self.level}


@dataclass(frozen=True, eq=False)
class StressReleaseNetwork:
    """Multinode stress release: constant loading ``rho``, risk ``exp(beta_j x_j)``.

    When node ``j`` releases a mark ``xi``, node ``i`` changes by
    ``transfer[i, j] * xi``; the diagonal must be -1 (self release).
    """

    rho: np.ndarray
    beta: np.ndarray
    jump: Union[Mark, Sequence[Mark]] = Exponential(1.0)
    transfer: Optional[np.ndarray] = None
    name: str = "stress_release"

    def __post_init__(self):
        rho = np.atleast_1d(np.asarray(self.rho, dtype=float))
        d = rho.shape[0]
        beta = _per_axis(self.beta, d, "beta")
        if np.any(beta <= 0):
            raise ValueError("risk exponents beta must be positive")
        r = -np.eye(d) if self.transfer is None else np.asarray(self.transfer, dtype=float)
        if r.shape != (d, d) or not np.allclose(np.diag(r), -1.0):
            raise ValueError("transfer matrix must be d x d with -1 on the diagonal")
        marks = _marks_per_axis(self.jump, d)
        for m in marks:
            if isinstance(m, Deterministic) and m.value <= 0:
                raise ValueError("stress release marks must be positive")
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "transfer", r)
        object.__setattr__(self, "jump", marks)
        object.__setattr__(self, "_field", StressDrift(rho))

    @property
    def dim(self) -> int:
        return self.rho.shape[0]

    @property
    def field(self) -> VectorField:
        return self._field

    def risk(self, x) -> np.ndarray:
        return np.exp(self.beta * np.asarray(x, dtype=float))

    def default_start(self) -> np.ndarray:
        # per-node balance exp(beta_j x_j) E[xi_j] = rho_j, ignoring transfers
        means = np.array([m.mean for m in self.jump])
        load = np.maximum(self.rho, 0.0)
        with np.errstate(divide="ignore"):
            x = np.where(load > 0, np.log(np.where(load > 0, load, 1.0) / means) / self.beta, 0.0)
        return x

    def nominal_rate(self) -> float:
        means = np.array([m.mean for m in self.jump])
        return float(max(np.sum(np.maximum(self.rho, 0.0) / means), 1e-3))

    def to_dict(self):
        return {
            "type": "stress_release",
            "rho": self.rho.tolist(),
            "beta": self.beta.tolist(),
            "jump": [m.to_dict() for m in self.jump],
            "transfer": self.transfer.tolist(),
        }


Model = Union[ShotNoise, SoftIdleNetwork, StressReleaseNetwork, OnSurfaceJumps]


def model_from_dict(spec: dict) -> Model:
    kind = spec["type"]

    def marks(value):
        if isinstance(value, list):
            return tuple(mark_from_dict(v) for v in value)
        return mark_from_dict(value)

    if kind == "shot_noise":
        return ShotNoise(int(spec["dim"]), spec["rate"], marks(spec.get("jump", {"type": "exponential", "rate": 1.0})))
    if kind == "stress_release":
        return StressReleaseNetwork(
            spec["rho"], spec["beta"], marks(spec.get("jump", {"type": "exponential", "rate": 1.0})), spec.get("transfer")
        )
    if kind == "soft_idle_network":
        return SoftIdleNetwork(
            spec["c"], spec["a"], float(spec["rate"]), spec["node_probs"], float(spec.get("eta", 1.0)), spec.get("routing")
        )
    if kind == "on_surface_jumps":
        return OnSurfaceJumps(float(spec["rate"]), float(spec.get("level", 1.0)))
    raise ValueError(f"unknown model type {kind!r}")


# -- trajectories ------------------------------------------------------------------


@dataclass(eq=False)
class Trajectory:
    """One simulated path on ``[0, horizon]``.

    Jump ``n`` happens at ``jump_times[n]`` and moves the state from
    ``x_before[n]`` to ``x_after[n]``; between jumps the path follows ``field``.
    ``nodes`` holds the releasing/receiving node (-1 if not applicable).
    """

    field: VectorField
    start_state: np.ndarray
    jump_times: np.ndarray
    x_before: np.ndarray
    x_after: np.ndarray
    horizon: float
    nodes: Optional[np.ndarray] = None
    marks: Optional[np.ndarray] = None
    seed: dict = field(default_factory=dict)
    model_name: str = ""

    def __post_init__(self):
        self.start_state = np.atleast_1d(np.asarray(self.start_state, dtype=float))
        d = self.start_state.shape[0]
        self.jump_times = np.asarray(self.jump_times, dtype=float).reshape(-1)
        n = self.jump_times.shape[0]
        self.x_before = np.asarray(self.x_before, dtype=float).reshape(n, d)
        self.x_after = np.asarray(self.x_after, dtype=float).reshape(n, d)
        if self.nodes is None:
            self.nodes = np.full(n, -1, dtype=np.int64)
        if self.marks is None:
            self.marks = np.linalg.norm(self.x_after - self.x_before, axis=1)

    @classmethod
    def from_jumps(cls, field: VectorField, start, jump_times, horizon: float, increments=None,
                   landings=None, step: float = 1e-2, method: str = "auto") -> "Trajectory":
        """Assemble a path from jump times and either increments or landing points."""
        x = np.atleast_1d(np.asarray(start, dtype=float)).copy()
        times = np.asarray(jump_times, dtype=float).reshape(-1)
        d = x.shape[0]
        before = np.empty((times.size, d))
        after = np.empty((times.size, d))
        prev = 0.0
        for k, t in enumerate(times):
            x = flow_map(field, x, t - prev, step=step, method=method)
            before[k] = x
            if landings is not None:
                x = np.atleast_1d(np.asarray(landings[k], dtype=float)).copy()
            else:
                x = x + np.atleast_1d(np.asarray(increments[k], dtype=float))
            after[k] = x
            prev = t
        return cls(field, np.atleast_1d(np.asarray(start, dtype=float)), times, before, after, float(horizon))

    @property
    def dim(self) -> int:
        return self.start_state.shape[0]

    @property
    def n_jumps(self) -> int:
        return int(self.jump_times.shape[0])

    @property
    def jump_rate(self) -> float:
        """Empirical intensity of the jump process."""
        return self.n_jumps / self.horizon

    @property
    def nontrivial(self) -> np.ndarray:
        return np.any(self.x_after != self.x_before, axis=1)

    def segments(self):
        """Flow segments as arrays ``(t_start, t_end, x_start)``."""
        t_start = np.concatenate([[0.0], self.jump_times])
        t_end = np.concatenate([self.jump_times, [self.horizon]])
        x_start = np.concatenate([self.start_state[None, :], self.x_after])
        return t_start, t_end, x_start

    def flow_pieces(self):
        """Segments merged across trivial jumps, where the path is continuous.

        Returns ``(t_start, t_end, x_start, segment_index)`` with the index of
        the first segment of each piece.
        """
        t_start, t_end, x_start = self.segments()
        keep = np.concatenate([[True], self.nontrivial])
        first = np.flatnonzero(keep)
        last_end = np.concatenate([first[1:] - 1, [t_end.size - 1]])
        return t_start[first], t_end[last_end], x_start[first], first

    def truncated(self, t_end: float) -> "Trajectory":
        """The same path restricted to ``[0, t_end]``."""
        if not 0 < t_end <= self.horizon:
            raise ValueError("t_end must lie in (0, horizon]")
        m = self.jump_times <= t_end
        return Trajectory(self.field, self.start_state, self.jump_times[m], self.x_before[m], self.x_after[m],
                          float(t_end), self.nodes[m], self.marks[m], dict(self.seed), self.model_name)

    def end_state(self, step: float = 1e-2, method: str = "auto") -> np.ndarray:
        return state_at(self, self.horizon, step=step, method=method)

    def check_structure(self, step: float = 1e-2, atol: float = 1e-8) -> None:
        """Verify jump ordering and that every segment abuts the next jump."""
        if np.any(np.diff(self.jump_times) <= 0):
            raise AssertionError("jump times are not strictly increasing")
        if self.n_jumps and (self.jump_times[0] <= 0 or self.jump_times[-1] > self.horizon):
            raise AssertionError("jump times outside (0, horizon]")
        t_start, t_end, x_start = self.segments()
        if self.n_jumps:
            ends = flow_map(self.field, x_start[:-1], t_end[:-1] - t_start[:-1], step=step)
            err = np.max(np.abs(ends - self.x_before))
            if err > atol * (1.0 + np.max(np.abs(self.x_before))):
                raise AssertionError(f"segments do not abut jumps (max gap {err:.3g})")

    def to_csv(self, path, step: float = 1e-2) -> None:
        """Write ``t, x1..xd, event_type`` rows (start, pre_jump, jump, end)."""
        d = self.dim
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"x{i + 1}" for i in range(d)] + ["event_type"])
            w.writerow([0.0, *self.start_state.tolist(), "start"])
            for t, xb, xa in zip(self.jump_times, self.x_before, self.x_after):
                w.writerow([t, *xb.tolist(), "pre_jump"])
                w.writerow([t, *xa.tolist(), "jump"])
            w.writerow([self.horizon, *self.end_state(step).tolist(), "end"])


def replication_rng(master_seed: int, index: int) -> np.random.Generator:
    """Independent counter-based stream for replication ``index``."""
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(index),))
    return np.random.Generator(np.random.Philox(ss))


def _as_rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed, {"kind": "generator"}
    if isinstance(seed, (tuple, list)):
        return replication_rng(seed[0], seed[1]), {"master": int(seed[0]), "replication": int(seed[1])}
    return replication_rng(int(seed), 0), {"master": int(seed), "replication": 0}


def _poisson_times(rng, rate, t_end, max_jumps):
    mean = rate * t_end
    chunks, total, t0 = [], 0, 0.0
    while True:
        size = int(mean - rate * t0 + 6 * math.sqrt(max(mean - rate * t0, 1.0)) + 16)
        gaps = rng.exponential(1.0 / rate, size)
        times = t0 + np.cumsum(gaps)
        inside = times[times <= t_end]
        chunks.append(inside)
        total += inside.size
        if total > max_jumps:
            raise ExplosionGuard(f"more than {max_jumps} jumps before t={t_end}")
        if inside.size < size:
            break
        t0 = float(times[-1])
    return np.concatenate(chunks)


def _decay_path(x0, times, inc):
    """Linear decay ``dx/dt = -x`` with additive jumps, vectorized in blocks.

    Inside a block starting at ``T_s`` the state before jump ``n`` is
    ``exp(-(T_n - T_s)) * (x_s + sum_{k<n} inc_k exp(T_k - T_s))``; blocks span at
    most 200 time units so the exponentials stay finite.
    """
    n, d = inc.shape
    before = np.empty((n, d))
    after = np.empty((n, d))
    x = np.array(x0, dtype=float)
    t_ref = 0.0
    lo = 0
    while lo < n:
        hi = int(np.searchsorted(times, t_ref + 200.0, side="right"))
        hi = max(hi, lo + 1)
        rel = times[lo:hi] - t_ref
        grow = np.exp(rel)[:, None]
        acc = np.cumsum(inc[lo:hi] * grow, axis=0)
        decay = np.exp(-rel)[:, None]
        after[lo:hi] = decay * (x + acc)
        before[lo:hi] = after[lo:hi] - inc[lo:hi]
        x = after[hi - 1].copy()
        t_ref = float(times[hi - 1])
        lo = hi
    return before, after


def _simulate_poisson(model, t_total, rng, x0, step, method, max_jumps):
    times = _poisson_times(rng, model.nominal_rate(), t_total, max_jumps)
    n = times.size
    nodes, marks, inc = model.draw_jumps(rng, n)
    field_ = model.field
    if isinstance(model, ShotNoise) and method != "rk4":
        before, after = _decay_path(x0, times, inc)
        return times, before, after, nodes, marks
    d = x0.shape[0]
    before = np.empty((n, d))
    after = np.empty((n, d))
    x = x0.copy()
    prev = 0.0
    for k in range(n):
        x = flow_map(field_, x, times[k] - prev, step=step, method=method)
        before[k] = x
        x = x + inc[k]
        after[k] = x
        prev = times[k]
    return times, before, after, nodes, marks


def _simulate_on_surface(model: OnSurfaceJumps, t_total, rng, x0, max_jumps):
    draws = _Uniforms(rng)
    level = model.level
    t, x = 0.0, float(x0[0])
    times, before, after, nodes = [], [], [], []
    while True:
        e = draws.exponential() / model.rate
        forced = x < level and level - x <= e
        dt = level - x if forced else e
        if t + dt > t_total:
            break
        t += dt
        x += dt
        times.append(t)
        before.append(level if forced else x)
        if forced or x >= level:
            x = 0.0
            nodes.append(1 if forced else 0)
        else:
            x = level
            nodes.append(0)
        after.append(x)
        if len(times) > max_jumps:
            raise ExplosionGuard(f"more than {max_jumps} jumps before t={t:.6g}")
    n = len(times)
    return (np.asarray(times, dtype=float), np.asarray(before, dtype=float).reshape(n, 1),
            np.asarray(after, dtype=float).reshape(n, 1), np.asarray(nodes, dtype=np.int64), np.zeros(n))


class _Uniforms:
    """Buffered scalar draws; per-call Generator overhead dominates otherwise."""

    def __init__(self, rng, size=4096):
        self.rng = rng
        self.size = size
        self._u = rng.random(size)
        self._e = rng.standard_exponential(size)
        self._iu = 0
        self._ie = 0

    def uniform(self):
        if self._iu == self.size:
            self._u = self.rng.random(self.size)
            self._iu = 0
        self._iu += 1
        return float(self._u[self._iu - 1])

    def exponential(self):
        if self._ie == self.size:
            self._e = self.rng.standard_exponential(self.size)
            self._ie = 0
        self._ie += 1
        return float(self._e[self._ie - 1])


def thinning_majorant(model: StressReleaseNetwork, x, delta: float) -> float:
    """Upper bound on ``sum_j psi_j`` along the drift from ``x`` over ``delta``."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    x = np.asarray(x, dtype=float)
    return float(np.sum(np.exp(model.beta * (x + np.maximum(model.rho, 0.0) * delta))))


def _simulate_thinning(model: StressReleaseNetwork, t_total, rng, x0, step, method, max_jumps, window):
    draws = _Uniforms(rng)
    d = model.dim
    field_ = model.field
    marks_dist = model.jump
    r = model.transfer
    t = 0.0
    x = x0.copy()
    times, before, after, nodes, marks = [], [], [], [], []
    while t < t_total:
        delta = min(window, t_total - t)
        bound = thinning_majorant(model, x, delta)
        e = draws.exponential() / bound
        if e >= delta:
            x = flow_map(field_, x, delta, step=step, method=method)
            t += delta
            continue
        t += e
        x = flow_map(field_, x, e, step=step, method=method)
        psi = model.risk(x)
        lam = float(psi.sum())
        if lam > bound * (1.0 + 1e-9):
            raise MajorantViolation(f"intensity {lam:.6g} above majorant {bound:.6g} at t={t:.6g}, x={x}")
        if draws.uniform() * bound <= lam:
            j = int(np.searchsorted(np.cumsum(psi), draws.uniform() * lam, side="right"))
            j = min(j, d - 1)
            xi = float(marks_dist[j].sample(rng))
            times.append(t)
            before.append(x.copy())
            x = x + xi * r[:, j]
            after.append(x.copy())
            nodes.append(j)
            marks.append(xi)
            if len(times) > max_jumps:
                raise ExplosionGuard(f"more than {max_jumps} jumps before t={t:.6g}")
    n = len(times)
    return (
        np.asarray(times, dtype=float),
        np.asarray(before, dtype=float).reshape(n, d),
        np.asarray(after, dtype=float).reshape(n, d),
        np.asarray(nodes, dtype=np.int64),
        np.asarray(marks, dtype=float),
    )


def default_burn_in(model, horizon: float) -> float:
    return max(horizon / 10.0, 1000.0 / model.nominal_rate())


def simulate(model: Model, horizon: float, burn_in: Optional[float] = None, seed=0,
             step: float = 1e-2, max_jumps: int = 10**7, method: str = "auto",
             start=None, thinning_window: Optional[float] = None) -> Trajectory:
    """Simulate ``burn_in + horizon`` time units and keep the last ``horizon``.

    ``seed`` is an int (replication 0 of that master seed), a
    ``(master, replication)`` pair, or a ``numpy.random.Generator``. The kept
    path is re-timed to start at 0.
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    if burn_in is None:
        burn_in = default_burn_in(model, horizon)
    if burn_in < 0:
        raise ValueError("burn_in must be nonnegative")
    rng, seed_record = _as_rng(seed)
    x0 = model.default_start() if start is None else np.atleast_1d(np.asarray(start, dtype=float))
    field_ = model.field
    if not field_.in_domain(x0):
        raise DomainError(f"start state {x0} outside the field domain")
    t_total = burn_in + horizon
    if isinstance(model, StressReleaseNetwork):
        window = 50.0 * step if thinning_window is None else thinning_window
        times, before, after, nodes, marks = _simulate_thinning(model, t_total, rng, x0, step, method, max_jumps, window)
    elif isinstance(model, OnSurfaceJumps):
        times, before, after, nodes, marks = _simulate_on_surface(model, t_total, rng, x0, max_jumps)
    else:
        times, before, after, nodes, marks = _simulate_poisson(model, t_total, rng, x0, step, method, max_jumps)
    if after.size and not np.all(field_.in_domain(after)):
        bad = int(np.flatnonzero(~field_.in_domain(after))[0])
        raise DomainError(f"jump {bad} at t={times[bad]:.6g} lands outside the field domain: {after[bad]}")
    keep = times > burn_in
    first = int(np.argmax(keep)) if keep.any() else times.size
    if first > 0:
        prev_t, prev_x = times[first - 1], after[first - 1]
    else:
        prev_t, prev_x = 0.0, x0
    start_state = flow_map(field_, prev_x, burn_in - prev_t, step=step, method=method)
    seed_record = dict(seed_record, burn_in=burn_in, step=step)
    return Trajectory(
        field=field_,
        start_state=start_state,
        jump_times=times[keep] - burn_in,
        x_before=before[keep],
        x_after=after[keep],
        horizon=float(horizon),
        nodes=nodes[keep],
        marks=marks[keep],
        seed=seed_record,
        model_name=model.name,
    )


def state_at(traj: Trajectory, t, field: Optional[VectorField] = None, step: float = 1e-2,
             method: str = "auto") -> np.ndarray:
    """``X_t`` (right-continuous at jump times) for scalar or array ``t``."""
    field = traj.field if field is None else field
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0) or np.any(t_arr > traj.horizon):
        raise ValueError("t outside [0, horizon]")
    t_start, _, x_start = traj.segments()
    seg = np.searchsorted(traj.jump_times, t_arr, side="right")
    flat = np.atleast_1d(seg)
    out = flow_map(field, x_start[flat], (np.atleast_1d(t_arr) - t_start[flat]), step=step, method=method)
    return out[0] if t_arr.ndim == 0 else out.reshape(t_arr.shape + (traj.dim,))


def sample_path(traj: Trajectory, dt: float, step: float = 1e-2, method: str = "auto",
                t0: float = 0.0, t1: Optional[float] = None):
    """Path values at midpoints of a grid of spacing ``dt`` on ``[t0, t1]``.

    Each sample stands for ``dt`` time units of the occupation measure.
    """
    t1 = traj.horizon if t1 is None else t1
    n = int(math.floor((t1 - t0) / dt))
    if n <= 0:
        return np.zeros(0), np.zeros((0, traj.dim))
    times = t0 + (np.arange(n) + 0.5) * dt
    out = np.empty((n, traj.dim))
    chunk = 1 << 20
    for lo in range(0, n, chunk):
        out[lo:lo + chunk] = state_at(traj, times[lo:lo + chunk], step=step, method=method)
    return times, out


@dataclass
class StationarityReport:
    half_moments: list
    moment_z: np.ndarray
    half_jump_rates: tuple
    jump_rate_z: float
    flagged: bool
    insufficient_data: bool
    notes: list = field(default_factory=list)

    def to_dict(self):
        return {
            "half_moments": [np.asarray(m).tolist() for m in self.half_moments],
            "moment_z": np.nan_to_num(self.moment_z, nan=0.0).tolist(),
            "half_jump_rates": list(self.half_jump_rates),
            "jump_rate_z": float(np.nan_to_num(self.jump_rate_z)),
            "flagged": bool(self.flagged),
            "insufficient_data": bool(self.insufficient_data),
            "notes": list(self.notes),
        }


def stationarity_diagnostic(traj: Trajectory, k_moments: int = 2, n_batches: int = 10,
                            dt: Optional[float] = None, threshold: float = 4.0,
                            min_jumps: int = 20) -> StationarityReport:
    """Compare the two halves of a path: moments of each component and jump rates.

    Standard errors come from ``n_batches`` batch means inside each half.
    """
    H = traj.horizon
    dt = dt if dt is not None else min(0.1, H / (2 * n_batches * 200))
    _, xs = sample_path(traj, dt)
    if xs.shape[0] < 2 * n_batches:
        raise InsufficientData("path too short for the stationarity diagnostic")
    half = xs.shape[0] // 2
    halves = [xs[:half], xs[half:2 * half]]
    means, ses = [], []
    for part in halves:
        batches = np.array_split(part, n_batches)
        stats = []
        for b in batches:
            row = [b.mean(axis=0)]
            for k in range(2, k_moments + 1):
                row.append(np.mean((b - part.mean(axis=0)) ** k, axis=0))
            stats.append(np.stack(row))
        stats = np.stack(stats)
        means.append(stats.mean(axis=0))
        ses.append(stats.std(axis=0, ddof=1) / math.sqrt(n_batches))
    with np.errstate(divide="ignore", invalid="ignore"):
        z = (means[1] - means[0]) / np.sqrt(ses[0] ** 2 + ses[1] ** 2)
        z = np.where((ses[0] == 0) & (ses[1] == 0) & (means[1] != means[0]), np.inf, z)
    cut = H / 2.0
    n1 = int(np.sum(traj.jump_times <= cut))
    n2 = traj.n_jumps - n1
    r1, r2 = n1 / cut, n2 / cut
    with np.errstate(divide="ignore", invalid="ignore"):
        zr = (r2 - r1) / math.sqrt((n1 + n2) / cut**2) if n1 + n2 > 0 else float("nan")
    notes = []
    insufficient = traj.n_jumps < min_jumps
    if insufficient:
        notes.append(f"only {traj.n_jumps} jumps: confidence intervals are too wide to judge stationarity")
    zs = np.append(np.abs(z[np.isfinite(z) | np.isinf(z)]), abs(zr) if np.isfinite(zr) else 0.0)
    flagged = bool(np.any(zs > threshold))
    if flagged:
        notes.append("halves differ by more than the threshold")
    return StationarityReport([m.tolist() for m in means], z, (r1, r2), zr, flagged, insufficient, notes)
