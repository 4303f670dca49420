"""End-to-end verification runs: simulate, detect, evaluate, compare, report."""
from __future__ import annotations

import json
import math
import platform
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional, Union

import numpy as np
import scipy
from scipy import stats

from .. import __version__
from ..crossing import (
    campbell_check,
    coarea_check,
    detect_crossings,
    estimate_nu_c,
    jump_condition_diagnostic,
    kac_count,
    kac_estimate,
    palm_crossing_distribution,
    palm_jump_measure,
    tube_identity_check,
)
from ..density import GammaShotNoise, fit_occupation, export_grid
from ..errors import ConfigError, InsufficientData, PdriceError
from ..flow import Box
from ..pdmp import ShotNoise, model_from_dict, sample_path, simulate, stationarity_diagnostic
from ..rice import RiceResult, conditional_palm, discrepancy_z, rhs_1d, rhs_general, rhs_grouped, rhs_hyperplane
from ..surface import (
    GraphPatch,
    Hyperplane,
    QuadratureSpec,
    Sphere,
    jacobian_identity_check,
    transversality_margin,
)
from .config import (
    ScenarioConfig,
    load_config,
    median_observable,
    region_from_spec,
    resolve_surface,
    validate,
)

Z_THRESHOLD = 3.0
MIN_CROSSINGS = 100


@dataclass
class VerificationReport:
    data: dict
    trajectories: list = field(default_factory=list, repr=False)
    crossing_sets: dict = field(default_factory=dict, repr=False)

    @property
    def passed(self) -> bool:
        return bool(self.data.get("passed", False))

    @property
    def flags(self) -> list:
        return self.data.get("flags", [])

    def to_json(self) -> str:
        return json.dumps(_jsonable(self.data), indent=2, sort_keys=True)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def _simulate_one(args):
    model_doc, horizon, burn_in, master, r, step = args
    return simulate(model_from_dict(model_doc), horizon, burn_in=burn_in, seed=(master, r), step=step)


def simulate_replications(config: ScenarioConfig, workers: int = 1) -> list:
    """All replications, merged in replication order whatever the worker count."""
    run = config.run
    jobs = [(config.model, float(run["horizon"]), run.get("burn_in"), int(run["seed"]), r, float(run["step"]))
            for r in range(int(run["replications"]))]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_simulate_one, jobs))
    return [_simulate_one(j) for j in jobs]


def _resolve_surfaces(config: ScenarioConfig, trajs):
    spec = config.surface
    level = None
    if spec.get("level") == "median":
        obs = median_observable(spec)
        xs = np.concatenate([sample_path(tr, 0.05)[1] for tr in trajs])
        if xs.shape[0] == 0:
            raise InsufficientData("no path samples to place the median level")
        level = float(np.median(obs(xs)))
    surf = resolve_surface(spec, level)
    surfaces = surf if isinstance(surf, list) else [surf]
    field_ = trajs[0].field
    for s in surfaces:
        margin = transversality_margin(s, field_)
        if not margin > 0:
            raise ConfigError(f"{s.describe()} is tangential to the drift (transversality margin {margin:g})")
    return surfaces, level


def _hyperplane_window(surface: Hyperplane, kde=None):
    if surface.dim == 1:
        return None
    if surface.window is not None:
        return surface.window
    if kde is None:
        raise ConfigError("a hyperplane window is needed for an analytic Rice integral in d > 1")
    rest = [j for j in range(surface.dim) if j != surface.axis]
    pts = kde.points[:, rest]
    h = kde.bandwidth[rest]
    return pts.min(axis=0) - 5 * h, pts.max(axis=0) + 5 * h


def _quad(config) -> QuadratureSpec:
    q = config.estimators.get("quadrature") or {}
    return QuadratureSpec(q.get("rule", "gauss"), int(q.get("order", 32)), int(q.get("panels", 4)))


def _analytic_density(model):
    if not isinstance(model, ShotNoise):
        raise ConfigError("an analytic density is only available for shot-noise models")
    return GammaShotNoise.from_model(model)


def _rice_side(surface, model, trajs, config, B):
    """Rice right-hand side as ``(RiceResult, rhs_se, density)`` for one surface."""
    dens_cfg = config.estimators.get("density") or {"kind": "analytic"}
    kind = dens_cfg.get("kind", "analytic")
    field_ = model.field
    quad = _quad(config)
    if kind == "analytic":
        density = _analytic_density(model)
        if surface.dim == 1:
            value = rhs_1d(surface.level, field_, density) if B is None or B(np.array([[surface.level]]))[0] else 0.0
            return RiceResult(value, 0.0, 0.0, surface.describe(), density.id), 0.0, density
        return rhs_general(surface, field_, density, B, quad), 0.0, density
    if kind != "kde":
        raise ConfigError("no density model configured for the Rice side")
    shell = dens_cfg.get("shell")
    kde = fit_occupation(trajs, None, kind="kde", dt=float(dens_cfg.get("dt", 0.05)),
                         shell=None if shell is None else (surface, float(shell)),
                         scale=float(dens_cfg.get("scale", 0.8)))
    target = surface
    if isinstance(surface, Hyperplane) and surface.dim > 1 and surface.window is None:
        lo, hi = _hyperplane_window(surface, kde)
        target = surface.with_window(lo, hi)
    value, se, _, _ = rhs_grouped(target, field_, kde, B, quad)
    if target.param_dim > 0:
        coarse, _, _, _ = rhs_grouped(target, field_, kde, B, quad.halved())
        qerr = abs(value - coarse)
    else:
        qerr = 0.0
    caveat = "KDE density: window truncation judged from the sample range only"
    return RiceResult(value, qerr, 0.0, target.describe(), kde.id, caveat=caveat), se, kde


def _comparison(name, nu, rice, rhs_se):
    z = discrepancy_z(nu.value, nu.std_error, rice, rhs_se)
    return {
        "name": name,
        "nu_hat": nu.to_dict(),
        "rice": rice.to_dict(),
        "rhs_std_error": rhs_se,
        "z": z,
        "passed": bool(abs(z) < Z_THRESHOLD),
    }


def _chi2_test(counts, probs):
    counts = np.asarray(counts, dtype=float)
    n = counts.sum()
    expected = n * np.asarray(probs, dtype=float)
    m = expected > 0
    stat = float(np.sum((counts[m] - expected[m]) ** 2 / expected[m]))
    df = int(m.sum()) - 1
    return stat, df, float(stats.chi2.sf(stat, df))


def palm_check(sets, surface: Hyperplane, field_, density, edges):
    """Crossing-location histogram against the conditional Palm distribution."""
    hist = palm_crossing_distribution(sets, surface, edges)
    q = conditional_palm(surface.level, surface.axis, field_, density, edges, _hyperplane_window(surface))
    stat, df, p = _chi2_test(hist.counts, q.probs / q.probs.sum())
    return {
        "histogram": hist.to_dict(),
        "q_u": q.probs.tolist(),
        "chi2": stat,
        "df": df,
        "p_value": p,
        "n_bins": int(q.probs.size),
        "passed": bool(p > 0.01 and q.probs.size >= 10),
    }, hist, q


def triggering_probabilities(counts) -> dict:
    """Share of each component surface in the crossings of their union, as exact fractions."""
    total = int(sum(counts))
    if total == 0:
        raise InsufficientData("no crossings of the composite surface")
    fr = [Fraction(int(c), total) for c in counts]
    return {"probabilities": [float(f) for f in fr], "fractions": [f"{f.numerator}/{f.denominator}" for f in fr],
            "sum_is_one": sum(fr) == 1, "n_crossings": total}


def run_scenario(config: Union[str, dict, ScenarioConfig], out_dir=None, replications: Optional[int] = None,
                 seed: Optional[int] = None, horizon: Optional[float] = None, plots: Optional[bool] = None,
                 identities: Optional[bool] = None, workers: int = 1, keep_data: bool = False) -> VerificationReport:
    """Simulate the scenario, compare crossing intensities with their Rice values and write outputs."""
    cfg = config if isinstance(config, ScenarioConfig) else load_config(config)
    cfg = cfg.with_overrides(replications=replications, seed=seed, horizon=horizon)
    problems = validate(cfg)
    if problems:
        raise ConfigError("; ".join(problems))
    out = Path(out_dir) if out_dir is not None else (Path(cfg.outputs["directory"]) if cfg.outputs.get("directory") else None)
    plots = cfg.outputs.get("plots", False) if plots is None else plots
    identities = cfg.estimators.get("identities", False) if identities is None else identities
    report = {
        "scenario": cfg.name,
        "provenance": {
            "config_hash": cfg.hash(),
            "master_seed": int(cfg.run["seed"]),
            "replications": int(cfg.run["replications"]),
            "seeds": [[int(cfg.run["seed"]), r] for r in range(int(cfg.run["replications"]))],
            "versions": {"pdrice": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                         "python": platform.python_version()},
        },
        "run": dict(cfg.run),
        "flags": [],
        "comparisons": [],
    }
    result = VerificationReport(report)
    try:
        _run(cfg, report, result, identities, keep_data)
    except PdriceError as exc:
        report["error"] = f"{type(exc).__name__}: {exc}"
        report["passed"] = False
        if out is not None:
            _write_outputs(out, result, cfg, plots=False)
        raise
    if out is not None:
        _write_outputs(out, result, cfg, plots=plots)
    return result


def _run(cfg, report, result, identities, keep_data):
    model = model_from_dict(cfg.model)
    trajs = simulate_replications(cfg)
    diag = []
    for tr in trajs:
        try:
            diag.append(stationarity_diagnostic(tr).to_dict())
        except InsufficientData as exc:
            diag.append({"flagged": True, "insufficient_data": True, "notes": [str(exc)]})
    report["diagnostics"] = {
        "stationarity": {
            "n_flagged": sum(bool(d["flagged"]) for d in diag),
            "n_insufficient": sum(bool(d["insufficient_data"]) for d in diag),
            "replications": diag,
        },
        "jumps": int(sum(tr.n_jumps for tr in trajs)),
    }
    if any(d["insufficient_data"] for d in diag):
        report["flags"].append("InsufficientData: too few jumps to judge stationarity")

    surfaces, level = _resolve_surfaces(cfg, trajs)
    report["surface"] = {"descriptions": [s.describe() for s in surfaces], "level": level}
    B = region_from_spec(cfg.estimators.get("region"))
    all_sets = {}
    grazing = outside = 0
    for i, s in enumerate(surfaces):
        sets = [detect_crossings(tr, s, step=float(cfg.run["step"]), trajectory_id=f"rep{r}")
                for r, tr in enumerate(trajs)]
        all_sets[i] = sets
        grazing += sum(cs.n_grazing for cs in sets)
        outside += sum(cs.n_outside_window for cs in sets)
    report["diagnostics"].update(grazing=grazing, outside_window=outside)

    densities = {}
    for i, s in enumerate(surfaces):
        sets = all_sets[i]
        nu = estimate_nu_c(sets, region="all")
        if nu.n_events < MIN_CROSSINGS:
            report["flags"].append(f"InsufficientData: only {nu.n_events} crossings of {s.describe()}")
        try:
            rice, rhs_se, dens = _rice_side(s, model, trajs, cfg, None)
        except InsufficientData as exc:
            report["flags"].append(f"InsufficientData: {exc}")
            report["comparisons"].append({"name": s.describe(), "nu_hat": nu.to_dict(), "rice": None,
                                          "z": None, "passed": False})
            continue
        densities[i] = dens
        report["comparisons"].append(_comparison(s.describe(), nu, rice, rhs_se))
        if B is not None:
            nuB = estimate_nu_c(sets, B, region="B")
            riceB, seB, _ = _rice_side(s, model, trajs, cfg, B)
            report["comparisons"].append(_comparison(f"{s.describe()} in B", nuB, riceB, seB))

    if cfg.estimators.get("triggering"):
        counts = [sum(cs.n_events for cs in all_sets[i]) for i in range(len(surfaces))]
        report["triggering"] = triggering_probabilities(counts)

    palm_cfg = cfg.estimators.get("palm")
    if palm_cfg and isinstance(surfaces[0], Hyperplane) and surfaces[0].dim > 1 and 0 in densities:
        entry, hist, q = palm_check(all_sets[0], surfaces[0], model.field, densities[0], palm_cfg["edges"])
        report["palm"] = entry

    if identities:
        report["identities"] = run_identity_suite(cfg, trajs=trajs, surfaces=surfaces, crossing_sets=all_sets)

    checks = [c["passed"] for c in report["comparisons"]]
    if "palm" in report:
        checks.append(report["palm"]["passed"])
    if "triggering" in report:
        checks.append(report["triggering"]["sum_is_one"])
    if "identities" in report:
        checks.extend(v["passed"] for v in report["identities"].values() if "passed" in v)
    report["passed"] = bool(checks) and all(checks) and not report["flags"]
    result.trajectories = trajs if keep_data else trajs[:1]
    result.crossing_sets = all_sets
    result.surfaces = surfaces
    result.densities = densities


def run_identity_suite(config: Union[str, dict, ScenarioConfig], trajs=None, surfaces=None,
                       crossing_sets=None) -> dict:
    """Kac, coarea, Campbell, tube, Jacobian and jump-condition checks for one scenario."""
    cfg = config if isinstance(config, ScenarioConfig) else load_config(config)
    est = cfg.estimators
    step = float(cfg.run["step"])
    if trajs is None:
        trajs = simulate_replications(cfg)
    if surfaces is None:
        surfaces, _ = _resolve_surfaces(cfg, trajs)
    if crossing_sets is None:
        crossing_sets = {i: [detect_crossings(tr, s, step=step) for tr in trajs] for i, s in enumerate(surfaces)}
    field_ = trajs[0].field
    out = {}

    # deterministic identities
    t = np.linspace(0.0, 1.0, 200_001)
    kac_sine = kac_count(t, np.sin(2 * np.pi * t), 0.5, 1e-3)
    out["kac_sine"] = {"value": kac_sine, "expected": 2.0, "passed": abs(kac_sine - 2.0) < 1e-3}
    lhs, rhs = coarea_check("sine")
    out["coarea_sine"] = {"lhs": lhs, "rhs": rhs, "expected": 4.0,
                          "passed": abs(lhs - 4.0) < 1e-2 and abs(rhs - 4.0) < 1e-2}

    s0 = surfaces[0]
    sets0 = crossing_sets[0]
    kac_horizon = min(float(est.get("kac_horizon", 2000.0)), trajs[0].horizon)
    unwindowed = isinstance(s0, Sphere) or (isinstance(s0, Hyperplane) and s0.window is None)
    if unwindowed:
        short = trajs[0].truncated(kac_horizon)
        direct = detect_crossings(short, s0, step=step).n_events / short.horizon
        entries = []
        for delta in est.get("kac_delta", [0.01]):
            k = kac_estimate(short, s0.signed_value, 0.0, float(delta), dt=float(est.get("kac_dt", 5e-4)))
            rel = abs(k - direct) / direct if direct > 0 else abs(k)
            entries.append({"delta": float(delta), "kac": k, "direct": direct, "rel_diff": rel, "passed": rel < 0.02})
        out["kac_vs_count"] = {"entries": entries, "passed": all(e["passed"] for e in entries)}
    else:
        out["kac_vs_count"] = {"skipped": "surface has a finite window; the band count sees crossings outside it",
                               "passed": True}

    lhs, rhs = campbell_check(sets0, s0, lambda x: np.ones(np.shape(x)[:-1]))
    out["campbell_unit"] = {"lhs": lhs, "rhs": rhs, "passed": lhs == rhs}

    palm = palm_jump_measure(trajs)
    jc = jump_condition_diagnostic(palm, s0, tuple(est.get("shell_eps", (0.1, 0.05, 0.025))))
    out["jump_condition"] = jc.to_dict()

    rng = np.random.default_rng(int(cfg.run["seed"]))
    lo, hi = s0.param_window()
    worst = 0.0
    for _ in range(100):
        w = rng.uniform(lo, hi) if len(lo) else np.zeros(0)
        if isinstance(s0, GraphPatch):
            w = lo + (hi - lo) * rng.uniform(0.05, 0.95, size=len(lo))
        u = float(rng.uniform(0.0, 0.1))
        a, b = jacobian_identity_check(s0, field_, w, u, step=step)
        worst = max(worst, abs(a - b))
    out["jacobian"] = {"probes": 100, "max_abs_diff": worst, "passed": worst < 1e-6}

    tube = est.get("tube")
    if tube and s0.dim >= 1:
        entries = []
        for v in tube.get("v", []):
            res = tube_identity_check(trajs, s0, field_, float(v), int(tube.get("n_u", 6)), step=step)
            d = res.to_dict()
            d["passed"] = bool(abs(res.z) < Z_THRESHOLD)
            entries.append(d)
        out["tube"] = {"entries": entries, "passed": all(e["passed"] for e in entries)}
    return out


def _write_outputs(out: Path, result: VerificationReport, cfg: ScenarioConfig, plots: bool):
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(result.to_json() + "\n")
    sets = result.crossing_sets
    if sets:
        import csv

        with open(out / "crossings.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            d = next(iter(sets.values()))[0].dim
            w.writerow(["surface", "replication", "s"] + [f"x{i + 1}" for i in range(d)] + ["direction"])
            for i, group in sets.items():
                for r, cs in enumerate(group):
                    for s, x, dr in zip(cs.times, cs.locations, cs.directions):
                        w.writerow([i, r, repr(float(s)), *[repr(float(v)) for v in x], int(dr)])
    trajs = result.trajectories
    if trajs:
        tr = trajs[0]
        if tr.dim <= 2 and tr.n_jumps:
            xs = sample_path(tr, 0.05)[1]
            lo, hi = xs.min(axis=0), xs.max(axis=0)
            pad = 1e-6 + 1e-3 * (hi - lo)
            box = Box(lo - pad, hi + pad)
            hist = fit_occupation([tr], box, bins=50 if tr.dim == 1 else 40, dt=0.05)
            export_grid(hist, out / "density.csv", Box(box.lower + pad / 2, box.upper - pad / 2),
                        n=100 if tr.dim == 1 else 40)
        if cfg.outputs.get("trajectory_csv"):
            tr.to_csv(out / "trajectory.csv")
    if plots:
        from .plots import lhs_rhs_plot, palm_plot

        if result.data.get("comparisons"):
            lhs_rhs_plot(result.data["comparisons"], out / "lhs_rhs.svg")
        if "palm" in result.data:
            palm_plot(result.data["palm"], out / "palm.svg")
