"""Scenario configuration: a single versioned JSON document per scenario."""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional, Union

import numpy as np

from ..errors import ConfigError
from ..pdmp import model_from_dict
from ..surface import surface_from_dict, transversality_margin

SCHEMA = "pdrice.scenario/1"
BUNDLED = (
    "shotnoise_1d",
    "shotnoise_2d_hyperplane",
    "shotnoise_2d_circle",
    "stressrelease_1d",
    "stressrelease_2d_warning",
    "softidle_net_idle",
    "composite_idle",
)

DEFAULT_RUN = {"horizon": 10000.0, "burn_in": None, "replications": 20, "seed": 12345, "step": 0.01}
DEFAULT_ESTIMATORS = {
    "density": {"kind": "analytic"},
    "quadrature": {"order": 32, "panels": 4},
    "region": None,
    "kac_delta": [0.01],
    "kac_dt": 5e-4,
    "tube": {"v": [0.05, 0.1], "n_u": 6},
    "shell_eps": [0.1, 0.05, 0.025],
    "palm": None,
    "identities": False,
}
DEFAULT_OUTPUTS = {"directory": None, "plots": False, "trajectory_csv": False}


@dataclass
class ScenarioConfig:
    name: str
    model: dict
    surface: dict
    run: dict = field(default_factory=dict)
    estimators: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    description: str = ""
    schema: str = SCHEMA

    def __post_init__(self):
        self.run = {**DEFAULT_RUN, **(self.run or {})}
        est = copy.deepcopy(DEFAULT_ESTIMATORS)
        est.update(self.estimators or {})
        self.estimators = est
        self.outputs = {**DEFAULT_OUTPUTS, **(self.outputs or {})}

    def to_dict(self) -> dict:
        return {
            "schema": self.schema,
            "name": self.name,
            "description": self.description,
            "model": self.model,
            "surface": self.surface,
            "run": self.run,
            "estimators": self.estimators,
            "outputs": self.outputs,
        }

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def with_overrides(self, **run) -> "ScenarioConfig":
        cfg = copy.deepcopy(self)
        cfg.run.update({k: v for k, v in run.items() if v is not None})
        return cfg


def config_from_dict(doc: dict) -> ScenarioConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    if doc.get("schema") != SCHEMA:
        raise ConfigError(f"unsupported schema {doc.get('schema')!r}; expected {SCHEMA!r}")
    missing = [k for k in ("name", "model", "surface") if k not in doc]
    if missing:
        raise ConfigError(f"config lacks required fields: {', '.join(missing)}")
    return ScenarioConfig(
        name=doc["name"],
        model=doc["model"],
        surface=doc["surface"],
        run=doc.get("run", {}),
        estimators=doc.get("estimators", {}),
        outputs=doc.get("outputs", {}),
        description=doc.get("description", ""),
        schema=doc["schema"],
    )


def bundled_path(name: str):
    return resources.files("pdrice.harness").joinpath("scenarios", f"{name}.json")


def list_scenarios() -> list:
    """Bundled scenarios as ``(name, description)`` pairs."""
    out = []
    for name in BUNDLED:
        doc = json.loads(bundled_path(name).read_text())
        out.append((name, doc.get("description", "")))
    return out


def load_config(source: Union[str, Path, dict]) -> ScenarioConfig:
    """Load a config from a dict, a JSON file or a bundled scenario name."""
    if isinstance(source, dict):
        return config_from_dict(source)
    p = Path(source)
    if p.suffix == ".json" or p.exists():
        try:
            doc = json.loads(p.read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file {p} not found") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {p} is not valid JSON: {exc}") from exc
        return config_from_dict(doc)
    if str(source) in BUNDLED:
        return config_from_dict(json.loads(bundled_path(str(source)).read_text()))
    raise ConfigError(f"unknown scenario {source!r}; see `pdrice list`")


def resolve_surface(spec: dict, level: Optional[float] = None):
    """Surface object from its config entry; ``level`` fills a deferred ``"median"`` level."""
    spec = dict(spec)
    kind = spec.get("type")
    if kind == "composite":
        axes = spec["axes"]
        return [surface_from_dict({"type": "hyperplane", "dim": spec["dim"], "axis": a,
                                   "level": spec.get("level", 0.0), "window": None}) for a in axes]
    if spec.get("level") == "median":
        if level is None:
            return None
        spec["level"] = level
        if kind == "graph" and spec.get("kind") == "cumulative":
            lo = spec.get("window_lower", -6.0)
            gap = spec.get("window_gap", 0.05)
            beta = np.broadcast_to(np.asarray(spec.get("beta", 1.0), dtype=float), (spec["dim"],))
            hi = np.log(level) / beta[:-1] - gap
            spec["window"] = [[lo] * (spec["dim"] - 1), hi.tolist()]
    spec.pop("window_lower", None)
    spec.pop("window_gap", None)
    return surface_from_dict(spec)


def median_observable(spec: dict):
    """Scalar whose empirical median sets a deferred surface level."""
    if spec.get("type") == "hyperplane":
        axis = int(spec["axis"])
        return lambda x: x[..., axis]
    if spec.get("type") == "graph" and spec.get("kind") == "cumulative":
        beta = np.asarray(spec.get("beta", 1.0), dtype=float)
        return lambda x: np.sum(np.exp(beta * x), axis=-1)
    raise ConfigError(f"a median level is not supported for surface type {spec.get('type')!r}")


def region_from_spec(spec: Optional[dict]):
    """``{"axis": k, "lower": a, "upper": b}`` -> predicate ``a < x[k] < b``."""
    if spec is None:
        return None
    axis = int(spec["axis"])
    lo = float(spec.get("lower", -np.inf))
    hi = float(spec.get("upper", np.inf))
    return lambda x: (np.asarray(x)[..., axis] > lo) & (np.asarray(x)[..., axis] < hi)


def validate(config: Union[ScenarioConfig, dict]) -> list:
    """Every violated precondition, as human-readable strings (empty when valid)."""
    problems = []
    if isinstance(config, dict):
        try:
            config = config_from_dict(config)
        except ConfigError as exc:
            return [str(exc)]
    run = config.run
    try:
        if not float(run["horizon"]) > 0:
            problems.append(f"run: horizon must be positive (got {run['horizon']})")
    except (TypeError, ValueError):
        problems.append(f"run: horizon must be a number (got {run['horizon']!r})")
    if not isinstance(run.get("replications"), int) or run["replications"] < 1:
        problems.append(f"run: replications must be an integer >= 1 (got {run.get('replications')!r})")
    if run.get("burn_in") is not None and float(run["burn_in"]) < 0:
        problems.append("run: burn_in must be nonnegative")
    if not float(run.get("step", 0.01)) > 0:
        problems.append("run: step must be positive")
    try:
        model = model_from_dict(config.model)
    except (KeyError, ValueError, TypeError) as exc:
        problems.append(f"model: {exc}")
        return problems
    try:
        surf = resolve_surface(config.surface)
    except (KeyError, ValueError, TypeError, ConfigError) as exc:
        problems.append(f"surface: {exc}")
        return problems
    surfaces = surf if isinstance(surf, list) else [surf]
    for s in surfaces:
        if s is None:
            continue
        if s.dim != model.field.dim:
            problems.append(f"surface: dimension {s.dim} does not match the model dimension {model.field.dim}")
            continue
        margin = transversality_margin(s, model.field)
        if not margin > 0:
            problems.append(
                f"surface: {s.describe()} is tangential to the drift (transversality margin {margin:g}); "
                "the flow must cross the surface at a nonzero angle everywhere on its window"
            )
    est = config.estimators
    tube = est.get("tube") or {}
    if any(v < 0 for v in tube.get("v", [])):
        problems.append("estimators: tube v must be nonnegative")
    if any(e <= 0 for e in est.get("shell_eps", [])):
        problems.append("estimators: shell widths must be positive")
    if any(d <= 0 for d in est.get("kac_delta", [])):
        problems.append("estimators: kac_delta entries must be positive")
    kind = (est.get("density") or {}).get("kind", "analytic")
    if kind not in ("analytic", "kde", "none"):
        problems.append(f"estimators: unknown density kind {kind!r}")
    return problems
