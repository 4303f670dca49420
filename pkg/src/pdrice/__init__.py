"""Continuous crossings of piecewise-deterministic processes and Rice-type formulas."""

from . import crossing, density, flow, pdmp, rice, surface
from .crossing import detect_crossings, estimate_nu_c
from .density import GammaShotNoise, fit_occupation
from .pdmp import ShotNoise, SoftIdleNetwork, StressReleaseNetwork, simulate
from .rice import rhs_1d, rhs_general, rhs_hyperplane
from .surface import GraphPatch, Hyperplane, QuadratureSpec, Sphere

__version__ = "0.1.0"
