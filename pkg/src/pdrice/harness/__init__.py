"""Scenario configs, verification runs and the command-line interface."""

from .config import ScenarioConfig, list_scenarios, load_config, validate
from .runner import VerificationReport, run_identity_suite, run_scenario
