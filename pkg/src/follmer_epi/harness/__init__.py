"""Scenario configuration, orchestration and reporting behind the ``follmer-epi`` CLI."""

from .config import Scenario, build_measure, bundled_names, load, parse
from .runner import RunOptions, RunResult, run_scenario

__all__ = ["Scenario", "build_measure", "bundled_names", "load", "parse",
           "RunOptions", "RunResult", "run_scenario"]
