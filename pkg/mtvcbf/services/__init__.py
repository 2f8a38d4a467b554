"""Stateful pieces of a run: the closed-loop runner and the log exporter"""

from .scenario_runner import ScenarioRunner
from .log_exporter import SimLogExporter, file_sha256, log_sha256

__all__ = ["ScenarioRunner", "SimLogExporter", "file_sha256", "log_sha256"]
