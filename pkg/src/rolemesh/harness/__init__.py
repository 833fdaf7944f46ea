"""Scenario loading, fault injection, lifecycle driver and reports."""

from .faults import FaultInjector, build_tools
from .runner import MAX_REPLANS, RunArtifacts, RunReport, counts_from_log, emit_report, execute, run
from .scenario import FaultSpec, LoadedScenario, Toggles, dump_scenario, load_scenario, scenario_from_data

__all__ = [
    "FaultInjector", "FaultSpec", "LoadedScenario", "MAX_REPLANS", "RunArtifacts", "RunReport", "Toggles",
    "build_tools", "counts_from_log", "dump_scenario", "emit_report", "execute", "load_scenario", "run",
    "scenario_from_data",
]
