"""Detailed pneumatic vacuum-gripper models and their automatic abstraction
into timed state machines of decreasing modeling depth."""

from importlib import resources

from .bench import DeviationReport, TimingReport, compare_traces, run_benchmark
from .errors import VacmdtError
from .explorer import DiscoveryResult, ExplorationConfig, explore, replay
from .graph import DetailedModel, SystemGraph, assemble, load_graph, parse_graph, validate_graph
from .machine import AbstractMachine, MachineRuntime, MdtLevel, machine_step, run_machine, synthesize
from .modelio import (
    export_dot,
    load_discovery,
    load_machine,
    load_model_bundle,
    read_trace_csv,
    save_discovery,
    save_machine,
    save_model_bundle,
    write_trace_csv,
)
from .pneumo import evacuation_time_mdt2, ejector_flow, hose_resistance, threshold_outputs
from .trace import Script, Trace, run_model

__version__ = "0.1.0"


def reference_graph(name: str) -> str:
    """Text of a bundled graph document: ``use_case_1``, ``use_case_2``,
    ``reservoir_test``, ``hose_test`` or ``minimal``."""
    return resources.files(__package__).joinpath("data", f"{name}.toml").read_text(encoding="utf-8")
