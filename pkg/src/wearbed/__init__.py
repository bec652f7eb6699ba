"""Discrete-event replica of a UWB/IMU wearable positioning testbed.

Tags range to fixed anchors and stream IMU samples; edge nodes trilaterate
and forward over a lossy pub/sub fabric to one or two VRRP-style failover
servers, and a harness turns runs into loss, delay and accuracy metrics.
"""
from .config import (EdgeSpec, FailoverSettings, FailureInjection, ScenarioConfig, ServerConfig,
                     SweepConfig, TagSpec, load_scenario, load_sweep)
from .core import NodeId, NodeKind, Position2D, RngStream, derive_stream
from .errors import WearbedError, ValidationError
from .harness import emit_plot_data, run_scenario, run_sweep, simulate
from .localization import AnchorSet, grid_oracle, position_error, trilaterate
from .metrics import MetricsReport
from .scenarios import builtin_scenarios

__version__ = "0.1.0"

__all__ = [
    "AnchorSet", "EdgeSpec", "FailoverSettings", "FailureInjection", "MetricsReport", "NodeId",
    "NodeKind", "Position2D", "RngStream", "ScenarioConfig", "ServerConfig", "SweepConfig",
    "TagSpec", "ValidationError", "WearbedError", "builtin_scenarios", "derive_stream",
    "emit_plot_data", "grid_oracle", "load_scenario", "load_sweep", "position_error",
    "run_scenario", "run_sweep", "simulate", "trilaterate",
]
