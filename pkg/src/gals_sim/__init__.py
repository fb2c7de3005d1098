"""Discrete-event simulator for parity-token GALS networks.

Synchronous islands (APBs) are clocked by rendezvous modules (GPRMs) that
fire when every attached link holds its token. Tokens are parity states of
T flip-flop wires, so each clock pulse is a set of 2-phase transitions.
"""

from .analysis import (GprmShape, ResourceEstimate, Spectrum, ThroughputSeries,
                       clock_spectrum, peak_reduction, resource_estimate, resource_table,
                       throughput)
from .config import dumps, load, parse
from .core import (Apb, Channel, Direction, Link, LinkKind, LinkRole, LinkState, Network,
                   TokenLocation, ValidationReport, check_structure, validate_topology)
from .engine import Simulator, reset, simulate
from .errors import GalsError
from .experiments import Experiment, SimSettings, spectrum_compare, thermal_run
from .logic import Logic
from .policies import (Adaptive, Burst, FixedForward, LfsrState, SpreadSpectrum, lfsr_next,
                       lfsr_period)
from .thermal import Environment, FailureStep, ThermalModel
from .trace import Trace

__version__ = "0.1.0"

__all__ = [
    "Adaptive", "Apb", "Burst", "Channel", "Direction", "Environment", "Experiment",
    "FailureStep", "FixedForward", "GalsError", "GprmShape", "LfsrState", "Link", "LinkKind",
    "LinkRole", "LinkState", "Logic", "Network", "ResourceEstimate", "SimSettings",
    "Simulator", "Spectrum", "ThermalModel", "ThroughputSeries", "TokenLocation", "Trace",
    "ValidationReport", "check_structure", "clock_spectrum", "dumps", "lfsr_next",
    "lfsr_period", "load", "parse", "peak_reduction", "reset", "resource_estimate",
    "resource_table", "simulate", "spectrum_compare", "thermal_run", "throughput",
    "validate_topology",
]
