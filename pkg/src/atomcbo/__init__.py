"""Consensus-based optimization of neutral-atom qubit positions with pulse-level VQOC."""

from .cbo import CboParams, CostSpec, CostVariant, run
from .hardware import Configuration, Encoding, PulseSet
from .hilbert import PauliSum, ground_energy, materialize
from .vqoc import NumericalFailure, PulseSettings, cost, optimize_pulses, pulse_gradient

__version__ = "0.1.0"

__all__ = [
    "CboParams",
    "CostSpec",
    "CostVariant",
    "Configuration",
    "Encoding",
    "NumericalFailure",
    "PauliSum",
    "PulseSet",
    "PulseSettings",
    "cost",
    "ground_energy",
    "materialize",
    "optimize_pulses",
    "pulse_gradient",
    "run",
]
