"""Heisenberg spin-network lab: simulation, Lie-algebraic analysis,
equivalence classes and parameter identification."""
from .app import LabConfig, create_app
from .errors import SpinLabError
from .models import ControlSchedule, DensityMatrix, ModelStatePair, PauliString, Segment, SpinNetwork, Trace

__all__ = [
    "LabConfig",
    "create_app",
    "SpinLabError",
    "ControlSchedule",
    "DensityMatrix",
    "ModelStatePair",
    "PauliString",
    "Segment",
    "SpinNetwork",
    "Trace",
]
