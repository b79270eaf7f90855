"""Concrete plants: the double integrator and the fixed-wing aircraft."""
from __future__ import annotations

from dataclasses import dataclass, field

from ..core import ControlAffineModel, ControllerFn, SafetySpec


@dataclass(frozen=True)
class PlantModel:
    """Dynamics, safe/backup sets and the primary/backup controller pair."""

    name: str
    model: ControlAffineModel
    safety: SafetySpec
    primary: ControllerFn
    backup: ControllerFn
    state_labels: tuple = ()
    extras: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.model.n

    @property
    def m(self) -> int:
        return self.model.m

    @property
    def box(self):
        return self.model.input_box


from .double_integrator import double_integrator_scenario  # noqa: E402
from .aircraft import AircraftParams, GimbalSingularity, aircraft_scenario  # noqa: E402

__all__ = [
    "PlantModel",
    "double_integrator_scenario",
    "aircraft_scenario",
    "AircraftParams",
    "GimbalSingularity",
]
