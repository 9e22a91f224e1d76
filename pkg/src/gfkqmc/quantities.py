"""Ionization potential, dissociation energy and unit conversion."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

from .constants import HARTREE_TO_WAVENUMBER
from .exceptions import UnitMismatch


class Unit(str, enum.Enum):
    HARTREE = "hartree"
    WAVENUMBER = "wavenumber"


@dataclass(frozen=True)
class EnergyValue:
    value: float
    unit: Unit = Unit.HARTREE
    sigma: float = 0.0
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "unit", Unit(self.unit))
        object.__setattr__(self, "value", float(self.value))
        object.__setattr__(self, "sigma", float(self.sigma))
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")

    def to_dict(self):
        out = {"value": self.value, "sigma": self.sigma, "unit": self.unit.value}
        if self.meta:
            out["meta"] = dict(self.meta)
        return out


def _require(unit, *values):
    for v in values:
        if v.unit is not unit:
            raise UnitMismatch(f"expected {unit.value}, got {v.unit.value}")


def ionization_potential(E_ion: EnergyValue, E_mol: EnergyValue) -> EnergyValue:
    """``E(ion) - E(molecule)``, errors added in quadrature."""
    _require(Unit.HARTREE, E_ion, E_mol)
    return EnergyValue(E_ion.value - E_mol.value, Unit.HARTREE, math.hypot(E_ion.sigma, E_mol.sigma))


def dissociation_energy(E_atom: EnergyValue, E_mol: EnergyValue) -> EnergyValue:
    """Binding energy ``|-2 E(atom) - E(molecule)|`` of a homonuclear diatomic.

    Read literally, ``-2 E(atom) - E(molecule)`` is negative for a bound
    molecule; the conventional positive binding energy
    ``2 E(atom) - E(molecule)`` is what is returned.
    """
    _require(Unit.HARTREE, E_atom, E_mol)
    value = abs(2.0 * E_atom.value - E_mol.value)
    sigma = math.hypot(2.0 * E_atom.sigma, E_mol.sigma)
    return EnergyValue(value, Unit.HARTREE, sigma)


def to_wavenumber(E: EnergyValue) -> EnergyValue:
    _require(Unit.HARTREE, E)
    return EnergyValue(E.value * HARTREE_TO_WAVENUMBER, Unit.WAVENUMBER, E.sigma * HARTREE_TO_WAVENUMBER, E.meta)


def to_hartree(E: EnergyValue) -> EnergyValue:
    _require(Unit.WAVENUMBER, E)
    return EnergyValue(E.value / HARTREE_TO_WAVENUMBER, Unit.HARTREE, E.sigma / HARTREE_TO_WAVENUMBER, E.meta)


def apply_offset(E: EnergyValue, offset: EnergyValue, citation: str = "") -> EnergyValue:
    """Add a correction (e.g. a relativistic shift) given in the same unit.

    The offset and its citation are kept in ``meta`` of the result.
    """
    if E.unit is not offset.unit:
        raise UnitMismatch(f"cannot add {offset.unit.value} offset to {E.unit.value} value")
    meta = dict(E.meta)
    meta["offset"] = {"value": offset.value, "sigma": offset.sigma, "unit": offset.unit.value, "citation": citation}
    return EnergyValue(E.value + offset.value, E.unit, math.hypot(E.sigma, offset.sigma), meta)
