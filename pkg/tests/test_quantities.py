import pytest
from hypothesis import given
from hypothesis import strategies as st

from gfkqmc.constants import HYDROGEN_ATOM_REDUCED_MASS_ENERGY
from gfkqmc.exceptions import UnitMismatch
from gfkqmc.quantities import (
    EnergyValue,
    Unit,
    apply_offset,
    dissociation_energy,
    ionization_potential,
    to_hartree,
    to_wavenumber,
)

E_ION = EnergyValue(-0.597528)
E_MOL = EnergyValue(-1.164546)


def test_ionization_potential_published_energies():
    assert ionization_potential(E_ION, E_MOL).value == pytest.approx(0.567018, abs=1e-12)


def test_ionization_potential_equal_inputs():
    assert ionization_potential(E_MOL, E_MOL).value == 0.0


def test_ionization_potential_errors_in_quadrature():
    out = ionization_potential(EnergyValue(-0.5, sigma=3e-6), EnergyValue(-1.0, sigma=4e-6))
    assert out.sigma == pytest.approx(5e-6, rel=1e-12)


def test_dissociation_energy_published():
    assert dissociation_energy(EnergyValue(-0.5), E_MOL).value == pytest.approx(0.164546, abs=1e-12)


def test_dissociation_energy_unbound():
    assert dissociation_energy(EnergyValue(-0.5), EnergyValue(-1.0)).value == 0.0


def test_dissociation_energy_reduced_mass_atom():
    out = dissociation_energy(EnergyValue(-0.4997278), E_MOL)
    assert out.value == pytest.approx(0.1650904, abs=1e-12)
    # the unrounded reduced-mass energy moves the seventh decimal only
    out = dissociation_energy(EnergyValue(HYDROGEN_ATOM_REDUCED_MASS_ENERGY), E_MOL)
    assert out.value == pytest.approx(0.1650904, abs=2e-7)


def test_dissociation_energy_doubles_atom_error():
    out = dissociation_energy(EnergyValue(-0.5, sigma=2e-6), EnergyValue(-1.1, sigma=3e-6))
    assert out.sigma == pytest.approx(5e-6, rel=1e-12)


def test_wavenumber_conversions():
    # agreement to the printed last digit (the printed values are truncated)
    assert to_wavenumber(EnergyValue(0.164546)).value == pytest.approx(36113.672, abs=1e-3)
    assert to_wavenumber(EnergyValue(0.567018)).value == pytest.approx(124446.066, abs=1e-3)
    assert to_wavenumber(EnergyValue(0.0)).value == 0.0


def test_offset():
    Ed = EnergyValue(36113.672, Unit.WAVENUMBER)
    out = apply_offset(Ed, EnergyValue(2.4, Unit.WAVENUMBER), "relativistic correction")
    assert out.value == pytest.approx(36116.072, abs=1e-9)
    assert out.meta["offset"]["citation"] == "relativistic correction"
    assert apply_offset(Ed, EnergyValue(0.0, Unit.WAVENUMBER)).value == Ed.value


def test_offset_unit_mismatch():
    with pytest.raises(UnitMismatch):
        apply_offset(EnergyValue(36113.672, Unit.WAVENUMBER), EnergyValue(1e-5, Unit.HARTREE))


def test_quantities_require_hartree():
    with pytest.raises(UnitMismatch):
        ionization_potential(EnergyValue(1.0, Unit.WAVENUMBER), E_MOL)
    with pytest.raises(UnitMismatch):
        to_hartree(E_MOL)


def test_negative_sigma_rejected():
    with pytest.raises(ValueError):
        EnergyValue(1.0, sigma=-1.0)


energies = st.floats(-5, 5, allow_nan=False)


@given(energies)
def test_unit_round_trip(v):
    back = to_hartree(to_wavenumber(EnergyValue(v))).value
    assert back == pytest.approx(v, rel=1e-10, abs=1e-15)


@given(energies, energies)
def test_convert_then_subtract_equals_subtract_then_convert(a, b):
    ea, eb = EnergyValue(a), EnergyValue(b)
    direct = to_wavenumber(ionization_potential(ea, eb)).value
    other = to_wavenumber(ea).value - to_wavenumber(eb).value
    assert direct == pytest.approx(other, rel=1e-10, abs=1e-8)
