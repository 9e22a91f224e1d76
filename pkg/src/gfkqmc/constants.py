"""Physical constants in atomic units."""

#: Proton-to-electron mass ratio M/m.
PROTON_ELECTRON_MASS_RATIO = 1836.152701

#: 1 hartree expressed in cm^-1 (CODATA).
HARTREE_TO_WAVENUMBER = 219474.6313702

#: Clamped-nucleus hydrogen atom energy (hartree).
HYDROGEN_ATOM_ENERGY = -0.5

#: Hydrogen atom energy with the proton-electron reduced mass (hartree).
HYDROGEN_ATOM_REDUCED_MASS_ENERGY = -0.5 * PROTON_ELECTRON_MASS_RATIO / (PROTON_ELECTRON_MASS_RATIO + 1.0)

#: Pairs closer than this (bohr) are treated as coincident.
SINGULARITY_FLOOR = 1e-12
