"""Particle systems and their Coulomb potential.

A :class:`SystemSpec` lists point particles with masses and charges in atomic
units.  Free particles are quantum variables whose coordinates make up the
walk configuration; clamped particles sit at fixed positions and act as
parameters of the Hamiltonian (Born-Oppenheimer mode).

Two coordinate schemes are supported for the free-particle configuration.
In ``PhysicalCoordinates`` the configuration holds positions in bohr and a
particle of mass ``m`` diffuses with variance rate ``1/m``.  In
``ScaledCoordinates`` each particle block stores ``x_i / s_i`` with
``s_i = sqrt(reference_mass / m_i)``; every block then diffuses with the
same unit rate and the mass dependence moves into the potential, which is
evaluated at the physical positions ``s_i * x_i'``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .constants import PROTON_ELECTRON_MASS_RATIO, SINGULARITY_FLOOR
from .exceptions import ConfigError, SingularConfiguration


class Mode(str, enum.Enum):
    BO = "BO"
    NBO = "nBO"


class Scaling(str, enum.Enum):
    SCALED = "ScaledCoordinates"
    PHYSICAL = "PhysicalCoordinates"


@dataclass(frozen=True)
class Particle:
    """A point particle.

    Attributes:
        label: Short identifier, e.g. ``"e1"`` or ``"A"``.
        mass: Mass in electron masses.
        charge: Charge in units of the elementary charge.
        clamped: Whether the particle is held at ``fixed_position``.
        fixed_position: Position in bohr, present iff ``clamped``.
    """

    label: str
    mass: float
    charge: float
    clamped: bool = False
    fixed_position: Optional[tuple] = None

    def __post_init__(self):
        if not np.isfinite(self.mass) or self.mass <= 0:
            raise ConfigError(f"particle {self.label!r}: mass must be positive", key="mass")
        if not np.isfinite(self.charge):
            raise ConfigError(f"particle {self.label!r}: charge must be finite", key="charge")
        if self.clamped and self.fixed_position is None:
            raise ConfigError(f"particle {self.label!r}: clamped particle needs fixed_position", key="fixed_position")
        if not self.clamped and self.fixed_position is not None:
            raise ConfigError(f"particle {self.label!r}: free particle cannot have fixed_position", key="fixed_position")
        if self.fixed_position is not None:
            pos = tuple(float(v) for v in self.fixed_position)
            if not all(np.isfinite(pos)):
                raise ConfigError(f"particle {self.label!r}: fixed_position must be finite", key="fixed_position")
            object.__setattr__(self, "fixed_position", pos)


@dataclass(frozen=True)
class SystemSpec:
    """Particles plus the treatment (BO / non-BO) and coordinate scheme.

    ``trap_omega`` adds an isotropic harmonic confinement
    ``sum_i m_i omega^2 |x_i|^2 / 2`` on free particles.  It is zero for the
    molecular systems and exists for exactly solvable test problems.
    ``spatial_dim`` is 3 for molecules; lower values are for model problems.
    """

    particles: tuple
    mode: Mode = Mode.NBO
    scaling: Scaling = Scaling.PHYSICAL
    reference_mass: float = 1.0
    trap_omega: float = 0.0
    spatial_dim: int = 3
    singular_floor: float = SINGULARITY_FLOOR
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "particles", tuple(self.particles))
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "scaling", Scaling(self.scaling))
        if not self.particles:
            raise ConfigError("system has no particles", key="particles")
        if self.reference_mass <= 0:
            raise ConfigError("reference_mass must be positive", key="reference_mass")
        if self.trap_omega < 0:
            raise ConfigError("trap_omega must be non-negative", key="trap_omega")
        if self.spatial_dim < 1:
            raise ConfigError("spatial_dim must be >= 1", key="spatial_dim")
        labels = [p.label for p in self.particles]
        if len(set(labels)) != len(labels):
            raise ConfigError("particle labels must be unique", key="label")
        for p in self.particles:
            if p.fixed_position is not None and len(p.fixed_position) != self.spatial_dim:
                raise ConfigError(f"particle {p.label!r}: fixed_position has wrong length", key="fixed_position")
        if not any(not p.clamped for p in self.particles):
            raise ConfigError("system needs at least one free particle", key="particles")
        if self.mode is Mode.BO:
            for p in self.particles:
                if p.mass > self.reference_mass and not p.clamped:
                    raise ConfigError(
                        f"particle {p.label!r}: BO mode requires particles heavier than the reference mass "
                        "to be clamped",
                        key="clamped",
                    )
        elif any(p.clamped for p in self.particles):
            raise ConfigError("nBO mode treats every particle as free", key="clamped")

    # -- layout ---------------------------------------------------------

    @property
    def free_particles(self):
        return tuple(p for p in self.particles if not p.clamped)

    @property
    def clamped_particles(self):
        return tuple(p for p in self.particles if p.clamped)

    @property
    def n_free(self):
        return len(self.free_particles)

    @property
    def dim(self):
        """Walk dimension ``spatial_dim * n_free``."""
        return self.spatial_dim * self.n_free

    def block(self, i):
        """Slice of the configuration vector occupied by free particle ``i``."""
        k = self.spatial_dim
        return slice(k * i, k * i + k)

    def _per_dim(self, values):
        return np.repeat(np.asarray(values, dtype=float), self.spatial_dim)

    @property
    def free_masses(self):
        return np.array([p.mass for p in self.free_particles])

    @property
    def particle_scales(self):
        """``s_i = sqrt(reference_mass / m_i)`` for each free particle."""
        return np.sqrt(self.reference_mass / self.free_masses)

    @property
    def coordinate_scales(self):
        """Per-dimension factor mapping configuration entries to bohr."""
        if self.scaling is Scaling.SCALED:
            return self._per_dim(self.particle_scales)
        return np.ones(self.dim)

    @property
    def diffusion(self):
        """Per-dimension variance rate of the walk in configuration coordinates."""
        if self.scaling is Scaling.SCALED:
            # m_i * s_i^2 = reference_mass for every particle
            return np.full(self.dim, 1.0 / self.reference_mass)
        return 1.0 / self._per_dim(self.free_masses)

    @property
    def inverse_masses(self):
        """Per-dimension ``1/m`` used to weight second derivatives in bohr."""
        return 1.0 / self._per_dim(self.free_masses)

    def to_physical(self, config):
        return np.asarray(config, dtype=float) * self.coordinate_scales

    def from_physical(self, x):
        return np.asarray(x, dtype=float) / self.coordinate_scales

    def with_clamped_positions(self, positions):
        """Copy of the spec with clamped particles moved to ``positions`` (label -> vector)."""
        parts = []
        for p in self.particles:
            if p.clamped and p.label in positions:
                p = Particle(p.label, p.mass, p.charge, True, tuple(positions[p.label]))
            parts.append(p)
        return SystemSpec(
            tuple(parts),
            mode=self.mode,
            scaling=self.scaling,
            reference_mass=self.reference_mass,
            trap_omega=self.trap_omega,
            spatial_dim=self.spatial_dim,
            singular_floor=self.singular_floor,
        )

    def _pairs(self):
        # (i, j, qi*qj) over charged pairs; indices into self.particles
        if "pairs" not in self._cache:
            pairs = []
            n = len(self.particles)
            for i in range(n):
                for j in range(i + 1, n):
                    qq = self.particles[i].charge * self.particles[j].charge
                    if qq != 0.0:
                        pairs.append((i, j, qq))
            self._cache["pairs"] = tuple(pairs)
        return self._cache["pairs"]

    def positions(self, X):
        """Physical positions, one ``(B, spatial_dim)`` array per particle."""
        phys = X * self.coordinate_scales
        out = []
        k = 0
        for p in self.particles:
            if p.clamped:
                out.append(np.broadcast_to(np.asarray(p.fixed_position), (X.shape[0], self.spatial_dim)))
            else:
                out.append(phys[:, self.block(k)])
                k += 1
        return out


def walk_scales(spec: SystemSpec) -> np.ndarray:
    """Per-dimension diffusion scale of the random walk.

    All ones in ``ScaledCoordinates`` (with the default reference mass) and
    ``1/sqrt(m_i)`` in ``PhysicalCoordinates``.
    """
    return np.sqrt(spec.diffusion)


def potential_batch(spec: SystemSpec, X: np.ndarray):
    """Potential for a batch of configurations.

    Args:
        spec: The system.
        X: ``(B, d)`` configurations in the spec's coordinate scheme.

    Returns:
        ``(V, singular)``: energies of shape ``(B,)`` and a boolean mask of
        rows where some pair is closer than the singularity floor.  ``V`` is
        NaN on singular rows.
    """
    X = np.asarray(X, dtype=float)
    pos = spec.positions(X)
    V = np.zeros(X.shape[0])
    singular = np.zeros(X.shape[0], dtype=bool)
    for i, j, qq in spec._pairs():
        diff = pos[i] - pos[j]
        r2 = diff[:, 0] * diff[:, 0]
        for k in range(1, spec.spatial_dim):
            r2 = r2 + diff[:, k] * diff[:, k]
        r = np.sqrt(r2)
        bad = r < spec.singular_floor
        if bad.any():
            singular |= bad
            r = np.where(bad, 1.0, r)
        V = V + qq / r
    if spec.trap_omega:
        phys = X * spec.coordinate_scales
        w = 0.5 * spec.trap_omega**2 * np.repeat(spec.free_masses, spec.spatial_dim)
        V = V + (phys * phys) @ w
    if singular.any():
        V[singular] = np.nan
    return V, singular


def potential(spec: SystemSpec, config) -> float:
    """Coulomb (plus optional trap) potential energy in hartree.

    Raises:
        SingularConfiguration: if any pair is closer than ``spec.singular_floor``.
    """
    x = np.asarray(config, dtype=float)
    if x.shape != (spec.dim,):
        raise ConfigError(f"configuration must have length {spec.dim}, got shape {x.shape}", key="config")
    if not np.all(np.isfinite(x)):
        raise ConfigError("configuration has non-finite entries", key="config")
    V, singular = potential_batch(spec, x[None, :])
    if singular[0]:
        raise SingularConfiguration("two point charges coincide")
    return float(V[0])


# -- standard systems -----------------------------------------------------


def electron(label="e"):
    return Particle(label, 1.0, -1.0)


def proton(label, position=None, mass=PROTON_ELECTRON_MASS_RATIO):
    if position is None:
        return Particle(label, mass, 1.0)
    return Particle(label, mass, 1.0, clamped=True, fixed_position=tuple(position))


def hydrogen_atom(mode="BO", scaling="PhysicalCoordinates", mass_ratio=PROTON_ELECTRON_MASS_RATIO):
    if Mode(mode) is Mode.BO:
        parts = (electron(), proton("A", (0.0, 0.0, 0.0), mass_ratio))
    else:
        parts = (electron(), proton("A", mass=mass_ratio))
    return SystemSpec(parts, mode=mode, scaling=scaling)


def _nuclei_on_z(R):
    return (0.0, 0.0, -0.5 * R), (0.0, 0.0, 0.5 * R)


def h2_plus(R=2.0, mode="BO", scaling="PhysicalCoordinates", mass_ratio=PROTON_ELECTRON_MASS_RATIO):
    if Mode(mode) is Mode.BO:
        a, b = _nuclei_on_z(R)
        parts = (electron(), proton("A", a, mass_ratio), proton("B", b, mass_ratio))
    else:
        parts = (electron(), proton("A", mass=mass_ratio), proton("B", mass=mass_ratio))
    return SystemSpec(parts, mode=mode, scaling=scaling)


def h2(R=1.4, mode="BO", scaling="PhysicalCoordinates", mass_ratio=PROTON_ELECTRON_MASS_RATIO):
    if Mode(mode) is Mode.BO:
        a, b = _nuclei_on_z(R)
        parts = (electron("e1"), electron("e2"), proton("A", a, mass_ratio), proton("B", b, mass_ratio))
    else:
        parts = (electron("e1"), electron("e2"), proton("A", mass=mass_ratio), proton("B", mass=mass_ratio))
    return SystemSpec(parts, mode=mode, scaling=scaling)


def harmonic_oscillator(spatial_dim=3, omega=1.0, mass=1.0):
    return SystemSpec((Particle("x", mass, 0.0),), mode="nBO", trap_omega=omega, spatial_dim=spatial_dim)


def internuclear_distance(spec: SystemSpec) -> Optional[float]:
    """Distance between the first two clamped particles, if there are two."""
    clamped = spec.clamped_particles
    if len(clamped) < 2:
        return None
    return float(np.linalg.norm(np.subtract(clamped[0].fixed_position, clamped[1].fixed_position)))


def with_internuclear_distance(spec: SystemSpec, R: float) -> SystemSpec:
    """Place the first two clamped particles at ``(0, 0, -R/2)`` and ``(0, 0, R/2)``."""
    clamped = spec.clamped_particles
    if spec.mode is not Mode.BO or len(clamped) < 2:
        raise ConfigError("internuclear distance scan needs a BO system with two clamped particles", key="R")
    if spec.spatial_dim != 3:
        raise ConfigError("internuclear distance scan needs spatial_dim = 3", key="spatial_dim")
    if not R > 0:
        raise ConfigError("internuclear distance must be positive", key="R")
    a, b = _nuclei_on_z(R)
    return spec.with_clamped_positions({clamped[0].label: a, clamped[1].label: b})


def charge_conjugate(spec: SystemSpec) -> SystemSpec:
    parts = tuple(Particle(p.label, p.mass, -p.charge, p.clamped, p.fixed_position) for p in spec.particles)
    return SystemSpec(
        parts,
        mode=spec.mode,
        scaling=spec.scaling,
        reference_mass=spec.reference_mass,
        trap_omega=spec.trap_omega,
        spatial_dim=spec.spatial_dim,
        singular_floor=spec.singular_floor,
    )


def with_scaling(spec: SystemSpec, scaling) -> SystemSpec:
    return SystemSpec(
        spec.particles,
        mode=spec.mode,
        scaling=scaling,
        reference_mass=spec.reference_mass,
        trap_omega=spec.trap_omega,
        spatial_dim=spec.spatial_dim,
        singular_floor=spec.singular_floor,
    )


def as_configuration(values: Sequence[float], spec: Optional[SystemSpec] = None) -> np.ndarray:
    """Validate and return a configuration vector."""
    x = np.asarray(values, dtype=float).reshape(-1)
    if spec is not None and x.shape[0] != spec.dim:
        raise ConfigError(f"configuration must have length {spec.dim}", key="config")
    if not np.all(np.isfinite(x)):
        raise ConfigError("configuration has non-finite entries", key="config")
    return x
