"""Hamiltonians and collapse operators of the two Lambda-atom cavity sites.

All rates are angular frequencies in rad/us, times are in us. Decay rates
follow the amplitude convention of the non-Hermitian Hamiltonian: a term
``-i kappa a^dag a`` empties the cavity at population rate ``2 kappa``, and
every collapse operator is normalized so that the sum of ``C^dag C`` equals
``i (H - H^dag)`` exactly.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .hilbert import JointBasis, Site, SiteBasis, embed_site

TWO_PI = 2.0 * math.pi


class Model(Enum):
    FULL = "full"
    EFFECTIVE = "effective"


class OverdampedError(ValueError):
    """The cavity decay is too strong for the underdamped Raman exchange (2 delta <= kappa)."""


class EffectiveModelError(ValueError):
    """The adiabatically eliminated model is only defined for Omega == g."""


class SaturationWarning(UserWarning):
    pass


@dataclass(frozen=True)
class PhysicalParams:
    """Physical rates of one atom-cavity site (both sites share them).

    ``kappa_t`` is the mirror-transmission part of the cavity decay (photons
    that reach the detectors), ``kappa_a`` the mirror-absorption part.
    ``decay_to_0`` is the fraction of spontaneous decay from level 2 that
    ends in level 0; the rest ends in level 1.
    """

    delta_detuning: float
    omega_laser: float
    g_coupling: float
    gamma: float = 0.0
    kappa_t: float = 0.0
    kappa_a: float = 0.0
    decay_to_0: float = 0.5

    def __post_init__(self):
        if self.delta_detuning <= 0:
            raise ValueError("detuning must be positive")
        for name in ("omega_laser", "g_coupling", "gamma", "kappa_t", "kappa_a"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not 0.0 <= self.decay_to_0 <= 1.0:
            raise ValueError("decay_to_0 must lie in [0, 1]")
        if 2 * self.delta <= self.kappa:
            raise OverdampedError(
                f"kappa = {self.kappa:.6g} rad/us is not below 2*delta = {2 * self.delta:.6g} rad/us"
            )
        for name, ratio in (("g", self.g_coupling / self.delta_detuning),
                            ("Omega", self.omega_laser / self.delta_detuning)):
            if ratio**2 > 0.1:
                warnings.warn(
                    f"{name}^2/Delta^2 = {ratio**2:.3g} is not small; adiabatic elimination is poor",
                    SaturationWarning,
                    stacklevel=3,
                )

    @classmethod
    def from_mhz(
        cls,
        delta: float,
        omega: float,
        g: float,
        gamma: float = 0.0,
        kappa_t: float = 0.0,
        kappa_a: float = 0.0,
        decay_to_0: float = 0.5,
    ) -> "PhysicalParams":
        """Build from ordinary frequencies nu = rate / 2pi given in MHz."""
        return cls(
            TWO_PI * delta,
            TWO_PI * omega,
            TWO_PI * g,
            TWO_PI * gamma,
            TWO_PI * kappa_t,
            TWO_PI * kappa_a,
            decay_to_0,
        )

    @property
    def kappa(self) -> float:
        return self.kappa_t + self.kappa_a

    @property
    def delta(self) -> float:
        """Raman coupling / dispersive shift g^2 / Delta."""
        return self.g_coupling**2 / self.delta_detuning

    @property
    def omega_kappa(self) -> float:
        return math.sqrt(4 * self.delta**2 - self.kappa**2)

    @property
    def transmission_fraction(self) -> float:
        """eta_a = kappa' / kappa; 1 for a lossless cavity."""
        return 1.0 if self.kappa == 0 else self.kappa_t / self.kappa

    def with_kappa_t(self, kappa_t: float) -> "PhysicalParams":
        return PhysicalParams(
            self.delta_detuning, self.omega_laser, self.g_coupling, self.gamma,
            kappa_t, self.kappa_a, self.decay_to_0,
        )


@dataclass(frozen=True)
class LaserSetting:
    alice_on: bool
    bob_on: bool


def full_site_hamiltonian(p: PhysicalParams, laser_on: bool, basis: SiteBasis | None = None) -> np.ndarray:
    """(Delta - i gamma) s22 + (Omega s21 + g a s20 + h.c.) - i kappa a^dag a."""
    b = basis or SiteBasis()
    a = b.destroy()
    omega = p.omega_laser if laser_on else 0.0
    coupling = omega * b.flip(2, 1) + p.g_coupling * (b.flip(2, 0) @ a)
    return (
        (p.delta_detuning - 1j * p.gamma) * b.flip(2, 2)
        + coupling
        + coupling.conj().T
        - 1j * p.kappa * b.number()
    )


def effective_site_hamiltonian(
    p: PhysicalParams, laser_on: bool, basis: SiteBasis | None = None
) -> np.ndarray:
    """Excited level eliminated; level 2 is kept in the basis but left uncoupled.

    Laser on: -d s11 - d a^dag a s00 - d (a s10 + h.c.) - i kappa a^dag a.
    Laser off: -d a^dag a s00 - i kappa a^dag a, with d = g^2 / Delta.
    """
    if not math.isclose(p.omega_laser, p.g_coupling, rel_tol=1e-12, abs_tol=0.0):
        raise EffectiveModelError(
            f"effective model needs Omega == g (got {p.omega_laser!r} vs {p.g_coupling!r})"
        )
    b = basis or SiteBasis()
    a = b.destroy()
    n = b.number()
    d = p.delta
    h = -d * (n @ b.flip(0, 0)) - 1j * p.kappa * n
    if laser_on:
        raman = b.flip(1, 0) @ a
        h = h - d * b.flip(1, 1) - d * (raman + raman.conj().T)
    return h


def site_hamiltonian(
    p: PhysicalParams, laser_on: bool, model: Model, basis: SiteBasis | None = None
) -> np.ndarray:
    if model is Model.FULL:
        return full_site_hamiltonian(p, laser_on, basis)
    return effective_site_hamiltonian(p, laser_on, basis)


def joint_hamiltonian(
    p: PhysicalParams, lasers: LaserSetting, model: Model, basis: JointBasis | None = None
) -> np.ndarray:
    basis = basis or JointBasis()
    h_a = site_hamiltonian(p, lasers.alice_on, model, basis.alice)
    h_b = site_hamiltonian(p, lasers.bob_on, model, basis.bob)
    return embed_site(h_a, Site.ALICE, basis) + embed_site(h_b, Site.BOB, basis)


def _site_destroy(basis: JointBasis, site: Site) -> np.ndarray:
    own = basis.alice if site is Site.ALICE else basis.bob
    return embed_site(own.destroy(), site, basis)


def detection_collapse_ops(
    p: PhysicalParams, basis: JointBasis | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """(C_plus, C_minus) with C_eps = sqrt(kappa_t) (a_A + i eps a_B)."""
    basis = basis or JointBasis()
    a_a = _site_destroy(basis, Site.ALICE)
    a_b = _site_destroy(basis, Site.BOB)
    s = math.sqrt(p.kappa_t)
    return s * (a_a + 1j * a_b), s * (a_a - 1j * a_b)


def absorption_collapse_ops(
    p: PhysicalParams, basis: JointBasis | None = None
) -> tuple[np.ndarray, np.ndarray]:
    basis = basis or JointBasis()
    s = math.sqrt(2 * p.kappa_a)
    return s * _site_destroy(basis, Site.ALICE), s * _site_destroy(basis, Site.BOB)


def spontaneous_collapse_ops(
    p: PhysicalParams, basis: JointBasis | None = None
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Decay 2 -> 0 and 2 -> 1 on each site: (A 2->0, A 2->1, B 2->0, B 2->1).

    With the default even split both operators carry sqrt(gamma).
    """
    basis = basis or JointBasis()
    r0 = math.sqrt(2 * p.gamma * p.decay_to_0)
    r1 = math.sqrt(2 * p.gamma * (1.0 - p.decay_to_0))
    ops = []
    for site, sb in ((Site.ALICE, basis.alice), (Site.BOB, basis.bob)):
        ops.append(embed_site(r0 * sb.flip(0, 2), site, basis))
        ops.append(embed_site(r1 * sb.flip(1, 2), site, basis))
    return tuple(ops)
