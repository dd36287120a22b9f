"""Closed-form results of the adiabatically eliminated model.

Everything here lives in the three-state subspace ``{|00>, |10>, |01>}`` of a
site (atom level, photon number) where the effective dynamics is solvable by
hand. These functions seed the numerical calibration and serve as oracles
for the matrix-based engine.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.optimize import bisect

from .hilbert import JointBasis, QubitState
from .model import OverdampedError, PhysicalParams

ROOT_XTOL = 1e-12


class CompensationInfeasibleError(ValueError):
    """The damping factor cannot be compensated (kappa too large for the chosen t_d)."""


@dataclass(frozen=True)
class SubspaceAmplitudes:
    c00: complex = 0j
    c10: complex = 0j
    c01: complex = 0j

    def norm2(self) -> float:
        return abs(self.c00) ** 2 + abs(self.c10) ** 2 + abs(self.c01) ** 2

    def as_site_vector(self, basis=None) -> np.ndarray:
        basis = basis or JointBasis().alice
        v = np.zeros(basis.dim, dtype=complex)
        v[basis.index(0, 0)] = self.c00
        v[basis.index(1, 0)] = self.c10
        v[basis.index(0, 1)] = self.c01
        return v


def omega_kappa(p: PhysicalParams) -> float:
    if 2 * p.delta <= p.kappa:
        raise OverdampedError("2*delta <= kappa")
    return math.sqrt(4 * p.delta**2 - p.kappa**2)


def propagate_closed_form(
    s: SubspaceAmplitudes, t: float, laser_on: bool, p: PhysicalParams
) -> SubspaceAmplitudes:
    if t < 0:
        raise ValueError("t must be non-negative")
    d, k = p.delta, p.kappa
    if not laser_on:
        return SubspaceAmplitudes(s.c00, s.c10, s.c01 * cmath.exp((1j * d - k) * t))
    w = omega_kappa(p)
    pref = cmath.exp((1j * d - k / 2) * t)
    c, sn = math.cos(w * t / 2), math.sin(w * t / 2)
    mix = 1j * (2 * d / w) * sn
    c10 = pref * ((c + k / w * sn) * s.c10 + mix * s.c01)
    c01 = pref * (mix * s.c10 + (c - k / w * sn) * s.c01)
    return SubspaceAmplitudes(s.c00, c10, c01)


def t_map(p: PhysicalParams) -> float:
    """Laser-on time that moves |10> entirely into |01>."""
    w = omega_kappa(p)
    return (2 / w) * (math.pi - math.atan2(w, p.kappa))


def t_entangle(p: PhysicalParams) -> float:
    """Laser-on time after which |10> has become prop. to |10> + i|01>."""
    w = omega_kappa(p)
    return (2 / w) * math.atan2(w, 2 * p.delta - p.kappa)


def prob_prep_alice(q: QubitState, p: PhysicalParams) -> float:
    return abs(q.alpha) ** 2 + math.exp(-p.kappa * t_map(p)) * abs(q.beta) ** 2


def prob_prep_bob(p: PhysicalParams) -> float:
    w = omega_kappa(p)
    tb = t_entangle(p)
    return math.exp(-p.kappa * tb) * (8 * p.delta**2 / w**2) * math.sin(w * tb / 2) ** 2


def t_detect_choice(p: PhysicalParams, m: int = 0) -> float:
    """Lasers-off wait with exp(i delta t_d) = -1."""
    if m < 0:
        raise ValueError("m must be non-negative")
    return math.pi * (2 * m + 1) / p.delta


def compensation_functions(t_c: float, t_d: float, p: PhysicalParams) -> tuple[float, float]:
    """(phi, theta): |01>_B and |10>_B envelopes during Bob's compensation pulse."""
    w = omega_kappa(p)
    d, k = p.delta, p.kappa
    e = math.exp(-k * t_d)
    c, s = math.cos(w * t_c / 2), math.sin(w * t_c / 2)
    phi = e * c - (2 * d + k * e) / w * s
    theta = c + (k + 2 * d * e) / w * s
    return phi, theta


def compensation_factor(t_c: float, t_d: float, p: PhysicalParams, t_a: float | None = None) -> float:
    """exp(-kappa (t_A + t_c) / 2) * theta(t_c); equals 1 at perfect compensation."""
    t_a = t_map(p) if t_a is None else t_a
    return math.exp(-p.kappa * (t_a + t_c) / 2) * compensation_functions(t_c, t_d, p)[1]


def t_compensate_max(p: PhysicalParams, t_d: float) -> float:
    w = omega_kappa(p)
    d, k = p.delta, p.kappa
    e = math.exp(-k * t_d)
    return (2 / w) * math.atan2(2 * d * w * e, w**2 + k * (k + 2 * d * e))


def t_compensate(p: PhysicalParams, t_d: float) -> float:
    """Smallest t_c > 0 that restores the damped amplitude exactly."""
    if p.kappa == 0:
        return 0.0
    t_a = t_map(p)
    hi = t_compensate_max(p, t_d)
    f_hi = compensation_factor(hi, t_d, p, t_a) - 1.0
    if f_hi < 0:
        raise CompensationInfeasibleError(
            f"maximum compensation factor {f_hi + 1:.6f} < 1 at t_d = {t_d:.6g} us"
        )
    if f_hi == 0:
        return hi
    return bisect(lambda t: compensation_factor(t, t_d, p, t_a) - 1.0, 0.0, hi,
                  xtol=ROOT_XTOL, maxiter=500)


def max_compensation_factor(p: PhysicalParams, t_d: float) -> float:
    return compensation_factor(t_compensate_max(p, t_d), t_d, p)


def t_detect_max(p: PhysicalParams) -> float:
    """Longest first detection window that still allows full compensation."""
    def excess(t_d: float) -> float:
        return max_compensation_factor(p, t_d) - 1.0

    if p.kappa == 0:
        return math.inf
    if excess(0.0) < 0:
        raise CompensationInfeasibleError(
            f"kappa = {p.kappa:.6g} rad/us is too large: no detection time allows compensation"
        )
    hi = 1.0 / p.kappa
    while excess(hi) >= 0:
        hi *= 2
        if hi > 1e6 / p.kappa:
            raise RuntimeError("could not bracket t_d_max")
    return bisect(excess, 0.0, hi, xtol=ROOT_XTOL, maxiter=500)


def kappa_compensation_limit(
    delta_mhz: float, omega_mhz: float, g_mhz: float, m: int = 0, tol_mhz: float = 1e-9
) -> float:
    """Largest kappa/2pi (MHz) for which t_d = pi(2m+1)/delta still admits compensation."""
    def margin(kappa_mhz: float) -> float:
        p = PhysicalParams.from_mhz(delta_mhz, omega_mhz, g_mhz, kappa_t=kappa_mhz)
        return max_compensation_factor(p, t_detect_choice(p, m)) - 1.0

    lo = 1e-6
    hi = 0.999 * g_mhz**2 / delta_mhz * 2
    if margin(lo) < 0 or margin(hi) > 0:
        raise RuntimeError("compensation limit is not bracketed")
    return bisect(margin, lo, hi, xtol=tol_mhz)


# ---------------------------------------------------------------------------
# Reference conditional states of the protocol stages
# ---------------------------------------------------------------------------


class Stage(Enum):
    PREP_A = "post-prep-A"
    PREP_B = "post-prep-B"
    DETECT_I = "post-detect-I"
    COMPENSATION = "post-compensation"
    DETECT_II = "post-detect-II"
    ORIGINAL_FINAL = "post-detect-original"


# keys: ((alice atom, alice photons), (bob atom, bob photons))
JointAmplitudes = dict


def joint_vector(amps: JointAmplitudes, basis: JointBasis | None = None) -> np.ndarray:
    basis = basis or JointBasis()
    v = np.zeros(basis.dim, dtype=complex)
    for (alice, bob), c in amps.items():
        v[basis.index(alice, bob)] += c
    return v


def ideal_stage_states(
    q: QubitState,
    p: PhysicalParams,
    epsilon: int,
    stage: Stage,
    t_d: float | None = None,
    t_c: float | None = None,
):
    """Unnormalized conditional state at the end of ``stage``.

    Site stages return ``SubspaceAmplitudes``; joint stages return a dict
    keyed by ``((j_A, n_A), (j_B, n_B))``. Joint stages assume a single
    click in detector ``epsilon`` during the first detection window and drop
    the common click prefactor, so the ``|00>_A |00>_B`` amplitude is
    ``i eps alpha``. ``t_d`` defaults to pi / delta and ``t_c`` to the exact
    compensation root.
    """
    if epsilon not in (1, -1):
        raise ValueError("epsilon must be +1 or -1")
    d, k = p.delta, p.kappa
    t_a = t_map(p)
    a, b = q.alpha, q.beta

    if stage is Stage.PREP_A:
        mapped = 1j * cmath.exp((1j * d - k / 2) * t_a)
        return SubspaceAmplitudes(a, 0j, mapped * b)
    if stage is Stage.PREP_B:
        w = omega_kappa(p)
        t_b = t_entangle(p)
        amp = math.exp(-k * t_b / 2) * (2 * d / w) * math.sin(w * t_b / 2)
        return SubspaceAmplitudes(0j, amp, 1j * amp)

    damped = cmath.exp((1j * d - k / 2) * t_a) * b
    A0, B0 = (0, 0), (0, 0)
    B10, B01, A01 = (1, 0), (0, 1), (0, 1)

    if stage is Stage.ORIGINAL_FINAL:
        return {(A0, B0): 1j * epsilon * a, (A0, B10): damped}

    t_d = t_detect_choice(p) if t_d is None else t_d
    photon = 1j * damped * cmath.exp((1j * d - k) * t_d)
    if stage is Stage.DETECT_I:
        return {
            (A0, B0): 1j * epsilon * a,
            (A0, B10): damped,
            (A0, B01): photon,
            (A01, B0): 1j * epsilon * photon,
        }

    t_c = t_compensate(p, t_d) if t_c is None else t_c
    phi, theta = compensation_functions(t_c, t_d, p)
    common = cmath.exp(1j * d * (t_a + t_c)) * b
    env = math.exp(-k * (t_a + t_c) / 2)
    if stage is Stage.COMPENSATION:
        return {
            (A0, B0): 1j * epsilon * a,
            (A01, B0): common * math.exp(-k * t_a / 2) * math.exp(-k * (t_d + t_c)) * epsilon,
            (A0, B01): -1j * common * env * phi,
            (A0, B10): common * env * theta,
        }
    if stage is Stage.DETECT_II:
        return {(A0, B0): 1j * epsilon * a, (A0, B10): common * env * theta}
    raise ValueError(f"unknown stage {stage!r}")
