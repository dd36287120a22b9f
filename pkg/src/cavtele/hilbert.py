"""Basis bookkeeping, operators and reduced states for two atom-cavity sites.

Each site is a three-level atom (levels 0, 1, 2) coupled to one cavity mode
truncated at ``n_max`` photons. A site basis vector ``|j n>`` sits at flat
index ``j * (n_max + 1) + n``. The joint space of Alice and Bob is ordered
Alice-major: ``joint = alice_index * site_dim + bob_index``.

States and operators are plain complex numpy arrays; the helpers here only
check shapes and fix the index conventions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

DEFAULT_N_MAX = 2
N_LEVELS = 3


class Site(Enum):
    ALICE = "alice"
    BOB = "bob"


class ZeroNormError(ValueError):
    """Raised when a state with vanishing norm is normalized or traced."""


@dataclass(frozen=True)
class SiteBasis:
    n_max: int = DEFAULT_N_MAX

    def __post_init__(self):
        if self.n_max < 1:
            raise ValueError("n_max must be at least 1")

    @property
    def n_photon(self) -> int:
        return self.n_max + 1

    @property
    def dim(self) -> int:
        return N_LEVELS * self.n_photon

    def index(self, atom_level: int, photon_number: int) -> int:
        if not 0 <= atom_level < N_LEVELS:
            raise ValueError(f"atom level {atom_level} outside 0..2")
        if not 0 <= photon_number <= self.n_max:
            raise ValueError(f"photon number {photon_number} outside 0..{self.n_max}")
        return atom_level * self.n_photon + photon_number

    def label(self, index: int) -> tuple[int, int]:
        return divmod(index, self.n_photon)

    def ket(self, atom_level: int, photon_number: int) -> np.ndarray:
        v = np.zeros(self.dim, dtype=complex)
        v[self.index(atom_level, photon_number)] = 1.0
        return v

    # Site operators -------------------------------------------------------

    def identity(self) -> np.ndarray:
        return np.eye(self.dim, dtype=complex)

    def destroy(self) -> np.ndarray:
        """Cavity annihilation operator ``a`` (identity on the atom)."""
        a = np.diag(np.sqrt(np.arange(1, self.n_photon)), 1).astype(complex)
        return np.kron(np.eye(N_LEVELS), a)

    def number(self) -> np.ndarray:
        n = np.diag(np.arange(self.n_photon)).astype(complex)
        return np.kron(np.eye(N_LEVELS), n)

    def flip(self, i: int, j: int) -> np.ndarray:
        """Atomic flip operator ``sigma_ij = |i><j|`` (identity on the mode)."""
        s = np.zeros((N_LEVELS, N_LEVELS), dtype=complex)
        s[i, j] = 1.0
        return np.kron(s, np.eye(self.n_photon))


@dataclass(frozen=True)
class JointBasis:
    alice: SiteBasis = SiteBasis()
    bob: SiteBasis = SiteBasis()

    @classmethod
    def symmetric(cls, n_max: int = DEFAULT_N_MAX) -> "JointBasis":
        site = SiteBasis(n_max)
        return cls(site, site)

    @property
    def dim(self) -> int:
        return self.alice.dim * self.bob.dim

    def index(self, alice: tuple[int, int], bob: tuple[int, int]) -> int:
        return self.alice.index(*alice) * self.bob.dim + self.bob.index(*bob)

    def ket(self, alice: tuple[int, int], bob: tuple[int, int]) -> np.ndarray:
        v = np.zeros(self.dim, dtype=complex)
        v[self.index(alice, bob)] = 1.0
        return v


@dataclass(frozen=True)
class QubitState:
    """Input qubit ``alpha|0> + beta|1>`` stored in Alice's atom."""

    alpha: complex
    beta: complex

    def __post_init__(self):
        norm = abs(self.alpha) ** 2 + abs(self.beta) ** 2
        if abs(norm - 1.0) > 1e-12:
            raise ValueError(f"qubit not normalized: |alpha|^2 + |beta|^2 = {norm!r}")

    @classmethod
    def from_bloch(cls, theta: float, phi: float) -> "QubitState":
        return cls(complex(math.cos(theta / 2)), complex(np.exp(1j * phi) * math.sin(theta / 2)))

    def vector(self) -> np.ndarray:
        return np.array([self.alpha, self.beta], dtype=complex)

    def canonical(self) -> "QubitState":
        """Same ray with the larger amplitude made real and positive."""
        ref = complex(self.alpha if abs(self.alpha) >= abs(self.beta) else self.beta)
        phase = ref.conjugate() / abs(ref)
        return QubitState(complex(self.alpha) * phase, complex(self.beta) * phase)


def tensor(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Kronecker product; entry ``(i*db + k, j*db + l) = a[i, j] * b[k, l]``."""
    a = np.asarray(a)
    b = np.asarray(b)
    for m in (a, b):
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"expected a square matrix, got shape {m.shape}")
    return np.kron(a, b)


def embed_site(op: np.ndarray, site: Site, basis: JointBasis | None = None) -> np.ndarray:
    basis = basis or JointBasis()
    op = np.asarray(op)
    own, other = (basis.alice, basis.bob) if site is Site.ALICE else (basis.bob, basis.alice)
    if op.shape != (own.dim, own.dim):
        raise ValueError(f"operator shape {op.shape} does not match site dimension {own.dim}")
    if site is Site.ALICE:
        return np.kron(op, other.identity())
    return np.kron(other.identity(), op)


def check_operator(op: np.ndarray, dim: int) -> None:
    if op.shape != (dim, dim):
        raise ValueError(f"operator shape {op.shape} incompatible with dimension {dim}")


def normalized(psi: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(psi)
    if norm < 1e-300:
        raise ZeroNormError("cannot normalize a zero-norm state")
    return psi / norm


def reduced_density_bob_atom(psi: np.ndarray, basis: JointBasis | None = None) -> np.ndarray:
    """3x3 density matrix of Bob's atom.

    Alice's whole site and Bob's cavity mode are traced out; ``psi`` is
    normalized first, so the result has unit trace.
    """
    basis = basis or JointBasis()
    psi = np.asarray(psi)
    if psi.shape != (basis.dim,):
        raise ValueError(f"state of length {psi.shape} is not joint-dimensional ({basis.dim})")
    psi = normalized(psi)
    # axes: (alice site, bob atom, bob photon)
    t = psi.reshape(basis.alice.dim, N_LEVELS, basis.bob.n_photon)
    return np.einsum("ajn,akn->jk", t, t.conj())


def qubit_fidelity(
    qubit: QubitState, psi_final: np.ndarray, basis: JointBasis | None = None
) -> float:
    """Overlap ``<psi_in| rho_B |psi_in>`` with Bob's atom restricted to levels 0, 1.

    Population left in level 2 of Bob's atom counts against the fidelity.
    """
    rho = reduced_density_bob_atom(psi_final, basis)[:2, :2]
    v = qubit.vector()
    f = float(np.real(v.conj() @ rho @ v))
    return min(max(f, 0.0), 1.0)
