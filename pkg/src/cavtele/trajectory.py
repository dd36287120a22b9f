"""Quantum-trajectory engine: conditional no-jump evolution plus random jumps.

A segment evolves the state under a constant non-Hermitian Hamiltonian. The
waiting-time unraveling draws ``r ~ U(0, 1]`` and locates the time at which the
squared norm of the unnormalized state falls to ``r``; there a collapse
operator is chosen with weight ``<psi|C^dag C|psi>`` and applied.

No-jump evolution is done through a cached eigendecomposition of the
Hamiltonian, so evaluating the state at an arbitrary time inside a segment
costs one matrix-vector product.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.linalg import expm
from scipy.optimize import brentq

JUMP_TIME_TOL = 1e-9  # us
NORM_UNDERFLOW = 1e-300


class NormUnderflowError(FloatingPointError):
    """The conditional state lost all of its norm (pathological parameters)."""


class Channel(Enum):
    DETECT_PLUS = "detect+"
    DETECT_MINUS = "detect-"
    ABSORPTION = "absorption"
    SPONTANEOUS = "spontaneous"

    @property
    def is_detection(self) -> bool:
        return self in (Channel.DETECT_PLUS, Channel.DETECT_MINUS)


class EventKind(Enum):
    CLICK_PLUS = "click+"
    CLICK_MINUS = "click-"
    DARK_PLUS = "dark+"
    DARK_MINUS = "dark-"
    UNOBSERVED_LOSS = "unobserved-loss"
    SPONTANEOUS_EMISSION = "spontaneous-emission"

    @property
    def observed(self) -> bool:
        return self in _OBSERVED

    @property
    def detector(self) -> int | None:
        """+1 for D+, -1 for D-, None for unobserved events."""
        if self in (EventKind.CLICK_PLUS, EventKind.DARK_PLUS):
            return 1
        if self in (EventKind.CLICK_MINUS, EventKind.DARK_MINUS):
            return -1
        return None


_OBSERVED = frozenset({EventKind.CLICK_PLUS, EventKind.CLICK_MINUS, EventKind.DARK_PLUS, EventKind.DARK_MINUS})


@dataclass(frozen=True)
class Event:
    time: float
    kind: EventKind

    @property
    def observed(self) -> bool:
        return self.kind.observed


@dataclass
class EventRecord:
    events: list[Event] = field(default_factory=list)

    def add(self, time: float, kind: EventKind) -> None:
        self.events.append(Event(time, kind))

    def merged(self, other: "EventRecord") -> "EventRecord":
        return EventRecord(sorted(self.events + other.events, key=lambda e: e.time))

    def observed(self) -> list[Event]:
        return [e for e in self.events if e.observed]

    @property
    def n_observed(self) -> int:
        return sum(1 for e in self.events if e.observed)

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self):
        return iter(self.events)


@dataclass(frozen=True)
class RngStream:
    """Reproducible per-trajectory random stream.

    The 64-bit campaign seed and the trajectory index are mixed by numpy's
    ``SeedSequence`` (``entropy=seed, spawn_key=(index, substream)``); the
    generator is PCG64. Substream 0 drives jumps, substream 1 dark counts.
    """

    seed: int
    stream_index: int = 0

    def generator(self, substream: int = 0) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_index, substream))
        return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class DetectorModel:
    """Photodetection imperfections.

    ``eta`` is the intrinsic efficiency, ``eta_p`` the propagation efficiency
    and ``dark_rate`` the dark-count rate in counts per us. With
    ``dark_per_detector`` the rate applies to each of the two detectors,
    otherwise it is the total split evenly between them.
    """

    eta: float = 1.0
    eta_p: float = 1.0
    dark_rate: float = 0.0
    dark_per_detector: bool = True

    def __post_init__(self):
        for name in ("eta", "eta_p"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.dark_rate < 0:
            raise ValueError("dark_rate must be non-negative")

    @property
    def observation_probability(self) -> float:
        """Chance that a photon leaving through the output mirror produces a click.

        Mirror absorption is simulated as its own collapse channel, so the
        transmission factor kappa'/kappa is not part of this coin.
        """
        return self.eta * self.eta_p

    def overall_efficiency(self, transmission_fraction: float) -> float:
        """eta' = eta_a * eta_p * eta."""
        return transmission_fraction * self.eta_p * self.eta

    @property
    def rate_per_detector(self) -> float:
        return self.dark_rate if self.dark_per_detector else self.dark_rate / 2

    @classmethod
    def from_khz(cls, eta: float = 1.0, eta_p: float = 1.0, dark_khz: float = 0.0,
                 dark_per_detector: bool = True) -> "DetectorModel":
        return cls(eta, eta_p, dark_khz * 1e-3, dark_per_detector)


def no_jump_propagator(h: np.ndarray, t: float) -> np.ndarray:
    """exp(-i H t) for a dense, possibly non-normal H (scaling and squaring)."""
    if t < 0:
        raise ValueError("t must be non-negative")
    return expm(-1j * t * np.asarray(h))


class Propagator:
    """exp(-i H t) through H = V diag(lam) V^-1.

    Built from a pair of site Hamiltonians (the joint H is their Kronecker
    sum, and the eigenvectors factorize) or from a single matrix. The
    decomposition is checked against ``scipy.linalg.expm``; if it is
    ill-conditioned the propagator falls back to ``expm`` at every call.
    """

    def __init__(self, *site_hamiltonians: np.ndarray, check_time: float = 1.0, tol: float = 1e-11):
        if not site_hamiltonians:
            raise ValueError("need at least one Hamiltonian")
        hs = [np.asarray(h, dtype=complex) for h in site_hamiltonians]
        h = hs[0]
        for other in hs[1:]:
            h = np.kron(h, np.eye(other.shape[0])) + np.kron(np.eye(h.shape[0]), other)
        self.hamiltonian = h
        self.dim = h.shape[0]
        self._cache: dict[float, np.ndarray] = {}
        vecs, vals, invs = [], [], []
        for hk in hs:
            lam, v = np.linalg.eig(hk)
            vecs.append(v)
            vals.append(lam)
            invs.append(np.linalg.inv(v))
        v, vinv, lam = vecs[0], invs[0], vals[0]
        for vk, ik, lk in zip(vecs[1:], invs[1:], vals[1:]):
            v = np.kron(v, vk)
            vinv = np.kron(vinv, ik)
            lam = (lam[:, None] + lk[None, :]).ravel()
        self.vecs, self.inv, self.eigvals = v, vinv, lam
        scale = max(1.0, float(np.abs(h).max()))
        ref = expm(-1j * check_time * h)
        err = np.abs(self._eig_matrix(check_time) - ref).max()
        self.exact_fallback = not (np.isfinite(err) and err < tol * scale)

    def _eig_matrix(self, t: float) -> np.ndarray:
        return (self.vecs * np.exp(-1j * self.eigvals * t)) @ self.inv

    def matrix(self, t: float) -> np.ndarray:
        u = self._cache.get(t)
        if u is None:
            u = expm(-1j * t * self.hamiltonian) if self.exact_fallback else self._eig_matrix(t)
            if len(self._cache) < 64:
                self._cache[t] = u
        return u

    def apply(self, psi: np.ndarray, t: float) -> np.ndarray:
        return self.matrix(t) @ psi

    def evolver(self, psi: np.ndarray):
        """Return ``f(t) -> exp(-iHt) psi`` that is cheap to call repeatedly."""
        if self.exact_fallback:
            return lambda t: expm(-1j * t * self.hamiltonian) @ psi
        coeffs = self.inv @ psi
        vecs, lam = self.vecs, self.eigvals
        return lambda t: vecs @ (np.exp(-1j * lam * t) * coeffs)


@dataclass
class SegmentSpec:
    """Constant-Hamiltonian stretch of the evolution.

    ``collapse_ops`` holds ``(operator, Channel)`` pairs. ``propagator`` may
    be supplied pre-built (shared between trajectories); otherwise it is
    built from ``hamiltonian`` on first use.
    """

    hamiltonian: np.ndarray
    collapse_ops: list[tuple[np.ndarray, Channel]]
    duration: float
    propagator: Propagator | None = None

    def __post_init__(self):
        if self.duration < 0:
            raise ValueError("segment duration must be non-negative")
        dim = self.hamiltonian.shape[0]
        for op, _ in self.collapse_ops:
            if op.shape != (dim, dim):
                raise ValueError("collapse operator dimension does not match the Hamiltonian")
        if self.propagator is None:
            self.propagator = Propagator(self.hamiltonian)
        self._active = [(op, ch) for op, ch in self.collapse_ops if np.any(op)]

    def channel_residual(self) -> float:
        """Largest entry of sum_k C_k^dag C_k - i (H - H^dag)."""
        h = self.hamiltonian
        total = sum((op.conj().T @ op for op, _ in self.collapse_ops), np.zeros_like(h))
        return float(np.abs(total - 1j * (h - h.conj().T)).max())


def sample_dark_counts(duration: float, rate: float, rng: np.random.Generator) -> list[float]:
    """Homogeneous Poisson arrival times on [0, duration) via exponential gaps."""
    if rate < 0:
        raise ValueError("rate must be non-negative")
    if rate == 0 or duration <= 0:
        return []
    times = []
    t = rng.exponential(1.0 / rate)
    while t < duration:
        times.append(t)
        t += rng.exponential(1.0 / rate)
    return times


def dark_count_record(duration: float, det: DetectorModel, rng: np.random.Generator,
                      t0: float = 0.0) -> EventRecord:
    rate = det.rate_per_detector
    rec = EventRecord()
    for kind in (EventKind.DARK_PLUS, EventKind.DARK_MINUS):
        for t in sample_dark_counts(duration, rate, rng):
            rec.add(t0 + t, kind)
    rec.events.sort(key=lambda e: e.time)
    return rec


_CLICK = {Channel.DETECT_PLUS: EventKind.CLICK_PLUS, Channel.DETECT_MINUS: EventKind.CLICK_MINUS}


def _jump(psi, spec: SegmentSpec, det: DetectorModel, rng) -> tuple[np.ndarray, EventKind]:
    candidates = [(op @ psi, ch) for op, ch in spec._active]
    weights = np.array([np.vdot(v, v).real for v, _ in candidates])
    total = weights.sum()
    if not candidates or total <= 0:
        raise NormUnderflowError("jump requested but every collapse channel is dark")
    k = int(np.searchsorted(np.cumsum(weights), rng.random() * total, side="right"))
    k = min(k, len(candidates) - 1)
    new, ch = candidates[k]
    if ch.is_detection:
        kind = _CLICK[ch] if rng.random() < det.observation_probability else EventKind.UNOBSERVED_LOSS
    elif ch is Channel.ABSORPTION:
        kind = EventKind.UNOBSERVED_LOSS
    else:
        kind = EventKind.SPONTANEOUS_EMISSION
    norm = math.sqrt(weights[k])
    if norm < NORM_UNDERFLOW:
        raise NormUnderflowError("post-jump norm underflow")
    return new / norm, kind


def run_segment(
    psi: np.ndarray,
    spec: SegmentSpec,
    det: DetectorModel,
    rng: np.random.Generator,
    t0: float = 0.0,
    dark_rng: np.random.Generator | None = None,
    dark_events: EventRecord | None = None,
) -> tuple[np.ndarray, EventRecord, float]:
    """Evolve a normalized state through one segment.

    Returns the normalized end state, the event record (absolute times
    ``t0 .. t0 + duration``) and the survival probability of the last
    jump-free stretch. Dark counts come from ``dark_events`` when given,
    otherwise they are sampled from ``dark_rng`` (default: ``rng``).
    """
    record = EventRecord()
    prop = spec.propagator
    t, t_end = 0.0, spec.duration
    survival = 1.0
    while True:
        evolve = prop.evolver(psi)
        remaining = t_end - t
        r = 1.0 - rng.random()
        end = evolve(remaining)
        end_norm2 = np.vdot(end, end).real
        if end_norm2 >= r or not spec._active:
            if end_norm2 < NORM_UNDERFLOW:
                raise NormUnderflowError("no-jump evolution underflowed")
            psi = end / math.sqrt(end_norm2)
            survival = end_norm2
            break

        def excess(tau):
            v = evolve(tau)
            return np.vdot(v, v).real - r

        tau = brentq(excess, 0.0, remaining, xtol=JUMP_TIME_TOL)
        pre = evolve(tau)
        psi, kind = _jump(pre, spec, det, rng)
        t += tau
        record.add(t0 + t, kind)

    if dark_events is None:
        dark_events = dark_count_record(spec.duration, det, dark_rng or rng, t0)
    if len(dark_events):
        record = record.merged(dark_events)
    return psi, record, survival


def run_segment_fixed_dt(
    psi: np.ndarray,
    spec: SegmentSpec,
    det: DetectorModel,
    rng: np.random.Generator,
    dt: float,
    t0: float = 0.0,
) -> tuple[np.ndarray, EventRecord]:
    """First-order fixed-step unraveling, kept as a cross-check of ``run_segment``.

    Dark counts are not generated here.
    """
    n_steps = max(1, int(round(spec.duration / dt)))
    dt = spec.duration / n_steps
    step = spec.propagator.matrix(dt)
    record = EventRecord()
    for i in range(n_steps):
        rates = np.array([np.vdot(op @ psi, op @ psi).real for op, _ in spec._active])
        dp = rates.sum() * dt
        if spec._active and rng.random() < dp:
            psi, kind = _jump(psi, spec, det, rng)
            record.add(t0 + (i + 1) * dt, kind)
        else:
            psi = step @ psi
            psi = psi / np.linalg.norm(psi)
    return psi, record
