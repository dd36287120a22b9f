"""Stage machines of the original and the compensated teleportation protocols.

Original: preparation, then one long lasers-off detection window.
Modified: preparation, a short detection window I (t_d), Bob's compensation
pulse (t_c), a long detection window II (t_D), then the phase recovery.

Detectors watch the whole run. A run is accepted when its single detection
window holds exactly one observed click (real or dark) and every other stage
holds none.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache

import numpy as np

from .hilbert import JointBasis, QubitState, qubit_fidelity
from .model import (
    LaserSetting,
    Model,
    PhysicalParams,
    absorption_collapse_ops,
    detection_collapse_ops,
    site_hamiltonian,
    spontaneous_collapse_ops,
)
from .trajectory import (
    Channel,
    DetectorModel,
    EventRecord,
    Propagator,
    RngStream,
    SegmentSpec,
    dark_count_record,
    run_segment,
)


class ProtocolKind(Enum):
    ORIGINAL = "original"
    MODIFIED = "modified"


class PrepSync(Enum):
    """How Alice's and Bob's preparation pulses are aligned in time."""

    CO_TERMINATE = "co-terminate"
    START_ALIGNED = "start-aligned"


class RejectReason(Enum):
    NONE = "none"
    CLICK_IN_NO_CLICK_STAGE = "click-in-no-click-stage"
    WRONG_CLICK_COUNT_DETECTION = "wrong-click-count-detection"


PREP = "prep"
DETECTION = "detection"
DETECTION_I = "detection_I"
COMPENSATION = "compensation"
DETECTION_II = "detection_II"

STAGES = {
    ProtocolKind.ORIGINAL: (PREP, DETECTION),
    ProtocolKind.MODIFIED: (PREP, DETECTION_I, COMPENSATION, DETECTION_II),
}
CLICK_STAGE = {ProtocolKind.ORIGINAL: DETECTION, ProtocolKind.MODIFIED: DETECTION_I}


@dataclass(frozen=True)
class StageSchedule:
    """Stage durations (us) and the click-conditioned recovery phases (rad).

    The original protocol uses only ``t_A``, ``t_B`` and ``t_D``.
    """

    t_A: float
    t_B: float
    t_d: float = 0.0
    t_c: float = 0.0
    t_D: float = 0.0
    theta_plus: float = 0.0
    theta_minus: float = 0.0

    def __post_init__(self):
        for name in ("t_A", "t_B", "t_d", "t_c", "t_D"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    def theta(self, epsilon: int) -> float:
        return self.theta_plus if epsilon == 1 else self.theta_minus

    def with_phases(self, theta_plus: float, theta_minus: float) -> "StageSchedule":
        return StageSchedule(self.t_A, self.t_B, self.t_d, self.t_c, self.t_D, theta_plus, theta_minus)


@dataclass
class RunOutcome:
    accepted: bool
    epsilon: int | None
    fidelity: float | None
    records: dict[str, EventRecord]
    reject_reason: RejectReason
    final_state: np.ndarray | None = field(default=None, repr=False)


# ---------------------------------------------------------------------------
# Segment construction (shared between trajectories)
# ---------------------------------------------------------------------------


@lru_cache(maxsize=64)
def stage_propagator(p: PhysicalParams, lasers: LaserSetting, model: Model, n_max: int = 2) -> Propagator:
    basis = JointBasis.symmetric(n_max)
    return Propagator(
        site_hamiltonian(p, lasers.alice_on, model, basis.alice),
        site_hamiltonian(p, lasers.bob_on, model, basis.bob),
    )


@lru_cache(maxsize=32)
def collapse_channels(p: PhysicalParams, model: Model, n_max: int = 2) -> tuple[tuple[np.ndarray, Channel], ...]:
    """All collapse operators; the effective model carries no spontaneous channel."""
    basis = JointBasis.symmetric(n_max)
    c_plus, c_minus = detection_collapse_ops(p, basis)
    ops = [(c_plus, Channel.DETECT_PLUS), (c_minus, Channel.DETECT_MINUS)]
    ops += [(c, Channel.ABSORPTION) for c in absorption_collapse_ops(p, basis)]
    if model is Model.FULL:
        ops += [(c, Channel.SPONTANEOUS) for c in spontaneous_collapse_ops(p, basis)]
    return tuple(ops)


def _segment(p, lasers, model, n_max, duration) -> SegmentSpec:
    prop = stage_propagator(p, lasers, model, n_max)
    return SegmentSpec(prop.hamiltonian, list(collapse_channels(p, model, n_max)), duration, prop)


def prep_segments(t_A: float, t_B: float, sync: PrepSync) -> list[tuple[LaserSetting, float]]:
    """Laser settings and durations of the preparation stage."""
    both = LaserSetting(True, True)
    longer = LaserSetting(t_A > t_B, t_B > t_A)
    short, extra = min(t_A, t_B), abs(t_A - t_B)
    if sync is PrepSync.CO_TERMINATE:
        parts = [(longer, extra), (both, short)]
    else:
        parts = [(both, short), (longer, extra)]
    return [(l, d) for l, d in parts if d > 0]


def stage_plan(kind: ProtocolKind, sched: StageSchedule, sync: PrepSync = PrepSync.CO_TERMINATE):
    """[(stage name, [(LaserSetting, duration), ...]), ...] for one protocol run."""
    off = LaserSetting(False, False)
    plan = [(PREP, prep_segments(sched.t_A, sched.t_B, sync))]
    if kind is ProtocolKind.ORIGINAL:
        plan.append((DETECTION, [(off, sched.t_D)]))
    else:
        plan += [
            (DETECTION_I, [(off, sched.t_d)]),
            (COMPENSATION, [(LaserSetting(False, True), sched.t_c)]),
            (DETECTION_II, [(off, sched.t_D)]),
        ]
    return plan


@lru_cache(maxsize=64)
def build_stages(
    kind: ProtocolKind,
    p: PhysicalParams,
    sched: StageSchedule,
    model: Model,
    n_max: int = 2,
    sync: PrepSync = PrepSync.CO_TERMINATE,
) -> tuple[tuple[str, tuple[SegmentSpec, ...]], ...]:
    return tuple(
        (name, tuple(_segment(p, lasers, model, n_max, d) for lasers, d in parts))
        for name, parts in stage_plan(kind, sched, sync)
    )


def initial_state(qubit: QubitState, basis: JointBasis | None = None) -> np.ndarray:
    """(alpha|00> + beta|10>)_A (x) |10>_B."""
    basis = basis or JointBasis()
    return qubit.alpha * basis.ket((0, 0), (1, 0)) + qubit.beta * basis.ket((1, 0), (1, 0))


# ---------------------------------------------------------------------------
# Classification and recovery
# ---------------------------------------------------------------------------


def _stage_violation(kind: ProtocolKind, stage: str, n_observed: int) -> RejectReason | None:
    if stage == CLICK_STAGE[kind]:
        return RejectReason.WRONG_CLICK_COUNT_DETECTION if n_observed > 1 else None
    return RejectReason.CLICK_IN_NO_CLICK_STAGE if n_observed > 0 else None


def classify_record(
    kind: ProtocolKind, records: dict[str, EventRecord]
) -> tuple[bool, int | None, RejectReason]:
    """Accept iff the click stage holds exactly one observed event and all others none."""
    for stage in STAGES[kind]:
        if stage != CLICK_STAGE[kind] and records.get(stage, EventRecord()).n_observed:
            return False, None, RejectReason.CLICK_IN_NO_CLICK_STAGE
    clicks = records.get(CLICK_STAGE[kind], EventRecord()).observed()
    if len(clicks) != 1:
        return False, None, RejectReason.WRONG_CLICK_COUNT_DETECTION
    return True, clicks[0].kind.detector, RejectReason.NONE


def apply_recovery(psi: np.ndarray, epsilon: int, sched: StageSchedule,
                   basis: JointBasis | None = None) -> np.ndarray:
    """Phase e^{i theta(eps)} on every amplitude with Bob's atom in level 1."""
    return recovery_phase(psi, sched.theta(epsilon), basis)


def recovery_phase(psi: np.ndarray, theta: float, basis: JointBasis | None = None) -> np.ndarray:
    basis = basis or JointBasis()
    out = np.array(psi, dtype=complex, copy=True).reshape(basis.alice.dim, 3, basis.bob.n_photon)
    out[:, 1, :] *= np.exp(1j * theta)
    return out.reshape(-1)


# ---------------------------------------------------------------------------
# One trajectory
# ---------------------------------------------------------------------------


def run_protocol(
    kind: ProtocolKind,
    qubit: QubitState,
    p: PhysicalParams,
    sched: StageSchedule,
    det: DetectorModel,
    model: Model = Model.FULL,
    rng: RngStream | int = 0,
    n_max: int = 2,
    sync: PrepSync = PrepSync.CO_TERMINATE,
    stop_early: bool = True,
    keep_state: bool = False,
) -> RunOutcome:
    """Simulate one protocol run as a quantum trajectory.

    With ``stop_early`` the run ends at the first stage whose record already
    forces rejection; later stages then have empty records.
    """
    if isinstance(rng, int):
        rng = RngStream(rng)
    qubit = qubit.canonical()  # global phase is unphysical; this makes results independent of it
    if p.kappa > 0 and sched.t_D < 5 / p.kappa:
        warnings.warn("t_D is shorter than 5/kappa; unwanted photon states will survive", stacklevel=2)
    basis = JointBasis.symmetric(n_max)
    stages = build_stages(kind, p, sched, model, n_max, sync)
    jump_rng = rng.generator(0)
    dark_rng = rng.generator(1)

    # Dark counts do not depend on the state, so draw them all up front.
    darks: dict[str, EventRecord] = {}
    t0 = 0.0
    starts = {}
    for name, segments in stages:
        length = sum(s.duration for s in segments)
        starts[name] = t0
        darks[name] = dark_count_record(length, det, dark_rng, t0)
        t0 += length

    records = {name: EventRecord() for name, _ in stages}
    if stop_early:
        for name, _ in stages:
            if _stage_violation(kind, name, darks[name].n_observed):
                records[name] = darks[name]
                return RunOutcome(False, None, None, records, _stage_violation(kind, name, darks[name].n_observed))

    psi = initial_state(qubit, basis)
    for name, segments in stages:
        rec = EventRecord()
        t = starts[name]
        for spec in segments:
            psi, seg_rec, _ = run_segment(psi, spec, det, jump_rng, t0=t, dark_events=EventRecord())
            rec.events.extend(seg_rec.events)
            t += spec.duration
        records[name] = rec.merged(darks[name])
        if stop_early:
            reason = _stage_violation(kind, name, records[name].n_observed)
            if reason is not None:
                return RunOutcome(False, None, None, records, reason)

    accepted, eps, reason = classify_record(kind, records)
    if not accepted:
        return RunOutcome(False, None, None, records, reason, psi if keep_state else None)
    psi = apply_recovery(psi, eps, sched, basis)
    fid = qubit_fidelity(qubit, psi, basis)
    return RunOutcome(True, eps, fid, records, RejectReason.NONE, psi if keep_state else None)
