import math
import warnings

import numpy as np
import pytest

from cavtele import analytic as A
from cavtele.calibrate import calibrate_schedule
from cavtele.experiment import sample_input_state
from cavtele.hilbert import JointBasis, QubitState, reduced_density_bob_atom
from cavtele.model import Model, PhysicalParams
from cavtele.protocol import (
    COMPENSATION,
    DETECTION,
    DETECTION_I,
    DETECTION_II,
    PREP,
    PrepSync,
    ProtocolKind,
    RejectReason,
    StageSchedule,
    apply_recovery,
    classify_record,
    prep_segments,
    recovery_phase,
    run_protocol,
    stage_plan,
)
from cavtele.trajectory import DetectorModel, EventKind, EventRecord, RngStream

B = JointBasis()
IDEAL = PhysicalParams.from_mhz(100, 10, 10, kappa_t=0.1)
ORIG, MOD = ProtocolKind.ORIGINAL, ProtocolKind.MODIFIED


@pytest.fixture(scope="module")
def schedules():
    return {k: calibrate_schedule(k, IDEAL, Model.EFFECTIVE).schedule for k in ProtocolKind}


def ensemble(kind, p, sched, model, n, seed=1, det=DetectorModel(), qubit=None):
    out = []
    for i in range(n):
        stream = RngStream(seed, i)
        q = qubit or sample_input_state(stream.generator(2))
        out.append((q, run_protocol(kind, q, p, sched, det, model, stream)))
    return out


def rec(*events):
    r = EventRecord()
    for t, k in events:
        r.add(t, k)
    return r


def test_schedule_validation():
    with pytest.raises(ValueError):
        StageSchedule(-1.0, 0.1)
    s = StageSchedule(0.3, 0.1, 0.5, 0.02, 6.0, 0.1, 0.2)
    assert s.theta(1) == 0.1 and s.theta(-1) == 0.2


def test_prep_alignment():
    both = prep_segments(0.3, 0.1, PrepSync.CO_TERMINATE)
    assert [(l.alice_on, l.bob_on) for l, _ in both] == [(True, False), (True, True)]
    assert [d for _, d in both] == pytest.approx([0.2, 0.1])
    start = prep_segments(0.3, 0.1, PrepSync.START_ALIGNED)
    assert [(l.alice_on, l.bob_on) for l, _ in start] == [(True, True), (True, False)]
    assert len(prep_segments(0.2, 0.2, PrepSync.CO_TERMINATE)) == 1
    plan = stage_plan(MOD, StageSchedule(0.3, 0.1, 0.5, 0.02, 6.0))
    assert [name for name, _ in plan] == [PREP, DETECTION_I, COMPENSATION, DETECTION_II]
    assert [name for name, _ in stage_plan(ORIG, StageSchedule(0.3, 0.1, t_D=6.0))] == [PREP, DETECTION]


def test_classify_record():
    empty = {PREP: EventRecord(), DETECTION: EventRecord()}
    assert classify_record(ORIG, empty) == (False, None, RejectReason.WRONG_CLICK_COUNT_DETECTION)
    dark = {PREP: EventRecord(), DETECTION: rec((1.0, EventKind.DARK_MINUS))}
    assert classify_record(ORIG, dark) == (True, -1, RejectReason.NONE)
    two = {PREP: EventRecord(), DETECTION_I: rec((0.1, EventKind.CLICK_PLUS), (0.2, EventKind.CLICK_PLUS)),
           COMPENSATION: EventRecord(), DETECTION_II: EventRecord()}
    assert classify_record(MOD, two) == (False, None, RejectReason.WRONG_CLICK_COUNT_DETECTION)
    late = {PREP: EventRecord(), DETECTION_I: rec((0.1, EventKind.CLICK_PLUS)),
            COMPENSATION: EventRecord(), DETECTION_II: rec((3.0, EventKind.DARK_PLUS))}
    assert classify_record(MOD, late) == (False, None, RejectReason.CLICK_IN_NO_CLICK_STAGE)
    hidden = {PREP: rec((0.05, EventKind.UNOBSERVED_LOSS)), DETECTION: rec((1.0, EventKind.CLICK_PLUS))}
    assert classify_record(ORIG, hidden) == (True, 1, RejectReason.NONE)


def test_recovery_phase_algebra(rng):
    psi = rng.normal(size=81) + 1j * rng.normal(size=81)
    assert np.array_equal(recovery_phase(psi, 0.0), psi)
    assert np.allclose(recovery_phase(recovery_phase(psi, 0.7), -0.7), psi, atol=1e-15)
    s = StageSchedule(0.3, 0.1, theta_plus=0.4, theta_minus=-1.1)
    out = apply_recovery(psi, -1, s)
    idx = B.index((0, 0), (1, 0))
    assert out[idx] == pytest.approx(psi[idx] * np.exp(-1.1j))
    idx0 = B.index((0, 0), (0, 1))
    assert out[idx0] == psi[idx0]


def test_modified_ideal_fidelity(schedules):
    runs = ensemble(MOD, IDEAL, schedules[MOD], Model.EFFECTIVE, 400)
    fids = [o.fidelity for _, o in runs if o.accepted]
    assert len(fids) > 50
    assert min(fids) >= 0.999
    for _, o in runs:
        assert (o.fidelity is not None) == o.accepted == (o.epsilon is not None)


def test_original_ideal_fidelity_matches_damped_state(schedules):
    r = math.exp(-IDEAL.kappa * A.t_map(IDEAL) / 2)
    runs = ensemble(ORIG, IDEAL, schedules[ORIG], Model.EFFECTIVE, 300)
    checked = 0
    for q, o in runs:
        if not o.accepted:
            continue
        a2, b2 = abs(q.alpha) ** 2, abs(q.beta) ** 2
        analytic = (a2 + r * b2) ** 2 / (a2 + r * r * b2)
        assert o.fidelity == pytest.approx(analytic, abs=1e-6)
        checked += 1
    assert checked > 50


def test_relative_phase_restored(schedules):
    q = QubitState(0.6, 0.8 * np.exp(1.3j))
    for i in range(40):
        o = run_protocol(MOD, q, IDEAL, schedules[MOD], DetectorModel(), Model.EFFECTIVE,
                         RngStream(5, i), keep_state=True)
        if o.accepted:
            rho = reduced_density_bob_atom(o.final_state)
            # rho[1, 0] = beta alpha^*  up to a positive factor
            assert abs(np.angle(rho[1, 0]) - np.angle(q.beta / q.alpha)) < 1e-6


def test_alpha_one_keeps_alice_dark(schedules):
    for kind in ProtocolKind:
        runs = [run_protocol(kind, QubitState(1, 0), IDEAL, schedules[kind], DetectorModel(),
                             Model.EFFECTIVE, RngStream(9, i), keep_state=True) for i in range(60)]
        accepted = [o for o in runs if o.accepted]
        assert accepted
        for o in accepted:
            alice = o.final_state.reshape(9, 9)
            assert np.linalg.norm(np.delete(alice, 0, axis=0)) < 1e-12
            assert o.fidelity == pytest.approx(1.0, abs=1e-9)


def test_modified_succeeds_less_often():
    p = PhysicalParams.from_mhz(100, 10, 10, gamma=1, kappa_t=0.2)
    n = 1500
    rates = {}
    for kind in ProtocolKind:
        sched = calibrate_schedule(kind, p, Model.FULL).schedule
        rates[kind] = sum(o.accepted for _, o in ensemble(kind, p, sched, Model.FULL, n)) / n
    pm, po = rates[MOD], rates[ORIG]
    sigma = math.sqrt(pm * (1 - pm) / n + po * (1 - po) / n)
    assert pm <= po + 3 * sigma


def test_epsilon_symmetry():
    p = PhysicalParams.from_mhz(100, 10, 10, gamma=1, kappa_t=0.2)
    sched = calibrate_schedule(MOD, p, Model.FULL).schedule
    runs = [o for _, o in ensemble(MOD, p, sched, Model.FULL, 2500) if o.accepted]
    plus = [o.fidelity for o in runs if o.epsilon == 1]
    minus = [o.fidelity for o in runs if o.epsilon == -1]
    n = len(runs)
    assert abs(len(plus) - n / 2) < 3 * math.sqrt(n / 4)
    se = math.sqrt(np.var(plus) / len(plus) + np.var(minus) / len(minus))
    assert abs(np.mean(plus) - np.mean(minus)) < 3 * se


def test_global_phase_invariance():
    p = PhysicalParams.from_mhz(100, 10, 10, gamma=1, kappa_t=0.2)
    sched = calibrate_schedule(MOD, p, Model.FULL).schedule
    q = QubitState(0.6, 0.8j)
    base = [run_protocol(MOD, q, p, sched, DetectorModel(), Model.FULL, RngStream(3, i)) for i in range(150)]
    for phase in (-1, 1j, -1j):
        other = QubitState(q.alpha * phase, q.beta * phase)
        runs = [run_protocol(MOD, other, p, sched, DetectorModel(), Model.FULL, RngStream(3, i))
                for i in range(150)]
        assert [o.fidelity for o in runs] == [o.fidelity for o in base]
    generic = np.exp(0.37j)
    other = QubitState(q.alpha * generic, q.beta * generic)
    runs = [run_protocol(MOD, other, p, sched, DetectorModel(), Model.FULL, RngStream(3, i)) for i in range(150)]
    for a, b in zip(runs, base):
        assert a.accepted == b.accepted
        if a.accepted:
            assert a.fidelity == pytest.approx(b.fidelity, abs=1e-12)


def test_fock_cutoff_insensitive():
    p = PhysicalParams.from_mhz(100, 10, 10, gamma=1, kappa_t=0.2)
    sched = calibrate_schedule(MOD, p, Model.FULL).schedule
    for i in range(40):
        q = sample_input_state(RngStream(8, i).generator(2))
        a = run_protocol(MOD, q, p, sched, DetectorModel(), Model.FULL, RngStream(8, i), n_max=2)
        b = run_protocol(MOD, q, p, sched, DetectorModel(), Model.FULL, RngStream(8, i), n_max=3)
        assert a.accepted == b.accepted
        if a.accepted:
            assert a.fidelity == pytest.approx(b.fidelity, abs=1e-8)


def test_dark_counts_reject_and_herald():
    p = PhysicalParams.from_mhz(100, 10, 10, kappa_t=0.2)
    sched = calibrate_schedule(ORIG, p, Model.FULL).schedule
    det = DetectorModel(eta=0.0, dark_rate=0.3)
    runs = [run_protocol(ORIG, QubitState(1, 0), p, sched, det, Model.FULL, RngStream(2, i),
                         stop_early=False) for i in range(300)]
    for o in runs:
        observed = [e for r in o.records.values() for e in r.observed()]
        assert all(e.kind in (EventKind.DARK_PLUS, EventKind.DARK_MINUS) for e in observed)
        if o.accepted:
            assert len(o.records[DETECTION].observed()) == 1
    assert any(o.accepted for o in runs)
    assert any(o.reject_reason is RejectReason.CLICK_IN_NO_CLICK_STAGE for o in runs)


def test_short_final_window_warns():
    s = StageSchedule(0.27, 0.13, t_D=1.0)
    with pytest.warns(UserWarning):
        run_protocol(ORIG, QubitState(1, 0), IDEAL, s, DetectorModel(), Model.EFFECTIVE, 0)


def test_start_aligned_option_runs():
    s = calibrate_schedule(ORIG, IDEAL, Model.EFFECTIVE, sync=PrepSync.START_ALIGNED).schedule
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        o = run_protocol(ORIG, QubitState(0.6, 0.8), IDEAL, s, DetectorModel(), Model.EFFECTIVE, 4,
                         sync=PrepSync.START_ALIGNED)
    assert o.accepted in (True, False)
