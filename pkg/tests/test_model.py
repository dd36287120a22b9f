import itertools
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cavtele.hilbert import JointBasis, Site, SiteBasis, embed_site
from cavtele.model import (
    EffectiveModelError,
    LaserSetting,
    Model,
    OverdampedError,
    PhysicalParams,
    SaturationWarning,
    absorption_collapse_ops,
    detection_collapse_ops,
    effective_site_hamiltonian,
    full_site_hamiltonian,
    joint_hamiltonian,
    spontaneous_collapse_ops,
)

B = JointBasis()
S = SiteBasis()


def all_collapse_ops(p, model):
    ops = list(detection_collapse_ops(p)) + list(absorption_collapse_ops(p))
    if model is Model.FULL:
        ops += list(spontaneous_collapse_ops(p))
    return ops


def test_params_validation():
    with pytest.raises(ValueError):
        PhysicalParams(0.0, 1, 1)
    with pytest.raises(ValueError):
        PhysicalParams(1.0, 1, 1, gamma=-1)
    with pytest.raises(ValueError):
        PhysicalParams(1.0, 1, 1, decay_to_0=1.5)
    with pytest.raises(OverdampedError):
        PhysicalParams.from_mhz(100, 10, 10, kappa_t=2.0)
    with pytest.warns(SaturationWarning):
        PhysicalParams.from_mhz(10, 5, 5)


def test_params_units_and_derived():
    p = PhysicalParams.from_mhz(100, 10, 10, kappa_t=0.2, kappa_a=0.05)
    assert p.delta_detuning == pytest.approx(2 * math.pi * 100)
    assert p.kappa == pytest.approx(2 * math.pi * 0.25)
    assert p.delta == pytest.approx(2 * math.pi * 1.0)
    assert p.omega_kappa == pytest.approx(math.sqrt(4 * p.delta**2 - p.kappa**2))
    assert p.transmission_fraction == pytest.approx(0.8)


def test_full_hamiltonian_elements(lossy):
    h = full_site_hamiltonian(lossy, True)
    assert h[S.index(2, 0), S.index(1, 0)] == pytest.approx(lossy.omega_laser)
    assert h[S.index(2, 0), S.index(0, 1)] == pytest.approx(lossy.g_coupling)
    anti = 1j * (h - h.conj().T)
    expected = 2 * lossy.gamma * S.flip(2, 2) + 2 * lossy.kappa * S.number()
    assert np.allclose(anti, expected, atol=1e-12)
    closed = PhysicalParams.from_mhz(100, 10, 10)
    for on in (True, False):
        h0 = full_site_hamiltonian(closed, on)
        assert np.allclose(h0, h0.conj().T, atol=1e-12)
    assert full_site_hamiltonian(lossy, False)[S.index(2, 0), S.index(1, 0)] == 0


def test_effective_hamiltonian_examples():
    p = PhysicalParams.from_mhz(100, 10, 10, kappa_t=0.1)
    on = effective_site_hamiltonian(p, True)
    off = effective_site_hamiltonian(p, False)
    assert on[S.index(1, 0), S.index(0, 1)] == pytest.approx(-p.delta)
    for h in (on, off):
        assert np.allclose(h @ S.ket(0, 0), 0)
    assert np.count_nonzero(off - np.diag(np.diag(off))) == 0
    with pytest.raises(EffectiveModelError):
        effective_site_hamiltonian(PhysicalParams.from_mhz(100, 10, 9), True)


def test_joint_hamiltonian(lossy, rng):
    p = PhysicalParams.from_mhz(100, 10, 10, kappa_t=0.1)
    h = joint_hamiltonian(p, LaserSetting(False, False), Model.EFFECTIVE)
    assert np.count_nonzero(h - np.diag(np.diag(h))) == 0
    lasers = LaserSetting(True, False)
    h = joint_hamiltonian(lossy, lasers, Model.FULL)
    ha, hb = full_site_hamiltonian(lossy, True), full_site_hamiltonian(lossy, False)
    x = rng.normal(size=9) + 1j * rng.normal(size=9)
    y = rng.normal(size=9) + 1j * rng.normal(size=9)
    assert np.allclose(h @ np.kron(x, y), np.kron(ha @ x, y) + np.kron(x, hb @ y), atol=1e-10)


def test_joint_hamiltonian_swap_symmetry(lossy):
    swap = np.zeros((81, 81))
    for i, j in itertools.product(range(9), repeat=2):
        swap[j * 9 + i, i * 9 + j] = 1
    for model, p in ((Model.FULL, lossy), (Model.EFFECTIVE, PhysicalParams.from_mhz(100, 10, 10, kappa_t=0.1))):
        for on in (True, False):
            h = joint_hamiltonian(p, LaserSetting(on, on), model)
            assert np.allclose(swap @ h @ swap.T, h, atol=1e-12)


def test_detection_ops(lossy):
    cp, cm = detection_collapse_ops(lossy)
    minus_dark = (B.ket((0, 1), (0, 0)) - 1j * B.ket((0, 0), (0, 1))) / math.sqrt(2)
    plus_dark = (B.ket((0, 1), (0, 0)) + 1j * B.ket((0, 0), (0, 1))) / math.sqrt(2)
    assert np.allclose(cp @ plus_dark, 0, atol=1e-14)
    assert np.allclose(cm @ minus_dark, 0, atol=1e-14)
    assert np.linalg.norm(cp @ minus_dark) ** 2 == pytest.approx(2 * lossy.kappa_t)
    n_sum = embed_site(S.number(), Site.ALICE) + embed_site(S.number(), Site.BOB)
    lhs = cp.conj().T @ cp + cm.conj().T @ cm
    assert np.allclose(lhs, 2 * lossy.kappa_t * n_sum, atol=1e-12)
    zero = PhysicalParams.from_mhz(100, 10, 10)
    assert all(np.count_nonzero(c) == 0 for c in detection_collapse_ops(zero))


def test_absorption_ops(lossy):
    ca, cb = absorption_collapse_ops(lossy)
    out = ca @ B.ket((0, 2), (0, 0))
    assert np.allclose(out, math.sqrt(2 * lossy.kappa_a) * math.sqrt(2) * B.ket((0, 1), (0, 0)))
    n_a = embed_site(S.number(), Site.ALICE)
    assert np.allclose(ca.conj().T @ ca, 2 * lossy.kappa_a * n_a, atol=1e-12)
    zero = PhysicalParams.from_mhz(100, 10, 10, kappa_t=0.1)
    assert all(np.count_nonzero(c) == 0 for c in absorption_collapse_ops(zero))


def test_spontaneous_ops(lossy):
    ops = spontaneous_collapse_ops(lossy)
    assert len(ops) == 4
    total = sum(c.conj().T @ c for c in ops)
    s22 = embed_site(S.flip(2, 2), Site.ALICE) + embed_site(S.flip(2, 2), Site.BOB)
    assert np.allclose(total, 2 * lossy.gamma * s22, atol=1e-12)
    out = ops[0] @ B.ket((2, 0), (0, 0))
    assert np.allclose(out, math.sqrt(lossy.gamma) * B.ket((0, 0), (0, 0)))
    closed = PhysicalParams.from_mhz(100, 10, 10)
    assert all(np.count_nonzero(c) == 0 for c in spontaneous_collapse_ops(closed))


def test_spontaneous_branching_is_configurable():
    p = PhysicalParams.from_mhz(100, 10, 10, gamma=1.0, decay_to_0=0.0)
    ops = spontaneous_collapse_ops(p)
    assert np.count_nonzero(ops[0]) == 0
    assert np.allclose(ops[1].conj().T @ ops[1], 2 * p.gamma * embed_site(S.flip(2, 2), Site.ALICE))


rates = st.floats(0.0, 0.45)


@settings(max_examples=60, deadline=None)
@given(rates, rates, st.floats(0, 5), st.floats(0, 1), st.booleans(), st.booleans())
def test_channel_completeness(kt, ka, gamma, b0, alice_on, bob_on):
    p = PhysicalParams.from_mhz(100, 10, 10, gamma=gamma, kappa_t=kt, kappa_a=ka, decay_to_0=b0)
    lasers = LaserSetting(alice_on, bob_on)
    h = joint_hamiltonian(p, lasers, Model.FULL)
    total = sum(c.conj().T @ c for c in all_collapse_ops(p, Model.FULL))
    assert np.max(np.abs(total - 1j * (h - h.conj().T))) < 1e-12
    eff = PhysicalParams.from_mhz(100, 10, 10, kappa_t=kt, kappa_a=ka)
    h = joint_hamiltonian(eff, lasers, Model.EFFECTIVE)
    total = sum(c.conj().T @ c for c in all_collapse_ops(eff, Model.EFFECTIVE))
    assert np.max(np.abs(total - 1j * (h - h.conj().T))) < 1e-12


def test_zero_rates_give_hermitian_h_and_zero_ops():
    p = PhysicalParams.from_mhz(100, 10, 10)
    for on in (True, False):
        h = joint_hamiltonian(p, LaserSetting(on, not on), Model.FULL)
        assert np.allclose(h, h.conj().T, atol=1e-12)
    assert all(np.count_nonzero(c) == 0 for c in all_collapse_ops(p, Model.FULL))


def test_protocol_subspace_never_exceeds_two_photons(lossy):
    protocol = [(0, 0), (1, 0), (0, 1), (2, 0)]
    photons = np.array([B.alice.label(i // 9)[1] + B.bob.label(i % 9)[1] for i in range(81)])
    for on_a, on_b in itertools.product((True, False), repeat=2):
        h = joint_hamiltonian(lossy, LaserSetting(on_a, on_b), Model.FULL)
        for a, b in itertools.product(protocol, repeat=2):
            col = h[:, B.index(a, b)]
            assert np.all(col[photons > 2] == 0)


def test_no_warning_at_protocol_parameters():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        PhysicalParams.from_mhz(100, 10, 10, gamma=1, kappa_t=0.265)
