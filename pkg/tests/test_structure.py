import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from enclosure_lab.algebra import random_state, trace
from enclosure_lab.channel import KrausChannel, step_distribution, superoperator_matrix
from enclosure_lab.errors import NotInBlockError, TransientPartError
from enclosure_lab.structure import (block_spectrum, cesaro_distance, compute_period, decompose,
                                     fixed_point_space, verify_no_transient)
from enclosure_lab import systems


def test_superoperator_eigenvalue_one_multiplicity():
    ev = np.linalg.eigvals(superoperator_matrix(systems.system_a()))
    assert np.sum(np.abs(ev - 1) < 1e-12) == 2


def test_fixed_spaces_system_a():
    prim = fixed_point_space(systems.system_a(), "primal")
    assert len(prim) == 2
    for x in prim:
        assert abs(x[0, 1]) < 1e-12  # diagonal
    assert len(fixed_point_space(systems.system_a(), "dual")) == 2


def test_no_transient_accepts_qnd():
    rho = verify_no_transient(systems.system_a())
    assert np.linalg.eigvalsh(rho).min() > 1e-8


def test_transient_detected():
    with pytest.raises(TransientPartError) as exc:
        decompose(systems.decaying_level())
    p = exc.value.recurrent_projector
    assert np.abs(p - np.diag([0, 1])).max() < 1e-8


def test_decompose_system_a(sys_a):
    _, dec, _ = sys_a
    assert dec.dims == (1, 1)
    assert np.abs(dec.projectors[0] - np.diag([1, 0])).max() == 0
    assert np.abs(dec.states[1] - np.diag([0, 1])).max() < 1e-14
    assert not dec.has_equivalent_blocks


def test_decompose_system_b(sys_b):
    _, dec, _ = sys_b
    assert dec.dims == (2, 2)
    assert np.abs(dec.projectors[0] - np.diag([1, 1, 0, 0])).max() < 1e-12
    assert dec.period == 1


def test_twin_blocks_flagged(sys_c):
    _, dec = sys_c
    assert dec.dual_fixed_dim == 4
    assert dec.has_equivalent_blocks
    assert dec.dims == (2, 2)


def test_qnd3_three_blocks(sys_qnd3):
    _, dec, _ = sys_qnd3
    assert dec.dims == (1, 1, 1)


@pytest.mark.parametrize("make", [systems.system_a, systems.system_b, systems.system_c, systems.qnd3])
def test_certificate_residuals(make):
    dec = decompose(make())
    for key, val in dec.residuals.items():
        if key != "min_support_eigenvalue":
            assert val <= 1e-9, key
    assert dec.residuals["min_support_eigenvalue"] > 1e-8


def test_decomposition_independent_of_seed():
    ch = systems.system_b()
    a, b = decompose(ch, seed=0), decompose(ch, seed=7)
    assert np.abs(a.projectors - b.projectors).max() < 1e-10


def test_periods():
    ch = systems.two_cycle()
    dec = decompose(ch)
    assert dec.n_blocks == 1 and dec.period == 2
    m, per_block = compute_period(ch, dec)
    assert m == 2 and per_block == (2,)
    assert decompose(systems.system_a()).period == 1


def test_unitary_flip_spectrum():
    # a single sigma_x Kraus operator: its peripheral spectrum is {1, 1, -1, -1}
    ch = systems.unitary(systems.SIGMA_X)
    ev = np.sort(np.linalg.eigvals(superoperator_matrix(ch)).real)
    assert np.abs(ev - [-1, -1, 1, 1]).max() < 1e-12
    dec = decompose(ch)
    assert dec.dims == (1, 1) and dec.period == 1


def test_block_spectrum_contains_one(sys_b):
    ch, dec, _ = sys_b
    for a in range(dec.n_blocks):
        assert abs(block_spectrum(ch, dec, a)[0] - 1) < 1e-10


def test_cesaro_distance_one_dimensional_block(sys_a):
    ch, dec, _ = sys_a
    assert cesaro_distance(ch, dec, np.diag([1.0, 0.0]), 0, 3) < 1e-15
    with pytest.raises(NotInBlockError):
        cesaro_distance(ch, dec, np.eye(2) / 2, 0, 0)


def test_cesaro_distance_decays_system_b(sys_b):
    ch, dec, _ = sys_b
    rho = dec.embed(np.diag([1.0, 0.0]), 1)
    d = [cesaro_distance(ch, dec, rho, 1, k) for k in (0, 10, 20)]
    assert d[0] > d[1] > d[2]
    lam, c = dec.mixing_rate
    assert 0 < lam < 1
    assert d[2] <= c * lam ** 20 * (1 + 1e-9)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_enclosure_property(seed):
    ch = systems.system_b()
    dec = decompose(ch)
    rng = np.random.default_rng(seed)
    for a in range(2):
        rho = dec.embed(random_state(2, rng), a)
        for _, p, s in step_distribution(ch, rho):
            if s is not None:
                assert dec.weights(s)[a] > 1 - 1e-9
