import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from enclosure_lab.algebra import dagger, random_state, trace
from enclosure_lab.channel import (KrausChannel, WordStream, apply_adjoint, apply_channel,
                                   iter_words, step_distribution, superoperator_matrix, unvec, vec,
                                   word_effects, word_operator, word_probability, word_states)
from enclosure_lab.errors import BudgetExceededError, DimensionError
from enclosure_lab import systems


def test_rejects_non_trace_preserving():
    with pytest.raises(ValueError):
        KrausChannel([np.diag([1.0, 0.5])])


def test_rejects_bad_shapes():
    with pytest.raises(DimensionError):
        KrausChannel(np.zeros((2, 2, 3)))


def test_ops_read_only():
    ch = systems.system_a()
    with pytest.raises(ValueError):
        ch.ops[0, 0, 0] = 2


def test_qnd_fixes_pointer_state():
    ch = systems.system_a()
    e1 = np.diag([1.0, 0.0]).astype(complex)
    assert np.abs(apply_channel(ch, e1) - e1).max() < 1e-15
    assert np.abs(apply_adjoint(ch, e1) - e1).max() < 1e-15
    # the outcome-0 effect carries the pointer statistics
    assert np.abs(dagger(ch.ops[0]) @ ch.ops[0] - np.diag([0.8, 0.3])).max() < 1e-15


def test_step_distribution_system_a():
    ch = systems.system_a()
    out = step_distribution(ch, np.eye(2) / 2)
    assert abs(out[0][1] - 0.55) < 1e-15 and abs(out[1][1] - 0.45) < 1e-15
    out = step_distribution(ch, np.diag([1.0, 0.0]))
    assert abs(out[0][1] - 0.8) < 1e-15 and abs(out[1][1] - 0.2) < 1e-15
    for _, _, s in out:
        assert np.abs(s - np.diag([1.0, 0.0])).max() < 1e-15


def test_word_probabilities_system_a():
    ch = systems.system_a()
    assert abs(word_probability(ch, np.eye(2) / 2, (0, 1)) - 0.185) < 1e-15
    assert abs(word_probability(ch, np.diag([1.0, 0.0]), (0, 0)) - 0.64) < 1e-15


def test_word_order_new_letter_on_left():
    ch = systems.system_b()
    assert np.abs(word_operator(ch, (0, 1)) - ch.ops[1] @ ch.ops[0]).max() == 0
    ops = word_effects(ch, 2)
    rho = random_state(4, np.random.default_rng(0))
    for j, w in enumerate(iter_words(2, 2)):
        assert abs(trace(ops[j] @ rho) - word_probability(ch, rho, w)) < 1e-14


def test_enumerate_depth_two_system_a():
    # hand computation: P(00) = .5*.64 + .5*.09, P(11) = .5*.04 + .5*.49
    ch = systems.system_a()
    nodes = list(WordStream(ch, np.eye(2) / 2, 2))
    assert [n.word for n in nodes] == [(0, 0), (0, 1), (1, 0), (1, 1)]
    w = np.array([n.weight for n in nodes])
    assert np.abs(w - [0.365, 0.185, 0.185, 0.265]).max() < 1e-15


def test_pruning_tracks_dropped_mass():
    ch = systems.system_a()
    stream = WordStream(ch, np.diag([1.0, 0.0]), 3, prune_tol=0.01)
    kept = sum(n.weight for n in stream)
    assert abs(kept + stream.dropped_mass - 1) < 1e-14
    assert stream.dropped_mass > 0


def test_budget_guard():
    ch = systems.qnd3()
    with pytest.raises(BudgetExceededError) as exc:
        word_effects(ch, 5, budget=100)
    assert "3^5" in str(exc.value) or "243" in str(exc.value)


def test_superoperator_matches_channel():
    ch = systems.system_b()
    x = random_state(4, np.random.default_rng(3))
    s = superoperator_matrix(ch)
    assert np.abs(unvec(s @ vec(x), 4) - apply_channel(ch, x)).max() < 1e-14


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_adjoint_duality(seed):
    rng = np.random.default_rng(seed)
    ch = systems.system_b()
    x = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
    y = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
    lhs = np.trace(apply_channel(ch, x) @ y)
    rhs = np.trace(x @ apply_adjoint(ch, y))
    assert abs(lhs - rhs) < 1e-12


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 4))
def test_word_measure_sums_to_one(seed, n):
    ch = systems.qnd3()
    rho = random_state(3, np.random.default_rng(seed))
    x = word_states(ch, rho, n)
    assert abs(trace(x).sum() - 1) < 1e-12
    assert trace(x).min() >= -1e-15
    stream_w = np.array([node.weight for node in WordStream(ch, rho, n)])
    assert np.abs(stream_w - trace(x)).max() < 1e-14
