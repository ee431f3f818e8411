"""Reference measurement models used by the tests, demos and scenario files."""
import numpy as np
from scipy.linalg import block_diag, sqrtm

from .channel import KrausChannel


def normalize_kraus(gs):
    """Right-multiply by ``S^{-1/2}``, ``S = sum G^dagger G``, to make ``gs`` trace preserving."""
    gs = np.asarray(gs, dtype=complex)
    s = np.einsum("kba,kbc->ac", gs.conj(), gs)
    s_inv_half = np.linalg.inv(sqrtm(s))
    return gs @ s_inv_half


def qnd(columns, labels=None) -> KrausChannel:
    """Diagonal (QND) channel; ``columns[j][i]`` is P(outcome i | pointer state j)."""
    p = np.asarray(columns, dtype=float)
    ops = np.array([np.diag(np.sqrt(p[:, i])) for i in range(p.shape[1])])
    return KrausChannel(ops, labels or ())


def system_a() -> KrausChannel:
    """Qubit QND model with pointer statistics (0.8, 0.2) and (0.3, 0.7)."""
    return qnd([[0.8, 0.2], [0.3, 0.7]])


def block_one():
    """Irreducible aperiodic qubit Kraus pair with monomial operators."""
    return np.array([
        [[np.sqrt(0.9), 0.0], [0.0, np.sqrt(0.2)]],
        [[0.0, np.sqrt(0.8)], [np.sqrt(0.1), 0.0]],
    ], dtype=complex)


def block_two():
    """Irreducible aperiodic qubit Kraus pair with coherent (non-monomial) action."""
    g = np.array([
        [[0.3, 0.6], [0.0, 0.3]],
        [[0.8, 0.0], [0.4, 0.9]],
    ], dtype=complex)
    return normalize_kraus(g)


def _stack_blocks(*blocks):
    k = blocks[0].shape[0]
    return np.array([block_diag(*(b[i] for b in blocks)) for i in range(k)])


def system_b() -> KrausChannel:
    """Two inequivalent irreducible 2x2 blocks, d = 4."""
    return KrausChannel(_stack_blocks(block_one(), block_two()))


def system_c() -> KrausChannel:
    """Twin copies of the same irreducible block, d = 4 (not identifiable)."""
    return KrausChannel(_stack_blocks(block_one(), block_one()))


def qnd3() -> KrausChannel:
    """Three pointer states, three outcomes, pairwise distinct statistics."""
    return qnd([[0.6, 0.3, 0.1], [0.2, 0.5, 0.3], [0.1, 0.2, 0.7]])


def decaying_level() -> KrausChannel:
    """``e1`` decays to ``e2``; ``e1`` spans the transient part."""
    v0 = np.array([[0, 0], [1, 0]], dtype=complex)
    v1 = np.array([[0, 0], [0, 1]], dtype=complex)
    return KrausChannel([v0, v1])


def two_cycle() -> KrausChannel:
    """Classical 2-cycle ``e1 -> e2 -> e1``: one block of period 2."""
    v0 = np.array([[0, 0], [1, 0]], dtype=complex)
    v1 = np.array([[0, 1], [0, 0]], dtype=complex)
    return KrausChannel([v0, v1])


def unitary(u) -> KrausChannel:
    return KrausChannel(np.asarray(u, dtype=complex)[None])


SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
