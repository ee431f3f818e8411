"""Kraus channels, outcome-word probabilities and the prefix-tree word engine.

Words are tuples of outcome indices in chronological order.  The operator of
a word ``(i1, ..., in)`` is ``V_in @ ... @ V_i1``: each new letter multiplies
the running product on the left.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .algebra import TOL, Tolerances, dagger, hermitize, sanitize_state, trace
from .errors import BudgetExceededError, DimensionError


@dataclass(frozen=True, eq=False)
class KrausChannel:
    """A measurement model: one Kraus operator per outcome label.

    Parameters
    ----------
    ops : array_like, shape (k, d, d)
        Kraus operators, ``sum_i V_i^dagger V_i = I``.
    labels : sequence of str, optional
        Outcome labels, defaults to ``"0", "1", ...``.
    """

    ops: np.ndarray
    labels: tuple = field(default=())
    tp_tol: float = 1e-10

    def __post_init__(self):
        ops = np.array(self.ops, dtype=complex)
        if ops.ndim == 2:
            ops = ops[None]
        if ops.ndim != 3 or ops.shape[1] != ops.shape[2] or ops.shape[0] < 1:
            raise DimensionError(f"Kraus operators must have shape (k, d, d), got {ops.shape}")
        if not np.all(np.isfinite(ops)):
            raise ValueError("Kraus operators have non-finite entries")
        labels = tuple(str(x) for x in self.labels) or tuple(str(i) for i in range(ops.shape[0]))
        if len(labels) != ops.shape[0]:
            raise DimensionError(f"{len(labels)} labels for {ops.shape[0]} Kraus operators")
        if len(set(labels)) != len(labels):
            raise ValueError("outcome labels must be distinct")
        ops.setflags(write=False)
        object.__setattr__(self, "ops", ops)
        object.__setattr__(self, "labels", labels)
        res = self.tp_residual()
        if res > self.tp_tol:
            raise ValueError(f"Kraus operators are not trace preserving: "
                             f"max |sum V^dagger V - I| = {res:.3e}")

    @property
    def dim(self) -> int:
        return self.ops.shape[1]

    @property
    def n_outcomes(self) -> int:
        return self.ops.shape[0]

    def tp_residual(self) -> float:
        s = np.einsum("kba,kbc->ac", self.ops.conj(), self.ops)
        return float(np.abs(s - np.eye(self.dim)).max())

    def restrict(self, basis) -> "KrausChannel":
        """Compress onto the span of the orthonormal columns of ``basis``.

        Only meaningful when that span is invariant under every Kraus operator.
        """
        q = np.asarray(basis)
        return KrausChannel(dagger(q) @ self.ops @ q, self.labels, tp_tol=1e-8)


class WordNode(NamedTuple):
    word: tuple
    unnormalized_state: np.ndarray
    weight: float


def _check_dim(ch, x):
    x = np.asarray(x)
    if x.shape[-2:] != (ch.dim, ch.dim):
        raise DimensionError(f"operator of shape {x.shape} does not match channel dimension {ch.dim}")
    return x


def apply_channel(ch: KrausChannel, x):
    """``sum_i V_i x V_i^dagger``; ``x`` may be a stack of operators."""
    x = _check_dim(ch, x)
    v = ch.ops
    if x.ndim == 2:
        return np.einsum("kab,bc,kdc->ad", v, x, v.conj())
    return np.einsum("kab,...bc,kdc->...ad", v, x, v.conj())


def apply_adjoint(ch: KrausChannel, x):
    """``sum_i V_i^dagger x V_i``."""
    x = _check_dim(ch, x)
    v = ch.ops
    if x.ndim == 2:
        return np.einsum("kba,bc,kcd->ad", v.conj(), x, v)
    return np.einsum("kba,...bc,kcd->...ad", v.conj(), x, v)


def step_distribution(ch: KrausChannel, rho, tol: Tolerances = TOL):
    """One measurement step from ``rho``.

    Returns a list of ``(outcome, probability, conditioned_state)``; the state
    is ``None`` for outcomes whose probability is below ``tol.prob_floor``.
    """
    rho = _check_dim(ch, rho)
    out = []
    for i, v in enumerate(ch.ops):
        x = v @ rho @ dagger(v)
        p = float(trace(x))
        state = sanitize_state(x, tol) if p > tol.prob_floor else None
        out.append((i, p, state))
    return out


def word_operator(ch: KrausChannel, word: Sequence[int]):
    op = np.eye(ch.dim, dtype=complex)
    for i in word:
        op = ch.ops[i] @ op
    return op


def word_probability(ch: KrausChannel, rho, word: Sequence[int]) -> float:
    """``P_rho(word) = tr(V_I rho V_I^dagger)``."""
    rho = _check_dim(ch, rho)
    op = word_operator(ch, word)
    return float(trace(op @ rho @ dagger(op)))


def check_budget(ch: KrausChannel, depth: int, budget: int | None = None):
    budget = TOL.node_budget if budget is None else budget
    if ch.n_outcomes ** depth > budget:
        raise BudgetExceededError(ch.n_outcomes, depth, budget)


def iter_words(k: int, n: int) -> Iterator[tuple]:
    """All words of length ``n`` over ``range(k)`` in lexicographic order."""
    return itertools.product(range(k), repeat=n)


def word_operators(ch: KrausChannel, n: int, budget: int | None = None):
    """Stack of ``V_I`` for all ``I`` in ``O^n``, lexicographic order.

    Index ``j`` of the stack corresponds to ``iter_words(k, n)``'s ``j``-th word.
    """
    check_budget(ch, n, budget)
    ops = np.eye(ch.dim, dtype=complex)[None]
    for _ in range(n):
        # new letter on the left; the old prefix is the more significant digit
        ops = (ch.ops[None, :] @ ops[:, None]).reshape(-1, ch.dim, ch.dim)
    return ops


def word_effects(ch: KrausChannel, n: int, budget: int | None = None):
    """Stack of ``V_I^dagger V_I``; ``P_rho(I) = tr(E_I rho)``."""
    ops = word_operators(ch, n, budget)
    return hermitize(dagger(ops) @ ops)


def word_states(ch: KrausChannel, rho, n: int, budget: int | None = None):
    """Unnormalized conditioned states ``V_I rho V_I^dagger`` for all ``I``.

    ``rho`` may be a stack of shape ``(P, d, d)``; the result then has shape
    ``(P, k**n, d, d)``.
    """
    ops = word_operators(ch, n, budget)
    rho = _check_dim(ch, rho)
    if rho.ndim == 2:
        return ops @ rho @ dagger(ops)
    return ops[None] @ rho[:, None] @ dagger(ops)[None]


class WordStream:
    """Depth-first stream of :class:`WordNode` at a fixed depth.

    Iterate once; ``dropped_mass`` then holds the total weight of pruned
    branches and ``n_nodes`` the number of yielded leaves.
    """

    def __init__(self, ch: KrausChannel, rho, depth: int, prune_tol: float = 0.0,
                 budget: int | None = None):
        if prune_tol < 0:
            raise ValueError("prune_tol must be non-negative")
        check_budget(ch, depth, budget)
        self.ch = ch
        self.rho = hermitize(_check_dim(ch, rho))
        self.depth = depth
        self.prune_tol = prune_tol
        self.dropped_mass = 0.0
        self.n_nodes = 0

    def __iter__(self) -> Iterator[WordNode]:
        ops, ops_h = self.ch.ops, dagger(self.ch.ops)
        k = self.ch.n_outcomes
        stack = [((), self.rho)]
        while stack:
            word, x = stack.pop()
            w = float(trace(x))
            if w < self.prune_tol:
                self.dropped_mass += w
                continue
            if len(word) == self.depth:
                self.n_nodes += 1
                yield WordNode(word, x, w)
                continue
            # reversed push keeps the pop order lexicographic
            for i in reversed(range(k)):
                stack.append((word + (i,), hermitize(ops[i] @ x @ ops_h[i])))


def enumerate_words(ch: KrausChannel, rho, depth: int, prune_tol: float = 0.0,
                    budget: int | None = None) -> WordStream:
    return WordStream(ch, rho, depth, prune_tol, budget)


def superoperator_matrix(ch: KrausChannel):
    """Matrix of the channel acting on row-major vectorized operators."""
    return sum(np.kron(v, v.conj()) for v in ch.ops)


def vec(x):
    x = np.asarray(x)
    return x.reshape(*x.shape[:-2], -1)


def unvec(v, d: int):
    v = np.asarray(v)
    return v.reshape(*v.shape[:-1], d, d)
