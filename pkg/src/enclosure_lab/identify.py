"""Identifiability of the minimal enclosures from outcome statistics.

Both optimization problems here live on a product of two density-matrix
sets (one per block).  Word probabilities are linear in the state,
``P_sigma(I) = tr(E_I sigma)`` with block-compressed effects
``E_I = Q^dagger V_I^dagger V_I Q``, so

* the separation problem ``min sum_I (P_a(I) - P_b(I))**2`` is convex, and
* the overlap ``sum_I sqrt(P_a(I) P_b(I))`` is jointly concave.

Both are solved by Frank-Wolfe: the linear oracle over a density-matrix set
is an extreme eigenvector of the gradient, and the same oracle yields the
duality gap that certifies each answer.  A short L-BFGS polish on the
factorization ``sigma = A A^dagger / tr(A A^dagger)`` is used when plain
Frank-Wolfe stalls before the requested gap.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize, minimize_scalar

from .algebra import dagger, hermitize, random_state, trace
from .channel import KrausChannel, check_budget, word_effects, word_operators
from .errors import BudgetExceededError
from .structure import BlockDecomposition

GAP_TOL = 1e-7
FEAS_TOL = 1e-9
FW_GAP_TOL = 1e-9
MAX_ITER = 500
RESTARTS = 8
DEFAULT_CUTOFF = 8


@dataclass
class FWResult:
    value: float
    gap: float
    states: tuple
    iterations: int
    status: str = ""


@dataclass
class IdentifiabilityReport:
    id_holds: bool
    pair_witnesses: dict
    uniform_length_N: int | None
    kappa: float | None
    kappa_pairs: dict = field(default_factory=dict)
    kappa_gaps: dict = field(default_factory=dict)
    search_cutoff: int = DEFAULT_CUTOFF
    separation: dict = field(default_factory=dict)
    cutoff_reason: str = ""

    def kappa_prime(self, target: int) -> float | None:
        vals = [v for (a, b), v in self.kappa_pairs.items() if target in (a, b)]
        return max(vals) if vals else None


def _probs(effects, sigma):
    return np.real(np.einsum("kij,ji->k", effects, sigma))


def _extreme_state(g, largest):
    w, q = np.linalg.eigh(hermitize(g))
    v = q[:, -1 if largest else 0]
    return np.outer(v, v.conj())


def block_effects(effects, dec: BlockDecomposition, alpha: int):
    q = dec.bases[alpha]
    return hermitize(dagger(q) @ effects @ q)


# -- polishing on the factorization sigma = A A^dagger / tr --------------------

def _unpack(x, dims):
    out, pos = [], 0
    for d in dims:
        n = d * d
        a = (x[pos:pos + n] + 1j * x[pos + n:pos + 2 * n]).reshape(d, d)
        pos += 2 * n
        out.append(a)
    return out


def _pack(mats):
    return np.concatenate([np.concatenate([m.real.ravel(), m.imag.ravel()]) for m in mats])


def _sqrt_psd(sigma):
    w, q = np.linalg.eigh(hermitize(sigma))
    return (q * np.sqrt(np.clip(w, 0, None))) @ dagger(q)


def _polish(value_and_grads, states, sign):
    """Minimize ``sign * value`` over the factor parametrization."""
    dims = [s.shape[0] for s in states]

    def fun(x):
        amats = _unpack(x, dims)
        sig, ts = [], []
        for a in amats:
            s = a @ dagger(a)
            t = trace(s)
            sig.append(s / t)
            ts.append(t)
        val, grads = value_and_grads(sig)
        parts = []
        for a, s, t, g in zip(amats, sig, ts, grads):
            g = sign * g
            gt = g - trace(g @ s) * np.eye(len(s))
            ga = gt @ a
            parts.append(2 * ga / t)
        return sign * val, _pack(parts)

    x0 = _pack([_sqrt_psd(s) for s in states])
    res = minimize(fun, x0, jac=True, method="L-BFGS-B",
                   options={"maxiter": 2000, "ftol": 1e-15, "gtol": 1e-13})
    out = []
    for a in _unpack(res.x, dims):
        s = a @ dagger(a)
        out.append(hermitize(s / trace(s)))
    return out


# -- separation (convex) -----------------------------------------------------

def _separation_terms(ea, eb, states):
    r = _probs(ea, states[0]) - _probs(eb, states[1])
    ga = 2 * np.tensordot(r, ea, axes=1)
    gb = -2 * np.tensordot(r, eb, axes=1)
    return float(r @ r), (ga, gb), r


def min_separation(ea, eb, feas_tol=FEAS_TOL, max_iter=MAX_ITER, gap_tol=FW_GAP_TOL):
    """Minimize ``sum_I (tr(ea_I s_a) - tr(eb_I s_b))**2`` over block states.

    ``status`` is ``"separated"`` when the certified lower bound exceeds
    ``feas_tol``, ``"equal"`` when a point with value ``<= feas_tol`` was found,
    ``"undetermined"`` otherwise.
    """
    states = [np.eye(ea.shape[1]) / ea.shape[1], np.eye(eb.shape[1]) / eb.shape[1]]
    states = [s.astype(complex) for s in states]

    def check(states):
        f, (ga, gb), r = _separation_terms(ea, eb, states)
        sa, sb = _extreme_state(ga, False), _extreme_state(gb, False)
        gap = float(np.real(trace(ga @ (states[0] - sa)) + trace(gb @ (states[1] - sb))))
        return f, max(gap, 0.0), (sa, sb), r

    def status(f, gap):
        if f - gap > feas_tol:
            return "separated"
        if f <= feas_tol:
            return "equal"
        return ""

    it = 0
    for it in range(1, max_iter + 1):
        f, gap, (sa, sb), r = check(states)
        st = status(f, gap)
        if st or gap <= gap_tol:
            break
        delta = (_probs(ea, sa) - _probs(ea, states[0])) - (_probs(eb, sb) - _probs(eb, states[1]))
        dd = float(delta @ delta)
        t = 1.0 if dd == 0 else float(np.clip(-(r @ delta) / dd, 0.0, 1.0))
        states = [states[0] + t * (sa - states[0]), states[1] + t * (sb - states[1])]
    f, gap, _, _ = check(states)
    st = status(f, gap)
    if not st and gap > gap_tol:
        def vg(sig):
            f, grads, _ = _separation_terms(ea, eb, sig)
            return f, grads
        polished = _polish(vg, states, 1.0)
        fp, gp, _, _ = check(polished)
        if fp < f:
            states, f, gap = polished, fp, gp
        st = status(f, gap)
    return FWResult(f, gap, tuple(states), it, st or "undetermined")


# -- overlap (concave) --------------------------------------------------------

def _overlap_terms(ea, eb, states):
    pa = np.clip(_probs(ea, states[0]), 0.0, None)
    pb = np.clip(_probs(eb, states[1]), 0.0, None)
    val = float(np.sqrt(pa * pb).sum())
    tiny = 1e-300
    ra = np.where(pa > 0, np.sqrt(pb / np.maximum(pa, tiny)), np.where(pb > 0, 1e150, 0.0))
    rb = np.where(pb > 0, np.sqrt(pa / np.maximum(pb, tiny)), np.where(pa > 0, 1e150, 0.0))
    ga = 0.5 * np.tensordot(ra, ea, axes=1)
    gb = 0.5 * np.tensordot(rb, eb, axes=1)
    return val, (ga, gb)


def max_overlap(ea, eb, start=None, max_iter=MAX_ITER, gap_tol=FW_GAP_TOL):
    """Maximize ``sum_I sqrt(tr(ea_I s_a) tr(eb_I s_b))`` over block states."""
    if start is None:
        start = (np.eye(ea.shape[1]) / ea.shape[1], np.eye(eb.shape[1]) / eb.shape[1])
    states = [np.asarray(s, dtype=complex) for s in start]

    def check(states):
        val, (ga, gb) = _overlap_terms(ea, eb, states)
        sa, sb = _extreme_state(ga, True), _extreme_state(gb, True)
        gap = float(np.real(trace(ga @ (sa - states[0])) + trace(gb @ (sb - states[1]))))
        return val, max(gap, 0.0), (sa, sb)

    it = 0
    for it in range(1, max_iter + 1):
        val, gap, (sa, sb) = check(states)
        if gap <= gap_tol:
            break
        pa0, pb0 = _probs(ea, states[0]), _probs(eb, states[1])
        da, db = _probs(ea, sa) - pa0, _probs(eb, sb) - pb0

        def neg(t):
            return -np.sqrt(np.clip(pa0 + t * da, 0, None) * np.clip(pb0 + t * db, 0, None)).sum()

        t = minimize_scalar(neg, bounds=(0.0, 1.0), method="bounded",
                            options={"xatol": 1e-12}).x
        if -neg(1.0) >= -neg(t):
            t = 1.0
        states = [states[0] + t * (sa - states[0]), states[1] + t * (sb - states[1])]
    val, gap, _ = check(states)
    if gap > gap_tol:
        def vg(sig):
            return _overlap_terms(ea, eb, sig)
        polished = _polish(vg, states, -1.0)
        vp, gp, _ = check(polished)
        if vp >= val:
            states, val, gap = polished, vp, gp
    return FWResult(min(val, 1.0), gap, tuple(states), it)


# -- public operations ----------------------------------------------------------

def _pair_check(alpha, beta):
    if alpha == beta:
        raise ValueError("identifiability is only defined for distinct blocks")


def find_id_witness(ch: KrausChannel, dec: BlockDecomposition, alpha: int, beta: int,
                    cutoff: int = DEFAULT_CUTOFF, gap_tol: float = GAP_TOL, budget=None):
    """Shortest word whose probabilities differ between the two invariant states.

    Returns ``(word, gap)`` or ``None`` when no witness of length ``<= cutoff``
    exists.  Words of equal length are scanned in lexicographic order.
    """
    _pair_check(alpha, beta)
    ra, rb = dec.states[alpha], dec.states[beta]
    k = ch.n_outcomes
    for n in range(1, cutoff + 1):
        try:
            eff = word_effects(ch, n, budget)
        except BudgetExceededError:
            return None
        diff = np.abs(_probs(eff, ra) - _probs(eff, rb))
        hits = np.flatnonzero(diff > gap_tol)
        if hits.size:
            j = int(hits[0])
            word = tuple(int(i) for i in np.unravel_index(j, (k,) * n))
            return word, float(diff[j])
    return None


def pairs(dec: BlockDecomposition):
    return list(itertools.combinations(range(dec.n_blocks), 2))


def separation_at_length(ch, dec, n, feas_tol=FEAS_TOL, budget=None):
    eff = word_effects(ch, n, budget)
    return {(a, b): min_separation(block_effects(eff, dec, a), block_effects(eff, dec, b), feas_tol)
            for a, b in pairs(dec)}


def uniform_identifiability_length(ch: KrausChannel, dec: BlockDecomposition,
                                   cutoff: int = DEFAULT_CUTOFF, feas_tol: float = FEAS_TOL,
                                   witnesses: dict | None = None, budget=None):
    """Smallest certified length ``N`` at which every pair of blocks is separated.

    Returns ``(N, per_pair_results, reason)``; ``N`` is ``None`` when the
    cutoff or the node budget is exhausted first.
    """
    if dec.n_blocks < 2:
        return 1, {}, ""
    if witnesses is None:
        witnesses = {p: find_id_witness(ch, dec, *p, cutoff=cutoff, budget=budget) for p in pairs(dec)}
    if any(w is None for w in witnesses.values()):
        start = cutoff
    else:
        start = max(len(w[0]) for w in witnesses.values())
    results = {}
    for n in range(start, cutoff + 1):
        try:
            check_budget(ch, n, budget)
        except BudgetExceededError:
            return None, results, "budget"
        results = separation_at_length(ch, dec, n, feas_tol, budget)
        if all(r.status == "separated" for r in results.values()):
            return n, results, ""
    return None, results, "cutoff"


def _starts(da, db, restarts, rng):
    yield np.eye(da) / da, np.eye(db) / db
    for _ in range(restarts - 1):
        yield random_state(da, rng), random_state(db, rng)


def kappa_pair(ch, dec, alpha, beta, n, restarts=RESTARTS, seed=0, effects=None, budget=None):
    """Worst-case overlap between the length-``n`` statistics of two blocks."""
    _pair_check(alpha, beta)
    eff = word_effects(ch, n, budget) if effects is None else effects
    ea, eb = block_effects(eff, dec, alpha), block_effects(eff, dec, beta)
    rng = np.random.default_rng([seed, alpha, beta])
    best = None
    for start in _starts(ea.shape[1], eb.shape[1], restarts, rng):
        res = max_overlap(ea, eb, start)
        if best is None or res.value > best.value:
            best = res
    return best


def compute_kappa(ch: KrausChannel, dec: BlockDecomposition, n: int, restarts: int = RESTARTS,
                  seed: int = 0, pair_list=None, budget=None):
    """Contraction constant over the given pairs (all pairs by default).

    Returns ``(kappa, per_pair)`` where ``per_pair`` maps each pair to its
    :class:`FWResult`; argmax states are embedded back into the full space.
    """
    eff = word_effects(ch, n, budget)
    per_pair = {}
    for a, b in (pairs(dec) if pair_list is None else pair_list):
        res = kappa_pair(ch, dec, a, b, n, restarts, seed, effects=eff)
        res.states = (dec.embed(res.states[0], a), dec.embed(res.states[1], b))
        per_pair[(a, b)] = res
    kappa = max((r.value for r in per_pair.values()), default=0.0)
    return kappa, per_pair


def compute_kappa_prime(ch, dec, n, target, restarts=RESTARTS, seed=0, budget=None):
    """Same maximization restricted to pairs involving the target block."""
    plist = [(min(target, b), max(target, b)) for b in range(dec.n_blocks) if b != target]
    return compute_kappa(ch, dec, n, restarts, seed, plist, budget)


def bhattacharyya_block_sum(ch: KrausChannel, rho_a, rho_b, n: int, budget=None) -> float:
    """``sum_I sqrt(tr(V_I rho_a V_I^dagger) tr(V_I rho_b V_I^dagger))`` over ``O^n``."""
    ops = word_operators(ch, n, budget)
    pa = np.clip(trace(ops @ rho_a @ dagger(ops)), 0, None)
    pb = np.clip(trace(ops @ rho_b @ dagger(ops)), 0, None)
    return float(np.sqrt(pa * pb).sum())


def analyze_identifiability(ch: KrausChannel, dec: BlockDecomposition,
                            cutoff: int = DEFAULT_CUTOFF, gap_tol: float = GAP_TOL,
                            feas_tol: float = FEAS_TOL, restarts: int = RESTARTS,
                            seed: int = 0, budget=None) -> IdentifiabilityReport:
    wit = {p: find_id_witness(ch, dec, *p, cutoff=cutoff, gap_tol=gap_tol, budget=budget)
           for p in pairs(dec)}
    id_holds = all(w is not None for w in wit.values())
    n_unif, sep, reason = (None, {}, "no witness")
    if id_holds:
        n_unif, sep, reason = uniform_identifiability_length(ch, dec, cutoff, feas_tol, wit, budget)
    n_kappa = n_unif
    if n_kappa is None:
        # overlap at the cutoff still describes the worst pair; saturates at 1 if unidentifiable
        n_kappa = max(1, min(cutoff, _max_depth(ch, budget)))
    kappa, per_pair = compute_kappa(ch, dec, n_kappa, restarts, seed, budget=budget)
    if dec.n_blocks < 2:
        kappa = 0.0
    return IdentifiabilityReport(
        id_holds=id_holds,
        pair_witnesses=wit,
        uniform_length_N=n_unif,
        kappa=kappa,
        kappa_pairs={p: r.value for p, r in per_pair.items()},
        kappa_gaps={p: r.gap for p, r in per_pair.items()},
        search_cutoff=cutoff,
        separation={p: (r.value, r.value - r.gap, r.status) for p, r in sep.items()},
        cutoff_reason=reason,
    )


def _max_depth(ch, budget=None):
    from .algebra import TOL
    budget = TOL.node_budget if budget is None else budget
    n = 0
    while ch.n_outcomes ** (n + 1) <= budget and n < 64:
        n += 1
    return n
