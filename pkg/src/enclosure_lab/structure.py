"""Fixed points, transient check, minimal-enclosure decomposition and period."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import reduce

import numpy as np

from .algebra import (dagger, eig_hermitian, hermitize, project_to_state,
                      random_state, trace, trace_norm_hermitian)
from .channel import KrausChannel, apply_adjoint, apply_channel, superoperator_matrix, unvec, vec
from .errors import DecompositionError, NotInBlockError, PeriodError, TransientPartError

FIXED_TOL = 1e-8
RANK_TOL = 1e-8
PERIPHERAL_TOL = 1e-8
CERT_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class BlockDecomposition:
    """``H = (+)_alpha H_alpha`` into minimal enclosures.

    ``bases[a]`` holds orthonormal columns spanning ``H_a``; ``projectors[a]``
    is ``bases[a] @ bases[a]^dagger`` and ``states[a]`` the unique invariant
    state supported on ``H_a``.
    """

    bases: tuple
    projectors: np.ndarray
    states: np.ndarray
    period: int = 1
    block_periods: tuple = ()
    mixing_rate: tuple = (0.0, 0.0)
    dual_fixed_dim: int = 0
    residuals: dict = field(default_factory=dict)
    seed: int | None = None

    @property
    def n_blocks(self) -> int:
        return len(self.bases)

    @property
    def dims(self) -> tuple:
        return tuple(q.shape[1] for q in self.bases)

    @property
    def has_equivalent_blocks(self) -> bool:
        return self.dual_fixed_dim > self.n_blocks

    def weights(self, rho):
        """Block weights ``tr(M_a rho)``; ``rho`` may be a stack."""
        rho = np.asarray(rho)
        m_t = np.swapaxes(self.projectors, -1, -2)
        return np.real((rho[..., None, :, :] * m_t).sum(axis=(-2, -1)))

    def compress(self, rho, alpha):
        """``Q_a^dagger rho Q_a``, the block-restricted operator."""
        q = self.bases[alpha]
        return dagger(q) @ rho @ q

    def embed(self, sigma, alpha):
        q = self.bases[alpha]
        return q @ sigma @ dagger(q)


def _null_space(a, tol):
    _, s, vh = np.linalg.svd(a)
    scale = max(1.0, s[0]) if s.size else 1.0
    return vh[s <= tol * scale].conj().T


def _hermitian_basis(vectors, d):
    """Real-orthonormal Hermitian basis of a dagger-closed operator space."""
    r = vectors.shape[1]
    if r == 0:
        return np.zeros((0, d, d), dtype=complex)
    xs = unvec(vectors.T, d)
    cands = np.concatenate([hermitize(xs), hermitize(-1j * xs)])
    real_vecs = np.concatenate([vec(cands).real, vec(cands).imag], axis=1).T
    u, s, _ = np.linalg.svd(real_vecs, full_matrices=False)
    u = u[:, :r]
    half = d * d
    out = (u[:half] + 1j * u[half:]).T
    return hermitize(unvec(out, d))


def fixed_point_space(ch: KrausChannel, side: str = "primal", tol: float = FIXED_TOL):
    """Hermitian orthonormal basis of the fixed points of the channel or its adjoint.

    Returns an array of shape ``(r, d, d)``.
    """
    if side not in ("primal", "dual"):
        raise ValueError("side must be 'primal' or 'dual'")
    s = superoperator_matrix(ch)
    if side == "dual":
        s = dagger(s)
    null = _null_space(s - np.eye(s.shape[0]), tol)
    return _hermitian_basis(null, ch.dim)


def maximal_invariant_state(ch: KrausChannel, tol: float = FIXED_TOL):
    """Image of ``I/d`` under the spectral projector of eigenvalue 1.

    This is the Cesaro limit of ``Phi^n(I/d)``, whose support is the recurrent
    subspace.
    """
    d = ch.dim
    s = superoperator_matrix(ch)
    shift = s - np.eye(d * d)
    right = _null_space(shift, tol)
    left = _null_space(dagger(shift), tol)
    proj = right @ np.linalg.solve(dagger(left) @ right, dagger(left))
    rho = unvec(proj @ vec(np.eye(d) / d), d)
    return hermitize(rho / trace(rho))


def verify_no_transient(ch: KrausChannel, rank_tol: float = RANK_TOL):
    """Return a full-rank invariant state or raise :class:`TransientPartError`."""
    rho = maximal_invariant_state(ch)
    w, q = eig_hermitian(rho)
    if w[0] <= rank_tol:
        keep = q[:, w > rank_tol]
        raise TransientPartError(float(w[0]), keep @ dagger(keep))
    return project_to_state(rho)


def _split(ch: KrausChannel, basis, rng):
    """Split an invariant subspace by a random element of its dual fixed algebra.

    Returns ``None`` when the subspace is already minimal.
    """
    sub = ch.restrict(basis)
    dual = fixed_point_space(sub, "dual")
    if len(dual) == 1:
        return None
    x = np.tensordot(rng.standard_normal(len(dual)), dual, axes=1)
    w, q = eig_hermitian(x)
    gap_tol = 1e-6 * max(1.0, w[-1] - w[0])
    cuts = np.flatnonzero(np.diff(w) > gap_tol) + 1
    groups = np.split(np.arange(len(w)), cuts)
    return [basis @ q[:, g] for g in groups]


def _block_state(ch: KrausChannel, basis):
    sub = ch.restrict(basis)
    s = superoperator_matrix(sub)
    null = _null_space(s - np.eye(s.shape[0]), FIXED_TOL)
    if null.shape[1] != 1:
        raise DecompositionError(f"block has a {null.shape[1]}-dimensional fixed space")
    sigma = unvec(null[:, 0], sub.dim)
    sigma = project_to_state(sigma / np.trace(sigma))
    return basis @ sigma @ dagger(basis)


def _snap(basis, tol=1e-14):
    q = np.where(np.abs(basis) < tol, 0.0, basis)
    q, _ = np.linalg.qr(q)
    return np.where(np.abs(q) < tol, 0.0, q)


def _order_key(basis):
    diag = np.sum(np.abs(basis) ** 2, axis=1)
    first = int(np.flatnonzero(diag > 1e-6)[0])
    return (first, -round(float(diag[first]), 6))


def certificate_residuals(ch: KrausChannel, projectors, states):
    d = ch.dim
    eye = np.eye(d)
    res = {
        "projector": 0.0, "completeness": 0.0, "dual_invariance": 0.0,
        "commutation": 0.0, "support": 0.0, "pairing": 0.0,
        "primal_invariance": 0.0, "min_support_eigenvalue": np.inf,
    }
    for m in projectors:
        res["projector"] = max(res["projector"], np.abs(m @ m - m).max(), np.abs(m - dagger(m)).max())
        res["dual_invariance"] = max(res["dual_invariance"], np.abs(apply_adjoint(ch, m) - m).max())
        res["commutation"] = max(res["commutation"], np.abs(m @ ch.ops - ch.ops @ m).max())
    res["completeness"] = float(np.abs(projectors.sum(axis=0) - eye).max())
    for a, (m, rho) in enumerate(zip(projectors, states)):
        res["support"] = max(res["support"], np.abs(m @ rho @ m - rho).max())
        res["primal_invariance"] = max(res["primal_invariance"], np.abs(apply_channel(ch, rho) - rho).max())
        w, q = eig_hermitian(m)
        basis = q[:, w > 0.5]
        lo = np.linalg.eigvalsh(hermitize(dagger(basis) @ rho @ basis))[0]
        res["min_support_eigenvalue"] = min(res["min_support_eigenvalue"], float(lo))
        for b, other in enumerate(states):
            res["pairing"] = max(res["pairing"], abs(trace(m @ other) - (a == b)))
    return {k: float(v) for k, v in res.items()}


def decompose(ch: KrausChannel, seed: int = 0, max_rounds: int = 20) -> BlockDecomposition:
    """Decompose the Hilbert space into minimal enclosures.

    A seeded random Hermitian element of the dual fixed-point space is
    diagonalized; its eigenspaces are split again until every candidate has a
    one-dimensional compressed dual fixed space (minimality).  Raises
    :class:`TransientPartError` when the channel has a transient part.
    """
    verify_no_transient(ch)
    rng = np.random.default_rng(seed)
    dual_dim = len(fixed_point_space(ch, "dual"))
    pending = [np.eye(ch.dim, dtype=complex)]
    done = []
    for _ in range(max_rounds):
        nxt = []
        for basis in pending:
            parts = _split(ch, basis, rng)
            if parts is None:
                done.append(basis)
            else:
                nxt.extend(parts)
        pending = nxt
        if not pending:
            break
    if pending:
        raise DecompositionError(
            f"refinement did not converge in {max_rounds} rounds; retry with another seed")

    bases = tuple(sorted((_snap(q) for q in done), key=_order_key))
    projectors = np.array([hermitize(q @ dagger(q)) for q in bases])
    states = np.array([_block_state(ch, q) for q in bases])
    res = certificate_residuals(ch, projectors, states)
    bad = {k: v for k, v in res.items() if k != "min_support_eigenvalue" and v > CERT_TOL}
    if bad or res["min_support_eigenvalue"] <= RANK_TOL:
        raise DecompositionError(f"decomposition certificate failed: {res}")
    dec = BlockDecomposition(bases, projectors, states, dual_fixed_dim=dual_dim,
                             residuals=res, seed=seed)
    m, per_block = compute_period(ch, dec)
    lam = subperipheral_radius(ch, dec)
    dec = BlockDecomposition(bases, projectors, states, m, per_block, (lam, 0.0),
                             dual_dim, res, seed)
    c = _fit_mixing_constant(ch, dec, lam, rng)
    return BlockDecomposition(bases, projectors, states, m, per_block, (lam, c),
                              dual_dim, res, seed)


def block_spectrum(ch: KrausChannel, dec: BlockDecomposition, alpha: int):
    """Eigenvalues of the superoperator compressed to block ``alpha``, by decreasing modulus."""
    sub = ch.restrict(dec.bases[alpha])
    ev = np.linalg.eigvals(superoperator_matrix(sub))
    return ev[np.argsort(-np.abs(ev), kind="stable")]


def _block_period(ev):
    peripheral = ev[np.abs(ev) >= 1 - PERIPHERAL_TOL]
    m = len(peripheral)
    if m == 0:
        raise PeriodError("no peripheral eigenvalue found")
    angles = np.sort(np.mod(np.angle(peripheral), 2 * np.pi))
    expected = 2 * np.pi * np.arange(m) / m
    dist = np.abs(np.exp(1j * angles) - np.exp(1j * expected))
    if dist.max() > 1e-6 or np.abs(np.abs(peripheral) - 1).max() > 1e-6:
        raise PeriodError(f"peripheral spectrum {peripheral} is not a cyclic group")
    return m


def compute_period(ch: KrausChannel, dec: BlockDecomposition):
    """Global period ``m`` (lcm) and the per-block periods."""
    per_block = tuple(_block_period(block_spectrum(ch, dec, a)) for a in range(dec.n_blocks))
    return reduce(math.lcm, per_block, 1), per_block


def subperipheral_radius(ch: KrausChannel, dec: BlockDecomposition) -> float:
    """Largest modulus among non-peripheral block eigenvalues (0 if none)."""
    lam = 0.0
    for a in range(dec.n_blocks):
        ev = np.abs(block_spectrum(ch, dec, a))
        inner = ev[ev < 1 - PERIPHERAL_TOL]
        if inner.size:
            lam = max(lam, float(inner.max()))
    return lam


def cesaro_distance(ch: KrausChannel, dec: BlockDecomposition, rho, alpha: int, k: int) -> float:
    """Trace distance of the period-averaged ``Phi^{k+r}(rho)`` from the block's invariant state."""
    w = dec.weights(rho)[alpha]
    if w <= 1 - 1e-10:
        raise NotInBlockError(f"state has weight {w:.12f} on block {alpha}")
    x = np.asarray(rho, dtype=complex)
    for _ in range(k):
        x = apply_channel(ch, x)
    avg = np.zeros_like(x)
    for _ in range(dec.period):
        avg += x
        x = apply_channel(ch, x)
    return trace_norm_hermitian(avg / dec.period - dec.states[alpha])


def _fit_mixing_constant(ch, dec, lam, rng, n_samples=4, k_max=30):
    c = 0.0
    for a in range(dec.n_blocks):
        for _ in range(n_samples):
            rho = dec.embed(random_state(dec.dims[a], rng, rank=1), a)
            for k in range(k_max + 1):
                dist = cesaro_distance(ch, dec, rho, a, k)
                if dist < 1e-13:
                    break
                c = max(c, dist / lam ** k if lam > 0 else dist)
    return c
