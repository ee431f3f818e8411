"""Dense complex linear algebra used throughout the package.

Matrices are plain ``numpy`` arrays of dtype ``complex128``.  Most helpers
accept a single ``(d, d)`` matrix or a stack ``(..., d, d)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateStateError, DimensionError


@dataclass(frozen=True)
class Tolerances:
    """Numerical hygiene knobs, shared by every module."""

    eig_clamp: float = 1e-10      # eigenvalues above -eig_clamp are tolerated in a state
    trace_tol: float = 1e-10
    min_trace: float = 1e-14      # below this a clamped operator is degenerate
    prob_floor: float = 1e-12     # outcomes below this probability are never sampled
    node_budget: int = 10 ** 7


TOL = Tolerances()


def _as_square(a, name="matrix"):
    a = np.asarray(a)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise DimensionError(f"{name} must be square, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has non-finite entries")
    return a.astype(complex, copy=False)


def dagger(a):
    return np.conj(np.swapaxes(a, -1, -2))


def hermitize(a):
    """Return ``(a + a^dagger) / 2``."""
    a = _as_square(a)
    return 0.5 * (a + dagger(a))


def trace(a):
    """Real part of the trace, batched over leading axes."""
    return np.real(np.trace(a, axis1=-2, axis2=-1))


def project_to_state(a, tol: Tolerances = TOL):
    """Clamp negative eigenvalues to zero and rescale to unit trace.

    >>> project_to_state(np.diag([2.0, 0.0])).real
    array([[1., 0.],
           [0., 0.]])
    """
    h = hermitize(a)
    w, q = np.linalg.eigh(h)
    w = np.clip(w, 0.0, None)
    s = w.sum(axis=-1)
    if np.any(s <= tol.min_trace):
        raise DegenerateStateError(f"trace {np.min(s):.3e} after clamping is effectively zero")
    w = w / s[..., None]
    return hermitize((q * w[..., None, :]) @ dagger(q))


def sanitize_state(a, tol: Tolerances = TOL):
    """Cheap per-step hygiene for simulated states.

    Hermitizes and renormalizes; the eigen-reconstruction of
    :func:`project_to_state` is only applied to matrices whose smallest
    eigenvalue falls below ``-tol.eig_clamp``.  Reconstructing every step
    would add an absolute error of order 1e-16 to every entry and erase the
    relative precision of exponentially small block weights.
    """
    h = hermitize(a)
    t = trace(h)
    if np.any(t <= tol.min_trace):
        raise DegenerateStateError(f"trace {np.min(t):.3e} is effectively zero")
    h = h / t[..., None, None]
    lo = np.linalg.eigvalsh(h)[..., 0]
    bad = lo < -tol.eig_clamp
    if np.any(bad):
        if h.ndim == 2:
            return project_to_state(h, tol)
        h = h.copy()
        h[bad] = project_to_state(h[bad], tol)
    return h


def is_state(rho, tol: Tolerances = TOL) -> bool:
    rho = np.asarray(rho)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        return False
    if np.abs(rho - dagger(rho)).max() > 1e-12:
        return False
    if abs(trace(rho) - 1.0) > tol.trace_tol:
        return False
    return bool(np.linalg.eigvalsh(hermitize(rho))[0] >= -tol.eig_clamp)


def eig_hermitian(a):
    """Ascending eigenvalues and orthonormal eigenvectors (columns)."""
    return np.linalg.eigh(hermitize(a))


def expm_i(h, u):
    """``exp(-i u h)`` for Hermitian ``h`` via its spectral decomposition."""
    w, q = eig_hermitian(h)
    return (q * np.exp(-1j * u * w)) @ dagger(q)


def numerical_rank(m, tol: float = 1e-10) -> int:
    """Number of singular values above ``tol`` times the largest one."""
    m = np.asarray(m)
    if m.size == 0:
        return 0
    s = np.linalg.svd(m, compute_uv=False)
    if s[0] == 0.0:
        return 0
    return int(np.sum(s > tol * s[0]))


def trace_norm_hermitian(a) -> float:
    """Trace norm of a Hermitian matrix: the sum of absolute eigenvalues."""
    return float(np.abs(np.linalg.eigvalsh(hermitize(a))).sum())


def orthonormal_range(p, tol: float = 1e-8):
    """Orthonormal basis (columns) of the range of a Hermitian PSD matrix."""
    w, q = eig_hermitian(p)
    return q[:, w > tol]


def random_state(d: int, rng, rank: int | None = None):
    """Random density matrix of dimension ``d`` (Ginibre construction)."""
    k = d if rank is None else rank
    g = rng.standard_normal((d, k)) + 1j * rng.standard_normal((d, k))
    rho = g @ dagger(g)
    return hermitize(rho / trace(rho))


def random_hermitian(d: int, rng):
    g = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    return hermitize(g)
