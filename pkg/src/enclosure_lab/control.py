"""Measurement-based feedback that stabilizes a chosen target block.

Every ``block_length`` steps a rotation ``U(u) = exp(-i u H)`` is applied.
The value ``u`` minimizes the exact expectation of ``Z = V + eps R`` at the
end of the block, conditioned on the state at the start of the block, where

    V(rho) = sqrt(1 - tr(M_t rho)),   R(rho) = sum_{b != t} sqrt(tr(M_b rho)).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .algebra import dagger, eig_hermitian, hermitize, numerical_rank, random_state, trace
from .channel import KrausChannel, apply_channel, word_operators
from .errors import ControllabilityError
from .structure import BlockDecomposition

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
TIE_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class ControlConfig:
    target: int
    hamiltonian: np.ndarray
    u_bound: float
    block_length: int = 1
    epsilon: float = 0.1
    grid_points: int = 101
    refine_iters: int = 30

    def __post_init__(self):
        h = np.asarray(self.hamiltonian, dtype=complex)
        if h.ndim != 2 or h.shape[0] != h.shape[1]:
            raise ValueError("hamiltonian must be a square matrix")
        if np.abs(h - dagger(h)).max() > 1e-12:
            raise ValueError("hamiltonian must be Hermitian")
        object.__setattr__(self, "hamiltonian", hermitize(h))
        if self.u_bound < 0 or not np.isfinite(self.u_bound):
            raise ValueError("u_bound must be a finite non-negative number")
        if self.block_length < 1:
            raise ValueError("block_length must be at least 1")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.grid_points < 3 or self.grid_points % 2 == 0:
            raise ValueError("grid_points must be odd and at least 3")


def vrz_from_weights(weights, target: int, epsilon: float):
    """``(V, R, Z)`` from block weights of shape ``(..., l)``.

    ``V`` is computed from the off-target weights directly so that it keeps
    relative precision near the target.
    """
    w = np.clip(np.asarray(weights, dtype=float), 0.0, None)
    off = np.delete(w, target, axis=-1)
    v = np.sqrt(off.sum(axis=-1))
    r = np.sqrt(off).sum(axis=-1)
    return v, r, v + epsilon * r


def lyapunov_VRZ(dec: BlockDecomposition, target: int, epsilon: float, rho):
    v, r, z = vrz_from_weights(dec.weights(rho), target, epsilon)
    if np.ndim(v) == 0:
        return float(v), float(r), float(z)
    return v, r, z


@dataclass(frozen=True)
class Controllability:
    certified: bool
    rank: int
    required: int


def check_controllability(dec: BlockDecomposition, target: int, h, tol: float = 1e-10) -> Controllability:
    """Projected-rank test: do ``H^k phi_j`` reach every direction off the target block?

    ``phi_j`` runs over a basis of the target block and ``k = 1..d``; the
    columns are projected onto the complement of the target block.
    """
    h = np.asarray(h, dtype=complex)
    d = h.shape[0]
    phi = dec.bases[target]
    cols = []
    x = phi
    for _ in range(d):
        x = h @ x
        cols.append(x)
    m = (np.eye(d) - dec.projectors[target]) @ np.concatenate(cols, axis=1)
    required = d - phi.shape[1]
    if required == 0:
        return Controllability(True, 0, 0)
    scale = max(1.0, float(np.abs(np.concatenate(cols, axis=1)).max()))
    rank = numerical_rank(m, tol) if np.abs(m).max() > tol * scale else 0
    return Controllability(rank == required, rank, required)


class RotationFamily:
    """``U(u) = I + Q (exp(-i u lambda) - 1) Q^dagger`` for a fixed Hermitian ``H``.

    Writing the unitary as a correction to the identity makes ``U(0)`` exactly
    the identity and keeps small rotations accurate.
    """

    def __init__(self, h):
        self.lam, self.q = eig_hermitian(h)
        self.q_h = dagger(self.q)
        self.dim = len(self.lam)

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        phase = np.expm1(-1j * u[..., None] * self.lam)
        return np.eye(self.dim) + (self.q * phase[..., None, :]) @ self.q_h


def _rotated_weights(dec, rot, xs, unit):
    """Block weights of ``U X U^dagger`` for word stacks ``xs`` of shape ``(P, K, d, d)``."""
    unit = unit[:, None] if unit.ndim == 3 else unit
    return dec.weights(unit @ xs @ dagger(unit))


def _objective_from_weights(wts, mass, target, epsilon):
    off = np.clip(np.delete(wts, target, axis=-1), 0.0, None)
    v_part = np.sqrt(mass * off.sum(axis=-1))
    r_part = np.sqrt(mass[..., None] * off).sum(axis=-1)
    return (v_part + epsilon * r_part).sum(axis=-1)


def expected_Z_of_u(ch: KrausChannel, dec: BlockDecomposition, cfg: ControlConfig, anchor, u) -> float:
    """Exact ``E[Z(U(u) rho_N U(u)^dagger) | rho_0 = anchor]`` with ``N = cfg.block_length``."""
    ctl = FeedbackController(ch, dec, cfg, certify=False)
    return float(ctl.objective(np.asarray(anchor)[None], np.array([float(u)]))[0])


def argmin_batched(fun, u_bound: float, n_paths: int, grid_points: int = 101, refine_iters: int = 30):
    """Minimize ``fun(u) -> (P,)`` over ``[-u_bound, u_bound]`` separately per row.

    A uniform grid (containing 0 and the end points) picks the best point,
    ties going to the smallest ``|u|`` and then to the negative side.  A
    golden-section search in the neighbouring grid bracket then replaces it
    only if it finds a strictly lower value.
    """
    if u_bound == 0:
        return np.zeros(n_paths)
    grid = np.linspace(-u_bound, u_bound, grid_points)
    grid[grid_points // 2] = 0.0
    vals = np.stack([fun(np.full(n_paths, g)) for g in grid], axis=1)
    vmin = vals.min(axis=1, keepdims=True)
    ties = vals <= vmin + TIE_TOL * np.maximum(1.0, np.abs(vmin))
    order = np.lexsort((grid > 0, np.abs(grid)))
    rank = np.empty(grid_points, dtype=int)
    rank[order] = np.arange(grid_points)
    j = np.where(ties, rank[None, :], grid_points).argmin(axis=1)
    rows = np.arange(n_paths)
    best_u, best_v = grid[j], vals[rows, j]
    if refine_iters <= 0:
        return best_u
    a = grid[np.maximum(j - 1, 0)]
    b = grid[np.minimum(j + 1, grid_points - 1)]
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = fun(c), fun(d)
    for _ in range(refine_iters):
        left = fc < fd
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        new = np.where(left, b - GOLDEN * (b - a), a + GOLDEN * (b - a))
        fn = fun(new)
        c, d, fc, fd = (np.where(left, new, d), np.where(left, c, new),
                        np.where(left, fn, fd), np.where(left, fc, fn))
    cand = np.where(fc <= fd, c, d)
    fcand = np.minimum(fc, fd)
    better = fcand < best_v
    return np.where(better, cand, best_u)


def argmin_scalar(fun, u_bound: float, grid_points: int = 101, refine_iters: int = 30) -> float:
    """Scalar version of :func:`argmin_batched`."""
    def vec(u):
        return np.array([fun(float(u[0]))])
    return float(argmin_batched(vec, u_bound, 1, grid_points, refine_iters)[0])


class FeedbackController:
    """Every-``N'``-steps argmin controller, batched over paths.

    The controller is stateless: the simulator keeps the per-path anchors and
    calls :meth:`plan` at block starts and :meth:`unitaries` at block ends.
    """

    def __init__(self, ch: KrausChannel, dec: BlockDecomposition, cfg: ControlConfig,
                 uniform_length: int | None = None, certify: bool = True, budget: int | None = None):
        if not 0 <= cfg.target < dec.n_blocks:
            raise ValueError(f"target block {cfg.target} out of range")
        if cfg.hamiltonian.shape != (ch.dim, ch.dim):
            raise ValueError("hamiltonian dimension does not match the channel")
        if certify:
            c = check_controllability(dec, cfg.target, cfg.hamiltonian)
            if not c.certified:
                raise ControllabilityError(c.rank, c.required)
        if uniform_length is not None and cfg.block_length < uniform_length:
            raise ValueError(f"block_length {cfg.block_length} is below the uniform length {uniform_length}")
        self.ch, self.dec, self.config = ch, dec, cfg
        self.block_length = cfg.block_length
        self.rotation = RotationFamily(cfg.hamiltonian)
        self.word_ops = word_operators(ch, cfg.block_length, budget)

    def unitaries(self, u):
        return self.rotation(u)

    def word_states(self, anchors):
        ops = self.word_ops
        return ops[None] @ anchors[:, None] @ dagger(ops)[None]

    def objective(self, anchors, u, xs=None):
        """Exact block-end expectation of ``Z`` for each anchor and its own ``u``."""
        xs = self.word_states(anchors) if xs is None else xs
        mass = np.clip(trace(xs), 0.0, None)
        wts = _rotated_weights(self.dec, self.rotation, xs, self.rotation(u))
        return _objective_from_weights(wts, mass, self.config.target, self.config.epsilon)

    def plan(self, anchors):
        """Control values for a stack of block-start states."""
        cfg = self.config
        if cfg.u_bound == 0:
            return np.zeros(len(anchors))
        xs = self.word_states(anchors)
        return argmin_batched(lambda u: self.objective(anchors, u, xs), cfg.u_bound,
                              len(anchors), cfg.grid_points, cfg.refine_iters)


def block_expectation(controller: FeedbackController, anchor, u=None):
    """Exact block-end expectations ``(E V, E R, E Z)`` from ``anchor`` under control ``u``.

    ``u=None`` uses the controller's own choice.
    """
    anchor = np.asarray(anchor, dtype=complex)[None]
    u = controller.plan(anchor) if u is None else np.array([float(u)])
    xs = controller.word_states(anchor)
    unit = controller.rotation(u)
    wts = controller.dec.weights(unit[:, None] @ xs @ dagger(unit)[:, None])
    mass = np.clip(trace(xs), 0.0, None)[..., None]
    ratio = np.where(mass > 0, wts / np.where(mass > 0, mass, 1.0), 0.0)
    v, r, z = vrz_from_weights(ratio, controller.config.target, controller.config.epsilon)
    m = mass[..., 0]
    return float((m * v).sum()), float((m * r).sum()), float((m * z).sum())


def _best_recovery(ch, dec, cfg, rho, rotation):
    """``max_u tr(M_t U(u) Phi^N(rho) U(u)^dagger)`` over ``[-ubar, ubar]``."""
    x = rho
    for _ in range(cfg.block_length):
        x = apply_channel(ch, x)
    m = dec.projectors[cfg.target]

    def neg(u):
        unit = rotation(u)
        return -trace(m @ unit @ x[None] @ dagger(unit))

    u = argmin_batched(neg, cfg.u_bound, 1, cfg.grid_points, cfg.refine_iters)
    return float(-neg(u)[0])


def estimate_delta0(ch: KrausChannel, dec: BlockDecomposition, cfg: ControlConfig,
                    samples: int = 64, restarts: int = 3, eta_probe: float = 0.25, seed: int = 0):
    """Diagnostic estimate of the recovery margin on states supported off the target.

    Minimizes ``max_u tr(M_t U(u) Phi^N(rho) U(u)^dagger)`` over random states
    of the off-target subspace followed by local Nelder-Mead descents from the
    best samples.  Returns ``(delta0_hat, found_minimum)`` with
    ``delta0_hat = min(found / 2, eta_probe)``.  Not a certificate.
    """
    rng = np.random.default_rng(seed)
    off = np.eye(ch.dim) - dec.projectors[cfg.target]
    w, q = eig_hermitian(off)
    basis = q[:, w > 0.5]
    k = basis.shape[1]
    rotation = RotationFamily(cfg.hamiltonian)

    def value(sigma):
        return _best_recovery(ch, dec, cfg, basis @ sigma @ dagger(basis), rotation)

    def from_params(x):
        a = (x[:k * k] + 1j * x[k * k:]).reshape(k, k)
        s = a @ dagger(a)
        return s / trace(s)

    draws = [np.eye(k) / k] + [random_state(k, rng) for _ in range(samples - 1)]
    vals = [value(s) for s in draws]
    found = min(vals)
    for i in np.argsort(vals)[:restarts]:
        a0 = np.linalg.cholesky(draws[i] + 1e-12 * np.eye(k))
        x0 = np.concatenate([a0.real.ravel(), a0.imag.ravel()])
        res = minimize(lambda x: value(from_params(x)), x0, method="Nelder-Mead",
                       options={"maxiter": 200 * k * k, "xatol": 1e-8, "fatol": 1e-12})
        found = min(found, float(res.fun))
    found = max(found, 0.0)
    return min(found / 2.0, eta_probe), found


@dataclass(frozen=True)
class EpsilonChoice:
    epsilon: float
    delta: float | None
    delta0: float | None
    kappa_prime: float | None
    rule: str

    def as_dict(self):
        return {"epsilon": self.epsilon, "delta": self.delta, "delta0_hat": self.delta0,
                "kappa_prime": self.kappa_prime, "rule": self.rule}


def choose_epsilon(delta0: float | None, kappa_prime: float | None, n_blocks: int) -> EpsilonChoice:
    """Pick an admissible weight ``eps`` for the ``R`` term.

    With ``delta = min(delta0, (1 - kappa')^2) / 2`` the admissibility bound is
    ``(sqrt(1 - delta) - sqrt(1 - 2 delta0)) / sqrt(l - 1)``; half of it is
    used.  Without a positive ``delta0`` (or ``kappa' >= 1``) the fallback is
    ``0.1 / sqrt(l - 1)``.
    """
    root = math.sqrt(max(n_blocks - 1, 1))
    if delta0 is None or delta0 <= 0 or kappa_prime is None or kappa_prime >= 1:
        return EpsilonChoice(0.1 / root, None, delta0, kappa_prime, "fallback")
    d0 = min(delta0, 0.5)
    delta = min(d0, (1.0 - kappa_prime) ** 2) / 2.0
    bound = (math.sqrt(1.0 - delta) - math.sqrt(1.0 - 2.0 * d0)) / root
    return EpsilonChoice(0.5 * bound, delta, delta0, kappa_prime, "half admissibility bound")
