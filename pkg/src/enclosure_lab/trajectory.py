"""Seeded Monte Carlo quantum trajectories, the Lyapunov function W and rate fits.

Paths are simulated in fixed-size chunks of ``CHUNK`` paths, vectorized over
the chunk.  Path ``p`` draws its uniforms from
``SeedSequence(master_seed, spawn_key=(p,))``, so an ensemble depends only on
``(master_seed, M, n_max)`` and never on how chunks are spread over threads.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .algebra import TOL, Tolerances, dagger, hermitize, sanitize_state, trace
from .channel import KrausChannel, WordStream, word_states
from .errors import DegenerateStateError, SimulationError
from .structure import BlockDecomposition

CHUNK = 256
MAX_FAILED_FRACTION = 1e-3
DIRECT_WORD_LIMIT = 2 ** 16


def w_from_weights(weights):
    """``W`` from block weights ``(..., l)``: the sum over ``a < b`` of ``sqrt(w_a w_b)``.

    Summing the pairs explicitly (rather than ``((sum sqrt w)^2 - sum w) / 2``)
    keeps relative precision when ``W`` is tiny.
    """
    s = np.sqrt(np.clip(np.asarray(weights, dtype=float), 0.0, None))
    ell = s.shape[-1]
    out = np.zeros(s.shape[:-1])
    for a in range(ell):
        for b in range(a + 1, ell):
            out = out + s[..., a] * s[..., b]
    return out


def lyapunov_W(dec: BlockDecomposition, rho):
    """``W(rho) = 1/2 sum_{a != b} sqrt(tr(M_a rho) tr(M_b rho))``.

    Also accepts unnormalized operators (``W`` is homogeneous of degree one)
    and stacks of them.
    """
    w = w_from_weights(dec.weights(rho))
    return float(w) if np.ndim(w) == 0 else w


@dataclass
class TrajectoryEnsemble:
    """Per-path, per-step functionals of a simulated ensemble.

    ``weights[p, n, a]`` is ``tr(M_a rho_n)`` on path ``p``; ``outcomes[p, n]``
    is the outcome of the step ``n -> n + 1``.  ``V``, ``Z`` and ``controls``
    are filled when a controller (or a target block) is attached.
    """

    master_seed: int
    n_paths: int
    n_steps: int
    outcomes: np.ndarray
    weights: np.ndarray
    W: np.ndarray
    V: np.ndarray | None = None
    Z: np.ndarray | None = None
    controls: np.ndarray | None = None
    states: np.ndarray | None = None
    failed: dict = field(default_factory=dict)
    target: int | None = None
    epsilon: float | None = None

    def mean(self, name: str = "W"):
        return getattr(self, name).mean(axis=0)

    def std_error(self, name: str = "W"):
        x = getattr(self, name)
        if self.n_paths < 2:
            return np.zeros(x.shape[1:])
        return x.std(axis=0, ddof=1) / np.sqrt(self.n_paths)

    @property
    def final_weights(self):
        return self.weights[:, -1]


def _path_uniforms(master_seed: int, paths, n_steps: int):
    out = np.empty((len(paths), n_steps))
    for row, p in enumerate(paths):
        ss = np.random.SeedSequence(master_seed, spawn_key=(int(p),))
        out[row] = np.random.default_rng(ss).random(n_steps)
    return out


def sample_outcomes(probs, uniforms, prob_floor: float = TOL.prob_floor):
    """Inverse-CDF sampling, one outcome per row.

    Probabilities below ``prob_floor`` are never sampled.  The outcome is the
    first index whose cumulative sum exceeds the uniform draw; a draw beyond
    the (rounded) total falls on the last outcome with positive probability.
    """
    p = np.where(probs < prob_floor, 0.0, probs)
    total = p.sum(axis=1, keepdims=True)
    cum = np.cumsum(p / total, axis=1)
    exceed = cum > uniforms[:, None]
    idx = exceed.argmax(axis=1)
    k = p.shape[1]
    last = k - 1 - (p[:, ::-1] > 0).argmax(axis=1)
    return np.where(exceed.any(axis=1), idx, last)


def _simulate_chunk(ch, dec, rho0, paths, n_steps, master_seed, controller, store_states, tol):
    P = len(paths)
    d = ch.dim
    ops, ops_h = ch.ops, dagger(ch.ops)
    uniforms = _path_uniforms(master_seed, paths, n_steps)
    rho = np.broadcast_to(rho0, (P, d, d)).copy()
    outcomes = np.full((P, n_steps), -1, dtype=np.int64)
    weights = np.empty((P, n_steps + 1, dec.n_blocks))
    weights[:, 0] = dec.weights(rho)
    controls = np.zeros((P, n_steps)) if controller is not None else None
    states = None
    if store_states:
        states = np.empty((P, n_steps + 1, d, d), dtype=complex)
        states[:, 0] = rho
    alive = np.ones(P, dtype=bool)
    failed = {}
    pending = np.zeros(P)
    block = controller.block_length if controller is not None else 0
    rows = np.arange(P)
    for n in range(n_steps):
        if controller is not None and n % block == 0:
            pending = controller.plan(rho)
        x = ops[None] @ rho[:, None] @ ops_h[None]
        probs = trace(x)
        idx = sample_outcomes(probs, uniforms[:, n], tol.prob_floor)
        chosen = x[rows, idx]
        p_chosen = probs[rows, idx]
        dead = alive & (p_chosen <= tol.min_trace)
        for r in np.flatnonzero(dead):
            failed[int(paths[r])] = n
        alive &= ~dead
        live = np.flatnonzero(alive)
        if live.size:
            try:
                rho[live] = sanitize_state(chosen[live], tol)
            except DegenerateStateError:
                for r in live:
                    try:
                        rho[r] = sanitize_state(chosen[r], tol)
                    except DegenerateStateError:
                        failed[int(paths[r])] = n
                        alive[r] = False
        outcomes[alive, n] = idx[alive]
        if controller is not None and (n + 1) % block == 0:
            u = np.where(alive, pending, 0.0)
            fire = np.flatnonzero(u != 0.0)
            if fire.size:
                unit = controller.unitaries(u[fire])
                rho[fire] = hermitize(unit @ rho[fire] @ dagger(unit))
            controls[:, n] = u
        weights[:, n + 1] = dec.weights(rho)
        if store_states:
            states[:, n + 1] = rho
    return outcomes, weights, controls, states, failed


def simulate_ensemble(ch: KrausChannel, dec: BlockDecomposition, rho0, n_paths: int, n_steps: int,
                      master_seed: int = 0, controller=None, store_states: bool = False,
                      threads: int = 1, target: int | None = None, epsilon: float | None = None,
                      tol: Tolerances = TOL) -> TrajectoryEnsemble:
    """Simulate ``n_paths`` trajectories for ``n_steps`` measurement steps.

    With a controller attached, its unitary is applied after the measurement
    at every step ``n`` with ``(n + 1) % block_length == 0``, using the value
    planned from the state at the start of the block.
    """
    if n_paths < 1 or n_steps < 1:
        raise ValueError("need at least one path and one step")
    rho0 = sanitize_state(np.asarray(rho0, dtype=complex), tol)
    chunks = [np.arange(a, min(a + CHUNK, n_paths)) for a in range(0, n_paths, CHUNK)]

    def run(paths):
        return _simulate_chunk(ch, dec, rho0, paths, n_steps, master_seed, controller, store_states, tol)

    if threads and threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, chunks))
    else:
        parts = [run(c) for c in chunks]

    failed = {}
    for part in parts:
        failed.update(part[4])
    if len(failed) > MAX_FAILED_FRACTION * n_paths:
        raise SimulationError(f"{len(failed)} of {n_paths} paths collapsed to a zero-trace state")

    weights = np.concatenate([p[1] for p in parts])
    ens = TrajectoryEnsemble(
        master_seed=master_seed, n_paths=n_paths, n_steps=n_steps,
        outcomes=np.concatenate([p[0] for p in parts]),
        weights=weights, W=w_from_weights(weights), failed=dict(sorted(failed.items())),
    )
    if controller is not None:
        ens.controls = np.concatenate([p[2] for p in parts])
        target = controller.config.target if target is None else target
        epsilon = controller.config.epsilon if epsilon is None else epsilon
    if store_states:
        ens.states = np.concatenate([p[3] for p in parts])
    if target is not None:
        from .control import vrz_from_weights
        ens.target = target
        ens.epsilon = 0.0 if epsilon is None else epsilon
        ens.V, _, ens.Z = vrz_from_weights(weights, target, ens.epsilon)
    return ens


def exact_expectation_W(ch: KrausChannel, dec: BlockDecomposition, rho, k: int, budget: int | None = None):
    """``E[W(rho_k) | rho_0 = rho]`` as an exact sum over all outcome words of length ``k``.

    Each word contributes ``W(V_I rho V_I^dagger)`` in unnormalized form, which
    equals its probability times ``W`` of the conditioned state.  ``rho`` may
    be a stack ``(P, d, d)``.
    """
    rho = np.asarray(rho, dtype=complex)
    if k == 0:
        return lyapunov_W(dec, rho)
    if ch.n_outcomes ** k <= DIRECT_WORD_LIMIT:
        x = word_states(ch, rho, k, budget)
        return lyapunov_W(dec, x).sum(axis=-1)
    if rho.ndim == 3:
        return np.array([exact_expectation_W(ch, dec, r, k, budget) for r in rho])
    return float(sum(lyapunov_W(dec, node.unnormalized_state) for node in WordStream(ch, rho, k, 0.0, budget)))


@dataclass(frozen=True)
class SelectionStats:
    frequencies: np.ndarray
    std_errors: np.ndarray
    undecided: float
    assignments: np.ndarray
    threshold: float


def selection_statistics(ens: TrajectoryEnsemble, threshold: float = 0.99) -> SelectionStats:
    """Assign each path to the block holding more than ``threshold`` of its final weight.

    Paths with no such block stay undecided (assignment ``-1``).
    """
    if not 0.5 < threshold < 1.0:
        raise ValueError("threshold must lie in (0.5, 1)")
    final = ens.final_weights
    hit = final > threshold
    assign = np.where(hit.any(axis=1), hit.argmax(axis=1), -1)
    m = ens.n_paths
    freq = np.array([(assign == a).sum() / m for a in range(final.shape[1])])
    se = np.sqrt(freq * (1 - freq) / m)
    return SelectionStats(freq, se, float((assign < 0).sum() / m), assign, threshold)


@dataclass(frozen=True)
class RateFit:
    """Least-squares fit of ``log(mean)`` against the step index."""

    window: tuple
    gamma: float
    slope: float
    intercept: float
    residual_rms: float
    n_points: int
    mean_floor: float
    method: str = "ols-log-mean"

    def as_dict(self):
        return {"window": list(self.window), "gamma": self.gamma, "slope": self.slope,
                "intercept": self.intercept, "residual_rms": self.residual_rms,
                "n_points": self.n_points, "mean_floor": self.mean_floor, "method": self.method}


def default_window(n_steps: int):
    return (int(round(0.1 * n_steps)), int(round(0.75 * n_steps)))


def fit_rate(series, window=None, mean_floor: float = 1e-12) -> RateFit:
    """Fit ``mean_n ~ C exp(-gamma n)`` on the inclusive step window.

    Steps whose mean is below ``mean_floor`` (or not positive) are skipped.
    """
    y = np.asarray(series, dtype=float)
    n_steps = len(y) - 1
    n0, n1 = default_window(n_steps) if window is None else (int(window[0]), int(window[1]))
    if not 0 <= n0 < n1 <= n_steps:
        raise ValueError(f"window [{n0}, {n1}] is not inside the horizon [0, {n_steps}]")
    if n1 - n0 < 10:
        raise ValueError("rate-fit window must span at least 10 steps")
    n = np.arange(n0, n1 + 1)
    seg = y[n0:n1 + 1]
    ok = np.isfinite(seg) & (seg > 0) & (seg >= mean_floor)
    if ok.sum() < 10:
        raise ValueError(f"only {int(ok.sum())} usable points in the rate-fit window")
    n, logy = n[ok], np.log(seg[ok])
    slope, intercept = np.polyfit(n, logy, 1)
    resid = logy - (slope * n + intercept)
    return RateFit((n0, n1), float(-slope), float(slope), float(intercept),
                   float(np.sqrt(np.mean(resid ** 2))), int(ok.sum()), float(mean_floor))


def intercept_bound(kappa: float, n_blocks: int) -> float:
    """Soft bound ``kappa^-1 (l - 1) / 2`` on the prefactor of the mean decay of ``W``."""
    return (n_blocks - 1) / 2 / kappa
