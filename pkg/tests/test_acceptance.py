"""Acceptance suite: ten end-to-end checks at their stated tolerances.

Each test records one PASS/FAIL line; the lines are printed together at the
end of the pytest run (see ``conftest.py``) and when this file is executed
directly with ``python tests/test_acceptance.py``.
"""
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.linalg import block_diag

from enclosure_lab import systems
from enclosure_lab.algebra import dagger, random_state
from enclosure_lab.channel import KrausChannel
from enclosure_lab.cli import main as cli_main
from enclosure_lab.control import ControlConfig, FeedbackController
from enclosure_lab.identify import analyze_identifiability, compute_kappa
from enclosure_lab.scenario import load_scenario
from enclosure_lab.structure import cesaro_distance, decompose
from enclosure_lab.trajectory import (exact_expectation_W, fit_rate, lyapunov_W,
                                      selection_statistics, simulate_ensemble)

SCENARIOS = Path(__file__).resolve().parents[1] / "scenarios"
RESULTS = {}
KAPPA_A_ORACLE = np.sqrt(0.24) + np.sqrt(0.14)


def record(number, title, checks):
    """``checks`` is a list of ``(label, ok)``; returns overall pass."""
    ok = all(c for _, c in checks)
    detail = "; ".join(f"{label} [{'ok' if c else 'FAIL'}]" for label, c in checks)
    line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    RESULTS[number] = line
    print(line)
    return ok


def _one_step_words(ch, rhos):
    return ch.ops[None] @ rhos[:, None] @ dagger(ch.ops)[None]


def test_c01_exact_identities():
    checks = []
    for name, ch in [("A", systems.system_a()), ("B", systems.system_b()), ("QND3", systems.qnd3())]:
        dec = decompose(ch)
        rng = np.random.default_rng(2024)
        rhos = np.array([random_state(ch.dim, rng) for _ in range(1000)])
        x = _one_step_words(ch, rhos)
        mart = np.abs(dec.weights(x).sum(axis=1) - dec.weights(rhos)).max()
        sup = (lyapunov_W(dec, x).sum(axis=1) - lyapunov_W(dec, rhos)).max()
        res = dec.residuals
        cert = max(res["projector"], res["commutation"], res["dual_invariance"], res["pairing"])
        checks += [(f"{name} martingale {mart:.1e}", mart <= 1e-10),
                   (f"{name} W supermartingale excess {sup:.1e}", sup <= 1e-10),
                   (f"{name} certificate {cert:.1e}", cert <= 1e-9)]
    assert record(1, "exact identities on 1000 random states", checks)


def test_c02_contraction_constant():
    t0 = time.perf_counter()
    ch_a = systems.system_a()
    dec_a = decompose(ch_a)
    rep_a = analyze_identifiability(ch_a, dec_a)
    ch_c = systems.system_c()
    dec_c = decompose(ch_c)
    kappa_c, per_c = compute_kappa(ch_c, dec_c, 1)
    gaps = list(rep_a.kappa_gaps.values()) + [r.gap for r in per_c.values()]
    elapsed = time.perf_counter() - t0
    checks = [(f"kappa_A={rep_a.kappa:.9f} vs {KAPPA_A_ORACLE:.9f}", abs(rep_a.kappa - KAPPA_A_ORACLE) <= 1e-6),
              (f"kappa_C={kappa_c:.12f}", abs(kappa_c - 1) <= 1e-9),
              (f"max FW gap {max(gaps):.1e}", max(gaps) <= 1e-9),
              (f"runtime {elapsed:.1f}s", elapsed < 10)]
    assert record(2, "contraction constant", checks)


def test_c03_n_step_contraction():
    t0 = time.perf_counter()
    checks = []
    for name, ch in [("A", systems.system_a()), ("B", systems.system_b())]:
        dec = decompose(ch)
        rep = analyze_identifiability(ch, dec)
        n = rep.uniform_length_N
        rng = np.random.default_rng(77)
        rhos = np.array([random_state(ch.dim, rng) for _ in range(200)])
        excess = (exact_expectation_W(ch, dec, rhos, n) - rep.kappa * lyapunov_W(dec, rhos)).max()
        checks.append((f"{name} N={n} max excess {excess:.1e}", excess <= 1e-9))
    elapsed = time.perf_counter() - t0
    checks.append((f"runtime {elapsed:.1f}s", elapsed < 60))
    assert record(3, "N-step contraction of E[W]", checks)


def test_c04_selection_law():
    t0 = time.perf_counter()
    ch = systems.system_a()
    dec = decompose(ch)
    ens = simulate_ensemble(ch, dec, np.diag([0.3, 0.7]), 2000, 200, master_seed=0)
    sel = selection_statistics(ens, 0.99)
    elapsed = time.perf_counter() - t0
    tol = 3 * np.sqrt(0.21 / 2000)
    checks = [(f"block-1 frequency {sel.frequencies[0]:.4f} (0.3 +- {tol:.3f})",
               abs(sel.frequencies[0] - 0.3) <= tol),
              (f"undecided {sel.undecided:.4f}", sel.undecided < 0.01),
              (f"runtime {elapsed:.1f}s", elapsed < 60)]
    assert record(4, "selection law", checks)


def test_c05_exponential_selection():
    t0 = time.perf_counter()
    checks = []
    for name, scen in [("A", "system_a.yaml"), ("B", "system_b.yaml")]:
        sc = load_scenario(SCENARIOS / scen)
        dec = decompose(sc.channel)
        rep = analyze_identifiability(sc.channel, dec)
        ens = simulate_ensemble(sc.channel, dec, sc.initial_state, 2000, 200, master_seed=sc.run.seed)
        fit = fit_rate(ens.mean("W"), (20, 150))
        floor_rate = -np.log(rep.kappa) / rep.uniform_length_N
        if name == "A":
            checks.append((f"A gamma={fit.gamma:.4f} >= {0.7 * floor_rate:.4f}", fit.gamma >= 0.7 * floor_rate))
        else:
            checks.append((f"B gamma={fit.gamma:.4f} > 0 (kappa rate {floor_rate:.4f})", fit.gamma > 0))
        checks.append((f"{name} residual RMS {fit.residual_rms:.3f} < 0.15", fit.residual_rms < 0.15))
    elapsed = time.perf_counter() - t0
    checks.append((f"runtime {elapsed:.1f}s", elapsed < 120))
    assert record(5, "exponential selection rate of E[W]", checks)


def test_c06_twin_blocks_never_select():
    ch = systems.system_c()
    dec = decompose(ch)
    sigma = decompose(KrausChannel(systems.block_one())).states[0]
    rho0 = block_diag(0.35 * sigma, 0.65 * sigma)
    ens = simulate_ensemble(ch, dec, rho0, 500, 200, master_seed=0)
    drift = np.abs(ens.weights[:, :, 0] - ens.weights[:, :1, 0]).max()
    sel = selection_statistics(ens)
    checks = [(f"max drift of block weight {drift:.1e}", drift <= 1e-9),
              (f"undecided {sel.undecided:.3f}", sel.undecided == 1.0)]
    assert record(6, "non-identifiable twins keep their weights", checks)


def test_c07_feedback_stabilization():
    t0 = time.perf_counter()
    sc = load_scenario(SCENARIOS / "system_a_control.yaml")
    ch = sc.channel
    dec = decompose(ch)
    rep = analyze_identifiability(ch, dec)
    spec = sc.control
    cfg = ControlConfig(spec.target, spec.hamiltonian, spec.u_bound, 1, 0.1)
    ctl = FeedbackController(ch, dec, cfg, rep.uniform_length_N)
    rho0 = np.diag([0.0, 1.0])
    ens = simulate_ensemble(ch, dec, rho0, 1000, 600, master_seed=0, controller=ctl, threads=4)
    mean_v = ens.mean("V")
    # near the target V is exact to relative precision, so only non-positive means are dropped
    fit = fit_rate(mean_v, None, mean_floor=0.0)
    freq = selection_statistics(ens).frequencies[spec.target]
    base_cfg = ControlConfig(spec.target, spec.hamiltonian, 0.0, 1, 0.1)
    base = simulate_ensemble(ch, dec, rho0, 1000, 600, master_seed=0,
                             controller=FeedbackController(ch, dec, base_cfg), threads=4)
    base_dev = np.abs(base.mean("V") - 1).max()
    elapsed = time.perf_counter() - t0
    checks = [(f"slope {fit.slope:.4f} < 0", fit.slope < 0),
              (f"gamma_ctl {fit.gamma:.4f} > 0.01", fit.gamma > 0.01),
              (f"target frequency {freq:.3f} > 0.95", freq > 0.95),
              (f"baseline |mean_V - 1| {base_dev:.1e}", base_dev <= 1e-9),
              (f"runtime {elapsed:.0f}s", elapsed < 300)]
    assert record(7, "feedback stabilization", checks)


def test_c08_quiescence():
    ch = systems.system_a()
    dec = decompose(ch)
    cfg = ControlConfig(0, systems.SIGMA_X, np.pi / 2, 1, 0.1)
    ctl = FeedbackController(ch, dec, cfg, 1)
    ens = simulate_ensemble(ch, dec, dec.states[0], 300, 200, master_seed=0, controller=ctl)
    w_min = ens.weights[:, :, 0].min()
    u_max = np.abs(ens.controls).max()
    checks = [(f"min target weight 1-{1 - w_min:.1e}", w_min > 1 - 1e-8),
              (f"max |u| {u_max:.1e}", u_max <= 1e-6)]
    assert record(8, "quiescence at the target", checks)


def test_c09_ergodicity_and_period():
    ch = systems.system_b()
    dec = decompose(ch)
    rng = np.random.default_rng(5)
    checks = []
    k = np.arange(31)
    for a in range(dec.n_blocks):
        rho = dec.embed(random_state(dec.dims[a], rng, rank=1), a)
        dist = np.array([cesaro_distance(ch, dec, rho, a, j) for j in k])
        ok = dist > 1e-14
        slope, icpt = np.polyfit(k[ok], np.log(dist[ok]), 1)
        rms = np.sqrt(np.mean((np.log(dist[ok]) - slope * k[ok] - icpt) ** 2))
        checks.append((f"block {a} slope {slope:.3f} rms {rms:.3f}", slope < 0 and rms < 0.2))
    periods = {"A": decompose(systems.system_a()).period, "B": dec.period,
               "2-cycle": decompose(systems.two_cycle()).period}
    checks.append((f"periods {periods}", periods == {"A": 1, "B": 1, "2-cycle": 2}))
    assert record(9, "ergodicity diagnostic and period", checks)


def test_c10_determinism(tmp_path):
    checks = []
    runs = [("simulate", "system_b.yaml", []),
            ("stabilize", "system_a_control.yaml", ["--paths", "600", "--steps", "60"])]
    for cmd, scen, extra in runs:
        outs = []
        for threads in ("1", "4"):
            out = tmp_path / f"{cmd}_{threads}"
            code = cli_main([cmd, str(SCENARIOS / scen), "--out", str(out), "--threads", threads] + extra)
            outs.append((code, out))
        same = all(outs[0][0] == 0 and outs[1][0] == 0
                   and (outs[0][1] / f).read_bytes() == (outs[1][1] / f).read_bytes()
                   for f in ["series.csv", "paths.csv"] + (["control.csv"] if cmd == "stabilize" else []))
        checks.append((f"{cmd} {scen} 1 vs 4 threads", same))
    assert record(10, "byte-identical CSV across thread counts", checks)


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
