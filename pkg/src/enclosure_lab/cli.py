"""Command line front end: ``enclosure-lab analyze|simulate|stabilize|report``.

Exit codes
----------
0  success
1  the report's declared expectations were not all met
2  command-line usage error (argparse)
3  scenario parse failure
4  transient part detected
5  model is not identifiable
6  controllability refused
7  word budget or identifiability search cutoff exceeded
8  report missing or corrupt
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .control import (ControlConfig, FeedbackController, check_controllability, choose_epsilon,
                      estimate_delta0)
from .errors import (BudgetExceededError, ControllabilityError, ReportError, ScenarioError,
                     TransientPartError)
from .identify import analyze_identifiability
from .scenario import Scenario, encode_matrix, load_scenario
from .structure import decompose
from .trajectory import fit_rate, intercept_bound, selection_statistics, simulate_ensemble

EXIT_OK = 0
EXIT_EXPECTATIONS = 1
EXIT_PARSE = 3
EXIT_TRANSIENT = 4
EXIT_NOT_IDENTIFIABLE = 5
EXIT_UNCONTROLLABLE = 6
EXIT_BUDGET = 7
EXIT_REPORT = 8

THREADS_ENV = "ENCLOSURE_LAB_THREADS"


class CommandFailed(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def fmt(x) -> str:
    """17 significant digits: floats round-trip exactly through the CSV."""
    return format(float(x), ".17g")


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    if isinstance(x, complex):
        return [x.real, x.imag]
    return x


def _write_json(path: Path, data):
    path.write_text(json.dumps(_jsonable(data), indent=2, sort_keys=False) + "\n")


def _write_csv(path: Path, header, rows):
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


# -- analysis -------------------------------------------------------------------

def _structure_section(dec):
    return {
        "n_blocks": dec.n_blocks,
        "dims": list(dec.dims),
        "period": dec.period,
        "block_periods": list(dec.block_periods),
        "mixing_rate": {"lambda_hat": dec.mixing_rate[0], "c_hat": dec.mixing_rate[1]},
        "dual_fixed_dim": dec.dual_fixed_dim,
        "equivalent_blocks": dec.has_equivalent_blocks,
        "residuals": dec.residuals,
        "projectors": [encode_matrix(m) for m in dec.projectors],
    }


def _identify_section(rep):
    return {
        "id_holds": rep.id_holds,
        "witnesses": [{"pair": list(p), "word": None if w is None else list(w[0]),
                       "gap": None if w is None else w[1]} for p, w in rep.pair_witnesses.items()],
        "N": rep.uniform_length_N,
        "kappa": rep.kappa,
        "kappa_pairs": [{"pair": list(p), "kappa": v, "fw_gap": rep.kappa_gaps[p]}
                        for p, v in rep.kappa_pairs.items()],
        "search_cutoff": rep.search_cutoff,
        "cutoff_reason": rep.cutoff_reason,
        "separation": [{"pair": list(p), "value": v[0], "lower_bound": v[1], "status": v[2]}
                       for p, v in rep.separation.items()],
    }


def run_analysis(sc: Scenario):
    try:
        dec = decompose(sc.channel, seed=sc.decomposition_seed)
    except TransientPartError as exc:
        raise CommandFailed(EXIT_TRANSIENT, str(exc)) from exc
    try:
        rep = analyze_identifiability(sc.channel, dec, cutoff=sc.cutoff)
    except BudgetExceededError as exc:
        raise CommandFailed(EXIT_BUDGET, str(exc)) from exc
    return dec, rep


def _check_identifiable(rep, force=False):
    if not rep.id_holds and not force:
        raise CommandFailed(EXIT_NOT_IDENTIFIABLE, "model is not identifiable: some pair of blocks "
                            "has no distinguishing outcome word within the search cutoff")
    if rep.id_holds and rep.uniform_length_N is None:
        raise CommandFailed(EXIT_BUDGET, f"no uniform identifiability length found ({rep.cutoff_reason})")


# -- series output --------------------------------------------------------------

def _undecided_series(ens, threshold):
    return 1.0 - (ens.weights > threshold).any(axis=2).mean(axis=0)


def _series_rows(ens, threshold, extra=()):
    mean_w, se_w = ens.mean("W"), ens.std_error("W")
    blocks = ens.weights.mean(axis=0)
    und = _undecided_series(ens, threshold)
    rows = []
    for n in range(ens.n_steps + 1):
        row = [n, fmt(mean_w[n]), fmt(se_w[n])] + [fmt(x) for x in blocks[n]] + [fmt(und[n])]
        row += [fmt(col[n]) for col in extra]
        rows.append(row)
    header = ["step", "mean_W", "se_W"] + [f"mean_weight_{a}" for a in range(ens.weights.shape[2])]
    return header + ["undecided_fraction"], rows


def _paths_rows(ens, sel):
    rows = []
    for p in range(ens.n_paths):
        rows.append([p, int(sel.assignments[p])] + [fmt(x) for x in ens.final_weights[p]]
                    + [ens.failed.get(p, "")])
    header = ["path", "assigned_block"] + [f"final_weight_{a}" for a in range(ens.weights.shape[2])]
    return header + ["failed_step"], rows


def _selection_section(sel):
    return {"threshold": sel.threshold, "frequencies": sel.frequencies,
            "std_errors": sel.std_errors, "undecided": sel.undecided}


def _safe_fit(series, window, floor):
    try:
        return fit_rate(series, window, floor).as_dict()
    except ValueError as exc:
        return {"error": str(exc)}


# -- commands -------------------------------------------------------------------

def cmd_analyze(sc: Scenario, args):
    dec, rep = run_analysis(sc)
    report = {"structure": _structure_section(dec), "identifiability": _identify_section(rep)}
    code = EXIT_OK
    msg = ""
    try:
        _check_identifiable(rep)
    except CommandFailed as exc:
        code, msg = exc.code, str(exc)
    return report, code, msg


def cmd_simulate(sc: Scenario, args):
    dec, rep = run_analysis(sc)
    _check_identifiable(rep, force=args.force)
    run = sc.run
    ens = simulate_ensemble(sc.channel, dec, sc.initial_state, run.paths, run.steps, run.seed,
                            threads=args.threads, tol=sc.tolerances)
    sel = selection_statistics(ens, run.threshold)
    fit = _safe_fit(ens.mean("W"), run.window, run.mean_floor)
    out = Path(args.out)
    header, rows = _series_rows(ens, run.threshold)
    _write_csv(out / "series.csv", header, rows)
    _write_csv(out / "paths.csv", *_paths_rows(ens, sel))
    report = {
        "structure": _structure_section(dec),
        "identifiability": _identify_section(rep),
        "simulation": {
            "paths": run.paths, "steps": run.steps, "seed": run.seed,
            "selection": _selection_section(sel),
            "rate_fit_W": fit,
            "intercept_bound": intercept_bound(rep.kappa, dec.n_blocks) if rep.kappa else None,
            "failed_paths": ens.failed,
        },
    }
    return report, EXIT_OK, ""


def _control_setup(sc: Scenario, dec, rep):
    spec = sc.control
    if spec is None:
        raise CommandFailed(EXIT_PARSE, "scenario has no control section")
    if not 0 <= spec.target < dec.n_blocks:
        raise CommandFailed(EXIT_PARSE, f"control target {spec.target} is not a block index "
                            f"(0..{dec.n_blocks - 1})")
    cert = check_controllability(dec, spec.target, spec.hamiltonian)
    if not cert.certified:
        raise CommandFailed(EXIT_UNCONTROLLABLE, str(ControllabilityError(cert.rank, cert.required)))
    n_unif = rep.uniform_length_N
    block = spec.block_length or n_unif
    if block < n_unif:
        raise CommandFailed(EXIT_PARSE, f"block_length {block} is below the uniform length {n_unif}")
    kp = rep.kappa_prime(spec.target)
    probe = ControlConfig(spec.target, spec.hamiltonian, spec.u_bound, block, 1.0,
                          spec.grid_points, spec.refine_iters)
    delta0, found = estimate_delta0(sc.channel, dec, probe, samples=spec.delta0_samples,
                                    eta_probe=spec.eta_probe, seed=sc.run.seed)
    choice = choose_epsilon(delta0, kp, dec.n_blocks)
    eps = spec.epsilon if spec.epsilon is not None else choice.epsilon
    cfg = ControlConfig(spec.target, spec.hamiltonian, spec.u_bound, block, eps,
                        spec.grid_points, spec.refine_iters)
    info = {
        "target": spec.target, "u_bound": spec.u_bound, "block_length": block,
        "grid_points": spec.grid_points, "refine_iters": spec.refine_iters,
        "controllability": {"certified": cert.certified, "rank": cert.rank, "required": cert.required},
        "delta0_min_found": found, "epsilon_choice": choice.as_dict(),
        "epsilon": eps, "epsilon_source": "scenario" if spec.epsilon is not None else "rule",
    }
    return cfg, info


def cmd_stabilize(sc: Scenario, args):
    dec, rep = run_analysis(sc)
    _check_identifiable(rep)
    cfg, info = _control_setup(sc, dec, rep)
    run, spec = sc.run, sc.control
    ctl = FeedbackController(sc.channel, dec, cfg, rep.uniform_length_N)
    ens = simulate_ensemble(sc.channel, dec, sc.initial_state, run.paths, run.steps, run.seed,
                            controller=ctl, threads=args.threads, tol=sc.tolerances)
    extra = [ens.mean("V"), ens.std_error("V"), ens.mean("Z"), ens.std_error("Z")]
    names = ["mean_V", "se_V", "mean_Z", "se_Z"]
    baseline = None
    if spec.baseline:
        base_cfg = ControlConfig(cfg.target, cfg.hamiltonian, 0.0, cfg.block_length, cfg.epsilon,
                                 cfg.grid_points, cfg.refine_iters)
        base = simulate_ensemble(sc.channel, dec, sc.initial_state, run.paths, run.steps, run.seed,
                                 controller=FeedbackController(sc.channel, dec, base_cfg),
                                 threads=args.threads, tol=sc.tolerances)
        extra.append(base.mean("V"))
        names.append("baseline_mean_V")
        v0 = base.V[:, 0]
        baseline = {
            "max_abs_V_change": float(np.abs(base.V - v0[:, None]).max()),
            "mean_V_range": [float(base.mean("V").min()), float(base.mean("V").max())],
            "rate_fit_V": _safe_fit(base.mean("V"), run.window, spec.mean_floor),
        }
    out = Path(args.out)
    header, rows = _series_rows(ens, run.threshold, extra)
    _write_csv(out / "series.csv", header + names, rows)
    sel = selection_statistics(ens, run.threshold)
    _write_csv(out / "paths.csv", *_paths_rows(ens, sel))

    block = cfg.block_length
    crow = []
    for q, start in enumerate(range(0, run.steps - block + 1, block)):
        u = ens.controls[:, start + block - 1]
        crow.append([q, start, start + block - 1, fmt(ens.V[:, start].mean()), fmt(ens.Z[:, start].mean()),
                     fmt(u.mean()), fmt(u.min()), fmt(u.max()), fmt(np.mean(u != 0))])
    _write_csv(out / "control.csv", ["block", "anchor_step", "fire_step", "mean_anchor_V", "mean_anchor_Z",
                                     "mean_u", "min_u", "max_u", "fraction_fired"], crow)
    info.update({
        "kappa_prime": rep.kappa_prime(cfg.target),
        "rate_fit_V": _safe_fit(ens.mean("V"), run.window, spec.mean_floor),
        "rate_fit_W": _safe_fit(ens.mean("W"), run.window, run.mean_floor),
        "terminal_target_frequency": float(sel.frequencies[cfg.target]),
        "max_abs_u": float(np.abs(ens.controls).max()),
        "min_target_weight": float(ens.weights[:, :, cfg.target].min()),
        "baseline": baseline,
    })
    report = {
        "structure": _structure_section(dec),
        "identifiability": _identify_section(rep),
        "simulation": {"paths": run.paths, "steps": run.steps, "seed": run.seed,
                       "selection": _selection_section(sel), "failed_paths": ens.failed},
        "control": info,
    }
    return report, EXIT_OK, ""


# -- report ---------------------------------------------------------------------

def _get(report, path):
    cur = report
    for key in path.split("."):
        if not isinstance(cur, dict) or key not in cur:
            return None
        cur = cur[key]
    return cur


def check_expectations(report, expect):
    """Compare stored results with scenario expectations.

    Returns ``[(name, ok, detail)]``; ``ok`` is ``None`` when the report does
    not contain the quantity (for example rates in an ``analyze`` report).
    """
    results = []

    def add(name, value, ok, want):
        if value is None:
            results.append((name, None, f"{name} not in this report (expected {want})"))
        else:
            results.append((name, bool(ok), f"{name}={value} (expected {want})"))

    ident = report.get("identifiability", {})
    if "N" in expect:
        add("N", ident.get("N"), ident.get("N") == expect["N"], expect["N"])
    if "id_holds" in expect:
        add("id_holds", ident.get("id_holds"), ident.get("id_holds") == expect["id_holds"], expect["id_holds"])
    if "kappa" in expect:
        k, e = ident.get("kappa"), expect["kappa"]
        add("kappa", k, k is not None and abs(k - e["value"]) <= e["tol"], f"{e['value']} +- {e['tol']}")
    if "period" in expect:
        m = _get(report, "structure.period")
        add("period", m, m == expect["period"], expect["period"])
    if "n_blocks" in expect:
        b = _get(report, "structure.n_blocks")
        add("n_blocks", b, b == expect["n_blocks"], expect["n_blocks"])
    fit = _get(report, "simulation.rate_fit_W")
    if "gamma_min" in expect:
        g = None if not fit else fit.get("gamma")
        add("gamma_W", g, g is not None and g >= expect["gamma_min"], f">= {expect['gamma_min']}")
    if "residual_rms_max" in expect:
        r = None if not fit else fit.get("residual_rms")
        add("residual_rms_W", r, r is not None and r < expect["residual_rms_max"], f"< {expect['residual_rms_max']}")
    sel = _get(report, "simulation.selection")
    if "selection" in expect and sel:
        e = expect["selection"]
        f = sel["frequencies"][e["block"]]
        add(f"selection_{e['block']}", f, abs(f - e["value"]) <= e["tol"], f"{e['value']} +- {e['tol']}")
    if "undecided_max" in expect and sel:
        add("undecided", sel["undecided"], sel["undecided"] < expect["undecided_max"], f"< {expect['undecided_max']}")
    if "undecided_min" in expect and sel:
        add("undecided", sel["undecided"], sel["undecided"] >= expect["undecided_min"], f">= {expect['undecided_min']}")
    ctl = report.get("control") or {}
    if "gamma_V_min" in expect:
        g = (ctl.get("rate_fit_V") or {}).get("gamma")
        add("gamma_V", g, g is not None and g > expect["gamma_V_min"], f"> {expect['gamma_V_min']}")
    if "target_frequency_min" in expect:
        f = ctl.get("terminal_target_frequency")
        add("target_frequency", f, f is not None and f > expect["target_frequency_min"],
            f"> {expect['target_frequency_min']}")
    if "baseline_V_change_max" in expect:
        b = (ctl.get("baseline") or {}).get("max_abs_V_change")
        add("baseline_V_change", b, b is not None and b <= expect["baseline_V_change_max"],
            f"<= {expect['baseline_V_change_max']}")
    if "max_abs_u" in expect:
        u = ctl.get("max_abs_u")
        add("max_abs_u", u, u is not None and u <= expect["max_abs_u"], f"<= {expect['max_abs_u']}")
    if "min_target_weight" in expect:
        w = ctl.get("min_target_weight")
        add("min_target_weight", w, w is not None and w > expect["min_target_weight"],
            f"> {expect['min_target_weight']}")
    return results


def load_report(out: Path):
    path = out / "report.json"
    try:
        data = json.loads(path.read_text())
    except OSError as exc:
        raise ReportError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ReportError(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict) or "command" not in data:
        raise ReportError(f"{path} does not look like a run report")
    return data


def cmd_report(sc: Scenario, args):
    try:
        report = load_report(Path(args.out))
    except ReportError as exc:
        raise CommandFailed(EXIT_REPORT, str(exc)) from exc
    ident = report.get("identifiability", {})
    struct = report.get("structure", {})
    lines = [f"scenario {report.get('scenario')} (command {report.get('command')})"]
    lines.append(f"blocks={struct.get('n_blocks')} dims={struct.get('dims')} period m={struct.get('period')}")
    if ident:
        lines.append(f"identifiable={ident.get('id_holds')} N={ident.get('N')}")
        if ident.get("kappa") is not None:
            lines.append(f"kappa={ident['kappa']:.4f}")
    fit = _get(report, "simulation.rate_fit_W")
    if fit and "gamma" in fit:
        lines.append(f"gamma_hat per-step={fit['gamma']:.4f} (residual RMS {fit['residual_rms']:.3f})")
    sel = _get(report, "simulation.selection")
    if sel:
        freqs = ", ".join(f"{f:.4f}" for f in sel["frequencies"])
        lines.append(f"selection frequencies=({freqs}) undecided={sel['undecided']:.4f}")
    ctl = report.get("control")
    if ctl:
        fv = ctl.get("rate_fit_V") or {}
        if "gamma" in fv:
            lines.append(f"gamma_hat_V per-step={fv['gamma']:.4f}")
        lines.append(f"epsilon={ctl.get('epsilon'):.6g} terminal target frequency="
                     f"{ctl.get('terminal_target_frequency'):.4f}")
    print("\n".join(lines))
    results = check_expectations(report, sc.expect)
    for name, ok, detail in results:
        print(f"{'SKIP' if ok is None else 'PASS' if ok else 'FAIL'} {detail}")
    return None, EXIT_OK if all(ok is not False for _, ok, _ in results) else EXIT_EXPECTATIONS, ""


COMMANDS = {"analyze": cmd_analyze, "simulate": cmd_simulate,
            "stabilize": cmd_stabilize, "report": cmd_report}


def default_threads() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def build_parser():
    p = argparse.ArgumentParser(prog="enclosure-lab", description="Analyze, simulate and stabilize "
                                "quantum measurement models given as Kraus channels.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("scenario", help="scenario file (YAML or JSON)")
    p.add_argument("--out", help="output directory (default runs/<scenario name>)")
    p.add_argument("--seed", type=int, help="override the master seed")
    p.add_argument("--paths", type=int, help="override the number of paths M")
    p.add_argument("--steps", type=int, help="override the horizon n_max")
    p.add_argument("--threads", type=int, default=None,
                   help=f"worker threads (default ${THREADS_ENV} or 1); never changes results")
    p.add_argument("--force", action="store_true", help="simulate even if the model is not identifiable")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    args.threads = args.threads if args.threads is not None else default_threads()
    try:
        sc = load_scenario(args.scenario)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    if args.seed is not None:
        sc.run.seed = args.seed
    if args.paths is not None:
        sc.run.paths = args.paths
    if args.steps is not None:
        sc.run.steps = args.steps
    args.out = args.out or str(Path("runs") / sc.name)
    if args.command != "report":
        Path(args.out).mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    try:
        report, code, msg = COMMANDS[args.command](sc, args)
    except CommandFailed as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    if report is not None:
        report = {
            "scenario": sc.name, "command": args.command, "version": __version__,
            "flags": {"seed": sc.run.seed, "paths": sc.run.paths, "steps": sc.run.steps,
                      "force": args.force, "out": args.out},
            **report,
        }
        out = Path(args.out)
        _write_json(out / "report.json", report)
        _write_json(out / "environment.json", {
            "version": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "threads": args.threads, "wall_time_s": time.perf_counter() - start,
        })
        print(f"wrote {out / 'report.json'}")
    if msg:
        print(f"error: {msg}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
