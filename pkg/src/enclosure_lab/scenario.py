"""Scenario files: YAML (or JSON) descriptions of a measurement model and a run.

Complex matrices are nested lists whose entries are ``[re, im]`` pairs; a
bare number is read as a real entry.  Example::

    name: system_a
    kraus:
      - [[[0.894427190999916, 0.0], [0.0, 0.0]], [[0.0, 0.0], [0.547722557505166, 0.0]]]
      - ...
    run: {paths: 2000, steps: 200, seed: 0}
    control: {target: 0, hamiltonian: ..., u_bound: 1.5707963267948966}
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .algebra import Tolerances, is_state
from .channel import KrausChannel
from .errors import ScenarioError


def encode_matrix(m):
    m = np.asarray(m, dtype=complex)
    return [[[float(z.real), float(z.imag)] for z in row] for row in m]


def decode_matrix(data, where: str):
    try:
        rows = []
        for row in data:
            out = []
            for z in row:
                if isinstance(z, (int, float)):
                    out.append(complex(z))
                elif isinstance(z, (list, tuple)) and len(z) == 2:
                    out.append(complex(float(z[0]), float(z[1])))
                else:
                    raise ScenarioError(f"bad matrix entry {z!r}", where)
            rows.append(out)
        m = np.array(rows, dtype=complex)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"cannot parse matrix: {exc}", where) from exc
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ScenarioError(f"matrix must be square, got shape {m.shape}", where)
    if not np.all(np.isfinite(m)):
        raise ScenarioError("matrix has non-finite entries", where)
    return m


@dataclass
class RunSpec:
    paths: int = 2000
    steps: int = 200
    seed: int = 0
    window: tuple | None = None
    threshold: float = 0.99
    mean_floor: float = 1e-12


@dataclass
class ControlSpec:
    target: int
    hamiltonian: np.ndarray
    u_bound: float
    block_length: int | None = None
    epsilon: float | None = None
    grid_points: int = 101
    refine_iters: int = 30
    delta0_samples: int = 64
    eta_probe: float = 0.25
    mean_floor: float = 1e-12
    baseline: bool = True


@dataclass
class Scenario:
    name: str
    channel: KrausChannel
    initial_state: np.ndarray
    run: RunSpec = field(default_factory=RunSpec)
    control: ControlSpec | None = None
    tolerances: Tolerances = field(default_factory=Tolerances)
    cutoff: int = 8
    decomposition_seed: int = 0
    expect: dict = field(default_factory=dict)
    source: str = ""


def _section(data, key):
    sec = data.get(key) or {}
    if not isinstance(sec, dict):
        raise ScenarioError(f"section '{key}' must be a mapping", key)
    return sec


def parse_scenario(data: dict, source: str = "") -> Scenario:
    if not isinstance(data, dict):
        raise ScenarioError("scenario must be a mapping", source)
    if "kraus" not in data:
        raise ScenarioError("missing 'kraus' section", source)
    ops = [decode_matrix(m, f"kraus[{i}]") for i, m in enumerate(data["kraus"])]
    if len({m.shape for m in ops}) != 1:
        raise ScenarioError("Kraus operators have different shapes", "kraus")
    d = ops[0].shape[0]
    if "dimension" in data and int(data["dimension"]) != d:
        raise ScenarioError(f"declared dimension {data['dimension']} but operators are {d}x{d}", "dimension")
    tol_data = dict(_section(data, "tolerances"))
    tp_tol = float(tol_data.pop("tp_tol", 1e-10))
    try:
        tol = Tolerances(**tol_data)
    except TypeError as exc:
        raise ScenarioError(f"unknown tolerance: {exc}", "tolerances") from exc
    try:
        ch = KrausChannel(np.array(ops), tuple(data.get("labels") or ()), tp_tol=tp_tol)
    except ValueError as exc:
        raise ScenarioError(str(exc), "kraus") from exc

    rho0 = np.eye(d, dtype=complex) / d
    if data.get("initial_state") is not None:
        rho0 = decode_matrix(data["initial_state"], "initial_state")
        if rho0.shape != (d, d) or not is_state(rho0, tol):
            raise ScenarioError("initial_state is not a density matrix of the right size", "initial_state")

    run_data = _section(data, "run")
    try:
        run = RunSpec(**run_data)
    except TypeError as exc:
        raise ScenarioError(f"unknown run field: {exc}", "run") from exc
    if run.window is not None:
        run.window = tuple(int(x) for x in run.window)

    control = None
    if data.get("control") is not None:
        c = dict(_section(data, "control"))
        target = c.pop("target", None)
        if target is not None and (isinstance(target, bool) or not isinstance(target, int)):
            raise ScenarioError(f"target must be a 0-based block index, got {target!r}", "control.target")
        if target is None or "hamiltonian" not in c or "u_bound" not in c:
            raise ScenarioError("control needs target, hamiltonian and u_bound", "control")
        h = decode_matrix(c.pop("hamiltonian"), "control.hamiltonian")
        if h.shape != (d, d) or np.abs(h - h.conj().T).max() > 1e-12:
            raise ScenarioError("hamiltonian must be Hermitian and d x d", "control.hamiltonian")
        try:
            control = ControlSpec(target=int(target), hamiltonian=h, **c)
        except TypeError as exc:
            raise ScenarioError(f"unknown control field: {exc}", "control") from exc

    analysis = _section(data, "analysis")
    return Scenario(
        name=str(data.get("name") or Path(source).stem or "scenario"),
        channel=ch, initial_state=rho0, run=run, control=control, tolerances=tol,
        cutoff=int(analysis.get("cutoff", 8)), decomposition_seed=int(analysis.get("seed", 0)),
        expect=dict(data.get("expect") or {}), source=source,
    )


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario: {exc}", str(path)) from exc
    except yaml.YAMLError as exc:
        raise ScenarioError(f"invalid YAML/JSON: {exc}", str(path)) from exc
    return parse_scenario(data, str(path))


def scenario_dict(name, ch: KrausChannel, initial_state=None, run=None, control=None,
                  expect=None, analysis=None) -> dict:
    """Build the plain-data form of a scenario (inverse of :func:`parse_scenario`)."""
    out = {"name": name, "dimension": ch.dim, "labels": list(ch.labels),
           "kraus": [encode_matrix(v) for v in ch.ops]}
    if initial_state is not None:
        out["initial_state"] = encode_matrix(initial_state)
    if analysis:
        out["analysis"] = dict(analysis)
    if run:
        out["run"] = dict(run)
    if control:
        c = dict(control)
        c["hamiltonian"] = encode_matrix(c["hamiltonian"])
        out["control"] = c
    if expect:
        out["expect"] = dict(expect)
    return out


def dump_scenario(data: dict, path):
    Path(path).write_text(yaml.safe_dump(data, sort_keys=False, default_flow_style=None, width=120))
