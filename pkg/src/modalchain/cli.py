"""Config-driven experiment runner.

A TOML config names a scenario, its parameters, and what to emit; the
runner dispatches to the scenario modules, records every run-level
assertion in a JSON manifest (measured value, tolerance, verdict), and
writes the requested data artifacts.  All sampling flows from the config
seed through counter-based generators, so identical configs produce
byte-identical data files regardless of worker count.

Exit codes: 0 all checks passed, 1 config or usage error, 2 a run-level
check or consistency assertion failed.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from .chain import (
    Trajectory,
    compose,
    equilibrium_convergence,
    sample_ensemble,
    step_from_cond,
    toy_mixing_chain,
)
from .continuum import CrossoverModel, crossover_eigensystem, macroflip_compare
from .scenarios import (
    EprConfig,
    ErrorMatrix,
    NaiveModelConfig,
    TypicalityConfig,
    chsh,
    chsh_sampled,
    ramp_schedule,
    run_binned_position,
    run_epr,
    run_naive,
    run_realistic,
    run_typicality,
)

#: seed used when the config does not name one
DEFAULT_SEED = 0x5EED

EMIT_KINDS = ("summary", "trajectories", "matrices", "timeseries")

#: trajectories per dispatch unit; fixed so the seed layout (and thus the
#: output) cannot depend on the worker count
ENSEMBLE_CHUNK = 4096

#: substrings of library errors that mean "the run itself failed a
#: consistency assertion" rather than "the config was wrong"
_RUN_FAILURE_MARKERS = (
    "inconsistent transition",
    "inconsistent step",
    "ergodic set",
    "straddles branches",
)


class ConfigError(Exception):
    """Unusable configuration or command line; maps to exit code 1."""


class RunFailure(Exception):
    """A run-level consistency assertion failed; maps to exit code 2."""


# ---------------------------------------------------------------------
# config
# ---------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment: scenario, parameters, seed, and output plan."""

    scenario: str
    parameters: dict
    seed: int = DEFAULT_SEED
    output: str | None = None
    emit: tuple[str, ...] = ("summary",)
    tolerances: dict = field(default_factory=dict)


def _parse_emit(value, source: str) -> tuple[str, ...]:
    if isinstance(value, str):
        names = [part.strip() for part in value.split(",") if part.strip()]
    elif isinstance(value, list):
        names = [str(part) for part in value]
    else:
        raise ConfigError(f"{source} must be a list of artifact kinds")
    if not names:
        raise ConfigError(
            f"{source} must name at least one of: {', '.join(EMIT_KINDS)}"
        )
    seen: list[str] = []
    for name in names:
        if name not in EMIT_KINDS:
            raise ConfigError(
                f"{source}: unknown artifact kind {name!r}; "
                f"valid kinds: {', '.join(EMIT_KINDS)}"
            )
        if name not in seen:
            seen.append(name)
    return tuple(seen)


def load_config(
    path: str,
    seed: int | None = None,
    output: str | None = None,
    emit: str | None = None,
) -> ExperimentConfig:
    """Parse and validate a TOML experiment config, applying overrides."""
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config {path} is not valid TOML: {exc}") from None

    allowed = {"scenario", "parameters", "seed", "output", "emit", "tolerances"}
    unknown = sorted(set(doc) - allowed)
    if unknown:
        raise ConfigError(
            f"unknown config fields: {', '.join(unknown)}; "
            f"expected a subset of: {', '.join(sorted(allowed))}"
        )
    if "scenario" not in doc:
        raise ConfigError("missing required field 'scenario'")
    scenario = str(doc["scenario"])
    if scenario not in _RUNNERS:
        raise ConfigError(
            f"unknown scenario {scenario!r}; valid scenarios: "
            f"{', '.join(_RUNNERS)}"
        )

    parameters = doc.get("parameters", {})
    if not isinstance(parameters, dict):
        raise ConfigError("'parameters' must be a table")
    tolerances = doc.get("tolerances", {})
    if not isinstance(tolerances, dict):
        raise ConfigError("'tolerances' must be a table")
    for name, value in tolerances.items():
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"tolerances.{name} must be a number")

    if seed is None:
        seed = doc.get("seed", DEFAULT_SEED)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ConfigError(f"seed must be an integer, got {seed!r}")

    if output is None:
        output = doc.get("output")
        if output is not None and not isinstance(output, str):
            raise ConfigError("'output' must be a path string")

    emit_kinds = (
        _parse_emit(emit, "--emit")
        if emit is not None
        else (
            _parse_emit(doc["emit"], "'emit'") if "emit" in doc else ("summary",)
        )
    )
    unsupported = [k for k in emit_kinds if k not in _SUPPORTED_EMITS[scenario]]
    if unsupported:
        raise ConfigError(
            f"scenario {scenario!r} cannot emit {', '.join(unsupported)}; "
            f"it supports: {', '.join(sorted(_SUPPORTED_EMITS[scenario]))}"
        )

    return ExperimentConfig(
        scenario=scenario,
        parameters=dict(parameters),
        seed=int(seed),
        output=output,
        emit=emit_kinds,
        tolerances=dict(tolerances),
    )


# ---------------------------------------------------------------------
# parameter and tolerance plumbing
# ---------------------------------------------------------------------


def _as_float(value):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"expected a number, got {value!r}")
    return float(value)


def _as_int(value):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"expected an integer, got {value!r}")
    return int(value)


def _as_bool(value):
    if not isinstance(value, bool):
        raise ConfigError(f"expected true/false, got {value!r}")
    return value


def _as_float_list(value):
    if not isinstance(value, list) or not value:
        raise ConfigError(f"expected a nonempty list of numbers, got {value!r}")
    return [_as_float(v) for v in value]


def _as_float_matrix(value):
    if not isinstance(value, list) or not value:
        raise ConfigError(f"expected a nonempty list of rows, got {value!r}")
    rows = [_as_float_list(row) for row in value]
    width = len(rows[0])
    if any(len(row) != width for row in rows):
        raise ConfigError("matrix rows have unequal lengths")
    return np.array(rows, dtype=float)


def _as_float_pair(value):
    pair = _as_float_list(value)
    if len(pair) != 2:
        raise ConfigError(f"expected exactly two numbers, got {len(pair)}")
    return (pair[0], pair[1])


_REQUIRED = object()


def _read_parameters(cfg: ExperimentConfig, schema: dict) -> dict:
    """Cast cfg.parameters through ``schema``: name -> (default, caster).

    A default of _REQUIRED makes the field mandatory; unknown parameter
    names are an error so typos cannot silently fall back to defaults.
    """
    given = dict(cfg.parameters)
    out = {}
    for name, (default, caster) in schema.items():
        if name in given:
            try:
                out[name] = caster(given.pop(name))
            except ConfigError as exc:
                raise ConfigError(f"parameters.{name}: {exc}") from None
        elif default is _REQUIRED:
            raise ConfigError(
                f"missing required field parameters.{name} "
                f"for scenario {cfg.scenario!r}"
            )
        else:
            out[name] = default
    if given:
        raise ConfigError(
            f"unknown parameters for scenario {cfg.scenario!r}: "
            f"{', '.join(sorted(given))}"
        )
    return out


class _Tolerances:
    """Hands out tolerance overrides and rejects unknown names at the end."""

    def __init__(self, cfg: ExperimentConfig):
        self._given = dict(cfg.tolerances)
        self._scenario = cfg.scenario

    def get(self, name: str, default: float) -> float:
        return float(self._given.pop(name, default))

    def finish(self):
        if self._given:
            raise ConfigError(
                f"unknown tolerances for scenario {self._scenario!r}: "
                f"{', '.join(sorted(self._given))}"
            )


# ---------------------------------------------------------------------
# checks and results
# ---------------------------------------------------------------------


@dataclass(frozen=True)
class Check:
    """One run-level assertion: measured value against its tolerance."""

    name: str
    measured: float
    tolerance: float
    comparison: str  # "<=", ">=", or "=="

    @property
    def passed(self) -> bool:
        if self.comparison == "<=":
            return bool(self.measured <= self.tolerance)
        if self.comparison == ">=":
            return bool(self.measured >= self.tolerance)
        return bool(self.measured == self.tolerance)


@dataclass
class RunResult:
    """Everything a scenario runner hands back for emission."""

    checks: list[Check]
    summary: list[str]
    matrices: dict = field(default_factory=dict)
    timeseries: list | None = None
    trajectories: list | None = None


def _require_unique_names(checks: list[Check]):
    names = [c.name for c in checks]
    if len(set(names)) != len(names):
        raise RuntimeError(f"duplicate check names in manifest: {names}")


# ---------------------------------------------------------------------
# emission
# ---------------------------------------------------------------------


def emit_trajectories(trajectories, path):
    """Write one JSON record per step boundary, sorted by (seed, step)."""
    if not trajectories:
        raise ValueError("no trajectories to emit")
    rows = []
    for traj in trajectories:
        for index, (t, label) in enumerate(zip(traj.times, traj.labels)):
            rows.append((int(traj.seed), index, float(t), int(label)))
    rows.sort(key=lambda r: (r[0], r[1]))
    with open(path, "w", encoding="utf-8") as fh:
        for seed, index, t, label in rows:
            fh.write(
                json.dumps(
                    {"seed": seed, "step_index": index, "time": t, "label": label},
                    sort_keys=True,
                )
            )
            fh.write("\n")


def emit_timeseries(columns, path):
    """Write named columns as CSV with full double precision."""
    cols = [
        (str(name), np.asarray(values, dtype=float).reshape(-1))
        for name, values in columns
    ]
    length = cols[0][1].size if cols else 0
    for name, values in cols:
        if values.size != length:
            raise ValueError(
                f"column {name!r} has {values.size} rows, expected {length}"
            )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(name for name, _ in cols) + "\n")
        for k in range(length):
            fh.write(",".join("%.17g" % values[k] for _, values in cols) + "\n")


def _matrix_payload(matrix):
    arr = np.asarray(matrix)
    if np.iscomplexobj(arr):
        return {"real": arr.real.tolist(), "imag": arr.imag.tolist()}
    return arr.tolist()


def _write_matrices(matrices: dict, path):
    doc = {name: _matrix_payload(m) for name, m in sorted(matrices.items())}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _finite(value: float):
    value = float(value)
    return value if math.isfinite(value) else repr(value)


def _write_manifest(path, cfg: ExperimentConfig, checks, wall_clock: float):
    doc = {
        "version": __version__,
        "wall_clock_seconds": wall_clock,
        "config": {
            "scenario": cfg.scenario,
            "seed": cfg.seed,
            "output": cfg.output,
            "emit": list(cfg.emit),
            "parameters": cfg.parameters,
            "tolerances": cfg.tolerances,
        },
        "checks": [
            {
                "name": c.name,
                "measured": _finite(c.measured),
                "tolerance": _finite(c.tolerance),
                "comparison": c.comparison,
                "passed": c.passed,
            }
            for c in checks
        ],
        "passed": all(c.passed for c in checks),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------
# shared runner helpers
# ---------------------------------------------------------------------


def _ensemble(steps, initial, base_seed: int, count: int, workers: int):
    """sample_ensemble in fixed-size chunks, optionally fanned out.

    Chunk c covers seeds base_seed + c*ENSEMBLE_CHUNK + i, exactly the
    layout of one big call, so the stacked result is independent of both
    the chunking and the worker count.
    """
    offsets = list(range(0, count, ENSEMBLE_CHUNK))

    def work(offset):
        n = min(ENSEMBLE_CHUNK, count - offset)
        return sample_ensemble(steps, initial, base_seed + offset, n)

    if workers > 1 and len(offsets) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(work, offsets))
    else:
        parts = [work(offset) for offset in offsets]
    return np.vstack(parts)


def _trajectory_objects(labels: np.ndarray, times, base_seed: int):
    times = tuple(float(t) for t in times)
    return [
        Trajectory(seed=base_seed + i, labels=tuple(row), times=times)
        for i, row in enumerate(labels)
    ]


def _boundary_times(steps):
    return [steps[0].time] + [s.time + s.eta for s in steps]


def _occupation_columns(decompositions, names_of_label):
    """Per-boundary occupation series, one column per named label."""
    times = [dec.time for dec in decompositions]
    columns = [("t", np.array(times))]
    for label, name in names_of_label:
        columns.append(
            (name, np.array([dec.probs[label] for dec in decompositions]))
        )
    return columns


def _fmt(value: float) -> str:
    return "%.6g" % float(value)


# ---------------------------------------------------------------------
# scenario runners
# ---------------------------------------------------------------------


def _run_naive(cfg: ExperimentConfig, workers: int) -> RunResult:
    p = _read_parameters(
        cfg,
        {
            "probabilities": (_REQUIRED, _as_float_list),
            "n_dev": (_REQUIRED, _as_int),
            "eta": (0.1, _as_float),
            "duration": (1.0, _as_float),
            "spread": (0.95, _as_float),
            "trajectories": (0, _as_int),
        },
    )
    tol = _Tolerances(cfg)
    weights = np.asarray(p["probabilities"], dtype=float)
    if weights.min() < 0.0:
        raise ConfigError("parameters.probabilities must be nonnegative")
    steps_n = int(round(p["duration"] / p["eta"]))
    model = NaiveModelConfig(
        amplitudes=np.sqrt(weights),
        n_dev=p["n_dev"],
        angle_schedule=ramp_schedule(weights.size, max(steps_n, 1), p["spread"]),
        eta=p["eta"],
        duration=p["duration"],
    )
    run = run_naive(model)
    worst_overlap = float(np.max(run.branch_overlap - np.eye(weights.size)))

    checks = [
        Check(
            "born_residual",
            run.born_residual,
            tol.get("born_residual", max(10.0 * worst_overlap, 1e-12)),
            "<=",
        )
    ]
    summary = [
        f"scenario: naive ({weights.size} outcomes, {p['n_dev']} device qubits)",
        "outcome probabilities: "
        + ", ".join(_fmt(x) for x in run.outcome_probs),
        f"born residual: {_fmt(run.born_residual)} "
        f"(record overlap {_fmt(worst_overlap)})",
        f"decoherence time: {_fmt(run.decoherence_time)}",
    ]

    trajectories = None
    if p["trajectories"] > 0:
        labels = _ensemble(run.steps, 0, cfg.seed, p["trajectories"], workers)
        final_outcomes = np.array(run.label_outcomes)[labels[:, -1]]
        frequency = float(np.mean(final_outcomes == 0))
        sigma = math.sqrt(weights[0] * (1.0 - weights[0]) / p["trajectories"])
        checks.append(
            Check(
                "sampled_frequency_deviation",
                abs(frequency - weights[0]),
                tol.get("sampled_frequency", max(4.0 * sigma, 1e-12)),
                "<=",
            )
        )
        summary.append(
            f"sampled outcome-0 frequency: {frequency:.6f} "
            f"({p['trajectories']} trajectories)"
        )
        if "trajectories" in cfg.emit:
            trajectories = _trajectory_objects(
                labels, _boundary_times(run.steps), cfg.seed
            )
    elif "trajectories" in cfg.emit:
        raise ConfigError(
            "emit includes trajectories but parameters.trajectories is 0"
        )
    tol.finish()

    named = [
        (label, f"p_{outcome}")
        for label, outcome in enumerate(run.label_outcomes)
        if outcome >= 0
    ]
    return RunResult(
        checks=checks,
        summary=summary,
        matrices={
            "composed": compose(run.steps),
            "branch_overlap": run.branch_overlap,
        },
        timeseries=_occupation_columns(run.decompositions, named),
        trajectories=trajectories,
    )


def _run_realistic(cfg: ExperimentConfig, workers: int) -> RunResult:
    p = _read_parameters(
        cfg,
        {
            "error_masses": (_REQUIRED, _as_float_matrix),
            "env_dim": (64, _as_int),
            "device_dim": (16, _as_int),
            "mix": (1e-8, _as_float),
            "eta": (0.05, _as_float),
            "n_steps": (12, _as_int),
            "flow_mode": ("exact", str),
            "threshold": (1e-6, _as_float),
            "compare_modes": (False, _as_bool),
            "trajectories": (0, _as_int),
        },
    )
    tol = _Tolerances(cfg)
    masses = p["error_masses"]
    if masses.min() < 0.0:
        raise ConfigError("parameters.error_masses must be nonnegative")
    error = ErrorMatrix(np.sqrt(masses))
    run = run_realistic(
        error,
        d_p=error.n_outcomes,
        env_dim=p["env_dim"],
        seed=cfg.seed,
        device_dim=p["device_dim"],
        mix=p["mix"],
        eta=p["eta"],
        n_steps=p["n_steps"],
        flow_mode=p["flow_mode"],
        threshold=p["threshold"],
    )
    chain = run.chain
    branches = error.n_branches
    born_tol = tol.get(
        "born_residual", max(10.0 * chain.record_overlap, 1e-12)
    )

    # partition margins: how far the composed entries sit from the
    # threshold on both sides
    branch_of = np.array(chain.label_branches)
    live = branch_of >= 0
    cross_mask = np.not_equal.outer(branch_of, branch_of) & np.outer(live, live)
    max_cross = float(np.max(chain.composed[cross_mask])) if cross_mask.any() else 0.0
    attach = []
    for labels in run.partition.sets:
        for i in labels:
            links = [
                max(chain.composed[i, j], chain.composed[j, i])
                for j in labels
                if j != i
            ]
            if links:
                attach.append(max(links))
    min_attach = min(attach) if attach else math.inf

    checks = [
        Check("ergodic_sets", float(len(run.partition.sets)), float(branches), "=="),
        Check("born_residual", run.born_residual, born_tol, "<="),
        Check(
            "max_cross_composed",
            max_cross,
            tol.get("cross_composed", p["threshold"]),
            "<=",
        ),
    ]
    summary = [
        f"scenario: realistic ({error.n_outcomes} outcomes, {branches} branches, "
        f"device {p['device_dim']}, environment {p['env_dim']})",
        "branch probabilities: " + ", ".join(_fmt(x) for x in run.branch_probs),
        "target column masses: "
        + ", ".join(_fmt(x) for x in error.column_masses()),
        f"born residual: {_fmt(run.born_residual)} "
        f"(record overlap {_fmt(chain.record_overlap)})",
        f"partition margins at threshold {_fmt(p['threshold'])}: "
        f"weakest intra-set attachment {_fmt(min_attach)}, "
        f"strongest cross-set entry {_fmt(max_cross)}",
        "ergodic sets: "
        + "; ".join(str(list(s)) for s in run.partition.sets),
    ]

    if p["compare_modes"]:
        other_mode = "perturbative" if p["flow_mode"] == "exact" else "exact"
        twin = run_realistic(
            error,
            d_p=error.n_outcomes,
            env_dim=p["env_dim"],
            seed=cfg.seed,
            device_dim=p["device_dim"],
            mix=p["mix"],
            eta=p["eta"],
            n_steps=p["n_steps"],
            flow_mode=other_mode,
            threshold=p["threshold"],
        )
        drift = float(np.max(np.abs(twin.branch_probs - run.branch_probs)))
        checks.append(
            Check("mode_invariance", drift, tol.get("mode_invariance", born_tol), "<=")
        )
        summary.append(
            f"exact vs perturbative branch probabilities differ by {_fmt(drift)}"
        )

    trajectories = None
    if p["trajectories"] > 0:
        labels = _ensemble(
            chain.steps,
            chain.decompositions[0].probs,
            cfg.seed,
            p["trajectories"],
            workers,
        )
        if "trajectories" in cfg.emit:
            trajectories = _trajectory_objects(
                labels, _boundary_times(chain.steps), cfg.seed
            )
    elif "trajectories" in cfg.emit:
        raise ConfigError(
            "emit includes trajectories but parameters.trajectories is 0"
        )
    tol.finish()

    times = [dec.time for dec in chain.decompositions]
    columns = [("t", np.array(times))]
    for branch in range(branches):
        members = [i for i, b in enumerate(chain.label_branches) if b == branch]
        series = [
            sum(dec.probs[i] for i in members) for dec in chain.decompositions
        ]
        columns.append((f"p_branch_{branch}", np.array(series)))

    return RunResult(
        checks=checks,
        summary=summary,
        matrices={"composed": chain.composed, "micro_gram": chain.micro_gram},
        timeseries=columns,
        trajectories=trajectories,
    )


def _run_binned(cfg: ExperimentConfig, workers: int) -> RunResult:
    p = _read_parameters(
        cfg,
        {
            "edges": (_REQUIRED, _as_float_list),
            "grid_min": (-4.0, _as_float),
            "grid_max": (4.0, _as_float),
            "grid_points": (64, _as_int),
            "amplitudes": (None, _as_float_list),
            "gaussian_center": (0.0, _as_float),
            "gaussian_width": (1.5, _as_float),
            "eta": (0.05, _as_float),
            "duration": (1.0, _as_float),
        },
    )
    tol = _Tolerances(cfg)
    grid = np.linspace(p["grid_min"], p["grid_max"], p["grid_points"])
    if p["amplitudes"] is not None:
        amps = np.asarray(p["amplitudes"], dtype=complex)
        if amps.size != grid.size:
            raise ConfigError(
                f"parameters.amplitudes has {amps.size} entries "
                f"for a {grid.size}-point grid"
            )
    else:
        amps = np.exp(
            -((grid - p["gaussian_center"]) ** 2) / (2.0 * p["gaussian_width"] ** 2)
        ).astype(complex)
    norm = np.linalg.norm(amps)
    if norm <= 0.0:
        raise ConfigError("wavefunction has zero norm")
    amps = amps / norm

    run = run_binned_position(
        grid, amps, np.asarray(p["edges"], dtype=float),
        eta=p["eta"], duration=p["duration"],
    )
    mass_residual = float(np.max(np.abs(run.bin_probs - run.masses)))
    checks = [
        Check("mass_residual", mass_residual, tol.get("mass_residual", 1e-10), "<="),
        Check(
            "localization_defect",
            1.0 - run.localization,
            tol.get("localization_defect", 1e-9),
            "<=",
        ),
    ]
    tol.finish()
    summary = [
        f"scenario: binned ({grid.size}-point grid, {run.masses.size} bins)",
        "bin masses:        " + ", ".join(_fmt(x) for x in run.masses),
        "bin probabilities: " + ", ".join(_fmt(x) for x in run.bin_probs),
        f"mass residual: {_fmt(mass_residual)}",
        f"worst localization: {run.localization:.12f}",
        f"decoherence time: {_fmt(run.decoherence_time)}",
    ]
    named = [
        (label, f"p_bin_{b}")
        for label, b in enumerate(run.label_bins)
        if b >= 0
    ]
    named.sort(key=lambda pair: pair[1])
    return RunResult(
        checks=checks,
        summary=summary,
        matrices={
            "composed": compose(run.steps),
            "flag_overlap": run.flag_overlap,
        },
        timeseries=_occupation_columns(run.decompositions, named),
    )


def _epr_amplitudes(p) -> tuple[complex, complex]:
    w1, w2 = p["weight_up_down"], p["weight_down_up"]
    if w1 < 0.0 or w2 < 0.0:
        raise ConfigError("pair weights must be nonnegative")
    total = w1 + w2
    if total <= 0.0:
        raise ConfigError("pair weights must not both vanish")
    return (
        complex(math.sqrt(w1 / total)),
        complex(math.sqrt(w2 / total)) * complex(np.exp(1j * p["relative_phase"])),
    )


def _run_epr(cfg: ExperimentConfig, workers: int) -> RunResult:
    p = _read_parameters(
        cfg,
        {
            "angle_a": (0.0, _as_float),
            "angle_b": (math.pi / 3.0, _as_float),
            "weight_up_down": (0.5, _as_float),
            "weight_down_up": (0.5, _as_float),
            "relative_phase": (math.pi, _as_float),
            "b_first": (False, _as_bool),
            "trajectories": (0, _as_int),
        },
    )
    tol = _Tolerances(cfg)
    amp_ud, amp_du = _epr_amplitudes(p)
    run = run_epr(
        EprConfig(amp_ud, amp_du, p["angle_a"], p["angle_b"], p["b_first"])
    )
    checks = [
        Check(
            "pipeline_residual",
            run.pipeline_residual,
            tol.get("pipeline_residual", 1e-9),
            "<=",
        ),
        Check("rho2_drift", run.rho2_drift, tol.get("rho2_drift", 1e-12), "<="),
        Check(
            "parameter_independence",
            run.parameter_independence,
            tol.get("parameter_independence", 1e-12),
            "<=",
        ),
        Check(
            "outcome_dependence",
            run.outcome_dependence,
            tol.get("outcome_dependence_floor", 0.1),
            ">=",
        ),
    ]
    summary = [
        f"scenario: epr (axes {p['angle_a']:.6g} and {p['angle_b']:.6g} rad)",
        "joint table rows: "
        + "; ".join(
            ", ".join(_fmt(x) for x in row) for row in run.joints
        ),
        f"pipeline residual: {_fmt(run.pipeline_residual)}",
        f"remote state drift: {_fmt(run.rho2_drift)}",
        f"parameter independence: {_fmt(run.parameter_independence)}",
        f"outcome dependence: {_fmt(run.outcome_dependence)}",
    ]

    trajectories = None
    if p["trajectories"] > 0:
        labels = _ensemble(
            run.steps,
            run.decompositions[0].probs,
            cfg.seed,
            p["trajectories"],
            workers,
        )
        if "trajectories" in cfg.emit:
            trajectories = _trajectory_objects(
                labels, _boundary_times(run.steps), cfg.seed
            )
    elif "trajectories" in cfg.emit:
        raise ConfigError(
            "emit includes trajectories but parameters.trajectories is 0"
        )
    tol.finish()

    named = [
        (label, f"p_label_{label}")
        for label in range(run.decompositions[-1].probs.size)
        if run.label_outcomes[label] >= 0
    ]
    return RunResult(
        checks=checks,
        summary=summary,
        matrices={
            "joints": run.joints,
            "dynamical_joints": run.dynamical_joints,
            "conditionals": run.conditionals,
        },
        timeseries=_occupation_columns(run.decompositions, named),
        trajectories=trajectories,
    )


def _run_chsh(cfg: ExperimentConfig, workers: int) -> RunResult:
    p = _read_parameters(
        cfg,
        {
            "angles_a": ((0.0, math.pi / 2.0), _as_float_pair),
            "angles_b": ((math.pi / 4.0, 3.0 * math.pi / 4.0), _as_float_pair),
            "weight_up_down": (0.5, _as_float),
            "weight_down_up": (0.5, _as_float),
            "relative_phase": (math.pi, _as_float),
            "expected_s": (None, _as_float),
            "trajectories": (0, _as_int),
        },
    )
    tol = _Tolerances(cfg)
    amp_ud, amp_du = _epr_amplitudes(p)
    analytic = chsh(amp_ud, amp_du, p["angles_a"], p["angles_b"])
    checks = []
    summary = [
        "scenario: chsh (axes "
        + ", ".join(_fmt(a) for a in (*p["angles_a"], *p["angles_b"]))
        + " rad)",
        f"analytic S: {analytic:.12f}",
    ]
    if p["expected_s"] is not None:
        checks.append(
            Check(
                "analytic_s_deviation",
                abs(analytic - p["expected_s"]),
                tol.get("analytic_s", 1e-9),
                "<=",
            )
        )
    matrices = {}
    if p["trajectories"] > 0:
        est = chsh_sampled(
            amp_ud,
            amp_du,
            p["angles_a"],
            p["angles_b"],
            trajectories=p["trajectories"],
            base_seed=cfg.seed,
        )
        window = tol.get("sampled_error_multiple", 5.0) * est.stderr
        checks.append(
            Check("sampled_s_deviation", abs(est.value - analytic), window, "<=")
        )
        summary.append(
            f"sampled S: {est.value:.6f} +/- {est.stderr:.6f} "
            f"({p['trajectories']} trajectories per setting)"
        )
        matrices["correlators"] = est.correlators
    if not checks:
        raise ConfigError(
            "chsh run checks nothing: set parameters.expected_s or "
            "parameters.trajectories"
        )
    tol.finish()
    return RunResult(checks=checks, summary=summary, matrices=matrices)


def _run_crossover(cfg: ExperimentConfig, workers: int) -> RunResult:
    p = _read_parameters(
        cfg,
        {
            "p0": (0.4, _as_float),
            "a1": (1.0, _as_float),
            "a2": (-1.0, _as_float),
            "delta": (1e-8, _as_float),
            "eta": (1e-3, _as_float),
            "eta_sweep": (None, _as_float_list),
        },
    )
    tol = _Tolerances(cfg)
    model = CrossoverModel(p0=p["p0"], a1=p["a1"], a2=p["a2"], delta=p["delta"])
    report = macroflip_compare(model, p["eta"])
    checks = [
        Check(
            "continuum_flip",
            report.continuum_flip,
            tol.get("continuum_flip_floor", 0.9),
            ">=",
        ),
        Check(
            "coarse_cross_probability",
            report.coarse_cross_probability,
            tol.get("coarse_cross", 1e-4),
            "<=",
        ),
        Check(
            "content_preserved", float(report.content_preserved), 1.0, "=="
        ),
    ]
    summary = [
        f"scenario: crossover (p0 {p['p0']:.6g}, slopes {p['a1']:.6g}/{p['a2']:.6g}, "
        f"delta {p['delta']:.3e})",
        f"continuum flip probability: {report.continuum_flip:.6f} "
        f"(narrow window {report.continuum_flip_narrow:.6f})",
        f"coarse cross-label probability: {_fmt(report.coarse_cross_probability)}",
        f"label content preserved: {report.content_preserved}",
        f"worst label-matching overlap: {report.min_label_overlap:.6f}",
    ]
    if p["eta_sweep"]:
        contents = []
        for eta in p["eta_sweep"]:
            twin = macroflip_compare(model, float(eta))
            contents.append((twin.content_start, twin.content_end))
        agree = all(c == contents[0] for c in contents)
        checks.append(Check("eta_invariance", float(agree), 1.0, "=="))
        summary.append(
            "label content identical across eta sweep: "
            + ", ".join(_fmt(e) for e in p["eta_sweep"])
        )
    tol.finish()

    t0, t1 = report.t_span
    count = int(round((t1 - t0) / p["eta"]))
    times = t0 + np.arange(count + 1) * p["eta"]
    rows = [crossover_eigensystem(model, float(t)) for t in times]
    columns = [
        ("t", times),
        ("p_plus", np.array([r[0] for r in rows])),
        ("p_minus", np.array([r[1] for r in rows])),
        ("theta", np.array([r[2] for r in rows])),
    ]
    return RunResult(checks=checks, summary=summary, timeseries=columns)


def _run_typicality(cfg: ExperimentConfig, workers: int) -> RunResult:
    p = _read_parameters(
        cfg,
        {
            "d_a": (2, _as_int),
            "d_e": (256, _as_int),
            "n_samples": (200, _as_int),
            "projector": (None, _as_float_matrix),
            "beta": (None, _as_float),
            "h_a_diag": (None, _as_float_list),
            "window_center": (None, _as_float),
            "window_width": (None, _as_float),
        },
    )
    tol = _Tolerances(cfg)
    h_a = np.diag(p["h_a_diag"]) if p["h_a_diag"] is not None else None
    try:
        config = TypicalityConfig(
            d_a=p["d_a"],
            d_e=p["d_e"],
            n_samples=p["n_samples"],
            seed=cfg.seed,
            projector=p["projector"],
            beta=p["beta"],
            h_a=h_a,
            window_center=p["window_center"],
            window_width=p["window_width"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    rep = run_typicality(config)
    checks = [
        Check(
            "mean_distance", rep.mean_distance, tol.get("mean_distance", 0.2), "<="
        )
    ]
    summary = [
        f"scenario: typicality ({rep.mode} mode, d_a {rep.d_a}, d_e {rep.d_e}, "
        f"{rep.n_samples} samples)",
        f"mean trace distance to target: {rep.mean_distance:.6f} "
        f"(max {rep.max_distance:.6f})",
        f"mean purity: {rep.mean_purity:.6f} +/- {rep.purity_stderr:.2e}",
        f"constrained rank: {rep.constrained_rank}",
    ]
    if rep.mode == "haar":
        pull = (
            abs(rep.mean_purity - rep.lubkin_purity) / rep.purity_stderr
            if rep.purity_stderr > 0.0
            else 0.0
        )
        checks.append(Check("purity_pull", pull, tol.get("purity_pull", 4.0), "<="))
        summary.append(
            f"predicted average purity: {rep.lubkin_purity:.6f} "
            f"(pull {pull:.3f} standard errors)"
        )
    matrices = {"target": rep.target}
    if rep.canonical_target is not None:
        matrices["canonical_target"] = rep.canonical_target
        summary.append(
            f"partition function: {rep.partition_function:.12f}; "
            f"mean distance to the Boltzmann form: {rep.canonical_mean_distance:.6f}"
        )
    tol.finish()
    return RunResult(checks=checks, summary=summary, matrices=matrices)


def _run_chain_analyze(cfg: ExperimentConfig, workers: int) -> RunResult:
    p = _read_parameters(
        cfg,
        {
            "size": (8, _as_int),
            "p": (0.01, _as_float),
            "eta": (0.05, _as_float),
            "n_max": (None, _as_int),
            "trajectories": (0, _as_int),
            "trajectory_steps": (50, _as_int),
        },
    )
    tol = _Tolerances(cfg)
    try:
        step = toy_mixing_chain(p["size"], p["p"], p["eta"], cfg.seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    predicted = 2.0 * p["eta"] / (p["p"] * p["size"])
    n_star = int(math.ceil(50.0 * predicted / p["eta"]))
    n_max = p["n_max"] if p["n_max"] is not None else n_star
    if n_max < n_star:
        raise ConfigError(
            f"parameters.n_max = {n_max} stops before the convergence "
            f"horizon {n_star} (50 predicted decay times)"
        )
    report = equilibrium_convergence(step, n_max)
    closed = [s for s in report.sets if s.closed]
    checks = [
        Check("ergodic_sets", float(len(report.sets)), 1.0, "==")
    ]
    summary = [
        f"scenario: chain-analyze (size {p['size']}, pair rate {p['p']:.6g}, "
        f"eta {p['eta']:.6g})",
        f"predicted decay time: {predicted:.6f}",
    ]
    matrices = {"cond": step.cond}
    timeseries = None
    if closed and len(report.sets) == 1:
        main = closed[0]
        rel_err = abs(main.decay_time - predicted) / predicted
        checks.append(
            Check(
                "decay_time_relative_error",
                rel_err,
                tol.get("decay_time", 0.1),
                "<=",
            )
        )
        checks.append(
            Check(
                "stationary_residual",
                float(main.deviations[n_star - 1]),
                tol.get("stationary_residual", 1e-6),
                "<=",
            )
        )
        summary += [
            f"fitted decay time: {main.decay_time:.6f} "
            f"(relative error {rel_err:.4f})",
            f"max column deviation after {n_star} steps: "
            f"{_fmt(main.deviations[n_star - 1])}",
        ]
        matrices["stationary"] = main.stationary
        timeseries = [
            ("t", (np.arange(n_max) + 1) * p["eta"]),
            ("deviation", main.deviations),
        ]
    else:
        summary.append(
            f"chain is reducible: {len(report.sets)} strongly connected sets"
        )

    trajectories = None
    if p["trajectories"] > 0:
        steps = [
            step_from_cond(step.cond, eta=p["eta"], time=k * p["eta"])
            for k in range(p["trajectory_steps"])
        ]
        labels = _ensemble(steps, 0, cfg.seed, p["trajectories"], workers)
        if "trajectories" in cfg.emit:
            trajectories = _trajectory_objects(
                labels, _boundary_times(steps), cfg.seed
            )
    elif "trajectories" in cfg.emit:
        raise ConfigError(
            "emit includes trajectories but parameters.trajectories is 0"
        )
    tol.finish()
    return RunResult(
        checks=checks,
        summary=summary,
        matrices=matrices,
        timeseries=timeseries,
        trajectories=trajectories,
    )


_RUNNERS = {
    "naive": _run_naive,
    "realistic": _run_realistic,
    "binned": _run_binned,
    "epr": _run_epr,
    "chsh": _run_chsh,
    "crossover": _run_crossover,
    "typicality": _run_typicality,
    "chain-analyze": _run_chain_analyze,
}

_ALL_KINDS = frozenset(EMIT_KINDS)
_SUPPORTED_EMITS = {
    "naive": _ALL_KINDS,
    "realistic": _ALL_KINDS,
    "binned": frozenset({"summary", "matrices", "timeseries"}),
    "epr": _ALL_KINDS,
    "chsh": frozenset({"summary", "matrices"}),
    "crossover": frozenset({"summary", "timeseries"}),
    "typicality": frozenset({"summary", "matrices"}),
    "chain-analyze": _ALL_KINDS,
}


# ---------------------------------------------------------------------
# command front end
# ---------------------------------------------------------------------


def run_experiment(cfg: ExperimentConfig, workers: int = 1) -> RunResult:
    """Dispatch a validated config, mapping library failures to RunFailure."""
    runner = _RUNNERS[cfg.scenario]
    try:
        result = runner(cfg, workers)
    except RuntimeError as exc:
        raise RunFailure(str(exc)) from exc
    except ValueError as exc:
        message = str(exc)
        if any(marker in message for marker in _RUN_FAILURE_MARKERS):
            raise RunFailure(message) from exc
        raise ConfigError(message) from exc
    _require_unique_names(result.checks)
    return result


def _emit_all(cfg: ExperimentConfig, result: RunResult, outdir: Path, wall: float):
    outdir.mkdir(parents=True, exist_ok=True)
    _write_manifest(outdir / "manifest.json", cfg, result.checks, wall)
    if "summary" in cfg.emit:
        lines = result.summary + [
            f"check {c.name}: {'pass' if c.passed else 'FAIL'} "
            f"(measured {_fmt(c.measured)}, needs {c.comparison} {_fmt(c.tolerance)})"
            for c in result.checks
        ]
        (outdir / "summary.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    if "trajectories" in cfg.emit:
        emit_trajectories(result.trajectories, outdir / "trajectories.jsonl")
    if "timeseries" in cfg.emit:
        emit_timeseries(result.timeseries or [], outdir / "timeseries.csv")
    if "matrices" in cfg.emit:
        _write_matrices(result.matrices, outdir / "matrices.json")


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # ensure usage problems exit 1, not 2
        raise ConfigError(message)


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="modalchain",
        description="Run coarse-grained jump-chain experiments from TOML configs.",
    )
    commands = parser.add_subparsers(dest="command", required=True)
    run_cmd = commands.add_parser("run", help="run an experiment config")
    run_cmd.add_argument("config", help="path to a TOML experiment config")
    run_cmd.add_argument("--seed", type=int, help="override the config seed")
    run_cmd.add_argument("--out", help="override the output directory")
    run_cmd.add_argument(
        "--emit", help="comma-separated artifact kinds to write"
    )
    run_cmd.add_argument(
        "--workers",
        type=int,
        help="worker threads for trajectory ensembles (speed only)",
    )
    validate_cmd = commands.add_parser(
        "validate", help="check a config without running it"
    )
    validate_cmd.add_argument("config")
    commands.add_parser("list-scenarios", help="print the available scenarios")
    return parser


def _resolve_workers(cli_value) -> int:
    if cli_value is not None:
        value = cli_value
    else:
        env = os.environ.get("MODALCHAIN_WORKERS", "")
        if not env:
            return 1
        try:
            value = int(env)
        except ValueError:
            raise ConfigError(
                f"MODALCHAIN_WORKERS must be an integer, got {env!r}"
            ) from None
    if value < 1:
        raise ConfigError(f"workers must be at least 1, got {value}")
    return value


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "list-scenarios":
            for name in _RUNNERS:
                print(name)
            return 0
        if args.command == "validate":
            cfg = load_config(args.config)
            print(f"ok: scenario {cfg.scenario!r}, seed {cfg.seed:#x}")
            return 0
        cfg = load_config(args.config, seed=args.seed, output=args.out, emit=args.emit)
        workers = _resolve_workers(args.workers)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    outdir = Path(cfg.output) if cfg.output else Path("runs") / cfg.scenario
    started = time.perf_counter()
    try:
        result = run_experiment(cfg, workers)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except RunFailure as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return 2
    wall = time.perf_counter() - started

    try:
        _emit_all(cfg, result, outdir, wall)
    except (OSError, ValueError) as exc:
        print(f"error: cannot write artifacts: {exc}", file=sys.stderr)
        return 1

    for check in result.checks:
        state = "pass" if check.passed else "FAIL"
        print(
            f"{check.name}: {state} (measured {_fmt(check.measured)}, "
            f"needs {check.comparison} {_fmt(check.tolerance)})"
        )
    passed = all(c.passed for c in result.checks)
    print(f"{'all checks passed' if passed else 'CHECKS FAILED'}; "
          f"artifacts in {outdir}")
    return 0 if passed else 2


if __name__ == "__main__":
    sys.exit(main())
