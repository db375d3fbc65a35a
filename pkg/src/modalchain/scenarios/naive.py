"""Pointer measurement with a register of collectively rotated qubits.

The measured system is a d_P-dimensional pointer; the device is a
register of n_dev qubits that all rotate by an outcome-conditioned angle.
Branch records separate as a product of single-qubit cosines, so the
residual branch overlap is tunable through the register size and the
final angle spread.  The coarse jump chain is driven by the exact
step unitaries, never by the closed-form branch states.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..chain import TransitionStep, decoherence_time, flow_exact, transition_matrix
from ..ontic import (
    NULL_CUTOFF,
    MatchReport,
    OnticDecomposition,
    match_labels,
    ontic_decompose,
)
from ..qcore import DimSignature, StateVector

#: squared-eigenvector overlap at which an ontic state counts as aligned
#: with its branch record
ALIGNMENT_LEVEL = 0.99

#: every pair of outcome angles must end at least this far apart (mod pi)
MIN_FINAL_SEPARATION = math.pi / 4

AMPLITUDE_NORM_TOL = 1e-12
SCHEDULE_MONOTONE_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class NaiveModelConfig:
    """Settings for one collective-rotation measurement run.

    ``angle_schedule`` has one column per outcome and one row per step
    boundary (``round(duration/eta) + 1`` rows, row 0 at t = 0), giving the
    cumulative rotation angle of every device qubit conditioned on that
    outcome.  ``amplitudes`` are the pointer weights; their squared
    magnitudes are the target branch probabilities.
    """

    amplitudes: np.ndarray
    n_dev: int
    angle_schedule: np.ndarray
    eta: float
    duration: float

    def __post_init__(self):
        amps = np.array(self.amplitudes, dtype=np.complex128, copy=True).reshape(-1)
        amps.flags.writeable = False
        object.__setattr__(self, "amplitudes", amps)
        if amps.size < 2:
            raise ValueError("need at least two outcomes")
        norm = float(np.sum(np.abs(amps) ** 2))
        if abs(norm - 1.0) > AMPLITUDE_NORM_TOL:
            raise ValueError(f"amplitudes are not normalized: sum |c|^2 = {norm:.12f}")
        if int(self.n_dev) < 1:
            raise ValueError(f"need at least one device qubit, got {self.n_dev}")
        object.__setattr__(self, "n_dev", int(self.n_dev))
        if not (self.eta > 0.0 and self.duration > 0.0):
            raise ValueError("eta and duration must be positive")
        object.__setattr__(self, "eta", float(self.eta))
        object.__setattr__(self, "duration", float(self.duration))
        steps = self.n_steps
        if abs(steps * self.eta - self.duration) > 1e-9 * self.duration:
            raise ValueError(
                f"duration {self.duration} is not a whole number of eta={self.eta} steps"
            )
        sched = np.array(self.angle_schedule, dtype=float, copy=True)
        if sched.ndim != 2 or sched.shape != (steps + 1, amps.size):
            raise ValueError(
                f"angle_schedule shape {sched.shape} does not match "
                f"{steps + 1} step boundaries x {amps.size} outcomes"
            )
        if np.any(np.diff(sched, axis=0) < -SCHEDULE_MONOTONE_TOL):
            raise ValueError("angle_schedule must be nondecreasing in time")
        final = sched[-1]
        for i in range(amps.size):
            for j in range(i + 1, amps.size):
                gap = abs(math.cos(final[i] - final[j]))
                if gap > math.cos(MIN_FINAL_SEPARATION) + 1e-12:
                    raise ValueError(
                        f"outcomes {i} and {j} end only "
                        f"{abs(final[i] - final[j]):.4f} rad apart (mod pi); "
                        f"records never separate"
                    )
        sched.flags.writeable = False
        object.__setattr__(self, "angle_schedule", sched)

    @property
    def n_outcomes(self) -> int:
        return self.amplitudes.size

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.eta))


def ramp_schedule(
    outcomes: int, steps: int, spread: float = 0.95
) -> np.ndarray:
    """Linear angle schedule separating all outcome pairs by time T.

    Outcome i ramps from 0 to ``spread * pi * i / outcomes``, so adjacent
    outcomes end ``spread * pi / outcomes`` apart and no pair ever ends on
    a multiple of pi, where records would re-overlap.
    """
    if outcomes < 2:
        raise ValueError("need at least two outcomes")
    if steps < 1:
        raise ValueError("need at least one step")
    targets = spread * math.pi * np.arange(outcomes) / outcomes
    ramp = np.linspace(0.0, 1.0, steps + 1)
    return np.outer(ramp, targets)


def _register_state(angle: float, n_dev: int) -> np.ndarray:
    """All-qubit product vector after rotating each qubit by ``angle``."""
    qubit = np.array([math.cos(angle), math.sin(angle)], dtype=np.complex128)
    out = qubit
    for _ in range(n_dev - 1):
        out = np.kron(out, qubit)
    return out


def _rotate_register(block: np.ndarray, angle: float, n_dev: int) -> np.ndarray:
    """Apply the same 2x2 rotation to every qubit of a register block."""
    if angle == 0.0:
        return block
    c, s = math.cos(angle), math.sin(angle)
    rot = np.array([[c, -s], [s, c]], dtype=np.complex128)
    t = block.reshape((2,) * n_dev)
    for axis in range(n_dev):
        t = np.moveaxis(np.tensordot(rot, t, axes=(1, axis)), 0, axis)
    return t.reshape(-1)


@dataclass(frozen=True)
class ConditionalRotation:
    """Propagator that rotates the register by a per-outcome increment."""

    increments: tuple[float, ...]
    n_dev: int
    step: float

    def apply(self, state: StateVector) -> StateVector:
        block = state.amplitudes.reshape(len(self.increments), -1)
        rows = [
            _rotate_register(block[i], delta, self.n_dev)
            for i, delta in enumerate(self.increments)
        ]
        return StateVector(np.stack(rows).reshape(-1), state.dims)


@dataclass(frozen=True, eq=False)
class NaiveRun:
    """Everything one measurement run produced.

    ``outcome_probs`` is indexed by outcome, not by label;
    ``label_outcomes`` maps final retained labels to outcomes.
    ``branch_overlap`` is the pairwise record overlap |<D_i|D_j>| at T.
    """

    config: NaiveModelConfig
    decompositions: tuple[OnticDecomposition, ...]
    reports: tuple[MatchReport, ...]
    steps: tuple[TransitionStep, ...]
    outcome_probs: np.ndarray
    label_outcomes: tuple[int, ...]
    branch_overlap: np.ndarray
    born_residual: float
    decoherence_time: float


def _branch_overlap(final_angles: np.ndarray, n_dev: int) -> np.ndarray:
    d = final_angles.size
    overlap = np.eye(d)
    for i in range(d):
        for j in range(i + 1, d):
            overlap[i, j] = overlap[j, i] = abs(
                math.cos(final_angles[i] - final_angles[j])
            ) ** n_dev
    return overlap


def run_naive(cfg: NaiveModelConfig) -> NaiveRun:
    """Run the measurement chain and check it reproduces the Born weights.

    The state starts as (pointer superposition) x (all qubits at angle
    zero), a rank-one cut, and fans out into one branch per outcome as the
    conditioned rotations separate the records.  Raises if any coarse step
    comes out inconsistent (eta too coarse for the schedule), or if the
    final occupations miss the squared amplitudes by more than the
    residual record overlap.
    """
    d_p = cfg.n_outcomes
    dims = DimSignature((d_p, 2**cfg.n_dev))
    register0 = _register_state(0.0, cfg.n_dev)
    psi = StateVector(np.kron(cfg.amplitudes, register0), dims)

    decs = [ontic_decompose(psi, cut=(0,), time=0.0)]
    reports: list[MatchReport] = []
    steps: list[TransitionStep] = []
    for k in range(cfg.n_steps):
        increments = tuple(
            cfg.angle_schedule[k + 1, i] - cfg.angle_schedule[k, i]
            for i in range(d_p)
        )
        prop = ConditionalRotation(increments, cfg.n_dev, cfg.eta)
        psi = prop.apply(psi)
        raw = ontic_decompose(psi, cut=(0,), time=(k + 1) * cfg.eta)
        matched, report = match_labels(decs[-1], raw)
        flow = flow_exact(decs[-1], matched, prop)
        step = transition_matrix(flow, decs[-1].probs, cfg.eta, time=k * cfg.eta)
        if not step.consistent:
            raise ValueError(
                f"inconsistent transition at step {k} "
                f"(t = {k * cfg.eta:.6g}); use a smaller eta"
            )
        decs.append(matched)
        reports.append(report)
        steps.append(step)

    final = decs[-1]
    label_outcomes = _classify_labels(final)
    outcome_probs = np.zeros(d_p)
    for label, outcome in enumerate(label_outcomes):
        if outcome >= 0:
            outcome_probs[outcome] = final.probs[label]

    overlap = _branch_overlap(cfg.angle_schedule[-1], cfg.n_dev)
    worst_overlap = float(np.max(overlap - np.eye(d_p)))
    residual = float(np.max(np.abs(outcome_probs - np.abs(cfg.amplitudes) ** 2)))
    if residual > max(worst_overlap, 1e-12):
        raise RuntimeError(
            f"final occupations miss the Born weights by {residual:.3e}, "
            f"beyond the record overlap {worst_overlap:.3e}"
        )
    return NaiveRun(
        config=cfg,
        decompositions=tuple(decs),
        reports=tuple(reports),
        steps=tuple(steps),
        outcome_probs=outcome_probs,
        label_outcomes=label_outcomes,
        branch_overlap=overlap,
        born_residual=residual,
        decoherence_time=decoherence_time(steps),
    )


def _classify_labels(dec: OnticDecomposition) -> tuple[int, ...]:
    """Outcome index of each label's pointer vector; -1 for null labels.

    A retained label is attributed to the pointer basis state carrying
    most of its weight.  Distinct retained labels claiming the same
    outcome mean the records never separated, which run_naive treats as
    a failure upstream.
    """
    outcomes: list[int] = []
    seen: set[int] = set()
    for label in range(dec.probs.size):
        if dec.probs[label] <= NULL_CUTOFF:
            outcomes.append(-1)
            continue
        weights = np.abs(dec.ontic[label].amplitudes) ** 2
        outcome = int(np.argmax(weights))
        if outcome in seen:
            raise RuntimeError(
                f"labels collide on outcome {outcome}; records never separated"
            )
        seen.add(outcome)
        outcomes.append(outcome)
    return tuple(outcomes)


@dataclass(frozen=True, eq=False)
class ProbeReport:
    """Alignment history of a nearly balanced two-outcome run.

    ``alignment`` tracks, per step boundary, the squared overlap between
    the dominant eigenvector of the pointer state and its branch record;
    ``alignment_time`` is the first grid time at or past ALIGNMENT_LEVEL
    (inf if the schedule ends first).
    """

    s: float
    gap: float
    times: np.ndarray
    alignment: np.ndarray
    alignment_time: float


def near_degenerate_probe(s: float, cfg: NaiveModelConfig) -> ProbeReport:
    """Time for the pointer eigenbasis to align when weights nearly tie.

    Overrides the config amplitudes with |c_1|^2 = 1/2 + e^-s and
    |c_2|^2 = 1/2 - e^-s, then follows the 2x2 pointer state in closed
    form: its off-diagonal element is the record overlap
    cos(chi_1 - chi_2)^n_dev, so no register state is ever built and the
    qubit count may be large.  The closer the tie (larger s), the longer
    the eigenvectors take to settle onto the branch records.
    """
    if cfg.n_outcomes != 2:
        raise ValueError("the probe needs a two-outcome config")
    split = math.exp(-float(s))
    if split >= 0.5:
        raise ValueError(
            f"exp(-s) = {split:.4f} >= 1/2 leaves no valid weight pair; "
            f"need s > ln 2"
        )
    w1, w2 = 0.5 + split, 0.5 - split
    cross = math.sqrt(w1 * w2)

    boundaries = cfg.n_steps + 1
    times = np.arange(boundaries) * cfg.eta
    alignment = np.empty(boundaries)
    for k in range(boundaries):
        delta = cfg.angle_schedule[k, 0] - cfg.angle_schedule[k, 1]
        g = math.cos(delta) ** cfg.n_dev
        rho = np.array([[w1, cross * g], [cross * g, w2]])
        _, vecs = np.linalg.eigh(rho)
        alignment[k] = abs(vecs[0, 1]) ** 2  # top eigenvector vs outcome 1
    hits = np.flatnonzero(alignment >= ALIGNMENT_LEVEL)
    alignment_time = float(times[hits[0]]) if hits.size else math.inf
    return ProbeReport(
        s=float(s),
        gap=2.0 * split,
        times=times,
        alignment=alignment,
        alignment_time=alignment_time,
    )
