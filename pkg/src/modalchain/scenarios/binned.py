"""Coarse position measurement with one flag qubit per bin.

A particle amplitude sampled on a grid is measured only at bin
resolution: the device carries one qubit per bin, and the qubit of the
bin containing the particle rotates from |0> to |1> over the run.  The
branch structure therefore follows the binned masses, not the grid, and
the grid side of the cut is the larger one, exercising the decomposition
with the system on the mirror side.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..chain import TransitionStep, decoherence_time, flow_exact, transition_matrix
from ..ontic import (
    DEGENERACY_TOL,
    NULL_CUTOFF,
    MatchReport,
    OnticDecomposition,
    match_labels,
    ontic_decompose,
)
from ..qcore import DimSignature, StateVector

#: minimum grid refinement of every bin
POINTS_PER_BIN = 8

MASS_TOL = 1e-10
NORM_TOL = 1e-9
LOCALIZATION_TOL = 1e-9


def _flag_state(bin_index: int, angle: float, n_bins: int) -> np.ndarray:
    """Register vector with only the given bin's qubit rotated."""
    idle = np.array([1.0, 0.0], dtype=np.complex128)
    hot = np.array([math.cos(angle), math.sin(angle)], dtype=np.complex128)
    out = np.ones(1, dtype=np.complex128)
    for q in range(n_bins):
        out = np.kron(out, hot if q == bin_index else idle)
    return out


def _rotate_flag(block: np.ndarray, qubit: int, angle: float, n_bins: int) -> np.ndarray:
    """Rotate one register qubit on a (rows, 2**n_bins) block of rows."""
    c, s = math.cos(angle), math.sin(angle)
    rot = np.array([[c, -s], [s, c]], dtype=np.complex128)
    t = block.reshape(block.shape[0], *((2,) * n_bins))
    axis = 1 + qubit
    t = np.moveaxis(np.tensordot(rot, t, axes=(1, axis)), 0, axis)
    return t.reshape(block.shape[0], -1)


@dataclass(frozen=True)
class BinFlagRotation:
    """Propagator rotating each bin's flag qubit where the particle is."""

    bin_of: tuple[int, ...]
    increment: float
    n_bins: int
    step: float

    def apply(self, state: StateVector) -> StateVector:
        block = state.amplitudes.reshape(len(self.bin_of), -1).copy()
        labels = np.asarray(self.bin_of)
        for j in range(self.n_bins):
            rows = np.flatnonzero(labels == j)
            if rows.size:
                block[rows] = _rotate_flag(
                    block[rows], j, self.increment, self.n_bins
                )
        return StateVector(block.reshape(-1), state.dims)


@dataclass(frozen=True, eq=False)
class BinnedRun:
    """Chain output of one binned position measurement.

    ``bin_probs`` is indexed by bin; empty bins keep a null label with
    probability ~0 instead of disappearing, and ``label_bins`` records
    which label each bin ended up on.
    """

    masses: np.ndarray
    bin_probs: np.ndarray
    label_bins: tuple[int, ...]
    decompositions: tuple[OnticDecomposition, ...]
    reports: tuple[MatchReport, ...]
    steps: tuple[TransitionStep, ...]
    flag_overlap: np.ndarray
    localization: float
    decoherence_time: float


def _device_states(dec: OnticDecomposition):
    """States on the flag-register side, whichever list holds them."""
    return dec.ontic if dec.swapped else dec.mirrors


def run_binned_position(
    grid: np.ndarray,
    amplitudes: np.ndarray,
    edges: np.ndarray,
    eta: float = 0.05,
    duration: float = 1.0,
) -> BinnedRun:
    """Measure a gridded amplitude at bin resolution.

    The flag angle ramps linearly to pi/2 at ``duration``, where the
    records are exactly orthogonal, so the final branch probabilities
    must reproduce the binned masses to numerical precision.  Checks
    that every device-side ontic state stays inside a single bin branch.
    """
    grid = np.asarray(grid, dtype=float).reshape(-1)
    amps = np.asarray(amplitudes, dtype=np.complex128).reshape(-1)
    edges = np.asarray(edges, dtype=float).reshape(-1)
    if grid.size != amps.size:
        raise ValueError("grid and amplitudes have different lengths")
    if np.any(np.diff(grid) <= 0.0):
        raise ValueError("grid must be strictly increasing")
    if edges.size < 2 or np.any(np.diff(edges) <= 0.0):
        raise ValueError("need at least two strictly increasing bin edges")
    norm = float(np.sum(np.abs(amps) ** 2))
    if abs(norm - 1.0) > NORM_TOL:
        raise ValueError(f"amplitudes are not normalized on the grid: {norm:.12f}")
    if grid[0] < edges[0] or grid[-1] > edges[-1]:
        raise ValueError("grid extends beyond the outer bin edges")

    n_bins = edges.size - 1
    bin_of = np.minimum(np.searchsorted(edges, grid, side="right") - 1, n_bins - 1)
    counts = np.bincount(bin_of, minlength=n_bins)
    if counts.min() < POINTS_PER_BIN:
        thin = int(np.argmin(counts))
        raise ValueError(
            f"bin {thin} holds only {counts[thin]} grid points; "
            f"need at least {POINTS_PER_BIN} per bin"
        )
    masses = np.bincount(bin_of, weights=np.abs(amps) ** 2, minlength=n_bins)

    n_steps = int(round(duration / eta))
    if n_steps < 1 or abs(n_steps * eta - duration) > 1e-9 * duration:
        raise ValueError(f"duration {duration} is not a whole number of eta={eta} steps")
    dims = DimSignature((grid.size, 2**n_bins))
    psi = StateVector(np.kron(amps, _flag_state(0, 0.0, n_bins)), dims)

    increment = (math.pi / 2.0) / n_steps
    prop = BinFlagRotation(tuple(int(b) for b in bin_of), increment, n_bins, eta)
    decs = [ontic_decompose(psi, cut=(0,), time=0.0)]
    reports: list[MatchReport] = []
    steps: list[TransitionStep] = []
    for k in range(n_steps):
        psi = prop.apply(psi)
        raw = ontic_decompose(psi, cut=(0,), time=(k + 1) * eta)
        matched, report = match_labels(decs[-1], raw)
        flow = flow_exact(decs[-1], matched, prop)
        step = transition_matrix(flow, decs[-1].probs, eta, time=k * eta)
        if not step.consistent:
            raise ValueError(
                f"inconsistent transition at step {k} "
                f"(t = {k * eta:.6g}); use a smaller eta"
            )
        decs.append(matched)
        reports.append(report)
        steps.append(step)

    final = decs[-1]
    records = np.stack(
        [_flag_state(j, math.pi / 2.0, n_bins) for j in range(n_bins)], axis=0
    )
    flag_overlap = np.abs(records.conj() @ records.T)

    label_bins = [-1] * final.probs.size
    bin_probs = np.zeros(n_bins)
    localization = 1.0
    claimed: set[int] = set()
    device = _device_states(final)
    retained = sorted(
        (k for k in range(final.probs.size) if final.probs[k] > NULL_CUTOFF),
        key=lambda k: -final.probs[k],
    )
    # Labels with equal probabilities span a degenerate eigenspace whose basis
    # is an arbitrary unitary mix of the matching flag records (a uniform
    # wavefunction hits this with every bin at once), so bins are claimed per
    # group by the record mass projected into that subspace.
    groups: list[list[int]] = []
    for k in retained:
        if groups and final.probs[groups[-1][-1]] - final.probs[k] <= (
            DEGENERACY_TOL * final.probs[groups[-1][-1]]
        ):
            groups[-1].append(k)
        else:
            groups.append([k])
    ceiling = max(float(np.max(flag_overlap - np.eye(n_bins))), LOCALIZATION_TOL)
    for group in groups:
        basis = np.stack([device[k].amplitudes for k in group], axis=1)
        proj = records.conj() @ basis
        mass = np.sum(np.abs(proj) ** 2, axis=1)
        order = [int(r) for r in np.argsort(-mass)]
        take = order[: len(group)]
        for r in take:
            if r in claimed:
                raise RuntimeError(f"two labels claim bin {r}; records never separated")
        worst = min(float(mass[r]) for r in take)
        spill = max((float(mass[r]) for r in order[len(group) :]), default=0.0)
        if worst < 1.0 - LOCALIZATION_TOL or spill > ceiling:
            raise RuntimeError(
                f"labels {group} spread over bins "
                f"(weakest claim {worst:.12f}, spill {spill:.3e})"
            )
        localization = min(localization, worst)
        cols = list(range(len(group)))
        for r in take:
            col = max(cols, key=lambda c: abs(proj[r, c]))
            cols.remove(col)
            label_bins[group[col]] = r
            bin_probs[r] = final.probs[group[col]]
            claimed.add(r)
    # empty bins keep a null label each instead of vanishing
    spare = [k for k in range(final.probs.size) if final.probs[k] <= NULL_CUTOFF]
    for j in range(n_bins):
        if j not in claimed:
            label = spare.pop(0)
            label_bins[label] = j
            bin_probs[j] = final.probs[label]

    residual = float(np.max(np.abs(bin_probs - masses)))
    if residual > MASS_TOL:
        raise RuntimeError(
            f"final branch probabilities miss the bin masses by {residual:.3e}"
        )
    return BinnedRun(
        masses=masses,
        bin_probs=bin_probs,
        label_bins=tuple(label_bins),
        decompositions=tuple(decs),
        reports=tuple(reports),
        steps=tuple(steps),
        flag_overlap=flag_overlap,
        localization=localization,
        decoherence_time=decoherence_time(steps),
    )
