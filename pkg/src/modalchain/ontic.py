"""Spectral decomposition of reduced states and label continuity.

A bipartite cut of a total pure state defines, through the reduced
density matrix on the smaller side, a probability spectrum together with
eigenvector pairs (one vector per side).  This module extracts that
decomposition, keeps the pairing phases canonical, and matches labels
across successive coarse-grained time steps so that a branch keeps its
index as long as it evolves continuously.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.optimize

from .qcore import DimSignature, StateVector

#: eigenvalues at or below this are treated as numerically null
NULL_CUTOFF = 1e-12

#: adjacent spectrum entries whose relative gap is below this form a
#: degenerate group; the gap must be relative, or every near-null
#: eigenvalue would count as degenerate with every other
DEGENERACY_TOL = 1e-10

#: reconstruction tolerance for the Schmidt-sum identity
RECONSTRUCTION_TOL = 1e-9

ORTHONORMALITY_TOL = 1e-10
PROB_SUM_TOL = 1e-10

#: matched overlaps below this set the continuity-degraded flag
CONTINUITY_FLOOR = 0.5


@dataclass(frozen=True, eq=False)
class OnticDecomposition:
    """Spectrum and eigenvector pairs of a cut, with stable labels.

    ``probs`` is descending at creation; after a relabeling pass the
    order follows the previous step's labels instead.  ``ontic`` lives on
    the factors in ``keep``, ``mirrors`` on the factors in ``env``; both
    lists always have min(d_A, d_E) entries, with entries whose
    probability is at or below NULL_CUTOFF carried along but not counted
    in ``rank``.
    """

    time: float
    probs: np.ndarray
    ontic: tuple[StateVector, ...]
    mirrors: tuple[StateVector, ...]
    rank: int
    keep: tuple[int, ...]
    env: tuple[int, ...]
    dims_full: DimSignature
    swapped: bool
    degenerate: bool
    source: StateVector

    def __post_init__(self):
        probs = np.array(self.probs, dtype=float, copy=True).reshape(-1)
        probs.flags.writeable = False
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "ontic", tuple(self.ontic))
        object.__setattr__(self, "mirrors", tuple(self.mirrors))
        k = probs.size
        if len(self.ontic) != k or len(self.mirrors) != k:
            raise ValueError("probs, ontic and mirrors must have equal length")
        if abs(probs.sum() - 1.0) > PROB_SUM_TOL:
            raise ValueError(f"probabilities sum to {probs.sum():.12f}, not 1")
        a = np.stack([s.amplitudes for s in self.ontic], axis=1)
        gram = a.conj().T @ a
        if np.max(np.abs(gram - np.eye(k))) > ORTHONORMALITY_TOL:
            raise ValueError("ontic vectors are not orthonormal")
        retained = np.flatnonzero(probs > NULL_CUTOFF)
        b = np.stack([self.mirrors[i].amplitudes for i in retained], axis=1)
        gram = b.conj().T @ b
        if np.max(np.abs(gram - np.eye(retained.size))) > ORTHONORMALITY_TOL:
            raise ValueError("mirror vectors are not orthonormal on the retained rank")
        err = np.linalg.norm(self.reconstruct() - self.source.amplitudes)
        if err > RECONSTRUCTION_TOL:
            raise ValueError(f"Schmidt sum misses the source state by {err:.3e}")

    def __repr__(self) -> str:
        return (
            f"OnticDecomposition(time={self.time}, rank={self.rank}, "
            f"probs={np.round(self.probs, 6)})"
        )

    def _to_full_order(self, block: np.ndarray) -> np.ndarray:
        """Flatten a (keep-side x env-side) coefficient block into the
        original factor order of the source state."""
        factors = self.dims_full.factors
        shape = [factors[i] for i in self.keep] + [factors[i] for i in self.env]
        perm = np.argsort(np.array(self.keep + self.env))
        return block.reshape(shape).transpose(perm).reshape(-1)

    def reconstruct(self) -> np.ndarray:
        """Amplitudes of sum_i sqrt(p_i) |ontic_i> (x) |mirror_i|>."""
        a = np.stack([s.amplitudes for s in self.ontic], axis=1)
        b = np.stack([s.amplitudes for s in self.mirrors], axis=0)
        block = (a * np.sqrt(self.probs)) @ b
        return self._to_full_order(block)

    def product_state(self, label: int) -> StateVector:
        """|ontic_label> (x) |mirror_label> as a full-space state, in the
        source state's factor order."""
        block = np.outer(self.ontic[label].amplitudes, self.mirrors[label].amplitudes)
        return StateVector(self._to_full_order(block), self.dims_full)


@dataclass(frozen=True, eq=False)
class MatchReport:
    """Bookkeeping from one label-matching pass.

    ``permutation[i]`` is the index, in the unmatched decomposition's
    ordering, of the entry now carrying label ``i``.  ``overlaps[i]`` is
    |<ontic_i(prev)|ontic_i(matched)>|^2.  ``degraded`` is set when the
    worst retained-to-retained overlap falls below CONTINUITY_FLOOR,
    signaling either a too-coarse step or a genuine crossover.
    """

    permutation: tuple[int, ...]
    overlaps: np.ndarray
    min_overlap: float
    degraded: bool

    def __post_init__(self):
        perm = tuple(int(i) for i in self.permutation)
        if sorted(perm) != list(range(len(perm))):
            raise ValueError(f"not a permutation: {perm}")
        object.__setattr__(self, "permutation", perm)
        overlaps = np.array(self.overlaps, dtype=float, copy=True).reshape(-1)
        overlaps.flags.writeable = False
        object.__setattr__(self, "overlaps", overlaps)
        if not 0.0 <= self.min_overlap <= 1.0 + 1e-12:
            raise ValueError(f"min_overlap {self.min_overlap} outside [0, 1]")


def _canonical_phase(vec: np.ndarray) -> complex:
    """Phase that rotates the largest-magnitude component onto the
    positive real axis."""
    k = int(np.argmax(np.abs(vec)))
    z = vec[k]
    mag = abs(z)
    if mag == 0.0:
        return 1.0 + 0.0j
    return (z / mag).conjugate()


def ontic_decompose(
    psi: StateVector, cut: Sequence[int], time: float = 0.0
) -> OnticDecomposition:
    """Decompose a pure state across the given bipartition.

    ``cut`` lists the factor indices of the system side.  If that side is
    larger than its complement the two sides are exchanged internally
    (``swapped`` records this), so the ontic vectors always live on the
    smaller side and the lists have min(d_A, d_E) entries.

    Mirrors carry the pairing phase: the expansion coefficients are the
    real nonnegative sqrt(p_i), and each ontic vector's own phase is
    fixed canonically with the mirror absorbing the compensation.
    """
    cut = tuple(int(i) for i in cut)
    n = len(psi.dims.factors)
    if not cut:
        raise ValueError("cut must name at least one factor")
    if len(set(cut)) != len(cut):
        raise ValueError(f"duplicate factor index in cut={cut}")
    for i in cut:
        if not 0 <= i < n:
            raise ValueError(f"factor index {i} out of range for {psi.dims.factors}")
    rest = psi.dims.complement(cut)
    if not rest:
        raise ValueError("cut covers every factor; the complement is empty")

    swapped = psi.dims.subdim(cut) > psi.dims.subdim(rest)
    keep, env = (rest, cut) if swapped else (cut, rest)
    da = psi.dims.subdim(keep)
    de = psi.dims.subdim(env)
    block = (
        psi.amplitudes.reshape(psi.dims.factors)
        .transpose([*keep, *env])
        .reshape(da, de)
    )
    u, s, vh = np.linalg.svd(block, full_matrices=False)
    probs = s * s
    u = u.copy()
    vh = vh.copy()
    for k in range(probs.size):
        ph = _canonical_phase(u[:, k])
        u[:, k] *= ph
        vh[k, :] *= ph.conjugate()

    dims_a = psi.dims.select(keep)
    dims_e = psi.dims.select(env)
    ontic = tuple(StateVector(u[:, k], dims_a) for k in range(probs.size))
    mirrors = tuple(StateVector(vh[k, :], dims_e) for k in range(probs.size))
    rank = int(np.count_nonzero(probs > NULL_CUTOFF))
    retained = probs[:rank]
    degenerate = bool(
        rank > 1 and np.any(-np.diff(retained) <= DEGENERACY_TOL * retained[:-1])
    )
    return OnticDecomposition(
        time=float(time),
        probs=probs,
        ontic=ontic,
        mirrors=mirrors,
        rank=rank,
        keep=keep,
        env=env,
        dims_full=psi.dims,
        swapped=swapped,
        degenerate=degenerate,
        source=psi,
    )


def _degenerate_groups(probs: np.ndarray, rank: int) -> list[list[int]]:
    """Chained grouping of retained entries whose gaps are below tolerance.

    Works on a copy sorted descending, so it also handles decompositions
    whose probs were reordered by an earlier matching pass.
    """
    order = np.argsort(probs)[::-1][:rank]
    groups: list[list[int]] = []
    current = [int(order[0])] if rank else []
    for a, b in zip(order[:-1], order[1:]):
        if probs[a] - probs[b] <= DEGENERACY_TOL * probs[a]:
            current.append(int(b))
        else:
            groups.append(current)
            current = [int(b)]
    if current:
        groups.append(current)
    return groups


def _procrustes_resolve(
    prev: OnticDecomposition,
    probs: np.ndarray,
    rank: int,
    ontic: list[np.ndarray],
    mirrors: list[np.ndarray],
) -> None:
    """Rotate each degenerate group's basis to follow the previous step.

    Degenerate eigenvalues leave the eigenbasis free inside the group's
    subspace; the backend's choice is arbitrary.  We pick the orthonormal
    basis closest (orthogonal-Procrustes sense) to the projections of the
    best-overlapping previous vectors, which keeps branch bases pinned to
    their parents instead of drifting with backend conventions.  Mirrors
    co-rotate with the conjugate rotation so the Schmidt sum is unchanged.
    Modifies ``ontic`` and ``mirrors`` in place.
    """
    prev_retained = [j for j in range(prev.probs.size) if prev.probs[j] > NULL_CUTOFF]
    if not prev_retained:
        return
    q_all = np.stack([prev.ontic[j].amplitudes for j in prev_retained], axis=1)
    for group in _degenerate_groups(probs, rank):
        m = len(group)
        if m < 2:
            continue
        p = np.stack([ontic[g] for g in group], axis=1)
        # projection mass of each candidate parent inside the group subspace
        proj = p.conj().T @ q_all
        mass = np.sum(np.abs(proj) ** 2, axis=0)
        take = np.argsort(-mass, kind="stable")[:m]
        take = take[mass[take] > 0.0]
        if take.size == 0:
            continue
        mat = proj[:, take]
        uu, _, vv = np.linalg.svd(mat, full_matrices=True)
        rot = uu.copy()
        kk = vv.shape[0]
        rot[:, :kk] = uu[:, :kk] @ vv
        new_p = p @ rot
        v = np.stack([mirrors[g] for g in group], axis=1)
        new_v = v @ rot.conj()
        for col, g in enumerate(group):
            ontic[g] = new_p[:, col]
            mirrors[g] = new_v[:, col]


def match_labels(
    prev: OnticDecomposition, next: OnticDecomposition
) -> tuple[OnticDecomposition, MatchReport]:
    """Relabel ``next`` so each branch keeps its previous label.

    Retained labels are paired by exact maximum-weight assignment on
    |<ontic_i(next)|ontic_j(prev)>|^2; branches born or dying inside the
    step fill the leftover label slots deterministically.  Each matched
    vector is rephased so its overlap with the previous step is real
    nonnegative, with the mirror absorbing the compensating phase.
    """
    if prev.dims_full.factors != next.dims_full.factors or prev.keep != next.keep:
        raise ValueError("decompositions come from different cuts")
    count = prev.probs.size
    if next.probs.size != count:
        raise ValueError("decompositions have different label counts")

    probs = next.probs.copy()
    ontic = [s.amplitudes.copy() for s in next.ontic]
    mirrors = [s.amplitudes.copy() for s in next.mirrors]
    _procrustes_resolve(prev, probs, next.rank, ontic, mirrors)

    prev_ret = [j for j in range(count) if prev.probs[j] > NULL_CUTOFF]
    next_ret = [i for i in range(count) if probs[i] > NULL_CUTOFF]
    weights = np.zeros((len(next_ret), len(prev_ret)))
    for a, i in enumerate(next_ret):
        for b, j in enumerate(prev_ret):
            amp = np.vdot(prev.ontic[j].amplitudes, ontic[i])
            weights[a, b] = abs(amp) ** 2
    rows, cols = scipy.optimize.linear_sum_assignment(weights, maximize=True)

    slot_of = {}  # original next index -> label slot
    for a, b in zip(rows, cols):
        slot_of[next_ret[a]] = prev_ret[b]
    matched_next = set(slot_of)
    used_slots = set(slot_of.values())
    # branches born (or beyond prev's rank) fill the leftover slots:
    # retained leftovers first, by descending probability, then nulls.
    leftovers = sorted(
        (i for i in range(count) if i not in matched_next),
        key=lambda i: (-probs[i], i),
    )
    free_slots = sorted(set(range(count)) - used_slots)
    for i, slot in zip(leftovers, free_slots):
        slot_of[i] = slot

    permutation = [0] * count
    for i, slot in slot_of.items():
        permutation[slot] = i

    new_probs = np.empty(count)
    new_ontic: list[StateVector] = []
    new_mirrors: list[StateVector] = []
    overlaps = np.zeros(count)
    min_overlap = 1.0
    for slot in range(count):
        i = permutation[slot]
        vec = ontic[i]
        mir = mirrors[i]
        both_retained = prev.probs[slot] > NULL_CUTOFF and probs[i] > NULL_CUTOFF
        amp = np.vdot(prev.ontic[slot].amplitudes, vec)
        if both_retained and abs(amp) > 1e-12:
            ph = (amp / abs(amp)).conjugate()
        else:
            ph = _canonical_phase(vec)
        vec = vec * ph
        mir = mir * ph.conjugate()
        new_probs[slot] = probs[i]
        new_ontic.append(StateVector(vec, next.ontic[i].dims))
        new_mirrors.append(StateVector(mir, next.mirrors[i].dims))
        overlaps[slot] = min(abs(amp) ** 2, 1.0)
        if both_retained:
            min_overlap = min(min_overlap, overlaps[slot])

    retained_probs = np.sort(new_probs)[::-1][: next.rank]
    degenerate = bool(
        next.rank > 1
        and np.any(-np.diff(retained_probs) <= DEGENERACY_TOL * retained_probs[:-1])
    )
    relabeled = OnticDecomposition(
        time=next.time,
        probs=new_probs,
        ontic=tuple(new_ontic),
        mirrors=tuple(new_mirrors),
        rank=next.rank,
        keep=next.keep,
        env=next.env,
        dims_full=next.dims_full,
        swapped=next.swapped,
        degenerate=degenerate,
        source=next.source,
    )
    report = MatchReport(
        permutation=tuple(permutation),
        overlaps=overlaps,
        min_overlap=float(min_overlap),
        degraded=bool(min_overlap < CONTINUITY_FLOOR),
    )
    return relabeled, report


def overlap_matrix(states: Sequence[StateVector]) -> np.ndarray:
    """Matrix of pairwise overlap magnitudes |<s_i|s_j>|."""
    if not states:
        return np.zeros((0, 0))
    dim = states[0].amplitudes.size
    for s in states:
        if s.amplitudes.size != dim:
            raise ValueError("states have mismatched dimensions")
    a = np.stack([s.amplitudes for s in states], axis=1)
    return np.abs(a.conj().T @ a)


def gaussian_distinctness(n: float, length: float, ell: float) -> float:
    """log of the overlap between two N-particle wavepackets separated by
    ``length`` with single-particle width ``ell``: log Delta = -N L^2 / l^2.

    Returned in log domain; the direct value underflows for any
    macroscopic input.
    """
    if n < 1:
        raise ValueError(f"particle count must be >= 1, got {n}")
    if length < 0:
        raise ValueError(f"separation must be >= 0, got {length}")
    if ell <= 0:
        raise ValueError(f"packet width must be > 0, got {ell}")
    ratio = length / ell
    return -float(n) * ratio * ratio
