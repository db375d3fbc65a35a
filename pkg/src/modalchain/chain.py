"""Coarse-grained discrete-time jump process over branch labels.

One coarse step of duration eta turns a pair of label-matched
decompositions plus the exact propagator into a flow matrix, and the
flow matrix into a column-stochastic conditional-probability matrix.
Steps compose by matrix product, trajectories are sampled with a
counter-based RNG so results are independent of scheduling, and the
composed matrix's connectivity structure detects ergodicity breaking.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
import scipy.sparse
from scipy.sparse.csgraph import connected_components

from .ontic import NULL_CUTOFF, OnticDecomposition
from .qcore import HBAR, Propagator

#: default edge threshold for the ergodic partition of a composed matrix
PARTITION_THRESHOLD = 1e-6

COLUMN_SUM_TOL = 1e-12
ENTRY_TOL = 1e-12

# splitmix64 constants; every draw is finalize(seed + (counter+1)*GOLDEN),
# so draw k of a trajectory never depends on how many other trajectories
# or workers are in flight.
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX_A = np.uint64(0xBF58476D1CE4E5B9)
_MIX_B = np.uint64(0x94D049BB133111EB)
_U53 = float(2**53)


def _counter_uniform(seeds, counter: int) -> np.ndarray:
    """Uniform [0,1) draws indexed by (seed, counter)."""
    # offset computed in Python ints: scalar uint64 products would warn on wrap
    offset = np.uint64(((int(counter) + 1) * int(_GOLDEN)) & 0xFFFFFFFFFFFFFFFF)
    z = np.asarray(seeds, dtype=np.uint64) + offset
    z = (z ^ (z >> np.uint64(30))) * _MIX_A
    z = (z ^ (z >> np.uint64(27))) * _MIX_B
    z = z ^ (z >> np.uint64(31))
    return (z >> np.uint64(11)).astype(np.float64) / _U53


@dataclass(frozen=True, eq=False)
class TransitionStep:
    """One coarse step: flow matrix, conditional matrix, diagnostics.

    ``flow`` may be None for synthetic chains built directly from a
    conditional matrix.  ``consistent`` is False when some diagonal
    conditional went negative (the step size is too coarse for the
    transport present); the offending matrix is kept as computed so the
    failure is inspectable, never clipped.
    """

    time: float
    eta: float
    flow: Union[np.ndarray, None]
    cond: np.ndarray
    consistent: bool
    outflow_max: float

    def __post_init__(self):
        cond = np.array(self.cond, dtype=float, copy=True)
        if cond.ndim != 2 or cond.shape[0] != cond.shape[1]:
            raise ValueError(f"cond must be square, got shape {cond.shape}")
        cond.flags.writeable = False
        object.__setattr__(self, "cond", cond)
        if self.flow is not None:
            flow = np.array(self.flow, dtype=float, copy=True)
            if flow.shape != cond.shape:
                raise ValueError("flow and cond shapes differ")
            flow.flags.writeable = False
            object.__setattr__(self, "flow", flow)
        if self.eta <= 0:
            raise ValueError(f"eta must be positive, got {self.eta}")
        if self.consistent:
            if cond.min() < -ENTRY_TOL or cond.max() > 1 + ENTRY_TOL:
                raise ValueError("consistent step has entries outside [0, 1]")
            colsum = cond.sum(axis=0)
            if np.max(np.abs(colsum - 1.0)) > COLUMN_SUM_TOL:
                raise ValueError("consistent step is not column-stochastic")

    @property
    def size(self) -> int:
        return self.cond.shape[0]

    def __repr__(self) -> str:
        return (
            f"TransitionStep(time={self.time}, eta={self.eta}, size={self.size}, "
            f"consistent={self.consistent}, outflow_max={self.outflow_max:.3e})"
        )


@dataclass(frozen=True, eq=False)
class Trajectory:
    """One sampled label path; replayable from its seed."""

    seed: int
    labels: tuple[int, ...]
    times: tuple[float, ...]

    def __post_init__(self):
        labels = tuple(int(x) for x in self.labels)
        times = tuple(float(t) for t in self.times)
        if len(labels) != len(times):
            raise ValueError("labels and times lengths differ")
        if any(x < 0 for x in labels):
            raise ValueError("negative label")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "times", times)


@dataclass(frozen=True, eq=False)
class ErgodicPartition:
    """Disjoint label sets that the composed process cannot connect."""

    sets: tuple[tuple[int, ...], ...]
    null_set: tuple[int, ...]
    inclusive_probs: np.ndarray
    threshold: float

    def __post_init__(self):
        sets = tuple(tuple(int(i) for i in s) for s in self.sets)
        null_set = tuple(int(i) for i in self.null_set)
        object.__setattr__(self, "sets", sets)
        object.__setattr__(self, "null_set", null_set)
        everything = [i for s in sets for i in s] + list(null_set)
        if sorted(everything) != list(range(len(everything))):
            raise ValueError("sets plus null_set must partition the labels")
        probs = np.array(self.inclusive_probs, dtype=float, copy=True)
        probs.flags.writeable = False
        object.__setattr__(self, "inclusive_probs", probs)
        if probs.size != len(sets):
            raise ValueError("one inclusive probability per set")
        if everything and abs(probs.sum() - 1.0) > 1e-9:
            raise ValueError(f"inclusive probabilities sum to {probs.sum():.12f}")


def flow_exact(
    prev: OnticDecomposition, next: OnticDecomposition, propagator: Propagator
) -> np.ndarray:
    """Exact one-step flow matrix between two label-matched decompositions.

    Entry (i, j) is sqrt(p_i(t+eta) p_j(t)) times the real part of the
    propagated product-state overlap <i(t+eta)| U |j(t)>.  When ``next``
    decomposes exactly the propagated source of ``prev``, the row sums
    reproduce p(t+eta) and the column sums reproduce p(t); that identity
    needs every label, so the null-flagged ones participate too.

    ``propagator`` may be any object with an ``apply(StateVector)``
    method spanning the full space (scenario drivers pass structured
    propagators that are never materialized as dense matrices).
    """
    if prev.dims_full.factors != next.dims_full.factors:
        raise ValueError("decompositions live on different spaces")
    count = prev.probs.size
    if next.probs.size != count:
        raise ValueError("label counts differ")
    evolved = np.stack(
        [propagator.apply(prev.product_state(j)).amplitudes for j in range(count)],
        axis=1,
    )
    targets = np.stack(
        [next.product_state(i).amplitudes for i in range(count)], axis=0
    )
    amp = targets.conj() @ evolved
    return np.sqrt(np.outer(next.probs, prev.probs)) * amp.real


def flow_perturbative(
    dec: OnticDecomposition, h_int: np.ndarray, eta: float
) -> np.ndarray:
    """First-order flow matrix from the interaction generator alone.

    Entry (i, j) is (eta/hbar) sqrt(p_i p_j) Im <i| H_int |j> on the
    product states of a single decomposition.  Exactly antisymmetric:
    local generator terms drop out of the off-diagonal elements because
    the paired factors are orthogonal, and the diagonal is the imaginary
    part of a real expectation value.
    """
    count = dec.probs.size
    h = np.asarray(h_int, dtype=np.complex128)
    prods = np.stack([dec.product_state(k).amplitudes for k in range(count)], axis=1)
    m = prods.conj().T @ (h @ prods)
    anti = (m.imag - m.imag.T) / 2.0  # kill fp asymmetry; zero diagonal exactly
    return (float(eta) / HBAR) * np.sqrt(np.outer(dec.probs, dec.probs)) * anti


def transition_matrix(
    flow: np.ndarray, p_prev: np.ndarray, eta: float, time: float = 0.0
) -> TransitionStep:
    """Conditional jump probabilities from a flow matrix.

    Off-diagonal p(i|j) = max(flow_ij - flow_ji, 0)/p_j; the diagonal
    takes the remainder.  A label whose occupation is numerically null
    keeps an identity column instead of dividing by ~0.  If any
    remainder is negative the step is returned with consistent=False.
    """
    v = np.asarray(flow, dtype=float)
    if v.ndim != 2 or v.shape[0] != v.shape[1]:
        raise ValueError(f"flow must be square, got {v.shape}")
    p = np.asarray(p_prev, dtype=float).reshape(-1)
    if p.size != v.shape[0]:
        raise ValueError("p_prev length does not match flow")
    if p.min() < -1e-12:
        raise ValueError(f"negative occupation {p.min():.3e}")
    if abs(p.sum() - 1.0) > 1e-9:
        raise ValueError(f"occupations sum to {p.sum():.12f}")

    gain = np.clip(v - v.T, 0.0, None)
    np.fill_diagonal(gain, 0.0)
    cond = np.zeros_like(gain)
    live = p > NULL_CUTOFF
    cond[:, live] = gain[:, live] / p[live]
    outflow = cond.sum(axis=0)
    np.fill_diagonal(cond, 1.0 - outflow)
    consistent = bool(cond.min() >= 0.0 and cond.max() <= 1.0)
    return TransitionStep(
        time=float(time),
        eta=float(eta),
        flow=v,
        cond=cond,
        consistent=consistent,
        outflow_max=float(outflow.max()) if outflow.size else 0.0,
    )


def step_from_cond(
    cond: np.ndarray, eta: float, time: float = 0.0
) -> TransitionStep:
    """Wrap an explicitly built conditional matrix as a TransitionStep."""
    c = np.asarray(cond, dtype=float)
    off = c.copy()
    np.fill_diagonal(off, 0.0)
    consistent = bool(
        c.min() >= 0.0
        and c.max() <= 1.0
        and np.max(np.abs(c.sum(axis=0) - 1.0)) <= COLUMN_SUM_TOL
    )
    return TransitionStep(
        time=float(time),
        eta=float(eta),
        flow=None,
        cond=c,
        consistent=consistent,
        outflow_max=float(off.sum(axis=0).max()) if c.size else 0.0,
    )


def decoherence_time(steps: Sequence[TransitionStep]) -> float:
    """Step duration divided by the worst per-step outflow.

    With heterogeneous step durations the binding constraint is the
    largest outflow *rate*; the result is its inverse.  Returns +inf when
    nothing flows anywhere.
    """
    if not steps:
        raise ValueError("need at least one step")
    for s in steps:
        if not s.consistent:
            raise ValueError("decoherence time is defined for consistent steps only")
    top = max(s.outflow_max / s.eta for s in steps)
    return math.inf if top == 0.0 else 1.0 / top


def compose(steps: Sequence[TransitionStep]) -> np.ndarray:
    """Product of conditional matrices in time order."""
    if not steps:
        raise ValueError("need at least one step")
    for s in steps:
        if not s.consistent:
            raise ValueError(f"inconsistent step at time {s.time}")
    for a, b in zip(steps[:-1], steps[1:]):
        expected = a.time + a.eta
        if abs(b.time - expected) > 1e-9 * max(1.0, abs(expected)):
            raise ValueError(
                f"timestamp gap: step at {b.time} does not follow {a.time} + {a.eta}"
            )
    out = steps[0].cond
    for s in steps[1:]:
        out = s.cond @ out
    return out


def _draw_initial(initial, size: int, seed) -> int:
    if np.isscalar(initial) and not isinstance(initial, (float, np.floating)):
        label = int(initial)
        if not 0 <= label < size:
            raise ValueError(f"initial label {label} out of range")
        return label
    dist = np.asarray(initial, dtype=float).reshape(-1)
    if dist.size != size:
        raise ValueError("initial distribution length does not match step size")
    if dist.min() < -1e-12 or abs(dist.sum() - 1.0) > 1e-9:
        raise ValueError("initial distribution is not normalized")
    u = _counter_uniform(np.asarray([seed], dtype=np.uint64), 0)[0]
    cum = np.cumsum(dist)
    return min(int(np.searchsorted(cum, u, side="right")), size - 1)


def sample_trajectory(
    steps: Sequence[TransitionStep], initial, seed: int
) -> Trajectory:
    """Sample one label path through the steps; deterministic per seed.

    ``initial`` is either a label index or a distribution over labels
    (drawn with the trajectory's own counter 0, so the whole path is a
    pure function of the seed).
    """
    if not steps:
        raise ValueError("need at least one step")
    size = steps[0].size
    seed_arr = np.asarray([np.uint64(int(seed) & 0xFFFFFFFFFFFFFFFF)])
    label = _draw_initial(initial, size, seed_arr[0])
    labels = [label]
    times = [steps[0].time]
    for k, step in enumerate(steps):
        if not step.consistent:
            raise ValueError(f"inconsistent step at time {step.time}")
        if step.size != size:
            raise ValueError("steps change size mid-chain")
        u = _counter_uniform(seed_arr, k + 1)[0]
        cum = np.cumsum(step.cond[:, labels[-1]])
        labels.append(min(int(np.searchsorted(cum, u, side="right")), size - 1))
        times.append(step.time + step.eta)
    return Trajectory(seed=int(seed), labels=tuple(labels), times=tuple(times))


def sample_ensemble(
    steps: Sequence[TransitionStep], initial, base_seed: int, count: int
) -> np.ndarray:
    """Labels of ``count`` trajectories with seeds base_seed + index.

    Row i equals sample_trajectory(steps, initial, base_seed + i).labels;
    the loop is vectorized over trajectories, not a different process.
    """
    if not steps:
        raise ValueError("need at least one step")
    size = steps[0].size
    seeds = np.uint64(int(base_seed) & 0xFFFFFFFFFFFFFFFF) + np.arange(
        count, dtype=np.uint64
    )
    out = np.empty((count, len(steps) + 1), dtype=np.int64)
    if np.isscalar(initial) and not isinstance(initial, (float, np.floating)):
        label = int(initial)
        if not 0 <= label < size:
            raise ValueError(f"initial label {label} out of range")
        out[:, 0] = label
    else:
        dist = np.asarray(initial, dtype=float).reshape(-1)
        if dist.size != size:
            raise ValueError("initial distribution length does not match step size")
        if dist.min() < -1e-12 or abs(dist.sum() - 1.0) > 1e-9:
            raise ValueError("initial distribution is not normalized")
        u = _counter_uniform(seeds, 0)
        cum = np.cumsum(dist)
        out[:, 0] = np.minimum(
            np.searchsorted(cum, u, side="right"), size - 1
        )
    for k, step in enumerate(steps):
        if not step.consistent:
            raise ValueError(f"inconsistent step at time {step.time}")
        u = _counter_uniform(seeds, k + 1)
        cum = np.cumsum(step.cond, axis=0)
        picked = cum[:, out[:, k]]  # size x count
        out[:, k + 1] = np.minimum((picked <= u).sum(axis=0), size - 1)
    return out


def ergodic_partition(
    composed: np.ndarray,
    probs: np.ndarray,
    threshold: float = PARTITION_THRESHOLD,
) -> ErgodicPartition:
    """Group labels into mutually reachable sets of the composed process.

    An edge j -> i exists when composed[i, j] exceeds the threshold;
    sets are the strongly connected components among labels whose
    occupation is above the null cutoff.  Sets come out ordered by
    descending inclusive probability.
    """
    m = np.asarray(composed, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"composed must be square, got {m.shape}")
    p = np.asarray(probs, dtype=float).reshape(-1)
    if p.size != m.shape[0]:
        raise ValueError("probs length does not match composed")
    if np.max(np.abs(m.sum(axis=0) - 1.0)) > 1e-9:
        raise ValueError("composed matrix is not column-stochastic")

    live = np.flatnonzero(p > NULL_CUTOFF)
    null_set = tuple(int(i) for i in np.flatnonzero(p <= NULL_CUTOFF))
    if live.size == 0:
        return ErgodicPartition((), null_set, np.zeros(0), float(threshold))
    block = m[np.ix_(live, live)]
    # csgraph convention: entry (r, c) is an edge r -> c, so transpose
    adjacency = scipy.sparse.csr_matrix((block > threshold).T)
    n_comp, member = connected_components(
        adjacency, directed=True, connection="strong"
    )
    groups: dict[int, list[int]] = {}
    for local, comp in enumerate(member):
        groups.setdefault(int(comp), []).append(int(live[local]))
    sets = sorted(groups.values(), key=lambda s: (-p[s].sum(), s[0]))
    inclusive = np.array([p[s].sum() for s in sets])
    return ErgodicPartition(
        sets=tuple(tuple(s) for s in sets),
        null_set=null_set,
        inclusive_probs=inclusive,
        threshold=float(threshold),
    )


@dataclass(frozen=True, eq=False)
class SetConvergence:
    """Equilibrium approach of one closed label set."""

    labels: tuple[int, ...]
    closed: bool
    stationary: Union[np.ndarray, None]
    deviations: Union[np.ndarray, None]
    decay_time: float
    rate: float


@dataclass(frozen=True, eq=False)
class ConvergenceReport:
    """Per-set equilibrium convergence of a repeated homogeneous step."""

    eta: float
    n_max: int
    sets: tuple[SetConvergence, ...]


def _fit_decay(coldiff: np.ndarray, eta: float) -> tuple[float, float]:
    """Exponential fit of the column-difference decay; (rate, decay_time).

    The fit runs on the early window (down to exp(-1/4) of the first
    point): the bulk relaxation rate lives there, before the slowest
    mode takes over and bends the curve.
    """
    first = coldiff[0]
    if first <= 1e-14:
        return 0.0, math.inf
    ns = np.arange(1, coldiff.size + 1)
    window = coldiff >= first * math.exp(-0.25)
    window[: min(2, coldiff.size)] = True  # a cliff still needs two points
    if window.sum() < 2:
        return 0.0, math.inf
    positive = coldiff > 0.0
    window &= positive
    if window.sum() < 2:
        return 0.0, math.inf
    slope = np.polyfit(ns[window], np.log(coldiff[window]), 1)[0]
    if slope >= -1e-15:
        return 0.0, math.inf
    rate = -slope / eta
    return rate, 1.0 / rate


def equilibrium_convergence(step: TransitionStep, n_max: int) -> ConvergenceReport:
    """Track max |composed(n) - stationary| per closed set for n <= n_max.

    A reducible step is reported per strongly connected set; sets with
    outgoing flow (transient) carry no stationary vector.
    """
    if not step.consistent:
        raise ValueError("equilibrium convergence needs a consistent step")
    if n_max < 1:
        raise ValueError("n_max must be at least 1")
    c = step.cond
    adjacency = scipy.sparse.csr_matrix((c > 0.0).T)
    n_comp, member = connected_components(adjacency, directed=True, connection="strong")
    reports = []
    for comp in range(n_comp):
        labels = tuple(int(i) for i in np.flatnonzero(member == comp))
        block = c[np.ix_(labels, labels)]
        closed = bool(np.max(np.abs(block.sum(axis=0) - 1.0)) <= 1e-12)
        if not closed:
            reports.append(
                SetConvergence(labels, False, None, None, math.nan, math.nan)
            )
            continue
        w, vecs = np.linalg.eig(block)
        stationary = np.abs(vecs[:, np.argmin(np.abs(w - 1.0))].real)
        stationary = stationary / stationary.sum()
        deviations = np.empty(n_max)
        coldiff = np.empty(n_max)
        power = block.copy()
        for n in range(n_max):
            deviations[n] = np.max(np.abs(power - stationary[:, None]))
            coldiff[n] = np.linalg.norm(power - power.mean(axis=1, keepdims=True))
            if n + 1 < n_max:
                power = block @ power
        # the rate is fitted on column differences: that is the quantity
        # whose relaxation defines the equilibrium time, and it removes
        # the stationary component identically
        rate, decay_time = _fit_decay(coldiff, step.eta)
        reports.append(
            SetConvergence(labels, True, stationary, deviations, decay_time, rate)
        )
    reports.sort(key=lambda r: r.labels[0])
    return ConvergenceReport(eta=step.eta, n_max=int(n_max), sets=tuple(reports))


def toy_mixing_chain(
    size: int, p: float, eta: float, seed: int, time: float = 0.0
) -> TransitionStep:
    """Random tournament chain: every unordered pair flows one way.

    Each pair {i, j} gets probability ``p`` in a direction chosen by a
    seeded coin; this is the standard equilibrium-approach testbed whose
    bulk decay time is 2*eta/(p*size).
    """
    if size < 2:
        raise ValueError("need at least two labels")
    if not 0.0 < p * (size - 1) <= 1.0:
        raise ValueError("p too large for a consistent column")
    cond = np.zeros((size, size))
    counter = 0
    seeds = np.asarray([np.uint64(int(seed) & 0xFFFFFFFFFFFFFFFF)])
    for i in range(size):
        for j in range(i + 1, size):
            u = _counter_uniform(seeds, counter)[0]
            counter += 1
            if u < 0.5:
                cond[i, j] = p  # j loses to i
            else:
                cond[j, i] = p
    np.fill_diagonal(cond, 1.0 - cond.sum(axis=0))
    return step_from_cond(cond, eta=eta, time=time)
