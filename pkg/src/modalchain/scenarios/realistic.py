"""Measurement with a structured device register and a large environment.

Branch records are Haar states confined to paired device/environment
sectors, one sector pair per outcome branch, so distinct records are
exactly orthogonal and, under dynamics that respect the sectors, the
chain cannot leak between branches at all.  A mixing knob models
imperfect distinctness at both of the places it physically appears: the
records acquire an overlap of that size (an admixture planted in the
predecessor's sector pair), and the scrambling generator acquires a
bridge of the same size between neighboring sector pairs, since sectors
the environment cannot fully tell apart are not exact invariants of its
dynamics either.  The bridge is what feeds cross-branch flow at first
order in the knob; a blended state alone provably cannot, because a
sector-preserving unitary conserves the planted (second-order) mass.
The readout may be imperfect: an error matrix correlates micro outcomes
with device branches without being diagonal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..chain import (
    PARTITION_THRESHOLD,
    ErgodicPartition,
    TransitionStep,
    compose,
    ergodic_partition,
    flow_exact,
    flow_perturbative,
    transition_matrix,
)
from ..ontic import (
    NULL_CUTOFF,
    MatchReport,
    OnticDecomposition,
    match_labels,
    ontic_decompose,
)
from ..qcore import DensityMatrix, DimSignature, StateVector, haar_random_state

UNITARITY_TOL = 1e-10

#: the environment must dwarf the branch count
MIN_ENV_FACTOR = 16

#: default strength of the record-overlap knob
DEFAULT_MIX = 1e-8


@dataclass(frozen=True, eq=False)
class ErrorMatrix:
    """Readout weights: entry (i, j) couples micro outcome i to branch j.

    The squared entries sum to one (the readout is a unitary rearrangement
    of the initial amplitudes), but the matrix need not be diagonal or
    even square: column masses are the branch probabilities, and the
    columns, normalized, are the micro-side states each branch drags
    along.
    """

    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=np.complex128, copy=True)
        if m.ndim != 2 or m.size == 0:
            raise ValueError(f"error matrix must be 2-d, got shape {m.shape}")
        total = float(np.sum(np.abs(m) ** 2))
        if abs(total - 1.0) > UNITARITY_TOL:
            raise ValueError(f"squared entries sum to {total:.12f}, not 1")
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)

    @property
    def n_outcomes(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_branches(self) -> int:
        return self.matrix.shape[1]

    def column_masses(self) -> np.ndarray:
        """Branch probabilities p^(j) = sum_i |f_ij|^2."""
        return np.sum(np.abs(self.matrix) ** 2, axis=0)

    def micro_states(self) -> np.ndarray:
        """Normalized micro-side vectors, one column per branch.

        These are generally not orthogonal: a non-diagonal readout leaves
        the micro system pointing in overlapping directions for different
        branches.
        """
        masses = self.column_masses()
        if np.any(masses <= 0.0):
            raise ValueError("every branch needs nonzero readout weight")
        return self.matrix / np.sqrt(masses)


def _sector_slices(total: int, count: int, what: str) -> list[slice]:
    if total % count:
        raise ValueError(f"{what} dimension {total} is not divisible by {count} branches")
    width = total // count
    return [slice(j * width, (j + 1) * width) for j in range(count)]


def _branch_records(
    branches: int, device_dim: int, env_dim: int, seed: int, mix: float
) -> np.ndarray:
    """Stack of device+environment record states, one per branch.

    Branch j is Haar random inside (device sector j) x (environment
    sector j); the sectors make distinct records exactly orthogonal.
    ``mix`` then plants an amplitude of that size inside the predecessor
    sector pair (cyclically), split evenly in weight between the
    predecessor's record and a fresh Haar direction orthogonal to it.
    Neighboring records end up overlapping by about mix (twice that for
    two branches, whose leaks point at each other), while the orthogonal
    part seeds satellite states the in-sector dynamics can reach.
    """
    dev_slices = _sector_slices(device_dim, branches, "device")
    env_slices = _sector_slices(env_dim, branches, "environment")
    dev_width = device_dim // branches
    env_width = env_dim // branches
    pure = np.zeros((branches, device_dim, env_dim), dtype=np.complex128)
    for j in range(branches):
        sample = haar_random_state(dev_width * env_width, seed + 7919 * j).amplitudes
        pure[j, dev_slices[j], env_slices[j]] = sample.reshape(dev_width, env_width)
    if mix == 0.0:
        return pure
    leak = np.zeros_like(pure)
    for j in range(branches):
        home = pure[j - 1].reshape(-1)
        raw = np.zeros(device_dim * env_dim, dtype=np.complex128)
        fresh = haar_random_state(
            dev_width * env_width, seed + 7919 * (branches + j)
        ).amplitudes
        raw.reshape(device_dim, env_dim)[
            dev_slices[j - 1], env_slices[j - 1]
        ] = fresh.reshape(dev_width, env_width)
        raw -= (home.conj() @ raw) * home
        raw /= np.linalg.norm(raw)
        leak[j] = (0.5 * home + (math.sqrt(3.0) / 2.0) * raw).reshape(
            device_dim, env_dim
        )
    return math.sqrt(1.0 - mix**2) * pure + mix * leak


@dataclass(frozen=True)
class _RecordShuffle:
    """Propagator: sector-confined device+environment scrambling.

    The generator is a block Hermitian matrix supported on the occupied
    sector pairs only, so it churns each branch's record internally but
    never carries weight between sector pairs.  Identity on the micro
    system.
    """

    matrix: np.ndarray  # device*env unitary
    step: float

    def apply(self, state: StateVector) -> StateVector:
        block = state.amplitudes.reshape(-1, self.matrix.shape[0])
        return StateVector((block @ self.matrix.T).reshape(-1), state.dims)


def _sector_generator(
    branches: int, device_dim: int, env_dim: int, seed: int, mix: float
) -> np.ndarray:
    """Block Hermitian generator on device x environment.

    One Gaussian Hermitian block per occupied sector pair, plus, when
    ``mix`` is nonzero, a bridge of relative size ``mix`` between each
    pair of neighboring sector pairs (cyclically).
    """
    dev_slices = _sector_slices(device_dim, branches, "device")
    env_slices = _sector_slices(env_dim, branches, "environment")
    de = device_dim * env_dim
    h = np.zeros((de, de), dtype=np.complex128)
    width = (device_dim // branches) * (env_dim // branches)
    scale = 1.0 / math.sqrt(2.0 * width)
    flats = []
    for j in range(branches):
        flats.append(
            (
                np.arange(dev_slices[j].start, dev_slices[j].stop)[:, None] * env_dim
                + np.arange(env_slices[j].start, env_slices[j].stop)[None, :]
            ).reshape(-1)
        )
        rng = np.random.default_rng(seed + 104729 * j)
        a = rng.standard_normal((width, width)) + 1j * rng.standard_normal(
            (width, width)
        )
        h[np.ix_(flats[j], flats[j])] = scale * (a + a.conj().T) / 2.0
    if mix:
        seen: set[frozenset[int]] = set()
        for j in range(branches):
            pair = frozenset((j, (j + 1) % branches))
            if len(pair) < 2 or pair in seen:
                continue
            seen.add(pair)
            rng = np.random.default_rng(seed + 104729 * branches + 15485863 * j)
            b = rng.standard_normal((width, width)) + 1j * rng.standard_normal(
                (width, width)
            )
            bridge = mix * scale * b
            h[np.ix_(flats[j], flats[(j + 1) % branches])] = bridge
            h[np.ix_(flats[(j + 1) % branches], flats[j])] = bridge.conj().T
    return h


def _sector_unitary(h: np.ndarray, eta: float) -> np.ndarray:
    vals, vecs = np.linalg.eigh(h)
    return (vecs * np.exp(-1j * eta * vals)) @ vecs.conj().T


@dataclass(frozen=True, eq=False)
class RealisticChain:
    """Raw chain output before any ergodicity verdict.

    ``label_branches`` classifies each label of the (micro + device) cut
    by the branch whose micro-side state its ontic vector carries (-1
    for null labels); satellite labels planted by the mixing knob sit in
    a foreign device sector but keep their donor's micro content, which
    is exactly what makes flow toward them cross-branch.
    ``record_overlap`` is the largest measured overlap between distinct
    branch records, the model's effective distinctness scale.
    """

    error: ErrorMatrix
    mix: float
    seed: int
    flow_mode: str
    decompositions: tuple[OnticDecomposition, ...]
    reports: tuple[MatchReport, ...]
    steps: tuple[TransitionStep, ...]
    composed: np.ndarray
    label_branches: tuple[int, ...]
    record_overlap: float
    micro_states: np.ndarray
    micro_gram: np.ndarray

    def cross_set_mass(self) -> float:
        """Occupation-weighted composed probability of changing branches."""
        start = self.decompositions[0].probs
        total = 0.0
        for j, branch_j in enumerate(self.label_branches):
            if branch_j < 0:
                continue
            for i, branch_i in enumerate(self.label_branches):
                if branch_i >= 0 and branch_i != branch_j:
                    total += start[j] * self.composed[i, j]
        return float(total)


def realistic_chain(
    error: ErrorMatrix,
    env_dim: int,
    seed: int,
    device_dim: int = 16,
    mix: float = DEFAULT_MIX,
    eta: float = 0.05,
    n_steps: int = 12,
    flow_mode: str = "exact",
) -> RealisticChain:
    """Build the post-measurement state and run the coarse jump chain.

    The state is sum_ij f_ij |micro_i> x |record_j| with the cut between
    (micro + device) and the environment.  Dynamics after the measurement
    scramble each record inside its own device sector; the chain is
    driven either by the exact step unitary or by the first-order
    generator formula (``flow_mode`` = "exact" | "perturbative").
    """
    if flow_mode not in ("exact", "perturbative"):
        raise ValueError(f"unknown flow_mode {flow_mode!r}")
    branches = error.n_branches
    if env_dim < MIN_ENV_FACTOR * branches:
        raise ValueError(
            f"environment dimension {env_dim} too small; need at least "
            f"{MIN_ENV_FACTOR} per branch"
        )
    if not 0.0 <= mix < 1.0:
        raise ValueError(f"mix must be in [0, 1), got {mix}")

    records = _branch_records(branches, device_dim, env_dim, seed, mix)
    flat_records = records.reshape(branches, -1)
    gram = flat_records.conj() @ flat_records.T
    record_overlap = float(np.max(np.abs(gram - np.diag(np.diag(gram)))))

    tensor = np.einsum("ij,jde->ide", error.matrix, records)
    amps = tensor.reshape(-1)
    amps = amps / np.linalg.norm(amps)
    dims = DimSignature((error.n_outcomes, device_dim, env_dim))
    psi = StateVector(amps, dims)

    h_blocks = _sector_generator(branches, device_dim, env_dim, seed + 1, mix)
    prop = _RecordShuffle(_sector_unitary(h_blocks, eta), eta)
    h_full = None
    if flow_mode == "perturbative":
        h_full = np.kron(np.eye(error.n_outcomes), h_blocks)

    decs = [ontic_decompose(psi, cut=(0, 1), time=0.0)]
    reports: list[MatchReport] = []
    steps: list[TransitionStep] = []
    for k in range(n_steps):
        psi = prop.apply(psi)
        raw = ontic_decompose(psi, cut=(0, 1), time=(k + 1) * eta)
        matched, report = match_labels(decs[-1], raw)
        if flow_mode == "exact":
            flow = flow_exact(decs[-1], matched, prop)
        else:
            flow = flow_perturbative(decs[-1], h_full, eta)
        step = transition_matrix(flow, decs[-1].probs, eta, time=k * eta)
        if not step.consistent:
            raise ValueError(
                f"inconsistent transition at step {k} "
                f"(t = {k * eta:.6g}); use a smaller eta"
            )
        decs.append(matched)
        reports.append(report)
        steps.append(step)

    micro = error.micro_states()
    assigned: list[int] = []
    for label in range(decs[0].probs.size):
        if decs[0].probs[label] <= NULL_CUTOFF:
            assigned.append(-1)
            continue
        block = decs[0].ontic[label].amplitudes.reshape(error.n_outcomes, device_dim)
        weight = np.sum(np.abs(micro.conj().T @ block) ** 2, axis=1)
        assigned.append(int(np.argmax(weight)))

    return RealisticChain(
        error=error,
        mix=float(mix),
        seed=int(seed),
        flow_mode=flow_mode,
        decompositions=tuple(decs),
        reports=tuple(reports),
        steps=tuple(steps),
        composed=compose(steps),
        label_branches=tuple(assigned),
        record_overlap=record_overlap,
        micro_states=micro,
        micro_gram=micro.conj().T @ micro,
    )


@dataclass(frozen=True, eq=False)
class RealisticRun:
    """Chain plus its ergodicity verdict.

    ``branch_probs`` reorders the partition's inclusive probabilities by
    branch index; ``born_residual`` is their worst deviation from the
    error-matrix column masses.
    """

    chain: RealisticChain
    partition: ErgodicPartition
    branch_probs: np.ndarray
    born_residual: float


def run_realistic(
    error,
    d_p: int,
    env_dim: int,
    seed: int,
    device_dim: int = 16,
    mix: float = DEFAULT_MIX,
    eta: float = 0.05,
    n_steps: int = 12,
    flow_mode: str = "exact",
    threshold: float = PARTITION_THRESHOLD,
) -> RealisticRun:
    """Full realistic-measurement experiment with the Born-rule check.

    Partitions the composed chain into ergodic sets, demands exactly one
    set per branch, and checks each set's inclusive probability against
    the corresponding column mass of the error matrix, within the
    measured record overlap.  Raises if the records overlap too much for
    the partition to separate the branches.
    """
    if not isinstance(error, ErrorMatrix):
        error = ErrorMatrix(error)
    if error.n_outcomes != d_p:
        raise ValueError(
            f"error matrix has {error.n_outcomes} outcome rows, expected {d_p}"
        )
    chain = realistic_chain(
        error,
        env_dim,
        seed,
        device_dim=device_dim,
        mix=mix,
        eta=eta,
        n_steps=n_steps,
        flow_mode=flow_mode,
    )
    final = chain.decompositions[-1]
    partition = ergodic_partition(chain.composed, final.probs, threshold=threshold)
    branches = error.n_branches
    if len(partition.sets) != branches:
        raise ValueError(
            f"found {len(partition.sets)} ergodic sets for {branches} branches; "
            f"records overlap by {chain.record_overlap:.3e}, too much to separate"
        )
    branch_probs = np.zeros(branches)
    for set_index, labels in enumerate(partition.sets):
        members = {chain.label_branches[i] for i in labels}
        if len(members) != 1:
            raise ValueError(
                f"ergodic set {set_index} straddles branches {sorted(members)}; "
                f"records overlap by {chain.record_overlap:.3e}"
            )
        branch_probs[members.pop()] = partition.inclusive_probs[set_index]

    masses = error.column_masses()
    residual = float(np.max(np.abs(branch_probs - masses)))
    if residual > max(chain.record_overlap, 1e-12):
        raise RuntimeError(
            f"inclusive probabilities miss the branch masses by {residual:.3e}, "
            f"beyond the record overlap {chain.record_overlap:.3e}"
        )
    return RealisticRun(
        chain=chain,
        partition=partition,
        branch_probs=branch_probs,
        born_residual=residual,
    )


@dataclass(frozen=True, eq=False)
class CollapsedState:
    """One ergodic component of a density matrix, renormalized."""

    density: DensityMatrix
    set_index: int
    kept_mass: float
    pruned_mass: float


def collapse_prune(
    partition: ErgodicPartition, realized: int, rho: DensityMatrix
) -> CollapsedState:
    """Keep only the realized ergodic component of ``rho``.

    The partition's labels index the spectrum of ``rho`` in descending
    eigenvalue order (the creation order of a fresh decomposition).  The
    realized set's eigenprojector cuts the component out, and the result
    is renormalized; the discarded mass is recorded rather than silently
    dropped.
    """
    if not 0 <= realized < len(partition.sets):
        raise ValueError(
            f"realized set {realized} out of range for {len(partition.sets)} sets"
        )
    labels = partition.sets[realized]
    vals, vecs = np.linalg.eigh(rho.matrix)
    order = np.argsort(vals)[::-1]
    vals = vals[order]
    vecs = vecs[:, order]
    label_count = sum(len(s) for s in partition.sets) + len(partition.null_set)
    if label_count > vals.size:
        raise ValueError(
            f"partition indexes {label_count} labels but rho has rank at most {vals.size}"
        )
    kept = float(np.sum(vals[list(labels)]))
    if kept <= NULL_CUTOFF:
        raise ValueError(f"realized set {realized} carries no probability")
    basis = vecs[:, list(labels)]
    projector = basis @ basis.conj().T
    component = projector @ rho.matrix @ projector
    return CollapsedState(
        density=DensityMatrix(component / kept, rho.dims),
        set_index=int(realized),
        kept_mass=kept,
        pruned_mass=float(max(1.0 - kept, 0.0)),
    )
