"""Dense linear algebra for finite-dimensional composite quantum systems.

States are flat complex vectors tagged with an ordered tuple of subsystem
dimensions, density matrices are dense Hermitian arrays, and propagators
are dense unitaries built by eigendecomposition of a Hermitian generator.
hbar = 1 throughout; all times are dimensionless.

Everything is immutable after construction and every operation is a pure
function, so values can be shared freely between worker processes.
"""

from __future__ import annotations

import math
import string
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

HBAR = 1.0

#: constructor tolerances
NORM_TOL = 1e-12
HERM_TOL = 1e-12
TRACE_TOL = 1e-12
EIGVAL_FLOOR = -1e-12

#: operation tolerances
GENERATOR_HERM_TOL = 1e-10
UNITARY_TOL = 1e-10

_SEED_MASK = 0xFFFFFFFFFFFFFFFF


@dataclass(frozen=True)
class DimSignature:
    """Ordered subsystem dimensions of a tensor-product space.

    The flat index of a basis state is the row-major mixed-radix encoding
    of the per-factor indices, so flat <-> multi index conversion is the
    usual ``np.unravel_index`` / ``np.ravel_multi_index`` pair.
    """

    factors: tuple[int, ...]

    def __post_init__(self):
        factors = tuple(int(d) for d in self.factors)
        if not factors:
            raise ValueError("DimSignature needs at least one factor")
        if any(d < 1 for d in factors):
            raise ValueError(f"every factor must be >= 1, got {factors}")
        object.__setattr__(self, "factors", factors)

    @property
    def total(self) -> int:
        return math.prod(self.factors)

    def __len__(self) -> int:
        return len(self.factors)

    def subdim(self, indices: Iterable[int]) -> int:
        """Product of the selected factor dimensions."""
        return math.prod(self.factors[i] for i in indices)

    def complement(self, keep: Iterable[int]) -> tuple[int, ...]:
        """Factor indices not listed in ``keep``, in ascending order."""
        kept = set(keep)
        return tuple(i for i in range(len(self.factors)) if i not in kept)

    def select(self, keep: Iterable[int]) -> "DimSignature":
        """Signature of the subspace spanned by the given factors, in the given order."""
        return DimSignature(tuple(self.factors[i] for i in keep))


def _as_complex_vector(values) -> np.ndarray:
    arr = np.array(values, dtype=np.complex128, copy=True).reshape(-1)
    arr.flags.writeable = False
    return arr


def _as_complex_matrix(values) -> np.ndarray:
    arr = np.array(values, dtype=np.complex128, copy=True)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {arr.shape}")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class StateVector:
    """Normalized pure state on a tensor-product space."""

    amplitudes: np.ndarray
    dims: DimSignature

    def __post_init__(self):
        amps = _as_complex_vector(self.amplitudes)
        if amps.size != self.dims.total:
            raise ValueError(
                f"amplitude count {amps.size} does not match dims total {self.dims.total}"
            )
        norm = np.linalg.norm(amps)
        if abs(norm - 1.0) > NORM_TOL:
            raise ValueError(f"state not normalized: |norm - 1| = {abs(norm - 1.0):.3e}")
        object.__setattr__(self, "amplitudes", amps)

    def __repr__(self) -> str:
        return f"StateVector(dims={self.dims.factors})"

    def density(self) -> "DensityMatrix":
        """Rank-one density matrix |psi><psi|."""
        rho = np.outer(self.amplitudes, self.amplitudes.conj())
        return DensityMatrix(rho, self.dims)

    def reduced(self, keep: Sequence[int]) -> "DensityMatrix":
        """Reduced density matrix on the given factors, in the given order.

        Contracts the pure state directly, so the full-space density matrix
        is never materialized.  The kept factors may be listed in any order;
        the result's dims follow that order.
        """
        keep = _check_keep(keep, self.dims)
        n = len(self.dims.factors)
        traced = tuple(i for i in range(n) if i not in keep)
        t = self.amplitudes.reshape(self.dims.factors)
        rho = np.tensordot(t, t.conj(), axes=(traced, traced))
        # tensordot leaves the kept axes in ascending order on each side;
        # permute to the caller's requested order before flattening.
        asc = sorted(keep)
        perm = [asc.index(i) for i in keep]
        k = len(keep)
        rho = rho.transpose([*perm, *[p + k for p in perm]])
        dk = self.dims.subdim(keep)
        return DensityMatrix(rho.reshape(dk, dk), self.dims.select(keep))


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """Hermitian, unit-trace, positive-semidefinite operator."""

    matrix: np.ndarray
    dims: DimSignature

    def __post_init__(self):
        mat = _as_complex_matrix(self.matrix)
        if mat.shape[0] != self.dims.total:
            raise ValueError(
                f"matrix dimension {mat.shape[0]} does not match dims total {self.dims.total}"
            )
        herm = np.max(np.abs(mat - mat.conj().T)) if mat.size else 0.0
        if herm > HERM_TOL:
            raise ValueError(f"not Hermitian: max |rho - rho^dag| = {herm:.3e}")
        tr = np.trace(mat).real
        if abs(tr - 1.0) > TRACE_TOL:
            raise ValueError(f"trace not 1: |tr - 1| = {abs(tr - 1.0):.3e}")
        lo = np.linalg.eigvalsh(mat)[0]
        if lo < EIGVAL_FLOOR:
            raise ValueError(f"negative eigenvalue {lo:.3e} below floor {EIGVAL_FLOOR:.0e}")
        object.__setattr__(self, "matrix", mat)

    def __repr__(self) -> str:
        return f"DensityMatrix(dims={self.dims.factors})"


@dataclass(frozen=True, eq=False)
class Propagator:
    """Unitary time-step operator with its duration attached."""

    matrix: np.ndarray
    step: float

    def __post_init__(self):
        mat = _as_complex_matrix(self.matrix)
        d = mat.shape[0]
        dev = np.max(np.abs(mat.conj().T @ mat - np.eye(d)))
        if dev > UNITARY_TOL:
            raise ValueError(f"not unitary: max |U^dag U - I| = {dev:.3e}")
        object.__setattr__(self, "matrix", mat)
        object.__setattr__(self, "step", float(self.step))

    def __repr__(self) -> str:
        return f"Propagator(dim={self.matrix.shape[0]}, step={self.step})"

    def apply(self, state: StateVector) -> StateVector:
        if state.amplitudes.size != self.matrix.shape[0]:
            raise ValueError(
                f"propagator dim {self.matrix.shape[0]} does not match state dim "
                f"{state.amplitudes.size}"
            )
        return StateVector(self.matrix @ state.amplitudes, state.dims)


@dataclass(frozen=True, eq=False)
class SplitHamiltonian:
    """Total generator split as H_sys (x) 1 + 1 (x) H_env + H_int.

    The interaction term lives on the full bipartite space; the local
    terms live on their own factors.  All three parts must be Hermitian.
    """

    h_sys: np.ndarray
    h_env: np.ndarray
    h_int: np.ndarray

    def __post_init__(self):
        for name in ("h_sys", "h_env", "h_int"):
            mat = _as_complex_matrix(getattr(self, name))
            herm = np.max(np.abs(mat - mat.conj().T)) if mat.size else 0.0
            if herm > GENERATOR_HERM_TOL:
                raise ValueError(f"{name} not Hermitian: deviation {herm:.3e}")
            object.__setattr__(self, name, mat)
        da, de = self.h_sys.shape[0], self.h_env.shape[0]
        if self.h_int.shape[0] != da * de:
            raise ValueError(
                f"h_int dimension {self.h_int.shape[0]} does not match {da}*{de}"
            )

    @property
    def dims(self) -> DimSignature:
        return DimSignature((self.h_sys.shape[0], self.h_env.shape[0]))

    def total(self) -> np.ndarray:
        da, de = self.h_sys.shape[0], self.h_env.shape[0]
        return (
            np.kron(self.h_sys, np.eye(de))
            + np.kron(np.eye(da), self.h_env)
            + self.h_int
        )


def _check_keep(keep: Sequence[int], dims: DimSignature) -> tuple[int, ...]:
    keep = tuple(int(i) for i in keep)
    if not keep:
        raise ValueError("keep must name at least one factor")
    if len(set(keep)) != len(keep):
        raise ValueError(f"duplicate factor index in keep={keep}")
    n = len(dims.factors)
    for i in keep:
        if not 0 <= i < n:
            raise ValueError(f"factor index {i} out of range for factors {dims.factors}")
    return keep


def tensor(a: StateVector, b: StateVector) -> StateVector:
    """Kronecker product state; dims are concatenated."""
    amps = np.kron(a.amplitudes, b.amplitudes)
    return StateVector(amps, DimSignature(a.dims.factors + b.dims.factors))


def partial_trace(rho: DensityMatrix, keep: Sequence[int]) -> DensityMatrix:
    """Trace out every factor not listed in ``keep``.

    The kept factors may be listed in any order and the result's dims
    follow that order.  Trace and Hermiticity are preserved.
    """
    keep = _check_keep(keep, rho.dims)
    factors = rho.dims.factors
    n = len(factors)
    if 2 * n > len(string.ascii_letters):
        raise ValueError(f"too many factors for partial_trace: {n}")
    row = string.ascii_letters[:n]
    col = string.ascii_letters[n : 2 * n]
    kept = set(keep)
    # a repeated index on the column side contracts that factor's diagonal
    sub_in = row + "".join(col[i] if i in kept else row[i] for i in range(n))
    sub_out = "".join(row[i] for i in keep) + "".join(col[i] for i in keep)
    block = rho.matrix.reshape(factors + factors)
    out = np.einsum(f"{sub_in}->{sub_out}", block)
    dk = rho.dims.subdim(keep)
    return DensityMatrix(out.reshape(dk, dk), rho.dims.select(keep))


def propagate(h_total: np.ndarray, dt: float) -> Propagator:
    """Unitary U = exp(-i H dt / hbar) via eigendecomposition of H.

    Raises ValueError if H is not Hermitian within 1e-10.  The
    eigendecomposition route keeps U exactly unitary up to rounding for
    any step size, which matters for the long piecewise-constant phases
    used by the scenario drivers.
    """
    h = np.asarray(h_total, dtype=np.complex128)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {h.shape}")
    herm = np.max(np.abs(h - h.conj().T)) if h.size else 0.0
    if herm > GENERATOR_HERM_TOL:
        raise ValueError(f"generator not Hermitian: max deviation {herm:.3e}")
    w, v = np.linalg.eigh(h)
    phases = np.exp(-1j * w * (float(dt) / HBAR))
    u = (v * phases) @ v.conj().T
    return Propagator(u, float(dt))


def embed_operator(op: np.ndarray, site: int, dims: DimSignature) -> np.ndarray:
    """Embed a single-factor operator into the full product space."""
    op = np.asarray(op, dtype=np.complex128)
    if not 0 <= site < len(dims.factors):
        raise ValueError(f"site {site} out of range for factors {dims.factors}")
    if op.shape != (dims.factors[site], dims.factors[site]):
        raise ValueError(
            f"operator shape {op.shape} does not match factor dimension "
            f"{dims.factors[site]}"
        )
    out = np.eye(1, dtype=np.complex128)
    for k, d in enumerate(dims.factors):
        out = np.kron(out, op if k == site else np.eye(d))
    return out


def haar_random_state(dim: int, seed: int) -> StateVector:
    """Haar-distributed pure state, deterministic for a given seed.

    The global phase is fixed by rotating the largest-magnitude amplitude
    onto the positive real axis, so equal seeds give bit-identical vectors
    and dim=1 always yields (1,).
    """
    dim = int(dim)
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    rng = np.random.default_rng(int(seed) & _SEED_MASK)
    z = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    k = int(np.argmax(np.abs(z)))
    z = z * (z[k].conjugate() / abs(z[k]))
    z = z / np.linalg.norm(z)
    return StateVector(z, DimSignature((dim,)))


def with_dims(state: StateVector, factors: Sequence[int]) -> StateVector:
    """Reinterpret a state's flat amplitudes under a new factor split."""
    return StateVector(state.amplitudes, DimSignature(tuple(factors)))
