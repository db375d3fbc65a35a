"""Product structure of joint ontic states, or an honest refusal.

Ontic states of a composite region only factor into subsystem ontic
states when the records are distinct enough; when they do, the region's
probabilities define a joint table over subsystem labels.  When they do
not, there is no classical joint description to extract, and this module
says so instead of forcing one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..ontic import NULL_CUTOFF, OnticDecomposition, ontic_decompose
from ..qcore import StateVector


def _side_states(dec: OnticDecomposition, retained: list[int]) -> np.ndarray:
    """Retained states on the cut side named at the call, as columns.

    The decomposition may have swapped the sides internally; the states
    of the requested cut are the mirrors in that case.
    """
    source = dec.mirrors if dec.swapped else dec.ontic
    return np.stack([source[i].amplitudes for i in retained], axis=1)


@dataclass(frozen=True, eq=False)
class JointTable:
    """Joint probability table over subsystem labels, or a refusal.

    When ``ok``, ``table[i, a]`` is the probability of region label
    m(i, a) and the residual arrays measure how far the table's marginals
    drift from the subsystem probabilities.  When not, ``reason`` says
    which region state blocked the factorization and ``worst_overlap``
    how badly.
    """

    ok: bool
    tol: float
    table: np.ndarray | None
    assignments: tuple[tuple[int, int, int], ...]
    residual_a: np.ndarray | None
    residual_b: np.ndarray | None
    max_residual: float
    worst_label: int
    worst_overlap: float
    reason: str


def joint_factorization(
    psi: StateVector, cut_a, cut_b, tol: float
) -> JointTable:
    """Try to express the ontic states of region A+B as products.

    Decomposes the state across (A+B | rest), then across (A | rest) and
    (B | rest), and matches every retained region state to its best
    product of subsystem states by squared overlap.  All best overlaps
    must reach 1 - tol, and no product may be claimed twice; otherwise
    the result is a refusal carrying the worst offender.
    """
    cut_a = tuple(int(i) for i in cut_a)
    cut_b = tuple(int(i) for i in cut_b)
    if set(cut_a) & set(cut_b):
        raise ValueError(f"cuts overlap on factors {sorted(set(cut_a) & set(cut_b))}")
    if not (0.0 < tol < 1.0):
        raise ValueError(f"tol must be in (0, 1), got {tol}")
    joint = ontic_decompose(psi, cut=cut_a + cut_b)
    dec_a = ontic_decompose(psi, cut=cut_a)
    dec_b = ontic_decompose(psi, cut=cut_b)

    retained_m = [i for i in range(joint.probs.size) if joint.probs[i] > NULL_CUTOFF]
    retained_a = [i for i in range(dec_a.probs.size) if dec_a.probs[i] > NULL_CUTOFF]
    retained_b = [i for i in range(dec_b.probs.size) if dec_b.probs[i] > NULL_CUTOFF]
    states_m = _side_states(joint, retained_m)
    states_a = _side_states(dec_a, retained_a)
    states_b = _side_states(dec_b, retained_b)
    dim_a = psi.dims.subdim(cut_a)
    dim_b = psi.dims.subdim(cut_b)

    assignments: list[tuple[int, int, int]] = []
    taken: set[tuple[int, int]] = set()
    table = np.zeros((dec_a.probs.size, dec_b.probs.size))
    for col, m in enumerate(retained_m):
        block = states_m[:, col].reshape(dim_a, dim_b)
        overlap = np.abs(states_a.conj().T @ block @ states_b.conj()) ** 2
        flat = int(np.argmax(overlap))
        row, col_b = divmod(flat, overlap.shape[1])
        best = float(overlap[row, col_b])
        if best < 1.0 - tol:
            return JointTable(
                ok=False,
                tol=float(tol),
                table=None,
                assignments=(),
                residual_a=None,
                residual_b=None,
                max_residual=float("nan"),
                worst_label=m,
                worst_overlap=best,
                reason=(
                    f"region state {m} has best product overlap {best:.6f} "
                    f"< {1.0 - tol:.6f}; no classical joint description"
                ),
            )
        i, a = retained_a[row], retained_b[col_b]
        if (i, a) in taken:
            return JointTable(
                ok=False,
                tol=float(tol),
                table=None,
                assignments=(),
                residual_a=None,
                residual_b=None,
                max_residual=float("nan"),
                worst_label=m,
                worst_overlap=best,
                reason=(
                    f"region states collide on product ({i}, {a}); "
                    f"subsystem records cannot resolve them"
                ),
            )
        taken.add((i, a))
        assignments.append((m, i, a))
        table[i, a] = joint.probs[m]

    residual_a = table.sum(axis=1) - dec_a.probs
    residual_b = table.sum(axis=0) - dec_b.probs
    max_residual = float(
        max(np.max(np.abs(residual_a)), np.max(np.abs(residual_b)))
    )
    return JointTable(
        ok=True,
        tol=float(tol),
        table=table,
        assignments=tuple(assignments),
        residual_a=residual_a,
        residual_b=residual_b,
        max_residual=max_residual,
        worst_label=-1,
        worst_overlap=1.0,
        reason="",
    )
