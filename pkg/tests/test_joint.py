"""Joint tables over subsystem labels, and refusals when none exist.

A table is only trusted when its entries are recomputed independently:
the post-measurement pair state's joints come from the closed-form
singlet formula, and the GHZ-style case is hand-separable.  The Bell
pair is the canonical refusal, its single region state being maximally
far from every product.
"""

import math

import numpy as np
import pytest

from modalchain.qcore import DimSignature, StateVector
from modalchain.scenarios import EprConfig, joint_factorization, run_epr


def measured_pair_state(angle_b=math.pi / 3):
    """Four-qubit state after both wings recorded, via the pair scenario."""
    run = run_epr(EprConfig.singlet(angle_a=0.0, angle_b=angle_b))
    # rebuild the final state from the last decomposition's Schmidt sum
    dec = run.decompositions[-1]
    return StateVector(dec.reconstruct(), dec.dims_full), run.joints


def ghz_state():
    amps = np.zeros(8, dtype=complex)
    amps[0b000] = amps[0b111] = 1.0 / math.sqrt(2.0)
    return StateVector(amps, DimSignature((2, 2, 2)))


def bell_with_trivial_env():
    amps = np.zeros(4, dtype=complex)
    amps[0b00] = amps[0b11] = 1.0 / math.sqrt(2.0)
    return StateVector(
        np.kron(amps, np.ones(1, dtype=complex)), DimSignature((2, 2, 1))
    )


# ---------------------------------------------------------------------
# factorizable regions
# ---------------------------------------------------------------------


def test_measured_pair_devices_factor_into_singlet_joints():
    psi, joints = measured_pair_state()
    table = joint_factorization(psi, cut_a=(2,), cut_b=(3,), tol=1e-6)
    assert table.ok
    assert table.max_residual <= 1e-12
    # every joint probability appears exactly once in the table
    np.testing.assert_allclose(np.sort(table.table, axis=None), np.sort(joints, axis=None), atol=1e-12)
    assert table.table.sum() == pytest.approx(1.0, abs=1e-12)
    assert len(table.assignments) == 4
    np.testing.assert_allclose(table.residual_a, 0.0, atol=1e-12)
    np.testing.assert_allclose(table.residual_b, 0.0, atol=1e-12)


def test_ghz_qubit_pair_factors_diagonally():
    table = joint_factorization(ghz_state(), cut_a=(0,), cut_b=(1,), tol=1e-9)
    assert table.ok
    # the two region states are |00> and |11>: a perfectly correlated table
    np.testing.assert_allclose(np.sort(np.diag(table.table)), [0.5, 0.5], atol=1e-12)
    assert table.table.sum() == pytest.approx(1.0, abs=1e-12)
    assert table.max_residual <= 1e-12


# ---------------------------------------------------------------------
# refusals
# ---------------------------------------------------------------------


def test_bell_pair_is_refused():
    table = joint_factorization(bell_with_trivial_env(), cut_a=(0,), cut_b=(1,), tol=1e-6)
    assert not table.ok
    assert table.table is None
    assert "no classical joint description" in table.reason
    # the Bell state's best product overlap is exactly 1/2
    assert table.worst_overlap == pytest.approx(0.5, abs=1e-12)
    assert math.isnan(table.max_residual)


def test_loose_tolerance_is_exposed_by_the_marginals():
    # with tol past 1/2 the Bell state squeaks through as a "product",
    # but the table's marginals then miss the subsystem probabilities
    # by 1/2, so the failure still cannot hide
    table = joint_factorization(bell_with_trivial_env(), cut_a=(0,), cut_b=(1,), tol=0.6)
    assert table.ok
    assert table.max_residual == pytest.approx(0.5, abs=1e-12)


# ---------------------------------------------------------------------
# input validation
# ---------------------------------------------------------------------


def test_rejects_overlapping_cuts():
    with pytest.raises(ValueError, match="overlap"):
        joint_factorization(ghz_state(), cut_a=(0, 1), cut_b=(1,), tol=1e-6)


def test_rejects_out_of_range_tolerance():
    with pytest.raises(ValueError, match="tol"):
        joint_factorization(ghz_state(), cut_a=(0,), cut_b=(1,), tol=0.0)
    with pytest.raises(ValueError, match="tol"):
        joint_factorization(ghz_state(), cut_a=(0,), cut_b=(1,), tol=1.0)
