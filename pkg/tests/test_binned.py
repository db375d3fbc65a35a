"""Coarse position measurement with one flag qubit per bin.

The oracle is direct summation: the probability of bin j is the squared
wavefunction mass inside it, recomputed here with searchsorted before
every run.  The symmetric-Gaussian case doubles as a regression test for
exactly degenerate bin masses, where the device eigenbasis is free
inside each degenerate pair and the run must still attribute one label
per bin.
"""

import numpy as np
import pytest

from modalchain.scenarios import run_binned_position

GRID = np.linspace(-4.0, 4.0, 64)
EDGES = np.array([-4.0, -2.0, 0.0, 2.0, 4.0])


def bin_masses(grid, amplitudes, edges):
    """Independent mass oracle: sum |xi|^2 over the grid points of each bin."""
    idx = np.clip(np.searchsorted(edges, grid, side="right") - 1, 0, edges.size - 2)
    masses = np.zeros(edges.size - 1)
    np.add.at(masses, idx, np.abs(amplitudes) ** 2)
    return masses


def gaussian(center, width):
    xi = np.exp(-((GRID - center) ** 2) / (2.0 * width**2)).astype(complex)
    return xi / np.linalg.norm(xi)


# ---------------------------------------------------------------------
# bin probabilities against the mass oracle
# ---------------------------------------------------------------------


def test_asymmetric_gaussian_matches_masses():
    xi = gaussian(0.55, 1.1)
    run = run_binned_position(GRID, xi, EDGES)
    np.testing.assert_allclose(run.masses, bin_masses(GRID, xi, EDGES), atol=1e-14)
    np.testing.assert_allclose(run.bin_probs, run.masses, atol=1e-10)
    assert run.localization > 0.999
    # every bin got exactly one label, the rest are null
    assert sorted(b for b in run.label_bins if b >= 0) == [0, 1, 2, 3]


def test_symmetric_gaussian_with_exactly_degenerate_pairs():
    # centered Gaussian: outer and inner bin masses tie exactly, so the
    # final device eigenbasis is only defined up to rotations inside each
    # pair; the run must still pin one bin per label
    xi = gaussian(0.0, 1.5)
    run = run_binned_position(GRID, xi, EDGES)
    masses = bin_masses(GRID, xi, EDGES)
    assert masses[0] == pytest.approx(masses[3], rel=1e-12)
    assert masses[1] == pytest.approx(masses[2], rel=1e-12)
    np.testing.assert_allclose(run.bin_probs, masses, atol=1e-10)
    np.testing.assert_allclose(
        run.masses, [0.02757873, 0.47242127, 0.47242127, 0.02757873], atol=1e-8
    )
    assert run.localization > 0.999
    assert sorted(b for b in run.label_bins if b >= 0) == [0, 1, 2, 3]
    assert run.decoherence_time == pytest.approx(0.8541678329390554, abs=1e-12)


def test_uniform_wavefunction_gives_quarter_masses():
    xi = np.ones(64, dtype=complex) / 8.0
    run = run_binned_position(GRID, xi, EDGES)
    np.testing.assert_allclose(run.bin_probs, 0.25, atol=1e-10)
    assert run.localization > 0.999


def test_empty_bin_keeps_a_null_label():
    xi = gaussian(0.55, 1.1)
    xi[GRID < -2.0] = 0.0
    xi /= np.linalg.norm(xi)
    run = run_binned_position(GRID, xi, EDGES)
    assert run.masses[0] == 0.0
    assert run.bin_probs[0] <= 1e-12
    # the empty bin is still claimed, by a label carrying no probability
    assert sorted(b for b in run.label_bins if b >= 0) == [0, 1, 2, 3]
    np.testing.assert_allclose(run.bin_probs[1:], run.masses[1:], atol=1e-10)


def test_flag_overlap_shrinks_over_two_steps():
    xi = gaussian(0.55, 1.1)
    coarse = run_binned_position(GRID, xi, EDGES, eta=0.5, duration=1.0)
    assert coarse.flag_overlap.shape == (4, 4)
    np.testing.assert_allclose(np.diag(coarse.flag_overlap), 1.0, atol=0.0)
    # by the end of the schedule the flags are close to orthogonal
    off = coarse.flag_overlap - np.eye(4)
    assert float(np.max(np.abs(off))) < 1e-6


# ---------------------------------------------------------------------
# input validation
# ---------------------------------------------------------------------


def test_rejects_unnormalized_wavefunction():
    with pytest.raises(ValueError, match="not normalized"):
        run_binned_position(GRID, np.ones(64, dtype=complex), EDGES)


def test_rejects_unsorted_edges():
    with pytest.raises(ValueError, match="increasing"):
        run_binned_position(GRID, gaussian(0.0, 1.5), np.array([-4.0, 0.0, -2.0, 4.0]))


def test_rejects_grid_outside_edges():
    with pytest.raises(ValueError, match="beyond"):
        run_binned_position(GRID, gaussian(0.0, 1.5), np.array([-3.0, 0.0, 4.0]))


def test_rejects_single_edge():
    with pytest.raises(ValueError, match="bin edges"):
        run_binned_position(GRID, gaussian(0.0, 1.5), np.array([-4.0]))


def test_rejects_underresolved_bin():
    # the first bin catches a single grid point, far below the floor of 8
    with pytest.raises(ValueError, match="grid points"):
        run_binned_position(GRID, gaussian(0.0, 1.5), np.array([-4.0, -3.99, 4.0]))


def test_rejects_mismatched_grid_and_amplitudes():
    with pytest.raises(ValueError, match="grid"):
        run_binned_position(GRID[:-1], gaussian(0.0, 1.5), EDGES)
