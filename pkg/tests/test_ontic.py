"""Decomposition across a cut, label matching, overlap diagnostics.

The reconstruction identity is the oracle for every decomposition: the
constructor itself refuses any output whose Schmidt sum misses the
source state, so each passing test here also certifies that identity.
"""

from functools import reduce

import numpy as np
import pytest

from modalchain import ontic, qcore
from modalchain.ontic import (
    MatchReport,
    OnticDecomposition,
    gaussian_distinctness,
    match_labels,
    ontic_decompose,
    overlap_matrix,
)
from modalchain.qcore import DimSignature, SplitHamiltonian, StateVector, propagate
from modalchain.qcore import haar_random_state, tensor, with_dims

KET0 = np.array([1.0, 0.0], dtype=complex)
KET1 = np.array([0.0, 1.0], dtype=complex)
PLUS = np.array([1.0, 1.0], dtype=complex) / np.sqrt(2)
MINUS = np.array([1.0, -1.0], dtype=complex) / np.sqrt(2)


def random_state(dim, seed, factors):
    rng = np.random.default_rng(seed)
    z = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    z /= np.linalg.norm(z)
    return StateVector(z, DimSignature(factors))


def random_hermitian(dim, seed, scale=1.0):
    rng = np.random.default_rng(seed)
    m = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    return scale * (m + m.conj().T) / 2


# ---------------------------------------------------------------------
# decomposition
# ---------------------------------------------------------------------


def test_bell_state_spectrum():
    bell = StateVector(np.array([1, 0, 0, 1]) / np.sqrt(2), DimSignature((2, 2)))
    dec = ontic_decompose(bell, cut=(0,))
    np.testing.assert_allclose(dec.probs, [0.5, 0.5], atol=1e-14)
    assert dec.rank == 2
    assert dec.degenerate
    assert not dec.swapped
    # the pair basis is free inside the degenerate subspace, but it must
    # still be an orthonormal basis of the qubit
    m = overlap_matrix(dec.ontic)
    np.testing.assert_allclose(m, np.eye(2), atol=1e-12)


def test_product_state_is_rank_one():
    a = random_state(2, 31, (2,))
    b = random_state(3, 32, (3,))
    dec = ontic_decompose(tensor(a, b), cut=(0,))
    np.testing.assert_allclose(dec.probs, [1.0, 0.0], atol=1e-14)
    assert dec.rank == 1
    assert not dec.degenerate
    assert abs(np.vdot(a.amplitudes, dec.ontic[0].amplitudes)) == pytest.approx(
        1.0, abs=1e-12
    )
    assert abs(np.vdot(b.amplitudes, dec.mirrors[0].amplitudes)) == pytest.approx(
        1.0, abs=1e-12
    )
    # the mirror absorbs the pairing phase, so the product recombines the
    # source exactly, not just up to phase
    np.testing.assert_allclose(
        dec.product_state(0).amplitudes, tensor(a, b).amplitudes, atol=1e-12
    )


def test_reconstruction_random_2x4():
    psi = random_state(8, 20260819, (2, 4))
    dec = ontic_decompose(psi, cut=(0,))
    err = np.linalg.norm(dec.reconstruct() - psi.amplitudes)
    assert err <= 1e-9


def test_schmidt_symmetry_against_reduced_spectrum():
    psi = random_state(12, 77, (4, 3))
    dec = ontic_decompose(psi, cut=(0,))  # larger side: roles swap
    assert dec.swapped
    assert dec.keep == (1,)
    spectrum = np.sort(np.linalg.eigvalsh(psi.reduced((0,)).matrix))[::-1]
    np.testing.assert_allclose(dec.probs, spectrum[: dec.probs.size], atol=1e-10)


def test_decompose_rejects_bad_cuts():
    psi = random_state(8, 5, (2, 4))
    with pytest.raises(ValueError):
        ontic_decompose(psi, cut=())
    with pytest.raises(ValueError):
        ontic_decompose(psi, cut=(0, 1))
    with pytest.raises(ValueError):
        ontic_decompose(psi, cut=(3,))


def test_three_factor_cut_reconstructs():
    psi = random_state(24, 91, (2, 3, 4))
    dec = ontic_decompose(psi, cut=(1,))
    assert dec.keep == (1,)
    assert dec.env == (0, 2)
    assert np.linalg.norm(dec.reconstruct() - psi.amplitudes) <= 1e-9
    for k in range(dec.rank):
        assert abs(np.linalg.norm(dec.product_state(k).amplitudes) - 1) <= 1e-12


# ---------------------------------------------------------------------
# label matching
# ---------------------------------------------------------------------


def test_match_identity():
    psi = random_state(8, 42, (2, 4))
    prev = ontic_decompose(psi, cut=(0,))
    again = ontic_decompose(psi, cut=(0,), time=1.0)
    matched, report = match_labels(prev, again)
    assert report.permutation == (0, 1)
    np.testing.assert_allclose(report.overlaps, [1.0, 1.0], atol=1e-12)
    assert report.min_overlap >= 1.0 - 1e-12
    assert not report.degraded
    assert matched.time == 1.0


def test_match_undoes_a_pure_relabeling():
    psi = random_state(8, 43, (2, 4))
    prev = ontic_decompose(psi, cut=(0,))
    shuffled = OnticDecomposition(
        time=0.5,
        probs=prev.probs[::-1],
        ontic=prev.ontic[::-1],
        mirrors=prev.mirrors[::-1],
        rank=prev.rank,
        keep=prev.keep,
        env=prev.env,
        dims_full=prev.dims_full,
        swapped=prev.swapped,
        degenerate=prev.degenerate,
        source=prev.source,
    )
    matched, report = match_labels(prev, shuffled)
    assert report.permutation == (1, 0)
    np.testing.assert_allclose(report.overlaps, [1.0, 1.0], atol=1e-12)
    np.testing.assert_allclose(matched.probs, prev.probs, atol=1e-14)


@pytest.mark.parametrize("seed", [0, 1, 2, 3, 4])
def test_label_stability_weak_coupling(seed):
    # one coarse step of a weakly coupled 2x4 pair: labels must not move
    eta = 0.05
    split = SplitHamiltonian(
        random_hermitian(2, 101, scale=0.5),
        random_hermitian(4, 102, scale=0.5),
        random_hermitian(8, 103, scale=0.05),
    )
    u = propagate(split.total(), eta)
    psi0 = with_dims(haar_random_state(8, seed), (2, 4))
    psi1 = u.apply(psi0)
    prev = ontic_decompose(psi0, cut=(0,))
    nxt = ontic_decompose(psi1, cut=(0,), time=eta)
    matched, report = match_labels(prev, nxt)
    assert report.permutation == tuple(range(prev.probs.size))
    assert report.min_overlap >= 0.99
    assert not report.degraded


def test_degenerate_basis_follows_previous_step():
    # a fully degenerate pair leaves the backend free to pick any basis;
    # matching must rotate it back onto the parent's axes
    prev_state = tensor(
        StateVector(PLUS, DimSignature((2,))), StateVector(KET0, DimSignature((2,)))
    )
    prev = ontic_decompose(prev_state, cut=(0,))
    bell = StateVector(np.array([1, 0, 0, 1]) / np.sqrt(2), DimSignature((2, 2)))
    nxt = ontic_decompose(bell, cut=(0,), time=1.0)
    matched, report = match_labels(prev, nxt)
    assert abs(np.vdot(PLUS, matched.ontic[0].amplitudes)) ** 2 >= 1.0 - 1e-10
    assert abs(np.vdot(MINUS, matched.ontic[1].amplitudes)) ** 2 >= 1.0 - 1e-10
    # parent kept its label with full overlap; reconstruction re-verified
    assert report.overlaps[0] == pytest.approx(1.0, abs=1e-10)
    assert np.linalg.norm(matched.reconstruct() - bell.amplitudes) <= 1e-9


def test_match_rejects_mismatched_cuts():
    a = ontic_decompose(random_state(8, 1, (2, 4)), cut=(0,))
    b = ontic_decompose(random_state(8, 2, (4, 2)), cut=(0,))
    with pytest.raises(ValueError):
        match_labels(a, b)


def test_rephasing_preserves_magnitudes_and_probs():
    psi0 = random_state(8, 7, (2, 4))
    split = SplitHamiltonian(
        random_hermitian(2, 201, scale=0.4),
        random_hermitian(4, 202, scale=0.4),
        random_hermitian(8, 203, scale=0.1),
    )
    psi1 = propagate(split.total(), 0.1).apply(psi0)
    prev = ontic_decompose(psi0, cut=(0,))
    nxt = ontic_decompose(psi1, cut=(0,), time=0.1)
    matched, report = match_labels(prev, nxt)
    assert sorted(np.round(matched.probs, 14)) == sorted(np.round(nxt.probs, 14))
    np.testing.assert_allclose(overlap_matrix(matched.ontic), np.eye(2), atol=1e-10)
    for i in (0, 1):
        amp = np.vdot(prev.ontic[i].amplitudes, matched.ontic[i].amplitudes)
        assert amp.imag == pytest.approx(0.0, abs=1e-10)
        assert amp.real >= 0.0


def test_match_report_validates_permutation():
    with pytest.raises(ValueError):
        MatchReport(permutation=(0, 0), overlaps=np.ones(2), min_overlap=1.0, degraded=False)


# ---------------------------------------------------------------------
# overlap diagnostics
# ---------------------------------------------------------------------


def test_overlap_matrix_orthonormal_inputs():
    states = [
        StateVector(KET0, DimSignature((2,))),
        StateVector(KET1, DimSignature((2,))),
    ]
    np.testing.assert_allclose(overlap_matrix(states), np.eye(2), atol=1e-14)


def test_overlap_matrix_plus_zero():
    states = [
        StateVector(KET0, DimSignature((2,))),
        StateVector(PLUS, DimSignature((2,))),
    ]
    m = overlap_matrix(states)
    assert m[0, 1] == pytest.approx(1 / np.sqrt(2), abs=1e-12)
    assert m[0, 0] == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("chi", [0.3, 1.0, np.pi / 2])
def test_overlap_matrix_twenty_qubit_rotation(chi):
    # rotating every qubit of a 20-qubit register by chi against the
    # unrotated register: overlap is the product of per-qubit overlaps
    n = 20
    single = np.array([np.cos(chi), np.sin(chi)], dtype=complex)
    rotated = reduce(np.kron, [single] * n)
    rotated /= np.linalg.norm(rotated)  # 20 kron factors drift the norm ~1e-12
    base = np.zeros(2**n, dtype=complex)
    base[0] = 1.0
    dims = DimSignature((2,) * n)
    m = overlap_matrix([StateVector(base, dims), StateVector(rotated, dims)])
    assert m[0, 1] == pytest.approx(abs(np.cos(chi)) ** n, abs=1e-10)


def test_overlap_matrix_rejects_mixed_dims():
    with pytest.raises(ValueError):
        overlap_matrix(
            [
                StateVector(KET0, DimSignature((2,))),
                StateVector(np.array([1, 0, 0]), DimSignature((3,))),
            ]
        )


# ---------------------------------------------------------------------
# macroscopic distinctness
# ---------------------------------------------------------------------


def test_gaussian_distinctness_values():
    assert gaussian_distinctness(1, 0.0, 1e-10) == 0.0
    assert gaussian_distinctness(1e20, 1e-4, 1e-10) == pytest.approx(-1e32, rel=1e-12)
    assert gaussian_distinctness(20, 1.0, 1.0) == pytest.approx(-20.0, rel=1e-12)


def test_gaussian_distinctness_rejects_bad_args():
    with pytest.raises(ValueError):
        gaussian_distinctness(0, 1.0, 1.0)
    with pytest.raises(ValueError):
        gaussian_distinctness(10, 1.0, 0.0)
    with pytest.raises(ValueError):
        gaussian_distinctness(10, -1.0, 1.0)
