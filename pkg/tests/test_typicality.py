"""Concentration of reduced states around their predicted targets.

Closed forms anchor every mode: the Lubkin average purity
(d_a + d_e)/(d_a d_e + 1) for unconstrained sampling, the environment
trace of the projector for constrained sampling, and 1 + e^-beta for the
two-level partition function.  Sampled means are pinned at fixed seeds,
with the statistical claims kept to generous standard-error windows.
"""

import math

import numpy as np
import pytest

from modalchain.scenarios import TypicalityConfig, run_typicality


# ---------------------------------------------------------------------
# unconstrained sampling
# ---------------------------------------------------------------------


def test_mean_purity_matches_lubkin():
    rep = run_typicality(TypicalityConfig(d_a=2, d_e=256, n_samples=200, seed=7))
    assert rep.mode == "haar"
    assert rep.lubkin_purity == pytest.approx(258.0 / 513.0, abs=1e-15)
    assert abs(rep.mean_purity - rep.lubkin_purity) <= 4.0 * rep.purity_stderr
    # a big bath pins the reduced state near maximal mixedness
    np.testing.assert_allclose(rep.target, np.eye(2) / 2.0, atol=0.0)
    assert rep.mean_distance < 0.2
    assert rep.max_distance < 0.2
    assert rep.bath_dominates


def test_unconstrained_sampling_pinned():
    rep = run_typicality(TypicalityConfig(d_a=2, d_e=256, n_samples=200, seed=7))
    assert rep.mean_purity == pytest.approx(0.502927, abs=1e-6)
    assert rep.mean_distance == pytest.approx(0.03518043360895098, abs=1e-12)
    assert rep.constrained_rank == 512


def test_tiny_bath_cannot_mix_the_system():
    # d_e = 1 leaves the reduced state pure; its distance from I/4 is
    # (1/2) * (3/4 + 3 * 1/4) = 3/4 for every pure state
    rep = run_typicality(TypicalityConfig(d_a=4, d_e=1, n_samples=20, seed=3))
    assert rep.mean_purity == pytest.approx(1.0, abs=1e-12)
    assert rep.mean_distance == pytest.approx(0.75, abs=1e-12)
    assert not rep.bath_dominates


# ---------------------------------------------------------------------
# projector constraint
# ---------------------------------------------------------------------


def test_projected_sampling_hits_the_projector_trace():
    # rank-3 projector living entirely in the first system sector: every
    # constrained sample reduces to |0><0| exactly
    proj = np.zeros((8, 8))
    proj[:3, :3] = np.eye(3)
    rep = run_typicality(
        TypicalityConfig(d_a=2, d_e=4, n_samples=60, seed=9, projector=proj)
    )
    assert rep.mode == "projected"
    assert rep.constrained_rank == 3
    np.testing.assert_allclose(rep.target, [[1.0, 0.0], [0.0, 0.0]], atol=1e-14)
    assert rep.max_distance <= 1e-12


def test_projector_validation():
    good = np.eye(8)
    with pytest.raises(ValueError, match="shape"):
        run_typicality(
            TypicalityConfig(d_a=2, d_e=4, n_samples=5, seed=1, projector=np.eye(6))
        )
    skew = good.astype(complex).copy()
    skew[0, 1] = 1.0j
    with pytest.raises(ValueError, match="Hermitian"):
        run_typicality(TypicalityConfig(d_a=2, d_e=4, n_samples=5, seed=1, projector=skew))
    with pytest.raises(ValueError, match="idempotent"):
        run_typicality(
            TypicalityConfig(d_a=2, d_e=4, n_samples=5, seed=1, projector=0.5 * good)
        )
    with pytest.raises(ValueError, match="rank zero"):
        run_typicality(
            TypicalityConfig(d_a=2, d_e=4, n_samples=5, seed=1, projector=np.zeros((8, 8)))
        )


# ---------------------------------------------------------------------
# energy-shell constraint
# ---------------------------------------------------------------------


def test_canonical_mode_approaches_boltzmann():
    rep = run_typicality(
        TypicalityConfig(
            d_a=2, d_e=64, n_samples=50, seed=11, beta=1.0, h_a=np.diag([0.0, 1.0])
        )
    )
    assert rep.mode == "canonical"
    assert rep.partition_function == pytest.approx(1.0 + math.exp(-1.0), abs=1e-12)
    np.testing.assert_allclose(
        rep.canonical_target,
        np.diag([1.0, math.exp(-1.0)]) / (1.0 + math.exp(-1.0)),
        atol=1e-12,
    )
    # default shell: bath levels ln(k)/beta within 0.35 of 0.75 * ln(64),
    # shifted down by the subsystem level; 17 + 6 members
    assert rep.constrained_rank == 23
    np.testing.assert_allclose(np.diag(rep.target), [17.0 / 23.0, 6.0 / 23.0], atol=1e-12)
    # the finite bath tilts the shell weights away from e^-beta slightly,
    # so the Boltzmann distance is reported separately and both stay small
    assert rep.mean_distance < 0.2
    assert rep.canonical_mean_distance < 0.2
    assert rep.canonical_mean_distance == pytest.approx(0.07128037107784384, abs=1e-12)


def test_canonical_mode_validation():
    with pytest.raises(ValueError, match="not both"):
        TypicalityConfig(
            d_a=2, d_e=4, n_samples=5, seed=1,
            projector=np.eye(8), beta=1.0, h_a=np.eye(2),
        )
    with pytest.raises(ValueError, match="h_a"):
        TypicalityConfig(d_a=2, d_e=4, n_samples=5, seed=1, beta=1.0)
    with pytest.raises(ValueError, match="positive"):
        TypicalityConfig(
            d_a=2, d_e=4, n_samples=5, seed=1, beta=-1.0, h_a=np.eye(2)
        )
    with pytest.raises(ValueError, match="Hermitian"):
        TypicalityConfig(
            d_a=2, d_e=4, n_samples=5, seed=1, beta=1.0,
            h_a=np.array([[0.0, 1.0], [0.0, 1.0]]),
        )


def test_starved_energy_shell_is_an_error():
    with pytest.raises(ValueError, match="no bath level"):
        run_typicality(
            TypicalityConfig(
                d_a=2, d_e=64, n_samples=5, seed=1, beta=1.0,
                h_a=np.diag([0.0, 1.0]), window_width=1e-6,
            )
        )


def test_config_rejects_nonpositive_dimensions():
    with pytest.raises(ValueError, match="at least 1"):
        TypicalityConfig(d_a=0, d_e=4, n_samples=5, seed=1)
    with pytest.raises(ValueError, match="at least 1"):
        TypicalityConfig(d_a=2, d_e=4, n_samples=0, seed=1)
