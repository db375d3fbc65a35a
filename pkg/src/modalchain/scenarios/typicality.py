"""Reduced states of random pure states, against their predicted average.

Haar samples of the total system land, with overwhelming probability at
large environment dimension, near a fixed reduced state: the maximally
mixed state when nothing is constrained, the environment trace of the
constraint projector when sampling is confined to a subspace, and the
Boltzmann form when the constraint window is an energy shell weighted by
an exponential bath density.  This module measures how near.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..qcore import DimSignature, StateVector, haar_random_state

PROJECTOR_HERM_TOL = 1e-10
PROJECTOR_IDEM_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class TypicalityConfig:
    """Sampling plan for reduced-state concentration checks.

    Exactly one constraint may be active: ``projector`` confines samples
    to the range of an explicit projector on the full space, while
    ``beta`` + ``h_a`` build an energy-shell projector from a synthetic
    exponential bath (window controls available via ``window_center`` and
    ``window_width``; both default to a shell well inside the bath
    spectrum).  With no constraint, samples are Haar on the full space.
    """

    d_a: int
    d_e: int
    n_samples: int
    seed: int
    projector: np.ndarray | None = None
    beta: float | None = None
    h_a: np.ndarray | None = None
    window_center: float | None = None
    window_width: float | None = None

    def __post_init__(self):
        for name in ("d_a", "d_e", "n_samples"):
            value = int(getattr(self, name))
            if value < 1:
                raise ValueError(f"{name} must be at least 1, got {value}")
            object.__setattr__(self, name, value)
        object.__setattr__(self, "seed", int(self.seed))
        if self.projector is not None and self.beta is not None:
            raise ValueError("choose either a projector or a beta constraint, not both")
        if self.projector is not None:
            total = self.d_a * self.d_e
            p = np.array(self.projector, dtype=np.complex128, copy=True)
            if p.shape != (total, total):
                raise ValueError(
                    f"projector shape {p.shape} does not match total dimension {total}"
                )
            if np.max(np.abs(p - p.conj().T)) > PROJECTOR_HERM_TOL:
                raise ValueError("constraint projector is not Hermitian")
            if np.max(np.abs(p @ p - p)) > PROJECTOR_IDEM_TOL:
                raise ValueError("constraint projector is not idempotent")
            if int(round(np.trace(p).real)) < 1:
                raise ValueError("constraint projector has rank zero")
            p.flags.writeable = False
            object.__setattr__(self, "projector", p)
        if self.beta is not None:
            if self.h_a is None:
                raise ValueError("beta mode needs the subsystem Hamiltonian h_a")
            if not self.beta > 0.0:
                raise ValueError(f"beta must be positive, got {self.beta}")
            h = np.array(self.h_a, dtype=np.complex128, copy=True)
            if h.shape != (self.d_a, self.d_a):
                raise ValueError(f"h_a shape {h.shape} does not match d_a={self.d_a}")
            if np.max(np.abs(h - h.conj().T)) > PROJECTOR_HERM_TOL:
                raise ValueError("h_a is not Hermitian")
            h.flags.writeable = False
            object.__setattr__(self, "h_a", h)


def _trace_distance(rho: np.ndarray, sigma: np.ndarray) -> float:
    return 0.5 * float(np.sum(np.abs(np.linalg.eigvalsh(rho - sigma))))


def _shell_levels(cfg: TypicalityConfig) -> tuple[np.ndarray, list[np.ndarray], float, float]:
    """Subsystem levels plus, per level, the bath indices inside the shell.

    The synthetic bath spectrum is E_k = ln(k+1)/beta, whose level density
    grows as e^{beta E}; counting bath states inside a window centered a
    distance E_a below the shell center therefore weights subsystem level
    a by ~e^{-beta E_a}, the Boltzmann factor.
    """
    beta = float(cfg.beta)
    levels = np.linalg.eigvalsh(cfg.h_a)
    bath = np.log(np.arange(1, cfg.d_e + 1)) / beta
    center = (
        float(cfg.window_center)
        if cfg.window_center is not None
        else 0.75 * bath[-1]
    )
    width = float(cfg.window_width) if cfg.window_width is not None else 0.35 / beta
    members = [
        np.flatnonzero(np.abs(bath + e - center) <= width) for e in levels
    ]
    counts = np.array([m.size for m in members])
    if np.any(counts == 0):
        starved = int(np.argmax(counts == 0))
        raise ValueError(
            f"energy shell contains no bath level for subsystem level {starved}; "
            f"widen the window or recenter it"
        )
    return levels, members, center, width


@dataclass(frozen=True, eq=False)
class TypicalityReport:
    """Distances of sampled reduced states from their predicted target.

    ``target`` is the prediction the distances are measured against;
    in the beta mode ``canonical_target`` carries the Boltzmann form and
    ``canonical_mean_distance`` the distance to it, reported separately
    because the finite bath only approximates the exponential density.
    """

    mode: str
    d_a: int
    d_e: int
    n_samples: int
    target: np.ndarray
    distances: np.ndarray
    mean_distance: float
    max_distance: float
    purities: np.ndarray
    mean_purity: float
    purity_stderr: float
    lubkin_purity: float
    constrained_rank: int
    bath_dominates: bool
    partition_function: float | None = None
    canonical_target: np.ndarray | None = None
    canonical_mean_distance: float | None = None


def run_typicality(cfg: TypicalityConfig) -> TypicalityReport:
    """Sample reduced states and measure their spread around the target.

    Nothing is asserted here: concentration is a statistical statement,
    so the report carries means, extremes, and standard errors and the
    caller decides what counts as close.  The Lubkin average purity
    (d_a + d_e)/(d_a d_e + 1) is included for the unconstrained mode.
    """
    total = cfg.d_a * cfg.d_e
    dims = DimSignature((cfg.d_a, cfg.d_e))
    mode = "haar"
    basis = None
    target = np.eye(cfg.d_a) / cfg.d_a
    rank = total
    z_value = None
    canonical = None

    if cfg.projector is not None:
        mode = "projected"
        vals, vecs = np.linalg.eigh(cfg.projector)
        keep = vals > 0.5
        basis = vecs[:, keep]
        rank = int(basis.shape[1])
        target = (
            cfg.projector.reshape(cfg.d_a, cfg.d_e, cfg.d_a, cfg.d_e)
            .trace(axis1=1, axis2=3)
            / rank
        )
    elif cfg.beta is not None:
        mode = "canonical"
        levels, members, _, _ = _shell_levels(cfg)
        _, frame = np.linalg.eigh(cfg.h_a)
        counts = np.array([m.size for m in members])
        rank = int(counts.sum())
        columns = []
        for a, ks in enumerate(members):
            for k in ks:
                columns.append(np.kron(frame[:, a], np.eye(cfg.d_e)[:, k]))
        basis = np.stack(columns, axis=1)
        target = (frame * (counts / rank)) @ frame.conj().T
        weights = np.exp(-float(cfg.beta) * levels)
        z_value = float(weights.sum())
        canonical = (frame * (weights / z_value)) @ frame.conj().T

    distances = np.empty(cfg.n_samples)
    canonical_distances = np.empty(cfg.n_samples) if canonical is not None else None
    purities = np.empty(cfg.n_samples)
    for k in range(cfg.n_samples):
        raw = haar_random_state(rank, cfg.seed + k).amplitudes
        amps = raw if basis is None else basis @ raw
        rho = StateVector(amps, dims).reduced((0,)).matrix
        distances[k] = _trace_distance(rho, target)
        if canonical_distances is not None:
            canonical_distances[k] = _trace_distance(rho, canonical)
        purities[k] = float(np.trace(rho @ rho).real)

    spread = float(np.std(purities, ddof=1)) if cfg.n_samples > 1 else 0.0
    return TypicalityReport(
        mode=mode,
        d_a=cfg.d_a,
        d_e=cfg.d_e,
        n_samples=cfg.n_samples,
        target=target,
        distances=distances,
        mean_distance=float(distances.mean()),
        max_distance=float(distances.max()),
        purities=purities,
        mean_purity=float(purities.mean()),
        purity_stderr=spread / math.sqrt(cfg.n_samples),
        lubkin_purity=(cfg.d_a + cfg.d_e) / (cfg.d_a * cfg.d_e + 1.0),
        constrained_rank=rank,
        bath_dominates=cfg.d_e >= cfg.d_a,
        partition_function=z_value,
        canonical_target=canonical,
        canonical_mean_distance=(
            float(canonical_distances.mean()) if canonical_distances is not None else None
        ),
    )
