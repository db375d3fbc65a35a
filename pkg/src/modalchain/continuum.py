"""Continuum-rate comparator and the avoided-crossing flip experiment.

The rate process here is the deliberately flawed comparator, kept in its
own namespace: occupation currents are turned into continuous-time jump
rates and integrated, which looks innocent until an avoided eigenvalue
crossing, where the rate process transfers trajectories between branches
while the coarse-grained jump process keeps every label on its branch.
``macroflip_compare`` runs both sides of that disagreement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from .chain import compose, flow_exact, flow_perturbative, transition_matrix
from .ontic import NULL_CUTOFF, OnticDecomposition, match_labels, ontic_decompose
from .qcore import DimSignature, Propagator, StateVector

#: largest admissible per-step escape probability for the integrator
MAX_STEP_LOAD = 0.1

#: regime bounds for the crossover comparison: the coarse step must sit
#: well inside (crossover width) << eta << (occupation drift time)
REGIME_LOWER = 1e3
REGIME_UPPER = 1e-2
DISTINCTNESS_CEILING = 0.1


@dataclass(frozen=True)
class CrossoverModel:
    """Two occupations drifting through an avoided crossing.

    The reduced block is ((p0 + a1 t, p0 delta), (p0 delta, p0 + a2 t));
    the off-diagonal seam ``p0 * delta`` keeps the eigenvalues apart, and
    ``a = (a1 - a2)/2`` sets how fast they approach.  Occupation drift in
    and out of the pair is reservoir exchange, not inter-label flow.
    """

    p0: float
    a1: float
    a2: float
    delta: float

    def __post_init__(self):
        if not 0.0 < self.p0 < 1.0:
            raise ValueError(f"p0 must be in (0, 1), got {self.p0}")
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must be in (0, 1), got {self.delta}")

    @property
    def a(self) -> float:
        return (self.a1 - self.a2) / 2.0

    def block(self, t: float) -> np.ndarray:
        seam = self.p0 * self.delta
        return np.array(
            [[self.p0 + self.a1 * t, seam], [seam, self.p0 + self.a2 * t]]
        )


@dataclass(frozen=True, eq=False)
class RateMatrix:
    """Antisymmetric occupation flux plus the jump rates built from it."""

    flux: np.ndarray
    rates: np.ndarray

    def __post_init__(self):
        flux = np.array(self.flux, dtype=float, copy=True)
        rates = np.array(self.rates, dtype=float, copy=True)
        if flux.ndim != 2 or flux.shape[0] != flux.shape[1]:
            raise ValueError(f"flux must be square, got {flux.shape}")
        if rates.shape != flux.shape:
            raise ValueError("flux and rates shapes differ")
        if np.any(flux + flux.T != 0.0):
            raise ValueError("flux must be exactly antisymmetric")
        if rates.min() < 0.0:
            raise ValueError("rates must be nonnegative")
        if np.any(np.diag(rates) != 0.0):
            raise ValueError("rates must have a zero diagonal")
        flux.flags.writeable = False
        rates.flags.writeable = False
        object.__setattr__(self, "flux", flux)
        object.__setattr__(self, "rates", rates)

    @property
    def size(self) -> int:
        return self.flux.shape[0]


def j_matrix(dec: OnticDecomposition, h_int: np.ndarray) -> RateMatrix:
    """Instantaneous occupation flux between branch labels.

    Entry (i, j) is (2/hbar) sqrt(p_i p_j) Im <i| H_int |j> on the product
    states; the row sums reproduce the occupation derivatives dp_i/dt.
    The result carries no rates yet; see ``bell_rates``.
    """
    # the first-order step flow is (eta/hbar) times the same kernel, so
    # evaluating it at eta = 2 gives the flux directly
    flux = flow_perturbative(dec, h_int, 2.0)
    return RateMatrix(flux=flux, rates=np.zeros_like(flux))


def bell_rates(flow: RateMatrix, p: np.ndarray) -> RateMatrix:
    """Jump rates T_ij = max(flux_ij, 0)/p_j for the rate process.

    A label with numerically null occupation gets a zero column: nothing
    is there to jump away.
    """
    p = np.asarray(p, dtype=float).reshape(-1)
    if p.size != flow.size:
        raise ValueError("occupation length does not match flux")
    if p.min() < -1e-12:
        raise ValueError(f"negative occupation {p.min():.3e}")
    rates = np.clip(flow.flux, 0.0, None)
    np.fill_diagonal(rates, 0.0)
    live = p > NULL_CUTOFF
    out = np.zeros_like(rates)
    out[:, live] = rates[:, live] / p[live]
    return RateMatrix(flux=flow.flux, rates=out)


@dataclass(frozen=True, eq=False)
class MasterSeries:
    """Occupation time series from the rate-process master equation."""

    times: np.ndarray
    values: np.ndarray

    @property
    def final(self) -> np.ndarray:
        return self.values[-1]


RatesProvider = Union[RateMatrix, Callable[[float], RateMatrix]]


def integrate_master(
    rates: RatesProvider, p_start, t_span: tuple[float, float], dt: float
) -> MasterSeries:
    """Integrate dp_i/dt = sum_j (T_ij p_j - T_ji p_i) with fixed-step RK4.

    ``rates`` is either a constant RateMatrix or a callable t -> RateMatrix.
    The step must resolve the fastest escape rate (dt * rate <= 0.1); a
    violation raises with the step size that would have worked.  The
    total occupation is conserved by the equation, so the series sum
    stays put to integrator precision.
    """
    provider = rates if callable(rates) else (lambda _t: rates)
    p = np.asarray(p_start, dtype=float).reshape(-1).copy()
    if p.min() < -1e-12:
        raise ValueError(f"negative starting occupation {p.min():.3e}")
    t0, t1 = float(t_span[0]), float(t_span[1])
    if not t1 > t0:
        raise ValueError(f"empty time span ({t0}, {t1})")
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")

    def derivative(t: float, q: np.ndarray) -> np.ndarray:
        rm = provider(t)
        if rm.size != q.size:
            raise ValueError("rate matrix size does not match occupations")
        t_mat = rm.rates
        escape = t_mat.sum(axis=0)
        top = escape.max() if escape.size else 0.0
        if top * dt > MAX_STEP_LOAD:
            raise ValueError(
                f"dt = {dt:.3e} too coarse for escape rate {top:.3e}; "
                f"use dt <= {MAX_STEP_LOAD / top:.3e}"
            )
        return t_mat @ q - escape * q

    times = [t0]
    values = [p.copy()]
    t = t0
    while t < t1 - 1e-12 * max(1.0, abs(t1)):
        h = min(dt, t1 - t)
        k1 = derivative(t, p)
        k2 = derivative(t + h / 2, p + (h / 2) * k1)
        k3 = derivative(t + h / 2, p + (h / 2) * k2)
        k4 = derivative(t + h, p + h * k3)
        p = p + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
        t = t + h
        times.append(t)
        values.append(p.copy())
    return MasterSeries(times=np.array(times), values=np.array(values))


def crossover_eigensystem(
    model: CrossoverModel, t: float
) -> tuple[float, float, float]:
    """Closed-form eigenvalues and mixing angle of the crossover block.

    Returns (p_plus, p_minus, theta) with eigenvectors
    (sin theta, cos theta) for p_plus and (cos theta, -sin theta) for
    p_minus; theta runs from 0 to pi/2 as t sweeps the crossing.
    """
    seam = model.p0 * model.delta
    drift = (model.a1 + model.a2) / 2.0 * t
    split = math.hypot(model.a * t, seam)
    theta = math.atan2(model.a * t + split, seam)
    return model.p0 + drift + split, model.p0 + drift - split, theta


def crossover_vectors(theta: float) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvector pair of the crossover block at mixing angle theta."""
    s, c = math.sin(theta), math.cos(theta)
    return np.array([s, c]), np.array([c, -s])


def crossover_state(model: CrossoverModel, t: float) -> StateVector:
    """Purification of the crossover block as an explicit 2x2 pure state.

    The Schmidt pair is the instantaneous eigenbasis with co-rotating
    mirrors and renormalized occupations, so decomposing this state
    reproduces the block's eigensystem exactly.
    """
    p_plus, p_minus, theta = crossover_eigensystem(model, t)
    if p_minus < 0.0:
        raise ValueError(f"block occupation {p_minus:.3e} negative at t={t}")
    plus, minus = crossover_vectors(theta)
    total = p_plus + p_minus
    amps = math.sqrt(p_plus / total) * np.kron(plus, plus) + math.sqrt(
        p_minus / total
    ) * np.kron(minus, minus)
    return StateVector(amps.astype(complex), DimSignature((2, 2)))


def _phi_content(vec: np.ndarray) -> int:
    """Which macro branch (basis axis) a label's vector mostly occupies."""
    return 0 if abs(vec[0]) ** 2 > 0.5 else 1


@dataclass(frozen=True, eq=False)
class MacroflipReport:
    """Both sides of the crossover disagreement, plus the regime data."""

    model: CrossoverModel
    eta: float
    t_span: tuple[float, float]
    coarse_cross_probability: float
    content_start: tuple[int, ...]
    content_end: tuple[int, ...]
    content_preserved: bool
    min_label_overlap: float
    continuum_flip: float
    narrow_span: tuple[float, float]
    continuum_flip_narrow: float
    flip_ratio: float


def _crossover_rates(model: CrossoverModel) -> Callable[[float], RateMatrix]:
    """Time-dependent rate provider in the instantaneous eigenbasis.

    The inter-label flux is the eigenvalue splitting derivative
    d/dt sqrt((a t)^2 + (p0 delta)^2); the common drift is reservoir
    exchange and never appears as a rate.
    """
    seam = model.p0 * model.delta
    a = model.a

    def provider(t: float) -> RateMatrix:
        split = math.hypot(a * t, seam)
        j = a * a * t / split
        flux = np.array([[0.0, j], [-j, 0.0]])
        p_plus, p_minus, _ = crossover_eigensystem(model, t)
        return bell_rates(RateMatrix(flux, np.zeros((2, 2))), [p_plus, p_minus])

    return provider


def _continuum_flip(
    model: CrossoverModel, span: tuple[float, float]
) -> float:
    """P(trajectory still rides the + eigenvector at the end of span)."""
    provider = _crossover_rates(model)
    probe = np.linspace(span[0], span[1], 4097)
    top = max(provider(t).rates.sum(axis=0).max() for t in probe)
    dt = (0.99 * MAX_STEP_LOAD / top) if top > 0 else (span[1] - span[0]) / 64
    dt = min(dt, (span[1] - span[0]) / 64)
    series = integrate_master(provider, [1.0, 0.0], span, dt)
    return float(series.final[0])


def macroflip_compare(
    model: CrossoverModel,
    eta: float,
    t_span: Union[tuple[float, float], None] = None,
) -> MacroflipReport:
    """Drive both processes through the crossing and compare flips.

    Coarse branch: real decomposition/matching steps at spacing ``eta``
    on the purified block with an identity propagator (the occupation
    drift is external), reporting the composed cross-label probability
    and whether each label kept its macro content.  Continuum branch:
    the rate process integrated through the crossing, reporting the
    probability that a trajectory follows the rotating eigenvector and
    so flips its macro content.
    """
    a = abs(model.a)
    if a == 0.0:
        raise ValueError("a1 = a2 never crosses")
    tau = model.p0 / a
    tau_delta = model.p0 * model.delta / a
    if model.delta >= DISTINCTNESS_CEILING:
        raise ValueError(
            f"delta = {model.delta} leaves the branches distinguishable; "
            f"need delta < {DISTINCTNESS_CEILING}"
        )
    if not REGIME_LOWER * tau_delta <= eta <= REGIME_UPPER * tau:
        raise ValueError(
            f"eta = {eta:.3e} outside the resolvable window "
            f"[{REGIME_LOWER * tau_delta:.3e}, {REGIME_UPPER * tau:.3e}]"
        )
    if t_span is None:
        # put the crossing mid-step: a grid point inside the crossover
        # window samples the maximally mixed eigenvectors, where label
        # matching is genuinely ambiguous (overlap exactly 1/2)
        half = 0.95 * tau + 0.5 * eta
        t_span = (-half, half)
    t0, t1 = float(t_span[0]), float(t_span[1])
    if not t0 < 0.0 < t1:
        raise ValueError(f"span ({t0}, {t1}) does not bracket the crossing")

    # coarse branch: the same machinery the real experiments use
    count = int(round((t1 - t0) / eta))
    unit = Propagator(np.eye(4, dtype=complex), float(eta))
    prev = ontic_decompose(crossover_state(model, t0), cut=(0,), time=t0)
    content_start = tuple(
        _phi_content(prev.ontic[k].amplitudes) for k in range(2)
    )
    steps = []
    worst_overlap = 1.0
    for k in range(count):
        t_next = t0 + (k + 1) * eta
        raw = ontic_decompose(
            crossover_state(model, t_next), cut=(0,), time=t_next
        )
        matched, report = match_labels(prev, raw)
        worst_overlap = min(worst_overlap, report.min_overlap)
        flow = flow_exact(prev, matched, unit)
        steps.append(
            transition_matrix(flow, prev.probs, eta, time=t0 + k * eta)
        )
        prev = matched
    composed = compose(steps)
    off = composed.copy()
    np.fill_diagonal(off, 0.0)
    coarse_cross = float(off.max())
    content_end = tuple(_phi_content(prev.ontic[k].amplitudes) for k in range(2))

    # continuum branch: wide window through the crossing, plus the
    # narrow window around it (the measured flip timescale)
    flip = _continuum_flip(model, (t0, t1))
    half_narrow = math.sqrt(model.delta) * tau
    narrow = (-half_narrow, half_narrow)
    flip_narrow = _continuum_flip(model, narrow)
    ratio = flip / coarse_cross if coarse_cross > 0.0 else math.inf
    return MacroflipReport(
        model=model,
        eta=float(eta),
        t_span=(t0, t1),
        coarse_cross_probability=coarse_cross,
        content_start=content_start,
        content_end=content_end,
        content_preserved=content_start == content_end,
        min_label_overlap=float(worst_overlap),
        continuum_flip=flip,
        narrow_span=narrow,
        continuum_flip_narrow=flip_narrow,
        flip_ratio=float(ratio),
    )
