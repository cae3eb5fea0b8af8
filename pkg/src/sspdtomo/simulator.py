"""Synthetic detector, noisy count-rate generation and fidelity sweeps."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit

from .errors import DomainError, ValidationError
from .povm import (
    DetectorSetting,
    NonlinearResponse,
    Povm,
    click_probability_coherent,
    povm_from_responses,
)
from .reconstruction import ReconstructionConfig, reconstruct
from .states import DEFAULT_N_MR, closest_reference_state, family_distribution, fidelity
from .tomography import CountRateSurface, fit_all

log = logging.getLogger(__name__)

# Tomography grid used throughout: 165 currents over 5..13.25 uA and 20
# log-spaced probe powers over 0.05..4e4 photons per pulse.
DEFAULT_CURRENTS = np.linspace(5.0, 13.25, 165)
DEFAULT_POWERS = np.logspace(np.log10(0.05), np.log10(4e4), 20)
PULSE_RATE_HZ = 20e6


@dataclass(frozen=True)
class SyntheticDetector:
    """Sigmoid-threshold model of a current-biased nanowire detector.

    ``threshold_currents[k-1]`` is the bias at which the ``k``-photon click
    probability reaches one half. With the defaults the 5..13.25 uA window
    runs from three-photon response at the bottom through two-photon
    response (midpoint 8 uA) to one-photon response near the top, with a
    system efficiency of 2.8% at 13.3 uA.
    """

    critical_current: float = 15.0
    threshold_currents: tuple = (14.0, 8.0, 4.0, 2.5)
    transition_width: float = 0.8
    eta0: float = 0.095
    dark0: float = 1e-3

    def __post_init__(self):
        th = tuple(float(t) for t in self.threshold_currents)
        if len(th) != 4:
            raise ValidationError("threshold_currents needs one value per k = 1..4")
        chain = (self.critical_current,) + th
        if any(b >= a for a, b in zip(chain, chain[1:])) or th[-1] <= 0:
            raise ValidationError("need 0 < I_4 < I_3 < I_2 < I_1 < critical current")
        if self.transition_width <= 0:
            raise ValidationError("transition_width must be > 0")
        if not (0 < self.eta0 <= 1):
            raise ValidationError("eta0 must lie in (0, 1]")
        if self.dark0 < 0:
            raise ValidationError("dark0 must be >= 0")
        object.__setattr__(self, "threshold_currents", th)

    def system_efficiency(self, bias_current: float) -> float:
        """Single-photon click probability at ``bias_current``."""
        r = synthetic_response(self, bias_current)
        return (1 - r.eta) * r.p[0] + r.eta * r.p[1]

    def povm(self, currents, n_mr: int = DEFAULT_N_MR) -> Povm:
        currents = np.asarray(currents, dtype=float)
        settings = tuple(DetectorSetting(float(c), i) for i, c in enumerate(currents))
        return povm_from_responses(settings, [synthetic_response(self, c) for c in currents], n_mr)


@dataclass(frozen=True)
class NoiseModel:
    """Measurement noise on click probabilities.

    ``mode="uniform"`` multiplies each rate by ``1 + a*u`` with ``u`` uniform
    on ``[-1, 1]``. ``mode="binomial"`` instead samples click counts over
    ``pulses`` trials.
    """

    relative_amplitude: float = 0.0
    seed: int = 0
    mode: str = "uniform"
    pulses: int = 20_000_000

    def __post_init__(self):
        if not (0 <= self.relative_amplitude < 1):
            raise ValidationError("relative_amplitude must lie in [0, 1)")
        if self.mode not in ("uniform", "binomial"):
            raise ValidationError(f"unknown noise mode {self.mode!r}")
        if self.pulses < 1:
            raise ValidationError("pulses must be positive")

    def with_seed(self, seed: int) -> "NoiseModel":
        return NoiseModel(self.relative_amplitude, int(seed), self.mode, self.pulses)


def synthetic_response(det: SyntheticDetector, bias_current: float) -> NonlinearResponse:
    if not (0 < bias_current < det.critical_current):
        raise DomainError(
            f"bias current {bias_current} uA outside (0, {det.critical_current}) uA"
        )
    w = det.transition_width
    p0 = min(det.dark0 * np.exp((bias_current - det.critical_current) / w), 1.0)
    pk = [expit((bias_current - t) / w) for t in det.threshold_currents]
    p = np.maximum.accumulate(np.r_[p0, pk])
    return NonlinearResponse(det.eta0, p)


def apply_noise(rates, noise: NoiseModel, rng: np.random.Generator) -> np.ndarray:
    """Perturb exact click probabilities according to ``noise``."""
    rates = np.asarray(rates, dtype=float)
    if noise.mode == "binomial":
        return rng.binomial(noise.pulses, np.clip(rates, 0, 1)) / noise.pulses
    if noise.relative_amplitude == 0:
        return rates.copy()
    u = rng.uniform(-1.0, 1.0, size=rates.shape)
    return np.clip(rates * (1.0 + noise.relative_amplitude * u), 0.0, 1.0)


def simulate_surface(
    det: SyntheticDetector,
    currents: Sequence[float] = DEFAULT_CURRENTS,
    powers: Sequence[float] = DEFAULT_POWERS,
    noise: NoiseModel = NoiseModel(),
) -> CountRateSurface:
    """Coherent-probe click probabilities for every (current, power) cell."""
    currents = np.asarray(currents, dtype=float)
    powers = np.asarray(powers, dtype=float)
    exact = np.vstack(
        [click_probability_coherent(synthetic_response(det, c), powers) for c in currents]
    )
    rates = apply_noise(exact, noise, np.random.default_rng(noise.seed))
    settings = tuple(DetectorSetting(float(c), i) for i, c in enumerate(currents))
    return CountRateSurface(settings, powers, rates, noise.pulses)


def simulate_state_rates(povm: Povm, state, noise: NoiseModel = NoiseModel()) -> np.ndarray:
    """Click probabilities of ``state`` at every POVM setting, with noise."""
    return apply_noise(povm.predict(state), noise, np.random.default_rng(noise.seed))


@dataclass
class FidelityPoint:
    mean: float
    fidelity_mean: float
    fidelity_std: float
    fidelities: list = field(default_factory=list)
    failures: list = field(default_factory=list)


def fidelity_curve(
    det: SyntheticDetector,
    family: str,
    means: Sequence[float],
    repeats: int = 30,
    noise: NoiseModel = NoiseModel(0.02),
    cfg: ReconstructionConfig = ReconstructionConfig(),
    povm: Povm | None = None,
    refit: bool = False,
    currents: Sequence[float] = DEFAULT_CURRENTS,
    powers: Sequence[float] = DEFAULT_POWERS,
) -> list[FidelityPoint]:
    """Repeated simulate-reconstruct-score experiment for each mean photon number.

    Rates of the family state are generated from the detector's exact POVM
    with noise, then reconstructed with a POVM obtained by tomography. By
    default the tomography is done once on noiseless probe data (or
    ``povm`` is used as given); ``refit=True`` redoes it per repeat on
    probe data carrying the same noise model. Repeat ``r`` uses seed
    ``noise.seed + r``. A failed repeat is recorded and skipped.
    """
    if repeats < 1:
        raise DomainError("repeats must be >= 1")
    n_mr = cfg.n_mr
    truth = det.povm(currents, n_mr)
    if povm is None and not refit:
        povm = fit_all(simulate_surface(det, currents, powers), n_mr).povm
    points = []
    for mean in means:
        state = family_distribution(family, float(mean), n_mr)
        fids, failures = [], []
        for r in range(repeats):
            sub = noise.with_seed(noise.seed + r)
            try:
                rec_povm = povm
                if refit:
                    rec_povm = fit_all(simulate_surface(det, currents, powers, sub), n_mr).povm
                measured = simulate_state_rates(truth, state, sub)
                result = reconstruct(rec_povm, measured, cfg)
                ref = closest_reference_state(result.rho, family)
                fids.append(fidelity(result.rho, ref))
            except Exception as exc:
                log.warning("mean %g repeat %d failed: %s", mean, r, exc)
                failures.append((r, repr(exc)))
        f = np.array(fids)
        points.append(
            FidelityPoint(
                mean=float(mean),
                fidelity_mean=float(f.mean()) if f.size else float("nan"),
                fidelity_std=float(f.std(ddof=1)) if f.size > 1 else 0.0,
                fidelities=fids,
                failures=failures,
            )
        )
    return points
