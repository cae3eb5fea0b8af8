"""Maximum-likelihood photon-number reconstruction by expectation maximization.

Each setting ``nu`` is a Bernoulli trial: click with probability
``p_nu = sum_n Pi[nu, n] rho_n``, observed click frequency ``R_nu``. With
``include_no_click`` on (the default) the iteration runs over the
click/no-click outcome pair of every setting:

    rho_n <- rho_n / S * sum_nu [Pi[nu,n] R_nu / p_nu + (1 - Pi[nu,n]) (1 - R_nu) / (1 - p_nu)]

which is a proper EM step for the log-likelihood
``sum_nu R_nu log p_nu + (1 - R_nu) log(1 - p_nu)`` and never decreases it.
With the flag off the click-only form
``rho_n <- rho_n * sum_nu (Pi[nu,n] / sum_l Pi[l,n]) R_nu / p_nu`` is used.
Both renormalize after every step.

Components that reach zero stay zero under a multiplicative update, which
is why iteration starts from the uniform distribution.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DimensionError, DomainError, SupportMismatchError, ValidationError
from .povm import Povm
from .states import DEFAULT_N_MR, FAMILIES, FockDistribution, closest_reference_state


@dataclass(frozen=True)
class ReconstructionConfig:
    iterations: int = 1_000_000
    early_stop_delta: float = 0.0
    n_mr: int = DEFAULT_N_MR
    include_no_click: bool = True
    trace_every: int = 1000

    def __post_init__(self):
        if self.iterations < 1:
            raise ValidationError("iterations must be >= 1")
        if self.trace_every < 1:
            raise ValidationError("trace_every must be >= 1")
        if self.early_stop_delta < 0:
            raise ValidationError("early_stop_delta must be >= 0")
        if self.n_mr < 0:
            raise ValidationError("n_mr must be >= 0")


@dataclass(frozen=True, eq=False)
class ReconstructionResult:
    rho: FockDistribution
    loglik_trace: np.ndarray
    iterations_run: int
    predicted: np.ndarray
    config: ReconstructionConfig = ReconstructionConfig()

    @property
    def trace_iterations(self) -> np.ndarray:
        """Iteration index of every entry in ``loglik_trace``."""
        every = self.config.trace_every
        idx = list(range(0, self.iterations_run, every))[: len(self.loglik_trace)]
        # an early stop on a sampling step records that step twice
        idx += [self.iterations_run] * (len(self.loglik_trace) - len(idx))
        return np.array(idx)


def _validate(povm: Povm, measured) -> np.ndarray:
    R = np.asarray(measured, dtype=float)
    if R.shape != (povm.n_settings,):
        raise DimensionError(
            f"{R.size} measured rates for a POVM with {povm.n_settings} settings"
        )
    if np.any(R < 0) or np.any(R > 1) or not np.all(np.isfinite(R)):
        raise DomainError("measured click probabilities must lie in [0, 1]")
    return R


def _run(povm, R, rho0, iterations, trace_every, delta, no_click):
    rho, trace, n_run, status, bad = kernels.em_run(
        povm.elements, R, rho0, int(iterations), int(trace_every), float(delta), bool(no_click)
    )
    if status:
        s = povm.settings[bad]
        raise SupportMismatchError(
            f"setting {bad} ({s.bias_current} uA): observed outcome has zero "
            f"probability under the current state"
        )
    return rho, trace, n_run


def em_step(rho: FockDistribution, povm: Povm, measured, include_no_click: bool = True) -> FockDistribution:
    """One EM update of ``rho`` against measured click probabilities."""
    R = _validate(povm, measured)
    if rho.n_mr != povm.n_mr:
        raise DimensionError(f"state has n_mr={rho.n_mr}, POVM has n_mr={povm.n_mr}")
    new, _, _ = _run(povm, R, rho.probs, 1, 1, 0.0, include_no_click)
    return FockDistribution.from_weights(new)


def reconstruct(povm: Povm, measured, cfg: ReconstructionConfig = ReconstructionConfig()) -> ReconstructionResult:
    """Iterate EM from the uniform distribution.

    The log-likelihood is recorded every ``cfg.trace_every`` iterations and
    once more at the end. Stops after ``cfg.iterations`` steps, or earlier
    when ``cfg.early_stop_delta > 0`` and one step gains less than that.
    """
    R = _validate(povm, measured)
    if cfg.n_mr != povm.n_mr:
        raise DimensionError(f"config n_mr={cfg.n_mr} but POVM has n_mr={povm.n_mr}")
    rho0 = np.full(povm.n_mr + 1, 1.0 / (povm.n_mr + 1))
    rho, trace, n_run = _run(
        povm, R, rho0, cfg.iterations, cfg.trace_every, cfg.early_stop_delta, cfg.include_no_click
    )
    rho = FockDistribution.from_weights(rho)
    return ReconstructionResult(rho, np.asarray(trace), int(n_run), povm.predict(rho), cfg)


def log_likelihood(povm: Povm, rho: FockDistribution, measured) -> float:
    R = _validate(povm, measured)
    return float(kernels._em_py._loglik(povm.predict(rho), R))


def chi_square(measured, predicted, relative_error: float) -> float:
    """Reduced chi-square under a constant relative error model.

    Settings with a zero measured rate carry no relative scale and are left
    out; the average is taken over the remaining ones.
    """
    m = np.asarray(measured, dtype=float)
    p = np.asarray(predicted, dtype=float)
    if m.shape != p.shape:
        raise DimensionError(f"measured has {m.size} entries, predicted has {p.size}")
    if relative_error <= 0:
        raise DomainError("relative_error must be > 0")
    keep = m != 0
    if not np.any(keep):
        raise DomainError("every measured rate is zero")
    z = (m[keep] - p[keep]) / (relative_error * m[keep])
    return float(z @ z / keep.sum())


@dataclass(frozen=True)
class FamilyVerdict:
    family: str  # "coherent", "thermal" or "undecided"
    chi2: dict
    result: ReconstructionResult


def classify_family(
    povm: Povm,
    measured,
    relative_error: float,
    cfg: ReconstructionConfig = ReconstructionConfig(),
    margin: float = 0.10,
) -> FamilyVerdict:
    """Decide whether rates look coherent or thermal.

    The state is reconstructed, the coherent and thermal states with its
    mean photon number are pushed through the POVM, and the family whose
    predicted rates give the lower chi-square wins. If the two chi-square
    values are within ``margin`` of each other (relative to the larger) the
    verdict is ``"undecided"``.
    """
    result = reconstruct(povm, measured, cfg)
    chi2 = {
        fam: chi_square(measured, povm.predict(closest_reference_state(result.rho, fam)), relative_error)
        for fam in FAMILIES
    }
    lo, hi = sorted(chi2.values())
    if hi - lo < margin * hi:
        family = "undecided"
    else:
        family = min(chi2, key=chi2.get)
    return FamilyVerdict(family, chi2, result)
