"""Photon-number distributions and their figures of merit.

Only diagonal density-matrix elements are represented. Every distribution is
truncated at ``n_mr`` and renormalized over ``0..n_mr``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, logsumexp, xlogy

from .errors import (
    DimensionError,
    DomainError,
    TruncationError,
    UndefinedStatisticError,
    ValidationError,
)

DEFAULT_N_MR = 30
FAMILIES = ("coherent", "thermal")

_SUM_TOL = 1e-9


def _frozen(a):
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class FockDistribution:
    """Photon-number probabilities ``probs[n]`` for ``n = 0..n_mr``."""

    probs: np.ndarray

    def __post_init__(self):
        p = _frozen(self.probs)
        if p.ndim != 1 or p.size == 0:
            raise ValidationError("probs must be a non-empty 1-d vector")
        if not np.all(np.isfinite(p)) or p.min() < -1e-15 or p.max() > 1 + 1e-12:
            raise ValidationError("every probability must lie in [0, 1]")
        if abs(p.sum() - 1.0) > _SUM_TOL:
            raise ValidationError(f"probabilities sum to {p.sum():.12g}, not 1")
        if p.min() < 0:
            p = _frozen(np.clip(p, 0.0, None))
        object.__setattr__(self, "probs", p)

    @classmethod
    def from_weights(cls, weights) -> "FockDistribution":
        """Normalize non-negative weights into a distribution."""
        w = np.asarray(weights, dtype=float)
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise DomainError("weights must be finite and non-negative")
        total = w.sum()
        if total <= 0:
            raise DomainError("weights sum to zero")
        return cls(np.clip(w / total, 0.0, 1.0))

    @classmethod
    def fock(cls, n: int, n_mr: int = DEFAULT_N_MR) -> "FockDistribution":
        if not 0 <= n <= n_mr:
            raise TruncationError(f"Fock state {n} does not fit under n_mr={n_mr}")
        p = np.zeros(n_mr + 1)
        p[n] = 1.0
        return cls(p)

    @property
    def n_mr(self) -> int:
        return self.probs.size - 1

    def __len__(self):
        return self.probs.size

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.probs, dtype=dtype)

    def __eq__(self, other):
        if not isinstance(other, FockDistribution):
            return NotImplemented
        return np.array_equal(self.probs, other.probs)

    __hash__ = None

    @property
    def mean(self) -> float:
        return mean_photon_number(self)


def _check(mean, n_mr):
    if not np.isfinite(mean) or mean < 0:
        raise DomainError(f"mean photon number must be >= 0, got {mean}")
    if int(n_mr) != n_mr or n_mr < 0:
        raise DomainError(f"n_mr must be a non-negative integer, got {n_mr}")


def _from_log_weights(logw) -> FockDistribution:
    logw = logw - logsumexp(logw)
    return FockDistribution(np.exp(logw))


def coherent_distribution(mean: float, n_mr: int = DEFAULT_N_MR) -> FockDistribution:
    """Poissonian photon statistics, renormalized over ``0..n_mr``.

    Weights are formed in log space, so means far beyond the truncation
    (e.g. 4e4 photons per pulse) push all mass onto ``n_mr`` instead of
    underflowing.
    """
    _check(mean, n_mr)
    n = np.arange(int(n_mr) + 1)
    if mean == 0:
        return FockDistribution.fock(0, int(n_mr))
    return _from_log_weights(xlogy(n, mean) - mean - gammaln(n + 1))


def thermal_distribution(mean: float, n_mr: int = DEFAULT_N_MR) -> FockDistribution:
    """Bose-Einstein statistics ``mean**n / (1 + mean)**(n + 1)``, renormalized."""
    _check(mean, n_mr)
    n = np.arange(int(n_mr) + 1)
    if mean == 0:
        return FockDistribution.fock(0, int(n_mr))
    return _from_log_weights(n * np.log(mean) - (n + 1) * np.log1p(mean))


def family_distribution(family: str, mean: float, n_mr: int = DEFAULT_N_MR) -> FockDistribution:
    if family == "coherent":
        return coherent_distribution(mean, n_mr)
    if family == "thermal":
        return thermal_distribution(mean, n_mr)
    raise DomainError(f"unknown state family {family!r}; expected one of {FAMILIES}")


def mean_photon_number(d: FockDistribution) -> float:
    p = d.probs
    return float(np.arange(p.size) @ p)


def g2_zero(d: FockDistribution) -> float:
    """Second-order coherence at zero delay, ``(<n^2> - <n>) / <n>^2``."""
    p = d.probs
    n = np.arange(p.size)
    m1 = float(n @ p)
    if m1 <= 0:
        raise UndefinedStatisticError("g2(0) is undefined for a zero-mean distribution")
    return float((n * (n - 1)) @ p) / m1**2


def fidelity(a: FockDistribution, b: FockDistribution) -> float:
    """Overlap ``sum_n sqrt(a_n b_n)`` of two photon-number distributions."""
    if a.n_mr != b.n_mr:
        raise DimensionError(f"truncations differ: n_mr={a.n_mr} vs n_mr={b.n_mr}")
    f = float(np.sqrt(a.probs * b.probs).sum())
    return min(f, 1.0)


def closest_reference_state(d: FockDistribution, family: str) -> FockDistribution:
    """Member of ``family`` with the same mean photon number and truncation as ``d``."""
    return family_distribution(family, mean_photon_number(d), d.n_mr)
