"""Detector description: nonlinear response, binomial loss, POVM assembly.

A detector setting is described by a linear efficiency ``eta`` followed by a
nonlinear element that clicks with probability ``p[k]`` when exactly ``k``
photons are absorbed (``k = 0..4``; ``p[k] = 1`` for ``k > 4``). Only the
click outcome is stored; the no-click element is ``1 - Pi``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import gammainc, gammaln, xlogy

from .errors import (
    DimensionError,
    DomainError,
    ExtrapolationError,
    TruncationError,
    ValidationError,
)
from .states import FockDistribution

N_NONLINEAR = 5  # p_0 .. p_4


@dataclass(frozen=True)
class DetectorSetting:
    """One value of the tuning parameter (bias current in microamperes)."""

    bias_current: float
    index: int = 0

    def __post_init__(self):
        if not (np.isfinite(self.bias_current) and self.bias_current > 0):
            raise ValidationError(f"bias current must be > 0, got {self.bias_current}")


@dataclass(frozen=True, eq=False)
class NonlinearResponse:
    eta: float
    p: np.ndarray

    def __post_init__(self):
        p = np.array(self.p, dtype=float)
        if p.shape != (N_NONLINEAR,):
            raise ValidationError(f"p must hold {N_NONLINEAR} click probabilities, got shape {p.shape}")
        if not (0 < self.eta <= 1):
            raise ValidationError(f"eta must lie in (0, 1], got {self.eta}")
        if np.any(p < 0) or np.any(p > 1) or not np.all(np.isfinite(p)):
            raise ValidationError(f"p entries must lie in [0, 1], got {p}")
        p.flags.writeable = False
        object.__setattr__(self, "eta", float(self.eta))
        object.__setattr__(self, "p", p)

    def __eq__(self, other):
        if not isinstance(other, NonlinearResponse):
            return NotImplemented
        return self.eta == other.eta and np.array_equal(self.p, other.p)

    __hash__ = None

    def params(self) -> np.ndarray:
        """``(eta, p_0, ..., p_4)`` as one vector."""
        return np.r_[self.eta, self.p]


@dataclass(frozen=True, eq=False)
class Povm:
    """Click probabilities ``elements[nu, n]`` per setting and incident photon number."""

    settings: tuple
    elements: np.ndarray

    def __post_init__(self):
        el = np.array(self.elements, dtype=float)
        settings = tuple(self.settings)
        if el.ndim != 2:
            raise ValidationError("POVM elements must be a 2-d matrix")
        if el.shape[0] != len(settings):
            raise ValidationError(
                f"{el.shape[0]} POVM rows but {len(settings)} settings"
            )
        if el.size and (np.any(el < 0) or np.any(el > 1) or not np.all(np.isfinite(el))):
            raise ValidationError("POVM elements must lie in [0, 1]")
        el.flags.writeable = False
        object.__setattr__(self, "settings", settings)
        object.__setattr__(self, "elements", el)

    @property
    def n_mr(self) -> int:
        return self.elements.shape[1] - 1

    @property
    def n_settings(self) -> int:
        return self.elements.shape[0]

    @property
    def currents(self) -> np.ndarray:
        return np.array([s.bias_current for s in self.settings])

    def predict(self, d: FockDistribution) -> np.ndarray:
        """Click probability of ``d`` at every setting."""
        if d.n_mr != self.n_mr:
            raise DimensionError(f"state has n_mr={d.n_mr}, POVM has n_mr={self.n_mr}")
        return np.clip(self.elements @ d.probs, 0.0, 1.0)

    def subset(self, rows) -> "Povm":
        rows = list(rows)
        return Povm(tuple(self.settings[i] for i in rows), self.elements[rows])


def bernoulli_matrix(eta: float, n_mr: int) -> np.ndarray:
    """Binomial loss transform ``L[k, j] = C(k, j) eta**j (1 - eta)**(k - j)``.

    Row ``k`` is the distribution of surviving photons when ``k`` enter a
    channel of transmission ``eta``. Coefficients come from log-gamma, so
    ``n_mr`` of a few hundred is fine.
    """
    if not (0 <= eta <= 1):
        raise DomainError(f"eta must lie in [0, 1], got {eta}")
    if n_mr < 0:
        raise DomainError(f"n_mr must be >= 0, got {n_mr}")
    k = np.arange(n_mr + 1)[:, None]
    j = np.arange(n_mr + 1)[None, :]
    lower = j <= k
    kj = np.where(lower, k - j, 0)
    logc = gammaln(k + 1) - gammaln(j + 1) - gammaln(kj + 1)
    logL = logc + xlogy(j, eta) + xlogy(kj, 1.0 - eta)
    return np.where(lower, np.exp(logL), 0.0)


def _padded_response(resp: NonlinearResponse, n_mr: int) -> np.ndarray:
    if n_mr < N_NONLINEAR - 1:
        raise TruncationError(
            f"n_mr={n_mr} cannot hold the {N_NONLINEAR} nonlinear click probabilities"
        )
    v = np.ones(n_mr + 1)
    v[:N_NONLINEAR] = resp.p
    return v


def assemble_povm_row(resp: NonlinearResponse, n_mr: int) -> np.ndarray:
    """Click probability for each incident Fock state ``n = 0..n_mr``.

    The nonlinear vector ``(p_0..p_4, 1, 1, ...)`` is pushed through the
    binomial loss of efficiency ``resp.eta``.
    """
    v = _padded_response(resp, n_mr)
    return np.clip(bernoulli_matrix(resp.eta, n_mr) @ v, 0.0, 1.0)


def povm_from_responses(settings: Sequence[DetectorSetting], responses, n_mr: int) -> Povm:
    rows = [assemble_povm_row(r, n_mr) for r in responses]
    el = np.vstack(rows) if rows else np.zeros((0, n_mr + 1))
    return Povm(tuple(settings), el)


def poisson_weights(mu, kmax: int = N_NONLINEAR - 1) -> np.ndarray:
    """Poisson masses ``P(k; mu)`` for ``k = 0..kmax``; shape ``mu.shape + (kmax+1,)``."""
    mu = np.asarray(mu, dtype=float)[..., None]
    k = np.arange(kmax + 1)
    return np.exp(xlogy(k, mu) - mu - gammaln(k + 1))


def click_probability_coherent(resp: NonlinearResponse, mean):
    """Click probability for coherent light of mean photon number ``mean``.

    With ``mu = eta * mean`` this is ``1 - exp(-mu) sum_{k<=4} (1 - p_k) mu^k / k!``.
    It is evaluated as ``sum_k p_k P(k; mu) + P(N >= 5; mu)`` with the tail from
    the regularized incomplete gamma function, which avoids the cancellation
    in ``1 - ...`` at small ``mu`` and stays finite for ``mu`` up to 1e5 and
    beyond.
    """
    m = np.asarray(mean, dtype=float)
    if np.any(m < 0) or not np.all(np.isfinite(m)):
        raise DomainError("mean photon number must be finite and >= 0")
    mu = resp.eta * m
    r = poisson_weights(mu) @ resp.p + gammainc(N_NONLINEAR, mu)
    r = np.clip(r, 0.0, 1.0)
    return float(r) if r.ndim == 0 else r


def click_probability_state(povm_row, d: FockDistribution) -> float:
    """``Tr(rho Pi)`` for a diagonal state and one POVM row."""
    row = np.asarray(povm_row, dtype=float)
    if row.shape != d.probs.shape:
        raise DimensionError(f"POVM row has length {row.size}, state has {d.probs.size}")
    return float(np.clip(row @ d.probs, 0.0, 1.0))


def regrid_povm(povm: Povm, currents) -> Povm:
    """Linearly interpolate POVM rows onto new bias currents (no extrapolation)."""
    src = povm.currents
    order = np.argsort(src)
    src = src[order]
    el = povm.elements[order]
    currents = np.asarray(currents, dtype=float)
    tol = 1e-9 * max(1.0, abs(src[-1]))
    if currents.min() < src[0] - tol or currents.max() > src[-1] + tol:
        raise ExtrapolationError(
            f"currents must lie in [{src[0]}, {src[-1]}] uA; got [{currents.min()}, {currents.max()}]"
        )
    if src.size == 1:
        out = np.repeat(el, currents.size, axis=0)
    else:
        out = np.column_stack([np.interp(currents, src, el[:, n]) for n in range(el.shape[1])])
    settings = tuple(DetectorSetting(float(c), i) for i, c in enumerate(currents))
    return Povm(settings, out)
