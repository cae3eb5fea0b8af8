"""Fisher information and Cramer-Rao errors for photon-number reconstruction.

Every setting is treated as ``N_nu`` independent click/no-click trials, so
the information about the diagonal ``rho`` is

    F[a, b] = sum_nu N_nu Pi[nu, a] Pi[nu, b] / (p_nu (1 - p_nu))

with ``p_nu = sum_n Pi[nu, n] rho_n``. Standard errors come from the
pseudo-inverse of ``F``; directions the measurement cannot see are dropped
rather than inverted, and ``condition_flag`` reports that this happened.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DimensionError, DomainError, ValidationError
from .povm import DetectorSetting, Povm
from .states import FockDistribution

P_CLAMP = 1e-12
PINV_RTOL = 1e-10
RHO_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class MeasurementBudget:
    total_shots: int
    shots_per_setting: np.ndarray

    def __post_init__(self):
        shots = np.array(self.shots_per_setting, dtype=np.int64)
        if np.any(shots < 0):
            raise ValidationError("shot counts must be non-negative")
        if int(shots.sum()) != int(self.total_shots):
            raise ValidationError(
                f"shots per setting sum to {int(shots.sum())}, not {self.total_shots}"
            )
        shots.flags.writeable = False
        object.__setattr__(self, "total_shots", int(self.total_shots))
        object.__setattr__(self, "shots_per_setting", shots)

    @classmethod
    def uniform(cls, total_shots: int, n_settings: int) -> "MeasurementBudget":
        """Split ``total_shots`` as evenly as integers allow; leftovers go to the first settings."""
        if n_settings < 1:
            raise DomainError("need at least one setting")
        total_shots = int(total_shots)
        base, extra = divmod(total_shots, n_settings)
        shots = np.full(n_settings, base, dtype=np.int64)
        shots[:extra] += 1
        return cls(total_shots, shots)

    @property
    def n_settings(self) -> int:
        return self.shots_per_setting.size

    def for_settings(self, n_settings: int) -> "MeasurementBudget":
        if n_settings == self.n_settings:
            return self
        return MeasurementBudget.uniform(self.total_shots, n_settings)

    def scaled(self, factor: int) -> "MeasurementBudget":
        return MeasurementBudget(self.total_shots * factor, self.shots_per_setting * factor)


@dataclass(frozen=True, eq=False)
class CrbReport:
    sigma: np.ndarray
    relative: np.ndarray
    condition_flag: bool
    rho: np.ndarray = None
    rank: int = 0
    constrained: bool = False

    def __post_init__(self):
        if np.any(np.asarray(self.sigma) < 0):
            raise ValidationError("standard errors must be non-negative")


def fisher_matrix(povm: Povm, rho: FockDistribution, budget: MeasurementBudget) -> np.ndarray:
    if rho.n_mr != povm.n_mr:
        raise DimensionError(f"state has n_mr={rho.n_mr}, POVM has n_mr={povm.n_mr}")
    budget = budget.for_settings(povm.n_settings)
    Pi = povm.elements
    p = np.clip(Pi @ rho.probs, P_CLAMP, 1 - P_CLAMP)
    w = budget.shots_per_setting / (p * (1 - p))
    F = (Pi * w[:, None]).T @ Pi
    return 0.5 * (F + F.T)


def _simplex_basis(n: int) -> np.ndarray:
    """Orthonormal basis of ``{x : sum(x) = 0}`` in ``R^n``, shape ``(n, n-1)``."""
    q, _ = np.linalg.qr(np.eye(n) - 1.0 / n)
    return q[:, : n - 1]


def _pinv(F, rtol):
    U, s, Vt = np.linalg.svd(F, hermitian=True)
    if s.size == 0 or s[0] <= 0:
        return np.zeros_like(F), 0, True
    keep = s > rtol * s[0]
    cov = (Vt[keep].T / s[keep]) @ Vt[keep]
    return cov, int(keep.sum()), bool(not np.all(keep))


def crb_errors(fisher, rho: FockDistribution, constrained: bool = False, rtol: float = PINV_RTOL) -> CrbReport:
    """Cramer-Rao standard errors ``sqrt(diag(F^+))`` and their relative size.

    ``constrained=True`` restricts ``F`` to the tangent space of the
    probability simplex before inverting, i.e. accounts for the
    normalization of ``rho``. Relative errors are ``inf`` where
    ``rho_n`` is zero.
    """
    F = np.asarray(fisher, dtype=float)
    n = rho.probs.size
    if F.shape != (n, n):
        raise DimensionError(f"Fisher matrix has shape {F.shape}, expected {(n, n)}")
    if constrained and n > 1:
        B = _simplex_basis(n)
        cov_t, rank, dropped = _pinv(B.T @ F @ B, rtol)
        cov = B @ cov_t @ B.T
    else:
        cov, rank, dropped = _pinv(F, rtol)
    sigma = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    with np.errstate(divide="ignore", invalid="ignore"):
        relative = np.where(rho.probs > 0, sigma / rho.probs, np.inf)
    return CrbReport(sigma, relative, dropped, rho.probs.copy(), rank, constrained)


def linear_apd_povm(eta: float, transmissions: Sequence[float], n_mr: int) -> Povm:
    """On/off detector behind a variable attenuator: ``Pi[nu, n] = 1 - (1 - eta t_nu)^n``.

    Setting currents are placeholders (``1..len(transmissions)``); the
    tuning parameter here is the transmission.
    """
    if not (0 < eta <= 1):
        raise DomainError(f"eta must lie in (0, 1], got {eta}")
    t = np.asarray(transmissions, dtype=float)
    if np.any(t < 0) or np.any(t > 1):
        raise DomainError("transmissions must lie in [0, 1]")
    n = np.arange(n_mr + 1)
    x = eta * t[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        el = -np.expm1(n[None, :] * np.log1p(-x))
    # full transmission of an ideal detector: 0**0 = 1 is lost in the log form
    el = np.where(x >= 1, (n > 0).astype(float)[None, :], el)
    settings = tuple(DetectorSetting(float(i + 1), i) for i in range(t.size))
    return Povm(settings, el)


def default_transmissions(n_settings: int) -> np.ndarray:
    return np.linspace(1.0 / n_settings, 1.0, n_settings)


def compare_detectors(
    povm_a: Povm,
    povm_b: Povm,
    rho: FockDistribution,
    budget: MeasurementBudget,
    constrained: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """Ratio of relative CRB errors, detector ``a`` over detector ``b``.

    Returns ``(photon_numbers, ratios)`` restricted to ``rho_n > 1e-12``.
    Equal errors give a ratio of exactly 1, also when both are 0 (a
    direction neither detector sees) or both infinite.
    The budget is re-split uniformly when a POVM has a different number
    of settings than the budget.
    """
    if povm_a.n_mr != povm_b.n_mr:
        raise DimensionError("both POVMs must share n_mr")
    ra = crb_errors(fisher_matrix(povm_a, rho, budget), rho, constrained)
    rb = crb_errors(fisher_matrix(povm_b, rho, budget), rho, constrained)
    n = np.flatnonzero(rho.probs > RHO_FLOOR)
    a, b = ra.relative[n], rb.relative[n]
    with np.errstate(divide="ignore", invalid="ignore"):
        return n, np.where(a == b, 1.0, a / b)
