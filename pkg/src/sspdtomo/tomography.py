"""Detector tomography from coherent-state probe data.

Each bias-current setting is fitted on its own: six numbers, the linear
efficiency ``eta`` and the click probabilities ``p_0..p_4`` for exactly
``k`` absorbed photons. The fitted responses are then pushed through the
binomial loss transform to give the full POVM.

The fit uses variable projection. For a fixed ``eta`` the click
probability is linear in ``p``, so the weighted bounded linear problem for
``p`` is solved exactly and only a one-dimensional search over ``log eta``
remains.
"""
from __future__ import annotations

import logging
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import lsq_linear, minimize_scalar
from scipy.special import gammainc

from .errors import (
    DegenerateDataError,
    ExtrapolationError,
    FitError,
    UnderdeterminedError,
    ValidationError,
)
from .povm import (
    N_NONLINEAR,
    DetectorSetting,
    NonlinearResponse,
    Povm,
    poisson_weights,
    povm_from_responses,
)
from .states import DEFAULT_N_MR

log = logging.getLogger(__name__)

RATE_FLOOR = 1e-12
ETA_MIN = 1e-6
N_STARTS = 8
MONOTONE_SLACK = 0.05
_GRID_POINTS = 61


@dataclass(frozen=True, eq=False)
class CountRateSurface:
    """Click probabilities on a (setting, mean photon number) grid."""

    settings: tuple
    powers: np.ndarray
    rates: np.ndarray
    pulses: int = 1

    def __post_init__(self):
        settings = tuple(self.settings)
        powers = np.array(self.powers, dtype=float)
        rates = np.array(self.rates, dtype=float)
        if powers.ndim != 1 or powers.size == 0:
            raise ValidationError("powers must be a non-empty 1-d vector")
        if np.any(powers <= 0) or np.any(np.diff(powers) <= 0):
            raise ValidationError("powers must be positive and strictly increasing")
        if rates.shape != (len(settings), powers.size):
            raise ValidationError(
                f"rates has shape {rates.shape}, expected {(len(settings), powers.size)}"
            )
        bad = np.argwhere(~np.isfinite(rates) | (rates < 0) | (rates > 1))
        if bad.size:
            i, j = bad[0]
            raise ValidationError(
                f"rate {rates[i, j]!r} at setting {i}, power {j} lies outside [0, 1]"
            )
        if int(self.pulses) < 1:
            raise ValidationError("pulses must be a positive integer")
        powers.flags.writeable = False
        rates.flags.writeable = False
        object.__setattr__(self, "settings", settings)
        object.__setattr__(self, "powers", powers)
        object.__setattr__(self, "rates", rates)
        object.__setattr__(self, "pulses", int(self.pulses))

    @property
    def currents(self) -> np.ndarray:
        return np.array([s.bias_current for s in self.settings])

    def __eq__(self, other):
        if not isinstance(other, CountRateSurface):
            return NotImplemented
        return (
            self.settings == other.settings
            and np.array_equal(self.powers, other.powers)
            and np.array_equal(self.rates, other.rates)
            and self.pulses == other.pulses
        )

    __hash__ = None


@dataclass(frozen=True)
class SettingFit:
    response: NonlinearResponse
    residual: float
    degenerate: bool = False


@dataclass(frozen=True, eq=False)
class TomographyFit:
    responses: tuple
    residual: np.ndarray
    povm: Povm
    degenerate: np.ndarray = None

    def __post_init__(self):
        responses = tuple(self.responses)
        residual = np.array(self.residual, dtype=float)
        if residual.shape != (len(responses),):
            raise ValidationError("one residual per response is required")
        if np.any(residual < 0):
            raise ValidationError("residuals must be non-negative")
        if len(responses) != self.povm.n_settings:
            raise ValidationError("responses count must equal the number of POVM settings")
        degenerate = (
            np.zeros(len(responses), dtype=bool)
            if self.degenerate is None
            else np.array(self.degenerate, dtype=bool)
        )
        object.__setattr__(self, "responses", responses)
        object.__setattr__(self, "residual", residual)
        object.__setattr__(self, "degenerate", degenerate)

    @property
    def settings(self):
        return self.povm.settings

    @property
    def n_mr(self) -> int:
        return self.povm.n_mr


def grid_by_current(raw: CountRateSurface, grid: Sequence[float]) -> CountRateSurface:
    """Linearly interpolate rates along the bias-current axis, per power column."""
    src = raw.currents
    if np.any(np.diff(src) <= 0):
        raise ValidationError("raw settings must be sorted by strictly increasing current")
    grid = np.asarray(grid, dtype=float)
    tol = 1e-9 * max(1.0, abs(src[-1]))
    outside = (grid < src[0] - tol) | (grid > src[-1] + tol)
    if np.any(outside):
        raise ExtrapolationError(
            f"grid current {grid[outside][0]} uA lies outside the measured span "
            f"[{src[0]}, {src[-1]}] uA"
        )
    if src.size == 1:
        rates = np.repeat(raw.rates, grid.size, axis=0)
    else:
        rates = np.column_stack(
            [np.interp(grid, src, raw.rates[:, j]) for j in range(raw.powers.size)]
        )
    settings = tuple(DetectorSetting(float(c), i) for i, c in enumerate(grid))
    return CountRateSurface(settings, raw.powers, rates, raw.pulses)


def _profile(log_eta, powers, rates, weights):
    """Best bounded ``p`` and its weighted cost for a fixed efficiency."""
    mu = np.exp(log_eta) * powers
    A = poisson_weights(mu) * weights[:, None]
    b = (rates - gammainc(N_NONLINEAR, mu)) * weights
    p, *_ = np.linalg.lstsq(A, b, rcond=None)
    if np.any(p < 0) or np.any(p > 1):
        p = lsq_linear(A, b, bounds=(0.0, 1.0), method="bvls", tol=1e-14).x
    r = A @ p - b
    return float(r @ r), np.clip(p, 0.0, 1.0)


def _local_minima(values, count):
    """Indices of up to ``count`` grid local minima, lowest first."""
    v = np.asarray(values)
    n = v.size
    idx = [
        i
        for i in range(n)
        if (i == 0 or v[i] <= v[i - 1]) and (i == n - 1 or v[i] <= v[i + 1])
    ]
    idx.sort(key=lambda i: (v[i], i))
    return idx[:count]


def fit_setting(powers, rates, floor: float = RATE_FLOOR) -> SettingFit:
    """Fit ``(eta, p_0..p_4)`` to one click-probability-vs-power curve.

    Minimizes the sum of squared relative residuals subject to
    ``eta`` in ``[1e-6, 1]`` and ``p_k`` in ``[0, 1]``. The ``log eta`` axis
    is scanned on a fixed grid and the eight lowest local minima are refined
    with a bounded scalar search, so the outcome is deterministic.

    The returned ``residual`` is the root-mean-square relative residual.
    ``degenerate`` is set when ``eta`` runs into its lower bound, which is
    what flat (dark-count-only) data produce.
    """
    powers = np.asarray(powers, dtype=float)
    rates = np.asarray(rates, dtype=float)
    if powers.shape != rates.shape or powers.ndim != 1:
        raise ValidationError("powers and rates must be 1-d vectors of equal length")
    n_params = N_NONLINEAR + 1
    if powers.size < n_params:
        raise UnderdeterminedError(
            f"{powers.size} power points cannot determine {n_params} parameters"
        )
    if np.any(powers <= 0):
        raise ValidationError("powers must be positive")
    if powers.max() / powers.min() < 100:
        raise UnderdeterminedError("power points must span at least two decades")
    if np.all(rates == 0):
        raise DegenerateDataError("all click rates are zero")

    weights = 1.0 / np.maximum(rates, floor)
    grid = np.linspace(np.log(ETA_MIN), 0.0, _GRID_POINTS)
    costs = [_profile(g, powers, rates, weights)[0] for g in grid]

    best_x, best_cost = None, np.inf
    for i in _local_minima(costs, N_STARTS):
        lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]
        res = minimize_scalar(
            lambda x: _profile(x, powers, rates, weights)[0],
            bounds=(lo, hi),
            method="bounded",
            options={"xatol": 1e-12, "maxiter": 500},
        )
        cand = [(res.fun, res.x), (costs[i], grid[i])]
        for c, x in cand:
            if c < best_cost:
                best_cost, best_x = c, x

    cost, p = _profile(best_x, powers, rates, weights)
    eta = float(min(np.exp(best_x), 1.0))
    degenerate = bool(best_x <= np.log(ETA_MIN) + 1e-6)
    resp = NonlinearResponse(eta, p)
    if np.any(np.diff(p) < -MONOTONE_SLACK):
        warnings.warn(
            f"fitted click probabilities are not monotone in photon number: {np.round(p, 4)}",
            stacklevel=2,
        )
    return SettingFit(resp, float(np.sqrt(cost / powers.size)), degenerate)


def _fit_row(args):
    index, powers, rates = args
    try:
        return fit_setting(powers, rates)
    except Exception as exc:  # annotate with the setting index
        raise FitError(index, exc) from exc


def fit_all(surface: CountRateSurface, n_mr: int = DEFAULT_N_MR, workers: int = 1) -> TomographyFit:
    """Fit every setting independently and assemble the POVM.

    ``workers > 1`` distributes settings over processes; results come back
    in input order, so the output does not depend on scheduling.
    """
    jobs = [(i, surface.powers, surface.rates[i]) for i in range(len(surface.settings))]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            fits = list(pool.map(_fit_row, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        fits = [_fit_row(j) for j in jobs]
    responses = tuple(f.response for f in fits)
    log.info("fitted %d settings, worst residual %.3g", len(fits), max(f.residual for f in fits))
    return TomographyFit(
        responses=responses,
        residual=np.array([f.residual for f in fits]),
        povm=povm_from_responses(surface.settings, responses, n_mr),
        degenerate=np.array([f.degenerate for f in fits]),
    )
