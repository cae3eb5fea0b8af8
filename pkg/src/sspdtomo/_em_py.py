"""Numpy EM loop, used when the compiled extension is unavailable.

``em_run`` returns ``(rho, trace, iterations_run, status, bad_index)``;
``status`` is 1 when some setting has an observed outcome the current state
cannot produce, with ``bad_index`` naming that setting.
"""
import numpy as np

_TINY = 1e-300


def _loglik(p, R):
    with np.errstate(divide="ignore"):
        click = np.where(R > 0, R * np.log(np.maximum(p, _TINY)), 0.0)
        miss = np.where(R < 1, (1 - R) * np.log(np.maximum(1 - p, _TINY)), 0.0)
    return float(np.sum(click + miss))


def _unsupported(p, R, no_click):
    bad = (R > 0) & (p <= 0)
    if no_click:
        bad |= (R < 1) & (p >= 1)
    idx = np.flatnonzero(bad)
    return int(idx[0]) if idx.size else -1


def em_run(P, R, rho0, iterations, trace_every, early_stop_delta, no_click):
    P = np.ascontiguousarray(P, dtype=float)
    R = np.ascontiguousarray(R, dtype=float)
    rho = np.array(rho0, dtype=float)
    S = P.shape[0]
    colsum = P.sum(axis=0)
    click_w = np.divide(P, colsum, out=np.zeros_like(P), where=colsum > 0)
    R_pos = R > 0
    R_lt1 = R < 1
    check_stop = early_stop_delta > 0
    trace = []
    L_prev = 0.0
    i = 0
    while i < iterations:
        p = np.clip(P @ rho, 0.0, 1.0)
        bad = _unsupported(p, R, no_click)
        if bad >= 0:
            return rho, np.array(trace), i, 1, bad
        if check_stop or i % trace_every == 0:
            L = _loglik(p, R)
            if i % trace_every == 0:
                trace.append(L)
            if check_stop and i > 0 and L - L_prev < early_stop_delta:
                break
            L_prev = L
        with np.errstate(divide="ignore", invalid="ignore"):
            a = np.where(R_pos, R / p, 0.0)
            if no_click:
                b = np.where(R_lt1, (1 - R) / (1 - p), 0.0)
                factor = (b.sum() + P.T @ (a - b)) / S
            else:
                factor = click_w.T @ a
        rho = rho * np.maximum(factor, 0.0)
        total = rho.sum()
        if total > 0:
            rho /= total
        i += 1
    p = np.clip(P @ rho, 0.0, 1.0)
    bad = _unsupported(p, R, no_click)
    if bad >= 0:
        return rho, np.array(trace), i, 1, bad
    trace.append(_loglik(p, R))
    return rho, np.array(trace), i, 0, -1
