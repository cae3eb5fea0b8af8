# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled EM loop. Same contract as ``_em_py.em_run``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport log

cnp.import_array()

cdef double _TINY = 1e-300


cdef inline double _loglik(const double[::1] p, const double[::1] R, Py_ssize_t S) nogil:
    cdef double L = 0.0, q
    cdef Py_ssize_t s
    for s in range(S):
        if R[s] > 0.0:
            q = p[s] if p[s] > _TINY else _TINY
            L += R[s] * log(q)
        if R[s] < 1.0:
            q = 1.0 - p[s]
            if q < _TINY:
                q = _TINY
            L += (1.0 - R[s]) * log(q)
    return L


cdef inline Py_ssize_t _predict(const double[:, ::1] P, const double[::1] rho, double[::1] p,
                                const double[::1] R, bint no_click,
                                Py_ssize_t S, Py_ssize_t N) nogil:
    """Fill p = P @ rho; return the first setting with an unsupported outcome, or -1."""
    cdef Py_ssize_t s, n
    cdef double acc
    cdef Py_ssize_t bad = -1
    for s in range(S):
        acc = 0.0
        for n in range(N):
            acc += P[s, n] * rho[n]
        if acc < 0.0:
            acc = 0.0
        elif acc > 1.0:
            acc = 1.0
        p[s] = acc
        if bad < 0:
            if R[s] > 0.0 and acc <= 0.0:
                bad = s
            elif no_click and R[s] < 1.0 and acc >= 1.0:
                bad = s
    return bad


def em_run(P_in, R_in, rho0, long iterations, long trace_every,
           double early_stop_delta, bint no_click):
    cdef const double[:, ::1] P = np.ascontiguousarray(P_in, dtype=np.float64)
    cdef const double[::1] R = np.ascontiguousarray(R_in, dtype=np.float64)
    cdef Py_ssize_t S = P.shape[0], N = P.shape[1]
    rho_arr = np.array(rho0, dtype=np.float64, copy=True)
    cdef double[::1] rho = rho_arr
    cdef double[::1] p = np.empty(S)
    cdef double[::1] c = np.empty(S)
    cdef double[::1] colsum = np.zeros(N)
    cdef double[::1] factor = np.empty(N)
    cdef Py_ssize_t s, n, bad
    cdef long i = 0
    cdef double base, acc, total, L, L_prev = 0.0
    cdef bint check_stop = early_stop_delta > 0.0
    trace = []

    if not no_click:
        for s in range(S):
            for n in range(N):
                colsum[n] += P[s, n]

    while i < iterations:
        bad = _predict(P, rho, p, R, no_click, S, N)
        if bad >= 0:
            return rho_arr, np.array(trace), i, 1, bad
        if check_stop or i % trace_every == 0:
            L = _loglik(p, R, S)
            if i % trace_every == 0:
                trace.append(L)
            if check_stop and i > 0 and L - L_prev < early_stop_delta:
                break
            L_prev = L

        with nogil:
            base = 0.0
            for s in range(S):
                acc = R[s] / p[s] if R[s] > 0.0 else 0.0
                if no_click:
                    if R[s] < 1.0:
                        base += (1.0 - R[s]) / (1.0 - p[s])
                        acc -= (1.0 - R[s]) / (1.0 - p[s])
                c[s] = acc
            for n in range(N):
                factor[n] = 0.0
            for s in range(S):
                acc = c[s]
                for n in range(N):
                    factor[n] += P[s, n] * acc
            total = 0.0
            for n in range(N):
                if no_click:
                    acc = (base + factor[n]) / S
                elif colsum[n] > 0.0:
                    acc = factor[n] / colsum[n]
                else:
                    acc = 0.0
                if acc < 0.0:
                    acc = 0.0
                rho[n] *= acc
                total += rho[n]
            if total > 0.0:
                for n in range(N):
                    rho[n] /= total
        i += 1

    bad = _predict(P, rho, p, R, no_click, S, N)
    if bad >= 0:
        return rho_arr, np.array(trace), i, 1, bad
    trace.append(_loglik(p, R, S))
    return rho_arr, np.array(trace), i, 0, -1
