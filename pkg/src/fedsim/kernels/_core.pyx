# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled local-solve kernels; semantics match kernels._ref."""

import numpy as np

cimport numpy as cnp
from libc.float cimport DBL_EPSILON
from libc.math cimport exp, sqrt

cnp.import_array()


def solve_logistic_local(double[:, ::1] Z, double coef, double tau, double lf,
                         double[::1] anchor, double[::1] y0,
                         double tol_sq, long max_steps):
    """Gradient descent on psi(y) = F(y) + tau/2 ||y - anchor||^2 where
    grad F(y) = -coef * Z' sigmoid(-Z y); stepsize 1/(lf + tau).

    Returns (y, gradF_at_y, grad_psi_norm_sq, steps).
    """
    cdef Py_ssize_t N = Z.shape[0]
    cdef Py_ssize_t d = Z.shape[1]
    cdef cnp.ndarray[double, ndim=1] y_arr = np.array(y0, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] gF_arr = np.zeros(d, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] s_arr = np.zeros(N, dtype=np.float64)
    cdef double[::1] y = y_arr
    cdef double[::1] gF = gF_arr
    cdef double[::1] s = s_arr
    cdef double step = 1.0 / (lf + tau)
    cdef double z, gj, gn, ez
    cdef Py_ssize_t i, j
    cdef long it = 0

    while True:
        for i in range(N):
            z = 0.0
            for j in range(d):
                z += Z[i, j] * y[j]
            if z <= 0.0:
                s[i] = 1.0 / (1.0 + exp(z))
            else:
                ez = exp(-z)
                s[i] = ez / (1.0 + ez)
        for j in range(d):
            gF[j] = 0.0
        for i in range(N):
            for j in range(d):
                gF[j] -= coef * s[i] * Z[i, j]
        gn = 0.0
        for j in range(d):
            gj = gF[j] + tau * (y[j] - anchor[j])
            gn += gj * gj
        if (tol_sq >= 0.0 and gn <= tol_sq) or it >= max_steps:
            return y_arr, gF_arr, gn, it
        for j in range(d):
            y[j] -= step * (gF[j] + tau * (y[j] - anchor[j]))
        it += 1

def solve_logistic_cohort(double[:, ::1] Z, long[::1] row_start, long[::1] row_end,
                          long[::1] members, double[::1] tau, double[::1] coef,
                          double[::1] lf, double[::1] thr_coef,
                          double[:, ::1] U, double[::1] xhat,
                          long max_steps, long fixed_steps):
    """Certificate (or fixed-step) local solves for a cohort of logistic clients.

    Client m's data rows are Z[row_start[m]:row_end[m]].  For each member the
    routine evaluates grad F at xhat, derives the stopping threshold
    thr_coef[m] * ||grad psi(xhat)||^2 floored at the double-precision
    gradient-noise level, and runs gradient descent on psi from xhat.  When
    fixed_steps >= 0 exactly that many updates are taken instead.

    Returns (ubar (n,d), grad_psi_norm_sq (n,), tol_sq (n,), total_steps).
    """
    cdef Py_ssize_t n = members.shape[0]
    cdef Py_ssize_t d = Z.shape[1]
    cdef cnp.ndarray[double, ndim=2] ubar_arr = np.zeros((n, d), dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] gn_arr = np.zeros(n, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] tol_arr = np.zeros(n, dtype=np.float64)
    cdef double[:, ::1] ubar = ubar_arr
    cdef double[::1] gn_out = gn_arr
    cdef double[::1] tol_out = tol_arr
    cdef cnp.ndarray[double, ndim=1] y_arr = np.zeros(d, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] gF_arr = np.zeros(d, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] b_arr = np.zeros(d, dtype=np.float64)
    cdef double[::1] y = y_arr
    cdef double[::1] gF = gF_arr
    cdef double[::1] b = b_arr
    cdef Py_ssize_t i, j, r, m, r0, r1
    cdef double z, s, ez, gj, gn, tol_sq, step, cf, tm
    cdef double gF_sq, u_sq, ga_sq, floor
    cdef long it, limit, total = 0

    for i in range(n):
        m = members[i]
        r0 = row_start[m]
        r1 = row_end[m]
        cf = coef[m]
        tm = tau[m]
        step = 1.0 / (lf[m] + tm)

        # grad F at xhat, and grad psi(xhat) = grad F(xhat) - u_m
        for j in range(d):
            gF[j] = 0.0
        for r in range(r0, r1):
            z = 0.0
            for j in range(d):
                z += Z[r, j] * xhat[j]
            if z <= 0.0:
                s = 1.0 / (1.0 + exp(z))
            else:
                ez = exp(-z)
                s = ez / (1.0 + ez)
            for j in range(d):
                gF[j] -= cf * s * Z[r, j]
        gF_sq = 0.0
        u_sq = 0.0
        ga_sq = 0.0
        for j in range(d):
            gF_sq += gF[j] * gF[j]
            u_sq += U[m, j] * U[m, j]
            gj = gF[j] - U[m, j]
            ga_sq += gj * gj
        floor = 8.0 * DBL_EPSILON * (sqrt(gF_sq) + sqrt(u_sq))
        floor = floor * floor

        if fixed_steps >= 0:
            tol_sq = -1.0
            it = 0
            limit = fixed_steps
        else:
            tol_sq = thr_coef[m] * ga_sq
            if tol_sq < floor:
                tol_sq = floor
            it = 0
            limit = max_steps
        tol_out[i] = tol_sq

        for j in range(d):
            y[j] = xhat[j]
            b[j] = xhat[j] + U[m, j] / tm
        while True:
            for j in range(d):
                gF[j] = 0.0
            for r in range(r0, r1):
                z = 0.0
                for j in range(d):
                    z += Z[r, j] * y[j]
                if z <= 0.0:
                    s = 1.0 / (1.0 + exp(z))
                else:
                    ez = exp(-z)
                    s = ez / (1.0 + ez)
                for j in range(d):
                    gF[j] -= cf * s * Z[r, j]
            gn = 0.0
            for j in range(d):
                gj = gF[j] + tm * (y[j] - b[j])
                gn += gj * gj
            if (tol_sq >= 0.0 and gn <= tol_sq) or it >= limit:
                break
            for j in range(d):
                y[j] -= step * (gF[j] + tm * (y[j] - b[j]))
            it += 1
        total += it
        gn_out[i] = gn
        for j in range(d):
            ubar[i, j] = gF[j]

    return ubar_arr, gn_arr, tol_arr, total
