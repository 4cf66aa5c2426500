"""Pure-numpy reference implementation of the local-solve kernels."""

import numpy as np


def _sigmoid_neg(z):
    """sigmoid(-z), stable on both branches."""
    s = np.empty_like(z)
    neg = z <= 0
    s[neg] = 1.0 / (1.0 + np.exp(z[neg]))
    ez = np.exp(-z[~neg])
    s[~neg] = ez / (1.0 + ez)
    return s


def solve_logistic_local(Z, coef, tau, lf, anchor, y0, tol_sq, max_steps):
    """Gradient descent on psi(y) = F(y) + tau/2 ||y - anchor||^2 for one
    logistic client, where grad F(y) = -coef * Z' sigmoid(-Z y).

    Runs with stepsize 1/(lf + tau) until ||grad psi||^2 <= tol_sq (skipped
    when tol_sq < 0) or max_steps updates have been taken.

    Returns (y, gradF_at_y, grad_psi_norm_sq, steps).
    """
    step = 1.0 / (lf + tau)
    y = np.array(y0, dtype=np.float64, copy=True)
    it = 0
    while True:
        s = _sigmoid_neg(Z @ y)
        gF = -coef * (Z.T @ s)
        g = gF + tau * (y - anchor)
        gn = float(g @ g)
        if (tol_sq >= 0.0 and gn <= tol_sq) or it >= max_steps:
            return y, gF, gn, it
        y -= step * g
        it += 1


def solve_logistic_cohort(Z, row_start, row_end, members, tau, coef, lf,
                          thr_coef, U, xhat, max_steps, fixed_steps):
    """Certificate (or fixed-step) local solves for a cohort of logistic
    clients; see the compiled twin for the contract.

    Returns (ubar (n,d), grad_psi_norm_sq (n,), tol_sq (n,), total_steps).
    """
    n = len(members)
    d = Z.shape[1]
    ubar = np.zeros((n, d))
    gns = np.zeros(n)
    tols = np.zeros(n)
    total = 0
    eps = np.finfo(np.float64).eps
    for i, m in enumerate(members):
        Zm = Z[row_start[m] : row_end[m]]
        gF_a = -coef[m] * (Zm.T @ _sigmoid_neg(Zm @ xhat))
        ga = gF_a - U[m]
        if fixed_steps >= 0:
            tol_sq = -1.0
            limit = fixed_steps
        else:
            floor = (8.0 * eps * (np.linalg.norm(gF_a) + np.linalg.norm(U[m]))) ** 2
            tol_sq = max(thr_coef[m] * float(ga @ ga), floor)
            limit = max_steps
        tols[i] = tol_sq
        b = xhat + U[m] / tau[m]
        y, gF, gn, it = solve_logistic_local(
            Zm, coef[m], tau[m], lf[m], b, xhat, tol_sq, limit
        )
        ubar[i] = gF
        gns[i] = gn
        total += it
    return ubar, gns, tols, total
