"""Per-client proximal subproblems, inner solvers and the stopping certificate.

Each cohort member minimizes

    psi_m(y) = F_m(y) + tau_m/2 ||y - (xhat + u_m/tau_m)||^2,

which is tau_m-strongly convex and (L_Fm + tau_m)-smooth.  The accuracy
requirement on the approximate minimizer references the unknown exact
minimizer y*, so the solvers enforce a computable sufficient surrogate:
||y - y*|| is bounded above by ||grad psi(y)||/tau_m (strong convexity) and
||xhat - y*|| below by ||grad psi(xhat)||/(L_Fm + tau_m) (smoothness), which
turns the requirement into a threshold on the gradient norm at y.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .objective import LogisticClient, Problem, QuadraticClient, lifted_grad

__all__ = [
    "Subproblem",
    "LocalSolution",
    "CohortSolver",
    "psi_grad",
    "solve_exact_quadratic",
    "solve_gd",
    "certificate_threshold_sq",
    "assumption_certificate",
    "assumption_certificate_exact",
]

MAX_CERT_STEPS = 1_000_000


@dataclass(frozen=True)
class Subproblem:
    m: int
    tau: float
    anchor: np.ndarray  # xhat, also the inner starting point
    dual: np.ndarray  # u_m

    @property
    def target(self) -> np.ndarray:
        """Center of the proximal term: anchor + dual/tau."""
        return self.anchor + self.dual / self.tau


@dataclass
class LocalSolution:
    y: np.ndarray
    ubar: np.ndarray  # grad F_m at y
    grad_psi_norm: float
    steps: int
    certified: bool
    slack: float


def psi_grad(problem: Problem, sub: Subproblem, y: np.ndarray) -> np.ndarray:
    return lifted_grad(problem, sub.m, y) + sub.tau * (y - sub.target)


def _quad_lifted_parts(problem: Problem, m: int):
    c = problem.clients[m]
    if not isinstance(c, QuadraticClient):
        raise TypeError("exact solve requires a quadratic client")
    M = problem.M
    Q_F = (c.Q - c.mu * np.eye(c.d)) / M
    c_F = c.c / M
    return Q_F, c_F


def solve_exact_quadratic(problem: Problem, sub: Subproblem) -> np.ndarray:
    """Exact minimizer of psi for a quadratic client, by dense factorization."""
    Q_F, c_F = _quad_lifted_parts(problem, sub.m)
    d = Q_F.shape[0]
    rhs = sub.tau * sub.target + c_F
    return np.linalg.solve(Q_F + sub.tau * np.eye(d), rhs)


def certificate_threshold_sq(
    problem: Problem, m: int, tau: float, grad_at_anchor_sq: float
) -> float:
    """Threshold on ||grad psi(y)||^2 under which the surrogate accuracy
    requirement holds for client m.  Infinite when L_Fm = 0 (the requirement
    is vacuous: grad F_m is then constant, so any y yields the exact update).
    """
    L_F = float(problem.L_F[m])
    mu_m = problem.clients[m].mu
    M = problem.M
    rhs = mu_m / (6.0 * M) * grad_at_anchor_sq / (L_F + tau) ** 2
    coef = 4.0 * mu_m * L_F**2 / (3.0 * M * tau**4) + L_F / tau**2
    if coef == 0.0:
        return np.inf
    return rhs / coef


def roundoff_floor_sq(problem: Problem, sub: Subproblem) -> float:
    """Smallest ||grad psi||^2 reliably computable in double precision.

    Near the subproblem optimum, grad psi is the cancellation of grad F
    against the proximal term (whose magnitude is ||u_m||), so gradient norms
    below roundoff times that scale are numerical noise.  Stopping thresholds
    are floored here.
    """
    gF_a = lifted_grad(problem, sub.m, sub.anchor)
    scale = float(np.linalg.norm(gF_a) + np.linalg.norm(sub.dual))
    return (8.0 * np.finfo(np.float64).eps * scale) ** 2


def _surrogate_sides(problem: Problem, sub: Subproblem, y: np.ndarray):
    L_F = float(problem.L_F[sub.m])
    mu_m = problem.clients[sub.m].mu
    M = problem.M
    tau = sub.tau
    gy = psi_grad(problem, sub, y)
    ga = psi_grad(problem, sub, sub.anchor)
    gy_sq = float(gy @ gy)
    coef = 4.0 * mu_m * L_F**2 / (3.0 * M * tau**4) + L_F / tau**2
    lhs = coef * gy_sq
    rhs = mu_m / (6.0 * M) * float(ga @ ga) / (L_F + tau) ** 2
    # absolute slack corresponding to a gradient at the roundoff floor
    atol = coef * roundoff_floor_sq(problem, sub)
    return lhs, rhs, atol


def assumption_certificate(
    problem: Problem, subs: list[Subproblem], ys: list[np.ndarray]
) -> tuple[bool, float]:
    """Per-client sufficient accuracy check over a cohort.

    Returns (all passed, worst slack) where slack = rhs - lhs per client; a
    nonnegative worst slack implies the summed accuracy inequality that the
    convergence theory requires.
    """
    worst = np.inf
    ok = True
    for sub, y in zip(subs, ys):
        lhs, rhs, atol = _surrogate_sides(problem, sub, y)
        slack = rhs - lhs
        worst = min(worst, slack)
        if lhs > rhs * (1.0 + 1e-12) + atol:
            ok = False
    return ok, worst


def assumption_certificate_exact(
    problem: Problem, subs: list[Subproblem], ys: list[np.ndarray]
) -> tuple[bool, float]:
    """Literal (oracle) form of the accuracy inequality, computable only when
    the exact minimizers are available (quadratic clients); test use only."""
    lhs = 0.0
    rhs = 0.0
    M = problem.M
    for sub, y in zip(subs, ys):
        L_F = float(problem.L_F[sub.m])
        mu_m = problem.clients[sub.m].mu
        tau = sub.tau
        y_star = solve_exact_quadratic(problem, sub)
        gy = psi_grad(problem, sub, y)
        lhs += 4.0 / tau**2 * mu_m * L_F**2 / (3.0 * M) * float(
            (y - y_star) @ (y - y_star)
        )
        lhs += L_F / tau**2 * float(gy @ gy)
        diff = sub.anchor - y_star
        rhs += mu_m / (6.0 * M) * float(diff @ diff)
    return lhs <= rhs * (1.0 + 1e-12) + 1e-300, rhs - lhs


class CohortSolver:
    """Batched local solves for problems whose clients are all logistic.

    Fuses one round's member solves into a single kernel call.  The per-client
    stopping thresholds depend only on (problem, tau), so they are precomputed
    at construction; semantics per member match :func:`solve_gd`.
    """

    def __init__(self, problem: Problem, tau: np.ndarray | float):
        if not all(isinstance(c, LogisticClient) for c in problem.clients):
            raise TypeError("batched solves require all-logistic clients")
        self.problem = problem
        M = problem.M
        self.tau = np.broadcast_to(np.asarray(tau, dtype=np.float64), (M,)).copy()
        if (self.tau <= 0).any():
            raise ValueError("tau must be positive")
        counts = np.array([c.N for c in problem.clients], dtype=np.int64)
        ends = np.cumsum(counts)
        self.row_start = ends - counts
        self.row_end = ends
        self.Z = np.ascontiguousarray(np.vstack([c.Z for c in problem.clients]))
        self.coef = 1.0 / (M * counts.astype(np.float64))
        self.lf = problem.L_F.astype(np.float64)
        mus = np.array([c.mu for c in problem.clients])
        denom = 4.0 * mus * self.lf**2 / (3.0 * M * self.tau**4) + self.lf / self.tau**2
        numer = mus / (6.0 * M) / (self.lf + self.tau) ** 2
        # a zero denominator means L_F = 0: the requirement is vacuous; a huge
        # finite coefficient (rather than inf) keeps tol_sq arithmetic clean
        self.thr_coef = np.where(denom > 0, numer / np.where(denom > 0, denom, 1.0), 1e300)

    def solve(
        self,
        members,
        xhat: np.ndarray,
        U: np.ndarray,
        mode: str = "certificate",
        K: int | None = None,
    ) -> tuple[np.ndarray, np.ndarray, int]:
        """Solve the subproblems of ``members`` anchored at xhat with duals U.

        Returns (ubar rows aligned with members, grad-psi norms squared,
        total inner steps); raises when a certificate cannot be met.
        """
        if mode == "fixed_k":
            if K is None or K < 0:
                raise ValueError("fixed_k mode needs K >= 0")
            fixed = int(K)
        elif mode == "certificate":
            fixed = -1
        else:
            raise ValueError(f"unknown solver mode {mode!r}")
        members = np.asarray(members, dtype=np.int64)
        ubar, gns, tols, total = kernels.solve_logistic_cohort(
            self.Z, self.row_start, self.row_end, members, self.tau, self.coef,
            self.lf, self.thr_coef, U, xhat, MAX_CERT_STEPS, fixed,
        )
        if mode == "certificate":
            bad = np.nonzero(gns > tols)[0]
            if bad.size:
                i = int(bad[0])
                raise RuntimeError(
                    f"client {int(members[i])}: accuracy certificate not reached "
                    f"within {MAX_CERT_STEPS} inner steps "
                    f"(|grad psi|^2 = {gns[i]:.3e} > {tols[i]:.3e})"
                )
        return ubar, gns, int(total)


def solve_gd(
    problem: Problem,
    sub: Subproblem,
    mode: str = "certificate",
    K: int | None = None,
) -> LocalSolution:
    """Inner gradient descent on psi with stepsize 1/(L_Fm + tau).

    ``certificate`` mode runs until the surrogate accuracy threshold is met
    (error after 1e6 steps: the dual stepsize is mis-set); ``fixed_k`` runs
    exactly K updates and reports whether the certificate happens to hold.
    """
    client = problem.clients[sub.m]
    L_F = float(problem.L_F[sub.m])
    mu_m = client.mu
    M = problem.M
    tau = sub.tau
    if tau <= 0:
        raise ValueError("tau must be positive")
    b = sub.target

    # grad psi(anchor) = grad F(anchor) - dual, since the proximal term's
    # gradient at the anchor is exactly -u_m
    gF_a = lifted_grad(problem, sub.m, sub.anchor)
    ga = gF_a - sub.dual
    ga_sq = float(ga @ ga)
    floor_scale = float(np.linalg.norm(gF_a) + np.linalg.norm(sub.dual))
    floor_sq = (8.0 * np.finfo(np.float64).eps * floor_scale) ** 2

    if mode == "certificate":
        tol_sq = certificate_threshold_sq(problem, sub.m, tau, ga_sq)
        # thresholds below the representable gradient floor are unreachable in
        # double precision; floor them (the resulting dual-update error is at
        # roundoff level)
        tol_sq = max(tol_sq, floor_sq)
        if np.isinf(tol_sq):
            # vacuous requirement; grad F is constant so xhat already yields
            # the exact dual update
            y = sub.anchor.copy()
            return LocalSolution(y, gF_a, float(np.sqrt(ga_sq)), 0, True, np.inf)
        max_steps = MAX_CERT_STEPS
    elif mode == "fixed_k":
        if K is None or K < 0:
            raise ValueError("fixed_k mode needs K >= 0")
        tol_sq = -1.0
        max_steps = K
    else:
        raise ValueError(f"unknown solver mode {mode!r}")

    if isinstance(client, LogisticClient):
        coef = 1.0 / (problem.M * client.N)
        y, ubar, gn, steps = kernels.solve_logistic_local(
            client.Z, coef, tau, L_F, b, sub.anchor, tol_sq, max_steps
        )
    else:
        Q_F, c_F = _quad_lifted_parts(problem, sub.m)
        step = 1.0 / (L_F + tau)
        y = sub.anchor.copy()
        steps = 0
        while True:
            gF = Q_F @ y - c_F
            g = gF + tau * (y - b)
            gn = float(g @ g)
            if (tol_sq >= 0.0 and gn <= tol_sq) or steps >= max_steps:
                ubar = gF
                break
            y -= step * g
            steps += 1

    if mode == "certificate" and gn > tol_sq:
        raise RuntimeError(
            f"client {sub.m}: accuracy certificate not reached within "
            f"{max_steps} inner steps (|grad psi|^2 = {gn:.3e} > {tol_sq:.3e})"
        )
    # certificate check from the already-available gradient norms
    coef = 4.0 * mu_m * L_F**2 / (3.0 * M * tau**4) + L_F / tau**2
    lhs = coef * gn
    rhs = mu_m / (6.0 * M) * ga_sq / (L_F + tau) ** 2
    ok = lhs <= rhs * (1.0 + 1e-12) + coef * floor_sq
    return LocalSolution(y, ubar, float(np.sqrt(gn)), steps, ok, rhs - lhs)
