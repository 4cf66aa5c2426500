"""Round drivers, theoretical stepsizes, Lyapunov tracking and the optimum.

Two server loops over the lifted problem ``min_x sum_m F_m(x) + mu/2 ||x||^2``
are implemented:

* the compressed-cohort driver (:func:`round_cc`): uniform client sampling plus
  an unbiased compressor on the dual increments, with the dual sum ``v``
  maintained incrementally;
* the general-sampling driver (:func:`round_ab`): any of the sampling schemes,
  uncompressed dual overwrites, with ``v`` recomputed as a full sum.

Both keep the invariant ``v = sum_m u_m`` (checked against a fresh summation
every 100 rounds) and admit per-round Lyapunov contraction with the rates
returned by :func:`contraction_rate`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .compress import Compressor, compress, decompress
from .localsolve import CohortSolver, LocalSolution, Subproblem, solve_exact_quadratic, solve_gd
from .objective import Problem, lifted_grad
from .sampling import SamplingScheme, ab_constants, draw, estimate, participation_prob, uniform_nice

__all__ = [
    "AlgorithmState",
    "StepsizeConfig",
    "Optimum",
    "LyapunovTracker",
    "RoundInfo",
    "init_state",
    "round_cc",
    "round_ab",
    "stepsizes_cc",
    "stepsizes_ab",
    "stepsizes_manual",
    "lyapunov",
    "contraction_rate",
    "reference_optimum",
]

V_CHECK_EVERY = 100
V_CHECK_TOL = 1e-9
OPTIMUM_MAX_ITERS = 10_000_000


@dataclass
class AlgorithmState:
    x: np.ndarray  # primal iterate, shape (d,)
    u: np.ndarray  # dual iterates, shape (M, d)
    v: np.ndarray  # running sum of the dual iterates, shape (d,)
    t: int = 0


def init_state(problem: Problem) -> AlgorithmState:
    return AlgorithmState(
        x=np.zeros(problem.d),
        u=np.zeros((problem.M, problem.d)),
        v=np.zeros(problem.d),
    )


@dataclass(frozen=True)
class StepsizeConfig:
    gamma: float
    tau: np.ndarray  # per-client dual stepsizes, shape (M,)
    source: str

    def __post_init__(self):
        if self.gamma <= 0 or (self.tau <= 0).any():
            raise ValueError("stepsizes must be positive")

    @property
    def tau_scalar(self) -> float:
        """The common dual stepsize; errors if tau is genuinely per-client."""
        if np.ptp(self.tau) != 0.0:
            raise ValueError("tau is not constant across clients")
        return float(self.tau[0])


@dataclass(frozen=True)
class Optimum:
    x: np.ndarray
    u: np.ndarray  # shape (M, d), row m = grad F_m at the optimum
    f: float


@dataclass
class LyapunovTracker:
    """Carries the weights of the Lyapunov function owned by one driver.

    ``kind='cc'`` weights the dual distances by (M/C)(omega+1)(1/tau +
    1/L_F_max); ``kind='ab'`` by (1/phat_m)(1/tau_m + 1/L_Fm) per client.
    """

    kind: str  # "cc" | "ab"
    gamma: float
    dual_weight: np.ndarray  # shape (M,)
    history: list[float] = field(default_factory=list)

    @classmethod
    def for_cc(
        cls, problem: Problem, config: StepsizeConfig, C: int, omega: float
    ) -> "LyapunovTracker":
        tau = config.tau_scalar
        w = (problem.M / C) * (omega + 1.0) * (1.0 / tau + 1.0 / problem.L_F_max)
        return cls("cc", config.gamma, np.full(problem.M, w))

    @classmethod
    def for_ab(
        cls, problem: Problem, config: StepsizeConfig, scheme: SamplingScheme
    ) -> "LyapunovTracker":
        phat = participation_prob(scheme)
        with np.errstate(divide="ignore"):
            w = (1.0 / phat) * (1.0 / config.tau + 1.0 / problem.L_F)
        return cls("ab", config.gamma, w)


def lyapunov(state: AlgorithmState, optimum: Optimum, tracker: LyapunovTracker) -> float:
    dx = state.x - optimum.x
    val = float(dx @ dx) / tracker.gamma
    du = state.u - optimum.u
    dual_sq = np.einsum("md,md->m", du, du)
    # convention: a zero dual distance contributes zero even under an
    # infinite weight (L_F = 0 clients have constant gradients)
    nz = dual_sq > 0.0
    val += float(tracker.dual_weight[nz] @ dual_sq[nz])
    tracker.history.append(val)
    return val


@dataclass(frozen=True)
class RoundInfo:
    cohort: tuple[int, ...]
    uplink_floats: int
    downlink_floats: int
    local_steps: int


def _xhat(state: AlgorithmState, gamma: float, mu: float) -> np.ndarray:
    return (state.x - gamma * state.v) / (1.0 + gamma * mu)


def _solve_member(
    problem: Problem,
    m: int,
    tau: float,
    xhat: np.ndarray,
    u_m: np.ndarray,
    mode: str,
    K: int | None,
) -> LocalSolution:
    sub = Subproblem(m, tau, xhat, u_m)
    if mode == "exact":
        y = solve_exact_quadratic(problem, sub)
        return LocalSolution(y, lifted_grad(problem, m, y), 0.0, 0, True, 0.0)
    return solve_gd(problem, sub, mode=mode, K=K)


def _check_v(state: AlgorithmState):
    if state.t % V_CHECK_EVERY == 0:
        fresh = state.u.sum(axis=0)
        err = float(np.linalg.norm(state.v - fresh))
        if err > V_CHECK_TOL * (1.0 + float(np.linalg.norm(state.v))):
            raise RuntimeError(
                f"dual-sum drift at round {state.t}: |v - sum(u)| = {err:.3e}"
            )


def round_cc(
    problem: Problem,
    state: AlgorithmState,
    compressor: Compressor,
    C: int,
    config: StepsizeConfig,
    seed: int,
    solver_mode: str = "certificate",
    K: int | None = None,
    cohort_solver: CohortSolver | None = None,
) -> tuple[AlgorithmState, RoundInfo]:
    """One round of the compressed-cohort driver.

    A uniform C-subset of clients refines the local subproblems at the
    prox-center xhat, sends compressed dual increments, and the server updates
    (u, v, x) with the conservative (1+omega)-damped dual step and the
    matching amplified primal step.  ``cohort_solver`` batches the member
    solves for all-logistic problems.
    """
    gamma = config.gamma
    tau = config.tau_scalar
    omega = compressor.omega
    M, d = problem.M, problem.d
    xhat = _xhat(state, gamma, problem.mu)

    scheme = uniform_nice(M, C)
    rng_cohort = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(state.t,)))
    cohort = draw(scheme, rng_cohort).members

    u_new = state.u.copy()
    delta = np.zeros(d)
    scale = 1.0 / (1.0 + omega) * (C / M)
    uplink = 0
    local_steps = 0
    if cohort_solver is not None and solver_mode in ("certificate", "fixed_k"):
        ubars, _, local_steps = cohort_solver.solve(cohort, xhat, state.u, solver_mode, K)
    else:
        ubars = []
        for m in cohort:
            sol = _solve_member(problem, m, tau, xhat, state.u[m], solver_mode, K)
            local_steps += sol.steps
            ubars.append(sol.ubar)
    for i, m in enumerate(cohort):
        rng_m = np.random.default_rng(
            np.random.SeedSequence(seed, spawn_key=(state.t, m))
        )
        msg = compress(compressor, ubars[i] - state.u[m], rng_m)
        uplink += msg.payload_floats
        inc = scale * decompress(msg, d)
        u_new[m] = state.u[m] + inc
        delta += inc

    new = AlgorithmState(
        x=xhat - gamma * (M / C) * (1.0 + omega) * delta,
        u=u_new,
        v=state.v + delta,
        t=state.t + 1,
    )
    _check_v(new)
    return new, RoundInfo(cohort, uplink, len(cohort) * d, local_steps)


def round_ab(
    problem: Problem,
    state: AlgorithmState,
    scheme: SamplingScheme,
    config: StepsizeConfig,
    seed: int,
    solver_mode: str = "certificate",
    K: int | None = None,
    cohort_solver: CohortSolver | None = None,
) -> tuple[AlgorithmState, RoundInfo]:
    """One round of the general-sampling driver.

    Cohort members overwrite their dual iterates with the fresh lifted
    gradients; the primal step applies the scheme's unbiased mean estimator to
    the full M-vector of dual differences (zeros for non-members), and v is
    recomputed as the full dual sum.
    """
    gamma = config.gamma
    M, d = problem.M, problem.d
    xhat = _xhat(state, gamma, problem.mu)

    rng_cohort = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(state.t,)))
    dr = draw(scheme, rng_cohort)
    participants = dr.participants()

    u_new = state.u.copy()
    diffs = np.zeros((M, d))
    local_steps = 0
    if cohort_solver is not None and solver_mode in ("certificate", "fixed_k"):
        ubars, _, local_steps = cohort_solver.solve(
            participants, xhat, state.u, solver_mode, K
        )
        for i, m in enumerate(participants):
            u_new[m] = ubars[i]
            diffs[m] = ubars[i] - state.u[m]
    else:
        for m in participants:
            sol = _solve_member(problem, m, float(config.tau[m]), xhat, state.u[m], solver_mode, K)
            local_steps += sol.steps
            u_new[m] = sol.ubar
            diffs[m] = sol.ubar - state.u[m]

    new = AlgorithmState(
        x=xhat - gamma * M * estimate(scheme, dr, diffs),
        u=u_new,
        v=u_new.sum(axis=0),
        t=state.t + 1,
    )
    _check_v(new)
    return new, RoundInfo(participants, len(participants) * d, len(participants) * d, local_steps)


def _assert_per_client(problem: Problem, gamma: float, tau: np.ndarray, const: np.ndarray):
    """Per-client stepsize inequality: 1/tau_m - gamma*const_m >= 4 mu_m/(3 M tau_m^2)."""
    mus = np.array([c.mu for c in problem.clients])
    lhs = 1.0 / tau - gamma * const
    rhs = 4.0 * mus / (3.0 * problem.M * tau**2)
    bad = np.nonzero(lhs < rhs * (1.0 - 1e-12))[0]
    if bad.size:
        m = int(bad[0])
        raise ValueError(
            f"stepsize inequality violated for client {m}: "
            f"{lhs[m]:.3e} < {rhs[m]:.3e}"
        )
    floor = 8.0 * mus / (3.0 * problem.M)
    if (tau < floor * (1.0 - 1e-12)).any():
        raise ValueError("dual stepsize below its 8 mu_m/(3M) floor")


def stepsizes_cc(problem: Problem, C: int, omega: float) -> StepsizeConfig:
    """Theoretical (gamma, tau) for the compressed-cohort driver.

    tau = (8/3) sqrt(mu L_max (omega+1)/C / (M (1+omega/C))) and
    gamma = 1/(2 tau M (1+omega/C)), so gamma*tau*M*(1+omega/C) = 1/2 exactly.
    """
    if not 1 <= C <= problem.M:
        raise ValueError("need 1 <= C <= M")
    if omega < 0:
        raise ValueError("omega must be nonnegative")
    M = problem.M
    blow = 1.0 + omega / C
    tau = (8.0 / 3.0) * np.sqrt(problem.mu * problem.L_max * (omega + 1.0) / C / (M * blow))
    gamma = 1.0 / (2.0 * tau * M * blow)
    taus = np.full(M, tau)
    _assert_per_client(problem, gamma, taus, np.full(M, M * blow))
    return StepsizeConfig(gamma, taus, "cc_default")


def stepsizes_ab(
    problem: Problem, scheme: SamplingScheme, source: str | None = None
) -> StepsizeConfig:
    """Theoretical (gamma, tau) for the general-sampling driver.

    tau follows the scheme: uniform (8/3)sqrt(L_max mu/(MC)); multisampling
    (8/3)sqrt(Lbar mu M) p_m (importance-matched); independent
    (8/3)sqrt(Lbar mu/(M sum p)).  gamma is the min over clients of
    1/(2 tau_m ((1-B)M + A/w_m)) and the per-client inequality is asserted.
    """
    M = problem.M
    mu = problem.mu
    if scheme.kind == "uniform_nice":
        tau = np.full(M, (8.0 / 3.0) * np.sqrt(problem.L_max * mu / (M * scheme.C)))
        default_source = "uniform"
    elif scheme.kind == "multisampling":
        tau = (8.0 / 3.0) * np.sqrt(problem.L_bar * mu * M) * scheme.p
        default_source = "importance"
    else:
        tau = np.full(
            M, (8.0 / 3.0) * np.sqrt(problem.L_bar * mu / (M * scheme.p.sum()))
        )
        default_source = "independent"
    ab = ab_constants(scheme)
    with np.errstate(divide="ignore"):
        const = (1.0 - ab.B) * M + np.where(ab.w > 0, ab.A / np.where(ab.w > 0, ab.w, 1.0), 0.0)
    gamma = float(np.min(1.0 / (2.0 * tau * const)))
    _assert_per_client(problem, gamma, tau, const)
    return StepsizeConfig(gamma, tau, source or default_source)


def stepsizes_manual(
    problem: Problem,
    gamma: float,
    tau: np.ndarray | float,
    scheme: SamplingScheme | None = None,
) -> StepsizeConfig:
    """User-supplied stepsizes; validated against the scheme's inequality when
    a scheme is given, and against the tau floor always."""
    tau = np.broadcast_to(np.asarray(tau, dtype=np.float64), (problem.M,)).copy()
    if scheme is not None:
        ab = ab_constants(scheme)
        with np.errstate(divide="ignore"):
            const = (1.0 - ab.B) * problem.M + np.where(
                ab.w > 0, ab.A / np.where(ab.w > 0, ab.w, 1.0), 0.0
            )
        _assert_per_client(problem, gamma, tau, const)
    return StepsizeConfig(gamma, tau, "manual")


def contraction_rate(
    problem: Problem,
    config: StepsizeConfig,
    scheme: SamplingScheme | None = None,
    C: int | None = None,
    omega: float | None = None,
) -> float:
    """Per-round Lyapunov contraction factor rho in (0, 1).

    Pass (C, omega) for the compressed-cohort driver or a scheme for the
    general-sampling driver.
    """
    gamma = config.gamma
    mu = problem.mu
    if scheme is None:
        if C is None or omega is None:
            raise ValueError("need either a scheme or (C, omega)")
        tau = config.tau_scalar
        rho = min(
            gamma * mu / (1.0 + gamma * mu),
            (C / (problem.M * (1.0 + omega))) * tau / (problem.L_F_max + tau),
        )
    else:
        phat = participation_prob(scheme)
        L_F = problem.L_F
        factor = max(
            1.0 / (1.0 + gamma * mu),
            float(np.max((L_F + (1.0 - phat) * config.tau) / (L_F + config.tau))),
        )
        rho = 1.0 - factor
    if not 0.0 < rho < 1.0:
        raise ValueError(f"contraction rate {rho} outside (0, 1)")
    return float(rho)


def reference_optimum(problem: Problem, tol: float = 1e-10) -> Optimum:
    """High-accuracy minimizer by accelerated full-gradient descent.

    Runs the constant-momentum accelerated scheme with stepsize 1/L_max until
    ||grad f(x)|| <= tol * min(1, mu), then certifies the first-order
    condition ||mu x + sum_m grad F_m(x)|| <= tol.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    L = problem.L_max
    mu = problem.mu
    target = tol * min(1.0, mu)
    beta = (np.sqrt(L) - np.sqrt(mu)) / (np.sqrt(L) + np.sqrt(mu))
    x = np.zeros(problem.d)
    y = x.copy()
    g = problem.grad(y)
    it = 0
    while float(np.linalg.norm(problem.grad(x))) > target:
        if it >= OPTIMUM_MAX_ITERS:
            raise RuntimeError(f"optimum solve exceeded {OPTIMUM_MAX_ITERS} iterations")
        x_new = y - g / L
        y = x_new + beta * (x_new - x)
        x = x_new
        g = problem.grad(y)
        it += 1

    u = np.stack([lifted_grad(problem, m, x) for m in range(problem.M)])
    resid = float(np.linalg.norm(mu * x + u.sum(axis=0)))
    if resid > tol:
        raise RuntimeError(f"first-order residual {resid:.3e} exceeds tol {tol:.3e}")
    return Optimum(x=x, u=u, f=problem.value(x))
