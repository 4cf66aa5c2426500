"""Cohort samplers, their unbiased estimators and variance constants.

Three schemes are implemented:

* ``uniform_nice`` -- a uniformly random C-subset, estimator
  ``(1/C) sum_{m in S} a_m``;
* ``multisampling`` -- C categorical draws with replacement from probabilities
  p, estimator ``(1/C) sum_j a_{chi_j} / (M p_{chi_j})``;
* ``independent`` -- each client joins via its own Bernoulli(p_m) coin,
  estimator ``(1/M) sum_{m in S} a_m / p_m``.

Each scheme carries weighted variance constants (A, B, w) such that

    E||S(a) - abar||^2 <= (A/M^2) sum_m ||a_m||^2 / w_m - B ||abar||^2

with abar = (1/M) sum a_m; for multisampling and independent sampling the
bound is an equality, which the enumeration verifier checks exactly.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .objective import Problem

__all__ = [
    "SamplingScheme",
    "ABConstants",
    "CohortDraw",
    "uniform_nice",
    "multisampling",
    "independent",
    "ab_constants",
    "draw",
    "estimate",
    "participation_prob",
    "verify_ab",
    "importance_probs_exact",
    "importance_probs_fixed_point",
]


@dataclass(frozen=True)
class SamplingScheme:
    kind: str  # "uniform_nice" | "multisampling" | "independent"
    M: int
    C: int  # cohort size; for independent, not used for drawing
    p: np.ndarray

    def __post_init__(self):
        if self.kind not in ("uniform_nice", "multisampling", "independent"):
            raise ValueError(f"unknown sampling kind {self.kind!r}")
        if self.p.shape != (self.M,):
            raise ValueError("probability vector must have length M")
        if self.kind == "uniform_nice" and not 1 <= self.C <= self.M:
            raise ValueError("uniform_nice needs 1 <= C <= M")
        if self.kind == "multisampling":
            if abs(self.p.sum() - 1.0) > 1e-12 or (self.p <= 0).any():
                raise ValueError("multisampling needs p in the open simplex")
        if self.kind == "independent":
            if ((self.p <= 0) | (self.p > 1)).any():
                raise ValueError("independent needs p_m in (0, 1]")


def uniform_nice(M: int, C: int) -> SamplingScheme:
    return SamplingScheme("uniform_nice", M, C, np.full(M, C / M))


def multisampling(p: np.ndarray, C: int) -> SamplingScheme:
    p = np.asarray(p, dtype=np.float64)
    return SamplingScheme("multisampling", len(p), C, p)


def independent(p: np.ndarray) -> SamplingScheme:
    p = np.asarray(p, dtype=np.float64)
    return SamplingScheme("independent", len(p), int(round(p.sum())), p)


@dataclass(frozen=True)
class ABConstants:
    A: float
    B: float
    w: np.ndarray


@dataclass(frozen=True)
class CohortDraw:
    """members: draw outcomes with multiplicity for multisampling, a set
    otherwise (always stored sorted for reproducibility)."""

    members: tuple[int, ...]

    def participants(self) -> tuple[int, ...]:
        return tuple(sorted(set(self.members)))


def ab_constants(s: SamplingScheme) -> ABConstants:
    M = s.M
    if s.kind == "multisampling":
        return ABConstants(A=1.0 / s.C, B=1.0 / s.C, w=s.p.copy())
    if s.kind == "independent":
        # clients with p_m = 1 are deterministic: zero variance contribution,
        # excluded from the normalization
        random_mask = s.p < 1.0
        if not random_mask.any():
            return ABConstants(A=0.0, B=0.0, w=np.full(M, 1.0 / M))
        odds = np.zeros(M)
        odds[random_mask] = s.p[random_mask] / (1.0 - s.p[random_mask])
        total = odds.sum()
        return ABConstants(A=1.0 / total, B=0.0, w=odds / total)
    # uniform_nice: A = B = (M-C)/(C(M-1)), uniform weights; this choice makes
    # (1-B)M + A/w_m = M, the constant appearing in the uniform stepsize rule
    denom = s.C * max(M - 1, 1)
    A = (M - s.C) / denom
    return ABConstants(A=A, B=A, w=np.full(M, 1.0 / M))


def draw(s: SamplingScheme, rng: np.random.Generator) -> CohortDraw:
    if s.kind == "uniform_nice":
        # partial Fisher-Yates with vectorized swap-target draws
        pool = np.arange(s.M)
        js = rng.integers(np.arange(s.C), s.M)
        for i, j in enumerate(js):
            pool[i], pool[j] = pool[j], pool[i]
        return CohortDraw(tuple(sorted(int(v) for v in pool[: s.C])))
    if s.kind == "multisampling":
        cdf = np.cumsum(s.p)
        picks = np.searchsorted(cdf, rng.random(s.C), side="right")
        picks = np.minimum(picks, s.M - 1)
        return CohortDraw(tuple(sorted(int(v) for v in picks)))
    coins = rng.random(s.M) < s.p
    return CohortDraw(tuple(int(m) for m in np.nonzero(coins)[0]))


def estimate(s: SamplingScheme, dr: CohortDraw, a: np.ndarray) -> np.ndarray:
    """Unbiased estimate of (1/M) sum_m a_m from one draw; a has shape (M, d)."""
    a = np.asarray(a, dtype=np.float64)
    if a.shape[0] != s.M:
        raise ValueError(f"expected {s.M} vectors, got {a.shape[0]}")
    out = np.zeros(a.shape[1])
    if s.kind == "uniform_nice":
        for m in dr.members:
            out += a[m]
        return out / s.C
    if s.kind == "multisampling":
        for m in dr.members:
            out += a[m] / (s.M * s.p[m])
        return out / s.C
    for m in dr.members:
        out += a[m] / s.p[m]
    return out / s.M


def participation_prob(s: SamplingScheme) -> np.ndarray:
    """Probability that each client appears in the cohort at least once."""
    if s.kind == "uniform_nice":
        return np.full(s.M, s.C / s.M)
    if s.kind == "multisampling":
        return 1.0 - (1.0 - s.p) ** s.C
    return s.p.copy()


def _enumerate_outcomes(s: SamplingScheme):
    """Yield (probability, CohortDraw) over all outcomes, lexicographic order."""
    M = s.M
    if s.kind == "uniform_nice":
        total = 0
        for subset in itertools.combinations(range(M), s.C):
            total += 1
        for subset in itertools.combinations(range(M), s.C):
            yield 1.0 / total, CohortDraw(subset)
    elif s.kind == "multisampling":
        for picks in itertools.product(range(M), repeat=s.C):
            prob = float(np.prod([s.p[m] for m in picks]))
            yield prob, CohortDraw(tuple(sorted(picks)))
    else:
        for bits in itertools.product((0, 1), repeat=M):
            prob = 1.0
            for m, bit in enumerate(bits):
                prob *= s.p[m] if bit else 1.0 - s.p[m]
            yield prob, CohortDraw(tuple(m for m in range(M) if bits[m]))


def verify_ab(
    s: SamplingScheme,
    a: np.ndarray,
    mode: str = "enumerate",
    trials: int = 100_000,
    seed: int = 0,
) -> dict:
    """Check the weighted variance inequality for one vector tuple.

    ``enumerate`` computes the estimator variance exactly over all outcomes and
    asserts equality with the closed form for multisampling/independent
    (tolerance 1e-12) and the inequality for uniform_nice; ``monte_carlo``
    checks agreement within 5 standard errors.
    """
    a = np.asarray(a, dtype=np.float64)
    abar = a.mean(axis=0)
    ab = ab_constants(s)
    with np.errstate(divide="ignore"):
        weighted = np.where(
            ab.w > 0, (a * a).sum(axis=1) / np.where(ab.w > 0, ab.w, 1.0), 0.0
        )
    rhs = ab.A / s.M**2 * weighted.sum() - ab.B * float(abar @ abar)

    if mode == "enumerate":
        if s.M > 6 or (s.kind == "multisampling" and s.C > 3):
            raise ValueError("enumeration limited to M <= 6 (and C <= 3 with replacement)")
        lhs = 0.0
        total_prob = 0.0
        for prob, dr in _enumerate_outcomes(s):
            diff = estimate(s, dr, a) - abar
            lhs += prob * float(diff @ diff)
            total_prob += prob
        assert abs(total_prob - 1.0) < 1e-12
        scale = max(rhs, float(abar @ abar), 1.0)
        if s.kind in ("multisampling", "independent"):
            ok = abs(lhs - rhs) <= 1e-12 * scale
        else:
            ok = lhs <= rhs + 1e-12 * scale
        stderr = 0.0
    else:
        rng = np.random.default_rng(seed)
        vals = np.empty(trials)
        for t in range(trials):
            diff = estimate(s, draw(s, rng), a) - abar
            vals[t] = float(diff @ diff)
        lhs = float(vals.mean())
        stderr = float(vals.std(ddof=1) / np.sqrt(trials))
        ok = lhs <= rhs + 5.0 * stderr

    return {
        "scheme": s.kind,
        "mode": mode,
        "lhs": lhs,
        "rhs": rhs,
        "stderr": stderr,
        "ok": bool(ok),
    }


def _tau_scale(problem: Problem) -> float:
    return (8.0 / 3.0) * np.sqrt(problem.L_bar * problem.mu * problem.M)


def _check_tau_floor(problem: Problem, tau: np.ndarray):
    floor = 8.0 * np.array([c.mu for c in problem.clients]) / (3.0 * problem.M)
    bad = np.nonzero(tau < floor * (1.0 - 1e-12))[0]
    if bad.size:
        m = int(bad[0])
        raise ValueError(
            f"dual stepsize floor violated for client {m}: "
            f"tau={tau[m]:.3e} < {floor[m]:.3e}"
        )


def importance_probs_exact(problem: Problem) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form importance probabilities p_m proportional to sqrt(L_m), with
    matched dual stepsizes tau_m = (8/3) sqrt(L_bar mu M) p_m (cohort size 1)."""
    sq = np.sqrt(np.array([c.L for c in problem.clients]))
    p = sq / sq.sum()
    tau = _tau_scale(problem) * p
    _check_tau_floor(problem, tau)
    return p, tau


def importance_probs_fixed_point(
    problem: Problem, tol: float = 1e-10, max_iter: int = 100_000
) -> tuple[np.ndarray, np.ndarray]:
    """Self-consistent importance probabilities for cohort size 1.

    Solves p_m = sqrt(L_Fm + tau_m)/sum_j sqrt(L_Fj + tau_j) with
    tau_m = (8/3) sqrt(L_bar mu M) p_m by plain fixed-point iteration from the
    uniform start; the returned pair satisfies both equations within 10*tol.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    M = problem.M
    L_F = problem.L_F
    c = _tau_scale(problem)
    if np.ptp(L_F) == 0.0:
        # symmetric fixed point, returned exactly
        p = np.full(M, 1.0 / M)
        return p, c * p
    p = np.full(M, 1.0 / M)
    for _ in range(max_iter):
        sq = np.sqrt(L_F + c * p)
        p_new = sq / sq.sum()
        if np.max(np.abs(p_new - p)) <= tol:
            p = p_new
            break
        p = p_new
    else:
        raise RuntimeError(
            f"fixed point not reached in {max_iter} iterations; "
            f"residual {np.max(np.abs(p_new - p)):.3e}"
        )
    tau = c * p
    sq = np.sqrt(L_F + tau)
    residual = float(np.max(np.abs(p - sq / sq.sum())))
    if residual > 10.0 * tol:
        raise RuntimeError(f"fixed-point residual {residual:.3e} exceeds {10 * tol:.3e}")
    _check_tau_floor(problem, tau)
    return p, tau
