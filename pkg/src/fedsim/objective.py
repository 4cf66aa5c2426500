"""Client objectives, their smoothness constants and the lifted reformulation.

Two client families are supported: l2-regularized logistic regression over a
client's data shard, and explicit quadratics 0.5*x'Qx - c'x used as test
problems.  The lifted per-client function is
``F_m(x) = (f_m(x) - mu_m/2 ||x||^2) / M`` with smoothness
``L_Fm = (L_m - mu_m)/M``; the drivers only ever touch F_m through its
gradient and through sums over clients.
"""

from __future__ import annotations

import numpy as np

from .dataset import ClientData, QuadraticSpec

__all__ = [
    "LogisticClient",
    "QuadraticClient",
    "Problem",
    "lifted_grad",
    "set_kappa",
    "data_smoothness",
    "power_iteration_lmax",
]

_POWER_TOL = 1e-10
_POWER_MAXIT = 100_000


def softplus(z: np.ndarray) -> np.ndarray:
    """log(1 + exp(z)), stable for the full double range."""
    return np.log1p(np.exp(-np.abs(z))) + np.maximum(z, 0.0)


def sigmoid(z: np.ndarray) -> np.ndarray:
    """1/(1 + exp(-z)), stable on both tails."""
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def power_iteration_lmax(Z: np.ndarray, tol: float = _POWER_TOL, max_iter: int = _POWER_MAXIT) -> float:
    """Largest eigenvalue of Z'Z by power iteration with a fixed-seed start."""
    d = Z.shape[1]
    if d == 0 or not Z.any():
        return 0.0
    rng = np.random.default_rng(0)
    v = rng.standard_normal(d)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = Z.T @ (Z @ v)
        nrm = np.linalg.norm(w)
        if nrm == 0.0:
            return 0.0
        v_new = w / nrm
        lam_new = float(v_new @ (Z.T @ (Z @ v_new)))
        if abs(lam_new - lam) <= tol * max(abs(lam_new), 1e-300):
            return lam_new
        lam, v = lam_new, v_new
    raise RuntimeError(f"power iteration did not converge in {max_iter} iterations")


class LogisticClient:
    """l2-regularized logistic loss over one client's N samples.

    f_m(x) = (1/N) sum_i log(1 + exp(-b_i a_i'x)) + (lam/2)||x||^2
    with L_m = lam + lmax(A'A)/(4N) and mu_m = lam.
    """

    kind = "logistic"

    def __init__(self, data: ClientData, lam: float, data_lmax: float | None = None):
        self.data = data
        self.lam = float(lam)
        A = data.dense_matrix()
        b = data.labels()
        self.Z = np.ascontiguousarray(A * b[:, None])  # rows b_i * a_i
        self.N = len(data.samples)
        self.d = data.dim
        if data_lmax is None:
            data_lmax = power_iteration_lmax(self.Z)
        # Z'Z == A'A since b_i = ±1
        self.data_lmax = float(data_lmax)
        self.L = self.lam + self.data_lmax / (4.0 * self.N)
        self.mu = self.lam

    def value(self, x: np.ndarray) -> float:
        self._check(x)
        z = -self.Z @ x
        return float(np.sum(softplus(z)) / self.N + 0.5 * self.lam * (x @ x))

    def grad(self, x: np.ndarray) -> np.ndarray:
        self._check(x)
        s = sigmoid(-self.Z @ x)
        return -(self.Z.T @ s) / self.N + self.lam * x

    def _check(self, x: np.ndarray):
        if x.shape != (self.d,):
            raise ValueError(f"expected vector of length {self.d}, got shape {x.shape}")


class QuadraticClient:
    """Quadratic client f_m(x) = 0.5 x'Qx - c'x with exact extreme eigenvalues."""

    kind = "quadratic"

    def __init__(self, Q: np.ndarray, c: np.ndarray):
        self.Q = np.asarray(Q, dtype=np.float64)
        self.c = np.asarray(c, dtype=np.float64)
        self.d = self.Q.shape[0]
        eigs = np.linalg.eigvalsh(self.Q)
        self.mu = float(eigs[0])
        self.L = float(eigs[-1])
        if self.mu <= 0:
            raise ValueError("quadratic client must be positive definite")

    @classmethod
    def from_spec(cls, spec: QuadraticSpec) -> "QuadraticClient":
        return cls(spec.Q, spec.c)

    def value(self, x: np.ndarray) -> float:
        self._check(x)
        return float(0.5 * x @ (self.Q @ x) - self.c @ x)

    def grad(self, x: np.ndarray) -> np.ndarray:
        self._check(x)
        return self.Q @ x - self.c

    def _check(self, x: np.ndarray):
        if x.shape != (self.d,):
            raise ValueError(f"expected vector of length {self.d}, got shape {x.shape}")


Client = LogisticClient | QuadraticClient


class Problem:
    """A finite-sum problem over M immutable clients.

    The client tuple is fixed at construction (clients themselves are
    read-only), so the derived constants are computed once and can never go
    stale.  When every client is logistic, full-problem value/gradient
    evaluations run over one stacked data matrix instead of per-client loops.
    """

    def __init__(self, clients: list[Client]):
        if not clients:
            raise ValueError("need at least one client")
        dims = {c.d for c in clients}
        if len(dims) != 1:
            raise ValueError(f"clients disagree on dimension: {sorted(dims)}")
        self.clients = tuple(clients)
        self.d = clients[0].d
        self.M = len(clients)
        mus = np.array([c.mu for c in clients])
        Ls = np.array([c.L for c in clients])
        self.mu = float(mus.mean())
        self.L_bar = float(Ls.mean())
        self.L_max = float(Ls.max())
        self.L_min = float(Ls.min())
        self.L_F = (Ls - mus) / self.M
        self.L_F_max = float(self.L_F.max())
        if all(isinstance(c, LogisticClient) for c in clients):
            self._Z = np.vstack([c.Z for c in clients])
            # per-row weight 1/(M N_m), repeated over each client's rows
            self._w = np.concatenate(
                [np.full(c.N, 1.0 / (self.M * c.N)) for c in clients]
            )
            self._lam_bar = float(np.mean([c.lam for c in clients]))
        else:
            self._Z = None

    def value(self, x: np.ndarray) -> float:
        if self._Z is not None:
            z = -self._Z @ x
            return float(self._w @ softplus(z) + 0.5 * self._lam_bar * (x @ x))
        return float(np.mean([c.value(x) for c in self.clients]))

    def grad(self, x: np.ndarray) -> np.ndarray:
        if self._Z is not None:
            s = self._w * sigmoid(-self._Z @ x)
            return -(self._Z.T @ s) + self._lam_bar * x
        g = np.zeros(self.d)
        for c in self.clients:
            g += c.grad(x)
        return g / self.M


def lifted_grad(problem: Problem, m: int, x: np.ndarray) -> np.ndarray:
    """Gradient of the lifted client function: (grad f_m(x) - mu_m x)/M."""
    c = problem.clients[m]
    return (c.grad(x) - c.mu * x) / problem.M


def data_smoothness(problem: Problem) -> float:
    """max_m lmax(A_m'A_m)/(4N), the data-only part of the smoothness constants."""
    vals = []
    for c in problem.clients:
        if not isinstance(c, LogisticClient):
            raise TypeError("data_smoothness only applies to logistic clients")
        vals.append(c.data_lmax / (4.0 * c.N))
    return max(vals)


def set_kappa(problem: Problem, kappa: float) -> Problem:
    """Return a new problem with the regularization set so that L_max/mu = kappa.

    With all mu_m = lam, choosing lam = L_data_max/(kappa-1) gives
    L_max = lam + L_data_max = lam*kappa.
    """
    if kappa <= 1:
        raise ValueError("kappa must be > 1")
    L_data_max = data_smoothness(problem)
    if L_data_max <= 0:
        raise ValueError("data-only smoothness must be positive")
    lam = L_data_max / (kappa - 1.0)
    clients = [
        LogisticClient(c.data, lam, data_lmax=c.data_lmax) for c in problem.clients
    ]
    return Problem(clients)
