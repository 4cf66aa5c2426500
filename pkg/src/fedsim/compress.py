"""Unbiased compression operators with certified conic variance."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Compressor",
    "CompressedUpdate",
    "identity",
    "rand_k",
    "compress",
    "decompress",
    "certify_variance",
    "CertificationError",
]


class CertificationError(RuntimeError):
    pass


@dataclass(frozen=True)
class Compressor:
    """Descriptor for an unbiased compressor; immutable and shareable."""

    kind: str  # "identity" | "rand_k"
    d: int
    k: int
    omega: float

    def __post_init__(self):
        if self.kind not in ("identity", "rand_k"):
            raise ValueError(f"unknown compressor kind {self.kind!r}")
        if not 1 <= self.k <= self.d:
            raise ValueError(f"need 1 <= k <= d, got k={self.k}, d={self.d}")
        expected = 0.0 if self.kind == "identity" else self.d / self.k - 1.0
        if self.omega != expected:
            raise ValueError(f"omega mismatch: stored {self.omega}, expected {expected}")


def identity(d: int) -> Compressor:
    return Compressor(kind="identity", d=d, k=d, omega=0.0)


def rand_k(d: int, k: int) -> Compressor:
    return Compressor(kind="rand_k", d=d, k=k, omega=d / k - 1.0)


@dataclass(frozen=True)
class CompressedUpdate:
    """Sparse wire representation: strictly increasing indices, scaled values.

    ``payload_floats`` counts transmitted 64-bit values; indices are not
    counted (sub-float at the dimensions of interest).
    """

    indices: np.ndarray
    values: np.ndarray
    payload_floats: int


def _rand_subset(d: int, k: int, rng: np.random.Generator) -> np.ndarray:
    # partial Fisher-Yates for a uniform k-subset, reproducible per stream
    # (swap targets drawn in one vectorized call)
    pool = np.arange(d)
    js = rng.integers(np.arange(k), d)
    for i, j in enumerate(js):
        pool[i], pool[j] = pool[j], pool[i]
    return np.sort(pool[:k])


def compress(c: Compressor, x: np.ndarray, rng: np.random.Generator) -> CompressedUpdate:
    """Apply the compressor to x, consuming the caller's rng stream."""
    if x.shape != (c.d,):
        raise ValueError(f"expected vector of length {c.d}, got shape {x.shape}")
    if c.kind == "identity":
        return CompressedUpdate(
            indices=np.arange(c.d), values=x.copy(), payload_floats=c.d
        )
    idx = _rand_subset(c.d, c.k, rng)
    return CompressedUpdate(
        indices=idx, values=x[idx] * (c.d / c.k), payload_floats=c.k
    )


def decompress(u: CompressedUpdate, d: int) -> np.ndarray:
    if len(u.indices) and u.indices.max() >= d:
        raise ValueError(f"index {u.indices.max()} out of range for dimension {d}")
    out = np.zeros(d)
    out[u.indices] = u.values
    return out


def certify_variance(
    c: Compressor,
    trials: int = 10_000,
    probes: list[np.ndarray] | None = None,
    seed: int = 0,
) -> tuple[float, bool]:
    """Measure the conic-variance parameter and check it against the stored omega.

    For d <= 8 the relative second moment E||Q(x)-x||^2 / ||x||^2 is computed
    exactly by enumerating all k-subsets and must match d/k - 1 to 1e-12; for
    larger d a Monte Carlo estimate must not exceed omega*(1 + 4/sqrt(trials)).
    Raises :class:`CertificationError` on failure, naming the measured value.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    if probes is None:
        probes = [rng.standard_normal(c.d) for _ in range(5)]
    worst = 0.0
    for x in probes:
        nrm2 = float(x @ x)
        if nrm2 == 0.0:
            continue
        if c.kind == "identity":
            measured = 0.0
        elif c.d <= 8:
            scale = c.d / c.k
            total = 0.0
            count = 0
            for subset in itertools.combinations(range(c.d), c.k):
                q = np.zeros(c.d)
                q[list(subset)] = x[list(subset)] * scale
                total += float((q - x) @ (q - x))
                count += 1
            measured = total / count / nrm2
        else:
            total = 0.0
            for _ in range(trials):
                q = decompress(compress(c, x, rng), c.d)
                total += float((q - x) @ (q - x))
            measured = total / trials / nrm2
        worst = max(worst, measured)
        if c.d <= 8 or c.kind == "identity":
            if abs(measured - c.omega) > 1e-12:
                raise CertificationError(
                    f"exact variance {measured} != omega {c.omega}"
                )
        elif measured > c.omega * (1.0 + 4.0 / np.sqrt(trials)):
            raise CertificationError(
                f"measured variance {measured} exceeds omega bound {c.omega}"
            )
    return worst, True
