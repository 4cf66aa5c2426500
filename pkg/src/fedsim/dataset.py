"""LibSVM parsing, client partitioning and synthetic problem generation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Sample",
    "ClientData",
    "ParseError",
    "parse_libsvm",
    "dump_libsvm",
    "partition_clients",
    "synth_quadratics",
    "synth_libsvm_text",
]


class ParseError(ValueError):
    """Raised for malformed LibSVM input, with the offending line number."""


@dataclass(frozen=True)
class Sample:
    """One labelled example: a ±1 label and a sparse feature map (1-based indices)."""

    label: int
    features: dict[int, float]

    def __post_init__(self):
        if self.label not in (-1, 1):
            raise ValueError(f"label must be ±1, got {self.label}")
        for idx in self.features:
            if idx < 1:
                raise ValueError(f"feature index must be >= 1, got {idx}")


@dataclass
class ClientData:
    """The ordered samples held by one client and the ambient feature dimension."""

    samples: list[Sample]
    dim: int

    def dense_matrix(self) -> np.ndarray:
        """Feature rows stacked into an (n_samples, dim) dense array."""
        A = np.zeros((len(self.samples), self.dim))
        for i, s in enumerate(self.samples):
            for idx, val in s.features.items():
                A[i, idx - 1] = val
        return A

    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=np.float64)


def _normalize_label(raw: str, lineno: int) -> int:
    # 0 and -1 both map to -1; +1 and 1 to +1 (covers the common corpora).
    try:
        val = float(raw)
    except ValueError:
        raise ParseError(f"line {lineno}: non-numeric label {raw!r}") from None
    if val in (1.0,):
        return 1
    if val in (0.0, -1.0):
        return -1
    raise ParseError(f"line {lineno}: unsupported label {raw!r}")


def parse_libsvm(text: str | bytes) -> tuple[list[Sample], int]:
    """Parse LibSVM text into samples, returning them in file order.

    Returns ``(samples, dim)`` where ``dim`` is the largest feature index seen
    (0 for empty input).  Raises :class:`ParseError` on malformed lines or a
    duplicate feature index within one line.
    """
    if isinstance(text, bytes):
        text = text.decode("ascii")
    samples: list[Sample] = []
    dim = 0
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        parts = line.split()
        label = _normalize_label(parts[0], lineno)
        feats: dict[int, float] = {}
        for tok in parts[1:]:
            if ":" not in tok:
                raise ParseError(f"line {lineno}: missing colon in {tok!r}")
            idx_s, val_s = tok.split(":", 1)
            try:
                idx = int(idx_s)
                val = float(val_s)
            except ValueError:
                raise ParseError(f"line {lineno}: non-numeric entry {tok!r}") from None
            if idx < 1:
                raise ParseError(f"line {lineno}: feature index {idx} < 1")
            if idx in feats:
                raise ParseError(f"line {lineno}: duplicate feature index {idx}")
            feats[idx] = val
            dim = max(dim, idx)
        samples.append(Sample(label=label, features=feats))
    return samples, dim


def dump_libsvm(samples: list[Sample]) -> str:
    """Serialize samples back to LibSVM text (round-trips with parse_libsvm)."""
    lines = []
    for s in samples:
        toks = [f"{s.label:+d}"]
        toks += [f"{i}:{v:.17g}" for i, v in sorted(s.features.items())]
        lines.append(" ".join(toks))
    return "\n".join(lines) + ("\n" if lines else "")


def partition_clients(samples: list[Sample], M: int, N: int, dim: int) -> list[ClientData]:
    """Split samples into M clients of N contiguous samples each.

    Client ``m`` receives samples ``[m*N, (m+1)*N)`` in file order; surplus
    samples beyond ``M*N`` are dropped.
    """
    if M * N > len(samples):
        raise ValueError(
            f"need {M}*{N}={M * N} samples but only {len(samples)} are available"
        )
    return [ClientData(samples=samples[m * N : (m + 1) * N], dim=dim) for m in range(M)]


def synth_libsvm_text(
    n_samples: int, dim: int, nnz: int, seed: int
) -> str:
    """Generate a sparse binary-classification corpus in LibSVM text format.

    Each sample gets ``nnz`` distinct unit features at uniformly random 1-based
    positions and a label correlated with a hidden linear separator, mimicking
    the shape of small sparse benchmark corpora.  Deterministic per seed.
    """
    if not 1 <= nnz <= dim:
        raise ValueError("need 1 <= nnz <= dim")
    rng = np.random.default_rng(seed)
    w = rng.standard_normal(dim)
    lines = []
    for _ in range(n_samples):
        idx = np.sort(rng.choice(dim, size=nnz, replace=False)) + 1
        score = float(w[idx - 1].sum())
        # flip 10% of labels so the problem is not separable
        label = 1 if score >= 0 else -1
        if rng.random() < 0.1:
            label = -label
        toks = [f"{label:+d}"] + [f"{i}:1" for i in idx]
        lines.append(" ".join(toks))
    return "\n".join(lines) + "\n"


@dataclass
class QuadraticSpec:
    """One client's quadratic objective 0.5*x'Qx - c'x."""

    Q: np.ndarray
    c: np.ndarray
    eigs: np.ndarray = field(repr=False, default=None)


def synth_quadratics(
    M: int, d: int, kappa: float, ratio: float, seed: int
) -> list[QuadraticSpec]:
    """Generate per-client quadratics with controlled conditioning.

    Per-client smoothness constants are spread geometrically over
    ``[L_min, ratio*L_min]`` and every client shares the same strong-convexity
    constant ``mu = L_max/kappa``, so the global condition number
    ``L_max/mu`` equals ``kappa`` exactly.  Bit-reproducible for a fixed seed.
    """
    if kappa <= 1:
        raise ValueError("kappa must be > 1")
    if ratio < 1:
        raise ValueError("ratio must be >= 1")
    if kappa <= ratio:
        raise ValueError("need kappa > ratio so that every L_m exceeds mu")
    rng = np.random.default_rng(seed)
    L_min = 1.0
    L_max = ratio * L_min
    mu = L_max / kappa
    if M > 1:
        L = L_min * ratio ** (np.arange(M) / (M - 1))
    else:
        L = np.array([L_max])
    specs = []
    for m in range(M):
        eigs = np.linspace(mu, L[m], d)
        # random orthogonal basis via QR of a Gaussian matrix
        G = rng.standard_normal((d, d))
        R, _ = np.linalg.qr(G)
        Q = (R * eigs) @ R.T
        Q = 0.5 * (Q + Q.T)
        c = rng.standard_normal(d)
        specs.append(QuadraticSpec(Q=Q, c=c, eigs=eigs))
    return specs
