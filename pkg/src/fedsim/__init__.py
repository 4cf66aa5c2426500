"""Deterministic simulator of communication-efficient federated optimization.

Implements two linearly convergent server/client loops over strongly convex
finite sums — a compressed uniform-cohort method and a general client-sampling
method — together with verification machinery for the sampling and compression
variance identities and the per-round Lyapunov contraction rates.
"""

from .kernels import HAVE_COMPILED, backend_name

__all__ = ["HAVE_COMPILED", "backend_name"]
__version__ = "1.0.0"
