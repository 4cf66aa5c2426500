"""Shared fixtures: small deterministic problems used across test modules."""

import numpy as np
import pytest

from fedsim.dataset import parse_libsvm, partition_clients, synth_libsvm_text, synth_quadratics
from fedsim.objective import LogisticClient, Problem, QuadraticClient


@pytest.fixture(scope="session")
def quad_problem() -> Problem:
    """Well-conditioned quadratic problem: M=8 clients, d=10."""
    specs = synth_quadratics(M=8, d=10, kappa=50.0, ratio=4.0, seed=7)
    return Problem([QuadraticClient.from_spec(s) for s in specs])


@pytest.fixture(scope="session")
def logistic_problem() -> Problem:
    """Small sparse logistic problem: M=5 clients, 6 samples each, d=12."""
    text = synth_libsvm_text(n_samples=30, dim=12, nnz=4, seed=11)
    samples, dim = parse_libsvm(text)
    shards = partition_clients(samples, M=5, N=6, dim=dim)
    return Problem([LogisticClient(s, lam=0.5) for s in shards])


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(20240817)
