"""Benchmark the compiled local-solve kernels against the numpy fallback.

Times the two hot entry points (single-client solve and batched cohort solve)
on a realistic sparse logistic workload and reports per-call medians plus the
speedup.  Both backends are always importable, so no re-run with environment
flags is needed.

Usage: python benchmarks/bench_kernels.py [--repeats N] [--cohort C]
"""

import argparse
import statistics
import time

import numpy as np

from fedsim import algo, kernels
from fedsim.dataset import parse_libsvm, partition_clients, synth_libsvm_text
from fedsim.kernels import _ref
from fedsim.localsolve import CohortSolver
from fedsim.objective import LogisticClient, Problem, set_kappa


def _build_problem() -> Problem:
    text = synth_libsvm_text(n_samples=1605, dim=119, nnz=14, seed=42)
    samples, dim = parse_libsvm(text)
    shards = partition_clients(samples, 107, 15, dim)
    return set_kappa(Problem([LogisticClient(s, lam=1.0) for s in shards]), 1e4)


def _time(fn, repeats: int) -> float:
    """Median wall time of fn over `repeats` calls, in seconds."""
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=50)
    ap.add_argument("--cohort", type=int, default=20)
    args = ap.parse_args()

    if not kernels.HAVE_COMPILED:
        print("compiled backend unavailable; nothing to compare against")
        return 1
    from fedsim.kernels import _core

    problem = _build_problem()
    config = algo.stepsizes_cc(problem, args.cohort, 0.0)
    solver = CohortSolver(problem, config.tau)
    rng = np.random.default_rng(0)
    xhat = 0.01 * rng.standard_normal(problem.d)
    U = 0.001 * rng.standard_normal((problem.M, problem.d))
    members = np.arange(args.cohort, dtype=np.int64)
    tau = float(config.tau[0])

    print(f"problem: M={problem.M}, d={problem.d}, cohort={args.cohort}, "
          f"repeats={args.repeats}")
    print(f"active backend: {kernels.backend_name}")
    rows = []

    # single-client certificate solve
    m = 0
    c = problem.clients[m]
    coef = 1.0 / (problem.M * c.N)
    lf = float(problem.L_F[m])
    b = xhat + U[m] / tau
    tol = solver.thr_coef[m] * 1e-6  # force a multi-step solve
    for name, mod in [("compiled", _core), ("python", _ref)]:
        t = _time(
            lambda mod=mod: mod.solve_logistic_local(
                c.Z, coef, tau, lf, b, xhat, tol, 10_000
            ),
            args.repeats,
        )
        rows.append(("single-client solve", name, t))

    # batched cohort certificate solve
    cohort_args = (
        solver.Z, solver.row_start, solver.row_end, members, solver.tau,
        solver.coef, solver.lf, solver.thr_coef, U, xhat, 1_000_000, -1,
    )
    for name, mod in [("compiled", _core), ("python", _ref)]:
        t = _time(lambda mod=mod: mod.solve_logistic_cohort(*cohort_args),
                  args.repeats)
        rows.append(("cohort solve", name, t))

    print(f"\n{'kernel':<22}{'backend':<10}{'median':>12}")
    for kernel, name, t in rows:
        print(f"{kernel:<22}{name:<10}{t * 1e6:>10.1f}us")
    for kernel in ("single-client solve", "cohort solve"):
        ts = {name: t for k, name, t in rows if k == kernel}
        print(f"{kernel}: compiled is {ts['python'] / ts['compiled']:.1f}x faster")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
