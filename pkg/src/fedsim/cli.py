"""Experiment runner, verification suites and comparison tables.

Subcommands:

* ``run config.json`` — execute the configured driver for every seed, writing
  one metrics CSV per seed plus a JSON metadata sidecar; byte-identical on
  rerun with the same config and seed.
* ``verify {ab,compressor,gradients,contraction,fixed_point}`` — run one of
  the property suites and exit 0/1.
* ``compare a.json b.json ... --target 1e-4`` — run several configs on the
  same problem and report the median budget (uplink floats or rounds) each
  needs to reach the relative distance target.

Exit codes: 0 success, 1 verification/assertion failure, 2 config error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import algo, compress, localsolve, sampling
from .dataset import ClientData, Sample, parse_libsvm, partition_clients, synth_quadratics
from .objective import LogisticClient, Problem, QuadraticClient, lifted_grad, set_kappa

__all__ = ["main", "load_config", "build_problem", "run", "compare", "verify"]

CSV_HEADER = "round,uplink_floats,downlink_floats,dist_sq,fgap,lyapunov"


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configuration


DEFAULTS = {
    "algorithm": "cc",
    "cohort_size": 10,
    "compressor": {"kind": "identity"},
    "sampling": {"kind": "uniform_nice"},
    "stepsizes": {"source": "auto"},
    "rounds": 100,
    "seeds": [0],
    "local_solver": {"mode": "certificate"},
    "output_dir": "out",
    "target_rel_dist_sq": None,
    "optimum_tol": 1e-10,
}


def load_config(path: str | Path, overrides: list[str] | None = None) -> dict:
    """Read a JSON run configuration, apply ``key.path=json-value`` overrides,
    fill defaults and validate cross-field consistency."""
    try:
        cfg = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, _, raw = item.partition("=")
        try:
            val = json.loads(raw)
        except json.JSONDecodeError:
            val = raw
        node = cfg
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = val
    merged = {**DEFAULTS, **cfg}
    for k in ("compressor", "sampling", "stepsizes", "local_solver"):
        merged[k] = {**DEFAULTS[k], **(cfg.get(k) or {})}
    validate_config(merged)
    return merged


def validate_config(cfg: dict):
    if "problem" not in cfg:
        raise ConfigError("config needs a 'problem' section")
    algo_kind = cfg["algorithm"]
    if algo_kind not in ("cc", "ab"):
        raise ConfigError(f"algorithm must be 'cc' or 'ab', got {algo_kind!r}")
    if algo_kind == "ab" and cfg["compressor"]["kind"] != "identity":
        raise ConfigError("compression is only available with the 'cc' driver")
    if algo_kind == "cc" and cfg["sampling"]["kind"] != "uniform_nice":
        raise ConfigError("the 'cc' driver only supports uniform cohorts")
    probs = cfg["sampling"].get("probs")
    if probs in ("importance_exact", "importance_fixed_point") and cfg["sampling"][
        "kind"
    ] != "multisampling":
        raise ConfigError("importance probabilities require multisampling")
    if cfg["rounds"] < 0:
        raise ConfigError("rounds must be >= 0")
    if not cfg["seeds"]:
        raise ConfigError("need at least one seed")
    mode = cfg["local_solver"]["mode"]
    if mode not in ("certificate", "fixed_k", "exact"):
        raise ConfigError(f"unknown local solver mode {mode!r}")
    if mode == "fixed_k" and "K" not in cfg["local_solver"]:
        raise ConfigError("fixed_k solver needs K")


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(
        json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    ).hexdigest()[:16]


# ---------------------------------------------------------------------------
# problem construction


def _rescale_clients(shards: list[ClientData], ratio: float) -> tuple[list[ClientData], list[float]]:
    """Scale client m's feature rows by a geometric factor so the per-client
    data smoothness constants spread over a ``ratio`` range."""
    M = len(shards)
    factors = [ratio ** (m / (2 * max(M - 1, 1))) for m in range(M)]
    out = []
    for shard, g in zip(shards, factors):
        scaled = [
            Sample(label=s.label, features={i: v * g for i, v in s.features.items()})
            for s in shard.samples
        ]
        out.append(ClientData(samples=scaled, dim=shard.dim))
    return out, factors


def build_problem(pcfg: dict) -> tuple[Problem, dict]:
    """Instantiate the problem described by the config's ``problem`` section.

    Returns the problem plus a metadata dict of measured constants.
    """
    kind = pcfg.get("kind")
    meta: dict = {"kind": kind}
    if kind == "libsvm":
        text = Path(pcfg["path"]).read_text()
        samples, dim = parse_libsvm(text)
        M, N = int(pcfg["M"]), int(pcfg["N"])
        shards = partition_clients(samples, M, N, dim)
        ratio = pcfg.get("rescale_ratio")
        if ratio:
            shards, factors = _rescale_clients(shards, float(ratio))
            meta["rescale_factors"] = [factors[0], factors[-1]]
        problem = Problem([LogisticClient(s, lam=1.0) for s in shards])
        kappa = pcfg.get("kappa")
        if kappa:
            problem = set_kappa(problem, float(kappa))
        meta["lambda"] = problem.clients[0].lam
    elif kind == "quadratic":
        specs = synth_quadratics(
            M=int(pcfg["M"]),
            d=int(pcfg["d"]),
            kappa=float(pcfg["kappa"]),
            ratio=float(pcfg["ratio"]),
            seed=int(pcfg.get("seed", 0)),
        )
        problem = Problem([QuadraticClient.from_spec(s) for s in specs])
    else:
        raise ConfigError(f"unknown problem kind {kind!r}")
    meta.update(
        d=problem.d,
        M=problem.M,
        mu=problem.mu,
        L_max=problem.L_max,
        L_bar=problem.L_bar,
        L_min=problem.L_min,
    )
    return problem, meta


def build_scheme(cfg: dict, problem: Problem) -> sampling.SamplingScheme:
    scfg = cfg["sampling"]
    kind = scfg["kind"]
    C = int(cfg["cohort_size"])
    if kind == "uniform_nice":
        return sampling.uniform_nice(problem.M, C)
    if kind == "multisampling":
        probs = scfg.get("probs", "uniform")
        if probs == "uniform":
            p = np.full(problem.M, 1.0 / problem.M)
        elif probs == "importance_exact":
            p, _ = sampling.importance_probs_exact(problem)
        elif probs == "importance_fixed_point":
            p, _ = sampling.importance_probs_fixed_point(problem)
        else:
            p = np.asarray(probs, dtype=np.float64)
        return sampling.multisampling(p, C)
    if kind == "independent":
        probs = scfg.get("probs")
        if probs is None:
            p = np.full(problem.M, C / problem.M)
        elif np.isscalar(probs):
            p = np.full(problem.M, float(probs))
        else:
            p = np.asarray(probs, dtype=np.float64)
        return sampling.independent(p)
    raise ConfigError(f"unknown sampling kind {kind!r}")


def build_compressor(cfg: dict, d: int) -> compress.Compressor:
    ccfg = cfg["compressor"]
    if ccfg["kind"] == "identity":
        return compress.identity(d)
    if ccfg["kind"] == "rand_k":
        return compress.rand_k(d, int(ccfg["k"]))
    raise ConfigError(f"unknown compressor kind {ccfg['kind']!r}")


def build_stepsizes(cfg, problem, scheme, compressor):
    sscfg = cfg["stepsizes"]
    src = sscfg.get("source", "auto")
    if src == "manual":
        return algo.stepsizes_manual(
            problem,
            float(sscfg["gamma"]),
            np.asarray(sscfg["tau"], dtype=np.float64),
            scheme=scheme if cfg["algorithm"] == "ab" else None,
        )
    if cfg["algorithm"] == "cc":
        return algo.stepsizes_cc(problem, int(cfg["cohort_size"]), compressor.omega)
    return algo.stepsizes_ab(problem, scheme)


# ---------------------------------------------------------------------------
# run


def _fmt(v: float) -> str:
    return f"{v:.17g}"


# problems and reference optima are deterministic functions of their config
# section; cache them so compare() does not redo the expensive solves per config
_PROBLEM_CACHE: dict = {}
_OPTIMUM_CACHE: dict = {}


def _cached_problem(pcfg: dict):
    key = json.dumps(pcfg, sort_keys=True)
    if key not in _PROBLEM_CACHE:
        _PROBLEM_CACHE[key] = build_problem(pcfg)
    return _PROBLEM_CACHE[key]


def _cached_optimum(pcfg: dict, problem, tol: float):
    key = (json.dumps(pcfg, sort_keys=True), tol)
    if key not in _OPTIMUM_CACHE:
        _OPTIMUM_CACHE[key] = algo.reference_optimum(problem, tol=tol)
    return _OPTIMUM_CACHE[key]


def run(cfg: dict, quiet: bool = False) -> dict:
    """Execute all seeds of one configuration; returns a summary dict with the
    per-seed output paths and final metrics."""
    problem, meta = _cached_problem(cfg["problem"])
    scheme = build_scheme(cfg, problem)
    compressor = build_compressor(cfg, problem.d)
    config = build_stepsizes(cfg, problem, scheme, compressor)
    C = int(cfg["cohort_size"])
    is_cc = cfg["algorithm"] == "cc"
    if is_cc:
        rho = algo.contraction_rate(problem, config, C=C, omega=compressor.omega)
    else:
        rho = algo.contraction_rate(problem, config, scheme=scheme)
    optimum = _cached_optimum(cfg["problem"], problem, float(cfg["optimum_tol"]))

    out_dir = Path(cfg["output_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    chash = config_hash(cfg)
    mode = cfg["local_solver"]["mode"]
    K = cfg["local_solver"].get("K")
    target_rel = cfg.get("target_rel_dist_sq")
    try:
        cohort_solver = localsolve.CohortSolver(problem, config.tau)
    except TypeError:
        cohort_solver = None

    summary = {"config_hash": chash, "seeds": {}, "rho": rho, "meta": meta}
    for seed in cfg["seeds"]:
        if is_cc:
            tracker = algo.LyapunovTracker.for_cc(problem, config, C, compressor.omega)
        else:
            tracker = algo.LyapunovTracker.for_ab(problem, config, scheme)
        state = algo.init_state(problem)
        rows = []
        up = down = 0
        dist0 = None

        def record(state, up, down):
            dx = state.x - optimum.x
            dist = float(dx @ dx)
            fgap = problem.value(state.x) - optimum.f
            lyap = algo.lyapunov(state, optimum, tracker)
            rows.append(
                f"{state.t},{up},{down},{_fmt(dist)},{_fmt(fgap)},{_fmt(lyap)}"
            )
            return dist

        dist0 = record(state, up, down)
        for _ in range(int(cfg["rounds"])):
            if is_cc:
                state, info = algo.round_cc(
                    problem, state, compressor, C, config, seed, mode, K,
                    cohort_solver=cohort_solver,
                )
            else:
                state, info = algo.round_ab(
                    problem, state, scheme, config, seed, mode, K,
                    cohort_solver=cohort_solver,
                )
            up += info.uplink_floats
            down += info.downlink_floats
            dist = record(state, up, down)
            if target_rel is not None and dist <= target_rel * dist0:
                break

        csv_path = out_dir / f"metrics_seed{seed}.csv"
        csv_path.write_text(CSV_HEADER + "\n" + "\n".join(rows) + "\n")
        sidecar = {
            "seed": seed,
            "config_hash": chash,
            "problem": meta,
            "gamma": config.gamma,
            "tau": [float(t) for t in config.tau],
            "stepsize_source": config.source,
            "rho": rho,
            "rounds_run": state.t,
            "initial_state": "x0 = 0, u0 = 0",
        }
        (out_dir / f"metrics_seed{seed}.json").write_text(
            json.dumps(sidecar, indent=2, sort_keys=True) + "\n"
        )
        summary["seeds"][seed] = {
            "csv": str(csv_path),
            "rounds_run": state.t,
            "final_dist_sq": float((state.x - optimum.x) @ (state.x - optimum.x)),
        }
        if not quiet:
            print(
                f"seed {seed}: {state.t} rounds, uplink {up} floats, "
                f"dist_sq {summary['seeds'][seed]['final_dist_sq']:.3e}"
            )
    return summary


# ---------------------------------------------------------------------------
# compare


def budget_to_target(csv_path: str | Path, target_rel: float, budget: str):
    """First cumulative budget value at which dist_sq <= target_rel * dist_sq(0);
    None when the run never reaches the target (censored)."""
    lines = Path(csv_path).read_text().splitlines()
    if lines[0] != CSV_HEADER:
        raise ConfigError(f"{csv_path}: unexpected CSV header")
    col = {"uplink_floats": 1, "rounds": 0}[budget]
    dist0 = None
    for line in lines[1:]:
        parts = line.split(",")
        dist = float(parts[3])
        if dist0 is None:
            dist0 = dist
        if dist <= target_rel * dist0:
            return float(parts[col])
    return None


def compare(
    config_paths: list[str], target_rel: float, budget: str, quiet: bool = False
) -> list[dict]:
    """Run each config with early stopping at the target and report the median
    budget to reach it across seeds; censored seeds count as infinity."""
    cfgs = [load_config(p) for p in config_paths]
    base = cfgs[0]
    for c in cfgs[1:]:
        if c["problem"] != base["problem"] or c["seeds"] != base["seeds"]:
            raise ConfigError("compare requires identical problem and seeds")
    table = []
    for path, cfg in zip(config_paths, cfgs):
        cfg = dict(cfg)
        cfg["target_rel_dist_sq"] = target_rel
        summary = run(cfg, quiet=True)
        vals = []
        censored = 0
        for seed in cfg["seeds"]:
            v = budget_to_target(summary["seeds"][seed]["csv"], target_rel, budget)
            if v is None:
                censored += 1
                vals.append(np.inf)
            else:
                vals.append(v)
        med = float(np.median(vals))
        table.append(
            {"config": path, "median": med, "censored": censored, "values": vals}
        )
        if not quiet:
            med_s = "censored" if np.isinf(med) else f"{med:g}"
            print(f"{path}: median {budget} to target = {med_s} ({censored} censored)")
    return table


# ---------------------------------------------------------------------------
# verify suites


def _suite_ab(rng):
    items = []
    for M, C in [(4, 2), (5, 3), (5, 1), (3, 2)]:
        schemes = [
            sampling.uniform_nice(M, C),
            sampling.multisampling(rng.dirichlet(np.ones(M)), C),
            sampling.independent(rng.uniform(0.2, 1.0, size=M)),
        ]
        for s in schemes:
            a = rng.standard_normal((M, 3))
            rep = sampling.verify_ab(s, a, mode="enumerate")
            items.append({"name": f"{s.kind} M={M} C={C}", **rep})
    return items


def _suite_compressor(rng):
    items = []
    for d in (3, 5, 8):
        for k in range(1, d + 1):
            c = compress.rand_k(d, k)
            try:
                worst, ok = compress.certify_variance(c)
            except compress.CertificationError as e:
                worst, ok = str(e), False
            items.append({"name": f"rand_k d={d} k={k}", "measured": worst, "ok": ok})
    c = compress.rand_k(119, 5)
    worst, ok = compress.certify_variance(c, trials=2000)
    items.append({"name": "rand_k d=119 k=5 (monte carlo)", "measured": worst, "ok": ok})
    return items


def _fd_grad(fun, x, h=1e-5):
    g = np.zeros_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (fun(x + e) - fun(x - e)) / (2 * h)
    return g


def _suite_gradients(rng):
    from .dataset import ClientData as _CD
    from .localsolve import Subproblem, psi_grad

    items = []
    samples, dim = parse_libsvm(
        "\n".join(
            f"{'+1' if rng.random() < 0.5 else '-1'} "
            + " ".join(f"{j + 1}:{rng.standard_normal():.6f}" for j in range(6))
            for _ in range(12)
        )
    )
    shards = partition_clients(samples, 3, 4, dim)
    problem = Problem([LogisticClient(s, lam=0.3) for s in shards])
    for m, c in enumerate(problem.clients):
        x = rng.standard_normal(problem.d)
        err = np.linalg.norm(c.grad(x) - _fd_grad(c.value, x)) / max(
            np.linalg.norm(c.grad(x)), 1e-12
        )
        items.append({"name": f"logistic client {m} grad", "err": float(err), "ok": err <= 1e-6})
        lg = lifted_grad(problem, m, x)
        lifted_val = lambda z, c=c: (c.value(z) - 0.5 * c.mu * float(z @ z)) / problem.M
        err = np.linalg.norm(lg - _fd_grad(lifted_val, x)) / max(np.linalg.norm(lg), 1e-12)
        items.append({"name": f"lifted client {m} grad", "err": float(err), "ok": err <= 1e-6})
        sub = Subproblem(m, 0.7, rng.standard_normal(problem.d), rng.standard_normal(problem.d))
        pg = psi_grad(problem, sub, x)
        psi_val = lambda z, c=c, sub=sub: lifted_val(z) + 0.5 * sub.tau * float(
            (z - sub.target) @ (z - sub.target)
        )
        err = np.linalg.norm(pg - _fd_grad(psi_val, x)) / max(np.linalg.norm(pg), 1e-12)
        items.append({"name": f"subproblem client {m} grad", "err": float(err), "ok": err <= 1e-6})
    return items


def _small_quadratic(M=6, d=8, kappa=50.0, ratio=5.0, seed=3):
    specs = synth_quadratics(M=M, d=d, kappa=kappa, ratio=ratio, seed=seed)
    return Problem([QuadraticClient.from_spec(s) for s in specs])


def _suite_contraction(rng):
    problem = _small_quadratic()
    optimum = algo.reference_optimum(problem, tol=1e-12)
    items = []
    # one compressed-cohort and one general-sampling configuration
    C = 3
    comp = compress.rand_k(problem.d, 4)
    cfg = algo.stepsizes_cc(problem, C, comp.omega)
    rho = algo.contraction_rate(problem, cfg, C=C, omega=comp.omega)
    tracker = algo.LyapunovTracker.for_cc(problem, cfg, C, comp.omega)
    state0 = algo.AlgorithmState(
        x=optimum.x + rng.standard_normal(problem.d),
        u=optimum.u + 0.1 * rng.standard_normal((problem.M, problem.d)),
        v=np.zeros(problem.d),
    )
    state0.v = state0.u.sum(axis=0)
    psi0 = algo.lyapunov(state0, optimum, tracker)
    ratios = []
    for seed in range(300):
        st, _ = algo.round_cc(problem, state0, comp, C, cfg, seed, "exact")
        ratios.append(algo.lyapunov(st, optimum, tracker) / psi0)
    mean = float(np.mean(ratios))
    items.append(
        {"name": "compressed cohort mean contraction", "mean": mean,
         "bound": (1 - rho) * 1.05, "ok": mean <= (1 - rho) * 1.05}
    )
    scheme = sampling.uniform_nice(problem.M, C)
    cfg = algo.stepsizes_ab(problem, scheme)
    rho = algo.contraction_rate(problem, cfg, scheme=scheme)
    tracker = algo.LyapunovTracker.for_ab(problem, cfg, scheme)
    psi0 = algo.lyapunov(state0, optimum, tracker)
    ratios = []
    for seed in range(300):
        st, _ = algo.round_ab(problem, state0, scheme, cfg, seed, "exact")
        ratios.append(algo.lyapunov(st, optimum, tracker) / psi0)
    mean = float(np.mean(ratios))
    items.append(
        {"name": "uniform sampling mean contraction", "mean": mean,
         "bound": (1 - rho) * 1.05, "ok": mean <= (1 - rho) * 1.05}
    )
    return items


def _suite_fixed_point(rng):
    problem = _small_quadratic()
    optimum = algo.reference_optimum(problem, tol=1e-12)
    state = algo.AlgorithmState(
        x=optimum.x.copy(), u=optimum.u.copy(), v=optimum.u.sum(axis=0)
    )
    items = []
    comp = compress.rand_k(problem.d, 4)
    cfg = algo.stepsizes_cc(problem, 3, comp.omega)
    st, _ = algo.round_cc(problem, state, comp, 3, cfg, 0, "exact")
    drift = float(np.linalg.norm(st.x - optimum.x) + np.linalg.norm(st.u - optimum.u))
    items.append({"name": "compressed cohort fixed point", "drift": drift, "ok": drift <= 1e-9})
    scheme = sampling.uniform_nice(problem.M, 3)
    cfg = algo.stepsizes_ab(problem, scheme)
    st, _ = algo.round_ab(problem, state, scheme, cfg, 0, "exact")
    drift = float(np.linalg.norm(st.x - optimum.x) + np.linalg.norm(st.u - optimum.u))
    items.append({"name": "uniform sampling fixed point", "drift": drift, "ok": drift <= 1e-9})
    return items


SUITES = {
    "ab": _suite_ab,
    "compressor": _suite_compressor,
    "gradients": _suite_gradients,
    "contraction": _suite_contraction,
    "fixed_point": _suite_fixed_point,
}


def verify(suite: str, json_out: bool = False) -> bool:
    if suite not in SUITES:
        raise ConfigError(f"unknown suite {suite!r}; choose from {sorted(SUITES)}")
    rng = np.random.default_rng(12345)
    items = SUITES[suite](rng)
    ok = all(item["ok"] for item in items)
    if json_out:
        print(json.dumps({"suite": suite, "ok": ok, "items": items}, default=str))
    else:
        for item in items:
            status = "PASS" if item["ok"] else "FAIL"
            extra = {k: v for k, v in item.items() if k not in ("name", "ok")}
            print(f"[{status}] {item['name']} {extra}")
        print(f"suite {suite}: {'all checks passed' if ok else 'FAILURES'}")
    return ok


# ---------------------------------------------------------------------------
# entry point


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="fedsim",
        description="Deterministic simulator of communication-efficient "
        "federated optimization with verification suites.",
    )
    subs = parser.add_subparsers(dest="cmd", required=True)

    p_run = subs.add_parser("run", help="execute a run configuration")
    p_run.add_argument("config")
    p_run.add_argument("--set", action="append", default=[], dest="overrides",
                       metavar="KEY=VALUE", help="override a config field (JSON value)")
    p_run.add_argument("--quiet", action="store_true")

    p_verify = subs.add_parser("verify", help="run a property suite")
    p_verify.add_argument("suite", choices=sorted(SUITES))
    p_verify.add_argument("--json", action="store_true")

    p_cmp = subs.add_parser("compare", help="compare configs on a shared target")
    p_cmp.add_argument("configs", nargs="+")
    p_cmp.add_argument("--target", type=float, required=True,
                       help="relative dist_sq target (fraction of round-0 value)")
    p_cmp.add_argument("--budget", choices=["uplink_floats", "rounds"],
                       default="uplink_floats")

    args = parser.parse_args(argv)
    try:
        if args.cmd == "run":
            run(load_config(args.config, args.overrides), quiet=args.quiet)
            return 0
        if args.cmd == "verify":
            return 0 if verify(args.suite, json_out=args.json) else 1
        table = compare(args.configs, args.target, args.budget)
        return 0
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
