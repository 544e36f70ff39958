"""Benchmark the compiled kernel backend against the pure-numpy fallback.

Runs each kernel on a few representative workload shapes (small batches of
short candidate lists up to large batches of long lists) and reports wall
time per call plus speedup.  Also times one end-to-end gradient evaluation
through the estimator layer under each backend.

Usage:
    python3 benchmarks/bench_kernels.py [--repeats N]
"""

from __future__ import annotations

import argparse
import importlib
import os
import time

import numpy as np


def _make_workload(rng, batch, min_k, max_k, dim):
    sizes = rng.integers(min_k, max_k + 1, size=batch)
    offsets = np.concatenate(([0], np.cumsum(sizes))).astype(np.int64)
    total = int(offsets[-1])
    scores = rng.normal(0.0, 2.0, total)
    features = np.ascontiguousarray(rng.normal(0.0, 1.0, (total, dim)))
    chosen = np.array(
        [int(rng.integers(sizes[t])) for t in range(batch)], dtype=np.int64
    )
    values = rng.random(total)
    return offsets, scores, features, chosen, values


def _time_call(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def bench_kernels(repeats):
    from cfbandit._kernels import _pyfallback as pyk

    try:
        from cfbandit._kernels import _native as nk
    except ImportError:
        print("native backend not built; benchmarking fallback only")
        nk = None

    rng = np.random.default_rng(7)
    shapes = [
        ("batch=64   K= 5..10  d=16", 64, 5, 10, 16),
        ("batch=500  K=20      d=16", 500, 20, 20, 16),
        ("batch=2000 K=50      d=32", 2000, 50, 50, 32),
    ]
    alpha = 5.0

    header = f"{'kernel':<14} {'workload':<26} {'python':>10} {'native':>10} {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for label, batch, lo, hi, dim in shapes:
        offsets, scores, features, chosen, values = _make_workload(
            rng, batch, lo, hi, dim
        )
        probs = pyk.batch_gibbs(scores, offsets, alpha, 0)
        cases = [
            ("batch_gibbs", lambda k: k.batch_gibbs(scores, offsets, alpha, 0)),
            ("segment_argmax", lambda k: k.segment_argmax(scores, offsets)),
            (
                "chosen_stats",
                lambda k: k.chosen_stats(probs, offsets, chosen, features, alpha),
            ),
            (
                "direct_stats",
                lambda k: k.direct_stats(probs, offsets, values, features, alpha),
            ),
        ]
        for name, call in cases:
            t_py = _time_call(lambda: call(pyk), repeats)
            if nk is not None:
                t_nk = _time_call(lambda: call(nk), repeats)
                ratio = t_py / t_nk if t_nk > 0 else float("inf")
                print(
                    f"{name:<14} {label:<26} {t_py * 1e3:>8.3f}ms {t_nk * 1e3:>8.3f}ms {ratio:>7.2f}x"
                )
            else:
                print(f"{name:<14} {label:<26} {t_py * 1e3:>8.3f}ms {'-':>10} {'-':>8}")
        print()


def bench_gradient(repeats):
    """Time one full estimator gradient under each backend."""
    results = {}
    for backend in ("python", "native"):
        os.environ["CFBANDIT_KERNELS"] = backend
        import cfbandit._kernels as kernels

        importlib.reload(kernels)
        if kernels.BACKEND != backend:
            print(f"gradient end-to-end: backend {backend} unavailable, skipping")
            continue
        import cfbandit.estimators as estimators
        import cfbandit.policy as policy_mod
        import cfbandit.sim as sim

        importlib.reload(policy_mod)
        importlib.reload(estimators)
        importlib.reload(sim)

        config = sim.TaskConfig(
            num_train=1000,
            num_validation=50,
            num_test=50,
            num_candidates=20,
            feature_dim=16,
            seed=11,
        )
        dataset, _, logging_weights = sim.generate_task(config)
        policy = policy_mod.GibbsPolicy(logging_weights, alpha=config.alpha)
        rng = np.random.default_rng(3)
        entries = sim.simulate_log(policy, dataset, "stochastic", rng)
        batch = estimators.Batch.from_entries(entries, dataset)
        objective = estimators.Objective("dpm_r")

        def run():
            estimators.gradient(objective, policy, batch)

        run()
        results[backend] = _time_call(run, repeats)

    if results:
        print(f"{'gradient (1000x20, d=16)':<42}", end="")
        for backend in ("python", "native"):
            if backend in results:
                print(f" {backend}={results[backend] * 1e3:.3f}ms", end="")
        if len(results) == 2:
            print(f"  speedup={results['python'] / results['native']:.2f}x", end="")
        print()
    os.environ.pop("CFBANDIT_KERNELS", None)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=7)
    args = parser.parse_args()
    bench_kernels(args.repeats)
    bench_gradient(args.repeats)


if __name__ == "__main__":
    main()
