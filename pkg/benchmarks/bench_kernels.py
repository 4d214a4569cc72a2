"""Timing comparison of the compiled kernels against the numpy fallback.

Run with `python3 benchmarks/bench_kernels.py [--repeat N]`. Sizes mirror the
training hot loop: gelu over batch*grid*width activations, pairwise_rho over
energy-score ensembles.
"""

import argparse
import time

import numpy as np

from genuq import kernels


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def bench(repeat):
    rng = np.random.default_rng(0)
    x = rng.standard_normal(8 * 64 * 4096)  # n_z * batch * (grid * width)
    g = rng.standard_normal(x.size)
    a = rng.standard_normal((128, 64))
    b = rng.standard_normal((128, 64))

    cases = []
    _, phi = kernels.gelu_fwd(x)
    cases.append(("gelu_fwd", lambda: kernels.gelu_fwd(x)))
    cases.append(("gelu_bwd", lambda: kernels.gelu_bwd(x, phi, g)))
    for beta in (1.0, 1.5):
        cases.append(
            (f"pairwise_rho b={beta:g}", lambda beta=beta: kernels.pairwise_rho(a, b, beta))
        )

    backends = kernels.available_backends()
    print(f"available backends: {', '.join(backends)}")
    header = f"{'kernel':<22}" + "".join(f"{name:>14}" for name in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10}"
    print(header)
    for label, fn in cases:
        row = [f"{label:<22}"]
        per_backend = {}
        for name in backends:
            old = kernels.use_backend(name)
            try:
                fn()  # warm up
                per_backend[name] = best_of(fn, repeat)
            finally:
                kernels.use_backend(old)
            row.append(f"{per_backend[name] * 1e3:>12.2f}ms")
        if len(backends) == 2:
            ratio = per_backend["numpy"] / per_backend["compiled"]
            row.append(f"{ratio:>9.2f}x")
        print("".join(row))


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5, help="best-of repetitions")
    args = parser.parse_args()
    bench(args.repeat)


if __name__ == "__main__":
    main()
