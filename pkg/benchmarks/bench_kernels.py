"""Time the compiled eigensolver against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 20]

Also times one whole forward pass with spectra under each backend, which is
what a score call actually pays for.
"""
import argparse
import time

import numpy as np

from dextr import _fallback, archspace, kernels, network, proxy

try:
    from dextr import _ext
except ImportError:
    _ext = None


def best_of(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def bench_eig(repeat):
    rng = np.random.default_rng(0)
    print(f"{'n':>4} {'fallback ms':>12} {'compiled ms':>12} {'speedup':>8} {'max |diff|':>11}")
    for n in (8, 16, 32, 64):
        x = rng.standard_normal((n, 3 * n))
        g = x @ x.T
        tf = best_of(lambda: _fallback.jacobi_eigvalsh(g), repeat)
        ef = np.sort(_fallback.jacobi_eigvalsh(g)[0])
        if _ext is None:
            print(f"{n:>4} {tf * 1e3:12.3f} {'n/a':>12}")
            continue
        gc = np.ascontiguousarray(g)
        tc = best_of(lambda: _ext.jacobi_eigvalsh(gc), repeat)
        ec = np.sort(_ext.jacobi_eigvalsh(gc)[0])
        print(f"{n:>4} {tf * 1e3:12.3f} {tc * 1e3:12.3f} {tf / tc:8.1f} {np.max(np.abs(ef - ec)):11.2e}")


def bench_forward(repeat):
    arch = archspace.parse_encoding(
        "|nor_conv_3x3~0|+|nor_conv_3x3~0|nor_conv_3x3~1|+|skip_connect~0|nor_conv_3x3~1|nor_conv_3x3~2|"
    )
    net = archspace.instantiate(arch, seed=42)
    x = proxy.default_data_sample((3, 32, 32), 0)
    saved = kernels.jacobi_eigvalsh
    timings = {}
    for name, fn in (("fallback", _fallback.jacobi_eigvalsh), ("compiled", getattr(_ext, "jacobi_eigvalsh", None))):
        if fn is None:
            continue
        kernels.jacobi_eigvalsh = fn
        try:
            timings[name] = best_of(lambda: network.forward(net, x), repeat)
        finally:
            kernels.jacobi_eigvalsh = saved
    print("forward pass with spectra: " + ", ".join(f"{k} {v * 1e3:.1f} ms" for k, v in timings.items()))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    bench_eig(args.repeat)
    bench_forward(max(1, args.repeat // 4))


if __name__ == "__main__":
    main()
