"""Benchmark the compiled kernel extension against the numpy fallback.

Runs the four sequential kernels (integrate-and-fire scan, LSTM recurrence,
depthwise FIR, edit-distance DP) on training-shaped inputs with both
backends, checks the results agree, and prints per-call times.

Usage: python3 bench/bench_backends.py [--repeat N]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from visr.backend import kernels_py as py

try:
    from visr.backend import _kernels as ext
except ImportError:
    ext = None


def timed(fn, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def bench_case(name, make_args, run, check, repeat):
    args = make_args(np.random.default_rng(0))
    t_py, out_py = timed(lambda: run(py, *args), repeat)
    if ext is None:
        print(f"{name:14s} py {t_py * 1e3:8.3f} ms   ext (not built)")
        return
    t_ext, out_ext = timed(lambda: run(ext, *args), repeat)
    check(out_py, out_ext)
    print(f"{name:14s} py {t_py * 1e3:8.3f} ms   ext {t_ext * 1e3:8.3f} ms   "
          f"speedup {t_py / t_ext:6.1f}x")


def close(a, b):
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    r = args.repeat

    bench_case(
        "cif_forward",
        lambda rng: (rng.standard_normal((400, 64)),
                     rng.random(400) * 0.5),
        lambda mod, h, a: mod.cif_forward(h, a, 1.0, 0.5, -1)[0],
        close, r)

    def cif_bwd_args(rng):
        h = rng.standard_normal((400, 64))
        a = rng.random(400) * 0.5
        fired, weights, fpf = py.cif_forward(h, a, 1.0, 0.5, -1)
        return h, weights, fpf, rng.standard_normal(fired.shape)

    bench_case(
        "cif_backward",
        cif_bwd_args,
        lambda mod, h, w, f, g: mod.cif_backward(g, h, w, f)[0],
        close, r)

    def lstm_args(rng):
        k, hdim = 120, 64
        return (rng.standard_normal((k, 4 * hdim)),
                rng.standard_normal((4 * hdim, hdim)) * 0.1)

    bench_case(
        "lstm_forward",
        lstm_args,
        lambda mod, xw, w_hh: mod.lstm_forward(xw, w_hh)[0],
        close, r)

    def lstm_bwd_args(rng):
        xw, w_hh = lstm_args(rng)
        hs, cs, acts = py.lstm_forward(xw, w_hh)
        return rng.standard_normal(hs.shape), w_hh, hs, cs, acts

    bench_case(
        "lstm_backward",
        lstm_bwd_args,
        lambda mod, g, w_hh, hs, cs, acts:
            mod.lstm_backward(g, w_hh, hs, cs, acts),
        close, r)

    bench_case(
        "dfsmn_forward",
        lambda rng: (rng.standard_normal((400, 64)),
                     rng.standard_normal((64, 11))),
        lambda mod, x, k: mod.dfsmn_forward(x, k),
        close, r)

    bench_case(
        "dfsmn_backward",
        lambda rng: (rng.standard_normal((400, 64)),
                     rng.standard_normal((400, 64)),
                     rng.standard_normal((64, 11))),
        lambda mod, g, x, k: mod.dfsmn_backward(g, x, k)[0],
        close, r)

    def lev_args(rng):
        return (rng.integers(0, 28, size=30).astype(np.int64),
                rng.integers(0, 28, size=30).astype(np.int64))

    bench_case(
        "levenshtein",
        lev_args,
        lambda mod, a, b: mod.levenshtein_ops(a, b)[0],
        lambda a, b: np.testing.assert_array_equal(a, b), r)


if __name__ == "__main__":
    main()
