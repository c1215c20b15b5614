#!/usr/bin/env python3
"""Benchmark the compiled kernels against the numpy fallback.

Times the four hot kernels on toy-scale and production-scale shapes, plus a
full toy token-optimization run under each kernel. Usage::

    python benchmarks/bench_kernels.py [--repeats 5]
"""
import argparse
import time

import numpy as np

from ovam.backends.toy import ToyDenoiser, token_embedding
from ovam.heatmaps import MEAN_OVER_SLICES, SelectionConfig, compute_ovam
from ovam.kernels import available_kernels, using_kernel
from ovam.optimizer import OptimizerConfig, TrainingPair, optimize_tokens
from ovam.trace import TokenEmbeddingMatrix

ATTENTION_SHAPES = [
    ("toy block", dict(n_pix=64, heads=2, dim=8, n_tok=7)),
    ("sd 64x64 grid", dict(n_pix=4096, heads=8, dim=40, n_tok=8)),
    ("sd 16x16 grid", dict(n_pix=256, heads=8, dim=160, n_tok=77)),
]

RESIZE_SHAPES = [
    ("8 -> 64", (8, 8, 64, 64)),
    ("64 -> 512", (64, 64, 512, 512)),
]


def timeit(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def bench_attention(kern, repeats, rng, n_pix, heads, dim, n_tok):
    q = rng.normal(size=(n_pix, heads, dim))
    k = rng.normal(size=(n_tok, heads, dim))
    fwd = timeit(lambda: kern.attention_softmax(q, k, dim), repeats)
    a = kern.attention_softmax(q, k, dim)
    da = rng.normal(size=a.shape)
    bwd = timeit(lambda: kern.attention_grad_keys(q, a, da, dim), repeats)
    return fwd, bwd


def bench_resize(kern, repeats, rng, src_h, src_w, out_h, out_w):
    m = rng.normal(size=(src_h, src_w))
    fwd = timeit(lambda: kern.resize_bilinear(m, out_h, out_w), repeats)
    g = rng.normal(size=(out_h, out_w))
    adj = timeit(lambda: kern.resize_bilinear_adjoint(g, src_h, src_w), repeats)
    return fwd, adj


def bench_optimize(repeats):
    backend = ToyDenoiser(image_scale=1)
    trace = backend.generate_with_trace("A photograph of a dog", seed=0)
    planted = TokenEmbeddingMatrix(
        np.stack([token_embedding("<SoT>", 16), token_embedding("dog", 16)]),
        ("<SoT>", "dog"))
    heat = compute_ovam(trace, planted, normalization=MEAN_OVER_SLICES)
    cls = heat.channel(1) > 0.5
    pair = TrainingPair(trace, np.stack([(~cls).astype(float),
                                         cls.astype(float)]))
    cfg = OptimizerConfig(epochs=100)
    return timeit(lambda: optimize_tokens([pair], planted, cfg),
                  max(1, repeats // 2))


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    kernels = available_kernels()
    print(f"kernels available: {', '.join(kernels)}")
    if "native" not in kernels:
        print("note: the compiled extension is not built; "
              "showing the fallback only")

    rng = np.random.default_rng(0)
    rows = []
    for label, shape in ATTENTION_SHAPES:
        entry = {"case": f"attention fwd/bwd [{label}]"}
        for name in kernels:
            with using_kernel(name) as kern:
                fwd, bwd = bench_attention(kern, args.repeats, rng, **shape)
            entry[name] = f"{1e3 * fwd:8.2f} / {1e3 * bwd:8.2f} ms"
        rows.append(entry)
    for label, (sh, sw, oh, ow) in RESIZE_SHAPES:
        entry = {"case": f"resize fwd/adj [{label}]"}
        for name in kernels:
            with using_kernel(name) as kern:
                fwd, adj = bench_resize(kern, args.repeats, rng, sh, sw, oh, ow)
            entry[name] = f"{1e3 * fwd:8.2f} / {1e3 * adj:8.2f} ms"
        rows.append(entry)
    entry = {"case": "token optimization, 100 epochs (toy)"}
    for name in kernels:
        with using_kernel(name):
            entry[name] = f"{1e3 * bench_optimize(args.repeats):17.1f} ms"
    rows.append(entry)

    width = max(len(r["case"]) for r in rows) + 2
    header = "case".ljust(width) + "".join(n.rjust(24) for n in kernels)
    print(header)
    print("-" * len(header))
    for r in rows:
        print(r["case"].ljust(width)
              + "".join(r[n].rjust(24) for n in kernels))


if __name__ == "__main__":
    main()
