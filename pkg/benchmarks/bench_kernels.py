"""Time the compiled and numpy kernels on batches shaped like a client step.

    python benchmarks/bench_kernels.py [--repeat 200]
"""
import argparse
import timeit

import numpy as np

from fedrare import kernels


def make_inputs(rng, vocab, dim, classes, batch, length):
    E = rng.normal(size=(vocab, dim))
    W = rng.normal(size=(dim, classes))
    b = rng.normal(size=classes)
    tokens = rng.integers(0, vocab, size=(batch, length)).astype(np.int64)
    lengths = rng.integers(1, length + 1, size=batch).astype(np.int64)
    labels = rng.integers(0, classes, size=batch).astype(np.int64)
    return E, W, b, tokens, lengths, labels


def bench(mod, inputs, mode, repeat):
    E, W, b, tokens, lengths, labels = inputs

    def step():
        gE, gW, gb = np.zeros_like(E), np.zeros_like(W), np.zeros_like(b)
        mod.loss_grad(E, W, b, tokens, lengths, labels, mode, gE, gW, gb)

    step()
    return min(timeit.repeat(step, number=repeat, repeat=3)) / repeat


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=200)
    args = ap.parse_args()
    mods = kernels.backends()
    if "cython" not in mods:
        print("compiled extension not built; only the numpy backend is available")
    rng = np.random.default_rng(0)
    shapes = [(500, 16, 4, 16, 19), (500, 16, 4, 64, 19), (5000, 64, 20, 32, 64)]
    print(f"{'shape (v,h,C,b,len)':<26}{'mode':<7}" + "".join(f"{n + ' us':>12}" for n in mods) + f"{'speedup':>10}")
    for shape in shapes:
        inputs = make_inputs(rng, *shape)
        for mode, name in ((kernels.MEAN, "mean"), (kernels.DECAY, "decay")):
            times = {n: bench(m, inputs, mode, args.repeat) for n, m in mods.items()}
            speed = f"{times['python'] / times['cython']:.1f}x" if "cython" in times else "-"
            print(f"{str(shape):<26}{name:<7}" + "".join(f"{t * 1e6:>12.1f}" for t in times.values()) + f"{speed:>10}")


if __name__ == "__main__":
    main()
