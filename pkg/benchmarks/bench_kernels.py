"""Time the compiled and pure-Python kernel backends on the same inputs.

    python benchmarks/bench_kernels.py [--M 10000] [--L 128] [--S 16] [--repeat 5]

Prints one line per (kernel, backend) with the best wall time and the
speedup of the compiled backend. Outputs are cross-checked before timing.
"""
import argparse
import time

import numpy as np

from sparseid.kernels import backends


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--M", type=int, default=10_000)
    p.add_argument("--L", type=int, default=128)
    p.add_argument("--S", type=int, default=16)
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args(argv)

    impls = backends()
    rng = np.random.default_rng(0)
    F = rng.standard_normal((args.M, args.L))
    ref = impls["python"]
    mask = ref.support_mask(F, args.S)
    codes = (np.sign(F) * mask).astype(np.int8)
    b = codes[0].copy()
    packed = ref.pack_ternary(codes)

    cases = {
        "support_mask": lambda k: k.support_mask(F, args.S),
        "score_codebook": lambda k: k.score_codebook(codes, b),
        "pack_ternary": lambda k: k.pack_ternary(codes),
        "unpack_ternary": lambda k: k.unpack_ternary(packed, args.L),
    }
    print(f"M={args.M} L={args.L} S={args.S} backends={sorted(impls)}")
    for name, call in cases.items():
        outputs = {be: call(mod) for be, mod in impls.items()}
        first = outputs["python"]
        for be, out in outputs.items():
            same = all(np.array_equal(x, y) for x, y in zip(out, first)) if isinstance(out, tuple) \
                else np.array_equal(out, first)
            if not same:
                raise SystemExit(f"{name}: backend {be} disagrees with python")
        timings = {be: best_of(lambda m=mod: call(m), args.repeat) for be, mod in impls.items()}
        for be, t in timings.items():
            line = f"{name:15s} {be:7s} {t * 1e3:9.3f} ms"
            if be != "python":
                line += f"  x{timings['python'] / t:.2f}"
            print(line)


if __name__ == "__main__":
    main()
