"""Compare the compiled detector-matching kernels with the pure-Python fallback.

Workloads mirror the simulator's hot loops: one breeding round filters a
batch of random candidates against the selfset, and one packet inspection
scans a cell's detectors against the windows of a payload.

    python3 benchmarks/bench_kernels.py [--repeat N] [--seed S]
"""

import argparse
import random
import sys
import timeit

from sanasim.cells import HEX, random_patterns
from sanasim.kernels import pure

try:
    from sanasim.kernels import _cmatch as compiled
except ImportError:
    compiled = None


def workloads(seed: int) -> dict:
    rng = random.Random(seed)
    selfset = [p.encode() for p in random_patterns(rng, 96, 24, 0.0, HEX)]
    batch = [p.encode() for p in random_patterns(rng, 1000, 24, 0.25, HEX)]
    cell = batch[:8]
    windows = [p.encode() for p in random_patterns(rng, 6, 24, 0.0, HEX)]
    return {
        "survivors (1000 x 96)": lambda k: k.survivors(batch, [8] * len(batch), selfset),
        "first_match (8 x 6)": lambda k: k.first_match(cell, [8] * len(cell), windows),
        "hits (1000 x 4)": lambda k: k.hits(batch, [8] * len(batch), selfset[:4]),
        "match (single pair)": lambda k: k.match(batch[0], selfset[0], 8),
    }


def bench(fn, kernel, repeat: int) -> float:
    timer = timeit.Timer(lambda: fn(kernel))
    number, _ = timer.autorange()
    return min(timer.repeat(repeat, number)) / number


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args(argv)
    if compiled is None:
        print("compiled kernel not built; run `pip install -e . --no-build-isolation` first",
              file=sys.stderr)
        return 1
    print(f"{'workload':<24} {'pure':>12} {'compiled':>12} {'speedup':>9}")
    for name, fn in workloads(args.seed).items():
        assert fn(pure) == fn(compiled), name
        tp, tc = bench(fn, pure, args.repeat), bench(fn, compiled, args.repeat)
        print(f"{name:<24} {tp * 1e6:>10.1f}us {tc * 1e6:>10.1f}us {tp / tc:>8.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
