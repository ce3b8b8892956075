"""Time the numba and numpy paths of the hot kernels on the same inputs.

Usage: python benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import time

import numpy as np

from merlin_arthur import kernels
from merlin_arthur._accel import HAVE_NUMBA
from merlin_arthur.certificates import afc_exact
from merlin_arthur.dataspace import FeatureSelector, make_debate_chain, make_fish_fruit
from merlin_arthur.game import solve_minmax


def _best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases():
    fish = make_fish_fruit()
    chain = make_debate_chain(12)
    chain_merlin = FeatureSelector.lowest_index(chain)
    rng = np.random.default_rng(0)
    corpus = (rng.random((5000, 784)) > 0.5).astype(np.float64)
    supports = np.stack([rng.choice(784, 8, replace=False) for _ in range(300)])
    values = np.take_along_axis(corpus[:300], supports, axis=1)
    return {
        "afc_exact fish-fruit": lambda use: afc_exact(fish, use_numba=use),
        "solve_minmax debate-chain(12)": lambda use: solve_minmax(chain, chain_merlin, use_numba=use),
        "match_features 300 x 5000": lambda use: kernels.match_features(corpus, supports, values,
                                                                       use_numba=use),
    }


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args(argv)
    if not HAVE_NUMBA:
        print("numba is not importable; only the numpy path can run")
    print(f"{'kernel':40s} {'numpy [s]':>10s} {'numba [s]':>10s} {'speedup':>8s}")
    for name, fn in cases().items():
        t_np = _best_of(lambda: fn(False), args.repeat)
        if HAVE_NUMBA:
            fn(True)  # compile outside the timed runs
            t_nb = _best_of(lambda: fn(True), args.repeat)
            print(f"{name:40s} {t_np:10.4f} {t_nb:10.4f} {t_np / t_nb:8.1f}x")
        else:
            print(f"{name:40s} {t_np:10.4f} {'n/a':>10s} {'n/a':>8s}")


if __name__ == "__main__":
    main()
