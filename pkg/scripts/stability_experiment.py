"""Repeat stability selection of k on seeded two-blob mixtures and count how often k* = 2."""
from __future__ import annotations

import argparse
import time
import warnings

from clusterlogit.gower import gower_dissimilarity
from clusterlogit.stability import stability_curve
from clusterlogit.synthetic import two_blob_data


def run(argv=None) -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--runs", type=int, default=100)
    parser.add_argument("--n", type=int, default=400)
    parser.add_argument("--B", type=int, default=100)
    parser.add_argument("--k-max", type=int, default=8)
    parser.add_argument("--restarts", type=int, default=50)
    parser.add_argument("--workers", type=int, default=1)
    args = parser.parse_args(argv)
    hits = 0
    for run_id in range(args.runs):
        ds = two_blob_data(n=args.n, seed=run_id)
        start = time.perf_counter()
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            rep = stability_curve(gower_dissimilarity(ds), range(2, args.k_max + 1), B=args.B,
                                  restarts=args.restarts, seed=run_id, workers=args.workers)
        hits += rep.k_star == 2
        print(f"run {run_id:3d}  k*={rep.k_star}  {time.perf_counter() - start:6.1f} s", flush=True)
    print(f"k*=2 in {hits}/{args.runs} runs")


if __name__ == "__main__":
    run()
