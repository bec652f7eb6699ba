"""Stand one tag at each checkpoint for a minute and report fix accuracy.

Prints the mean error per checkpoint and overall, before and after the MAD
outlier filter, then repeats the run with noiseless ranging.
"""
import argparse
from dataclasses import replace

import numpy as np

from wearbed import simulate
from wearbed.metrics import accuracy_stats
from wearbed.scenarios import CHECKPOINTS, STATIC_DWELL_S, static_checkpoints


def summarize(sigma_m: float, seed: int) -> None:
    cfg = replace(static_checkpoints(sigma_m=sigma_m), seed=seed)
    rep = simulate(cfg).report()
    sc = rep.scatter
    dwell_us = int(STATIC_DWELL_S * 1e6)
    print(f"sigma = {sigma_m:.2f} m, seed {seed}, {sc['err_m'].size} fixes delivered")
    for i, name in enumerate(CHECKPOINTS):
        here = (sc["t_us"] >= i * dwell_us) & (sc["t_us"] < (i + 1) * dwell_us)
        acc = accuracy_stats(sc["err_m"][here])
        print(f"  {name}: mean {acc.mean:.4f} m, filtered {acc.mean_filtered:.4f} m, "
              f"max {acc.max:.4f} m over {acc.count} fixes")
    acc = rep.accuracy_m
    print(f"  all: mean {acc.mean:.4f} m, filtered {acc.mean_filtered:.4f} m, "
          f"max {np.max(sc['err_m']):.4f} m")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sigma", type=float, default=0.10)
    ap.add_argument("--seed", type=int, default=42)
    args = ap.parse_args()
    summarize(args.sigma, args.seed)
    summarize(0.0, args.seed)


if __name__ == "__main__":
    main()
