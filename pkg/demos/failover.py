"""Kill the master server at 10 s and watch the backup take the virtual IP.

Prints the state transitions, the loss per one-second bucket around the
outage, and the drop counts by reason.
"""
import argparse

import numpy as np

from wearbed import simulate
from wearbed.harness import BACKEND_DOWN, NO_MASTER
from wearbed.metrics import loss_series
from wearbed.scenarios import failover_master_down


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--trace", help="write the event trace to this file")
    args = ap.parse_args()

    run = simulate(failover_master_down())
    print("transitions:")
    for t, node, old, new in run.transitions:
        print(f"  {t / 1e6:10.6f} s  {node:8s} {old} -> {new}")

    d = run.drops()
    outage = np.isin(d["reason"], [NO_MASTER, BACKEND_DOWN])
    series = loss_series(d["t_us"][outage], end_us=run.cfg.duration_us)
    print("messages lost to the outage per second:")
    for sec, n in enumerate(series):
        if n:
            print(f"  [{sec:2d} s, {sec + 1:2d} s)  {n}")

    rep = run.report(with_scatter=False)
    print("drops by reason:", rep.drops_by_reason)
    print(f"overall PLR {rep.plr['all']:.4f}")
    if args.trace:
        with open(args.trace, "w") as fh:
            fh.write("\n".join(run.trace_lines()) + "\n")


if __name__ == "__main__":
    main()
