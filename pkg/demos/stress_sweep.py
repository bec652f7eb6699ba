"""Run the tags x frequency x server-config grid and print PLR and p95 tables.

A short per-cell duration keeps this quick; the trends are what matter.
"""
import argparse
import tempfile

from wearbed import run_sweep
from wearbed.scenarios import stress_default


def table(result, sweep, metric, fmt):
    for sc in sweep.server_configs:
        print(f"\n{sc.value} {metric}")
        print("tags  " + "".join(f"{f:>10g}" for f in sweep.freqs_hz))
        for n in sweep.tag_counts:
            row = [fmt(result.reports[(n, f, sc)]) for f in sweep.freqs_hz]
            print(f"{n:4d}  " + "".join(f"{v:>10}" for v in row))


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--duration-s", type=float, default=5.0)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--out", help="keep artifacts here (default: a temporary directory)")
    args = ap.parse_args()

    sweep = stress_default(args.duration_s)
    out = args.out or tempfile.mkdtemp(prefix="wearbed-sweep-")
    result = run_sweep(sweep, out, jobs=args.jobs, cell_artifacts=False)
    table(result, sweep, "PLR", lambda r: f"{r.plr['all']:.4f}")
    table(result, sweep, "p95 delay (us)", lambda r: str(r.delay_us["all"].p95))
    print(f"\nartifacts in {out}")


if __name__ == "__main__":
    main()
