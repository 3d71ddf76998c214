"""Low-before-high fitting order on the 1-D sine-mix task.

Trains clean, standard AT and PhaseAT for several seeds and prints, for each
threshold, the first epoch at which e_low and e_high drop below it.

    python3 scripts/fprinciple.py --seeds 5 --epochs 150 --out runs/fprinciple.csv
"""

import argparse
import csv

from phaseat.experiments import fprinciple_run


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--epochs", type=int, default=150)
    ap.add_argument("--tau", type=float, nargs="+", default=[0.6, 0.4])
    ap.add_argument("--out", default=None, help="per-epoch e_low/e_high CSV")
    args = ap.parse_args()

    rows = []
    for variant in ("clean", "standard_at", "phaseat"):
        for seed in range(args.seeds):
            run = fprinciple_run(variant, seed, args.epochs)
            crossings = ", ".join(
                f"tau={t}: low {lo} high {hi}" for t in args.tau for lo, hi in [run.first_crossings(t)]
            )
            print(f"{variant:12s} seed {seed}: {crossings}")
            rows += [(variant, seed, e, lo, hi) for (e, lo), (_, hi) in zip(run.e_low, run.e_high)]
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("variant", "seed", "epoch", "e_low", "e_high"))
            w.writerows(rows)


if __name__ == "__main__":
    main()
