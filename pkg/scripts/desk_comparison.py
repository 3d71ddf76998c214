"""PhaseAT against standard AT on the rings task with matched budgets.

Prints final-epoch frequency errors, robust accuracy at the half-way and
final epochs, and the adaptive-attack ladder for every PhaseAT model.

    python3 scripts/desk_comparison.py --seeds 5 --epochs 100
"""

import argparse

import numpy as np

from phaseat.experiments import attack_ladder, paired_desk_runs


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--epochs", type=int, default=100)
    ap.add_argument("--no-ladder", action="store_true", help="skip the attack ladder")
    args = ap.parse_args()

    runs = paired_desk_runs(range(args.seeds), args.epochs, plain=True)
    half = args.epochs // 2
    for variant, recs in runs.items():
        print(f"== {variant}")
        for r in recs:
            errs = " ".join(f"{m}: e_low {r.e_low[m]:.3f} e_high {r.e_high[m]:.3f} clean {r.clean[m]:.3f}"
                            for m in r.e_low)
            print(f"seed {r.seed}: robust@{half} {r.robust[half]:.3f} robust@{args.epochs} "
                  f"{r.robust[args.epochs]:.3f} (plain PGD {r.robust_plain[args.epochs]:.3f}); {errs}")
        print(f"median robust@{half} {np.median([r.robust[half] for r in recs]):.3f}")
    if not args.no_ladder:
        print("== attack ladder (PhaseAT)")
        for r in runs["phaseat"]:
            print(f"seed {r.seed}: " + " ".join(f"{k} {v:.3f}" for k, v in attack_ladder(r).items()))


if __name__ == "__main__":
    main()
