"""Source-only vs adversarial-only vs full method on two moons rotated by 30 degrees.

    python scripts/two_moons_trend.py --seeds 0,1,2,3,4 --steps 2000 --csv results/two_moons.csv
"""
import argparse
import csv
import logging
from pathlib import Path

from lapda.experiments import VARIANTS, two_moons_trend


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--seeds", default="0,1,2,3,4")
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--alpha", type=float, default=None, help="cycle-loss weight of the full method")
    ap.add_argument("--csv", type=Path, default=None)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    logging.getLogger("lapda.training").setLevel(logging.ERROR)

    seeds = [int(s) for s in args.seeds.split(",")]
    extra = {} if args.alpha is None else {"alpha": args.alpha}
    res = two_moons_trend(seeds=seeds, steps=args.steps, **extra)

    print(f"{'variant':<12} " + " ".join(f"seed {s:<3}" for s in seeds) + "   mean")
    for v in VARIANTS:
        accs = res.test_accs(v)
        print(f"{v:<12} " + " ".join(f"{a:8.4f}" for a in accs) + f" {res.mean(v):8.4f}")
    print(f"CPU time {res.seconds:.0f}s")
    if args.csv:
        args.csv.parent.mkdir(parents=True, exist_ok=True)
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["variant", "seed", "best_val_acc", "test_acc", "cpu_seconds"])
            for r in res.runs:
                w.writerow([r.variant, r.seed, r.best_val_acc, r.test_acc, round(r.seconds, 2)])


if __name__ == "__main__":
    main()
