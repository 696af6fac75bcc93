"""Reduced-scale USPS -> MNIST: source-only vs full method, MLP generator.

Needs the IDX files in $LAPDA_DATA_DIR (each may also be gzipped):
    usps-train-images-idx3-ubyte, usps-train-labels-idx1-ubyte   (16x16 USPS)
    train-images-idx3-ubyte,      train-labels-idx1-ubyte        (28x28 MNIST)

    LAPDA_DATA_DIR=~/data python scripts/usps_mnist_trend.py --seeds 0,1,2 --steps 3000
"""
import argparse
import logging
import sys

from lapda.experiments import usps_mnist_trend


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--steps", type=int, default=3000)
    ap.add_argument("--adversarial-baseline", action="store_true", help="also train the alpha=0 variant")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    logging.getLogger("lapda.training").setLevel(logging.ERROR)

    variants = ("source-only", "adversarial", "full") if args.adversarial_baseline else ("source-only", "full")
    try:
        res = usps_mnist_trend(seeds=[int(s) for s in args.seeds.split(",")], steps=args.steps, variants=variants)
    except FileNotFoundError as exc:
        sys.exit(f"usps_mnist_trend: {exc}")
    for v in variants:
        print(f"{v:<12} " + " ".join(f"{a:.4f}" for a in res.test_accs(v)) + f"  mean {res.mean(v):.4f}")
    print(f"full - source-only: {100 * (res.mean('full') - res.mean('source-only')):.1f} points, "
          f"CPU time {res.seconds:.0f}s")


if __name__ == "__main__":
    main()
