"""Compare all search algorithms at a scale that finishes in minutes on a laptop CPU.

Usage: python scripts/toy_compare.py [--seeds N] [--budget B] [--out DIR]
"""
import argparse
import sys

from mctsnas import cli


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--budget", type=int, default=100)
    p.add_argument("--out", default="runs/toy_compare")
    args = p.parse_args()
    return cli.main(["compare", "--seeds", str(args.seeds), "--budget", str(args.budget),
                     "--input-size", "16", "--base-channels", "8", "--batch-size", "16",
                     "--out", args.out])


if __name__ == "__main__":
    sys.exit(main())
