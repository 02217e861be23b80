"""Score uniformly random architectures and summarize the reward landscape.

Prints the spread of raw NASWOT scores, how often the parameter bound is
exceeded, and the mean score per operation kind.  Useful for judging whether
a gap between two search algorithms is larger than sampling noise.

Usage: python scripts/score_landscape.py [--samples N] [--seed S]
"""
import argparse
from collections import defaultdict

import numpy as np

from mctsnas.arch import BASELINE_PARAMS, ArchState, MacroConfig, OPS, build_spec, count_params, legal_moves
from mctsnas.cli import ScoringConfig, scoring_batch
from mctsnas.naswot import NaswotScorer


def random_state(rng) -> ArchState:
    s = ArchState()
    while not s.is_terminal:
        moves = legal_moves(s)
        s = s.play(moves[rng.integers(len(moves))])
    return s


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--samples", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--input-size", type=int, default=16)
    p.add_argument("--base-channels", type=int, default=8)
    args = p.parse_args()

    macro = MacroConfig(base_channels=args.base_channels)
    scorer = NaswotScorer(scoring_batch(ScoringConfig(input_size=args.input_size), args.seed), macro,
                          seed=args.seed)
    rng = np.random.default_rng(args.seed)
    raws, over = [], 0
    by_op = defaultdict(list)
    for _ in range(args.samples):
        st = random_state(rng)
        raw = scorer(st)
        raws.append(raw)
        over += count_params(build_spec(st, macro)) > BASELINE_PARAMS
        for cell in range(3):
            for op in st.decisions[5 * cell + 2:5 * cell + 4]:
                by_op[op].append(raw)
    raws = np.array(raws)
    print(f"samples={len(raws)} mean={raws.mean():.2f} std={raws.std():.2f} "
          f"min={raws.min():.2f} max={raws.max():.2f} over_bound={over}")
    for op in sorted(by_op):
        print(f"  {OPS[op].value:<12} mean={np.mean(by_op[op]):.2f} n={len(by_op[op])}")


if __name__ == "__main__":
    main()
