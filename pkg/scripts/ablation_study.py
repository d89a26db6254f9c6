#!/usr/bin/env python3
"""Measure what the migration rules contribute.

Runs the benchmark twice with identical seeds and budgets: once with the
full pipeline, once with migration rules disabled and test harvesting off,
so the only remaining route to a trigger is the generator producing an
attack input verbatim. Prints which pairs stop being detected.
"""

import argparse
import sys

from vexploit.bench import BenchConfig, compare_ablation, format_pair_line, write_report
from vexploit.corpus import load_corpus


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=10)
    parser.add_argument("--budget-secs", type=float, default=10.0)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--corpus", default=None)
    parser.add_argument("--out", default="bench_out")
    args = parser.parse_args(argv)

    corpus = load_corpus(args.corpus)
    cfg = BenchConfig(repeats=args.repeats, budget_secs=args.budget_secs,
                      base_seed=args.seed)
    report = compare_ablation(
        corpus, cfg, progress=lambda r: print(format_pair_line(r), flush=True))

    comp = report["comparison"]
    print(f"\nfull pipeline exploitable runs:  {comp['full_total_successes']}")
    print(f"rules-disabled exploitable runs: {comp['bare_total_successes']}")
    print(f"pairs detected only with rules ({comp['pairs_lost_count']}):")
    for name in comp["pairs_lost_without_rules"]:
        print(f"  {name}")
    path = write_report(report, args.out, "ablation.json")
    print(f"report: {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
