#!/usr/bin/env python3
"""Generic vs industry-specific models, plus generic-with-search, on the
default synthetic corpus."""

import argparse

from intentdesk.corpus import SynthesisConfig, generate_corpus
from intentdesk.evaluation import (
    DeskConfig,
    industry_experiment,
    industry_table_text,
    three_way_split,
)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--corpus-seed", type=int, default=0)
    ap.add_argument("--split-seed", type=int, default=0)
    ap.add_argument("--seeds", type=int, default=1, help="training seeds to average")
    args = ap.parse_args()

    bundle = generate_corpus(SynthesisConfig(seed=args.corpus_seed))
    split = three_way_split(bundle.examples, seed=args.split_seed)
    result = industry_experiment(bundle, split, desk=DeskConfig(), seeds=args.seeds)
    print(industry_table_text(result))


if __name__ == "__main__":
    main()
