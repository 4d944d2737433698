#!/usr/bin/env python3
"""Out-of-domain experiment: baseline vs intents models (no noise / 5% noise)
on in-domain and held-out-client ticket sets, averaged over test coverages."""

import argparse

from intentdesk.corpus import SynthesisConfig, generate_corpus, ood_split
from intentdesk.evaluation import (
    DeskConfig,
    ExperimentRunner,
    GridSpec,
    ood_experiment,
    ood_table_text,
)
from intentdesk.lists import COVERAGE_GRID


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--corpus-seed", type=int, default=0)
    ap.add_argument("--split-seed", type=int, default=0)
    args = ap.parse_args()

    bundle = generate_corpus(SynthesisConfig(seed=args.corpus_seed))
    split = ood_split(bundle.examples, seed=args.split_seed)
    runner = ExperimentRunner(bundle, split, COVERAGE_GRID, desk=DeskConfig())
    rows = ood_experiment(runner, GridSpec())
    print(ood_table_text(rows))


if __name__ == "__main__":
    main()
