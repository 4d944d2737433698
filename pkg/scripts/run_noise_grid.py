#!/usr/bin/env python3
"""Noise grid (training-time list-noise rate x evaluation coverage) at the
fixed 98% training coverage, on the default synthetic corpus."""

import argparse

from intentdesk.corpus import SynthesisConfig, generate_corpus
from intentdesk.evaluation import (
    DeskConfig,
    ExperimentRunner,
    GridSpec,
    noise_grid,
    three_way_split,
)
from intentdesk.lists import COVERAGE_GRID


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--corpus-seed", type=int, default=0)
    ap.add_argument("--split-seed", type=int, default=0)
    ap.add_argument("--jsonl", help="also write machine-readable cells here")
    args = ap.parse_args()

    bundle = generate_corpus(SynthesisConfig(seed=args.corpus_seed))
    split = three_way_split(bundle.examples, seed=args.split_seed)
    runner = ExperimentRunner(bundle, split, COVERAGE_GRID, desk=DeskConfig())
    result = noise_grid(runner, GridSpec())
    print(result.to_text())
    if args.jsonl:
        with open(args.jsonl, "w", encoding="utf-8") as f:
            f.write(result.to_jsonl())
        print(f"wrote {args.jsonl}")


if __name__ == "__main__":
    main()
