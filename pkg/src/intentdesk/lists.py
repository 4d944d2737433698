"""Coverage-based construction of per-client relevant-intents lists."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .catalog import RelevantIntentsMask, full_mask

COVERAGE_GRID = (1.00, 0.99, 0.98, 0.97, 0.96)


@dataclass
class IntentHistogram:
    """Per-client ticket counts by intent id."""

    counts: dict[int, int] = field(default_factory=dict)

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def add(self, intent: int, n: int = 1) -> None:
        self.counts[intent] = self.counts.get(intent, 0) + n

    @classmethod
    def from_intents(cls, intents: Iterable[int]) -> "IntentHistogram":
        h = cls()
        for i in intents:
            h.add(i)
        return h


def build_list(hist: IntentHistogram, coverage: float, num_intents: int) -> RelevantIntentsMask:
    """Minimal most-frequent prefix of intents whose ticket share reaches `coverage`.

    Intents are ordered by count descending, ties broken by smaller id;
    zero-count intents never enter the list.
    """
    if not (0 < coverage <= 1):
        raise ValueError("coverage must be in (0, 1]")
    total = hist.total
    if total <= 0:
        raise ValueError("empty histogram")
    order = sorted(
        (i for i, n in hist.counts.items() if n > 0),
        key=lambda i: (-hist.counts[i], i),
    )
    kept = []
    cum = 0
    for i in order:
        kept.append(i)
        cum += hist.counts[i]
        if cum / total >= coverage:
            break
    return RelevantIntentsMask.from_ids(kept, num_intents)


def build_all(
    histories: Mapping[str, IntentHistogram],
    coverage: float,
    num_intents: int,
    client_ids: Iterable[str] = (),
) -> dict[str, RelevantIntentsMask]:
    """Per-client masks; clients listed but absent from history get all-ones."""
    out = {cid: build_list(h, coverage, num_intents) for cid, h in histories.items()}
    for cid in client_ids:
        if cid not in out:
            out[cid] = RelevantIntentsMask(full_mask(num_intents))
    return out


def list_stats(masks: Mapping[str, RelevantIntentsMask]) -> tuple[int, int]:
    """(lower-median, max) of mask cardinalities."""
    if not masks:
        raise ValueError("empty mask map")
    sizes = sorted(m.cardinality() for m in masks.values())
    median = sizes[(len(sizes) - 1) // 2]
    return median, sizes[-1]


def histograms_from_examples(examples) -> dict[str, IntentHistogram]:
    """Group examples' gold intents into per-client histograms."""
    out: dict[str, IntentHistogram] = {}
    for ex in examples:
        out.setdefault(ex.client_id, IntentHistogram()).add(ex.gold_intent)
    return out
