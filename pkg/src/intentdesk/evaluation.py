"""Accuracy metrics, bootstrap-subset paired t-test significance, and the
experiment grids (coverage, noise, out-of-domain, industry comparison)."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy import stats

from . import encoder as enc
from . import head as hd
from . import lists
from .catalog import RelevantIntentsMask, full_mask
from .corpus import CorpusBundle, DatasetSplit, LabeledExample, industry_subset, stratified_split
from .inference import FilterMode, predict_batch
from .trainer import ModelBundle, TrainConfig, train


@dataclass(frozen=True)
class EvalRecord:
    ticket_id: str
    gold: int
    chosen: Optional[int]

    @property
    def correct(self) -> bool:
        return self.chosen is not None and self.chosen == self.gold


def accuracy(records: Sequence[EvalRecord]) -> float:
    """Mean correctness; abstentions count as incorrect."""
    if not records:
        raise ValueError("no records")
    return sum(r.correct for r in records) / len(records)


@dataclass(frozen=True)
class SignificanceConfig:
    num_subsets: int = 1000
    subset_fraction: float = 0.5
    alpha: float = 0.001
    seed: int = 0

    def __post_init__(self):
        if self.num_subsets < 2:
            raise ValueError("num_subsets must be >= 2")
        if not (0 < self.subset_fraction <= 1):
            raise ValueError("subset_fraction must be in (0, 1]")


@dataclass
class SignificanceResult:
    mean_delta: float
    p_value: float
    significant: bool


def paired_significance(
    records_a: Sequence[EvalRecord],
    records_b: Sequence[EvalRecord],
    config: SignificanceConfig = SignificanceConfig(),
) -> SignificanceResult:
    """Paired t-test over per-subset accuracy deltas of two aligned record sets.

    Subsets are sampled without replacement (within each subset) from the shared
    example index space.
    """
    if len(records_a) != len(records_b) or any(
        a.ticket_id != b.ticket_id for a, b in zip(records_a, records_b)
    ):
        raise ValueError("record sets must be aligned on identical ticket_id sequences")
    a = np.array([r.correct for r in records_a], dtype=float)
    b = np.array([r.correct for r in records_b], dtype=float)
    n = len(a)
    m = int(np.ceil(config.subset_fraction * n))
    rng = np.random.default_rng(config.seed)

    diffs = a - b
    if m >= n:
        deltas = np.full(config.num_subsets, diffs.mean())
    else:
        keys = rng.random((config.num_subsets, n))
        idx = np.argpartition(keys, m, axis=1)[:, :m]
        deltas = diffs[idx].mean(axis=1)

    mean = float(deltas.mean())
    sd = float(deltas.std(ddof=1))
    if sd == 0.0:
        p = 1.0 if mean == 0.0 else 0.0
    else:
        t = mean / (sd / np.sqrt(config.num_subsets))
        p = float(2.0 * stats.t.sf(abs(t), df=config.num_subsets - 1))
    return SignificanceResult(mean, p, p < config.alpha)


@dataclass(frozen=True)
class GridSpec:
    train_coverages: tuple[float, ...] = lists.COVERAGE_GRID
    test_coverages: tuple[float, ...] = lists.COVERAGE_GRID
    noise_rates: tuple[float, ...] = (0.0, 0.05, 0.10, 0.20, 0.50)
    fixed_train_coverage: float = 0.98
    seeds: int = 4

    def __post_init__(self):
        if not self.train_coverages or not self.test_coverages or not self.noise_rates:
            raise ValueError("grid axes must be non-empty")
        if self.seeds < 1:
            raise ValueError("seeds must be >= 1")


# ---------------------------------------------------------------------------
# Batched evaluation

def evaluate_model(
    model: ModelBundle,
    examples: Sequence[LabeledExample],
    masks_by_client: Mapping[str, np.ndarray],
    mode: FilterMode = FilterMode.STRICT,
    batch_encoder: Optional[enc.BatchEncoder] = None,
    batch_size: int = 4096,
) -> list[EvalRecord]:
    """Strict/search/none-mode records for a whole example list (eval forward)."""
    if batch_encoder is None:
        batch_encoder = enc.BatchEncoder([ex.text for ex in examples], model.encoder_config)
    M = np.stack([masks_by_client[ex.client_id] for ex in examples]).astype(bool)
    records: list[EvalRecord] = []
    n = len(examples)
    for start in range(0, n, batch_size):
        batch = np.arange(start, min(start + batch_size, n))
        logits = predict_batch(model, batch_encoder, batch, M[batch])
        top1 = logits.argmax(axis=1)
        if mode == FilterMode.NONE:
            chosen = top1
            valid = np.ones(len(batch), dtype=bool)
        elif mode == FilterMode.STRICT:
            chosen = top1
            valid = M[batch, top1]
        else:  # SEARCH
            masked = np.where(M[batch], logits, -np.inf)
            chosen = masked.argmax(axis=1)
            valid = M[batch].any(axis=1)
        for j, i in enumerate(batch):
            ex = examples[i]
            records.append(
                EvalRecord(ex.ticket_id, ex.gold_intent, int(chosen[j]) if valid[j] else None)
            )
    return records


# ---------------------------------------------------------------------------
# Experiment harness

@dataclass(frozen=True)
class DeskConfig:
    """Desk-scale model/training configuration shared across grid experiments."""

    encoder: enc.EncoderConfig = enc.EncoderConfig(buckets=4096, embedding_dim=32)
    train: TrainConfig = TrainConfig(max_epochs=12, patience=3, learning_rate=3e-3)
    intents_embed_dim: int = 16
    projection_dim: int = 128
    num_residual_layers: int = 1
    intents_embedding_dropout: float = 0.20
    residual_dropout: float = 0.10

    def head_config(self, num_classes: int, use_intents: bool) -> hd.HeadConfig:
        return hd.HeadConfig(
            text_dim=self.encoder.embedding_dim,
            num_classes=num_classes,
            intents_embed_dim=self.intents_embed_dim,
            projection_dim=self.projection_dim,
            num_residual_layers=self.num_residual_layers,
            intents_embedding_dropout=self.intents_embedding_dropout,
            residual_dropout=self.residual_dropout,
            use_intents_feature=use_intents,
        )


class ExperimentRunner:
    """Trains and evaluates the grid models over one corpus, caching everything.

    Masks per coverage come from per-client train-split gold histograms; clients
    appearing only in the test split (out-of-domain) fall back to histograms of
    their own tickets, mirroring list construction from served predictions.
    """

    def __init__(
        self,
        bundle: CorpusBundle,
        split: DatasetSplit,
        coverages: Sequence[float],
        desk: DeskConfig = DeskConfig(),
    ):
        self.bundle = bundle
        self.split = split
        self.desk = desk
        self.C = bundle.catalog.size

        hists = lists.histograms_from_examples(split.train)
        for cid, h in lists.histograms_from_examples(split.test).items():
            hists.setdefault(cid, h)
        self.histograms = hists
        all_clients = bundle.registry.client_ids()
        self.masks: dict[float, dict[str, np.ndarray]] = {}
        for c in coverages:
            built = lists.build_all(hists, c, self.C, client_ids=all_clients)
            self.masks[c] = {cid: m.bits for cid, m in built.items()}

        self._models: dict[tuple, ModelBundle] = {}
        self._records: dict[tuple, list[EvalRecord]] = {}
        self._encoders: dict[str, enc.BatchEncoder] = {}

    def _batch_encoder(self, which: str) -> enc.BatchEncoder:
        if which not in self._encoders:
            examples = getattr(self.split, which)
            self._encoders[which] = enc.BatchEncoder(
                [ex.text for ex in examples], self.desk.encoder
            )
        return self._encoders[which]

    def model(
        self, use_intents: bool, train_coverage: float, noise: float, seed: int
    ) -> ModelBundle:
        key = (use_intents, round(train_coverage, 4), round(noise, 4), seed)
        if key not in self._models:
            tcfg = replace(self.desk.train, noise_rate=noise, seed=seed)
            hcfg = self.desk.head_config(self.C, use_intents)
            masks = self.masks[train_coverage]
            self._models[key] = train(
                self.split, masks, self.bundle.catalog, self.desk.encoder, hcfg, tcfg
            )
        return self._models[key]

    def records(
        self,
        use_intents: bool,
        train_coverage: float,
        noise: float,
        seed: int,
        test_coverage: float,
        which: str = "test",
    ) -> list[EvalRecord]:
        key = (use_intents, round(train_coverage, 4), round(noise, 4), seed,
               round(test_coverage, 4), which)
        if key not in self._records:
            model = self.model(use_intents, train_coverage, noise, seed)
            examples = getattr(self.split, which)
            self._records[key] = evaluate_model(
                model, examples, self.masks[test_coverage], FilterMode.STRICT,
                self._batch_encoder(which),
            )
        return self._records[key]


@dataclass
class GridCell:
    row_key: float
    col_key: float
    mean: float
    std: float
    p_value: float
    significant: bool
    per_seed: list[float] = field(default_factory=list)


@dataclass
class GridResult:
    """Delta-vs-baseline matrix plus the baseline accuracy row."""

    row_label: str
    baseline_row: dict[float, tuple[float, float]]  # test coverage -> (mean, std)
    cells: dict[float, dict[float, GridCell]]  # row key -> test coverage -> cell
    baseline_per_seed: dict[float, list[float]] = field(default_factory=dict)

    def row_average(self, row_key: float) -> float:
        row = self.cells[row_key]
        return float(np.mean([c.mean for c in row.values()]))

    def to_text(self) -> str:
        cols = sorted(self.baseline_row, reverse=True)
        header = [self.row_label] + [f"{c:.0%}" for c in cols] + ["avg"]
        widths = [12] + [9] * (len(cols) + 1)
        out = ["  ".join(h.rjust(w) for h, w in zip(header, widths))]
        base = ["baseline"] + [f"{self.baseline_row[c][0]:.3f}" for c in cols]
        base.append(f"{np.mean([self.baseline_row[c][0] for c in cols]):.3f}")
        out.append("  ".join(v.rjust(w) for v, w in zip(base, widths)))
        for rk in sorted(self.cells, reverse=True):
            row = [f"{rk:.0%}"]
            for c in cols:
                cell = self.cells[rk][c]
                mark = "*" if cell.significant else ""
                row.append(f"{cell.mean * 100:+.1f}pp{mark}")
            row.append(f"{self.row_average(rk) * 100:+.1f}pp")
            out.append("  ".join(v.rjust(w) for v, w in zip(row, widths)))
        return "\n".join(out)

    def to_jsonl(self) -> str:
        lines = []
        for c in sorted(self.baseline_row, reverse=True):
            mean, std = self.baseline_row[c]
            lines.append(json.dumps({
                "row": "baseline", "col": c, "mean": mean, "std": std,
                "p_value": None, "significant": None,
            }, sort_keys=True))
        for rk in sorted(self.cells, reverse=True):
            for c, cell in sorted(self.cells[rk].items(), reverse=True):
                lines.append(json.dumps({
                    "row": rk, "col": c, "mean": cell.mean, "std": cell.std,
                    "p_value": cell.p_value, "significant": cell.significant,
                }, sort_keys=True))
        return "\n".join(lines) + "\n"


def _grid_against_baseline(
    runner: ExperimentRunner,
    row_models: Mapping[float, tuple[bool, float, float]],  # row key -> (use_intents, train_cov, noise)
    test_coverages: Sequence[float],
    seeds: int,
    row_label: str,
    sig: SignificanceConfig,
    which: str = "test",
) -> GridResult:
    baseline_row = {}
    baseline_per_seed = {}
    cells: dict[float, dict[float, GridCell]] = {rk: {} for rk in row_models}
    for tc in test_coverages:
        base_acc = []
        base_records = []
        for s in range(seeds):
            recs = runner.records(False, 1.0, 0.0, s, tc, which)
            base_acc.append(accuracy(recs))
            base_records.append(recs)
        baseline_row[tc] = (float(np.mean(base_acc)), float(np.std(base_acc)))
        baseline_per_seed[tc] = base_acc

        for rk, (use_int, tcov, noise) in row_models.items():
            deltas = []
            model_records = []
            for s in range(seeds):
                recs = runner.records(use_int, tcov, noise, s, tc, which)
                deltas.append(accuracy(recs) - base_acc[s])
                model_records.append(recs)
            pooled_a = [r for seq in model_records for r in seq]
            pooled_b = [r for seq in base_records for r in seq]
            res = paired_significance(pooled_a, pooled_b, sig)
            cells[rk][tc] = GridCell(
                rk, tc, float(np.mean(deltas)), float(np.std(deltas)),
                res.p_value, res.significant, deltas,
            )
    return GridResult(row_label, baseline_row, cells, baseline_per_seed)


def coverage_grid(
    runner: ExperimentRunner,
    grid: GridSpec = GridSpec(),
    sig: SignificanceConfig = SignificanceConfig(),
) -> GridResult:
    """Accuracy deltas of list-trained models vs the filtered baseline, by
    training coverage (rows) and evaluation-mask coverage (columns)."""
    rows = {tc: (True, tc, 0.0) for tc in grid.train_coverages}
    return _grid_against_baseline(
        runner, rows, grid.test_coverages, grid.seeds, "train_cov", sig
    )


def noise_grid(
    runner: ExperimentRunner,
    grid: GridSpec = GridSpec(),
    sig: SignificanceConfig = SignificanceConfig(),
) -> GridResult:
    """Same layout with rows = training-time list-noise rates at a fixed
    training coverage."""
    rows = {k: (True, grid.fixed_train_coverage, k) for k in grid.noise_rates}
    return _grid_against_baseline(
        runner, rows, grid.test_coverages, grid.seeds, "train_noise", sig
    )


@dataclass
class OodRow:
    label: str
    in_domain: float
    in_domain_std: float
    out_of_domain: float
    out_of_domain_std: float
    in_domain_per_seed: list[float]
    out_of_domain_per_seed: list[float]


def ood_experiment(
    runner: ExperimentRunner,
    grid: GridSpec = GridSpec(),
) -> list[OodRow]:
    """Baseline vs intents models (no noise / 5% noise) on in-domain and
    out-of-domain tickets, averaged over evaluation coverages.

    The runner must be built over an out-of-domain split: `test` holds all
    tickets of the held-out clients and `validation` serves as the in-domain
    evaluation set.
    """
    configs = [
        ("generic w/ filter", False, 1.0, 0.0),
        ("w/ intents, no noise", True, grid.fixed_train_coverage, 0.0),
        ("w/ intents, 5% noise", True, grid.fixed_train_coverage, 0.05),
    ]
    out = []
    for label, use_int, tcov, noise in configs:
        per_seed = {"validation": [], "test": []}
        for s in range(grid.seeds):
            for which in ("validation", "test"):
                accs = [
                    accuracy(runner.records(use_int, tcov, noise, s, tc, which))
                    for tc in grid.test_coverages
                ]
                per_seed[which].append(float(np.mean(accs)))
        out.append(OodRow(
            label,
            float(np.mean(per_seed["validation"])), float(np.std(per_seed["validation"])),
            float(np.mean(per_seed["test"])), float(np.std(per_seed["test"])),
            per_seed["validation"], per_seed["test"],
        ))
    return out


def ood_table_text(rows: list[OodRow]) -> str:
    out = [f"{'model':28}  {'in-domain':>10}  {'out-of-domain':>14}"]
    for r in rows:
        out.append(f"{r.label:28}  {r.in_domain:>10.3f}  {r.out_of_domain:>14.3f}")
    return "\n".join(out)


@dataclass
class IndustryResult:
    columns: list[str]  # "generic" + industry names
    rows: dict[str, dict[str, Optional[float]]]  # model kind -> column -> accuracy


def industry_experiment(
    bundle: CorpusBundle,
    split: DatasetSplit,
    desk: DeskConfig = DeskConfig(),
    seeds: int = 1,
) -> IndustryResult:
    """Generic vs industry-specific models vs generic-with-search.

    Industry models are trained on intent-filtered subsets; the search filter
    scores the generic model restricted to the industry's intent set. All
    models here run without the intents input feature.
    """
    C = bundle.catalog.size
    hcfg = desk.head_config(C, use_intents=False)
    all_ones = {cid: full_mask(C) for cid in bundle.registry.client_ids()}

    columns = ["generic"] + [ind.name for ind in bundle.industries]
    rows: dict[str, dict[str, Optional[float]]] = {
        "industry_specific": {}, "generic": {}, "generic_with_search": {},
    }
    acc = {kind: {col: [] for col in columns} for kind in rows}

    for s in range(seeds):
        tcfg = replace(desk.train, seed=s)
        generic = train(split, all_ones, bundle.catalog, desk.encoder, hcfg, tcfg)

        full_test = split.test
        acc["generic"]["generic"].append(accuracy(
            evaluate_model(generic, full_test, all_ones, FilterMode.NONE)))
        acc["generic_with_search"]["generic"].append(accuracy(
            evaluate_model(generic, full_test, all_ones, FilterMode.SEARCH)))

        for ind in bundle.industries:
            sub = industry_subset(split, ind, bundle.registry)
            ind_model = train(sub, all_ones, bundle.catalog, desk.encoder, hcfg, tcfg)
            ind_mask = RelevantIntentsMask.from_ids(sorted(ind.intents), C).bits
            ind_masks = {cid: ind_mask for cid in all_ones}
            acc["industry_specific"][ind.name].append(accuracy(
                evaluate_model(ind_model, sub.test, all_ones, FilterMode.NONE)))
            acc["generic"][ind.name].append(accuracy(
                evaluate_model(generic, sub.test, all_ones, FilterMode.NONE)))
            acc["generic_with_search"][ind.name].append(accuracy(
                evaluate_model(generic, sub.test, ind_masks, FilterMode.SEARCH)))

    for kind in rows:
        for col in columns:
            vals = acc[kind][col]
            rows[kind][col] = float(np.mean(vals)) if vals else None
    return IndustryResult(columns, rows)


def industry_table_text(result: IndustryResult) -> str:
    out = ["model".ljust(22) + "".join(c.rjust(14) for c in result.columns)]
    for kind, row in result.rows.items():
        cells = "".join(
            (f"{row[c]:.3f}" if row[c] is not None else "--").rjust(14)
            for c in result.columns
        )
        out.append(kind.ljust(22) + cells)
    return "\n".join(out)


def three_way_split(
    examples: Sequence[LabeledExample],
    validation_fraction: float = 0.15,
    test_fraction: float = 0.15,
    seed: int = 0,
) -> DatasetSplit:
    """Stratified train/validation/test partition."""
    held = validation_fraction + test_fraction
    first = stratified_split(examples, held, seed)
    second = stratified_split(first.validation, test_fraction / held, seed + 1)
    return DatasetSplit(train=first.train, validation=second.train, test=second.validation)
