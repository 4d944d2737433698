"""Command-line entry points for data generation, training, evaluation grids,
gradient checking, and serving."""

from __future__ import annotations

import sys
from dataclasses import replace
from pathlib import Path

import click
import numpy as np

from . import corpus as cp
from . import evaluation as ev
from . import lists
from .catalog import ClientRegistry, IntentCatalog, load_industries, save_industries
from .inference import FilterMode
from .trainer import TrainConfig, gradcheck, load_checkpoint, save_checkpoint, train


def save_corpus_dir(bundle: cp.CorpusBundle, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    bundle.catalog.save(out / "catalog.txt")
    save_industries(bundle.industries, out / "industries.jsonl")
    bundle.registry.save(out / "clients.jsonl")
    cp.save_examples(bundle.examples, bundle.catalog, out / "examples.jsonl")


def load_corpus_dir(path: Path) -> tuple[IntentCatalog, ClientRegistry, list]:
    catalog = IntentCatalog.load(path / "catalog.txt")
    industries = load_industries(path / "industries.jsonl")
    registry = ClientRegistry(catalog, industries)
    registry.load_clients(path / "clients.jsonl")
    examples = cp.load_examples(path / "examples.jsonl", catalog)
    return catalog, registry, examples


def _split_examples(corpus_dir: Path, split_dir: Path, catalog: IntentCatalog) -> cp.DatasetSplit:
    split = cp.DatasetSplit()
    for name in ("train", "validation", "test"):
        p = split_dir / f"{name}.jsonl"
        if p.exists():
            setattr(split, name, cp.load_examples(p, catalog))
    return split


@click.group()
def main():
    """Multi-tenant intent detection with per-client relevant-intents lists."""


@main.command("gen-data")
@click.option("--seed", default=0, show_default=True)
@click.option("--out", type=click.Path(path_type=Path), required=True)
@click.option("--num-intents", default=60, show_default=True)
@click.option("--num-industries", default=3, show_default=True)
@click.option("--clients-per-industry", default=40, show_default=True)
def gen_data(seed, out, num_intents, num_industries, clients_per_industry):
    """Generate the seeded synthetic corpus into a directory."""
    cfg = cp.SynthesisConfig(
        num_intents=num_intents,
        num_industries=num_industries,
        intents_per_industry=num_intents // num_industries,
        clients_per_industry=clients_per_industry,
        seed=seed,
    )
    bundle = cp.generate_corpus(cfg)
    save_corpus_dir(bundle, out)
    click.echo(f"wrote {len(bundle.examples)} tickets, {bundle.catalog.size} intents -> {out}")


@main.command()
@click.option("--corpus", "corpus_dir", type=click.Path(path_type=Path), required=True)
@click.option("--out", type=click.Path(path_type=Path), required=True)
@click.option("--validation-fraction", default=0.15, show_default=True)
@click.option("--test-fraction", default=0.15, show_default=True)
@click.option("--ood/--stratified", default=False, show_default=True,
              help="Hold out whole clients as test instead of stratifying.")
@click.option("--seed", default=0, show_default=True)
def split(corpus_dir, out, validation_fraction, test_fraction, ood, seed):
    """Split a corpus into train/validation/test files."""
    catalog, _, examples = load_corpus_dir(corpus_dir)
    if ood:
        ds = cp.ood_split(examples, test_client_fraction=test_fraction, seed=seed)
    else:
        ds = ev.three_way_split(examples, validation_fraction, test_fraction, seed)
    out.mkdir(parents=True, exist_ok=True)
    for name in ("train", "validation", "test"):
        cp.save_examples(getattr(ds, name), catalog, out / f"{name}.jsonl")
    click.echo(
        f"train={len(ds.train)} validation={len(ds.validation)} test={len(ds.test)}"
    )


@main.command("build-lists")
@click.option("--corpus", "corpus_dir", type=click.Path(path_type=Path), required=True)
@click.option("--split", "split_dir", type=click.Path(path_type=Path), required=True)
@click.option("--coverage", default=1.0, show_default=True)
def build_lists(corpus_dir, split_dir, coverage):
    """Build per-client relevant-intents masks from train-split gold histograms
    and write them back into the corpus registry file."""
    catalog, registry, _ = load_corpus_dir(corpus_dir)
    ds = _split_examples(corpus_dir, split_dir, catalog)
    hists = lists.histograms_from_examples(ds.train)
    masks = lists.build_all(hists, coverage, catalog.size, client_ids=registry.client_ids())
    for cid, mask in masks.items():
        registry.update_relevant_intents(cid, mask)
    registry.save(corpus_dir / "clients.jsonl")
    median, largest = lists.list_stats(masks)
    click.echo(f"coverage={coverage}: median list size {median}, max {largest}")


@main.command("train")
@click.option("--corpus", "corpus_dir", type=click.Path(path_type=Path), required=True)
@click.option("--split", "split_dir", type=click.Path(path_type=Path), required=True)
@click.option("--out", type=click.Path(path_type=Path), required=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--use-intents/--no-intents", default=True, show_default=True)
@click.option("--noise", default=0.0, show_default=True)
@click.option("--coverage", default=None, type=float,
              help="Build training masks at this coverage instead of using the registry.")
@click.option("--max-epochs", default=12, show_default=True)
@click.option("--learning-rate", default=3e-3, show_default=True)
@click.option("--batch-size", default=512, show_default=True)
def train_cmd(corpus_dir, split_dir, out, seed, use_intents, noise, coverage,
              max_epochs, learning_rate, batch_size):
    """Train a model and write a checkpoint."""
    catalog, registry, _ = load_corpus_dir(corpus_dir)
    ds = _split_examples(corpus_dir, split_dir, catalog)
    if coverage is not None:
        hists = lists.histograms_from_examples(ds.train)
        built = lists.build_all(hists, coverage, catalog.size, registry.client_ids())
        masks = {cid: m.bits for cid, m in built.items()}
    else:
        masks = registry.masks()
    desk = ev.DeskConfig()
    tcfg = replace(desk.train, seed=seed, noise_rate=noise, max_epochs=max_epochs,
                   learning_rate=learning_rate, batch_size=batch_size)
    hcfg = desk.head_config(catalog.size, use_intents)
    bundle = train(ds, masks, catalog, desk.encoder, hcfg, tcfg)
    save_checkpoint(bundle, out)
    last = bundle.training_log[-1]
    click.echo(f"trained {len(bundle.training_log)} epochs, val loss {last['val_loss']:.4f}")


@main.command("eval")
@click.option("--model", "model_path", type=click.Path(path_type=Path), required=True)
@click.option("--corpus", "corpus_dir", type=click.Path(path_type=Path), required=True)
@click.option("--split", "split_dir", type=click.Path(path_type=Path), required=True)
@click.option("--which", default="test", show_default=True,
              type=click.Choice(["train", "validation", "test"]))
@click.option("--mode", default="strict", show_default=True,
              type=click.Choice([m.value for m in FilterMode]))
@click.option("--coverage", default=None, type=float)
def eval_cmd(model_path, corpus_dir, split_dir, which, mode, coverage):
    """Accuracy of a checkpoint on one split under a filter mode."""
    catalog, registry, _ = load_corpus_dir(corpus_dir)
    ds = _split_examples(corpus_dir, split_dir, catalog)
    model = load_checkpoint(model_path)
    if model.catalog_fingerprint != catalog.fingerprint():
        raise click.ClickException("checkpoint was trained against a different catalog")
    if coverage is not None:
        hists = lists.histograms_from_examples(ds.train)
        built = lists.build_all(hists, coverage, catalog.size, registry.client_ids())
        masks = {cid: m.bits for cid, m in built.items()}
    else:
        masks = registry.masks()
    records = ev.evaluate_model(model, getattr(ds, which), masks, FilterMode(mode))
    click.echo(f"accuracy={ev.accuracy(records):.4f} over {len(records)} examples")


def _runner_for(corpus_dir: Path, seeds: int, ood: bool, seed: int):
    _, _, examples = load_corpus_dir(corpus_dir)
    # Rebuild generation artifacts the runner needs (registry with industries).
    catalog, registry, _ = load_corpus_dir(corpus_dir)
    industries = load_industries(corpus_dir / "industries.jsonl")
    bundle = cp.CorpusBundle(catalog, industries, registry, examples, [], [], {})
    if ood:
        ds = cp.ood_split(examples, seed=seed)
    else:
        ds = ev.three_way_split(examples, seed=seed)
    grid = ev.GridSpec(seeds=seeds)
    runner = ev.ExperimentRunner(bundle, ds, sorted(set(grid.test_coverages) | set(grid.train_coverages)))
    return runner, grid


@main.command()
@click.option("--corpus", "corpus_dir", type=click.Path(path_type=Path), required=True)
@click.option("--out", type=click.Path(path_type=Path), required=True)
@click.option("--seeds", default=4, show_default=True)
@click.option("--seed", default=0, show_default=True, help="Split seed.")
def grid(corpus_dir, out, seeds, seed):
    """Run the training-coverage and noise grids; write tables and records."""
    runner, spec = _runner_for(corpus_dir, seeds, ood=False, seed=seed)
    out.mkdir(parents=True, exist_ok=True)
    cov = ev.coverage_grid(runner, spec)
    (out / "coverage_grid.txt").write_text(cov.to_text() + "\n", encoding="utf-8")
    (out / "coverage_grid.jsonl").write_text(cov.to_jsonl(), encoding="utf-8")
    click.echo(cov.to_text())
    noise = ev.noise_grid(runner, spec)
    (out / "noise_grid.txt").write_text(noise.to_text() + "\n", encoding="utf-8")
    (out / "noise_grid.jsonl").write_text(noise.to_jsonl(), encoding="utf-8")
    click.echo(noise.to_text())


@main.command()
@click.option("--corpus", "corpus_dir", type=click.Path(path_type=Path), required=True)
@click.option("--out", type=click.Path(path_type=Path), required=True)
@click.option("--seeds", default=4, show_default=True)
@click.option("--seed", default=0, show_default=True)
def ood(corpus_dir, out, seeds, seed):
    """Out-of-domain client evaluation table."""
    runner, spec = _runner_for(corpus_dir, seeds, ood=True, seed=seed)
    rows = ev.ood_experiment(runner, spec)
    out.mkdir(parents=True, exist_ok=True)
    text = ev.ood_table_text(rows)
    (out / "ood.txt").write_text(text + "\n", encoding="utf-8")
    click.echo(text)


@main.command()
@click.option("--corpus", "corpus_dir", type=click.Path(path_type=Path), required=True)
@click.option("--out", type=click.Path(path_type=Path), required=True)
@click.option("--seeds", default=1, show_default=True)
@click.option("--seed", default=0, show_default=True)
def industry(corpus_dir, out, seeds, seed):
    """Generic vs industry-specific model comparison table."""
    catalog, registry, examples = load_corpus_dir(corpus_dir)
    industries = load_industries(corpus_dir / "industries.jsonl")
    bundle = cp.CorpusBundle(catalog, industries, registry, examples, [], [], {})
    ds = ev.three_way_split(examples, seed=seed)
    result = ev.industry_experiment(bundle, ds, seeds=seeds)
    out.mkdir(parents=True, exist_ok=True)
    text = ev.industry_table_text(result)
    (out / "industry.txt").write_text(text + "\n", encoding="utf-8")
    click.echo(text)


@main.command("gradcheck")
@click.option("--model", "model_path", type=click.Path(path_type=Path), required=True)
@click.option("--corpus", "corpus_dir", type=click.Path(path_type=Path), required=True)
@click.option("--samples", default=5, show_default=True)
@click.option("--seed", default=0, show_default=True)
def gradcheck_cmd(model_path, corpus_dir, samples, seed):
    """Finite-difference gradient check against a checkpoint; exit 0 iff it passes."""
    catalog, registry, examples = load_corpus_dir(corpus_dir)
    model = load_checkpoint(model_path)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(samples):
        ex = examples[int(rng.integers(len(examples)))]
        mask = registry.get(ex.client_id).relevant.bits
        worst = max(worst, gradcheck(model, ex, mask, seed=int(rng.integers(2**31))))
    click.echo(f"max relative error: {worst:.3e}")
    sys.exit(0 if worst < 1e-4 else 1)


@main.command()
@click.option("--model", "model_path", type=click.Path(path_type=Path), required=True)
@click.option("--corpus", "corpus_dir", type=click.Path(path_type=Path), required=True)
@click.option("--log", "log_path", type=click.Path(path_type=Path), default="predictions.jsonl",
              show_default=True, envvar="INTENTDESK_LOG")
@click.option("--host", default="127.0.0.1", show_default=True, envvar="INTENTDESK_HOST")
@click.option("--port", default=8000, show_default=True, envvar="INTENTDESK_PORT")
def serve(model_path, corpus_dir, log_path, host, port):
    """Serve predictions over HTTP with hot-updatable client lists."""
    import uvicorn

    from .service import create_app

    catalog, registry, _ = load_corpus_dir(corpus_dir)
    model = load_checkpoint(model_path)
    app = create_app(model, registry, log_path)
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
