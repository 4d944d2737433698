"""Cross-entropy training of encoder + head with decoupled weight decay,
early stopping, intent-list noise injection, and checkpointing."""

from __future__ import annotations

import copy
import json
import struct
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Mapping, Optional

import numpy as np

from . import encoder as enc
from . import head as hd
from .catalog import IntentCatalog
from .corpus import DatasetSplit, LabeledExample

PAPER_LEARNING_RATE = 1e-6  # preset for a large pretrained encoder; far too small here


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 512
    max_epochs: int = 30
    patience: int = 3
    learning_rate: float = 1e-3
    weight_decay: float = 0.10
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    noise_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.patience < 1 or self.max_epochs < 1:
            raise ValueError("batch_size, patience, max_epochs must be >= 1")
        if not (0 <= self.noise_rate <= 1):
            raise ValueError("noise_rate must be in [0, 1]")
        if self.learning_rate <= 0 or self.weight_decay < 0:
            raise ValueError("bad optimizer rates")


@dataclass
class ModelBundle:
    """Everything needed to run and reproduce a trained model."""

    encoder_config: enc.EncoderConfig
    encoder_params: enc.EncoderParams
    head_config: hd.HeadConfig
    head_params: hd.HeadParams
    catalog_fingerprint: str
    train_config: TrainConfig
    training_log: list[dict] = field(default_factory=list)

    def named_params(self) -> dict[str, np.ndarray]:
        out = {"encoder_table": self.encoder_params.table}
        out.update(self.head_params.named())
        return out


def cross_entropy(logits: np.ndarray, gold: int) -> tuple[float, np.ndarray]:
    """Stable -log softmax(logits)[gold]; returns (loss, dloss/dlogits)."""
    if not 0 <= gold < len(logits):
        raise ValueError(f"gold {gold} outside [0, {len(logits)})")
    shifted = logits - logits.max()
    logsumexp = np.log(np.exp(shifted).sum())
    loss = logsumexp - shifted[gold]
    grad = np.exp(shifted - logsumexp)
    grad[gold] -= 1.0
    return float(loss), grad


def cross_entropy_batch(logits: np.ndarray, golds: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over a batch and its logits gradient."""
    if golds.min() < 0 or golds.max() >= logits.shape[1]:
        raise ValueError("gold intent outside catalog range")
    shifted = logits - logits.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(len(golds))
    losses = logsumexp - shifted[rows, golds]
    grad = np.exp(shifted - logsumexp[:, None])
    grad[rows, golds] -= 1.0
    return float(losses.mean()), grad / len(golds)


def inject_noise(mask: np.ndarray, k: float, rng: np.random.Generator) -> np.ndarray:
    """Flip each intent's membership independently with probability k."""
    if not (0 <= k <= 1):
        raise ValueError("noise rate must be in [0, 1]")
    if k == 0:
        return mask
    flips = rng.random(mask.shape) < k
    return mask ^ flips


class AdamW:
    """Adam with decoupled weight decay over a fixed-order dict of tensors."""

    def __init__(self, params: Mapping[str, np.ndarray], cfg: TrainConfig):
        self.cfg = cfg
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray]) -> None:
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.beta1**self.t
        bc2 = 1.0 - c.beta2**self.t
        for k, theta in params.items():
            g = grads[k]
            m = self.m[k]
            v = self.v[k]
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + c.eps)
            theta -= c.learning_rate * (update + c.weight_decay * theta)


class TrainingDiverged(RuntimeError):
    pass


def _model_loss(bundle: ModelBundle, texts_enc: enc.BatchEncoder, batch: np.ndarray,
                masks: np.ndarray, golds: np.ndarray) -> float:
    E = texts_enc.forward(batch, bundle.encoder_params)
    logits, _ = hd.forward(E, masks, bundle.head_params, bundle.head_config, train=False)
    loss, _ = cross_entropy_batch(logits, golds)
    return loss


def evaluate_loss(bundle: ModelBundle, texts_enc: enc.BatchEncoder,
                  masks: np.ndarray, golds: np.ndarray, batch_size: int = 2048) -> float:
    total = 0.0
    n = len(golds)
    for start in range(0, n, batch_size):
        batch = np.arange(start, min(start + batch_size, n))
        total += _model_loss(bundle, texts_enc, batch, masks[batch], golds[batch]) * len(batch)
    return total / n


def train(
    split: DatasetSplit,
    client_masks: Mapping[str, np.ndarray],
    catalog: IntentCatalog,
    encoder_config: enc.EncoderConfig,
    head_config: hd.HeadConfig,
    train_config: TrainConfig,
) -> ModelBundle:
    """Seeded AdamW training with per-example list noise and validation early stopping.

    Returns the parameters from the best-validation epoch.
    """
    if not split.train or not split.validation:
        raise ValueError("train and validation splits must be non-empty")
    for ex in split.train + split.validation:
        if ex.client_id not in client_masks:
            raise ValueError(f"client {ex.client_id!r} has no registered mask")

    rng = np.random.default_rng(train_config.seed)
    bundle = ModelBundle(
        encoder_config=encoder_config,
        encoder_params=enc.EncoderParams.init(encoder_config, int(rng.integers(2**31))),
        head_config=head_config,
        head_params=hd.init_params(head_config, int(rng.integers(2**31))),
        catalog_fingerprint=catalog.fingerprint(),
        train_config=train_config,
    )

    train_enc = enc.BatchEncoder([ex.text for ex in split.train], encoder_config)
    val_enc = enc.BatchEncoder([ex.text for ex in split.validation], encoder_config)
    train_masks = np.stack([client_masks[ex.client_id] for ex in split.train]).astype(bool)
    val_masks = np.stack([client_masks[ex.client_id] for ex in split.validation]).astype(bool)
    train_golds = np.array([ex.gold_intent for ex in split.train])
    val_golds = np.array([ex.gold_intent for ex in split.validation])

    params = bundle.named_params()
    opt = AdamW(params, train_config)
    n = len(split.train)
    k = train_config.noise_rate

    best_val = np.inf
    best_state: Optional[dict[str, np.ndarray]] = None
    best_log: list[dict] = []
    bad_epochs = 0

    for epoch in range(1, train_config.max_epochs + 1):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, train_config.batch_size):
            batch = order[start : start + train_config.batch_size]
            masks = inject_noise(train_masks[batch], k, rng)
            E = train_enc.forward(batch, bundle.encoder_params)
            logits, cache = hd.forward(
                E, masks, bundle.head_params, bundle.head_config, train=True, rng=rng
            )
            loss, dlogits = cross_entropy_batch(logits, train_golds[batch])
            if not np.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, step {start // train_config.batch_size}"
                )
            epoch_loss += loss * len(batch)
            hg = hd.backward(cache, dlogits, bundle.head_params, bundle.head_config)
            grads = {"encoder_table": np.zeros_like(bundle.encoder_params.table)}
            train_enc.backward(batch, hg.d_embedding, grads["encoder_table"])
            grads.update(hg.params.named())
            opt.step(params, grads)

        val_loss = evaluate_loss(bundle, val_enc, val_masks, val_golds)
        bundle.training_log.append(
            {"epoch": epoch, "train_loss": epoch_loss / n, "val_loss": val_loss}
        )
        if val_loss < best_val:
            best_val = val_loss
            best_state = {name: arr.copy() for name, arr in params.items()}
            best_log = copy.deepcopy(bundle.training_log)
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= train_config.patience:
                break

    for name, arr in params.items():
        arr[:] = best_state[name]
    bundle.training_log = best_log + [
        rec for rec in bundle.training_log if rec["epoch"] > len(best_log)
    ]
    return bundle


def gradcheck(
    bundle: ModelBundle,
    example: LabeledExample,
    mask: np.ndarray,
    eps: float = 1e-5,
    num_coords: int = 200,
    seed: int = 0,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Runs the dropout-free (eval-mode) path over a random subset of coordinates
    of every parameter tensor.
    """
    rng = np.random.default_rng(seed)
    ids = enc.token_ids(example.text, bundle.encoder_config)

    def loss_and_grads():
        e = enc.encode_ids(ids, bundle.encoder_params)
        logits, cache = hd.forward(e, mask, bundle.head_params, bundle.head_config)
        loss, dlogits = cross_entropy(logits, example.gold_intent)
        hg = hd.backward(cache, dlogits, bundle.head_params, bundle.head_config)
        grads = {"encoder_table": np.zeros_like(bundle.encoder_params.table)}
        enc.encode_backward(ids, hg.d_embedding, grads["encoder_table"])
        grads.update(hg.params.named())
        return loss, grads

    _, grads = loss_and_grads()
    params = bundle.named_params()

    # Sample coordinates across all tensors, biased toward touched encoder rows
    # (untouched rows have exactly zero gradient and zero sensitivity).
    coords: list[tuple[str, tuple]] = []
    names = sorted(params)
    for _ in range(num_coords):
        name = names[int(rng.integers(len(names)))]
        if name == "encoder_table" and len(ids):
            row = int(ids[int(rng.integers(len(ids)))])
            col = int(rng.integers(params[name].shape[1]))
            coords.append((name, (row, col)))
        else:
            flat = int(rng.integers(params[name].size))
            coords.append((name, np.unravel_index(flat, params[name].shape)))

    max_rel = 0.0
    for name, idx in coords:
        theta = params[name]
        orig = theta[idx]
        theta[idx] = orig + eps
        lp, _ = cross_entropy(
            hd.forward(enc.encode_ids(ids, bundle.encoder_params), mask,
                       bundle.head_params, bundle.head_config)[0],
            example.gold_intent,
        )
        theta[idx] = orig - eps
        lm, _ = cross_entropy(
            hd.forward(enc.encode_ids(ids, bundle.encoder_params), mask,
                       bundle.head_params, bundle.head_config)[0],
            example.gold_intent,
        )
        theta[idx] = orig
        numeric = (lp - lm) / (2 * eps)
        analytic = grads[name][idx]
        # Below ~1e-6 the central difference is dominated by float64 rounding
        # of the two losses (~1e-11 absolute), not by the gradient itself.
        denom = max(abs(numeric), abs(analytic), 1e-6)
        max_rel = max(max_rel, abs(numeric - analytic) / denom)
    return max_rel


# ---------------------------------------------------------------------------
# Checkpoint format: one JSON header line (configs, tensor manifest, catalog
# fingerprint) followed by raw little-endian float64 tensor payloads.

CHECKPOINT_MAGIC = "intentdesk-checkpoint"
CHECKPOINT_VERSION = 1


def save_checkpoint(bundle: ModelBundle, path: str | Path) -> None:
    tensors = bundle.named_params()
    names = sorted(tensors)
    header = {
        "magic": CHECKPOINT_MAGIC,
        "version": CHECKPOINT_VERSION,
        "catalog_fingerprint": bundle.catalog_fingerprint,
        "encoder_config": asdict(bundle.encoder_config),
        "head_config": asdict(bundle.head_config),
        "train_config": asdict(bundle.train_config),
        "training_log": bundle.training_log,
        "tensors": [{"name": n, "shape": list(tensors[n].shape)} for n in names],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for n in names:
            f.write(np.ascontiguousarray(tensors[n], dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> ModelBundle:
    with open(path, "rb") as f:
        (hlen,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(hlen).decode("utf-8"))
        if header.get("magic") != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not an intentdesk checkpoint")
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {header.get('version')}")
        tensors = {}
        for spec in header["tensors"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(f.read(8 * count), dtype="<f8").reshape(shape).copy()
            tensors[spec["name"]] = data

    ecfg = enc.EncoderConfig(**header["encoder_config"])
    hcfg_raw = dict(header["head_config"])
    hcfg = hd.HeadConfig(**hcfg_raw)
    tcfg_raw = dict(header["train_config"])
    tcfg = TrainConfig(**tcfg_raw)
    res_w = [tensors[f"residual_w{i}"] for i in range(hcfg.num_residual_layers)]
    res_b = [tensors[f"residual_b{i}"] for i in range(hcfg.num_residual_layers)]
    hp = hd.HeadParams(
        intent_embeddings=tensors["intent_embeddings"],
        proj_w=tensors["proj_w"],
        proj_b=tensors["proj_b"],
        residual_w=res_w,
        residual_b=res_b,
        cls_w=tensors["cls_w"],
        cls_b=tensors["cls_b"],
    )
    return ModelBundle(
        encoder_config=ecfg,
        encoder_params=enc.EncoderParams(tensors["encoder_table"]),
        head_config=hcfg,
        head_params=hp,
        catalog_fingerprint=header["catalog_fingerprint"],
        train_config=tcfg,
        training_log=header["training_log"],
    )
