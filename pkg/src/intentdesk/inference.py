"""Prediction over a trained model with the three filter modes."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import encoder as enc
from . import head as hd
from .trainer import ModelBundle


class FilterMode(str, enum.Enum):
    NONE = "none"
    STRICT = "strict"
    SEARCH = "search"


@dataclass
class PredictionResult:
    ranked: np.ndarray  # intent ids by descending logit, ties to the smaller id
    top1: int
    chosen: Optional[int]
    filtered: bool
    scores: np.ndarray  # softmax probabilities indexed by intent id


def rank_logits(logits: np.ndarray) -> np.ndarray:
    """Intent ids sorted by logit descending; equal logits keep ascending id order."""
    return np.argsort(-logits, kind="stable")


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max()
    e = np.exp(shifted)
    return e / e.sum()


def choose(logits: np.ndarray, mask: np.ndarray, mode: FilterMode) -> PredictionResult:
    """Apply a filter mode to raw logits and a relevant-intents mask."""
    ranked = rank_logits(logits)
    top1 = int(ranked[0])
    mask = np.asarray(mask, dtype=bool)
    in_mask = bool(mask[top1])

    if mode == FilterMode.NONE:
        chosen: Optional[int] = top1
        filtered = False
    elif mode == FilterMode.STRICT:
        chosen = top1 if in_mask else None
        filtered = not in_mask
    else:  # SEARCH: first ranked intent inside the mask
        filtered = not in_mask
        chosen = None
        for i in ranked:
            if mask[i]:
                chosen = int(i)
                break
    return PredictionResult(ranked, top1, chosen, filtered, softmax(logits))


def predict(
    model: ModelBundle, text: str, mask: np.ndarray, mode: FilterMode = FilterMode.STRICT
) -> PredictionResult:
    """Eval-mode forward pass plus filtering; deterministic and thread-safe."""
    if len(mask) != model.head_config.num_classes:
        raise ValueError(
            f"mask length {len(mask)} != model classes {model.head_config.num_classes}"
        )
    e = enc.encode(text, model.encoder_params, model.encoder_config)
    logits, _ = hd.forward(e, mask, model.head_params, model.head_config)
    return choose(logits, mask, mode)


def predict_batch(
    model: ModelBundle,
    batch_encoder: enc.BatchEncoder,
    batch: np.ndarray,
    masks: np.ndarray,
) -> np.ndarray:
    """Raw logits for many examples at once (eval mode)."""
    E = batch_encoder.forward(batch, model.encoder_params)
    logits, _ = hd.forward(E, masks, model.head_params, model.head_config)
    return logits


def masked_argmax_oracle(logits: np.ndarray, mask: np.ndarray) -> int:
    """Argmax restricted to mask members, ties to the smaller id; the reference
    for search-mode filtering."""
    mask = np.asarray(mask, dtype=bool)
    members = np.flatnonzero(mask)
    if len(members) == 0:
        raise ValueError("empty mask")
    best = members[np.argmax(logits[members])]
    return int(best)
