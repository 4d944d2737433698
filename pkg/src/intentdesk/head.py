"""Classification head fusing the text embedding with the relevant-intents mask.

Topology: the text embedding passes through unchanged; the mask is pooled into a
small dense feature (mean of per-intent embedding rows, with heavy row dropout
in training); both are aggregated, projected, run through residual tanh layers,
and classified into intent logits. All passes are explicit numpy so gradients
can be checked against finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

AGGREGATORS = ("concat", "sum", "mean")


@dataclass(frozen=True)
class HeadConfig:
    text_dim: int
    num_classes: int
    intents_embed_dim: int = 16
    aggregator: str = "concat"
    projection_dim: int = 128
    num_residual_layers: int = 1
    intents_embedding_dropout: float = 0.90
    residual_dropout: float = 0.10
    use_intents_feature: bool = True

    def __post_init__(self):
        if self.aggregator not in AGGREGATORS:
            raise ValueError(f"aggregator must be one of {AGGREGATORS}")
        if self.aggregator in ("sum", "mean") and self.intents_embed_dim != self.text_dim:
            raise ValueError("sum/mean aggregation requires intents_embed_dim == text_dim")
        if not (0 <= self.intents_embedding_dropout < 1):
            raise ValueError("intents_embedding_dropout must be in [0, 1)")
        if not (0 <= self.residual_dropout < 1):
            raise ValueError("residual_dropout must be in [0, 1)")

    @property
    def aggregated_dim(self) -> int:
        if self.aggregator == "concat":
            return self.text_dim + self.intents_embed_dim
        return self.text_dim


@dataclass
class HeadParams:
    intent_embeddings: np.ndarray  # C x intents_embed_dim
    proj_w: np.ndarray  # projection_dim x aggregated_dim
    proj_b: np.ndarray
    residual_w: list[np.ndarray]  # each projection_dim x projection_dim
    residual_b: list[np.ndarray]
    cls_w: np.ndarray  # C x projection_dim
    cls_b: np.ndarray

    def named(self) -> dict[str, np.ndarray]:
        out = {
            "intent_embeddings": self.intent_embeddings,
            "proj_w": self.proj_w,
            "proj_b": self.proj_b,
            "cls_w": self.cls_w,
            "cls_b": self.cls_b,
        }
        for i, (w, b) in enumerate(zip(self.residual_w, self.residual_b)):
            out[f"residual_w{i}"] = w
            out[f"residual_b{i}"] = b
        return out


def _glorot(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    a = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-a, a, size=(rows, cols))


def init_params(config: HeadConfig, seed: int) -> HeadParams:
    """Uniform Glorot weights, zero biases, deterministic per seed."""
    rng = np.random.default_rng(seed)
    d = config.projection_dim
    res_w = [_glorot(rng, d, d) for _ in range(config.num_residual_layers)]
    res_b = [np.zeros(d) for _ in range(config.num_residual_layers)]
    return HeadParams(
        intent_embeddings=_glorot(rng, config.num_classes, config.intents_embed_dim),
        proj_w=_glorot(rng, d, config.aggregated_dim),
        proj_b=np.zeros(d),
        residual_w=res_w,
        residual_b=res_b,
        cls_w=_glorot(rng, config.num_classes, d),
        cls_b=np.zeros(config.num_classes),
    )


@dataclass
class ForwardCache:
    embeddings: np.ndarray
    masks: np.ndarray
    pool_weights: np.ndarray  # per-example row weights used to form the intents feature
    aggregated: np.ndarray
    residual_in: list[np.ndarray]
    residual_act: list[np.ndarray]
    residual_drop: list[Optional[np.ndarray]]
    final: np.ndarray


def intents_feature(
    masks: np.ndarray,
    params: HeadParams,
    config: HeadConfig,
    train: bool,
    rng: Optional[np.random.Generator],
) -> tuple[np.ndarray, np.ndarray]:
    """Pool the relevant intents' embedding rows into one feature per example.

    Eval: mean over relevant rows. Train: each relevant row is independently
    dropped with probability p and survivors rescaled by 1/(1-p), keeping the
    expectation equal to the eval feature. Returns (feature, row_weights) where
    feature = row_weights @ intent_embeddings.
    """
    masks = np.atleast_2d(masks).astype(bool)
    counts = masks.sum(axis=1)
    denom = np.maximum(counts, 1).astype(float)
    if not config.use_intents_feature:
        weights = np.zeros(masks.shape, dtype=float)
    elif train and config.intents_embedding_dropout > 0:
        p = config.intents_embedding_dropout
        keep = masks & (rng.random(masks.shape) < (1.0 - p))
        weights = keep / ((1.0 - p) * denom[:, None])
    else:
        weights = masks / denom[:, None]
    return weights @ params.intent_embeddings, weights


def forward(
    e: np.ndarray,
    mask: np.ndarray,
    params: HeadParams,
    config: HeadConfig,
    train: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> tuple[np.ndarray, ForwardCache]:
    """Logits for a batch (or single example) of embeddings and masks."""
    single = e.ndim == 1
    E = np.atleast_2d(e)
    M = np.atleast_2d(mask).astype(bool)
    if E.shape[1] != config.text_dim or M.shape[1] != config.num_classes:
        raise ValueError(
            f"shape mismatch: got embedding dim {E.shape[1]} (want {config.text_dim}), "
            f"mask length {M.shape[1]} (want {config.num_classes})"
        )
    if train and rng is None:
        raise ValueError("train-mode forward needs an rng for dropout sampling")

    V, weights = intents_feature(M, params, config, train, rng)
    if config.aggregator == "concat":
        Z = np.concatenate([E, V], axis=1)
    elif config.aggregator == "sum":
        Z = E + V
    else:
        Z = (E + V) / 2.0

    X = Z @ params.proj_w.T + params.proj_b
    res_in, res_act, res_drop = [], [], []
    q = config.residual_dropout
    for w, b in zip(params.residual_w, params.residual_b):
        res_in.append(X)
        H = X @ w.T + b
        if train and q > 0:
            keep = (rng.random(H.shape) < (1.0 - q)) / (1.0 - q)
            H = H * keep
            res_drop.append(keep)
        else:
            res_drop.append(None)
        A = np.tanh(H)
        res_act.append(A)
        X = X + A
    logits = X @ params.cls_w.T + params.cls_b

    cache = ForwardCache(E, M, weights, Z, res_in, res_act, res_drop, X)
    return (logits[0] if single else logits), cache


@dataclass
class HeadGrads:
    params: HeadParams  # same shapes, holding gradients
    d_embedding: np.ndarray


def zero_grads(config: HeadConfig) -> HeadParams:
    d = config.projection_dim
    return HeadParams(
        intent_embeddings=np.zeros((config.num_classes, config.intents_embed_dim)),
        proj_w=np.zeros((d, config.aggregated_dim)),
        proj_b=np.zeros(d),
        residual_w=[np.zeros((d, d)) for _ in range(config.num_residual_layers)],
        residual_b=[np.zeros(d) for _ in range(config.num_residual_layers)],
        cls_w=np.zeros((config.num_classes, d)),
        cls_b=np.zeros(config.num_classes),
    )


def backward(
    cache: ForwardCache,
    dlogits: np.ndarray,
    params: HeadParams,
    config: HeadConfig,
) -> HeadGrads:
    """Exact gradients of the cached (possibly stochastic) forward computation."""
    dlogits = np.atleast_2d(dlogits)
    g = zero_grads(config)

    g.cls_w[:] = dlogits.T @ cache.final
    g.cls_b[:] = dlogits.sum(axis=0)
    dX = dlogits @ params.cls_w

    for i in reversed(range(config.num_residual_layers)):
        A = cache.residual_act[i]
        dH = dX * (1.0 - A * A)
        if cache.residual_drop[i] is not None:
            dH = dH * cache.residual_drop[i]
        g.residual_w[i][:] = dH.T @ cache.residual_in[i]
        g.residual_b[i][:] = dH.sum(axis=0)
        dX = dX + dH @ params.residual_w[i]

    g.proj_w[:] = dX.T @ cache.aggregated
    g.proj_b[:] = dX.sum(axis=0)
    dZ = dX @ params.proj_w

    D = config.text_dim
    if config.aggregator == "concat":
        dE = dZ[:, :D]
        dV = dZ[:, D:]
    elif config.aggregator == "sum":
        dE = dZ
        dV = dZ
    else:
        dE = dZ / 2.0
        dV = dZ / 2.0

    if config.use_intents_feature:
        g.intent_embeddings[:] = cache.pool_weights.T @ dV

    return HeadGrads(g, dE)
