"""Trainable hashed embedding-bag text encoder.

Stands in for a pretrained transformer's pooled output: tokens are hashed
(FNV-1a 64-bit) into a fixed table and the ticket embedding is the mean of the
touched rows.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1

_TOKEN_RE = re.compile(r"[0-9A-Za-z]+")


@dataclass(frozen=True)
class EncoderConfig:
    buckets: int = 2**15
    embedding_dim: int = 64
    hash_algorithm: str = "fnv1a64"
    fold_case: bool = True

    def __post_init__(self):
        if self.buckets < 1 or self.embedding_dim < 1:
            raise ValueError("buckets and embedding_dim must be >= 1")
        if self.hash_algorithm != "fnv1a64":
            raise ValueError(f"unsupported hash algorithm {self.hash_algorithm!r}")


@dataclass
class EncoderParams:
    table: np.ndarray  # buckets x embedding_dim, float64

    @classmethod
    def init(cls, config: EncoderConfig, seed: int) -> "EncoderParams":
        rng = np.random.default_rng(seed)
        scale = 1.0 / np.sqrt(config.embedding_dim)
        table = rng.uniform(-scale, scale, size=(config.buckets, config.embedding_dim))
        return cls(table)


def fnv1a64(token: str) -> int:
    h = _FNV_OFFSET
    for b in token.encode("utf-8"):
        h = ((h ^ b) * _FNV_PRIME) & _MASK64
    return h


def tokenize(text: str, fold_case: bool = True) -> list[str]:
    """Split on runs of non-alphanumeric characters, lowercasing when folding."""
    if fold_case:
        text = text.lower()
    return _TOKEN_RE.findall(text)


def token_ids(text: str, config: EncoderConfig) -> np.ndarray:
    """Hash the text's tokens into table row indices."""
    toks = tokenize(text, config.fold_case)
    return np.array([fnv1a64(t) % config.buckets for t in toks], dtype=np.int64)


def encode_ids(ids: np.ndarray, params: EncoderParams) -> np.ndarray:
    if len(ids) == 0:
        return np.zeros(params.table.shape[1])
    return params.table[ids].mean(axis=0)


def encode(text: str, params: EncoderParams, config: EncoderConfig) -> np.ndarray:
    """Mean of hashed-token embedding rows; zero vector for empty text."""
    return encode_ids(token_ids(text, config), params)


def encode_backward(
    ids: np.ndarray, upstream_grad: np.ndarray, grad_table: np.ndarray
) -> None:
    """Accumulate d(encode)/d(table) into grad_table: each touched row gets
    upstream/n, summed over repeats."""
    if len(ids) == 0:
        return
    np.add.at(grad_table, ids, upstream_grad / len(ids))


class BatchEncoder:
    """Precomputed token ids for a fixed list of texts, with batched forward/backward.

    Token hashing is the slow part; once hashed, an epoch's encodes reduce to
    segment means over the embedding table.
    """

    def __init__(self, texts: list[str], config: EncoderConfig):
        self.config = config
        ids = [token_ids(t, config) for t in texts]
        self.lengths = np.array([len(x) for x in ids], dtype=np.int64)
        self.flat = np.concatenate(ids) if ids else np.zeros(0, dtype=np.int64)
        self.offsets = np.zeros(len(ids) + 1, dtype=np.int64)
        np.cumsum(self.lengths, out=self.offsets[1:])

    def __len__(self) -> int:
        return len(self.lengths)

    def _gather(self, batch: np.ndarray):
        parts = [self.flat[self.offsets[i] : self.offsets[i + 1]] for i in batch]
        flat = np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)
        lengths = self.lengths[batch]
        return flat, lengths

    def forward(self, batch: np.ndarray, params: EncoderParams) -> np.ndarray:
        """Embeddings for the examples at positions `batch`; rows with no tokens are zero."""
        flat, lengths = self._gather(batch)
        dim = params.table.shape[1]
        out = np.zeros((len(batch), dim))
        if len(flat):
            rows = params.table[flat]
            seg = np.repeat(np.arange(len(batch)), lengths)
            np.add.at(out, seg, rows)
        denom = np.maximum(lengths, 1).astype(float)
        return out / denom[:, None]

    def backward(
        self, batch: np.ndarray, upstream: np.ndarray, grad_table: np.ndarray
    ) -> None:
        flat, lengths = self._gather(batch)
        if not len(flat):
            return
        denom = np.maximum(lengths, 1).astype(float)
        per_row = np.repeat(upstream / denom[:, None], lengths, axis=0)
        np.add.at(grad_table, flat, per_row)
