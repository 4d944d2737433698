"""Intent catalog, industries, and the per-client registry of relevant-intents masks."""

from __future__ import annotations

import hashlib
import json
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional

import numpy as np


class RegistryError(ValueError):
    """Raised on bad registry operations (duplicate ids, length mismatches, unknown names)."""


@dataclass(frozen=True)
class IntentCatalog:
    """Ordered global set of intent labels; fixes the index space for masks and logits."""

    labels: tuple[str, ...]
    index: Mapping[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.labels:
            raise ValueError("catalog must be non-empty")
        if any(not isinstance(l, str) or not l for l in self.labels):
            raise ValueError("labels must be non-empty strings")
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("labels must be unique")
        object.__setattr__(self, "index", {l: i for i, l in enumerate(self.labels)})

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def size(self) -> int:
        return len(self.labels)

    def fingerprint(self) -> str:
        """Stable hash of the ordered label list; stored in checkpoints."""
        h = hashlib.sha256("\n".join(self.labels).encode("utf-8"))
        return h.hexdigest()

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.labels) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "IntentCatalog":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(tuple(l for l in lines if l))


@dataclass(frozen=True)
class Industry:
    """A vertical with its subset of catalog intent ids."""

    name: str
    intents: frozenset[int]

    def __post_init__(self):
        if not self.intents:
            raise ValueError(f"industry {self.name!r} has no intents")


def full_mask(num_intents: int) -> np.ndarray:
    return np.ones(num_intents, dtype=bool)


@dataclass
class RelevantIntentsMask:
    """Fixed-length binary membership vector over the catalog; equality is set equality."""

    bits: np.ndarray

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=bool)
        if self.bits.ndim != 1:
            raise ValueError("mask must be one-dimensional")

    @classmethod
    def from_ids(cls, ids: Iterable[int], num_intents: int) -> "RelevantIntentsMask":
        bits = np.zeros(num_intents, dtype=bool)
        for i in ids:
            if not 0 <= i < num_intents:
                raise ValueError(f"intent id {i} outside [0, {num_intents})")
            bits[i] = True
        return cls(bits)

    def ids(self) -> list[int]:
        return np.flatnonzero(self.bits).tolist()

    def cardinality(self) -> int:
        return int(self.bits.sum())

    def __len__(self) -> int:
        return len(self.bits)

    def __eq__(self, other) -> bool:
        if not isinstance(other, RelevantIntentsMask):
            return NotImplemented
        return len(self.bits) == len(other.bits) and bool(np.array_equal(self.bits, other.bits))

    def to_hex(self) -> str:
        return np.packbits(self.bits).tobytes().hex()

    @classmethod
    def from_hex(cls, hexstr: str, num_intents: int) -> "RelevantIntentsMask":
        packed = np.frombuffer(bytes.fromhex(hexstr), dtype=np.uint8)
        bits = np.unpackbits(packed)[:num_intents].astype(bool)
        return cls(bits)


@dataclass
class ClientProfile:
    client_id: str
    industry: Optional[str]
    relevant: RelevantIntentsMask
    version: int = 1


class ClientRegistry:
    """Read-mostly store of client profiles; writes serialized, each atomic w.r.t. reads."""

    def __init__(self, catalog: IntentCatalog, industries: Iterable[Industry] = ()):
        self.catalog = catalog
        self.industries: dict[str, Industry] = {}
        for ind in industries:
            self.add_industry(ind)
        self._clients: dict[str, ClientProfile] = {}
        self._lock = threading.RLock()

    def add_industry(self, industry: Industry) -> None:
        if not all(0 <= i < self.catalog.size for i in industry.intents):
            raise RegistryError(f"industry {industry.name!r} references unknown intent ids")
        self.industries[industry.name] = industry

    def register_client(
        self,
        client_id: str,
        industry: Optional[str] = None,
        mask: Optional[RelevantIntentsMask] = None,
    ) -> ClientProfile:
        with self._lock:
            if client_id in self._clients:
                raise RegistryError(f"client {client_id!r} already registered")
            if industry is not None and industry not in self.industries:
                raise RegistryError(f"unknown industry {industry!r}")
            if mask is None:
                mask = RelevantIntentsMask(full_mask(self.catalog.size))
            elif len(mask) != self.catalog.size:
                raise RegistryError(
                    f"mask length {len(mask)} != catalog size {self.catalog.size}"
                )
            profile = ClientProfile(client_id, industry, mask, version=1)
            self._clients[client_id] = profile
            return profile

    def update_relevant_intents(
        self, client_id: str, mask: RelevantIntentsMask
    ) -> ClientProfile:
        with self._lock:
            old = self.get(client_id)
            if len(mask) != self.catalog.size:
                raise RegistryError(
                    f"mask length {len(mask)} != catalog size {self.catalog.size}"
                )
            # Replace the whole profile object so concurrent readers holding the old
            # one never observe a half-updated mask.
            new = ClientProfile(client_id, old.industry, mask, version=old.version + 1)
            self._clients[client_id] = new
            return new

    def assign_industry(self, client_id: str, industry_name: str) -> ClientProfile:
        with self._lock:
            old = self.get(client_id)
            if industry_name not in self.industries:
                raise RegistryError(f"unknown industry {industry_name!r}")
            new = ClientProfile(client_id, industry_name, old.relevant, version=old.version + 1)
            self._clients[client_id] = new
            return new

    def get(self, client_id: str) -> ClientProfile:
        profile = self._clients.get(client_id)
        if profile is None:
            raise RegistryError(f"unknown client {client_id!r}")
        return profile

    def __contains__(self, client_id: str) -> bool:
        return client_id in self._clients

    def client_ids(self) -> list[str]:
        return sorted(self._clients)

    def masks(self) -> dict[str, np.ndarray]:
        """Snapshot of client_id -> mask bits for training/eval code."""
        with self._lock:
            return {cid: p.relevant.bits.copy() for cid, p in self._clients.items()}

    # persistence: one JSON record per line, masks hex-encoded

    def save(self, path: str | Path) -> None:
        with self._lock:
            lines = []
            for cid in sorted(self._clients):
                p = self._clients[cid]
                lines.append(
                    json.dumps(
                        {
                            "client_id": p.client_id,
                            "industry": p.industry,
                            "version": p.version,
                            "mask": p.relevant.to_hex(),
                        },
                        sort_keys=True,
                    )
                )
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    def load_clients(self, path: str | Path) -> None:
        with self._lock:
            for line in Path(path).read_text(encoding="utf-8").splitlines():
                if not line.strip():
                    continue
                rec = json.loads(line)
                mask = RelevantIntentsMask.from_hex(rec["mask"], self.catalog.size)
                self._clients[rec["client_id"]] = ClientProfile(
                    rec["client_id"], rec["industry"], mask, version=rec["version"]
                )


def save_industries(industries: Iterable[Industry], path: str | Path) -> None:
    lines = [
        json.dumps({"name": ind.name, "intents": sorted(ind.intents)}, sort_keys=True)
        for ind in industries
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_industries(path: str | Path) -> list[Industry]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            rec = json.loads(line)
            out.append(Industry(rec["name"], frozenset(rec["intents"])))
    return out
