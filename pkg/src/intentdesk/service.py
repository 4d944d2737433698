"""HTTP serving layer: prediction, live per-client list updates, prediction
logging, and list rebuilds from the logged history.

The model is immutable while serving; only client masks are hot-updatable.
"""

from __future__ import annotations

import json
import threading
import time
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, HTTPException, Query
from pydantic import BaseModel, Field

from . import lists
from .catalog import ClientRegistry, IntentCatalog, RegistryError, RelevantIntentsMask
from .inference import FilterMode, predict
from .trainer import ModelBundle

TOP_K = 5


class PredictRequest(BaseModel):
    client_id: str
    subject: str = ""
    description: str = ""
    filter_mode: str = "strict"


class ScoredIntent(BaseModel):
    intent: str
    probability: float


class PredictResponse(BaseModel):
    chosen: Optional[str]
    top1: str
    filtered: bool
    top_k: list[ScoredIntent]
    model_fingerprint: str
    mask_version: int


class IntentListBody(BaseModel):
    intents: list[str] = Field(min_length=0)


class PredictionLog:
    """Append-only JSONL of served predictions, replayable into per-client histograms."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()

    def append(self, client_id: str, intent: Optional[str], mask_version: int) -> None:
        rec = {
            "timestamp": time.time(),
            "client_id": client_id,
            "intent": intent,
            "mask_version": mask_version,
        }
        with self._lock:
            with open(self.path, "a", encoding="utf-8") as f:
                f.write(json.dumps(rec, sort_keys=True) + "\n")

    def histogram(self, client_id: str, catalog: IntentCatalog) -> lists.IntentHistogram:
        hist = lists.IntentHistogram()
        if not self.path.exists():
            return hist
        with self._lock:
            text = self.path.read_text(encoding="utf-8")
        for line in text.splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            if rec["client_id"] == client_id and rec["intent"] in catalog.index:
                hist.add(catalog.index[rec["intent"]])
        return hist


def create_app(
    model: ModelBundle,
    registry: ClientRegistry,
    log_path: str | Path,
    log_chosen: bool = True,
) -> FastAPI:
    catalog = registry.catalog
    if model.catalog_fingerprint != catalog.fingerprint():
        raise ValueError("checkpoint catalog fingerprint does not match the registry catalog")
    log = PredictionLog(log_path)
    app = FastAPI(title="intentdesk")

    def profile_or_404(client_id: str):
        try:
            return registry.get(client_id)
        except RegistryError:
            raise HTTPException(404, detail={"error": "unknown_client", "client_id": client_id})

    def profile_body(p):
        return {
            "client_id": p.client_id,
            "industry": p.industry,
            "version": p.version,
            "intents": [catalog.labels[i] for i in p.relevant.ids()],
        }

    @app.get("/v1/health")
    def health():
        return {"status": "ok", "model_fingerprint": model.catalog_fingerprint}

    @app.post("/v1/predict", response_model=PredictResponse)
    def predict_endpoint(req: PredictRequest):
        try:
            mode = FilterMode(req.filter_mode)
        except ValueError:
            raise HTTPException(
                422, detail={"error": "bad_filter_mode", "filter_mode": req.filter_mode}
            )
        if not req.subject and not req.description:
            raise HTTPException(422, detail={"error": "empty_ticket"})
        profile = profile_or_404(req.client_id)  # one atomic (mask, version) snapshot
        text = f"{req.subject} {req.description}".strip()
        result = predict(model, text, profile.relevant.bits, mode)

        order = result.ranked[:TOP_K]
        top_k = [
            ScoredIntent(intent=catalog.labels[i], probability=float(result.scores[i]))
            for i in order
        ]
        chosen_label = catalog.labels[result.chosen] if result.chosen is not None else None
        log.append(
            req.client_id,
            chosen_label if log_chosen else catalog.labels[result.top1],
            profile.version,
        )
        return PredictResponse(
            chosen=chosen_label,
            top1=catalog.labels[result.top1],
            filtered=result.filtered,
            top_k=top_k,
            model_fingerprint=model.catalog_fingerprint,
            mask_version=profile.version,
        )

    @app.put("/v1/clients/{client_id}")
    @app.put("/v1/clients/{client_id}/intents")
    def put_intents(client_id: str, body: IntentListBody):
        profile_or_404(client_id)
        unknown = [l for l in body.intents if l not in catalog.index]
        if unknown:
            raise HTTPException(422, detail={"error": "unknown_intents", "intents": unknown})
        mask = RelevantIntentsMask.from_ids(
            [catalog.index[l] for l in body.intents], catalog.size
        )
        return profile_body(registry.update_relevant_intents(client_id, mask))

    @app.get("/v1/clients/{client_id}")
    def get_client(client_id: str):
        return profile_body(profile_or_404(client_id))

    @app.post("/v1/clients/{client_id}/rebuild-list")
    def rebuild_list(client_id: str, coverage: float = Query(gt=0.0, le=1.0)):
        profile_or_404(client_id)
        hist = log.histogram(client_id, catalog)
        if hist.total == 0:
            raise HTTPException(
                409, detail={"error": "no_history", "client_id": client_id}
            )
        mask = lists.build_list(hist, coverage, catalog.size)
        return profile_body(registry.update_relevant_intents(client_id, mask))

    return app
