"""HTTP service: dataset browsing, training jobs, explanations, reports.

All numeric payloads are in normalized units; responses carry norm_stats so
clients can denormalize for display. GET endpoints are read-only and
deterministic (repeat calls return identical bytes). Training runs as a
single background job; the served model is swapped only after the job
finishes, so a failed run never leaves a half-updated model.
"""

from __future__ import annotations

import threading
import uuid
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .evaluate import (
    GROUP_KEYS,
    aggregate_impacts,
    compute_metrics,
    fidelity,
    occlude,
)
from .geo import NodeKind, graph_to_dict
from .lrp import (
    DEFAULT_EPSILON,
    ExplainTarget,
    collect_impact_samples,
    lrp_explain,
    node_importance,
)
from .model import (
    Model,
    TrainConfig,
    forward,
    grid_row_mask,
    init_model,
    model_hash,
    save_model,
    targets_matrix,
    train,
)
from .synth import Dataset


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message


@dataclass
class JobStatus:
    id: str
    kind: str
    state: str  # queued | running | done | failed
    progress: float
    message: str

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "kind": self.kind,
            "state": self.state,
            "progress": self.progress,
            "message": self.message,
        }


class AppState:
    """Shared state: one dataset, one frozen model, caches, and jobs."""

    def __init__(
        self,
        dataset: Optional[Dataset] = None,
        model: Optional[Model] = None,
        model_path: Optional[str | Path] = None,
    ):
        self.dataset = dataset
        self.model = model
        self.model_hash = model_hash(model) if model is not None else None
        self.model_path = model_path
        self.lock = threading.Lock()
        self.jobs: dict[str, JobStatus] = {}
        self.active_job: Optional[str] = None
        self.explain_cache: dict = {}
        self.explain_cache_hits = 0
        self.sample_cache: dict = {}
        self.pred_cache: dict = {}
        self.train_barrier: Optional[threading.Event] = None  # test hook

    # -- lookups -----------------------------------------------------------
    def require_dataset(self) -> Dataset:
        if self.dataset is None:
            raise ApiError(409, "no_dataset", "no dataset loaded")
        return self.dataset

    def require_model(self) -> Model:
        if self.model is None:
            raise ApiError(409, "no_model", "no model loaded; train or load one first")
        return self.model

    def snapshot_index(self, region: str, time_index: int) -> int:
        ds = self.require_dataset()
        idx = ds.lookup(region, time_index)
        if idx is None:
            raise ApiError(404, "unknown_snapshot", f"no snapshot for region={region!r} time={time_index}")
        return idx

    # -- cached computations -----------------------------------------------
    def predictions(self, idx: int) -> np.ndarray:
        key = (self.model_hash, idx)
        if key not in self.pred_cache:
            pred, _, _ = forward(self.require_model(), self.dataset.graphs[idx])
            self.pred_cache[key] = pred
        return self.pred_cache[key]

    def impact_samples(self, idx: int):
        key = (self.model_hash, idx)
        if key not in self.sample_cache:
            self.sample_cache[key] = collect_impact_samples(
                self.require_model(), [self.dataset.graphs[idx]]
            )
        return self.sample_cache[key]

    def graph_impacts(self, idx: int) -> dict[int, float]:
        sums: dict[int, list[float]] = {}
        for s in self.impact_samples(idx):
            sums.setdefault(s.obs_id, []).append(s.importance)
        g = self.dataset.graphs[idx]
        return {
            nid: float(np.mean(sums[nid])) if nid in sums else 0.0
            for nid in g.observation_ids()
        }

    def swap_model(self, new_model: Model) -> None:
        with self.lock:
            self.model = new_model
            self.model_hash = model_hash(new_model)
            # hash-keyed entries for older models are dead weight
            self.explain_cache.clear()
            self.sample_cache.clear()
            self.pred_cache.clear()


class ExplainRequest(BaseModel):
    region: str
    time: int
    node_id: int
    variable: str = "ALL"
    epsilon: float = DEFAULT_EPSILON


class TrainRequest(BaseModel):
    lr: float = 1e-3
    epochs_pretrain: int = 50
    epochs_finetune: int = 60
    lambda_recon: float = 0.5
    seed: int = 0
    grad_clip: float = 5.0


class FidelityRequest(BaseModel):
    region: Optional[str] = None
    fraction: float = 0.2


class WhatIfRequest(BaseModel):
    region: str
    time: int
    node_ids: list[int]


def _region_dict(r) -> dict:
    return {
        "name": r.name,
        "lat_min": r.lat_min,
        "lat_max": r.lat_max,
        "lon_min": r.lon_min,
        "lon_max": r.lon_max,
    }


def _select_indices(ds: Dataset, region: Optional[str], time_from: Optional[int], time_to: Optional[int]):
    out = []
    for i, snap in enumerate(ds.snapshots):
        if region is not None and snap.region.name != region:
            continue
        if time_from is not None and snap.time_index < time_from:
            continue
        if time_to is not None and snap.time_index > time_to:
            continue
        out.append(i)
    return out


def _parse_bbox(text: str):
    try:
        parts = [float(p) for p in text.split(",")]
    except ValueError:
        parts = []
    if len(parts) != 4:
        raise ApiError(400, "bad_bbox", "bbox must be 'lat_min,lon_min,lat_max,lon_max'")
    lat_min, lon_min, lat_max, lon_max = parts
    if lat_min > lat_max or lon_min > lon_max:
        raise ApiError(400, "bad_bbox", "bbox minima must not exceed maxima")
    return lat_min, lon_min, lat_max, lon_max


def create_app(state: AppState, ui_dir: Optional[str | Path] = None) -> FastAPI:
    app = FastAPI(title="obsimpact", version="0.1.0")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )

    @app.exception_handler(ApiError)
    async def api_error_handler(_: Request, exc: ApiError):
        return JSONResponse(status_code=exc.status, content={"code": exc.code, "message": exc.message})

    @app.get("/api/status")
    def status():
        return {
            "dataset_loaded": state.dataset is not None,
            "snapshots": 0 if state.dataset is None else len(state.dataset.snapshots),
            "model_loaded": state.model is not None,
            "model_hash": state.model_hash,
        }

    @app.get("/api/regions")
    def regions():
        ds = state.require_dataset()
        counts: dict[str, int] = {}
        for snap in ds.snapshots:
            counts[snap.region.name] = counts.get(snap.region.name, 0) + 1
        return [
            {**_region_dict(r), "snapshot_count": counts.get(r.name, 0)}
            for r in ds.regions
        ]

    @app.get("/api/graph")
    def graph(region: str, time: int):
        ds = state.require_dataset()
        idx = state.snapshot_index(region, time)
        g = ds.graphs[idx]
        snap = ds.snapshots[idx]
        doc = graph_to_dict(g)
        doc["targets"] = {str(k): list(v) for k, v in sorted(snap.targets.items())}
        predictions = None
        if state.model is not None:
            pred = state.predictions(idx)
            predictions = {
                str(nid): [float(v) for v in pred[g.index_of[nid]]] for nid in g.grid_ids()
            }
        importances = None
        key = (state.model_hash, idx)
        if state.model is not None and key in state.sample_cache:
            importances = {str(k): v for k, v in sorted(state.graph_impacts(idx).items())}
        return {
            "graph": doc,
            "predictions": predictions,
            "importances": importances,
            "norm_stats": None if ds.norm_stats is None else ds.norm_stats.to_dict(),
            "climatology": None if ds.climatology is None else list(ds.climatology),
        }

    @app.post("/api/explain")
    def explain(req: ExplainRequest):
        ds = state.require_dataset()
        m = state.require_model()
        idx = state.snapshot_index(req.region, req.time)
        key = (state.model_hash, req.region, req.time, req.node_id, req.variable, req.epsilon)
        if key in state.explain_cache:
            state.explain_cache_hits += 1
            return state.explain_cache[key]
        g = ds.graphs[idx]
        if req.node_id not in g.index_of:
            raise ApiError(400, "unknown_node", f"node {req.node_id} is not in this graph")
        if g.node_by_id(req.node_id).kind is not NodeKind.GRID_POINT:
            raise ApiError(400, "not_a_grid_node", "explanation targets must be grid points")
        try:
            target = ExplainTarget(req.node_id, req.variable)
        except ValueError as exc:
            raise ApiError(400, "bad_variable", str(exc))
        if req.epsilon <= 0:
            raise ApiError(400, "bad_epsilon", "epsilon must be positive")
        _, _, cache = forward(m, g)
        rmap = lrp_explain(m, g, cache, target, epsilon=req.epsilon)
        imp = node_importance(rmap)
        body = {
            "target": {"region": req.region, "time": req.time, "node_id": req.node_id, "variable": req.variable},
            "epsilon": req.epsilon,
            "output_value": rmap.output_value,
            "conservation_residual": rmap.conservation_residual(),
            "nodes": [
                {"id": nid, "signed": float(s), "abs": float(a)}
                for nid, s, a in zip(imp.node_ids, imp.signed, imp.abs)
            ],
        }
        state.explain_cache[key] = body
        return body

    @app.get("/api/impacts")
    def impacts(
        group_by: str = "observation_type",
        region: Optional[str] = None,
        time_from: Optional[int] = None,
        time_to: Optional[int] = None,
        time_window: int = 1,
        grid_cell_deg: float = 1.0,
    ):
        ds = state.require_dataset()
        state.require_model()
        if group_by not in GROUP_KEYS:
            raise ApiError(400, "bad_group_key", f"group_by must be one of {list(GROUP_KEYS)}")
        samples = []
        for idx in _select_indices(ds, region, time_from, time_to):
            samples.extend(state.impact_samples(idx))
        table = aggregate_impacts(samples, group_by, time_window=time_window, grid_cell_deg=grid_cell_deg)
        return table.to_dict()

    @app.post("/api/fidelity")
    def fidelity_endpoint(req: FidelityRequest):
        ds = state.require_dataset()
        m = state.require_model()
        if not 0.0 < req.fraction <= 1.0:
            raise ApiError(400, "bad_fraction", "fraction must lie in (0, 1]")
        indices = ds.holdout_indices() or list(range(len(ds.snapshots)))
        if req.region is not None:
            indices = [i for i in indices if ds.snapshots[i].region.name == req.region]
        if not indices:
            raise ApiError(404, "no_snapshots", "no snapshots match the request")
        samples = [(ds.graphs[i], ds.snapshots[i].targets) for i in indices]
        impacts_list = [state.graph_impacts(i) for i in indices]
        try:
            report = fidelity(m, samples, ds.climatology, impacts=impacts_list, fraction=req.fraction)
        except ValueError as exc:
            raise ApiError(400, "fidelity_failed", str(exc))
        return report.to_dict()

    @app.post("/api/whatif")
    def whatif(req: WhatIfRequest):
        ds = state.require_dataset()
        m = state.require_model()
        idx = state.snapshot_index(req.region, req.time)
        g = ds.graphs[idx]
        snap = ds.snapshots[idx]
        try:
            blanked = occlude(g, req.node_ids)
        except (KeyError, ValueError) as exc:
            raise ApiError(400, "bad_occlusion", str(exc))
        truth = targets_matrix(g, snap.targets)
        rows = grid_row_mask(g)
        before_pred, _, _ = forward(m, g)
        after_pred, _, _ = forward(m, blanked)
        before = compute_metrics(before_pred[rows], truth, ds.climatology)
        after = compute_metrics(after_pred[rows], truth, ds.climatology)
        return {
            "occluded": sorted(req.node_ids),
            "before": {"rmse": before.rmse, "mae": before.mae, "acc": before.acc},
            "after": {"rmse": after.rmse, "mae": after.mae, "acc": after.acc},
        }

    @app.post("/api/train")
    def start_train(req: TrainRequest):
        state.require_dataset()
        try:
            cfg = TrainConfig(
                lr=req.lr,
                epochs_pretrain=req.epochs_pretrain,
                epochs_finetune=req.epochs_finetune,
                lambda_recon=req.lambda_recon,
                seed=req.seed,
                grad_clip=req.grad_clip,
            )
        except ValueError as exc:
            raise ApiError(400, "bad_config", str(exc))
        with state.lock:
            if state.active_job is not None:
                raise ApiError(409, "busy", "a training job is already running")
            job = JobStatus(id=uuid.uuid4().hex, kind="train", state="queued", progress=0.0, message="queued")
            state.jobs[job.id] = job
            state.active_job = job.id
        thread = threading.Thread(target=_run_train_job, args=(state, job, cfg), daemon=True)
        thread.start()
        return job.to_dict()

    @app.get("/api/jobs/{job_id}")
    def job_status(job_id: str):
        job = state.jobs.get(job_id)
        if job is None:
            raise ApiError(404, "unknown_job", f"no job {job_id!r}")
        return job.to_dict()

    @app.get("/api/observations/search")
    def search(
        bbox: Optional[str] = None,
        type: Optional[str] = None,
        time: Optional[int] = None,
        region: Optional[str] = None,
        limit: int = 100,
    ):
        ds = state.require_dataset()
        box = None if bbox is None else _parse_bbox(bbox)
        if type is not None and type not in {k.value for k in NodeKind if k.is_observation}:
            raise ApiError(400, "bad_type", f"unknown observation type {type!r}")
        results = []
        total = 0
        for snap in ds.snapshots:
            if region is not None and snap.region.name != region:
                continue
            if time is not None and snap.time_index != time:
                continue
            for node in snap.obs_nodes:
                if type is not None and node.kind.value != type:
                    continue
                if box is not None:
                    lat, lon = node.location.lat, node.location.lon
                    if not (box[0] <= lat <= box[2] and box[1] <= lon <= box[3]):
                        continue
                total += 1
                if len(results) < limit:
                    results.append(
                        {
                            "id": node.id,
                            "kind": node.kind.value,
                            "lat": node.location.lat,
                            "lon": node.location.lon,
                            "time_index": node.time_index,
                            "region": snap.region.name,
                        }
                    )
        return {"total": total, "results": results}

    if ui_dir is not None and Path(ui_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app


def _run_train_job(state: AppState, job: JobStatus, cfg: TrainConfig) -> None:
    job.state = "running"
    job.message = "training"
    try:
        if state.train_barrier is not None:
            state.train_barrier.wait()

        def progress(frac: float, msg: str) -> None:
            job.progress = frac
            job.message = msg

        new_model, _ = train(init_model(seed=cfg.seed), state.dataset, cfg, progress=progress)
        state.swap_model(new_model)
        if state.model_path is not None:
            save_model(
                new_model,
                state.model_path,
                train_config=cfg,
                norm_stats=state.dataset.norm_stats,
                climatology=state.dataset.climatology,
            )
        job.progress = 1.0
        job.state = "done"
        job.message = "training complete"
    except Exception as exc:  # failed jobs report, never half-swap
        job.state = "failed"
        job.message = f"{type(exc).__name__}: {exc}"
    finally:
        with state.lock:
            state.active_job = None
