"""HTTP generation service consumed by the authoring UI and scripts.

Jobs are asynchronous by default (generation takes seconds); a bounded worker
pool executes them and a single-file JSON store keeps records across
restarts. The request schema is published as JSON Schema and is the single
source of truth shared with the UI.
"""

from __future__ import annotations

import json
import os
import threading
import time
import uuid
from concurrent.futures import ThreadPoolExecutor
from typing import Literal, Optional

import numpy as np
from fastapi import FastAPI, Header, Query, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, ConfigDict, Field

from .diffusion import GuidanceWeights
from .evaluation import constraint_errors, foot_skate
from .generation import (
    GenerationRequest,
    exact_constraint_refine,
    foot_lock_postprocess,
    generate,
    reassemble_features,
)
from .constraints import build_spec_from_items
from .motion_io import motion_from_dict, motion_to_dict
from .skeleton import canonical_skeleton

SCHEMA_VERSION = 1


class PromptSegmentModel(BaseModel):
    model_config = ConfigDict(extra="forbid")
    text: str = ""
    duration_s: float = Field(gt=0.0, le=10.0)


class ConstraintItemModel(BaseModel):
    model_config = ConfigDict(extra="forbid")
    kind: Literal["waypoint", "dense_path", "full_body_keyframe", "end_effector", "foot_contact"]
    frame: Optional[int] = Field(default=None, ge=0)
    start_frame: Optional[int] = Field(default=None, ge=0)
    end_frame: Optional[int] = Field(default=None, ge=0)
    joint: Optional[str] = None
    position: Optional[list[float]] = None
    positions: Optional[list[list[float]]] = None
    heading: Optional[list[float]] = None
    headings: Optional[list[list[float]]] = None
    rotation_6d: Optional[list[float]] = None
    contacts: Optional[list[float]] = None


class GuidanceModel(BaseModel):
    model_config = ConfigDict(extra="forbid")
    w_text: float = 2.0
    w_constr: float = 2.0


class PostprocessModel(BaseModel):
    model_config = ConfigDict(extra="forbid")
    foot_lock: bool = True
    exact_constraints: bool = True


class GenerationRequestModel(BaseModel):
    model_config = ConfigDict(extra="forbid")
    prompts: list[PromptSegmentModel] = Field(min_length=1)
    constraints: list[ConstraintItemModel] = Field(default_factory=list)
    initial_heading: list[float] = Field(default=[1.0, 0.0], min_length=2, max_length=2)
    guidance: GuidanceModel = Field(default_factory=GuidanceModel)
    steps: int = Field(default=100, ge=1, le=1000)
    seed: int = 0
    fps: float = Field(default=30.0, gt=0.0)
    postprocess: PostprocessModel = Field(default_factory=PostprocessModel)

    def to_request(self) -> GenerationRequest:
        return GenerationRequest(
            prompts=[p.model_dump() for p in self.prompts],
            constraints=[
                {k: v for k, v in c.model_dump().items() if v is not None}
                for c in self.constraints
            ],
            initial_heading=tuple(self.initial_heading),
            guidance=GuidanceWeights(self.guidance.w_text, self.guidance.w_constr),
            steps=self.steps,
            seed=self.seed,
            fps=self.fps,
            foot_lock=self.postprocess.foot_lock,
            exact_constraints=self.postprocess.exact_constraints,
        )


class PostprocessRequestModel(BaseModel):
    model_config = ConfigDict(extra="allow")
    motion: dict
    constraints: list[ConstraintItemModel] = Field(default_factory=list)
    foot_lock: bool = True
    exact_constraints: bool = True


class MetricsRequestModel(BaseModel):
    model_config = ConfigDict(extra="forbid")
    motion: dict
    constraints: list[ConstraintItemModel] = Field(default_factory=list)


def generation_request_schema() -> dict:
    schema = GenerationRequestModel.model_json_schema()
    schema["$id"] = f"kimodo/generation_request/v{SCHEMA_VERSION}"
    return schema


def export_schema(path: str) -> None:
    with open(path, "w") as f:
        json.dump(generation_request_schema(), f, indent=1, sort_keys=True)


class JobStore:
    """Single-file JSON job store; single-writer via a lock, atomic rewrite."""

    def __init__(self, path: str):
        self.path = path
        self.lock = threading.Lock()
        self._jobs: dict[str, dict] = {}
        self._idempotency: dict[str, dict] = {}
        if os.path.exists(path):
            with open(path) as f:
                data = json.load(f)
            self._jobs = data.get("jobs", {})
            self._idempotency = data.get("idempotency", {})

    def _flush(self) -> None:
        tmp = self.path + ".tmp"
        with open(tmp, "w") as f:
            json.dump({"jobs": self._jobs, "idempotency": self._idempotency}, f)
        os.replace(tmp, self.path)

    def create(self, request_payload: dict, idempotency_key: str | None) -> tuple[dict, bool]:
        """Returns (record, created). Terminal states are immutable."""
        body_hash = json.dumps(request_payload, sort_keys=True)
        with self.lock:
            if idempotency_key is not None:
                existing = self._idempotency.get(idempotency_key)
                if existing is not None:
                    if existing["body"] != body_hash:
                        raise KeyError("idempotency key reused with a different request")
                    return self._jobs[existing["job_id"]], False
            job_id = uuid.uuid4().hex
            record = {
                "job_id": job_id,
                "status": "queued",
                "request": request_payload,
                "created_at": time.time(),
                "updated_at": time.time(),
                "error": None,
                "result": None,
            }
            self._jobs[job_id] = record
            if idempotency_key is not None:
                self._idempotency[idempotency_key] = {"job_id": job_id, "body": body_hash}
            self._flush()
            return record, True

    def update(self, job_id: str, **fields) -> None:
        with self.lock:
            record = self._jobs[job_id]
            if record["status"] in ("done", "failed"):
                return
            record.update(fields)
            record["updated_at"] = time.time()
            self._flush()

    def get(self, job_id: str) -> dict | None:
        with self.lock:
            record = self._jobs.get(job_id)
            return dict(record) if record else None


def create_app(bundle=None, store_path: str | None = None, max_workers: int = 2) -> FastAPI:
    """Build the service; `bundle` may be None (generation endpoints 503)."""
    app = FastAPI(title="kimodo generation service")
    skeleton = canonical_skeleton()
    store_path = store_path or os.path.join(os.getcwd(), "kimodo_jobs.json")
    results_dir = store_path + ".results"
    os.makedirs(results_dir, exist_ok=True)
    store = JobStore(store_path)
    pool = ThreadPoolExecutor(max_workers=max_workers)
    model_lock = threading.Lock()

    @app.exception_handler(RequestValidationError)
    async def validation_handler(request: Request, exc: RequestValidationError):
        fields = [
            {"loc": [str(x) for x in err["loc"]], "msg": err["msg"]} for err in exc.errors()
        ]
        return JSONResponse(
            status_code=400, content={"error": "validation", "fields": fields}
        )

    def error(status: int, code: str, message: str):
        return JSONResponse(status_code=status, content={"error": code, "message": message})

    def run_generation(payload: dict) -> dict:
        request = GenerationRequestModel.model_validate(payload).to_request()
        with model_lock:
            result = generate(request, bundle)
        motion_doc = motion_to_dict(result.motion, skeleton.skeleton_id)
        return {
            "motion": motion_doc,
            "errors": result.errors.to_dict(),
            "seed": result.seed,
            "timing_s": result.timing_s,
            "segment_boundaries": result.segment_boundaries,
            "flags": result.flags,
        }

    def execute_job(job_id: str, payload: dict) -> None:
        store.update(job_id, status="running")
        try:
            result = run_generation(payload)
            motion_path = os.path.join(results_dir, f"{job_id}.json")
            with open(motion_path, "w") as f:
                json.dump(result["motion"], f)
            summary = {k: v for k, v in result.items() if k != "motion"}
            summary["motion_path"] = motion_path
            store.update(job_id, status="done", result=summary)
        except Exception as exc:  # noqa: BLE001 - job faults become records
            store.update(job_id, status="failed", error=str(exc))

    @app.get("/v1/health")
    def health():
        return {
            "status": "ok" if bundle is not None else "no_model",
            "model_id": getattr(bundle, "model_id", None),
            "skeleton_id": skeleton.skeleton_id,
        }

    @app.get("/v1/skeleton")
    def get_skeleton():
        return skeleton.to_dict()

    @app.get("/v1/schema/generation_request")
    def get_schema():
        return generation_request_schema()

    @app.post("/v1/generate")
    def post_generate(
        body: GenerationRequestModel,
        sync: bool = Query(default=False),
        dry_run: bool = Query(default=False),
        idempotency_key: str | None = Header(default=None, alias="Idempotency-Key"),
    ):
        if dry_run:
            from .generation import validate_request

            try:
                validate_request(body.to_request(), skeleton)
            except ValueError as exc:
                return error(400, "invalid_request", str(exc))
            return {"valid": True}
        if bundle is None:
            return error(503, "model_not_loaded", "no checkpoint is loaded")
        payload = body.model_dump()
        total_s = sum(p["duration_s"] for p in payload["prompts"])
        if sync and total_s <= 10.0:
            try:
                result = run_generation(payload)
            except ValueError as exc:
                return error(400, "invalid_request", str(exc))
            return JSONResponse(status_code=200, content=json.loads(json.dumps(result)))
        try:
            record, created = store.create(payload, idempotency_key)
        except KeyError as exc:
            return error(409, "idempotency_conflict", str(exc))
        if created:
            pool.submit(execute_job, record["job_id"], payload)
        return JSONResponse(status_code=202, content={"job_id": record["job_id"]})

    @app.get("/v1/jobs/{job_id}")
    def get_job(job_id: str):
        record = store.get(job_id)
        if record is None:
            return error(404, "unknown_job", f"no job {job_id}")
        return record

    @app.get("/v1/jobs/{job_id}/motion")
    def get_job_motion(job_id: str):
        record = store.get(job_id)
        if record is None:
            return error(404, "unknown_job", f"no job {job_id}")
        if record["status"] != "done":
            return error(404, "not_ready", f"job status is {record['status']}")
        with open(record["result"]["motion_path"]) as f:
            return json.load(f)

    @app.post("/v1/postprocess")
    def post_postprocess(body: PostprocessRequestModel):
        try:
            motion, _ = motion_from_dict(body.motion)
        except (ValueError, KeyError) as exc:
            return error(400, "invalid_motion", str(exc))
        flags = {}
        try:
            if body.foot_lock and motion.contacts is not None:
                motion, lock_flags = foot_lock_postprocess(motion, skeleton)
                flags.update(lock_flags)
            if body.exact_constraints and body.constraints:
                items = [
                    {k: v for k, v in c.model_dump().items() if v is not None}
                    for c in body.constraints
                ]
                spec = build_spec_from_items(items, skeleton, motion.n_frames, motion.fps)
                motion, refine_flags = exact_constraint_refine(motion, spec, skeleton)
                flags.update(refine_flags)
        except ValueError as exc:
            return error(400, "invalid_request", str(exc))
        return {"motion": motion_to_dict(motion, skeleton.skeleton_id), "flags": flags}

    @app.post("/v1/metrics")
    def post_metrics(body: MetricsRequestModel):
        try:
            motion, _ = motion_from_dict(body.motion)
            items = [
                {k: v for k, v in c.model_dump().items() if v is not None}
                for c in body.constraints
            ]
            spec = build_spec_from_items(items, skeleton, motion.n_frames, motion.fps)
            feats = reassemble_features(motion, skeleton)
        except (ValueError, KeyError) as exc:
            return error(400, "invalid_request", str(exc))
        errors = constraint_errors(feats, spec, skeleton)
        skate = None
        if motion.contacts is not None:
            skate = foot_skate(motion.joint_positions, motion.contacts, skeleton, motion.fps)
        return {"constraint_errors": errors.to_dict(), "foot_skate_cm_s": skate}

    return app


def load_bundle_from_env():
    """Checkpoint path from KIMODO_CHECKPOINT; None when unset."""
    path = os.environ.get("KIMODO_CHECKPOINT")
    if not path:
        return None
    from .training import load_model_bundle

    return load_model_bundle(path)
