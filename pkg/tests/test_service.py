import json
import time

import numpy as np
import pytest
from fastapi.testclient import TestClient

from kimodo.motion_io import motion_to_dict
from kimodo.motion_repr import decode, encode
from kimodo.service import create_app, generation_request_schema
from kimodo.synthetic import generate_family


@pytest.fixture()
def app_client(untrained_bundle, tmp_path):
    app = create_app(bundle=untrained_bundle, store_path=str(tmp_path / "jobs.json"))
    with TestClient(app) as client:
        yield client, tmp_path


def small_request(**overrides):
    body = {
        "prompts": [{"text": "a person walks forward", "duration_s": 1.0}],
        "steps": 3,
        "seed": 1,
        "postprocess": {"foot_lock": False, "exact_constraints": False},
    }
    body.update(overrides)
    return body


def wait_done(client, job_id, timeout=30.0):
    t0 = time.time()
    while time.time() - t0 < timeout:
        record = client.get(f"/v1/jobs/{job_id}").json()
        if record["status"] in ("done", "failed"):
            return record
        time.sleep(0.05)
    raise TimeoutError


class TestBasics:
    def test_health(self, app_client):
        client, _ = app_client
        body = client.get("/v1/health").json()
        assert body["status"] == "ok"
        assert body["skeleton_id"] == "humanoid27-v1"

    def test_health_no_model(self, tmp_path):
        app = create_app(bundle=None, store_path=str(tmp_path / "j.json"))
        with TestClient(app) as client:
            assert client.get("/v1/health").json()["status"] == "no_model"
            resp = client.post("/v1/generate", json=small_request())
            assert resp.status_code == 503

    def test_skeleton_endpoint(self, app_client):
        client, _ = app_client
        body = client.get("/v1/skeleton").json()
        assert body["skeleton_id"] == "humanoid27-v1"
        assert len(body["joint_names"]) == 27

    def test_schema_endpoint(self, app_client):
        client, _ = app_client
        schema = client.get("/v1/schema/generation_request").json()
        assert schema == generation_request_schema()
        assert "prompts" in schema["properties"]


class TestValidation:
    def test_malformed_constraint_400(self, app_client):
        client, _ = app_client
        body = small_request(
            constraints=[{"kind": "waypoint", "frame": -3, "position": [0, 0]}]
        )
        resp = client.post("/v1/generate?sync=true", json=body)
        assert resp.status_code == 400
        payload = resp.json()
        assert payload["error"] == "validation"
        assert any("frame" in ".".join(f["loc"]) for f in payload["fields"])

    def test_out_of_range_frame_named(self, app_client):
        client, _ = app_client
        body = small_request(
            constraints=[{"kind": "waypoint", "frame": 500, "position": [0, 0]}]
        )
        resp = client.post("/v1/generate?sync=true", json=body)
        assert resp.status_code == 400
        assert "frame 500" in resp.json()["message"]

    def test_unknown_field_rejected(self, app_client):
        client, _ = app_client
        resp = client.post("/v1/generate?sync=true", json=small_request(bogus=1))
        assert resp.status_code == 400


class TestJobs:
    def test_async_flow_and_motion(self, app_client):
        client, _ = app_client
        resp = client.post("/v1/generate", json=small_request())
        assert resp.status_code == 202
        job_id = resp.json()["job_id"]
        record = wait_done(client, job_id)
        assert record["status"] == "done"
        motion = client.get(f"/v1/jobs/{job_id}/motion").json()
        assert motion["n_frames"] == 30
        assert len(motion["joint_positions"]) == 30

    def test_unknown_job_404(self, app_client):
        client, _ = app_client
        assert client.get("/v1/jobs/nope").status_code == 404
        assert client.get("/v1/jobs/nope/motion").status_code == 404

    def test_idempotency(self, app_client):
        client, _ = app_client
        headers = {"Idempotency-Key": "abc"}
        r1 = client.post("/v1/generate", json=small_request(), headers=headers)
        r2 = client.post("/v1/generate", json=small_request(), headers=headers)
        assert r1.json()["job_id"] == r2.json()["job_id"]
        r3 = client.post(
            "/v1/generate", json=small_request(seed=2), headers=headers
        )
        assert r3.status_code == 409

    def test_store_survives_restart(self, untrained_bundle, tmp_path):
        store = str(tmp_path / "jobs.json")
        app = create_app(bundle=untrained_bundle, store_path=store)
        with TestClient(app) as client:
            job_id = client.post("/v1/generate", json=small_request()).json()["job_id"]
            wait_done(client, job_id)
        app2 = create_app(bundle=untrained_bundle, store_path=store)
        with TestClient(app2) as client:
            record = client.get(f"/v1/jobs/{job_id}").json()
            assert record["status"] == "done"

    def test_sync_generation_deterministic(self, app_client):
        client, _ = app_client
        a = client.post("/v1/generate?sync=true", json=small_request()).json()
        b = client.post("/v1/generate?sync=true", json=small_request()).json()
        assert a["motion"]["joint_positions"] == b["motion"]["joint_positions"]

    def test_concurrent_results_match_serial(self, app_client):
        client, _ = app_client
        serial = client.post("/v1/generate?sync=true", json=small_request(seed=7)).json()
        job_ids = [
            client.post("/v1/generate", json=small_request(seed=7)).json()["job_id"]
            for _ in range(4)
        ]
        for job_id in job_ids:
            record = wait_done(client, job_id)
            assert record["status"] == "done"
            motion = client.get(f"/v1/jobs/{job_id}/motion").json()
            assert motion["joint_positions"] == serial["motion"]["joint_positions"]


class TestMetricsEndpoints:
    def test_metrics_round_trip(self, app_client, skeleton):
        client, _ = app_client
        items = [{"kind": "waypoint", "frame": 10, "position": [0.4, 0.1]}]
        body = small_request(constraints=items)
        result = client.post("/v1/generate?sync=true", json=body).json()
        metrics = client.post(
            "/v1/metrics", json={"motion": result["motion"], "constraints": items}
        ).json()
        want = result["errors"]["root2d_pos_cm"]
        got = metrics["constraint_errors"]["root2d_pos_cm"]
        assert abs(want - got) < 1e-6

    def test_postprocess_endpoint(self, app_client, skeleton):
        client, _ = app_client
        rng = np.random.default_rng(0)
        clip = generate_family("straight_walk", rng, skeleton)
        motion = decode(encode(clip.raw, skeleton), skeleton)
        doc = motion_to_dict(motion, skeleton.skeleton_id)
        resp = client.post(
            "/v1/postprocess",
            json={"motion": doc, "foot_lock": True, "exact_constraints": False},
        )
        assert resp.status_code == 200
        out = resp.json()
        assert len(out["motion"]["joint_positions"]) == motion.n_frames

    def test_postprocess_invalid_motion(self, app_client):
        client, _ = app_client
        resp = client.post("/v1/postprocess", json={"motion": {"version": 42}})
        assert resp.status_code == 400
