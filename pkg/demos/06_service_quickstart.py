"""Drive the HTTP service end to end in-process (no network needed).

Shows: health/skeleton/schema endpoints, async job flow with idempotency,
fetching the result motion, and the metrics round trip. Point the browser UI
(frontend/) at a real `kimodo-serve` instance for the interactive version.

Usage: python demos/06_service_quickstart.py <checkpoint.pt>
"""

import sys

from fastapi.testclient import TestClient

from kimodo.service import create_app
from kimodo.training import load_model_bundle

if len(sys.argv) < 2:
    sys.exit("usage: python demos/06_service_quickstart.py <checkpoint.pt>")
bundle = load_model_bundle(sys.argv[1])
app = create_app(bundle=bundle, store_path="/tmp/kimodo_demo_jobs.json")

with TestClient(app) as client:
    print("health:", client.get("/v1/health").json())
    skeleton = client.get("/v1/skeleton").json()
    print(f"skeleton: {skeleton['skeleton_id']} with {len(skeleton['joint_names'])} joints")

    request = {
        "prompts": [{"text": "A person walks forward.", "duration_s": 3.0}],
        "constraints": [{"kind": "waypoint", "frame": 60, "position": [1.0, 0.0]}],
        "seed": 11,
        "steps": 50,
    }
    job = client.post("/v1/generate", json=request, headers={"Idempotency-Key": "demo-1"})
    job_id = job.json()["job_id"]
    print(f"submitted job {job_id} (second POST returns the same id: "
          f"{client.post('/v1/generate', json=request, headers={'Idempotency-Key': 'demo-1'}).json()['job_id'] == job_id})")

    import time

    while True:
        record = client.get(f"/v1/jobs/{job_id}").json()
        print(f"  status: {record['status']}")
        if record["status"] in ("done", "failed"):
            break
        time.sleep(1.0)

    motion = client.get(f"/v1/jobs/{job_id}/motion").json()
    print(f"motion: {motion['n_frames']} frames @ {motion['fps']} fps")
    print(f"achieved errors: {record['result']['errors']}")

    metrics = client.post(
        "/v1/metrics", json={"motion": motion, "constraints": request["constraints"]}
    ).json()
    print(f"metrics endpoint recomputes: {metrics['constraint_errors']}")
