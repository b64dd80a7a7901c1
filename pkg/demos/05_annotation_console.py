"""The annotation service end to end, in process: blinded tasks out, coded
annotations in, unblinded export back.

The same endpoints back the browser console; here a scripted annotator drives
them through the ASGI test client.
"""

import tempfile
from datetime import datetime, timezone
from pathlib import Path

from fastapi.testclient import TestClient

from provaudit.annotation_service import AnnotationStore, create_app
from provaudit.evaluation import GenerationParams, Phase, ResponseRecord
from provaudit.fixtures import load_fixture_queries

queries = load_fixture_queries()[:4]
responses = []
for i, q in enumerate(queries):
    for phase in Phase:
        responses.append(
            ResponseRecord(
                query_id=q.id,
                model_id="demo-model",
                phase=phase,
                response_text=f"candidate answer {i * 2 + (phase is Phase.POST)} for review",
                params=GenerationParams(),
                created_at=datetime.now(timezone.utc),
            )
        )

store_path = Path(tempfile.mkdtemp()) / "store.jsonl"
store = AnnotationStore(store_path, responses, queries, display_order_seed=11)
api = TestClient(create_app(store))

print(f"{len(store.tasks)} tasks queued; payloads carry no phase or model fields")
n = 0
while True:
    task = api.get("/api/tasks/next", params={"annotator_id": "demo"}).json()["task"]
    if task is None:
        break
    n += 1
    print(f"\ntask {task['task_id']}: {task['query_text'][:48]}...")
    print(f"  payload keys: {sorted(task)}")
    codes = ["2e"] if n % 3 == 0 else []
    ack = api.post(
        "/api/annotations",
        json={"task_id": task["task_id"], "annotator_id": "demo", "codes": codes, "note": ""},
    ).json()
    print(f"  submitted codes {ack['codes']}")

progress = api.get("/api/progress", params={"annotator_id": "demo"}).json()
print(f"\nprogress: {progress['completed']} done, {progress['remaining']} remaining")

exported = api.get("/api/export").json()["annotations"]
print(f"export unblinds phase and model: {exported[0]}")
print(f"store file is append-only at {store_path}")
