"""HTTP service that feeds blinded responses to human annotators.

Task payloads sent to the client carry the query text, the ground truth, and
the response text, and deliberately nothing that identifies the phase or the
model; the pre/post pair of each (query, model) is handed out in a seeded
shuffled order recorded server-side. Submissions are persisted to a single
append-only line-delimited file next to the task mapping, so an export at any
time is a prefix of any later export.

Endpoints (all JSON):
    GET  /api/tasks/next?annotator_id=...   -> blinded task or {"task": null}
    POST /api/annotations                   {task_id, annotator_id, codes, note}
    POST /api/tasks/skip                    {task_id, annotator_id}
    GET  /api/progress?annotator_id=...     -> session state
    GET  /api/export                        -> unblinded annotation records
    GET  /api/codes                         -> the coding palette
Static files (the annotation console bundle) are served at / when a directory
is configured. When the ANNOTATION_TOKEN environment variable is set, every
/api request must carry "Authorization: Bearer <token>".
"""

from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

from fastapi import Depends, FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse, PlainTextResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

import numpy as np

from .codes import palette, parse_code
from .coding import Annotation, ResponseKey, annotation_to_record
from .evaluation import Query, ResponseRecord

TOKEN_ENV_VAR = "ANNOTATION_TOKEN"


@dataclass
class TaskState:
    task_id: str
    key: ResponseKey  # server-side only, never serialized into payloads
    query_text: str
    ground_truth: str
    response_text: str
    companion_text: str = ""  # the pair's other response, shown in side-by-side mode
    status: str = "pending"  # pending | done | skipped
    annotator_id: str = ""
    codes: tuple[str, ...] = ()
    note: str = ""


@dataclass(frozen=True)
class SessionState:
    annotator_id: str
    completed: int
    skipped: int
    remaining: int
    total: int
    started_at: str


class AnnotationStore:
    """Task queue plus append-only persistence.

    Writes are serialized under one lock; reads see a consistent snapshot.
    Distinct annotators are handed distinct pending tasks, and a handed-out
    task is sticky for its annotator until submitted or skipped.
    """

    def __init__(
        self,
        store_path: Path | str,
        responses: Sequence[ResponseRecord],
        queries: Sequence[Query],
        display_order_seed: int = 0,
        blind: bool = True,
        side_by_side: bool = False,
    ) -> None:
        self.store_path = Path(store_path)
        self.blind = blind
        self.side_by_side = side_by_side
        self.display_order_seed = display_order_seed
        self.started_at = datetime.now(timezone.utc).isoformat()
        self._lock = threading.Lock()
        self._assignments: dict[str, str] = {}  # annotator_id -> task_id

        queries_by_id = {q.id: q for q in queries}
        self.tasks: dict[str, TaskState] = {}
        self.order: list[str] = []
        self._build_tasks(responses, queries_by_id)
        self._replay_existing()
        self.store_path.parent.mkdir(parents=True, exist_ok=True)
        if not self.store_path.exists():
            self._append(
                {
                    "kind": "session",
                    "started_at": self.started_at,
                    "display_order_seed": self.display_order_seed,
                    "tasks": [
                        {
                            "task_id": t.task_id,
                            "query_id": t.key.query_id,
                            "model_id": t.key.model_id,
                            "phase": t.key.phase.value,
                        }
                        for t in (self.tasks[tid] for tid in self.order)
                    ],
                }
            )

    # -- construction ------------------------------------------------------

    def _build_tasks(
        self, responses: Sequence[ResponseRecord], queries_by_id: dict[int, Query]
    ) -> None:
        rng = np.random.default_rng(self.display_order_seed)
        pairs: dict[tuple[int, str], list[ResponseRecord]] = {}
        for record in responses:
            pairs.setdefault((record.query_id, record.model_id), []).append(record)

        counter = 0
        for key in sorted(pairs, key=lambda k: (k[0], k[1])):
            group = sorted(pairs[key], key=lambda r: r.phase.value)
            if self.blind:
                order = rng.permutation(len(group))
                group = [group[i] for i in order]
            for i, record in enumerate(group):
                counter += 1
                task_id = f"t-{counter:04d}"
                query = queries_by_id.get(record.query_id)
                others = [r.response_text for j, r in enumerate(group) if j != i]
                self.tasks[task_id] = TaskState(
                    task_id=task_id,
                    key=ResponseKey(record.query_id, record.model_id, record.phase),
                    query_text=query.text if query else "",
                    ground_truth=query.ground_truth if query else "",
                    response_text=record.response_text,
                    companion_text=others[0] if others else "",
                )
                self.order.append(task_id)

    def _replay_existing(self) -> None:
        if not self.store_path.exists():
            return
        with self.store_path.open(encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                if rec["kind"] == "annotation":
                    task = self.tasks.get(rec["task_id"])
                    if task is not None:
                        task.status = "done"
                        task.annotator_id = rec["annotator_id"]
                        task.codes = tuple(rec["codes"])
                        task.note = rec.get("note", "")
                elif rec["kind"] == "skip":
                    task = self.tasks.get(rec["task_id"])
                    if task is not None and task.status == "pending":
                        task.status = "skipped"
                        task.annotator_id = rec.get("annotator_id", "")

    def _append(self, record: dict) -> None:
        with self.store_path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")

    # -- operations ----------------------------------------------------------

    def task_payload(self, task: TaskState) -> dict:
        # Blinded: no phase, no model identifier, nothing derived from either.
        payload = {
            "task_id": task.task_id,
            "query_text": task.query_text,
            "ground_truth": task.ground_truth,
            "response_text": task.response_text,
        }
        if self.side_by_side:
            payload["companion_text"] = task.companion_text
        return payload

    def next_task(self, annotator_id: str) -> TaskState | None:
        with self._lock:
            assigned = self._assignments.get(annotator_id)
            if assigned is not None and self.tasks[assigned].status == "pending":
                return self.tasks[assigned]
            taken = {
                tid
                for aid, tid in self._assignments.items()
                if aid != annotator_id and self.tasks[tid].status == "pending"
            }
            for task_id in self.order:
                task = self.tasks[task_id]
                if task.status == "pending" and task_id not in taken:
                    self._assignments[annotator_id] = task_id
                    return task
            return None

    def submit(
        self, task_id: str, annotator_id: str, codes: list[str], note: str
    ) -> tuple[TaskState, bool]:
        """Returns (task, created). Identical duplicate submissions are
        acknowledged idempotently; conflicting ones raise ConflictError."""
        parsed = sorted(str(parse_code(c)) for c in codes)
        with self._lock:
            task = self.tasks.get(task_id)
            if task is None:
                raise KeyError(f"unknown task {task_id}")
            if task.status == "done":
                if list(task.codes) == parsed and task.note == note:
                    return task, False
                raise ConflictError(task)
            task.status = "done"
            task.annotator_id = annotator_id
            task.codes = tuple(parsed)
            task.note = note
            if self._assignments.get(annotator_id) == task_id:
                del self._assignments[annotator_id]
            self._append(
                {
                    "kind": "annotation",
                    "task_id": task_id,
                    "annotator_id": annotator_id,
                    "codes": parsed,
                    "note": note,
                    "submitted_at": datetime.now(timezone.utc).isoformat(),
                }
            )
            return task, True

    def skip(self, task_id: str, annotator_id: str) -> TaskState:
        with self._lock:
            task = self.tasks.get(task_id)
            if task is None:
                raise KeyError(f"unknown task {task_id}")
            if task.status == "pending":
                task.status = "skipped"
                task.annotator_id = annotator_id
                if self._assignments.get(annotator_id) == task_id:
                    del self._assignments[annotator_id]
                self._append(
                    {
                        "kind": "skip",
                        "task_id": task_id,
                        "annotator_id": annotator_id,
                        "skipped_at": datetime.now(timezone.utc).isoformat(),
                    }
                )
            return task

    def progress(self, annotator_id: str) -> SessionState:
        with self._lock:
            done = sum(1 for t in self.tasks.values() if t.status == "done")
            skipped = sum(1 for t in self.tasks.values() if t.status == "skipped")
            pending = sum(1 for t in self.tasks.values() if t.status == "pending")
            return SessionState(
                annotator_id=annotator_id,
                completed=done,
                skipped=skipped,
                remaining=pending,
                total=len(self.tasks),
                started_at=self.started_at,
            )

    def export(self) -> list[dict]:
        """Unblind phase and model, producing records consumable by tally."""
        with self._lock:
            out = []
            for task_id in self.order:
                task = self.tasks[task_id]
                if task.status != "done":
                    continue
                ann = Annotation(
                    response=task.key,
                    annotator_id=task.annotator_id,
                    codes=frozenset(parse_code(c) for c in task.codes),
                    note=task.note,
                )
                out.append(annotation_to_record(ann))
            return out


class ConflictError(Exception):
    def __init__(self, task: TaskState) -> None:
        super().__init__(f"task {task.task_id} already has a different annotation")
        self.task = task


class SubmitBody(BaseModel):
    task_id: str
    annotator_id: str = "annotator"
    codes: list[str]
    note: str = ""


class SkipBody(BaseModel):
    task_id: str
    annotator_id: str = "annotator"


def create_app(store: AnnotationStore, static_dir: Path | str | None = None) -> FastAPI:
    app = FastAPI(title="annotation console API")

    async def check_token(request: Request) -> None:
        token = os.environ.get(TOKEN_ENV_VAR, "")
        if not token:
            return
        header = request.headers.get("authorization", "")
        if header != f"Bearer {token}":
            raise HTTPException(status_code=401, detail="missing or invalid token")

    @app.get("/api/tasks/next", dependencies=[Depends(check_token)])
    def next_task(annotator_id: str = "annotator"):
        task = store.next_task(annotator_id)
        if task is None:
            return {"task": None}
        return {"task": store.task_payload(task)}

    @app.post("/api/annotations", dependencies=[Depends(check_token)])
    def submit(body: SubmitBody):
        try:
            task, created = store.submit(body.task_id, body.annotator_id, body.codes, body.note)
        except KeyError as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from exc
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        except ConflictError as exc:
            return JSONResponse(
                status_code=409,
                content={
                    "detail": str(exc),
                    "stored": {
                        "task_id": exc.task.task_id,
                        "codes": list(exc.task.codes),
                        "note": exc.task.note,
                    },
                },
            )
        return {
            "task_id": task.task_id,
            "codes": list(task.codes),
            "note": task.note,
            "created": created,
        }

    @app.post("/api/tasks/skip", dependencies=[Depends(check_token)])
    def skip(body: SkipBody):
        try:
            task = store.skip(body.task_id, body.annotator_id)
        except KeyError as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from exc
        return {"task_id": task.task_id, "status": task.status}

    @app.get("/api/progress", dependencies=[Depends(check_token)])
    def progress(annotator_id: str = "annotator"):
        state = store.progress(annotator_id)
        return {
            "annotator_id": state.annotator_id,
            "completed": state.completed,
            "skipped": state.skipped,
            "remaining": state.remaining,
            "total": state.total,
            "started_at": state.started_at,
        }

    @app.get("/api/export", dependencies=[Depends(check_token)])
    def export(format: str = "json"):
        records = store.export()
        if format == "jsonl":
            body = "".join(json.dumps(r, ensure_ascii=False) + "\n" for r in records)
            return PlainTextResponse(body, media_type="application/x-ndjson")
        return {"annotations": records}

    @app.get("/api/codes", dependencies=[Depends(check_token)])
    def codes():
        return {"codes": palette()}

    if static_dir is not None and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="console")

    return app
