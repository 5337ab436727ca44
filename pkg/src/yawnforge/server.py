"""HTTP review service over an annotation store.

Reviewers authenticate by name (against an allow-list), check out one
leased batch at a time, and submit a decision for every frame in it. The
server is a thin adapter: all invariants live in the store.
"""

from __future__ import annotations

import json
import secrets
from pathlib import Path
from typing import Optional

from fastapi import Depends, FastAPI, Header, HTTPException
from fastapi.responses import FileResponse, JSONResponse, Response
from pydantic import BaseModel, Field

from .errors import BatchConflictError, BatchCoverageError, StoreError
from .store import ORDERINGS, AnnotationStore


class SessionRequest(BaseModel):
    reviewer: str = Field(min_length=1)


class CheckoutRequest(BaseModel):
    ordering: str = "by_video"


class Decision(BaseModel):
    frame_id: str
    final_label: str


class SubmitRequest(BaseModel):
    decisions: list[Decision]


def load_reviewers(source) -> list[str]:
    """Accepts a list of names or a JSON file ({"reviewers": [...]} or a
    bare list)."""
    if source is None:
        return []
    if isinstance(source, (list, tuple)):
        return [str(r) for r in source]
    doc = json.loads(Path(source).read_text(encoding="utf-8"))
    if isinstance(doc, dict):
        doc = doc.get("reviewers", [])
    if not isinstance(doc, list):
        raise StoreError(f"reviewers file must hold a list of names, got {type(doc)}")
    return [str(r) for r in doc]


def _frame_payload(row: dict) -> dict:
    return {
        "frame_id": row["frame_id"],
        "video_id": row["video_id"],
        "index": row["index"],
        "auto_label": row["auto_label"],
        "confidence": row["confidence"],
        "mouth_box": row["mouth_box"],
        "status": "verified" if row["verified"] else "auto",
        "label": row["final_label"] if row["verified"] else row["auto_label"],
        "final_label": row["final_label"],
        "crop_url": f"/v1/crops/{row['frame_id']}",
    }


def create_app(
    store: AnnotationStore,
    reviewers=None,
    ui_dir: str | Path | None = None,
    session_ttl_s: int = 12 * 3600,
) -> FastAPI:
    app = FastAPI(title="yawnforge review", version="1")
    app.state.store = store
    app.state.reviewers = set(load_reviewers(reviewers))
    app.state.sessions: dict[str, dict] = {}

    def require_session(authorization: Optional[str] = Header(None)) -> tuple[str, str]:
        if not authorization or not authorization.startswith("Bearer "):
            raise HTTPException(401, "missing bearer token")
        token = authorization.removeprefix("Bearer ").strip()
        session = app.state.sessions.get(token)
        if session is None:
            raise HTTPException(401, "unknown session token")
        if session["expires_at_ms"] <= store.clock():
            raise HTTPException(401, "session token expired; open a new session")
        return token, session["reviewer"]

    @app.post("/v1/session")
    def open_session(req: SessionRequest):
        if req.reviewer not in app.state.reviewers:
            raise HTTPException(403, f"reviewer {req.reviewer!r} is not on the allow-list")
        token = secrets.token_hex(16)
        app.state.sessions[token] = {
            "reviewer": req.reviewer,
            "issued_at_ms": store.clock(),
            "expires_at_ms": store.clock() + session_ttl_s * 1000,
        }
        return {"token": token, "reviewer": req.reviewer}

    @app.post("/v1/batches/checkout")
    def checkout(req: CheckoutRequest, session=Depends(require_session)):
        if req.ordering not in ORDERINGS:
            raise HTTPException(
                422, f"unknown ordering {req.ordering!r}; expected one of {list(ORDERINGS)}"
            )
        token, reviewer = session
        result = store.checkout(token, reviewer, ordering=req.ordering)
        if result.status == "empty":
            return Response(status_code=204)
        if result.status == "locked":
            return JSONResponse(
                status_code=423,
                content={"detail": "all pending batches are leased to other sessions"},
                headers={"Retry-After": str(result.retry_after_s)},
            )
        batch = result.batch
        return {
            "batch_id": batch["batch_id"],
            "ordering": batch["ordering"],
            "status": batch["status"],
            "lease_expires_at_ms": batch["lease"]["expires_at_ms"] if batch["lease"] else None,
            "frames": [_frame_payload(row) for row in result.frames],
        }

    @app.post("/v1/batches/{batch_id}/submit")
    def submit(batch_id: str, req: SubmitRequest, session=Depends(require_session)):
        token, reviewer = session
        decisions = [d.model_dump() for d in req.decisions]
        try:
            outcome = store.submit(batch_id, token, reviewer, decisions)
        except KeyError:
            raise HTTPException(404, f"unknown batch {batch_id!r}")
        except BatchCoverageError as exc:
            raise HTTPException(422, detail={
                "message": str(exc), "missing": exc.missing, "unknown": exc.unknown,
            })
        except BatchConflictError as exc:
            raise HTTPException(409, str(exc))
        return {
            "batch_id": outcome["batch_id"],
            "verified_delta": 0 if outcome["idempotent"] else outcome["verified"],
            "idempotent": outcome["idempotent"],
            "progress": store.progress(),
        }

    @app.get("/v1/progress")
    def progress():
        return store.progress()

    @app.get("/v1/crops/{frame_id}")
    def crop(frame_id: str):
        row = store.annotations.get(frame_id)
        if row is None or not row.get("crop_path"):
            raise HTTPException(404, f"no crop for frame {frame_id!r}")
        path = Path(row["crop_path"])
        if not path.exists():
            raise HTTPException(404, f"crop image missing on disk for {frame_id!r}")
        media = "image/png" if path.suffix.lower() == ".png" else "image/jpeg"
        return FileResponse(path, media_type=media)

    if ui_dir is not None and Path(ui_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app


def serve(
    store_dir: str | Path,
    reviewers_path: str | Path,
    host: str = "127.0.0.1",
    port: int = 8700,
    ui_dir: str | Path | None = None,
) -> None:  # pragma: no cover - thin uvicorn wrapper
    import uvicorn

    store = AnnotationStore.open(store_dir)
    app = create_app(store, reviewers=reviewers_path, ui_dir=ui_dir)
    uvicorn.run(app, host=host, port=port)
