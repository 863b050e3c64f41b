"""HTTP session service consumed by the labeling canvas.

One service instance owns one session directory.  Ingestion runs at
startup; the projection is computed on a background thread and reported as
"pending" until ready.  Posting labels advances the session through the
relabel, verification, and evaluation stages synchronously, so the next
fetch already reflects the new labels.  Session mutation is serialized
through a single lock; reads see consistent snapshots.
"""

from __future__ import annotations

import io
import socket
import threading
from contextlib import asynccontextmanager
from pathlib import Path
from typing import Any

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, Response

from .errors import AffkitError, BindError, StageError, UnknownObjectId
from .pipeline import PipelineConfig, PipelineSession, stage_index
from .relabeler import RelabeledObject, fold_assignments

THUMBNAIL_SUFFIXES = (".png", ".jpg", ".jpeg")


def _relabel_record(r: RelabeledObject) -> dict[str, Any]:
    return {
        "object_id": r.object_id,
        "frame_id": r.frame_id,
        "box": r.box.as_list(),
        "label": r.new_label,
        "confidence": r.new_confidence,
        "original_label": r.original_label,
        "raw_similarity": r.raw_similarity,
    }


def create_app(config: PipelineConfig, *, start_projection: bool = True) -> FastAPI:
    """Build the service app; ingestion happens here so bad configs fail
    fast.  With start_projection=False the projection thread is not
    spawned (tests drive it manually via app.state.run_projection)."""
    session = PipelineSession(config)
    session.run_ingest()

    lock = threading.RLock()
    projection_status = {"state": "pending", "message": ""}

    def run_projection() -> None:
        try:
            session.run_project()
            projection_status["state"] = "ready"
        except Exception as e:  # surfaced via /session/projection
            projection_status["state"] = "failed"
            projection_status["message"] = str(e)

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        if start_projection:
            threading.Thread(target=run_projection, daemon=True).start()
        yield

    app = FastAPI(title="affkit session service", lifespan=lifespan)
    app.state.session = session
    app.state.lock = lock
    app.state.run_projection = run_projection

    @app.exception_handler(AffkitError)
    async def _affkit_error(request: Request, exc: AffkitError) -> JSONResponse:
        status = 409 if isinstance(exc, StageError) else 400
        stage = getattr(exc, "stage", None)
        if stage is None and session.state is not None:
            stage = session.state.stage
        cause = type(exc.__cause__).__name__ if isinstance(exc, StageError) and exc.__cause__ else None
        body = {
            "error": {
                "type": type(exc).__name__,
                "message": str(exc),
                "stage": stage,
                **({"cause": cause} if cause else {}),
            }
        }
        return JSONResponse(status_code=status, content=body)

    @app.get("/session")
    def get_session() -> dict[str, Any]:
        state = session.state
        assert state is not None
        return {
            "session_id": state.session_id,
            "stage": state.stage,
            "object_count": len(state.detection_set),
            "dimension": state.detection_set.dimension,
            "label_set": list(state.detection_set.label_set),
            "projection_status": projection_status["state"],
            "assigned_count": len(state.assignments),
        }

    @app.get("/session/projection")
    def get_projection() -> dict[str, Any]:
        state = session.state
        assert state is not None
        if state.layout is None:
            out = {"status": projection_status["state"]}
            if projection_status["message"]:
                out["message"] = projection_status["message"]
            return out
        return {"status": "ready", **state.layout.to_json_dict()}

    @app.post("/session/labels")
    def post_labels(payload: dict[str, Any]) -> dict[str, Any]:
        if not isinstance(payload.get("assignments"), list):
            raise StageError("labeled", "payload needs an 'assignments' array")
        assignments = fold_assignments(payload["assignments"], context="payload")
        with lock:
            state = session.state
            assert state is not None
            if stage_index(state.stage) < stage_index("projected"):
                raise StageError(
                    "labeled", "projection still pending; labels not accepted yet"
                )
            for object_id in assignments:
                if state.detection_set.get(object_id) is None:
                    raise UnknownObjectId(f"unknown object {object_id!r}")
            session.apply_labels(assignments)
            return {
                "stage": state.stage,
                "assigned_count": len(state.assignments),
            }

    @app.get("/session/relabel")
    def get_relabel() -> dict[str, Any]:
        with lock:
            state = session.state
            assert state is not None
            if state.relabeled is None:
                raise StageError(
                    "relabeled", f"session is at stage {state.stage!r}; submit labels first"
                )
            return {
                "records": [_relabel_record(r) for r in state.relabeled],
                "verdicts": [v.to_json_dict() for v in (state.verdicts or [])],
            }

    @app.get("/session/report")
    def get_report() -> dict[str, Any]:
        with lock:
            state = session.state
            assert state is not None
            if state.report is None:
                raise StageError(
                    "evaluated",
                    "no report available; submit labels and configure ground truth",
                )
            return state.report.to_json_dict()

    @app.get("/session/objects/{object_id}/thumbnail")
    def get_thumbnail(object_id: str) -> Response:
        state = session.state
        assert state is not None
        obj = state.detection_set.get(object_id)
        if obj is None:
            return JSONResponse(
                status_code=404,
                content={"error": {"type": "UnknownObjectId", "message": object_id,
                                   "stage": state.stage}},
            )
        image_path = _frame_image(config.images_dir, obj.frame_id)
        if image_path is None:
            return JSONResponse(
                status_code=404,
                content={"error": {"type": "ThumbnailUnavailable", "message": obj.frame_id,
                                   "stage": state.stage}},
            )
        return Response(content=_crop_png(image_path, obj), media_type="image/png")

    return app


def _frame_image(images_dir: Path | None, frame_id: str) -> Path | None:
    if images_dir is None:
        return None
    for suffix in THUMBNAIL_SUFFIXES:
        candidate = Path(images_dir) / f"{frame_id}{suffix}"
        if candidate.exists():
            return candidate
    return None


def _crop_png(image_path: Path, obj: Any) -> bytes:
    from PIL import Image

    with Image.open(image_path) as img:
        left = max(int(obj.box.x_min), 0)
        top = max(int(obj.box.y_min), 0)
        right = min(int(obj.box.x_max + 0.5), img.width)
        bottom = min(int(obj.box.y_max + 0.5), img.height)
        if right <= left or bottom <= top:
            left, top, right, bottom = 0, 0, img.width, img.height
        crop = img.crop((left, top, right, bottom))
        buf = io.BytesIO()
        crop.save(buf, format="PNG")
        return buf.getvalue()


def serve(config: PipelineConfig) -> None:
    """Run the session service until interrupted."""
    import uvicorn

    probe = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    try:
        probe.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        probe.bind((config.service.bind_address, config.service.port))
    except OSError as e:
        raise BindError(
            f"cannot bind {config.service.bind_address}:{config.service.port}: {e}"
        ) from e
    finally:
        probe.close()

    app = create_app(config)
    uvicorn.run(app, host=config.service.bind_address, port=config.service.port,
                log_level="info")
