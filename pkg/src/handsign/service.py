"""HTTP backend for the annotation UI.

Serves the review queue, decision endpoint, class catalogue, patch
images and the iteration ledger over one shared HandShapeStore. All
mutations funnel through the store's writer lock, so concurrent
reviewers are safe; a decision against an item someone else already
resolved comes back 409 with the current state.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, HTTPException, Query
from fastapi.responses import FileResponse, JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .errors import InputError
from .store import HandShapeStore, PatchRef, ref_key

logger = logging.getLogger(__name__)

DECISION_ACTIONS = ("confirm", "relabel", "reject")


class DecisionRequest(BaseModel):
    video_id: str
    frame_index: int
    side: str
    iteration: int
    action: str
    class_id: Optional[int] = None  # required for relabel


def _item_payload(store: HandShapeStore, item) -> dict:
    return {
        "video_id": item.video_id,
        "frame_index": item.frame_index,
        "side": item.side,
        "key": ref_key(item.ref),
        "predicted_class": item.predicted_class,
        "predicted_class_name": store.catalogue.name(item.predicted_class),
        "confidence": item.confidence,
        "iteration": item.iteration,
        "exemplars": [
            {"video_id": v, "frame_index": f, "side": s, "key": ref_key((v, f, s))}
            for (v, f, s) in store.exemplars(item.predicted_class)
        ],
    }


def create_app(
    store: HandShapeStore,
    patches_root: Path | str,
    frontend_dir: Optional[Path | str] = None,
) -> FastAPI:
    app = FastAPI(title="hand-shape annotation backend")
    patches_root = Path(patches_root)

    @app.get("/classes")
    def classes():
        return {
            "classes": [
                {"id": i, "name": name} for i, name in enumerate(store.catalogue.names)
            ],
            "uninformative": sorted(store.catalogue.uninformative_ids),
        }

    @app.get("/queue")
    def queue(
        iteration: Optional[int] = Query(default=None, ge=1),
        sort: str = Query(default="confidence"),
        class_id: Optional[int] = Query(default=None, ge=0),
        page: int = Query(default=1, ge=1),
        page_size: int = Query(default=24, ge=1, le=200),
    ):
        if sort not in ("confidence", "ref"):
            raise HTTPException(status_code=422, detail=f"unknown sort {sort!r}")
        it = iteration if iteration is not None else max(store.max_iteration(), 2)
        try:
            items = store.pending_queue(iteration=it, sort=sort, class_id=class_id)
        except InputError as e:
            raise HTTPException(status_code=422, detail=str(e))
        total = len(items)
        pages = max(1, -(-total // page_size))
        start = (page - 1) * page_size
        chunk = items[start : start + page_size]
        return {
            "iteration": it,
            "total": total,
            "page": page,
            "pages": pages,
            "page_size": page_size,
            "items": [_item_payload(store, i) for i in chunk],
        }

    @app.post("/decision")
    def decision(req: DecisionRequest):
        if req.action not in DECISION_ACTIONS:
            raise HTTPException(status_code=422, detail=f"action must be one of {DECISION_ACTIONS}")
        ref: PatchRef = (req.video_id, req.frame_index, req.side)
        pending = {ref_key(p.ref): p for p in store.pending_queue(iteration=req.iteration, sort="ref")}
        item = pending.get(ref_key(ref))
        if item is None:
            # already resolved (or never queued): report current state instead of mutating
            return JSONResponse(
                status_code=409,
                content={"detail": "item is not pending", "known": store.is_known(ref)},
            )
        if req.action == "confirm":
            final: Optional[int] = item.predicted_class
        elif req.action == "relabel":
            if req.class_id is None:
                raise HTTPException(status_code=422, detail="relabel needs class_id")
            final = req.class_id
        else:
            final = None
        try:
            summary = store.apply_corrections([(ref, final)], iteration=req.iteration)
        except InputError as e:
            raise HTTPException(status_code=409, detail=str(e))
        return {
            "resolved": ref_key(ref),
            "action": req.action,
            "final_class": final,
            "summary": vars(summary),
            "ledger": [vars(r) for r in store.ledger()],
        }

    @app.get("/patch/{video_id}/{side}/{frame_index}")
    def patch(video_id: str, side: str, frame_index: int):
        path = patches_root / video_id / side / f"{frame_index:05d}.png"
        if not path.exists():
            raise HTTPException(status_code=404, detail=f"no patch image for {video_id}/{side}/{frame_index}")
        return FileResponse(path, media_type="image/png")

    @app.get("/ledger")
    def ledger():
        return {"rows": [vars(r) for r in store.ledger()]}

    if frontend_dir is not None and Path(frontend_dir).exists():
        app.mount("/", StaticFiles(directory=str(frontend_dir), html=True), name="ui")
        logger.info("serving frontend from %s", frontend_dir)
    return app


def serve(store: HandShapeStore, patches_root: Path | str, host: str = "127.0.0.1",
          port: int = 8787, frontend_dir: Optional[Path | str] = None) -> None:
    import uvicorn

    app = create_app(store, patches_root, frontend_dir=frontend_dir)
    uvicorn.run(app, host=host, port=port, log_level="info")
