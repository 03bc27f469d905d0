"""Annotation backend tests over the HTTP surface."""

import numpy as np
import pytest
from fastapi.testclient import TestClient

import cv2

from handsign.service import create_app
from handsign.store import ClassCatalogue, HandShapeStore


@pytest.fixture()
def service(tmp_path):
    names = [f"shape-{i:02d}" for i in range(4)] + ["garbage", "rest-position"]
    store = HandShapeStore(ClassCatalogue(tuple(names)))
    store.ingest_manual([((f"m-{i}", 0, "right"), i % 2) for i in range(8)])
    preds = [
        (("v1", 0, "left"), 0, 0.93),
        (("v1", 1, "left"), 0, 0.99),
        (("v2", 0, "left"), 1, 0.91),
        (("v2", 1, "left"), 1, 0.97),
        (("v3", 0, "left"), 0, 0.95),
    ]
    store.ingest_predictions(preds, threshold=0.9, iteration=2)

    patches_root = tmp_path / "patches"
    patch_dir = patches_root / "v1" / "left"
    patch_dir.mkdir(parents=True)
    cv2.imwrite(str(patch_dir / "00000.png"), np.zeros((8, 8, 3), np.uint8))

    client = TestClient(create_app(store, patches_root))
    return client, store


def test_classes(service):
    client, store = service
    doc = client.get("/classes").json()
    assert [c["name"] for c in doc["classes"]] == list(store.catalogue.names)
    assert doc["uninformative"] == [4, 5]


def test_queue_pagination_and_sorting(service):
    client, _ = service
    doc = client.get("/queue", params={"page_size": 2}).json()
    assert (doc["iteration"], doc["total"], doc["pages"]) == (2, 5, 3)
    confidences = [i["confidence"] for i in doc["items"]]
    assert confidences == [0.91, 0.93]  # hardest first
    page2 = client.get("/queue", params={"page_size": 2, "page": 2}).json()
    assert [i["confidence"] for i in page2["items"]] == [0.95, 0.97]
    page3 = client.get("/queue", params={"page_size": 2, "page": 3}).json()
    assert len(page3["items"]) == 1

    by_ref = client.get("/queue", params={"sort": "ref"}).json()
    keys = [i["key"] for i in by_ref["items"]]
    assert keys == sorted(keys)

    only_one = client.get("/queue", params={"class_id": 1}).json()
    assert {i["predicted_class"] for i in only_one["items"]} == {1}
    assert only_one["total"] == 2

    assert client.get("/queue", params={"sort": "priority"}).status_code == 422
    assert client.get("/queue", params={"iteration": 0}).status_code == 422


def test_queue_item_payload(service):
    client, store = service
    item = client.get("/queue").json()["items"][0]
    assert item["key"] == f"{item['video_id']}/{item['side']}/{item['frame_index']}"
    assert item["predicted_class_name"] == store.catalogue.name(item["predicted_class"])
    assert len(item["exemplars"]) <= 6
    # exemplars come from the training pool of the predicted class
    for ex in item["exemplars"]:
        assert ex["video_id"].startswith("m-")


def _decide(client, video_id, frame_index, action, class_id=None, iteration=2):
    return client.post(
        "/decision",
        json={
            "video_id": video_id,
            "frame_index": frame_index,
            "side": "left",
            "iteration": iteration,
            "action": action,
            "class_id": class_id,
        },
    )


def test_decision_confirm_moves_ledger(service):
    client, store = service

    def row(class_id, iteration):
        rows = client.get("/ledger").json()["rows"]
        return next(
            r for r in rows if r["class_id"] == class_id and r["iteration"] == iteration
        )

    before = row(0, 2)
    assert (before["predicted"], before["correct"]) == (3, 0)
    resp = _decide(client, "v1", 0, "confirm")
    assert resp.status_code == 200
    doc = resp.json()
    assert doc["final_class"] == 0
    assert doc["summary"] == {"confirmed": 1, "relabeled": 0, "rejected": 0}
    after = row(0, 2)
    assert (after["predicted"], after["correct"]) == (3, 1)
    assert after["total"] == row(0, 1)["total"] + 1
    assert client.get("/queue").json()["total"] == 4


def test_decision_relabel_and_reject(service):
    client, store = service
    resp = _decide(client, "v1", 1, "relabel", class_id=3)
    assert resp.status_code == 200
    assert resp.json()["final_class"] == 3
    record = next(r for r in store.records() if r.video_id == "v1" and r.frame_index == 1)
    assert record.provenance == "corrected"
    assert record.class_id == 3
    # relabeled-to-other counts in no class's correct column
    rows = client.get("/ledger").json()["rows"]
    assert all(r["correct"] == 0 for r in rows if r["iteration"] == 2)

    resp = _decide(client, "v2", 0, "reject")
    assert resp.json()["final_class"] is None
    assert store.is_known(("v2", 0, "left"))
    assert client.get("/queue").json()["total"] == 3


def test_decision_conflicts_and_validation(service):
    client, _ = service
    assert _decide(client, "v1", 0, "confirm").status_code == 200
    # second decision on the same item: conflict, state reported
    again = _decide(client, "v1", 0, "confirm")
    assert again.status_code == 409
    assert again.json()["known"] is True
    never = _decide(client, "ghost", 9, "confirm")
    assert never.status_code == 409
    assert never.json()["known"] is False
    assert _decide(client, "v2", 0, "relabel").status_code == 422
    assert _decide(client, "v2", 0, "approve").status_code == 422
    # wrong iteration is a conflict, not a crash
    assert _decide(client, "v2", 0, "confirm", iteration=3).status_code == 409


def test_patch_endpoint(service):
    client, _ = service
    ok = client.get("/patch/v1/left/0")
    assert ok.status_code == 200
    assert ok.headers["content-type"] == "image/png"
    assert client.get("/patch/v1/left/7").status_code == 404


def test_frontend_mount(tmp_path):
    store = HandShapeStore(ClassCatalogue.default())
    ui = tmp_path / "ui"
    ui.mkdir()
    (ui / "index.html").write_text("<!doctype html><title>annotate</title>")
    client = TestClient(create_app(store, tmp_path / "patches", frontend_dir=ui))
    page = client.get("/")
    assert page.status_code == 200
    assert "annotate" in page.text
    # API routes still win over the static mount
    assert client.get("/ledger").status_code == 200
