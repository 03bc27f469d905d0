"""Label store tests: provenance, review queue and the iteration ledger."""

import threading

import pytest

from handsign.errors import ConflictError, InputError, StateError
from handsign.store import (
    ClassCatalogue,
    HandShapeStore,
    LabelRecord,
    parse_ref,
    ref_key,
)


def _catalogue(n_shapes=5):
    names = [f"shape-{i:02d}" for i in range(n_shapes)] + ["garbage", "rest-position"]
    return ClassCatalogue(tuple(names))


def _refs(tag, count, side="right"):
    return [(f"{tag}-{i:04d}", 0, side) for i in range(count)]


def test_ref_key_round_trip():
    ref = ("s00_g003_r01", 17, "left")
    assert parse_ref(ref_key(ref)) == ref
    with pytest.raises(InputError):
        parse_ref("no-slashes-here")


def test_catalogue_validation():
    cat = ClassCatalogue.default()
    assert len(cat) == 41
    assert cat.names[cat.garbage_id] == "garbage"
    assert cat.names[cat.rest_id] == "rest-position"
    assert cat.uninformative_ids == {cat.garbage_id, cat.rest_id}
    with pytest.raises(InputError):
        ClassCatalogue(("a", "garbage", "garbage", "rest-position"))
    with pytest.raises(InputError):
        ClassCatalogue(("a", "b", "garbage"))
    with pytest.raises(InputError):
        ClassCatalogue(("garbage", "rest-position"))
    with pytest.raises(InputError):
        cat.check(41)
    with pytest.raises(InputError):
        cat.check(-1)


def test_catalogue_round_trip(tmp_path):
    cat = _catalogue(7)
    cat.save(tmp_path / "catalogue.json")
    assert ClassCatalogue.load(tmp_path / "catalogue.json") == cat


def test_label_record_validation():
    with pytest.raises(InputError):
        LabelRecord("v", 0, "left", 0, "guessed", 1)
    with pytest.raises(InputError):
        LabelRecord("v", 0, "left", 0, "manual", 0)
    # manual labels have no model confidence attached
    with pytest.raises(InputError):
        LabelRecord("v", 0, "left", 0, "manual", 1, confidence=0.9)
    with pytest.raises(InputError):
        LabelRecord("v", 0, "left", 0, "accepted", 2, confidence=1.5)


def test_manual_ingest_and_pool():
    store = HandShapeStore(_catalogue())
    added = store.ingest_manual([(r, i % 3) for i, r in enumerate(_refs("a", 6))])
    assert added == 6
    pool = store.training_pool(1)
    assert len(pool) == 6
    assert all(r.provenance == "manual" and r.iteration == 1 for r in pool)
    assert store.pool_class_counts(1) == {0: 2, 1: 2, 2: 2}
    with pytest.raises(ConflictError):
        store.ingest_manual([(("a-0000", 0, "right"), 1)])
    with pytest.raises(ConflictError):
        store.ingest_manual([(("b", 0, "left"), 0), (("b", 0, "left"), 0)])
    with pytest.raises(InputError):
        store.ingest_manual([(("c", 0, "left"), 99)])


def test_prediction_threshold_edges():
    store = HandShapeStore(_catalogue())
    preds = [
        (("v async", 0, "right"), 0, 0.95),
        (("v-eq", 0, "right"), 0, 0.9),
        (("v-lo", 0, "right"), 0, 0.8999),
    ]
    summary = store.ingest_predictions(preds, threshold=0.9, iteration=2)
    # confidence equal to the threshold still qualifies
    assert (summary.enqueued, summary.discarded, summary.skipped) == (2, 1, 0)
    with pytest.raises(InputError):
        store.ingest_predictions([], threshold=1.2, iteration=2)
    with pytest.raises(InputError):
        store.ingest_predictions([], threshold=0.9, iteration=1)


def test_prediction_skip_semantics():
    store = HandShapeStore(_catalogue())
    store.ingest_manual([(("known", 0, "left"), 1)])
    store.ingest_predictions([(("queued", 0, "left"), 0, 0.99)], 0.9, iteration=2)
    store.apply_corrections([(("queued", 0, "left"), None)], iteration=2)
    preds = [
        (("known", 0, "left"), 0, 0.99),   # already labeled
        (("queued", 0, "left"), 0, 0.99),  # rejected earlier, stays out
        (("fresh", 0, "left"), 0, 0.99),
    ]
    summary = store.ingest_predictions(preds, 0.9, iteration=2)
    assert (summary.enqueued, summary.skipped) == (1, 2)
    summary = store.ingest_predictions([(("fresh", 0, "left"), 0, 0.99)], 0.9, iteration=2)
    assert summary.skipped == 1  # pending items are not re-enqueued


def test_correction_semantics():
    store = HandShapeStore(_catalogue())
    refs = _refs("p", 4)
    store.ingest_predictions([(r, 2, 0.95) for r in refs], 0.9, iteration=2)
    summary = store.apply_corrections(
        [(refs[0], 2), (refs[1], 3), (refs[2], None)], iteration=2
    )
    assert (summary.confirmed, summary.relabeled, summary.rejected) == (1, 1, 1)
    by_key = {ref_key(r.ref): r for r in store.records()}
    assert by_key[ref_key(refs[0])].provenance == "accepted"
    assert by_key[ref_key(refs[1])].provenance == "corrected"
    assert by_key[ref_key(refs[1])].class_id == 3
    assert ref_key(refs[2]) not in by_key
    assert store.is_known(refs[2])
    assert [p.ref for p in store.pending_queue(2)] == [refs[3]]
    # double resolution and unknown refs are input errors
    with pytest.raises(InputError):
        store.apply_corrections([(refs[0], 2)], iteration=2)
    with pytest.raises(InputError):
        store.apply_corrections([(refs[3], 2)], iteration=3)
    with pytest.raises(InputError):
        store.apply_corrections([(("missing", 0, "left"), 2)], iteration=2)


def test_corrected_to_other_class_counts():
    store = HandShapeStore(_catalogue())
    store.ingest_manual([(r, 0) for r in _refs("m0", 3)])
    store.ingest_manual([(r, 1) for r in _refs("m1", 2, side="left")])
    preds = [(r, 0, 0.95) for r in _refs("p", 4, side="left")]
    store.ingest_predictions(preds, 0.9, iteration=2)
    refs = [p[0] for p in preds]
    store.apply_corrections(
        [(refs[0], 0), (refs[1], 0), (refs[2], 1), (refs[3], None)], iteration=2
    )
    rows = {(r.class_id, r.iteration): r for r in store.ledger()}
    # P counts every enqueued prediction, rejected and relabeled included
    assert (rows[(0, 2)].predicted, rows[(0, 2)].correct) == (4, 2)
    assert rows[(0, 2)].total == 3 + 2
    # the relabeled patch joins class 1's pool without touching its ledger
    assert (rows[(1, 2)].predicted, rows[(1, 2)].correct, rows[(1, 2)].total) == (0, 0, 2)
    assert store.pool_class_counts(2) == {0: 5, 1: 3}


def _simulate(store, plans):
    """Drive manual + review iterations so each class hits its (P, C) plan."""
    other = store.catalogue.garbage_id
    for class_id, (t1, passes) in plans.items():
        store.ingest_manual([(r, class_id) for r in _refs(f"c{class_id:02d}-i1", t1)])
    for it, _ in enumerate(next(iter(plans.values()))[1], start=2):
        for class_id, (_, passes) in plans.items():
            p, c = passes[it - 2]
            refs = _refs(f"c{class_id:02d}-i{it}", p)
            store.ingest_predictions([(r, class_id, 0.95) for r in refs], 0.9, it)
            decisions = []
            for i, ref in enumerate(refs):
                if i < c:
                    decisions.append((ref, class_id))
                elif i % 2 == 0:
                    decisions.append((ref, other))
                else:
                    decisions.append((ref, None))
            store.apply_corrections(decisions, it)


def test_ledger_cumulative_totals():
    # per class: manual count, then (enqueued, confirmed) per review pass
    plans = {
        0: (217, [(277, 277), (281, 277)]),
        1: (69, [(88, 73), (102, 96)]),
        2: (163, [(236, 196), (219, 198)]),
    }
    store = HandShapeStore(_catalogue())
    _simulate(store, plans)
    rows = {(r.class_id, r.iteration): r for r in store.ledger()}
    expected = {
        0: [(217, 217, 217), (277, 277, 494), (281, 277, 771)],
        1: [(69, 69, 69), (88, 73, 142), (102, 96, 238)],
        2: [(163, 163, 163), (236, 196, 359), (219, 198, 557)],
    }
    for class_id, triples in expected.items():
        for it, (p, c, t) in enumerate(triples, start=1):
            row = rows[(class_id, it)]
            assert (row.predicted, row.correct, row.total) == (p, c, t)
    # invariant over every row: totals accumulate confirmed counts
    for class_id in range(len(store.catalogue)):
        total = 0
        for it in (1, 2, 3):
            row = rows[(class_id, it)]
            total += row.correct
            assert row.total == total
            if it == 1:
                assert row.predicted == row.correct
    # confirmed records can never exceed the pool (corrections add to it)
    counts = store.pool_class_counts(3)
    for class_id, triples in expected.items():
        assert counts[class_id] >= triples[-1][2]


def test_training_pool_iteration_subsets():
    store = HandShapeStore(_catalogue())
    _simulate(store, {0: (5, [(4, 3), (6, 2)])})
    sizes = [len(store.training_pool(k)) for k in (1, 2, 3)]
    assert sizes[0] == 5
    assert sizes[0] < sizes[1] < sizes[2]
    assert sizes == [len({ref_key(r.ref) for r in store.training_pool(k)}) for k in (1, 2, 3)]
    with pytest.raises(InputError):
        store.training_pool(0)


def test_queue_sorting_and_filters():
    store = HandShapeStore(_catalogue())
    preds = [
        (("v3", 0, "right"), 0, 0.93),
        (("v1", 0, "right"), 0, 0.99),
        (("v2", 0, "right"), 1, 0.91),
        (("v4", 0, "right"), 0, 0.91),
    ]
    store.ingest_predictions(preds, 0.9, iteration=2)
    queue = store.pending_queue(2)
    assert [p.confidence for p in queue] == sorted(p.confidence for p in queue)
    # ties break on the patch ref
    assert [p.video_id for p in queue[:2]] == ["v2", "v4"]
    assert [p.video_id for p in store.pending_queue(2, sort="ref")] == ["v1", "v2", "v3", "v4"]
    assert [p.video_id for p in store.pending_queue(2, class_id=1)] == ["v2"]
    assert store.pending_queue(3) == []
    with pytest.raises(InputError):
        store.pending_queue(2, sort="priority")


def test_max_iteration_tracks_history():
    store = HandShapeStore(_catalogue())
    assert store.max_iteration() == 0
    store.ingest_manual([(("m", 0, "left"), 0)])
    assert store.max_iteration() == 1
    store.ingest_predictions([(("p", 0, "left"), 0, 0.95)], 0.9, iteration=2)
    assert store.max_iteration() == 2
    store.apply_corrections([(("p", 0, "left"), None)], iteration=2)
    # history survives queue resolution
    assert store.max_iteration() == 2


def test_exemplars_limit_and_scope():
    store = HandShapeStore(_catalogue())
    store.ingest_manual([(r, 0) for r in _refs("m", 9)])
    store.ingest_predictions([(r, 0, 0.95) for r in _refs("p", 2, "left")], 0.9, 2)
    store.apply_corrections([(r, 0) for r in _refs("p", 2, "left")], 2)
    assert len(store.exemplars(0)) == 6
    assert len(store.exemplars(0, limit=3)) == 3
    manual_only = store.exemplars(0, up_to_iteration=1, limit=100)
    assert len(manual_only) == 9
    assert store.exemplars(1) == []


def test_persistence_round_trip(tmp_path):
    root = tmp_path / "store"
    store = HandShapeStore(_catalogue(), root=root)
    store.ingest_manual([(r, i % 2) for i, r in enumerate(_refs("m", 4))])
    store.ingest_predictions([(r, 0, 0.95) for r in _refs("p", 5, "left")], 0.9, 2)
    refs = _refs("p", 5, "left")
    store.apply_corrections([(refs[0], 0), (refs[1], 1), (refs[2], None)], 2)
    store.save()

    reopened = HandShapeStore.open(root)
    assert reopened.catalogue == store.catalogue
    assert reopened.records() == store.records()
    assert reopened.pending_queue(2) == store.pending_queue(2)
    assert reopened.ledger() == store.ledger()
    assert reopened.is_known(refs[2])
    # rejected patches stay rejected across reopen
    summary = reopened.ingest_predictions([(refs[2], 0, 0.99)], 0.9, 2)
    assert summary.skipped == 1
    # and the reopened store keeps accepting new iterations
    reopened.ingest_predictions([(("late", 0, "left"), 1, 0.95)], 0.9, 3)
    assert reopened.max_iteration() == 3


def test_save_is_deterministic(tmp_path):
    def build(root):
        store = HandShapeStore(_catalogue(), root=root)
        store.ingest_manual([(r, 0) for r in _refs("m", 3)])
        store.ingest_predictions([(r, 0, 0.95) for r in _refs("p", 3, "left")], 0.9, 2)
        store.apply_corrections([(_refs("p", 3, "left")[0], 0)], 2)
        store.save()
        return (root / "labels.jsonl").read_bytes(), (root / "ledger.json").read_bytes()

    assert build(tmp_path / "a") == build(tmp_path / "b")
    # a save/reopen/save cycle is byte-stable too
    reopened = HandShapeStore.open(tmp_path / "a")
    reopened.save()
    assert (tmp_path / "a" / "labels.jsonl").read_bytes() == (tmp_path / "b" / "labels.jsonl").read_bytes()


def test_save_requires_directory():
    store = HandShapeStore(_catalogue())
    with pytest.raises(StateError):
        store.save()


def test_concurrent_ingest():
    store = HandShapeStore(_catalogue())

    def worker(tag):
        store.ingest_predictions([(r, 0, 0.95) for r in _refs(tag, 50)], 0.9, 2)

    threads = [threading.Thread(target=worker, args=(f"t{i}",)) for i in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert len(store.pending_queue(2)) == 200
    rows = {(r.class_id, r.iteration): r for r in store.ledger()}
    assert rows[(0, 2)].predicted == 200
