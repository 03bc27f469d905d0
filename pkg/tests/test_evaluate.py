"""Evaluation protocol tests: splits, accuracy, audits and results tables."""

import numpy as np
import pytest

from handsign.errors import InputError, StateError
from handsign.evaluate import (
    ResultRow,
    ResultsTable,
    SplitPlan,
    accuracy,
    audit_no_overlap,
    make_splits,
    run_ablation,
)


def test_make_splits_leave_one_out():
    subjects = [f"subject-{i:02d}" for i in range(12)]
    splits = make_splits(subjects)
    assert len(splits) == 12
    for plan in splits:
        assert len(plan.train_subjects) == 11
        assert plan.test_subject not in plan.train_subjects
        assert sorted(plan.train_subjects + (plan.test_subject,)) == subjects
    two = make_splits(["b", "a"])
    assert [p.test_subject for p in two] == ["a", "b"]
    with pytest.raises(InputError):
        make_splits(["only-one"])
    with pytest.raises(InputError):
        SplitPlan("a", ("a", "b"))
    with pytest.raises(InputError):
        SplitPlan("a", ())


def test_accuracy_matches_count_oracle():
    rng = np.random.default_rng(0)
    for _ in range(50):
        n = int(rng.integers(1, 40))
        preds = rng.integers(0, 5, n)
        labels = rng.integers(0, 5, n)
        expected = sum(1 for p, y in zip(preds, labels) if p == y) / n
        assert accuracy(preds.tolist(), labels.tolist()) == pytest.approx(expected)
    with pytest.raises(InputError):
        accuracy([], [])
    with pytest.raises(InputError):
        accuracy([1, 2], [1])


def test_audit_no_overlap():
    record = audit_no_overlap(["a", "b"], ["c", "d"], context="split-0")
    assert record["leaked"] == []
    assert (record["train_count"], record["test_count"]) == (2, 2)
    with pytest.raises(StateError) as err:
        audit_no_overlap(["a", "b", "c"], ["c", "d"], context="split-1")
    assert "split-1" in str(err.value)
    assert "c" in str(err.value)


def test_result_row_average_invariant():
    row = ResultRow.build("iteration-1", {"s0": 0.5, "s1": 1.0, "s2": 0.75})
    assert row.average == pytest.approx(0.75)
    row.check()
    row.average += 1e-6
    with pytest.raises(StateError):
        row.check()
    with pytest.raises(InputError):
        ResultRow.build("empty", {})


def test_table_round_trip_and_render(tmp_path):
    table = ResultsTable("iterations")
    table.add("iteration-0", {"s0": 0.25, "s1": 0.3})
    table.add("iteration-1", {"s0": 0.9, "s1": 1.0})
    json_path, txt_path = table.save(tmp_path)
    assert json_path.name == "iterations.json"
    assert txt_path.name == "iterations.txt"

    loaded = ResultsTable.load(json_path)
    assert loaded.name == "iterations"
    assert [r.name for r in loaded.rows] == ["iteration-0", "iteration-1"]
    assert loaded.row("iteration-1").average == pytest.approx(0.95)
    with pytest.raises(InputError):
        loaded.row("iteration-7")

    text = txt_path.read_text()
    lines = text.splitlines()
    assert lines[0].split() == ["config", "s0", "s1", "average"]
    assert "0.9500" in text
    # every line is aligned to the same header grid
    assert all(len(l) <= len(lines[1]) for l in lines)

    # corrupting the stored average makes loading fail
    doc = json_path.read_text().replace("0.95", "0.80")
    bad = tmp_path / "bad.json"
    bad.write_text(doc)
    with pytest.raises(StateError):
        ResultsTable.load(bad)


def test_table_subject_order_stable():
    table = ResultsTable("t")
    table.add("a", {"s1": 0.1, "s0": 0.2})
    table.add("b", {"s2": 0.3, "s0": 0.1})
    assert table.subjects() == ["s0", "s1", "s2"]


def test_run_ablation_validates_axis(small_corpus, tmp_path):
    from handsign.pipeline import desk_config

    config = desk_config(small_corpus, seed=0)
    with pytest.raises(InputError):
        run_ablation(small_corpus, "optimizers", config, tmp_path)


def test_run_ablation_strict_missing_artifact(small_corpus, tmp_path):
    from handsign.pipeline import desk_config

    config = desk_config(small_corpus, seed=0)
    with pytest.raises(StateError) as err:
        run_ablation(small_corpus, "iterations", config, tmp_path, build_missing=False)
    # the error names the artifact it wanted
    assert "embedder" in str(err.value)
